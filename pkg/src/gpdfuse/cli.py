"""Command-line front end.

Subcommands ``fit``, ``simulate``, ``threshold``, ``graph`` and
``return-level`` share one flat configuration. Every key can come from a
``key = value`` file (``--config``) and be overridden on the command line
(``--set key=value`` or the dedicated flags).

Configuration keys
------------------
input           path to an ``n x J`` CSV (rows = time, columns = clusters)
threshold       ``k:INT`` | ``fixed:W`` | ``fixed:W1,W2,...`` | ``auto``
k_grid          ``start:stop:step`` for ``auto`` thresholds and ``threshold``
k_method        ``stability`` | ``min`` | ``manual`` (``manual`` uses ``k``)
k               integer used by ``k_method = manual``
graph           ``band:1,2,3,4`` | ``chi:CUTOFF`` | ``homogeneity:delta=D`` |
                ``homogeneity:budget=B`` | ``edges:PATH``
band_truncate   start band edges only at ``j <= J - max(offset)`` (true)
chi_level       level ``u`` of the tail-dependence estimate (0.98)
weights         ``uniform`` | ``adaptive`` | ``scad`` | ``mcp``
concavity       SCAD/MCP concavity constant
lambda_grid     ``auto`` | ``auto:N`` | comma-separated values
grid_ratio      smallest / largest lambda of an automatic grid (1e-4)
tau             comma-separated return-level probabilities (fractions allowed)
coverage        nominal interval coverage (0.95)
params          cluster table from ``fit`` used by ``return-level``
preset          simulation preset
replications    simulation replications (1 writes data only)
n, J, rho       simulation overrides
procedures      ``clusterwise`` or ``clusterwise,fused``
mrl_points      thresholds per cluster in the mean-residual-life table
out_dir, seed, threads

Exit status is 0 on success, 2 on input errors and 3 when a fit fails to
converge. Errors are reported as one ``error:<kind>:<message>`` line.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3

log = logging.getLogger("gpdfuse")


class InputError(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    input: Optional[str] = None
    out_dir: str = "."
    seed: int = 0
    threads: int = 1
    threshold: str = "auto"
    k_grid: str = ""
    k_method: str = "stability"
    k: Optional[int] = None
    graph: str = "band:1,2,3,4"
    band_truncate: bool = True
    chi_level: float = 0.98
    weights: str = "scad"
    concavity: Optional[float] = None
    lambda_grid: str = "auto"
    grid_ratio: float = 1e-4
    tau: str = "0.001"
    coverage: float = 0.95
    params: Optional[str] = None
    preset: str = "s5-small"
    replications: int = 1
    n: Optional[int] = None
    J: Optional[int] = None
    rho: Optional[float] = None
    procedures: str = "clusterwise,fused"
    mrl_points: int = 20
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        kind = self.threshold.split(":", 1)[0]
        if kind not in ("k", "fixed", "auto"):
            raise InputError(f"threshold spec {self.threshold!r}: expected k:, fixed: or auto")
        gkind = self.graph.split(":", 1)[0]
        if gkind not in ("band", "chi", "homogeneity", "edges"):
            raise InputError(f"graph spec {self.graph!r}: expected band, chi, homogeneity or edges")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "extra"}


def _coerce(key: str, value: str):
    t = str(_FIELD_TYPES[key])
    if value.strip().lower() in ("", "none") and "Optional" in t:
        return None
    try:
        if "bool" in t:
            v = value.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {value!r}")
            return v in ("true", "1", "yes")
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
    except ValueError as exc:
        raise InputError(f"config key {key}: {exc}") from None
    return value.strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"config file: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build_config(pairs: dict) -> RunConfig:
    kwargs = {}
    for k, v in pairs.items():
        if k not in _FIELD_TYPES:
            raise InputError(f"unknown config key {k!r}")
        kwargs[k] = _coerce(k, v) if isinstance(v, str) else v
    return RunConfig(**kwargs)


# --------------------------------------------------------------------------
# input / output


def read_matrix(path) -> tuple[np.ndarray, Optional[list[str]]]:
    """Rectangular numeric CSV with an optional header row of cluster ids.

    The first row is taken as a header when any field is non-numeric, so
    cluster ids must not be plain numbers.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise InputError("input file is empty")
    header = None
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    if not rows:
        raise InputError("input file has no data rows")
    width = len(header) if header else len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InputError(f"row {i + 1} has {len(r)} fields, expected {width}")
        for j, v in enumerate(r):
            v = v.strip()
            if not v:
                raise InputError(f"missing value at row {i + 1}, column {j + 1}")
            try:
                out[i, j] = float(v)
            except ValueError:
                raise InputError(f"non-numeric value {v!r} at row {i + 1}, column {j + 1}") from None
    if not np.all(np.isfinite(out)):
        raise InputError("non-finite values in input")
    return out, header


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_matrix(path: Path, raw: np.ndarray) -> None:
    write_table(path, [f"c{j + 1}" for j in range(raw.shape[1])], raw.tolist())


# --------------------------------------------------------------------------
# spec parsing


def parse_taus(spec: str) -> list[float]:
    try:
        taus = [float(Fraction(t.strip())) for t in spec.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError):
        raise InputError(f"tau list {spec!r} is not numeric") from None
    if not taus or any(not 0 < t < 1 for t in taus):
        raise InputError("tau values must lie in (0, 1)")
    return taus


def parse_k_grid(spec: str, n: int) -> list[int]:
    if not spec:
        lo, hi = 10, max(11, n // 4)
        return list(range(lo, min(hi, n - 1) + 1, max(1, (hi - lo) // 30)))
    try:
        parts = [int(p) for p in spec.split(":")]
    except ValueError:
        raise InputError(f"k_grid {spec!r}: expected start:stop[:step]") from None
    step = parts[2] if len(parts) == 3 else 1
    ks = list(range(parts[0], parts[1] + 1, step))
    if not ks or ks[0] < 1 or ks[-1] >= n:
        raise InputError(f"k_grid {spec!r} must lie in [1, n-1]")
    return ks


def weight_spec(cfg: RunConfig):
    from .penalty import WeightSpec
    kinds = {"uniform": "uniform", "adaptive": "adaptive", "scad": "scad_deriv", "mcp": "mcp_deriv"}
    if cfg.weights not in kinds:
        raise InputError(f"weights {cfg.weights!r}: expected one of {sorted(kinds)}")
    kind = kinds[cfg.weights]
    return WeightSpec(kind, cfg.concavity if kind in ("scad_deriv", "mcp_deriv") else None)


def select_threshold_k(raw, cfg: RunConfig):
    from .threshold import qq_risk_path, select_k
    path = qq_risk_path(raw, parse_k_grid(cfg.k_grid, raw.shape[0]))
    k = select_k(path, cfg.k_method, k=cfg.k)
    return k, path


def exceedances(raw, cfg: RunConfig):
    from .gpd import ExceedanceData
    kind, _, arg = cfg.threshold.partition(":")
    try:
        if kind == "k":
            return ExceedanceData.from_raw_top_k(raw, int(arg))
        if kind == "fixed":
            w = np.array([float(v) for v in arg.split(",")])
            if w.size not in (1, raw.shape[1]):
                raise InputError(f"fixed thresholds: need 1 or {raw.shape[1]} values")
            return ExceedanceData.from_raw(raw, w if w.size > 1 else w[0])
    except ValueError as exc:
        raise InputError(f"threshold: {exc}") from None
    k, _ = select_threshold_k(raw, cfg)
    return ExceedanceData.from_raw_top_k(raw, k)


def _chi(raw, cfg: RunConfig, out: Path):
    from .taildep import chi_matrix, read_chi_csv, write_chi_csv
    cache = out / f"chi_u{cfg.chi_level:g}.csv"
    if cache.exists():
        chi = read_chi_csv(cache)
        if chi.shape == (raw.shape[1],) * 2:
            return chi
    chi = chi_matrix(raw, cfg.chi_level)
    write_chi_csv(chi, cache)
    return chi


def build_graph(cfg: RunConfig, J: int, raw=None, gamma_tilde=None, out: Optional[Path] = None):
    from .graph import build_graph_band, build_graph_chi, build_graph_homogeneity, read_edge_list
    kind, _, arg = cfg.graph.partition(":")
    try:
        if kind == "band":
            return build_graph_band(J, [int(v) for v in arg.split(",")], truncate=cfg.band_truncate)
        if kind == "chi":
            if raw is None:
                raise InputError("chi graph needs raw input data")
            return build_graph_chi(_chi(raw, cfg, out or Path(cfg.out_dir)), float(arg))
        if kind == "homogeneity":
            key, _, val = arg.partition("=")
            if gamma_tilde is None:
                from .fitting import fit_clusterwise
                gamma_tilde = fit_clusterwise(exceedances(raw, cfg)).gamma
            if key == "delta":
                return build_graph_homogeneity(gamma_tilde, delta=float(val))
            if key == "budget":
                return build_graph_homogeneity(gamma_tilde, edge_budget=int(val))
            raise InputError("homogeneity graph: expected delta=D or budget=B")
        g = read_edge_list(arg, J)
    except (ValueError, OSError) as exc:
        raise InputError(f"graph: {exc}") from None
    if g.n_vertices != J:
        raise InputError(f"graph has {g.n_vertices} vertices, data has {J} clusters")
    return g


def lambda_grid(cfg: RunConfig):
    spec = cfg.lambda_grid.strip()
    if spec.startswith("auto"):
        _, _, n = spec.partition(":")
        return None, int(n) if n else 50
    try:
        grid = sorted(float(v) for v in spec.split(","))
    except ValueError:
        raise InputError(f"lambda_grid {spec!r} is not numeric") from None
    if any(v < 0 for v in grid):
        raise InputError("lambda values must be non-negative")
    return np.array(grid), len(grid)


# --------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    from .admm import default_grid, find_lambda_max, solve_path
    from .fitting import fit_clusterwise
    from .graph import write_edge_list
    from .inference import return_level_table

    raw, _ = read_matrix(_need_input(cfg))
    data = exceedances(raw, cfg)
    try:
        mle = fit_clusterwise(data)
    except ValueError as exc:
        raise InputError(f"fit: {exc}") from None
    g = build_graph(cfg, raw.shape[1], raw, mle.gamma, out)
    spec = weight_spec(cfg)
    grid, n_points = lambda_grid(cfg)
    lmax = None
    if grid is None:
        lmax = find_lambda_max(data, g, None, spec, init=mle)
        grid = default_grid(lmax, n_points, cfg.grid_ratio)
    try:
        path = solve_path(data, g, grid, None, spec, init=mle, lambda_max=lmax)
    except RuntimeError as exc:
        raise ConvergenceFailure(str(exc)) from None
    fit = path.selected
    write_edge_list(g, out / "edges.csv")
    write_table(out / "clusters.csv",
                ["cluster", "n_exceed", "threshold", "gamma_tilde", "gamma_hat", "group", "sigma_hat"],
                [(j + 1, int(data.n_exceed[j]), data.thresholds[j], mle.gamma[j], fit.gamma[j],
                  int(fit.labels[j]) + 1, fit.sigma[j]) for j in range(data.n_clusters)])
    write_table(out / "path.csv", ["lambda", "K", "bic", "converged", "selected"],
                [(lam, f.K if f else -1, b, bool(f and f.converged), i == path.selected_index)
                 for i, (lam, f, b) in enumerate(zip(path.grid, path.fits, path.bic))])
    rows = []
    p = 1.0 - cfg.coverage
    for tau in parse_taus(cfg.tau):
        for j, e in enumerate(return_level_table(fit.gamma, fit.sigma, data, tau, fit.labels, p)):
            rows.append((j + 1, int(fit.labels[j]) + 1, e.gamma, tau, e.point, e.ci_lower, e.ci_upper,
                         e.group_size_n, e.boundary))
    write_table(out / "report.csv", ["cluster", "group", "gamma", "tau", "return_level", "ci_lower",
                                     "ci_upper", "group_size", "boundary"], rows)
    print(f"lambda={fit.lam:.17g} K={fit.K} converged={fit.converged}")
    return EXIT_OK if fit.converged else EXIT_CONVERGENCE


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    from .graph import build_graph_band
    from .simulate import clusterwise_procedure, evaluate, fused_procedure, generate, preset

    overrides = {k: getattr(cfg, k) for k in ("n", "J", "rho") if getattr(cfg, k) is not None}
    try:
        scen = preset(cfg.preset, seed=cfg.seed, **overrides)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    write_matrix(out / "data.csv", generate(scen))
    write_table(out / "truth.csv", ["cluster", "gamma", "sigma"],
                [(j + 1, g, s) for j, (g, s) in enumerate(zip(scen.true_gamma, scen.true_sigma))])
    if cfg.replications < 2:
        return EXIT_OK
    names = [p.strip() for p in cfg.procedures.split(",") if p.strip()]
    procs = {"clusterwise": clusterwise_procedure}
    if "fused" in names:
        g = build_graph(cfg, scen.J) if cfg.graph.split(":")[0] in ("band", "edges") \
            else build_graph_band(scen.J, [1, 2, 3, 4], truncate=True)
        _, n_points = lambda_grid(cfg)
        procs["fused"] = fused_procedure(g, weight_spec(cfg), n_points, cfg.grid_ratio)
    unknown = set(names) - {"clusterwise", "fused"}
    if unknown:
        raise InputError(f"unknown procedures {sorted(unknown)}")
    taus = parse_taus(cfg.tau) if cfg.tau != RunConfig.tau else [None]
    rep = evaluate(cfg.replications, scen, procs, tau=taus[0])
    (out / "eval.csv").write_text(rep.to_csv())
    print(f"replications={rep.replications} failed={rep.failed}")
    return EXIT_OK


def cmd_threshold(cfg: RunConfig, out: Path) -> int:
    from .threshold import mean_residual_life, mrl_to_csv

    raw, _ = read_matrix(_need_input(cfg))
    try:
        k, path = select_threshold_k(raw, cfg)
    except ValueError as exc:
        raise InputError(f"threshold: {exc}") from None
    (out / "risk_path.csv").write_text(path.to_csv())
    lines = []
    for j in range(raw.shape[1]):
        col = raw[:, j]
        ws = np.quantile(col, np.linspace(0.5, 0.99, cfg.mrl_points))
        body = mrl_to_csv(mean_residual_life(col, ws)).splitlines()
        if not lines:
            lines.append("cluster," + body[0])
        lines += [f"{j + 1},{r}" for r in body[1:]]
    (out / "mrl.csv").write_text("\n".join(lines) + "\n")
    print(f"k={k}")
    return EXIT_OK


def cmd_graph(cfg: RunConfig, out: Path) -> int:
    from .graph import n_components, write_edge_list

    raw = None
    if cfg.input:
        raw, _ = read_matrix(cfg.input)
        J = raw.shape[1]
    elif cfg.J is not None:
        J = cfg.J
    else:
        raise InputError("graph: give input or J")
    g = build_graph(cfg, J, raw, None, out)
    write_edge_list(g, out / "edges.csv")
    print(f"edges={g.n_edges} components={n_components(g)}")
    return EXIT_OK


def cmd_return_level(cfg: RunConfig, out: Path) -> int:
    from .inference import return_level_ci

    taus = parse_taus(cfg.tau)
    if cfg.params:
        # cluster table written by ``fit``; the raw input supplies exceedance rates
        table = read_table(cfg.params)
        raw, _ = read_matrix(_need_input(cfg))
        if len(table) != raw.shape[1]:
            raise InputError("params table and input disagree on the cluster count")
        gamma = np.array([float(r["gamma_hat"]) for r in table])
        sigma = np.array([float(r["sigma_hat"]) for r in table])
        w = np.array([float(r["threshold"]) for r in table])
        labels = np.array([int(r["group"]) - 1 for r in table])
        n_j = np.array([int(np.count_nonzero(raw[:, j] > w[j])) for j in range(raw.shape[1])])
    else:
        from .fitting import fit_clusterwise
        raw, _ = read_matrix(_need_input(cfg))
        data = exceedances(raw, cfg)
        fit = fit_clusterwise(data)
        gamma, sigma, w, n_j = fit.gamma, fit.sigma, data.thresholds, data.n_exceed
        labels = np.arange(len(gamma))
    n_raw = raw.shape[0]
    n_group = np.bincount(labels, weights=n_j)[labels].astype(int)
    rows = []
    for tau in taus:
        for j in range(len(gamma)):
            e = return_level_ci(gamma[j], sigma[j], n_j[j] / n_raw, int(n_group[j]), int(n_j[j]), n_raw,
                                tau, 1.0 - cfg.coverage, w[j])
            rows.append((j + 1, int(labels[j]) + 1, tau, e.point, e.ci_lower, e.ci_upper, e.se,
                         e.group_size_n, e.boundary))
    write_table(out / "return_levels.csv", ["cluster", "group", "tau", "return_level", "ci_lower",
                                            "ci_upper", "se", "group_size", "boundary"], rows)
    return EXIT_OK


def _need_input(cfg: RunConfig) -> str:
    if not cfg.input:
        raise InputError("no input file given")
    return cfg.input


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "threshold": cmd_threshold,
            "graph": cmd_graph, "return-level": cmd_return_level}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--input", "-i")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gpdfuse", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "simulate":
            from .simulate import PRESETS
            p.add_argument("--preset", choices=sorted(PRESETS))
            p.add_argument("--replications", type=int)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        pairs = read_config_file(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise InputError(f"--set {item!r}: expected KEY=VALUE")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v
        for key in ("seed", "threads", "out_dir", "input", "preset", "replications"):
            val = getattr(args, key, None)
            if val is not None:
                pairs[key] = str(val)
        cfg = build_config(pairs)
        if cfg.threads < 1:
            raise InputError("threads must be positive")
        _cap_threads(cfg.threads)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except InputError as exc:
        print(f"error:input:{_one_line(exc)}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceFailure as exc:
        print(f"error:convergence:{_one_line(exc)}", file=sys.stderr)
        return EXIT_CONVERGENCE


def _cap_threads(n: int) -> None:
    # library code runs single-threaded; the cap applies to BLAS pools when they honour it
    import os
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
