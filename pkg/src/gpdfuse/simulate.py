"""Synthetic clustered extremes and Monte Carlo evaluation of estimators.

Data follow a Gaussian AR(1) chain across clusters,
``Z[:, j] = rho * Z[:, j-1] + sqrt(1 - rho^2) * V[:, j]``, pushed through
each cluster's GPD quantile function (or a normal body with a GPD tail).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.stats import norm

from .gpd import ExceedanceData, cdf, quantile_from_survival
from .inference import return_level, return_level_table

log = logging.getLogger(__name__)

TAIL_KINDS = ("full_gpd", "mixed")


@dataclass(frozen=True)
class BlockSpec:
    """Block layout of true parameters.

    Shapes start at ``gamma_start`` and drop by ``gamma_step`` every ``block``
    clusters. Within a block the scale changes every ``sub_block`` clusters:
    it falls from 40 by 5 per sub-block in the first six blocks, is 40 in the
    seventh, and rises from 200 by 50 per sub-block afterwards.
    """

    block: int = 100
    sub_block: int = 20
    gamma_start: float = 0.3
    gamma_step: float = 0.05

    def __post_init__(self):
        if self.block < 1 or self.sub_block < 1:
            raise ValueError("block sizes must be positive")

    def gamma(self, J: int) -> np.ndarray:
        j = np.arange(1, J + 1)
        return self.gamma_start - self.gamma_step * (np.ceil(j / self.block) - 1)

    def sigma(self, J: int) -> np.ndarray:
        j = np.arange(1, J + 1)
        sub = ((j - 1) % self.block) // self.sub_block
        return np.where(j <= 6 * self.block, 40.0 - 5.0 * sub,
                        np.where(j <= 7 * self.block, 40.0, 200.0 + 50.0 * sub))


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 120
    J: int = 1100
    rho: float = 0.999
    blocks: BlockSpec = field(default_factory=BlockSpec)
    tail_kind: str = "full_gpd"
    mixed_threshold_prob: float = 0.95
    seed: int = 0
    gamma: Optional[tuple] = None   # explicit per-cluster parameters override ``blocks``
    sigma: Optional[tuple] = None

    def __post_init__(self):
        if self.n < 1 or self.J < 1:
            raise ValueError("n and J must be positive")
        if not self.rho**2 < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.tail_kind not in TAIL_KINDS:
            raise ValueError(f"tail_kind must be one of {TAIL_KINDS}")
        if not 0 < self.mixed_threshold_prob < 1:
            raise ValueError("mixed_threshold_prob must lie in (0, 1)")
        for name in ("gamma", "sigma"):
            v = getattr(self, name)
            if v is not None and len(v) != self.J:
                raise ValueError(f"explicit {name} must have J={self.J} entries")
        if np.any(self.true_gamma <= -0.5) or np.any(self.true_sigma <= 0):
            raise ValueError("block spec yields invalid GPD parameters")

    @property
    def true_gamma(self) -> np.ndarray:
        return np.asarray(self.gamma, float) if self.gamma is not None else self.blocks.gamma(self.J)

    @property
    def true_sigma(self) -> np.ndarray:
        return np.asarray(self.sigma, float) if self.sigma is not None else self.blocks.sigma(self.J)

    @property
    def threshold(self) -> float:
        """True threshold of the tail model (0 for pure GPD data)."""
        if self.tail_kind == "full_gpd":
            return 0.0
        return float(norm.ppf(self.mixed_threshold_prob))

    @property
    def exceed_prob(self) -> float:
        return 1.0 if self.tail_kind == "full_gpd" else 1.0 - self.mixed_threshold_prob

    def true_return_level(self, tau: float) -> np.ndarray:
        return return_level(self.true_gamma, self.true_sigma, tau, self.exceed_prob, self.threshold)


PRESETS: dict[str, ScenarioConfig] = {
    "section5": ScenarioConfig(n=120, J=1100, rho=0.999, blocks=BlockSpec(100, 20)),
    # 11 shape blocks of 10 clusters, scale changing every 2 clusters; rho = 0.999**10
    # keeps the latent correlation across one block equal to the full-size layout
    "s5-small": ScenarioConfig(n=120, J=110, rho=0.99, blocks=BlockSpec(10, 2)),
    "s5-large-n": ScenarioConfig(n=600, J=1100, rho=0.999, blocks=BlockSpec(100, 20)),
    "mixed": ScenarioConfig(n=2400, J=1100, rho=0.999, blocks=BlockSpec(100, 20), tail_kind="mixed"),
    "mixed-small": ScenarioConfig(n=2400, J=110, rho=0.99, blocks=BlockSpec(10, 2), tail_kind="mixed"),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; accepts an int or a :class:`numpy.random.SeedSequence`."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def replication_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def latent_chain(rng: np.random.Generator, n: int, J: int, rho: float) -> np.ndarray:
    Z = np.empty((n, J))
    Z[:, 0] = rng.standard_normal(n)
    scale = np.sqrt(1.0 - rho**2)
    for j in range(1, J):
        Z[:, j] = rho * Z[:, j - 1] + scale * rng.standard_normal(n)
    return Z


def generate(config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw an ``n x J`` matrix; deterministic given ``config.seed`` when ``rng`` is omitted."""
    rng = rng if rng is not None else make_rng(config.seed)
    Z = latent_chain(rng, config.n, config.J, config.rho)
    gam, sig = config.true_gamma, config.true_sigma
    upper = norm.sf(Z)  # 1 - U, accurate in the upper tail
    if config.tail_kind == "full_gpd":
        return quantile_from_survival(upper, gam, sig)
    q0 = 1.0 - config.mixed_threshold_prob
    tail = upper <= q0
    out = Z.copy()
    out[tail] = config.threshold + quantile_from_survival(
        upper[tail] / q0, np.broadcast_to(gam, Z.shape)[tail], np.broadcast_to(sig, Z.shape)[tail])
    return out


def true_cdf(config: ScenarioConfig, x, j: int):
    """Marginal distribution function of cluster ``j`` (0-based)."""
    g, s = config.true_gamma[j], config.true_sigma[j]
    x = np.asarray(x, dtype=float)
    if config.tail_kind == "full_gpd":
        return cdf(np.maximum(x, 0.0), g, s)
    p0 = config.mixed_threshold_prob
    w0 = config.threshold
    return np.where(x < w0, norm.cdf(x), p0 + (1 - p0) * cdf(np.maximum(x - w0, 0.0), g, s))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class ProcedureOutput:
    """Per-cluster shape estimates and return-level intervals from one procedure."""

    gamma: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray


Procedure = Callable[[ExceedanceData, ScenarioConfig, float], ProcedureOutput]


def exceedances_for(raw: np.ndarray, config: ScenarioConfig) -> ExceedanceData:
    return ExceedanceData.from_raw(raw, config.threshold)


def clusterwise_procedure(data: ExceedanceData, config: ScenarioConfig, tau: float) -> ProcedureOutput:
    from .fitting import fit_clusterwise
    fit = fit_clusterwise(data)
    est = return_level_table(fit.gamma, fit.sigma, data, tau)
    return ProcedureOutput(fit.gamma, np.array([e.ci_lower for e in est]), np.array([e.ci_upper for e in est]))


def oracle_procedure(partition) -> Procedure:
    """Grouped MLE with a known partition."""
    from .fitting import fit_grouped

    def run(data, config, tau):
        fit = fit_grouped(data, partition)
        est = return_level_table(fit.gamma, fit.sigma, data, tau, labels=fit.labels)
        return ProcedureOutput(fit.gamma, np.array([e.ci_lower for e in est]),
                               np.array([e.ci_upper for e in est]))
    return run


def fused_procedure(graph, weight_spec=None, n_grid: int = 50, grid_ratio: float = 1e-4,
                    opts=None) -> Procedure:
    """Fused fit with a BIC-selected penalty on a default grid."""
    from .admm import default_grid, find_lambda_max, solve_path
    from .fitting import fit_clusterwise

    def run(data, config, tau):
        mle = fit_clusterwise(data)
        lmax = find_lambda_max(data, graph, opts, weight_spec, init=mle)
        path = solve_path(data, graph, default_grid(lmax, n_grid, grid_ratio), opts, weight_spec,
                          init=mle, lambda_max=lmax)
        fit = path.selected
        est = return_level_table(fit.gamma, fit.sigma, data, tau, labels=fit.labels)
        return ProcedureOutput(fit.gamma, np.array([e.ci_lower for e in est]),
                               np.array([e.ci_upper for e in est]))
    return run


@dataclass
class EvalReport:
    """Monte Carlo summaries per cluster.

    ``gamma_hat[name]`` holds the ``(replications, J)`` shape estimates of
    each procedure; ``mse_ratio`` and ``length_ratio`` compare ``target`` with
    ``baseline``.
    """

    true_gamma: np.ndarray
    true_return_level: np.ndarray
    gamma_hat: dict
    coverage: dict
    mean_length: dict
    mse_ratio: np.ndarray
    length_ratio: np.ndarray
    replications: int
    failed: int
    baseline: str
    target: str

    def mse(self, name: str) -> np.ndarray:
        return np.mean((self.gamma_hat[name] - self.true_gamma) ** 2, axis=0)

    def to_csv(self) -> str:
        names = list(self.gamma_hat)
        head = ["cluster", "true_gamma", "true_return_level", "mse_ratio", "length_ratio"]
        for nm in names:
            head += [f"median_gamma_{nm}", f"mse_{nm}", f"coverage_{nm}", f"mean_ci_length_{nm}"]
        lines = [",".join(head)]
        med = {nm: np.median(self.gamma_hat[nm], axis=0) for nm in names}
        mse = {nm: self.mse(nm) for nm in names}
        for j in range(len(self.true_gamma)):
            row = [str(j + 1), f"{self.true_gamma[j]:.17g}", f"{self.true_return_level[j]:.17g}",
                   f"{self.mse_ratio[j]:.17g}", f"{self.length_ratio[j]:.17g}"]
            for nm in names:
                row += [f"{med[nm][j]:.17g}", f"{mse[nm][j]:.17g}", f"{self.coverage[nm][j]:.17g}",
                        f"{self.mean_length[nm][j]:.17g}"]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def evaluate(replications: int, config: ScenarioConfig, procedures: Mapping[str, Procedure],
             baseline: str = "clusterwise", target: Optional[str] = None,
             tau: Optional[float] = None) -> EvalReport:
    """Run every procedure on ``replications`` independent datasets.

    Replication ``r`` uses substream ``r`` of ``config.seed``. The return-level
    probability defaults to ``1 / (2n)``. A replication in which any
    procedure raises is dropped and counted in ``failed``.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    if baseline not in procedures:
        raise ValueError(f"baseline procedure {baseline!r} missing")
    target = target or next((k for k in procedures if k != baseline), baseline)
    tau = tau if tau is not None else 1.0 / (2 * config.n)
    truth = config.true_return_level(tau)
    est = {k: [] for k in procedures}
    cov = {k: [] for k in procedures}
    length = {k: [] for k in procedures}
    failed = 0
    for ss in replication_seeds(config.seed, replications):
        raw = generate(config, make_rng(ss))
        try:
            data = exceedances_for(raw, config)
            outs = {k: proc(data, config, tau) for k, proc in procedures.items()}
        except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("replication dropped: %s", exc)
            failed += 1
            continue
        for k, o in outs.items():
            est[k].append(o.gamma)
            cov[k].append((o.ci_lower <= truth) & (truth <= o.ci_upper))
            length[k].append(o.ci_upper - o.ci_lower)
    if not est[baseline]:
        raise RuntimeError("every replication failed")
    gamma_hat = {k: np.array(v) for k, v in est.items()}
    tg = config.true_gamma
    mse_b = np.mean((gamma_hat[baseline] - tg) ** 2, axis=0)
    mse_t = np.mean((gamma_hat[target] - tg) ** 2, axis=0)
    L = {k: np.array(v) for k, v in length.items()}
    return EvalReport(
        true_gamma=tg, true_return_level=truth, gamma_hat=gamma_hat,
        coverage={k: np.mean(v, axis=0) for k, v in cov.items()},
        mean_length={k: v.mean(axis=0) for k, v in L.items()},
        mse_ratio=mse_t / mse_b, length_ratio=np.mean(L[target] / L[baseline], axis=0),
        replications=len(gamma_hat[baseline]), failed=failed, baseline=baseline, target=target)
