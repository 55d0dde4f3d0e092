"""Graph-fused-lasso GPD fits by ADMM, lambda paths and BIC selection.

The penalized loss is

    nll(gamma, sigma) + lam * sum_m v_m |gamma_j(m) - gamma_k(m)|

over the edges ``m`` of a :class:`~gpdfuse.graph.ClusterGraph` whose
weights are ``v``. The splitting variable is ``u = D gamma``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ._newton import Coupling, newton_solve
from .fitting import MleFit, fit_clusterwise, fit_grouped
from .gpd import GpdParams, cluster_neg_loglik, grad_neg_loglik, params_to_arrays
from .graph import ClusterGraph, apply_incidence, component_labels, n_components
from .penalty import WeightSpec, weight

log = logging.getLogger(__name__)


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``, elementwise."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class AdmmOptions:
    rho0: float = 1.0
    rho_min: float = 1e-6
    rho_max: float = 1e6
    rho_factor: float = 2.0
    mu: float = 5.0                # residual-balance ratio for the step-size rule
    freeze_rho_after: int = 1000
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    max_iter: int = 2000
    inner_tol: float = 1e-8
    inner_max_iter: int = 500
    order: str = "paper"           # "paper": u, s, (gamma, sigma); "conventional": (gamma, sigma), u, s

    def __post_init__(self):
        if self.order not in ("paper", "conventional"):
            raise ValueError("order must be 'paper' or 'conventional'")
        if not (0 < self.rho_min <= self.rho0 <= self.rho_max):
            raise ValueError("need 0 < rho_min <= rho0 <= rho_max")


@dataclass
class AdmmState:
    gamma: np.ndarray
    theta: np.ndarray              # log sigma
    u: np.ndarray
    s: np.ndarray
    rho: float
    iteration: int = 0

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.theta)


@dataclass
class FusedFit:
    """Result of one penalized fit.

    ``params`` are the refitted estimates (shapes shared exactly inside each
    group); ``gamma_admm``/``sigma_admm`` are the raw ADMM iterates, which
    minimize the penalized loss.
    """

    lam: float
    params: list[GpdParams]
    u: np.ndarray
    edges: np.ndarray
    edge_weights: np.ndarray
    groups: list[list[int]]
    labels: np.ndarray
    neg_loglik_value: float
    converged: bool
    iterations: int
    gamma_admm: np.ndarray
    sigma_admm: np.ndarray
    rho: float
    refit_converged: bool = True

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def gamma(self) -> np.ndarray:
        return np.array([p.gamma for p in self.params])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([p.sigma for p in self.params])

    def group_sizes(self, n_exceed) -> np.ndarray:
        tot = np.bincount(self.labels, weights=np.asarray(n_exceed, dtype=float))
        return tot[self.labels].astype(int)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "gamma": self.gamma.tolist(),
            "sigma": self.sigma.tolist(),
            "u": self.u.tolist(),
            "edges": self.edges.tolist(),
            "edge_weights": self.edge_weights.tolist(),
            "groups": self.groups,
            "K": self.K,
            "neg_loglik": self.neg_loglik_value,
            "converged": self.converged,
            "refit_converged": self.refit_converged,
            "iterations": self.iterations,
            "gamma_admm": self.gamma_admm.tolist(),
            "sigma_admm": self.sigma_admm.tolist(),
            "rho": self.rho,
        }


def penalized_objective(data, g: ClusterGraph, lam: float, gamma, sigma) -> float:
    """Negative log-likelihood plus the weighted fused penalty."""
    gamma = np.asarray(gamma, dtype=float)
    nll = cluster_neg_loglik(data, gamma, sigma).sum()
    return float(nll + lam * np.sum(g.weights * g.edge_differences(gamma)))


def _init_arrays(data, init):
    if init is None:
        mle = fit_clusterwise(data)
        return mle.gamma.copy(), mle.sigma.copy()
    if isinstance(init, (MleFit, FusedFit)):
        return np.asarray(init.gamma, float).copy(), np.asarray(init.sigma, float).copy()
    if isinstance(init, tuple) and len(init) == 2:
        return np.asarray(init[0], float).copy(), np.asarray(init[1], float).copy()
    return params_to_arrays(init)


def _run_admm(data, g: ClusterGraph, lam: float, state: AdmmState, opts: AdmmOptions):
    """Iterate ADMM in place on ``state``; returns the convergence flag."""
    M, J = g.n_edges, g.n_vertices
    thresh = lam * g.weights
    rho = state.rho
    cp = Coupling.from_edges(g.edges, state.s, state.u, rho, J)
    for it in range(1, opts.max_iter + 1):
        gamma_old = state.gamma
        u_prev = state.u
        if opts.order == "paper":
            Dg_old = cp.diff(gamma_old)
            u = soft_threshold(Dg_old + state.s / rho, thresh / rho)
            s = state.s + rho * (Dg_old - u)
            cp.s, cp.u, cp.rho = s, u, rho
            res = newton_solve(data, gamma_old, state.theta, coupling=cp,
                               tol=opts.inner_tol, max_iter=opts.inner_max_iter)
            gamma = res.gamma
        else:
            cp.s, cp.u, cp.rho = state.s, state.u, rho
            res = newton_solve(data, gamma_old, state.theta, coupling=cp,
                               tol=opts.inner_tol, max_iter=opts.inner_max_iter)
            gamma = res.gamma
            Dg_new = cp.diff(gamma)
            u = soft_threshold(Dg_new + state.s / rho, thresh / rho)
            s = state.s + rho * (Dg_new - u)
        state.gamma, state.theta, state.u, state.s = gamma, res.theta, u, s
        state.iteration += 1

        Dg = cp.diff(gamma)
        eta = Dg - u
        xi = rho * cp.diff(gamma - gamma_old)
        r_norm = np.linalg.norm(eta)
        d_norm = np.linalg.norm(rho * cp.adjoint(u - u_prev))
        eps_pri = np.sqrt(M) * opts.eps_abs + opts.eps_rel * max(np.linalg.norm(Dg), np.linalg.norm(u))
        eps_dual = np.sqrt(J) * opts.eps_abs + opts.eps_rel * np.linalg.norm(cp.adjoint(s))
        if r_norm <= eps_pri and d_norm <= eps_dual:
            state.rho = rho
            return True

        if it <= opts.freeze_rho_after:
            xi_norm = np.linalg.norm(xi)
            if r_norm > opts.mu * xi_norm:
                rho = min(rho * opts.rho_factor, opts.rho_max)
            elif xi_norm > opts.mu * r_norm:
                rho = max(rho / opts.rho_factor, opts.rho_min)
        state.rho = rho
    return False


def admm_fit(data, g: ClusterGraph, lam: float, init=None, opts: Optional[AdmmOptions] = None,
             state: Optional[AdmmState] = None, refit: bool = True) -> FusedFit:
    """Minimize the fused penalized loss at penalty level ``lam``.

    ``g.weights`` are used as the edge weights. ``init`` is the starting
    point (cluster-wise MLE when omitted); ``state`` resumes from a previous
    ADMM state instead (warm start along a path). Edges of weight zero carry
    no penalty and are dropped before solving.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if g.n_vertices != data.n_clusters:
        raise ValueError("graph and data disagree on the number of clusters")
    opts = opts or AdmmOptions()
    active = g.weights > 0
    gw = g.subgraph_edges(active) if not active.all() else g

    if state is None:
        gamma0, sigma0 = _init_arrays(data, init)
        if np.any(sigma0 <= 0) or not np.all(np.isfinite(cluster_neg_loglik(data, gamma0, sigma0))):
            raise ValueError("initial parameters are infeasible for the data")
        state = AdmmState(gamma0, np.log(sigma0), apply_incidence(gw, gamma0), np.zeros(gw.n_edges),
                          opts.rho0)
    elif len(state.u) != gw.n_edges:
        raise ValueError("warm-start state does not match the graph's non-zero-weight edges")

    if gw.n_edges == 0 or lam == 0:
        # no active penalty: the problem separates into cluster-wise MLEs
        mle = fit_clusterwise(data, tol=opts.inner_tol, max_iter=opts.inner_max_iter,
                              init=(state.gamma, state.sigma))
        state.gamma, state.theta = mle.gamma.copy(), np.log(mle.sigma)
        state.u = apply_incidence(gw, state.gamma)
        state.s = np.zeros(gw.n_edges)
        converged = bool(mle.converged.all())
    else:
        converged = _run_admm(data, gw, lam, state, opts)
        if not converged:
            log.warning("ADMM did not converge at lambda=%g in %d iterations", lam, opts.max_iter)

    labels = component_labels(gw, state.u == 0.0)
    groups = [np.flatnonzero(labels == k).tolist() for k in range(labels.max() + 1)]
    if refit:
        ref = fit_grouped(data, labels, tol=opts.inner_tol, max_iter=opts.inner_max_iter,
                          init=(state.gamma, state.sigma))
        gamma_out, sigma_out, nll = ref.gamma, ref.sigma, ref.neg_loglik
        refit_ok = bool(ref.converged.all())
    else:
        gamma_out, sigma_out = state.gamma, state.sigma
        nll = float(cluster_neg_loglik(data, gamma_out, sigma_out).sum())
        refit_ok = True

    fit = FusedFit(lam=float(lam), params=[GpdParams(float(a), float(b)) for a, b in zip(gamma_out, sigma_out)],
                   u=state.u.copy(), edges=gw.edges.copy(), edge_weights=gw.weights.copy(),
                   groups=groups, labels=labels, neg_loglik_value=nll, converged=converged,
                   iterations=state.iteration, gamma_admm=state.gamma.copy(),
                   sigma_admm=state.sigma.copy(), rho=state.rho, refit_converged=refit_ok)
    fit._state = state  # kept for warm starts; not serialized
    return fit


def bic(fit: FusedFit, data) -> float:
    """``2 nll + (J + K) log(sum_j n_j)`` at the refitted estimates."""
    J = data.n_clusters
    return 2.0 * fit.neg_loglik_value + (J + fit.K) * np.log(data.n_exceed.sum())


# --------------------------------------------------------------------------
# path results


@dataclass
class PathResult:
    grid: np.ndarray
    fits: list[Optional[FusedFit]]
    bic: np.ndarray
    selected_index: int
    lambda_max: Optional[float] = None

    @property
    def selected(self) -> FusedFit:
        return self.fits[self.selected_index]

    @property
    def K(self) -> np.ndarray:
        return np.array([f.K if f is not None else -1 for f in self.fits])

    def to_json(self) -> str:
        return json.dumps({
            "grid": self.grid.tolist(),
            "bic": [b if np.isfinite(b) else None for b in self.bic.tolist()],
            "selected_index": self.selected_index,
            "lambda_max": self.lambda_max,
            "fits": [f.to_dict() if f is not None else None for f in self.fits],
        }, indent=1)


def select_bic(bics) -> int:
    """Index of the smallest finite BIC; ties go to the later (larger lambda) entry."""
    b = np.asarray(bics, dtype=float)
    ok = np.isfinite(b)
    if not ok.any():
        raise RuntimeError("no grid point produced a usable fit")
    best = b[ok].min()
    return int(np.flatnonzero(ok & (b == best))[-1])


def edge_weights_for(spec: Optional[WeightSpec], g: ClusterGraph, gamma_tilde, lam: float,
                     mean_n: float) -> ClusterGraph:
    """Graph carrying the weights of ``spec`` at penalty ``lam`` (``g`` itself if ``spec`` is None)."""
    if spec is None:
        return g
    w = weight(spec.resolve(lam, mean_n), g.edge_differences(gamma_tilde))
    return g.with_weights(w)


def _warm_state(prev: FusedFit, g_new: ClusterGraph, lam: float) -> AdmmState:
    """Carry a previous solution to a new penalty level and weight set.

    The dual is rescaled by the lambda ratio and clipped to the new
    subgradient box, which keeps it dual-feasible.
    """
    st = prev._state
    gw = g_new.subgraph_edges(g_new.weights > 0)
    old = {tuple(e): i for i, e in enumerate(prev.edges)}
    s = np.zeros(gw.n_edges)
    if prev.lam > 0:
        for m, e in enumerate(gw.edges):
            i = old.get(tuple(e))
            if i is not None:
                s[m] = st.s[i] * lam / prev.lam
    s = np.clip(s, -lam * gw.weights, lam * gw.weights)
    return AdmmState(st.gamma.copy(), st.theta.copy(), apply_incidence(gw, st.gamma), s, st.rho)


# --------------------------------------------------------------------------
# full-fusion threshold


@dataclass
class FusionPoint:
    """Fully fused fit (one shape per connected component) and its shape gradient."""

    fit: MleFit
    grad_gamma: np.ndarray
    n_components: int


def fusion_point(data, g: ClusterGraph, opts: Optional[AdmmOptions] = None) -> FusionPoint:
    opts = opts or AdmmOptions()
    labels = component_labels(g)
    fz = fit_grouped(data, labels, tol=opts.inner_tol, max_iter=opts.inner_max_iter)
    gr, _ = grad_neg_loglik(data, fz.gamma, fz.sigma)
    # the grouped optimum zeroes each component's summed gradient; remove the rounding residue
    gr = gr - (np.bincount(labels, weights=gr) / np.bincount(labels))[labels]
    return FusionPoint(fz, gr, int(labels.max()) + 1)


def kkt_threshold(fp: FusionPoint, g: ClusterGraph):
    """Smallest lambda for which the fully fused point satisfies the optimality conditions.

    Solves ``min t`` subject to ``D's = -grad`` and ``|s_m| <= t v_m``. Returns
    ``(t, s)``; ``t`` is ``inf`` when the positive-weight edges cannot fuse
    every component of the original graph.
    """
    gw = g.subgraph_edges(g.weights > 0)
    if gw.n_edges == 0 or n_components(gw) != fp.n_components:
        return np.inf, None
    M, J = gw.n_edges, gw.n_vertices
    D = gw.incidence()
    v = gw.weights
    eye = sp.identity(M, format="csr")
    A_ub = sp.vstack([sp.hstack([eye, -v[:, None]]), sp.hstack([-eye, -v[:, None]])]).tocsr()
    A_eq = sp.hstack([D.T, sp.csr_matrix((J, 1))]).tocsr()
    c = np.zeros(M + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * M), A_eq=A_eq, b_eq=-fp.grad_gamma,
                  bounds=[(None, None)] * M + [(0, None)], method="highs")
    if res.status != 0:
        return np.inf, None
    return float(res.x[-1]), res.x[:-1]


def find_lambda_max(data, g: ClusterGraph, opts: Optional[AdmmOptions] = None,
                    weight_spec: Optional[WeightSpec] = None, init: Optional[MleFit] = None,
                    method: str = "kkt", rtol: float = 1e-6, start: float = 1.0,
                    max_doublings: int = 60) -> float:
    """Penalty level at which every connected component is fully fused.

    ``method="kkt"`` returns the exact threshold from the optimality
    conditions at the fused fit (bisection in lambda when the weights depend
    on lambda). ``method="doubling"`` returns the smallest tested lambda of a
    halving/doubling search over ADMM fits started at ``start``.
    """
    opts = opts or AdmmOptions()
    mle = init if init is not None else fit_clusterwise(data)
    mean_n = float(data.n_exceed.mean())

    def weighted(lam):
        return edge_weights_for(weight_spec, g, mle.gamma, lam, mean_n)

    if method == "kkt":
        fp = fusion_point(data, g, opts)
        if weight_spec is None or not weight_spec.lambda_dependent:
            lam, _ = kkt_threshold(fp, weighted(1.0))
            if not np.isfinite(lam):
                raise RuntimeError("full fusion is unreachable with these edge weights")
            return lam
        # weights grow with lambda, so lambda - threshold(weights(lambda)) is increasing
        t_ones, _ = kkt_threshold(fp, g.with_weights(np.ones(g.n_edges)))
        spread = g.edge_differences(mle.gamma).max() if g.n_edges else 0.0
        hi = max(t_ones, mean_n * spread, 1e-12)
        while kkt_threshold(fp, weighted(hi))[0] > hi:
            hi *= 2.0
        lo = 0.0
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if kkt_threshold(fp, weighted(mid))[0] <= mid:
                hi = mid
            else:
                lo = mid
        return hi
    if method != "doubling":
        raise ValueError(f"unknown method {method!r}")

    target = n_components(g)

    def fused(lam):
        f = admm_fit(data, weighted(lam), lam, init=mle, opts=opts, refit=False)
        return f.K == target

    lam = start
    if fused(lam):
        for _ in range(max_doublings):
            if not fused(lam / 2):
                return lam
            lam /= 2
        return lam
    for _ in range(max_doublings):
        lam *= 2
        if fused(lam):
            return lam
    raise RuntimeError("full fusion not reached within the doubling budget")


def _fused_state(fp: FusionPoint, gi: ClusterGraph, lam: float) -> Optional[AdmmState]:
    """ADMM state at the fused point with a KKT dual, if that point is optimal at ``lam``."""
    t, s = kkt_threshold(fp, gi)
    if not t <= lam:
        return None
    gw = gi.subgraph_edges(gi.weights > 0)
    gamma = fp.fit.gamma.copy()
    return AdmmState(gamma, np.log(fp.fit.sigma), apply_incidence(gw, gamma),
                     np.clip(s, -lam * gw.weights, lam * gw.weights), AdmmOptions().rho0)


# --------------------------------------------------------------------------
# lambda paths


def solve_path(data, g: ClusterGraph, grid: Sequence[float], opts: Optional[AdmmOptions] = None,
               weight_spec: Optional[WeightSpec] = None, init: Optional[MleFit] = None,
               lambda_max: Optional[float] = None, descending: bool = True) -> PathResult:
    """Warm-started sweep over an ascending lambda grid with BIC selection.

    Each fit starts from the previous grid point's solution. The sweep runs
    from the largest lambda down by default; the first fit then starts from
    the fully fused point when that point is already optimal there.
    With ``weight_spec`` the edge weights are recomputed at each lambda from
    the cluster-wise estimates; otherwise ``g.weights`` are used throughout.
    Grid points whose fit raises or fails to converge get BIC ``inf`` and
    cannot be selected. Results are stored in ascending grid order.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise ValueError("lambda grid must be non-negative and ascending")
    opts = opts or AdmmOptions()
    mle = init if init is not None else fit_clusterwise(data)
    mean_n = float(data.n_exceed.mean())
    fits: list[Optional[FusedFit]] = [None] * len(grid)
    bics = np.full(len(grid), np.inf)
    order = range(len(grid) - 1, -1, -1) if descending else range(len(grid))
    prev: Optional[FusedFit] = None
    for i in order:
        lam = grid[i]
        gi = edge_weights_for(weight_spec, g, mle.gamma, lam, mean_n)
        try:
            if prev is not None:
                fit = admm_fit(data, gi, lam, opts=opts, state=_warm_state(prev, gi, lam))
            else:
                start = None
                if descending and lam > 0 and g.n_edges:
                    start = _fused_state(fusion_point(data, g, opts), gi, lam)
                if start is not None:
                    start.rho = opts.rho0
                    fit = admm_fit(data, gi, lam, opts=opts, state=start)
                else:
                    fit = admm_fit(data, gi, lam, init=mle, opts=opts)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("fit failed at lambda=%g: %s", lam, exc)
            continue
        fits[i] = fit
        prev = fit
        if fit.converged:
            bics[i] = bic(fit, data)
    return PathResult(grid=grid, fits=fits, bic=bics, selected_index=select_bic(bics),
                      lambda_max=lambda_max)


def default_grid(lambda_max: float, n_points: int = 50, ratio: float = 1e-4,
                 include_zero: bool = True) -> np.ndarray:
    """Log-spaced grid from ``ratio * lambda_max`` to ``lambda_max``, with 0 prepended."""
    grid = np.geomspace(ratio * lambda_max, lambda_max, n_points)
    return np.concatenate([[0.0], grid]) if include_zero else grid


def fit_path(data, g: ClusterGraph, grid: Optional[Sequence[float]] = None, n_points: int = 50,
             opts: Optional[AdmmOptions] = None, weight_spec: Optional[WeightSpec] = None) -> PathResult:
    """Cluster-wise start, default grid when none is given, then :func:`solve_path`."""
    mle = fit_clusterwise(data)
    lmax = None
    if grid is None:
        lmax = find_lambda_max(data, g, opts, weight_spec, init=mle)
        grid = default_grid(lmax, n_points)
    return solve_path(data, g, grid, opts, weight_spec, init=mle, lambda_max=lmax)


# --------------------------------------------------------------------------
# reporting


def cluster_report_rows(fit: FusedFit, data) -> list[dict]:
    rows = []
    for j, p in enumerate(fit.params):
        rows.append({"cluster": j + 1, "group": int(fit.labels[j]) + 1, "gamma": p.gamma,
                     "sigma": p.sigma, "n_exceed": int(data.n_exceed[j]),
                     "threshold": float(data.thresholds[j])})
    return rows


def format_cluster_report(fit: FusedFit, data) -> str:
    lines = [f"# lambda={fit.lam!r} K={fit.K} converged={fit.converged}",
             "cluster,group,gamma,sigma,n_exceed,threshold"]
    for r in cluster_report_rows(fit, data):
        lines.append(f"{r['cluster']},{r['group']},{r['gamma']:.17g},{r['sigma']:.17g},"
                     f"{r['n_exceed']},{r['threshold']:.17g}")
    return "\n".join(lines) + "\n"
