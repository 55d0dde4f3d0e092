"""Box-constrained damped Newton solver for sums of GPD cluster likelihoods.

Variables are a shape vector ``gamma`` of length P (one entry per parameter
group) and a log-scale vector ``theta`` of length J (one per cluster);
cluster ``j`` uses shape ``gamma[group_of[j]]``. An optional quadratic term
``s'(D gamma - u) + rho/2 ||D gamma - u||^2`` couples the shapes (the smooth
ADMM subproblem). The Hessian is block-arrow structured, so each Newton step
eliminates ``theta`` cluster by cluster and solves a P x P system for
``gamma``. Without the quadratic term every group is an independent
component with its own line search and convergence flag.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import cluster_sums
from .gpd import GAMMA_LOWER, GAMMA_UPPER, ExceedanceData

_ARMIJO = 1e-4
_MAX_HALVINGS = 50
_MAX_GAMMA_STEP = 0.5
_MAX_THETA_STEP = 2.0
_STALL_TOL = 1e-5
_DENSE_LIMIT = 400
_PD_FLOOR = 1e-8


@dataclass
class Coupling:
    """Quadratic shape coupling over edges ``(head[m], tail[m])`` with ``(D g)_m = g[head] - g[tail]``."""

    head: np.ndarray
    tail: np.ndarray
    s: np.ndarray
    u: np.ndarray
    rho: float
    n_vertices: int
    _lap: Optional[object] = None

    @classmethod
    def from_edges(cls, edges, s, u, rho, n_vertices, laplacian=None):
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        return cls(edges[:, 0], edges[:, 1], s, u, rho, n_vertices, laplacian)

    def diff(self, gamma):
        return gamma[self.head] - gamma[self.tail]

    def adjoint(self, x):
        J = self.n_vertices
        return (np.bincount(self.head, weights=x, minlength=J)
                - np.bincount(self.tail, weights=x, minlength=J))

    def value(self, gamma):
        r = self.diff(gamma) - self.u
        return float(self.s @ r + 0.5 * self.rho * (r @ r))

    def grad(self, gamma):
        return self.adjoint(self.s + self.rho * (self.diff(gamma) - self.u))

    def laplacian(self):
        """``D'D``, dense for small graphs; callers may cache it via ``laplacian=``."""
        if self._lap is None:
            self._lap = graph_laplacian(self.head, self.tail, self.n_vertices)
        return self._lap


def graph_laplacian(head, tail, n_vertices):
    M = len(head)
    D = sp.csr_matrix((np.tile([1.0, -1.0], M), (np.repeat(np.arange(M), 2),
                                                 np.column_stack([head, tail]).ravel())),
                      shape=(M, n_vertices))
    lap = (D.T @ D).tocsc()
    return lap.toarray() if n_vertices <= _DENSE_LIMIT else lap


@dataclass
class NewtonResult:
    gamma: np.ndarray
    theta: np.ndarray
    converged: np.ndarray   # per component
    iterations: int
    grad_norm: np.ndarray   # projected-gradient max-norm per component
    objective: np.ndarray   # per component


def _make_pd(a, b, c):
    """Clamp each 2x2 block [[a, b], [b, c]] to be positive definite."""
    scale = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1.0)
    bad = ~((a > _PD_FLOOR * scale) & (a * c - b * b > _PD_FLOOR * scale * np.maximum(a, c)))
    if not bad.any():
        return a, b, c
    a, b, c = a.copy(), b.copy(), c.copy()
    H = np.stack([np.stack([a[bad], b[bad]], -1), np.stack([b[bad], c[bad]], -1)], -2)
    lam, V = np.linalg.eigh(H)
    sc = np.maximum(np.abs(lam).max(axis=1, keepdims=True), 1.0)
    lam = np.maximum(np.abs(lam), _PD_FLOOR * sc)
    H = (V * lam[:, None, :]) @ np.swapaxes(V, 1, 2)
    a[bad], b[bad], c[bad] = H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]
    return a, b, c


def newton_solve(data: ExceedanceData, gamma0, theta0, group_of=None, coupling: Coupling | None = None,
                 lower=GAMMA_LOWER, upper=GAMMA_UPPER, tol=1e-8, max_iter=500) -> NewtonResult:
    J = data.n_clusters
    gamma = np.clip(np.asarray(gamma0, dtype=float).copy(), lower, upper)
    theta = np.asarray(theta0, dtype=float).copy()
    P = len(gamma)
    group_of = np.arange(J) if group_of is None else np.asarray(group_of, dtype=np.intp)
    if coupling is not None and P != J:
        raise ValueError("coupling requires one shape parameter per cluster")

    # component of each group / cluster for line search and convergence
    if coupling is None:
        n_comp, comp_of_group = P, np.arange(P)
    else:
        n_comp, comp_of_group = 1, np.zeros(P, dtype=np.intp)
    comp_of_cluster = comp_of_group[group_of]
    lap = coupling.laplacian() if coupling is not None else None

    def evaluate(g, th):
        sums = cluster_sums(data, g[group_of], th)
        f = np.bincount(comp_of_cluster, weights=sums[0], minlength=n_comp)
        f[np.isnan(f)] = np.inf
        if coupling is not None:
            f = f + coupling.value(g)
        return f, sums

    f, sums = evaluate(gamma, theta)
    if not np.all(np.isfinite(f)):
        raise ValueError("initial parameters are infeasible for the data")

    done = np.zeros(n_comp, dtype=bool)
    converged = np.zeros(n_comp, dtype=bool)
    pg_norm = np.full(n_comp, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        _, gg, gt, hgg, hgt, htt = sums
        G = np.bincount(group_of, weights=gg, minlength=P)
        if coupling is not None:
            G = G + coupling.grad(gamma)

        at_lo = (gamma <= lower + 1e-12) & (G > 0)
        at_hi = (gamma >= upper - 1e-12) & (G < 0)
        Gp = np.where(at_lo | at_hi, 0.0, G)
        pg_norm = np.zeros(n_comp)
        np.maximum.at(pg_norm, comp_of_group, np.abs(Gp))
        np.maximum.at(pg_norm, comp_of_cluster, np.abs(gt))
        newly = ~done & (pg_norm < tol)
        converged |= newly
        done |= newly
        if done.all():
            break

        a, b, c = _make_pd(hgg, hgt, htt)
        schur = np.bincount(group_of, weights=a - b * b / c, minlength=P)
        rhs = -G + np.bincount(group_of, weights=b * gt / c, minlength=P)
        free = ~(at_lo | at_hi) & ~done[comp_of_group]

        dg = np.zeros(P)
        if coupling is None:
            dg[free] = rhs[free] / schur[free]
        else:
            fi = np.flatnonzero(free)
            if len(fi) == P:
                if isinstance(lap, np.ndarray):
                    S = coupling.rho * lap
                    S[np.diag_indices_from(S)] += schur
                    dg = np.linalg.solve(S, rhs)
                else:
                    dg = spla.spsolve((coupling.rho * lap + sp.diags(schur)).tocsc(), rhs)
            elif len(fi):
                if isinstance(lap, np.ndarray):
                    S = coupling.rho * lap[np.ix_(fi, fi)]
                    S[np.diag_indices_from(S)] += schur[fi]
                    dg[fi] = np.linalg.solve(S, rhs[fi])
                else:
                    S = (coupling.rho * lap[fi][:, fi] + sp.diags(schur[fi])).tocsc()
                    dg[fi] = spla.spsolve(S, rhs[fi])
        dth = -(gt + b * dg[group_of]) / c
        dth[done[comp_of_cluster]] = 0.0

        # cap step lengths per component
        mg = np.zeros(n_comp)
        np.maximum.at(mg, comp_of_group, np.abs(dg))
        mt = np.zeros(n_comp)
        np.maximum.at(mt, comp_of_cluster, np.abs(dth))
        with np.errstate(divide="ignore"):
            alpha = np.minimum(1.0, np.where(mg > 0, _MAX_GAMMA_STEP / mg, 1.0))
            alpha = np.minimum(alpha, np.where(mt > 0, _MAX_THETA_STEP / mt, 1.0))
        pending = ~done
        gamma_new, theta_new, f_new, sums_new = gamma.copy(), theta.copy(), f.copy(), sums.copy()
        # slack of a few ulps so that full steps are not rejected on rounding noise
        slack = 64 * np.finfo(float).eps * (1.0 + np.abs(f))
        for _ in range(_MAX_HALVINGS):
            ag = alpha[comp_of_group]
            at = alpha[comp_of_cluster]
            g_try = np.where(pending[comp_of_group], np.clip(gamma + ag * dg, lower, upper), gamma)
            t_try = np.where(pending[comp_of_cluster], theta + at * dth, theta)
            f_try, sums_try = evaluate(g_try, t_try)
            decrease = (np.bincount(comp_of_group, weights=G * (g_try - gamma), minlength=n_comp)
                        + np.bincount(comp_of_cluster, weights=gt * (t_try - theta), minlength=n_comp))
            ok = pending & np.isfinite(f_try) & (f_try <= f + _ARMIJO * decrease + slack)
            if ok.any():
                gsel = ok[comp_of_group]
                csel = ok[comp_of_cluster]
                gamma_new[gsel] = g_try[gsel]
                theta_new[csel] = t_try[csel]
                sums_new[:, csel] = sums_try[:, csel]
                f_new[ok] = f_try[ok]
                pending &= ~ok
            if not pending.any():
                break
            alpha[pending] *= 0.5
        # components whose line search failed are at numerical stationarity or stuck
        if pending.any():
            stalled = pending & ~done
            converged |= stalled & (pg_norm < _STALL_TOL)
            done |= stalled
        gamma, theta, f, sums = gamma_new, theta_new, f_new, sums_new
        if done.all():
            break

    return NewtonResult(gamma=gamma, theta=theta, converged=converged, iterations=it,
                        grad_norm=pg_norm, objective=f)
