"""Maximum-likelihood fits: cluster-wise and with shapes shared inside groups."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._newton import newton_solve
from .gpd import (GAMMA_LOWER, GAMMA_UPPER, MIN_EXCEEDANCES, ExceedanceData, GpdParams,
                  TooFewExceedances, cluster_neg_loglik)

DEFAULT_START = 0.1
FALLBACK_STARTS = (-0.2, 0.5)


@dataclass
class MleFit:
    """Per-cluster estimates from a (possibly grouped) likelihood fit.

    ``labels[j]`` is the group of cluster ``j``; for cluster-wise fits every
    cluster is its own group. ``converged`` is per cluster.
    """

    gamma: np.ndarray
    sigma: np.ndarray
    labels: np.ndarray
    converged: np.ndarray
    cluster_nll: np.ndarray
    iterations: int

    @property
    def neg_loglik(self) -> float:
        return float(self.cluster_nll.sum())

    @property
    def n_groups(self) -> int:
        return len(np.unique(self.labels))

    @property
    def params(self) -> list[GpdParams]:
        return [GpdParams(float(g), float(s)) for g, s in zip(self.gamma, self.sigma)]

    def group_sizes(self, n_exceed) -> np.ndarray:
        """Total exceedance count of each cluster's group (``n_A``)."""
        n_exceed = np.asarray(n_exceed)
        tot = np.bincount(self.labels, weights=n_exceed)
        return tot[self.labels].astype(int)


def _check_counts(data: ExceedanceData, min_exceed: int):
    n = data.n_exceed
    small = np.flatnonzero(n < min_exceed)
    if len(small):
        raise TooFewExceedances(
            f"clusters {small.tolist()} have fewer than {min_exceed} exceedances")


def _feasible_start(data: ExceedanceData, gamma_c, labels):
    """Starting log-scale per cluster: mean exceedance, widened to cover the sample for gamma < 0."""
    sig = np.array([c.y.mean() if c.n_exceed else 1.0 for c in data.clusters])
    ymax = np.array([c.y.max() if c.n_exceed else 0.0 for c in data.clusters])
    g = np.asarray(gamma_c, dtype=float)[labels]
    need = np.where(g < 0, -g * (g + 1.0) * ymax * 1.5, 0.0)
    return np.log(np.maximum(sig, need))


def _solve(data, labels, n_groups, gamma0, theta0, tol, max_iter):
    res = newton_solve(data, gamma0, theta0, group_of=labels, tol=tol, max_iter=max_iter)
    return res


def _fit(data: ExceedanceData, labels: np.ndarray, n_groups: int, init, tol, max_iter) -> MleFit:
    if init is not None:
        g_init, s_init = init
        g0 = np.bincount(labels, weights=np.asarray(g_init, float), minlength=n_groups)
        g0 /= np.bincount(labels, minlength=n_groups)
        th0 = np.log(np.asarray(s_init, dtype=float))
        g0 = np.clip(g0, GAMMA_LOWER, GAMMA_UPPER)
        bad = ~np.isfinite(cluster_neg_loglik(data, g0[labels], np.exp(th0)))
        if bad.any():
            th0 = np.where(bad, _feasible_start(data, g0, labels), th0)
            bad = ~np.isfinite(cluster_neg_loglik(data, g0[labels], np.exp(th0)))
            # any group still infeasible restarts from the default
            badg = np.bincount(labels, weights=bad, minlength=n_groups) > 0
            g0[badg] = DEFAULT_START
            th0 = np.where(badg[labels], _feasible_start(data, g0, labels), th0)
    else:
        g0 = np.full(n_groups, DEFAULT_START)
        th0 = _feasible_start(data, g0, labels)

    res = _solve(data, labels, n_groups, g0, th0, tol, max_iter)
    gamma, theta, conv, f = res.gamma, res.theta, res.converged, res.objective
    iters = res.iterations

    for start in FALLBACK_STARTS:
        if conv.all():
            break
        redo = np.flatnonzero(~conv)
        g1 = gamma.copy()
        g1[redo] = start
        th1 = np.where(~conv[labels], _feasible_start(data, g1, labels), theta)
        r = _solve(data, labels, n_groups, g1, th1, tol, max_iter)
        iters += r.iterations
        better = (~conv) & ((r.converged & ~conv) | (r.objective < f))
        gamma = np.where(better, r.gamma, gamma)
        theta = np.where(better[labels], r.theta, theta)
        f = np.where(better, r.objective, f)
        conv = conv | (better & r.converged)

    sigma = np.exp(theta)
    g_full = gamma[labels]
    return MleFit(gamma=g_full, sigma=sigma, labels=labels.copy(), converged=conv[labels],
                  cluster_nll=cluster_neg_loglik(data, g_full, sigma), iterations=iters)


def fit_clusterwise(data: ExceedanceData, min_exceed: int = MIN_EXCEEDANCES, tol: float = 1e-8,
                    max_iter: int = 500, init=None) -> MleFit:
    """Cluster-by-cluster GPD maximum likelihood.

    Optimizes over (gamma, log sigma) with gamma boxed to
    ``[GAMMA_LOWER, GAMMA_UPPER]``. Clusters that fail to converge from the
    default start (gamma = 0.1, sigma = mean exceedance) are retried from
    gamma = -0.2 and 0.5; the best iterate is kept and flagged.
    """
    _check_counts(data, min_exceed)
    J = data.n_clusters
    labels = np.arange(J)
    return _fit(data, labels, J, init, tol, max_iter)


def partition_labels(partition: Sequence[Sequence[int]], n_clusters: int) -> np.ndarray:
    labels = np.full(n_clusters, -1, dtype=np.intp)
    for k, part in enumerate(partition):
        part = np.asarray(part, dtype=np.intp)
        if len(part) == 0:
            raise ValueError("empty group in partition")
        if np.any((part < 0) | (part >= n_clusters)):
            raise ValueError("partition index out of range")
        if np.any(labels[part] >= 0) or len(np.unique(part)) != len(part):
            raise ValueError("partition groups overlap")
        labels[part] = k
    if np.any(labels < 0):
        raise ValueError("partition does not cover every cluster")
    return labels


def labels_to_partition(labels) -> list[np.ndarray]:
    labels = np.asarray(labels)
    return [np.flatnonzero(labels == k) for k in np.unique(labels)]


def fit_grouped(data: ExceedanceData, partition, min_exceed: int = MIN_EXCEEDANCES, tol: float = 1e-8,
                max_iter: int = 500, init=None) -> MleFit:
    """Joint MLE with one shape per group and a scale per cluster.

    ``partition`` is either a list of index sets or a label vector.
    ``init`` is an optional ``(gamma, sigma)`` pair of per-cluster arrays;
    group starting shapes are member averages.
    """
    _check_counts(data, min_exceed)
    J = data.n_clusters
    if isinstance(partition, np.ndarray) and partition.ndim == 1 and partition.dtype.kind in "iu" \
            and len(partition) == J:
        labels = np.unique(partition, return_inverse=True)[1].astype(np.intp)
    else:
        labels = partition_labels(partition, J)
    return _fit(data, labels, int(labels.max()) + 1, init, tol, max_iter)
