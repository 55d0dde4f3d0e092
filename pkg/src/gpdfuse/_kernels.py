"""Compiled per-cluster sums of the GPD log density and its derivatives.

Scalar versions of the formulas in :mod:`gpdfuse.gpd`, fused with the
cluster reduction so the Newton solver makes one pass over the data.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .gpd import _SERIES, _SERIES_CUTOFF

_C0, _C1, _C2 = (np.ascontiguousarray(c) for c in _SERIES)


@njit(cache=True, inline="always")
def _horner(c, z):
    acc = 0.0
    for a in c:
        acc = acc * z + a
    return acc


@njit(cache=True)
def _nll_sums(y, idx, gamma, theta, n_clusters, c0):
    """Per-cluster negative log-likelihood; ``inf`` if any point is off-support."""
    out = np.zeros(n_clusters)
    for i in range(y.shape[0]):
        j = idx[i]
        g = gamma[j]
        gp1 = g + 1.0
        t = y[i] * math.exp(-theta[j])
        z = g * gp1 * t
        if not z > -1.0:
            out[j] = math.inf
            continue
        if abs(z) < _SERIES_CUTOFF:
            gz = _horner(c0, z)
        else:
            gz = math.log1p(z) / z
        out[j] -= math.log(gp1) - theta[j] - gp1 * gp1 * t * gz
    return out


@njit(cache=True)
def _all_sums(y, idx, gamma, theta, n_clusters, c0, c1, c2):
    """Per-cluster negative log-likelihood and negated derivatives in (gamma, log sigma).

    Rows of the ``(6, J)`` result: ``nll, -d_gamma, -d_theta, -d_gg, -d_gt, -d_tt``.
    A cluster with an off-support point gets ``nll = inf``.
    """
    out = np.zeros((6, n_clusters))
    for i in range(y.shape[0]):
        j = idx[i]
        g = gamma[j]
        gp1 = g + 1.0
        tg = 2.0 * g + 1.0
        t = y[i] * math.exp(-theta[j])
        z = g * gp1 * t
        if not z > -1.0:
            out[0, j] = math.inf
            continue
        if abs(z) < _SERIES_CUTOFF:
            g0 = _horner(c0, z)
            g1 = _horner(c1, z)
            g2 = _horner(c2, z)
        else:
            L = math.log1p(z)
            w = 1.0 + z
            g0 = L / z
            g1 = 1.0 / (z * w) - L / (z * z)
            g2 = -(1.0 + 2.0 * z) / (z * z * w * w) - 1.0 / (z * z * w) + 2.0 * L / (z * z * z)
        W = 1.0 + z
        q = gp1 * gp1 * t
        out[0, j] -= math.log(gp1) - theta[j] - q * g0
        out[1, j] -= 1.0 / gp1 - 2.0 * gp1 * t * g0 - q * tg * t * g1
        out[2, j] -= -1.0 + q / W
        out[3, j] -= (-1.0 / (gp1 * gp1) - 2.0 * t * g0 - 2.0 * gp1 * (5.0 * g + 3.0) * t * t * g1
                      - q * tg * tg * t * t * g2)
        out[4, j] -= gp1 * t / (W * W) * (2.0 * W - gp1 * tg * t)
        out[5, j] -= -q / (W * W)
    return out


def cluster_nll(data, gamma_full, theta) -> np.ndarray:
    return _nll_sums(data.y, data.index, np.ascontiguousarray(gamma_full, dtype=float),
                     np.ascontiguousarray(theta, dtype=float), data.n_clusters, _C0)


def cluster_sums(data, gamma_full, theta) -> np.ndarray:
    return _all_sums(data.y, data.index, np.ascontiguousarray(gamma_full, dtype=float),
                     np.ascontiguousarray(theta, dtype=float), data.n_clusters, _C0, _C1, _C2)
