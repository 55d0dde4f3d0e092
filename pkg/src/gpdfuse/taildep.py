"""Empirical upper-tail dependence between cluster series."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

DEFAULT_LEVEL = 0.98


def _exceed_mask(x, u):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if np.ptp(x) == 0:
        raise ValueError("series is constant; tail dependence is undefined")
    return rankdata(x, method="average") / len(x) > u


def _check_level(u, n):
    if not 0 < u < 1:
        raise ValueError("u must lie in (0, 1)")
    if math.ceil((1 - u) * n) < 1:
        raise ValueError("u leaves no exceedances at this sample size")


def _chi_from_masks(a, b):
    joint = np.count_nonzero(a & b)
    na, nb = np.count_nonzero(a), np.count_nonzero(b)
    if na == 0 or nb == 0:
        return 0.0
    # symmetrize the two conditional estimates P(B | A) and P(A | B)
    return float(min(1.0, max(0.0, 0.5 * (joint / na + joint / nb))))


def chi_hat(x_j, x_k, u: float = DEFAULT_LEVEL) -> float:
    """Rank-based estimate of ``P(F_k(X_k) > u | F_j(X_j) > u)``, symmetrized.

    Ranks use average ties; an observation exceeds when ``rank / n > u``.
    """
    x_j = np.asarray(x_j, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    if x_j.shape != x_k.shape:
        raise ValueError("series lengths differ")
    _check_level(u, len(x_j))
    return _chi_from_masks(_exceed_mask(x_j, u), _exceed_mask(x_k, u))


def chi_matrix(raw, u: float = DEFAULT_LEVEL) -> np.ndarray:
    """Symmetric ``J x J`` matrix of :func:`chi_hat` with unit diagonal."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("expected an n x J matrix")
    n, J = raw.shape
    _check_level(u, n)
    E = np.column_stack([_exceed_mask(raw[:, j], u) for j in range(J)]).astype(float)
    joint = E.T @ E
    cnt = np.diag(joint).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(cnt[:, None] > 0, joint / cnt[:, None], 0.0)
    chi = np.clip(0.5 * (cond + cond.T), 0.0, 1.0)
    np.fill_diagonal(chi, 1.0)
    return chi


def write_chi_csv(chi, path) -> None:
    np.savetxt(path, np.asarray(chi), delimiter=",", fmt="%.17g")


def read_chi_csv(path) -> np.ndarray:
    chi = np.loadtxt(path, delimiter=",", ndmin=2)
    if chi.shape[0] != chi.shape[1]:
        raise ValueError("chi matrix must be square")
    return chi
