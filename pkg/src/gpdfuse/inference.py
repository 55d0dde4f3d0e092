"""Return levels, exceedance probabilities and delta-method intervals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .gpd import GAMMA_LOWER, _exprel, survival


class BoundaryWarning(UserWarning):
    """The shape estimate sits below the fitting bound, where the scale variance term explodes."""


def _check(gamma, sigma, tau, xi):
    gamma, sigma, tau, xi = (np.asarray(v, dtype=float) for v in (gamma, sigma, tau, xi))
    if np.any(gamma <= -0.5):
        raise ValueError("gamma must exceed -0.5")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    if np.any((xi <= 0) | (xi > 1)):
        raise ValueError("exceedance probability xi must lie in (0, 1]")
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    if np.any(tau > xi):
        raise ValueError("tau exceeds the threshold exceedance probability; level is below the tail model")
    return gamma, sigma, tau, xi


def _exprel_prime(x):
    # d/dx (e^x - 1)/x = (x e^x - e^x + 1) / x^2 = 1/2 + x/3 + x^2/8 + x^3/30 + ...
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    closed = (xs * np.exp(xs) - np.expm1(xs)) / xs**2
    series = 0.5 + x / 3.0 + x**2 / 8.0 + x**3 / 30.0
    return np.where(small, series, closed)


def return_level(gamma, sigma, tau, xi=1.0, w=0.0):
    """Level exceeded with per-observation probability ``tau``.

    ``w + sigma / (gamma (gamma + 1)) * ((tau / xi)**(-gamma) - 1)``, evaluated
    stably through ``gamma = 0`` where it becomes ``w - sigma log(tau / xi)``.
    Requires ``tau <= xi``; at ``tau = xi`` the level is ``w``.
    """
    gamma, sigma, tau, xi = _check(gamma, sigma, tau, xi)
    L = np.log(xi) - np.log(tau)
    out = w + sigma / (gamma + 1.0) * L * _exprel(gamma * L)
    return out if out.ndim else float(out)


def return_level_partials(gamma, sigma, tau, xi=1.0):
    """Partial derivatives ``(R_gamma, R_sigma, R_xi)`` of :func:`return_level`."""
    gamma, sigma, tau, xi = _check(gamma, sigma, tau, xi)
    gp1 = gamma + 1.0
    L = np.log(xi) - np.log(tau)
    e = _exprel(gamma * L)
    r_sigma = L * e / gp1
    r_gamma = sigma * L * (-e / gp1**2 + L * _exprel_prime(gamma * L) / gp1)
    r_xi = sigma / gp1 * np.exp(gamma * L) / xi
    return r_gamma, r_sigma, r_xi


def exceed_prob(gamma, sigma, xi, w, x):
    """``P(X > x)`` from the tail model: ``xi * H(x - w)``; zero past a finite endpoint."""
    x = np.asarray(x, dtype=float)
    if np.any(x < w):
        raise ValueError("x must be at or above the threshold")
    if np.any(np.asarray(sigma) <= 0) or np.any(np.asarray(gamma) <= -0.5):
        raise ValueError("invalid GPD parameters")
    out = np.asarray(xi, dtype=float) * survival(x - w, gamma, sigma)
    return out if out.ndim else float(out)


@dataclass
class ReturnLevelEstimate:
    tau: float
    point: float
    ci_lower: float
    ci_upper: float
    se: float
    gamma: float
    sigma: float
    xi: float
    group_size_n: int
    cluster_n: int
    raw_n: int
    boundary: bool = False

    @property
    def length(self) -> float:
        return self.ci_upper - self.ci_lower


def return_level_variance_terms(gamma, sigma, xi, n_group, n_cluster, n_raw, tau):
    """The three delta-method variance contributions (shape, scale, exceedance rate).

    Returns ``(v_gamma, v_sigma, v_xi, boundary)``.
    """
    rg, rs, rx = return_level_partials(gamma, sigma, tau, xi)
    gamma = np.asarray(gamma, dtype=float)
    # below the fitting box the scale term blows up; clamp it and flag the estimate
    boundary = gamma < GAMMA_LOWER
    tg = 2.0 * np.maximum(gamma, GAMMA_LOWER) + 1.0
    v_gamma = rg**2 * (gamma + 1.0) ** 2 / n_group
    v_sigma = rs**2 * np.asarray(sigma) ** 2 * tg / n_cluster
    v_xi = rx**2 * np.asarray(xi) * (1.0 - np.asarray(xi)) / n_raw
    return v_gamma, v_sigma, v_xi, boundary


def return_level_ci(gamma: float, sigma: float, xi: float, n_group: Optional[int], n_cluster: int,
                    n_raw: int, tau: float, p: float = 0.05, w: float = 0.0) -> ReturnLevelEstimate:
    """Delta-method ``100(1-p)%`` interval for one cluster's return level.

    ``n_group`` is the total exceedance count of the cluster's shape group;
    pass ``None`` (or ``n_cluster``) for an ungrouped fit.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    n_group = n_cluster if n_group is None else n_group
    point = return_level(gamma, sigma, tau, xi, w)
    vg, vs, vx, boundary = return_level_variance_terms(gamma, sigma, xi, n_group, n_cluster, n_raw, tau)
    if boundary:
        warnings.warn("shape estimate below the fitting bound: scale variance term evaluated at the bound",
                      BoundaryWarning, stacklevel=2)
    se = float(np.sqrt(vg + vs + vx))
    z = norm.isf(p / 2.0)
    return ReturnLevelEstimate(tau=float(tau), point=float(point), ci_lower=float(point - z * se),
                               ci_upper=float(point + z * se), se=se, gamma=float(gamma),
                               sigma=float(sigma), xi=float(xi), group_size_n=int(n_group),
                               cluster_n=int(n_cluster), raw_n=int(n_raw), boundary=bool(boundary))


def return_level_table(gamma, sigma, data, tau: float, labels=None, p: float = 0.05):
    """One :class:`ReturnLevelEstimate` per cluster.

    ``labels`` gives shape groups (``None`` means every cluster is alone).
    """
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n_j = data.n_exceed
    if labels is None:
        n_a = n_j
    else:
        labels = np.asarray(labels)
        n_a = np.bincount(labels, weights=n_j)[labels].astype(int)
    xi = data.exceed_prob
    raw = data.raw_count
    w = data.thresholds
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        for j in range(len(gamma)):
            out.append(return_level_ci(gamma[j], sigma[j], xi[j], int(n_a[j]), int(n_j[j]), int(raw[j]),
                                       tau, p, w[j]))
    return out


def report_rows(estimates, labels=None) -> list[dict]:
    """Rows with site id, shape, return level, interval and group size."""
    rows = []
    for j, e in enumerate(estimates):
        rows.append({"site": j + 1, "group": int(labels[j]) + 1 if labels is not None else j + 1,
                     "gamma": e.gamma, "return_level": e.point, "ci_lower": e.ci_lower,
                     "ci_upper": e.ci_upper, "group_size": e.group_size_n, "boundary": e.boundary})
    return rows
