"""Choosing the number of exceedances per cluster.

The QQ risk compares, for each cluster, the top ``k`` exceedances over the
``(k+1)``-th largest value with the quantiles of the GPD fitted to them.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .fitting import fit_clusterwise
from .gpd import ClusterExceedances, ExceedanceData, MIN_EXCEEDANCES, quantile_from_survival

log = logging.getLogger(__name__)


def plotting_positions(k: int) -> np.ndarray:
    """``p_i = i / (k + 0.5)`` for ``i = 1..k``; ``p_1`` pairs with the largest exceedance."""
    return np.arange(1, k + 1) / (k + 0.5)


def top_k_exceedances(col, k: int) -> np.ndarray:
    """Descending exceedances ``X_(i) - X_(k+1)``, ``i = 1..k``, with ties at the threshold removed."""
    col = np.asarray(col, dtype=float)
    col = col[np.isfinite(col)]
    if not 1 <= k < len(col):
        raise ValueError(f"k must lie in [1, n-1], got {k}")
    desc = -np.sort(-col)
    y = desc[:k] - desc[k]
    return y[y > 0]


def qq_deviation(y_desc, gamma: float, sigma: float) -> float:
    """Mean squared gap between descending exceedances and fitted quantiles."""
    y_desc = np.asarray(y_desc, dtype=float)
    q = quantile_from_survival(plotting_positions(len(y_desc)), gamma, sigma)
    return float(np.mean((y_desc - q) ** 2))


def qq_risk(raw, k: int, min_exceed: int = MIN_EXCEEDANCES) -> float:
    """Average over clusters of the QQ mean squared deviation at ``k`` exceedances.

    Clusters whose fit fails (too few distinct exceedances or no convergence)
    are skipped with a warning and the average is over the rest.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    ys, keep = [], []
    for j in range(raw.shape[1]):
        y = top_k_exceedances(raw[:, j], k)
        if len(y) < min_exceed:
            warnings.warn(f"cluster {j + 1}: only {len(y)} exceedances at k={k}; skipped")
            continue
        ys.append(y)
        keep.append(j)
    if not ys:
        raise ValueError(f"no cluster can be fitted at k={k}")
    data = ExceedanceData([ClusterExceedances(y, raw_count=raw.shape[0]) for y in ys])
    fit = fit_clusterwise(data, min_exceed=min_exceed)
    risks = []
    for i, y in enumerate(ys):
        if not fit.converged[i]:
            warnings.warn(f"cluster {keep[i] + 1}: GPD fit did not converge at k={k}; skipped")
            continue
        risks.append(qq_deviation(y, fit.gamma[i], fit.sigma[i]))
    if not risks:
        raise ValueError(f"no cluster fit converged at k={k}")
    return float(np.mean(risks))


@dataclass
class RiskPath:
    k: np.ndarray
    risk: np.ndarray
    selected: Optional[int] = None

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=int)
        self.risk = np.asarray(self.risk, dtype=float)
        if len(self.k) != len(self.risk) or len(self.k) == 0:
            raise ValueError("k and risk must be non-empty and of equal length")
        if np.any(np.diff(self.k) <= 0):
            raise ValueError("k values must be strictly ascending")
        if np.any(self.risk < 0):
            raise ValueError("risk values are non-negative")

    def to_csv(self) -> str:
        lines = ["k,risk,selected"]
        for k, r in zip(self.k, self.risk):
            lines.append(f"{k},{r:.17g},{int(self.selected == k)}")
        return "\n".join(lines) + "\n"


def qq_risk_path(raw, ks: Sequence[int], min_exceed: int = MIN_EXCEEDANCES) -> RiskPath:
    ks = sorted(set(int(k) for k in ks))
    return RiskPath(np.array(ks), np.array([qq_risk(raw, k, min_exceed) for k in ks]))


def _centered_mean(x, window):
    half = window // 2
    n = len(x)
    out = np.empty(n)
    for i in range(n):
        out[i] = x[max(0, i - half): min(n, i + half + 1)].mean()
    return out


def select_k(path: RiskPath, method: str = "stability", k: Optional[int] = None, window: int = 5,
             rel_tol: float = 0.02, horizon: int = 10) -> int:
    """Pick ``k`` from a risk path.

    ``manual`` returns ``k``; ``min`` the smallest-risk ``k`` (ties to the
    smaller ``k``); ``stability`` the smallest ``k`` whose centered moving
    average (``window`` points) stays within ``rel_tol`` relative change over
    the next ``horizon`` grid points, falling back to ``min`` with a warning.
    """
    if method == "manual":
        if k is None:
            raise ValueError("manual selection needs k")
        path.selected = int(k)
        return path.selected
    if method == "min":
        path.selected = int(path.k[np.argmin(path.risk)])
        return path.selected
    if method != "stability":
        raise ValueError(f"unknown method {method!r}")
    if len(path.k) == 1:
        path.selected = int(path.k[0])
        return path.selected
    m = _centered_mean(path.risk, window)
    n = len(m)
    for i in range(n - 1):
        ahead = m[i + 1: min(n, i + 1 + horizon)]
        d = np.abs(ahead - m[i])
        if np.all((d < rel_tol * abs(m[i])) | (d == 0)):
            path.selected = int(path.k[i])
            return path.selected
    warnings.warn("no stable point on the risk path; using the minimum")
    return select_k(path, "min")


@dataclass
class MrlPoint:
    threshold: float
    mean_excess: float
    ci_lower: float
    ci_upper: float
    n_exceed: int


def mean_residual_life(x, thresholds, level: float = 0.95) -> list[MrlPoint]:
    """Mean excess over each threshold with a normal-approximation interval.

    Thresholds leaving fewer than two exceedances are omitted.
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    z = norm.isf((1 - level) / 2)
    out = []
    for w in np.asarray(thresholds, dtype=float):
        e = x[x > w] - w
        if len(e) < 2:
            continue
        me = e.mean()
        half = z * e.std(ddof=1) / np.sqrt(len(e))
        out.append(MrlPoint(float(w), float(me), float(me - half), float(me + half), len(e)))
    return out


def mrl_to_csv(points: Sequence[MrlPoint]) -> str:
    lines = ["threshold,mean_excess,ci_lower,ci_upper,n_exceed"]
    for p in points:
        lines.append(f"{p.threshold:.17g},{p.mean_excess:.17g},{p.ci_lower:.17g},{p.ci_upper:.17g},{p.n_exceed}")
    return "\n".join(lines) + "\n"
