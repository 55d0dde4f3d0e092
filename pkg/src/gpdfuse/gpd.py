"""Generalized Pareto likelihood in the orthogonal (gamma, sigma) parameterization.

The density of an exceedance ``y > 0`` is::

    h(y | gamma, sigma) = (gamma + 1) / sigma * (1 + gamma (gamma + 1) y / sigma) ** (-1/gamma - 1)

With ``t = y / sigma`` and ``z = gamma (gamma + 1) t`` the log density is rewritten as::

    log h = log(gamma + 1) - log(sigma) - (gamma + 1)**2 * t * g(z),   g(z) = log1p(z) / z

which is smooth through ``gamma = 0`` (``g(0) = 1`` gives the exponential law).
All derivatives below are taken from this form, so no branch switching is
needed at ``gamma = 0`` beyond the series used for ``g`` near ``z = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GAMMA_LOWER = -0.5 + 1e-4
GAMMA_UPPER = 10.0
MIN_EXCEEDANCES = 10

# |z| below this uses the power series of g, g', g''.
_SERIES_CUTOFF = 1e-2
_SERIES_TERMS = 12


class DomainError(ValueError):
    """An exceedance lies beyond the upper endpoint of the distribution."""


class TooFewExceedances(ValueError):
    pass


@dataclass(frozen=True)
class GpdParams:
    gamma: float
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= -0.5:
            raise ValueError(f"gamma must exceed -0.5, got {self.gamma}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def upper_endpoint(self) -> float:
        if self.gamma >= 0:
            return np.inf
        return self.sigma / (-self.gamma * (self.gamma + 1.0))


@dataclass(frozen=True)
class FisherInfo:
    i_gamma_gamma: float
    i_gamma_sigma: float
    i_sigma_sigma: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.i_gamma_gamma, self.i_gamma_sigma],
                         [self.i_gamma_sigma, self.i_sigma_sigma]])


@dataclass
class ClusterExceedances:
    """Exceedances ``y = x - w`` of one cluster plus raw-sample bookkeeping."""

    y: np.ndarray
    raw_count: int
    threshold: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if np.any(~(self.y > 0)):
            raise ValueError("exceedances must be strictly positive")
        if self.raw_count < len(self.y) or self.raw_count < 1:
            raise ValueError("raw_count must be >= number of exceedances and positive")

    @property
    def n_exceed(self) -> int:
        return len(self.y)

    @property
    def exceed_prob(self) -> float:
        return self.n_exceed / self.raw_count


@dataclass
class ExceedanceData:
    clusters: list[ClusterExceedances]
    # flattened view for vectorized likelihood evaluation
    y: np.ndarray = field(init=False, repr=False)
    index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.clusters = list(self.clusters)
        if self.clusters:
            self.y = np.concatenate([c.y for c in self.clusters])
            self.index = np.concatenate(
                [np.full(c.n_exceed, j, dtype=np.intp) for j, c in enumerate(self.clusters)])
        else:
            self.y = np.empty(0)
            self.index = np.empty(0, dtype=np.intp)

    @classmethod
    def from_raw(cls, raw, thresholds) -> "ExceedanceData":
        """Build from an ``n x J`` matrix and one threshold per column (or a scalar).

        Observations ``x <= w`` are dropped as non-extreme; NaNs are not counted.
        """
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        w = np.broadcast_to(np.asarray(thresholds, dtype=float), (raw.shape[1],))
        clusters = []
        for j in range(raw.shape[1]):
            col = raw[:, j]
            col = col[np.isfinite(col)]
            y = col[col > w[j]] - w[j]
            clusters.append(ClusterExceedances(y[y > 0], raw_count=len(col), threshold=float(w[j])))
        return cls(clusters)

    @classmethod
    def from_raw_top_k(cls, raw, k: int) -> "ExceedanceData":
        """Threshold each column at its (k+1)-th largest value so that ``n_j = k``.

        Ties at the threshold can make ``n_j < k``.
        """
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        if not 1 <= k < raw.shape[0]:
            raise ValueError(f"k must lie in [1, n-1], got {k}")
        desc = -np.sort(-raw, axis=0)
        return cls.from_raw(raw, desc[k, :])

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_exceed(self) -> np.ndarray:
        return np.array([c.n_exceed for c in self.clusters], dtype=int)

    @property
    def raw_count(self) -> np.ndarray:
        return np.array([c.raw_count for c in self.clusters], dtype=int)

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([c.threshold for c in self.clusters], dtype=float)

    @property
    def exceed_prob(self) -> np.ndarray:
        return np.array([c.exceed_prob for c in self.clusters], dtype=float)

    def subset(self, idx: Sequence[int]) -> "ExceedanceData":
        return ExceedanceData([self.clusters[i] for i in idx])


# --------------------------------------------------------------------------
# g(z) = log1p(z)/z and its first two derivatives


def _series_coefs(order):
    # g(z) = sum_k (-1)^k z^k / (k+1); differentiate termwise
    coefs = []
    for k in range(order, order + _SERIES_TERMS):
        c = (-1.0) ** k / (k + 1.0)
        for m in range(order):
            c *= (k - m)
        coefs.append(c)
    return np.array(coefs[::-1])  # highest power first, for polyval


_SERIES = [_series_coefs(k) for k in range(3)]


def _g_series(z, order):
    return np.polyval(_SERIES[order], z)


def _g_funcs(z, order=0):
    """Return ``[g, g', g''][: order + 1]`` evaluated at ``z > -1``."""
    z0 = np.asarray(z, dtype=float)
    z = np.atleast_1d(z0)
    small = np.abs(z) < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)  # placeholder avoids 0/0 in the closed forms
    L = np.log1p(zs)
    w = 1.0 + zs
    out = [L / zs]
    if order >= 1:
        out.append(1.0 / (zs * w) - L / zs**2)
    if order >= 2:
        out.append(-(1.0 + 2.0 * zs) / (zs**2 * w**2) - 1.0 / (zs**2 * w) + 2.0 * L / zs**3)
    if small.any():
        zsm = z[small]
        for k, arr in enumerate(out):
            arr[small] = _g_series(zsm, k)
    return [arr.reshape(z0.shape) for arr in out]


def _pointwise(y, gamma, sigma, order=0):
    """Log density and derivatives in (gamma, theta = log sigma), per point.

    Returns a dict with ``logh`` and, for ``order >= 1``, ``d_gamma``, ``d_theta``;
    for ``order >= 2`` also ``d_gg``, ``d_gt``, ``d_tt``. Points outside the
    support get ``logh = -inf`` and zero derivatives.
    """
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gp1 = gamma + 1.0
    t = y / sigma
    z = gamma * gp1 * t
    ok = z > -1.0
    z = np.where(ok, z, 0.0)
    W = 1.0 + z
    gs = _g_funcs(z, order)
    g = gs[0]
    logh = np.log(gp1) - np.log(sigma) - gp1**2 * t * g
    res = {"logh": np.where(ok, logh, -np.inf)}
    if order >= 1:
        g1 = gs[1]
        d_gamma = 1.0 / gp1 - 2.0 * gp1 * t * g - gp1**2 * (2.0 * gamma + 1.0) * t**2 * g1
        d_theta = -1.0 + gp1**2 * t / W
        res["d_gamma"] = np.where(ok, d_gamma, 0.0)
        res["d_theta"] = np.where(ok, d_theta, 0.0)
    if order >= 2:
        g2 = gs[2]
        d_gg = (-1.0 / gp1**2 - 2.0 * t * g
                - 2.0 * gp1 * (5.0 * gamma + 3.0) * t**2 * g1
                - gp1**2 * (2.0 * gamma + 1.0) ** 2 * t**3 * g2)
        d_gt = gp1 * t / W**2 * (2.0 * W - gp1 * (2.0 * gamma + 1.0) * t)
        d_tt = -gp1**2 * t / W**2
        res["d_gg"] = np.where(ok, d_gg, 0.0)
        res["d_gt"] = np.where(ok, d_gt, 0.0)
        res["d_tt"] = np.where(ok, d_tt, 0.0)
    return res


def log_density(y, p: GpdParams) -> float:
    """Log density of one exceedance ``y > 0``.

    Raises :class:`DomainError` when ``y`` is past the finite upper endpoint
    (``gamma < 0``).
    """
    if not y > 0:
        raise ValueError(f"exceedance must be positive, got {y}")
    if y >= p.upper_endpoint:
        raise DomainError(f"y={y} is beyond the upper endpoint {p.upper_endpoint}")
    return float(_pointwise(y, p.gamma, p.sigma)["logh"])


def logpdf(y, gamma, sigma) -> np.ndarray:
    """Vectorized log density; ``-inf`` outside the support."""
    return _pointwise(y, gamma, sigma)["logh"]


def score(y, gamma, sigma):
    """Per-point derivatives of ``log h`` with respect to ``gamma`` and ``sigma``."""
    r = _pointwise(y, gamma, sigma, order=1)
    return r["d_gamma"], r["d_theta"] / np.asarray(sigma, dtype=float)


def hessian_logdensity(y, gamma, sigma):
    """Per-point second derivatives of ``log h`` in (gamma, sigma).

    Returns ``(d2/dgamma2, d2/dgamma dsigma, d2/dsigma2)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    r = _pointwise(y, gamma, sigma, order=2)
    # theta = log sigma: d/dsigma = (1/sigma) d/dtheta,
    # d2/dsigma2 = (d_tt - d_theta) / sigma^2
    return r["d_gg"], r["d_gt"] / sigma, (r["d_tt"] - r["d_theta"]) / sigma**2


def _as_arrays(data: ExceedanceData, gamma, sigma):
    J = data.n_clusters
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (J,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (J,))
    return gamma, sigma


def params_to_arrays(params: Sequence[GpdParams]):
    return (np.array([p.gamma for p in params], dtype=float),
            np.array([p.sigma for p in params], dtype=float))


def cluster_neg_loglik(data: ExceedanceData, gamma, sigma) -> np.ndarray:
    """Per-cluster negative log-likelihood (``inf`` when out of domain)."""
    gamma, sigma = _as_arrays(data, gamma, sigma)
    J = data.n_clusters
    if len(data.y) == 0:
        return np.zeros(J)
    logh = logpdf(data.y, gamma[data.index], sigma[data.index])
    bad = np.bincount(data.index, weights=~np.isfinite(logh), minlength=J) > 0
    out = -np.bincount(data.index, weights=np.where(np.isfinite(logh), logh, 0.0), minlength=J)
    out[bad] = np.inf
    return out


def neg_loglik(data: ExceedanceData, gamma, sigma) -> float:
    """Negative log-likelihood summed over all clusters.

    ``gamma``/``sigma`` are per-cluster arrays (or a list of :class:`GpdParams`
    passed as ``gamma`` with ``sigma=None``). Raises :class:`DomainError` if any
    exceedance is outside its cluster's support.
    """
    if sigma is None:
        gamma, sigma = params_to_arrays(gamma)
    vals = cluster_neg_loglik(data, gamma, sigma)
    if not np.all(np.isfinite(vals)):
        raise DomainError("an exceedance lies beyond its cluster's upper endpoint")
    return float(vals.sum())


def grad_neg_loglik(data: ExceedanceData, gamma, sigma):
    """Analytic gradient of :func:`neg_loglik`; returns ``(d/dgamma, d/dsigma)`` arrays."""
    if sigma is None:
        gamma, sigma = params_to_arrays(gamma)
    gamma, sigma = _as_arrays(data, gamma, sigma)
    J = data.n_clusters
    if len(data.y) == 0:
        return np.zeros(J), np.zeros(J)
    neg_loglik(data, gamma, sigma)  # domain check
    dg, ds = score(data.y, gamma[data.index], sigma[data.index])
    return (-np.bincount(data.index, weights=dg, minlength=J),
            -np.bincount(data.index, weights=ds, minlength=J))


def fisher_info(p: GpdParams) -> FisherInfo:
    """Per-observation expected information for (gamma, sigma).

    The sigma-sigma entry is ``1 / (sigma^2 (2 gamma + 1))``; it is what makes
    ``Var(sigma_hat / sigma) ~ (2 gamma + 1) / n``.
    """
    g, s = p.gamma, p.sigma
    return FisherInfo(1.0 / (g + 1.0) ** 2, 0.0, 1.0 / (s**2 * (2.0 * g + 1.0)))


# --------------------------------------------------------------------------
# Quantile / sampling helpers shared by inference and simulation


def survival(y, gamma, sigma) -> np.ndarray:
    """``P(Y > y)`` for ``y >= 0``; zero past the upper endpoint."""
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gp1 = gamma + 1.0
    t = np.maximum(y, 0.0) / sigma
    z = gamma * gp1 * t
    ok = z > -1.0
    g = _g_funcs(np.where(ok, z, 0.0))[0]
    return np.where(ok, np.exp(-gp1 * t * g), 0.0)


def _exprel(x):
    # expm1(x)/x, with exprel(0) = 1
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0, np.expm1(xs) / xs)


def quantile_from_survival(q, gamma, sigma) -> np.ndarray:
    """Exceedance level ``y`` with ``P(Y > y) = q``.

    ``y = sigma / (gamma (gamma + 1)) * (q**(-gamma) - 1)``, written as
    ``sigma / (gamma + 1) * L * exprel(gamma L)`` with ``L = -log q`` so it is
    continuous through ``gamma = 0``.
    """
    q = np.asarray(q, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    L = -np.log(q)
    return np.asarray(sigma) / (gamma + 1.0) * L * _exprel(gamma * L)


def cdf(y, gamma, sigma):
    return 1.0 - survival(y, gamma, sigma)


def ppf(p, gamma, sigma):
    return quantile_from_survival(1.0 - np.asarray(p, dtype=float), gamma, sigma)


def sample(rng: np.random.Generator, size, gamma, sigma) -> np.ndarray:
    """Draw exceedances by inversion of a uniform survival probability."""
    q = rng.uniform(size=size)
    q = np.where(q == 0.0, np.finfo(float).tiny, q)
    return quantile_from_survival(q, gamma, sigma)
