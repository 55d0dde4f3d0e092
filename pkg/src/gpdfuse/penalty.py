"""Edge weights for the fused shape penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

KINDS = ("uniform", "adaptive", "scad_deriv", "mcp_deriv")
ADAPTIVE_EPS = 1e-8
DEFAULT_A = {"scad_deriv": 3.7, "mcp_deriv": 3.0}


@dataclass(frozen=True)
class WeightSpec:
    """How edge weights are derived from initial shape differences.

    ``lam`` is the threshold scale of the folded-concave weights. When it is
    ``None`` the threshold is tied to the penalty level of the fit:
    ``lam = penalty_lambda / mean(n_j)``, which matches the ``n * lambda``
    scaling of the penalty against a summed likelihood.
    """

    kind: str = "scad_deriv"
    a: Optional[float] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "scad_deriv" and not self.concavity > 2:
            raise ValueError("SCAD weights need a > 2")
        if self.kind == "mcp_deriv" and not self.concavity > 1:
            raise ValueError("MCP weights need a > 1")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def concavity(self) -> float:
        return self.a if self.a is not None else DEFAULT_A.get(self.kind, np.nan)

    @property
    def lambda_dependent(self) -> bool:
        return self.kind in ("scad_deriv", "mcp_deriv") and self.lam is None

    def resolve(self, penalty_lambda: float, mean_n: float) -> "WeightSpec":
        """Fix the threshold scale for one penalty level."""
        if not self.lambda_dependent:
            return self
        lam = penalty_lambda / mean_n
        return WeightSpec(self.kind, self.a, lam if lam > 0 else np.finfo(float).tiny)


def weight(spec: WeightSpec, t):
    """Weight for absolute initial-estimate differences ``t >= 0`` (vectorized)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if spec.kind == "uniform":
        return np.ones_like(t)
    if spec.kind == "adaptive":
        return 1.0 / np.maximum(t, ADAPTIVE_EPS)
    if spec.lam is None:
        raise ValueError("threshold scale lam must be set; call spec.resolve(...) first")
    a, lam = spec.concavity, spec.lam
    if spec.kind == "mcp_deriv":
        return np.maximum(0.0, 1.0 - t / (a * lam))
    # SCAD derivative divided by lam so it equals 1 below lam and is continuous
    mid = (a * lam - t) / ((a - 1.0) * lam)
    return np.where(t < lam, 1.0, np.where(t < a * lam, mid, 0.0))
