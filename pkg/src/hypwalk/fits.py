"""Log-scale least-squares fits shared by the asymptotic checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError


@dataclass
class FitResult:
    exponent: float
    amplitude: float
    residual: float
    grid: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return clean({"exponent": self.exponent, "amplitude": self.amplitude,
                      "residual": self.residual, "grid": self.grid,
                      "diagnostics": self.diagnostics})


def loglog_fit(x, y, min_points: int = 3):
    """Ordinary least squares of log y on log x. Returns slope, intercept, RMS residual."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < min_points:
        raise InsufficientDataError(f"need at least {min_points} points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    A = np.column_stack([np.ones_like(x), np.log(x)])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    return float(coef[1]), float(coef[0]), float(math.sqrt(np.mean(resid ** 2)))


def branch_fit(eps, y, corrections: int = 3, min_points: int = 6):
    """Fit log y = c + beta log eps + sum_k d_k eps^(k/2).

    The half-integer powers are the analytic corrections carried by a
    square-root branch point; without them a dyadic grid reaching only
    eps ~ 2^-4 R biases the slope by about 0.1.
    Returns (beta, exp(c), rms residual, coefficients).
    """
    eps = np.asarray(eps, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(eps) < max(min_points, corrections + 3):
        raise InsufficientDataError("too few grid points for the requested corrections")
    cols = [np.ones_like(eps), np.log(eps)] + [eps ** (k / 2) for k in range(1, corrections + 1)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    return float(coef[1]), float(math.exp(coef[0])), float(math.sqrt(np.mean(resid ** 2))), coef


def dyadic_grid(R: float, j_lo: int, j_hi: int) -> np.ndarray:
    return np.array([R * (1 - 2.0 ** (-j)) for j in range(j_lo, j_hi + 1)])
