"""Small statistical helpers shared by the experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass
class ScalingFit:
    """Result of fitting ``y ~ C * n**exponent`` on a log-log scale."""

    exponent: float
    stderr: float
    prefactor: float
    residual: float
    points: tuple = ()  # (log n, log y, sigma of log y) per point

    @property
    def slope(self) -> float:
        return self.exponent

    @property
    def intercept(self) -> float:
        return float(np.log(self.prefactor))

    def ci(self, level: float = 0.95) -> tuple:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.exponent - z * self.stderr, self.exponent + z * self.stderr


def fit_power_law(n, y, yerr=None) -> ScalingFit:
    """Weighted least squares of ``log y`` on ``log n``.

    ``yerr`` are standard errors of ``y``; they become ``yerr / y`` on the
    log scale. The reported standard error is the larger of the
    weight-based one and the residual-scaled one.
    """
    n = np.asarray(n, float)
    y = np.asarray(y, float)
    if np.any(y <= 0) or np.any(n <= 0):
        raise ValueError("power-law fit needs positive data")
    ly, lx = np.log(y), np.log(n)
    if yerr is None:
        w = np.ones_like(ly)
    else:
        s = np.asarray(yerr, float) / y
        w = 1.0 / np.maximum(s, 1e-12) ** 2
    X = np.vstack([np.ones_like(lx), lx]).T
    WX = X * w[:, None]
    cov = np.linalg.inv(X.T @ WX)
    coef = cov @ (WX.T @ ly)
    res = ly - X @ coef
    chi2 = float(np.sum(w * res**2))
    dof = len(lx) - 2
    scale = max(1.0, chi2 / dof) if dof > 0 else 1.0
    se = float(np.sqrt(cov[1, 1] * scale))
    pts = tuple(zip(lx.tolist(), ly.tolist(), (1.0 / np.sqrt(w)).tolist()))
    return ScalingFit(float(coef[1]), se, float(np.exp(coef[0])), chi2, pts)


def batch_stderr(x, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, float)
    k = min(n_batches, len(x))
    if k < 2:
        return float("nan")
    b = np.array([c.mean() for c in np.array_split(x, k)])
    return float(b.std(ddof=1) / np.sqrt(k))


def binomial_stderr(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1 - p), 0.0) / max(n, 1)))


def mean_stderr(x) -> tuple:
    x = np.asarray(x, float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
