"""Two-angle parameterization of length-6 orthogonal wavelet filters.

Every real pair (alpha, beta) yields a lowpass filter ``h`` with

    sum(h) = sqrt(2),   sum(h**2) = 1,   h0*h2 + h2*h4 + h1*h3 + h3*h5 = 0,

so the pair can be trained freely by gradient descent without leaving the
family of orthonormal filter banks. The highpass filter is the alternating
flip ``g[n] = (-1)**n * h[5 - n]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import InvalidParameterError, NoFitError

FILTER_LENGTH = 6
SQRT2 = math.sqrt(2.0)

_FLIP_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


@dataclass(frozen=True)
class WaveletParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidParameterError(
                f"wavelet angles must be finite, got alpha={self.alpha!r}, beta={self.beta!r}"
            )


@dataclass(frozen=True)
class FilterPair:
    lowpass: np.ndarray
    highpass: np.ndarray


@dataclass(frozen=True)
class FilterGradients:
    """Partial derivatives of the lowpass taps.

    The highpass derivatives are ``alternating_flip`` of these arrays.
    """

    d_lowpass_d_alpha: np.ndarray
    d_lowpass_d_beta: np.ndarray


@dataclass(frozen=True)
class ConditionReport:
    sum_residual: float
    norm_residual: float
    shift2_residual: float
    passed: bool

    @property
    def residuals(self) -> tuple[float, float, float]:
        return (self.sum_residual, self.norm_residual, self.shift2_residual)


def _as_params(params) -> WaveletParams:
    if isinstance(params, WaveletParams):
        return params
    alpha, beta = params
    return WaveletParams(float(alpha), float(beta))


def alternating_flip(h: np.ndarray) -> np.ndarray:
    """Return ``g[n] = (-1)**n * h[5 - n]`` along the first axis."""
    h = np.asarray(h, dtype=np.float64)
    signs = _FLIP_SIGNS.reshape((FILTER_LENGTH,) + (1,) * (h.ndim - 1))
    return signs * h[::-1]


def lowpass_taps(alpha, beta) -> np.ndarray:
    """Vectorized lowpass construction; returns shape ``(6,) + broadcast(alpha, beta).shape``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cd, sd = np.cos(alpha - beta), np.sin(alpha - beta)

    h0 = ((1 + ca + sa) * (1 - cb - sb) + 2 * sb * ca) / (4 * SQRT2)
    h1 = ((1 - ca + sa) * (1 + cb - sb) - 2 * sb * ca) / (4 * SQRT2)
    h2 = (1 + cd + sd) / (2 * SQRT2)
    h3 = (1 + cd - sd) / (2 * SQRT2)
    h4 = 1 / SQRT2 - h0 - h2
    h5 = 1 / SQRT2 - h1 - h3
    return np.stack(np.broadcast_arrays(h0, h1, h2, h3, h4, h5))


def lowpass_gradients(alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized d(lowpass)/d(alpha) and d(lowpass)/d(beta)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cd, sd = np.cos(alpha - beta), np.sin(alpha - beta)

    d0a = ((ca - sa) * (1 - cb - sb) - 2 * sb * sa) / (4 * SQRT2)
    d0b = ((1 + ca + sa) * (sb - cb) + 2 * cb * ca) / (4 * SQRT2)
    d1a = ((sa + ca) * (1 + cb - sb) + 2 * sb * sa) / (4 * SQRT2)
    d1b = (-(1 - ca + sa) * (sb + cb) - 2 * cb * ca) / (4 * SQRT2)
    d2a = (cd - sd) / (2 * SQRT2)
    d3a = -(sd + cd) / (2 * SQRT2)
    d2b, d3b = -d2a, -d3a

    da = np.stack(np.broadcast_arrays(d0a, d1a, d2a, d3a, -d0a - d2a, -d1a - d3a))
    db = np.stack(np.broadcast_arrays(d0b, d1b, d2b, d3b, -d0b - d2b, -d1b - d3b))
    return da, db


def make_filters(params: WaveletParams | tuple[float, float]) -> FilterPair:
    p = _as_params(params)
    h = lowpass_taps(p.alpha, p.beta)
    return FilterPair(lowpass=h, highpass=alternating_flip(h))


def filter_gradients(params: WaveletParams | tuple[float, float]) -> FilterGradients:
    p = _as_params(params)
    da, db = lowpass_gradients(p.alpha, p.beta)
    return FilterGradients(d_lowpass_d_alpha=da, d_lowpass_d_beta=db)


def qmf_residuals(h: np.ndarray) -> tuple[float, float, float]:
    h = np.asarray(h, dtype=np.float64)
    return (
        float(h.sum() - SQRT2),
        float(np.dot(h, h) - 1.0),
        float(h[0] * h[2] + h[2] * h[4] + h[1] * h[3] + h[3] * h[5]),
    )


def check_qmf(filters: FilterPair, tol: float = 1e-10) -> ConditionReport:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    r = qmf_residuals(filters.lowpass)
    return ConditionReport(*r, passed=all(abs(x) <= tol for x in r))


def fit_params_to_filter(
    target, restarts: int = 16, seed: int = 0
) -> tuple[WaveletParams, float]:
    """Find (alpha, beta) whose lowpass filter is closest to ``target``.

    Multi-start Levenberg-Marquardt over the angle pair. The returned residual
    is the Euclidean distance between the fitted and target taps; angles are
    reduced to ``[0, 2*pi)``.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (FILTER_LENGTH,):
        raise ValueError(f"target must have {FILTER_LENGTH} taps, got shape {target.shape}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    def resid(p):
        return lowpass_taps(p[0], p[1]) - target

    def jac(p):
        da, db = lowpass_gradients(p[0], p[1])
        return np.stack([da, db], axis=1)

    starts = np.random.default_rng(seed).uniform(0.0, 2 * math.pi, size=(restarts, 2))
    best_x, best_r = None, math.inf
    for x0 in starts:
        sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        r = float(np.linalg.norm(sol.fun))
        if r < best_r:
            best_x, best_r = sol.x, r
        if best_r < 1e-14:
            break

    if best_r > 1e-4:
        raise NoFitError(f"no angle pair reproduces the target (best residual {best_r:.3g})", best_r)
    alpha, beta = np.mod(best_x, 2 * math.pi)
    return WaveletParams(float(alpha), float(beta)), best_r
