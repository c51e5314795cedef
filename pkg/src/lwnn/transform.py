"""Single-level separable 2D DWT with periodic boundaries.

Along one axis of even length ``n`` the analysis step is a square matrix
``M`` whose first ``n/2`` rows hold the lowpass filter and whose last ``n/2``
rows hold the highpass filter, each shifted by two per row and wrapped
circularly: output ``k`` reads input samples ``2k .. 2k+5 (mod n)``. For an
orthonormal filter pair ``M`` is orthogonal, so synthesis and the adjoint are
both ``M.T``. Odd axes are zero-padded by one trailing sample first.

The batched routines work on ``(batch, height, width, channels)`` arrays and
emit ``4 * channels`` output channels ordered ``(A, H, V, D)`` per input
channel, with input channels outermost. ``H`` is highpass along the height
axis, ``V`` highpass along the width axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .filters import FILTER_LENGTH, FilterGradients, FilterPair, alternating_flip

SUBBAND_NAMES = ("A", "H", "V", "D")


@dataclass(frozen=True)
class Subbands:
    approx: np.ndarray
    horiz: np.ndarray
    vert: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        shapes = {b.shape for b in self.bands}
        if len(shapes) != 1:
            raise DimensionError(f"subband shapes differ: {sorted(shapes)}")
        if self.approx.ndim != 2:
            raise DimensionError(f"subbands must be 2D planes, got shape {self.approx.shape}")

    @property
    def bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.approx, self.horiz, self.vert, self.diag)

    @property
    def shape(self) -> tuple[int, int]:
        return self.approx.shape

    def energy(self) -> float:
        return float(sum(np.sum(b * b) for b in self.bands))


@lru_cache(maxsize=None)
def _tap_columns(n: int) -> np.ndarray:
    k = np.arange(n // 2)[:, None]
    j = np.arange(FILTER_LENGTH)[None, :]
    return (2 * k + j) % n


def analysis_matrix(lowpass: np.ndarray, n: int) -> np.ndarray:
    """Periodic one-level analysis matrix of shape ``(n, n)`` for even ``n``.

    Linear in ``lowpass``, so passing a tap derivative gives the derivative
    of the matrix.
    """
    if n < 2 or n % 2:
        raise DimensionError(f"analysis length must be even and >= 2, got {n}")
    lowpass = np.asarray(lowpass, dtype=np.float64)
    highpass = alternating_flip(lowpass)
    half = n // 2
    cols = _tap_columns(n)
    rows = np.broadcast_to(np.arange(half)[:, None], cols.shape)
    m = np.zeros((n, n))
    np.add.at(m, (rows, cols), np.broadcast_to(lowpass, cols.shape))
    np.add.at(m, (rows + half, cols), np.broadcast_to(highpass, cols.shape))
    return m


def padded_size(n: int) -> int:
    return n + (n % 2)


def output_size(n: int) -> int:
    return padded_size(n) // 2


class AnalysisCache(NamedTuple):
    x: np.ndarray  # zero-padded input, (B, Hp, Wp, C)
    rows_done: np.ndarray  # height pass result, (Hp, B, Wp, C)
    mh: np.ndarray
    mw: np.ndarray
    in_shape: tuple[int, ...]


def _pad_even(x: np.ndarray) -> np.ndarray:
    ph, pw = x.shape[1] % 2, x.shape[2] % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)))
    return x


def analyze(x: np.ndarray, lowpass: np.ndarray) -> tuple[np.ndarray, AnalysisCache]:
    """Batched forward DWT: ``(B, H, W, C) -> (B, ceil(H/2), ceil(W/2), 4C)``."""
    if x.ndim != 4:
        raise DimensionError(f"expected (batch, height, width, channels), got shape {x.shape}")
    b, h, w, c = x.shape
    if min(h, w, c) == 0:
        raise DimensionError(f"cannot decompose an empty plane of shape {x.shape}")
    xp = _pad_even(np.asarray(x, dtype=np.float64))
    hp, wp = xp.shape[1], xp.shape[2]
    mh = analysis_matrix(lowpass, hp)
    mw = mh if wp == hp else analysis_matrix(lowpass, wp)

    u = np.tensordot(mh, xp, axes=(1, 1))  # (Hp, B, Wp, C)
    y = np.tensordot(mw, u, axes=(1, 2))  # (Wp, Hp, B, C)
    kh, kw = hp // 2, wp // 2
    # (wb, kw, hb, kh, B, C) -> (B, kh, kw, C, wb, hb); subband index = hb + 2*wb
    y = y.reshape(2, kw, 2, kh, b, c).transpose(4, 3, 1, 5, 0, 2).reshape(b, kh, kw, 4 * c)
    return y, AnalysisCache(xp, u, mh, mw, x.shape)


def _to_internal(dy: np.ndarray) -> np.ndarray:
    b, kh, kw, c4 = dy.shape
    c = c4 // 4
    return dy.reshape(b, kh, kw, c, 2, 2).transpose(4, 2, 5, 1, 0, 3).reshape(2 * kw, 2 * kh, b, c)


def _adjoint(dyt: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dz = np.tensordot(mw, dyt, axes=(0, 0))  # (Wp, Hp', B, C)
    dx = np.tensordot(mh, dz, axes=(0, 1))  # (Hp, Wp, B, C)
    return dx.transpose(2, 0, 1, 3), dz


def analyze_backward(
    dy: np.ndarray, cache: AnalysisCache, d_lowpass: tuple[np.ndarray, ...] = ()
) -> tuple[np.ndarray, list[float]]:
    """Adjoint of :func:`analyze` plus directional derivatives.

    Returns the input gradient (cropped to the unpadded input shape) and, for
    each tap direction in ``d_lowpass``, the inner product of ``dy`` with the
    derivative of the forward output along that direction.
    """
    dy = np.asarray(dy, dtype=np.float64)
    b, hp, wp, c = cache.x.shape
    expected = (b, hp // 2, wp // 2, 4 * c)
    if dy.shape != expected:
        raise DimensionError(f"gradient shape {dy.shape} does not match forward output {expected}")
    dyt = _to_internal(dy)
    dx, dz = _adjoint(dyt, cache.mh, cache.mw)
    _, h, w, _ = cache.in_shape
    dx = dx[:, :h, :w, :]

    out = []
    if d_lowpass:
        g_mh = np.tensordot(dz, cache.x, axes=([0, 2, 3], [2, 0, 3]))  # (Hp', Hp)
        g_mw = np.tensordot(dyt, cache.rows_done, axes=([1, 2, 3], [0, 1, 3]))  # (Wp', Wp)
        for d in d_lowpass:
            out.append(
                float(np.vdot(g_mh, analysis_matrix(d, hp)) + np.vdot(g_mw, analysis_matrix(d, wp)))
            )
    return np.ascontiguousarray(dx), out


def synthesize(y: np.ndarray, lowpass: np.ndarray) -> np.ndarray:
    """Batched inverse DWT: ``(B, K, L, 4C) -> (B, 2K, 2L, C)``."""
    if y.ndim != 4 or y.shape[3] % 4:
        raise DimensionError(f"expected (batch, k, l, 4*channels), got shape {y.shape}")
    b, kh, kw, c4 = y.shape
    if min(kh, kw) == 0:
        raise DimensionError(f"cannot reconstruct from empty subbands of shape {y.shape}")
    mh = analysis_matrix(lowpass, 2 * kh)
    mw = mh if kw == kh else analysis_matrix(lowpass, 2 * kw)
    dx, _ = _adjoint(_to_internal(np.asarray(y, dtype=np.float64)), mh, mw)
    return np.ascontiguousarray(dx)


# Single-plane interface


def _check_plane(plane) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise DimensionError(f"expected a 2D plane, got shape {plane.shape}")
    if plane.size == 0:
        raise DimensionError(f"cannot decompose an empty plane of shape {plane.shape}")
    return plane


def dwt2_forward(plane, filters: FilterPair) -> Subbands:
    x = _check_plane(plane)
    y, _ = analyze(x[None, :, :, None], filters.lowpass)
    return Subbands(*(y[0, :, :, s].copy() for s in range(4)))


def _stack(subbands: Subbands) -> np.ndarray:
    return np.stack(subbands.bands, axis=-1)[None]


def dwt2_inverse(subbands: Subbands, filters: FilterPair) -> np.ndarray:
    return synthesize(_stack(subbands), filters.lowpass)[0, :, :, 0]


def dwt2_backward(
    grad_out: Subbands, input, filters: FilterPair, fgrads: FilterGradients
) -> tuple[np.ndarray, float, float]:
    x = _check_plane(input)
    _, cache = analyze(x[None, :, :, None], filters.lowpass)
    dx, (ga, gb) = analyze_backward(
        _stack(grad_out), cache, (fgrads.d_lowpass_d_alpha, fgrads.d_lowpass_d_beta)
    )
    return dx[0, :, :, 0], ga, gb
