"""Neighborhood operators: vanilla convolution, central difference convolution
(CDC) and semantic difference convolution (SDC).

All three are cross-correlations over an ``h x w`` window with optional
dilation and replicate padding, so output extents equal input extents
(vanilla convolution additionally allows stride 2). Per output pixel the sum
runs over taps in row-major order, then over input channels.
"""

from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusivityConfig, diffusivity
from .parallel import for_row_blocks
from .tensor import as_feature_map, pad_replicate


@dataclass
class SdcKernel:
    """Weights ``(C_out, C_in, h, w)`` plus tap geometry and the similarity scale."""

    weights: np.ndarray
    dilation: int = 1
    lam: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError(f"kernel weights must be (C_out, C_in, h, w), got {self.weights.shape}")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def c_out(self):
        return self.weights.shape[0]

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def size(self):
        return self.weights.shape[2:]

    @property
    def margins(self):
        kh, kw = self.size
        return (kh // 2) * self.dilation, (kw // 2) * self.dilation

    def with_weights(self, weights):
        return SdcKernel(weights, self.dilation, self.lam)


def tap_offsets(k):
    """Row-major ``(index, dy, dx)`` for every tap of ``k``."""
    kh, kw = k.size
    out = []
    for a in range(kh):
        for b in range(kw):
            out.append(((a, b), (a - kh // 2) * k.dilation, (b - kw // 2) * k.dilation))
    return out


def _check_channels(x, k):
    if x.shape[0] != k.c_in:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {k.c_in}")


def _contract(w_tap, x):
    """``sum_ci w_tap[:, ci] * x[ci]``, accumulated over ``ci`` in index order.

    Reducing a non-innermost axis makes numpy add whole slices sequentially,
    so each pixel's sum does not depend on how many rows ``x`` holds.
    """
    if w_tap.shape[1] == 1:
        return w_tap[:, 0, None, None] * x[0]
    return np.sum(w_tap[:, :, None, None] * x[None], axis=1)


def output_extent(n, stride):
    return -(-n // stride)


def conv2d(x, k, stride=1):
    """Plain cross-correlation of ``x`` with ``k.weights``; stride 1 or 2."""
    x = as_feature_map(x)
    _check_channels(x, k)
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    ph, pw = k.margins
    m = max(ph, pw)
    xp = pad_replicate(x, m)
    _, H, W = x.shape
    Ho, Wo = output_extent(H, stride), output_extent(W, stride)
    out = np.zeros((k.c_out, Ho, Wo), dtype=x.dtype)
    taps = tap_offsets(k)
    w = k.weights

    def rows(r0, r1):
        acc = np.zeros((k.c_out, r1 - r0, Wo), dtype=x.dtype)
        for (a, b), dy, dx in taps:
            y0 = m + r0 * stride + dy
            x0 = m + dx
            xn = xp[:, y0:y0 + (r1 - r0 - 1) * stride + 1:stride, x0:x0 + (Wo - 1) * stride + 1:stride]
            acc += _contract(w[:, :, a, b], xn)
        out[:, r0:r1] = acc

    for_row_blocks(rows, Ho)
    return out


def semantic_similarity(va, vb, lam):
    """Guidance similarity ``g(mean_c (va_c - vb_c)**2)``, in (0, 1]."""
    va = np.asarray(va, dtype=np.float64)
    vb = np.asarray(vb, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"guidance vectors differ in length: {va.shape} vs {vb.shape}")
    return diffusivity(np.mean((va - vb) ** 2), DiffusivityConfig(lam))


def similarity_fields(V, k):
    """Per-tap similarity maps ``S[t, m, n]`` between each pixel and its tap-``t`` neighbor.

    One field is shared by all input and output channels.
    """
    V = as_feature_map(V)
    ph, pw = k.margins
    m = max(ph, pw)
    vp = pad_replicate(V, m)
    _, H, W = V.shape
    vc = vp[:, m:m + H, m:m + W]
    cfg = DiffusivityConfig(k.lam)
    fields = np.empty((len(tap_offsets(k)), H, W), dtype=V.dtype)
    for t, (_, dy, dx) in enumerate(tap_offsets(k)):
        vn = vp[:, m + dy:m + dy + H, m + dx:m + dx + W]
        fields[t] = diffusivity(np.mean((vn - vc) ** 2, axis=0), cfg)
    return fields


def _difference_conv(U, k, S=None):
    U = as_feature_map(U)
    _check_channels(U, k)
    ph, pw = k.margins
    m = max(ph, pw)
    up = pad_replicate(U, m)
    _, H, W = U.shape
    out = np.zeros((k.c_out, H, W), dtype=U.dtype)
    taps = tap_offsets(k)
    w = k.weights

    def rows(r0, r1):
        uc = up[:, m + r0:m + r1, m:m + W]
        acc = np.zeros((k.c_out, r1 - r0, W), dtype=U.dtype)
        for t, ((a, b), dy, dx) in enumerate(taps):
            d = up[:, m + r0 + dy:m + r1 + dy, m + dx:m + dx + W] - uc
            if S is not None:
                d = S[t, r0:r1] * d
            acc += _contract(w[:, :, a, b], d)
        out[:, r0:r1] = acc

    for_row_blocks(rows, H)
    return out


def cdc2d(x, k):
    """Central difference convolution: weights applied to ``x(q) - x(center)``."""
    return _difference_conv(x, k)


def sdc2d(U, V, k):
    """Semantic difference convolution.

    ``Y(p) = sum_q W(q) * S(V(q), V(p)) * (U(q) - U(p))`` with ``S`` the
    guidance similarity. ``V`` must already share ``U``'s spatial extents.
    """
    U = as_feature_map(U)
    V = as_feature_map(V)
    if U.shape[1:] != V.shape[1:]:
        raise ValueError(f"U and V spatial extents differ: {U.shape[1:]} vs {V.shape[1:]}")
    return _difference_conv(U, k, similarity_fields(V, k))


def flop_estimate(H, W, h, w, c_in, c_out, c_f):
    """Leading-order operation count ``H*W*h*w*(C_in*C_out + C_f)`` of one SDC."""
    return H * W * h * w * (c_in * c_out + c_f)
