"""Dense channels-first feature maps and the few primitives the operators need.

Feature maps are plain ``numpy`` arrays of shape ``(C, H, W)``, row-major,
float64 unless the caller asks for float32.
"""

import numpy as np

DEFAULT_DTYPE = np.float64


def as_tensor(x, dtype=None):
    """Return ``x`` as a contiguous float array, rejecting zero extents."""
    arr = np.ascontiguousarray(x, dtype=dtype or DEFAULT_DTYPE)
    if arr.ndim == 0:
        raise ValueError("tensor must have rank >= 1")
    if any(n < 1 for n in arr.shape):
        raise ValueError(f"zero-extent tensor rejected: shape {arr.shape}")
    return arr


def as_feature_map(x, dtype=None):
    arr = as_tensor(x, dtype=dtype if dtype is not None else getattr(x, "dtype", None))
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    if arr.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got shape {arr.shape}")
    return arr


def pad_replicate(x, margin):
    """Pad the spatial axes by ``margin`` pixels, clamping to the nearest edge."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    x = as_feature_map(x)
    if margin == 0:
        return x.copy()
    return np.pad(x, ((0, 0), (margin, margin), (margin, margin)), mode="edge")


def crop(x, margin):
    if margin == 0:
        return x
    return x[:, margin:-margin, margin:-margin]


def pad_replicate_backward(grad, margin):
    """Fold the gradient of a replicate-padded map back onto the original grid."""
    if margin == 0:
        return grad.copy()
    g = grad.copy()
    # rows first, then columns; clamped samples accumulate onto the edge
    g[:, margin, :] += g[:, :margin, :].sum(axis=1)
    g[:, -margin - 1, :] += g[:, -margin:, :].sum(axis=1)
    g = g[:, margin:-margin, :]
    g[:, :, margin] += g[:, :, :margin].sum(axis=2)
    g[:, :, -margin - 1] += g[:, :, -margin:].sum(axis=2)
    return np.ascontiguousarray(g[:, :, margin:-margin])


def _linear_taps(n_in, n_out):
    """Source indices and weights for 1-D half-pixel-center linear resampling."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(x, out_h, out_w):
    """Upsample ``x`` to ``(out_h, out_w)`` with half-pixel-center bilinear sampling.

    Source coordinate is ``(dst + 0.5) * in / out - 0.5`` clamped to the valid
    range. Downsampling is rejected.
    """
    x = as_feature_map(x)
    _, h, w = x.shape
    if out_h < h or out_w < w:
        raise ValueError(f"bilinear_upsample cannot downsample {(h, w)} -> {(out_h, out_w)}")
    if (out_h, out_w) == (h, w):
        return x.copy()
    r0, r1, fy = _linear_taps(h, out_h)
    c0, c1, fx = _linear_taps(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = x[:, r0][:, :, c0] * (1.0 - fx) + x[:, r0][:, :, c1] * fx
    bottom = x[:, r1][:, :, c0] * (1.0 - fx) + x[:, r1][:, :, c1] * fx
    return (top * (1.0 - fy) + bottom * fy).astype(x.dtype, copy=False)


def bilinear_upsample_backward(grad, in_h, in_w):
    """Adjoint of :func:`bilinear_upsample` for a map of spatial size ``(in_h, in_w)``."""
    c, out_h, out_w = grad.shape
    if (out_h, out_w) == (in_h, in_w):
        return grad.copy()
    r0, r1, fy = _linear_taps(in_h, out_h)
    c0, c1, fx = _linear_taps(in_w, out_w)
    # separable: columns then rows, each a fixed-order scatter-add
    cols = np.zeros((c, out_h, in_w), dtype=grad.dtype)
    np.add.at(cols, (slice(None), slice(None), c0), grad * (1.0 - fx))
    np.add.at(cols, (slice(None), slice(None), c1), grad * fx)
    out = np.zeros((c, in_h, in_w), dtype=grad.dtype)
    np.add.at(out, (slice(None), r0), cols * (1.0 - fy)[:, None])
    np.add.at(out, (slice(None), r1), cols * fy[:, None])
    return out


def match_extent(x, h, w):
    """Upsample ``x`` to ``(h, w)`` if it is smaller; pass it through otherwise."""
    if x.shape[1:] == (h, w):
        return x
    return bilinear_upsample(x, h, w)


def concat_channels(a, b):
    a = as_feature_map(a)
    b = as_feature_map(b)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(
            f"spatial mismatch {a.shape[1:]} vs {b.shape[1:]}; upsample the smaller map first"
        )
    return np.concatenate([a, b], axis=0)
