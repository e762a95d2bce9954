"""The SDN block: semantic difference convolution followed by 1x1 fusion, plus
guidance construction for single-scale and multi-scale necks.
"""

from dataclasses import dataclass

import numpy as np

from .gradients import conv2d_backward, sdc2d_backward
from .operators import SdcKernel, conv2d, sdc2d
from .tensor import (
    as_feature_map,
    bilinear_upsample,
    bilinear_upsample_backward,
    concat_channels,
    match_extent,
)


@dataclass
class SdnParams:
    sdc: SdcKernel
    fusion_weights: np.ndarray
    phi_weights: np.ndarray | None = None

    def __post_init__(self):
        self.fusion_weights = np.asarray(self.fusion_weights, dtype=np.float64)
        if self.fusion_weights.ndim == 2:
            self.fusion_weights = self.fusion_weights[:, :, None, None]
        if self.fusion_weights.shape[2:] != (1, 1):
            raise ValueError("fusion weights must be a 1x1 kernel")
        expected = self.sdc.c_in + self.sdc.c_out
        if self.fusion_weights.shape[1] != expected:
            raise ValueError(
                f"fusion expects {self.fusion_weights.shape[1]} input channels, "
                f"but U + Y carry {expected}"
            )
        if self.phi_weights is not None:
            self.phi_weights = np.asarray(self.phi_weights, dtype=np.float64)
            if self.phi_weights.shape[2:] != (3, 3):
                raise ValueError("guidance projection must be a 3x3 kernel")

    @property
    def fusion_kernel(self):
        return SdcKernel(self.fusion_weights)

    @property
    def phi_kernel(self):
        if self.phi_weights is None:
            raise ValueError("these parameters carry no guidance projection")
        return SdcKernel(self.phi_weights)

    def blocks(self):
        out = {"sdc": self.sdc.weights, "fusion": self.fusion_weights}
        if self.phi_weights is not None:
            out["phi"] = self.phi_weights
        return out

    def copy(self):
        phi = None if self.phi_weights is None else self.phi_weights.copy()
        return SdnParams(self.sdc.with_weights(self.sdc.weights.copy()), self.fusion_weights.copy(), phi)


def _align(a, b):
    """Upsample whichever of ``a``, ``b`` is spatially smaller to the other's extents."""
    ha, wa = a.shape[1:]
    hb, wb = b.shape[1:]
    if (ha, wa) == (hb, wb):
        return a, b
    if ha >= hb and wa >= wb:
        return a, bilinear_upsample(b, ha, wa)
    if hb >= ha and wb >= wa:
        return bilinear_upsample(a, hb, wb), b
    raise ValueError(f"cannot align extents {(ha, wa)} and {(hb, wb)}")


def fuse(U, Y, params):
    """``Conv1x1([U, Y])`` after bilinear-aligning the smaller input."""
    U, Y = _align(as_feature_map(U), as_feature_map(Y))
    return conv2d(concat_channels(U, Y), params.fusion_kernel)


def sdn_forward(U, V, params):
    U = as_feature_map(U)
    V = match_extent(as_feature_map(V), *U.shape[1:])
    return fuse(U, sdc2d(U, V, params.sdc), params)


def sdn_backward(grad_out, U, V, params):
    """Gradients of ``sum(grad_out * sdn_forward(U, V, params))``.

    Returns ``(grad_U, grad_V, {"sdc": ..., "fusion": ...})``; ``grad_V`` has
    ``V``'s original extents (the upsampling is differentiated through).
    """
    U = as_feature_map(U)
    V = as_feature_map(V)
    H, W = U.shape[1:]
    Vu = match_extent(V, H, W)
    Y = sdc2d(U, Vu, params.sdc)
    fused = conv2d_backward(grad_out, concat_channels(U, Y), params.fusion_kernel)
    c = U.shape[0]
    g_u = fused.grad_input[:c]
    g_y = fused.grad_input[c:]
    inner = sdc2d_backward(g_y, U, Vu, params.sdc)
    g_v = inner.grad_guidance
    if V.shape[1:] != (H, W):
        g_v = bilinear_upsample_backward(g_v, *V.shape[1:])
    return g_u + inner.grad_input, g_v, {"sdc": inner.grad_weights, "fusion": fused.grad_weights}


def as_diffusion_step(alpha, beta, lam, kernel=(3, 3)):
    """Parameters under which :func:`sdn_forward` is one explicit diffusion step.

    All-ones SDC weights reproduce the neighbor-difference sum, and fusion
    weights ``[alpha | beta]`` reproduce the retained-plus-update combination.
    Single-channel ``U`` only.
    """
    kh, kw = kernel
    sdc = SdcKernel(np.ones((1, 1, kh, kw)), dilation=1, lam=lam)
    return SdnParams(sdc, np.array([[alpha, beta]]))


def guidance_single_scale(F, params):
    """``Phi(F)``: a 3x3 stride-2 convolution, output extents ``ceil(H/2) x ceil(W/2)``."""
    return conv2d(F, params.phi_kernel, stride=2)


def guidance_multi_scale(feats, params, upsample=True):
    """Guidance for every stage of a pyramid ``[F_1, ..., F_L]`` (finest first).

    Stage ``i < L`` is guided by ``F_{i+1}``; the last stage by ``Phi(F_L)``
    built from ``params``. With ``upsample`` each guidance map is resized to
    its stage's extents.
    """
    feats = [as_feature_map(f) for f in feats]
    if not feats:
        raise ValueError("need at least one feature map")
    for a, b in zip(feats, feats[1:]):
        if b.shape[1] > a.shape[1] or b.shape[2] > a.shape[2]:
            raise ValueError("pyramid extents must be non-increasing from fine to coarse")
    guides = feats[1:] + [guidance_single_scale(feats[-1], params)]
    if upsample:
        guides = [match_extent(g, *f.shape[1:]) for g, f in zip(guides, feats)]
    return guides


def sdn_multi_scale(feats, stage_params, phi_params):
    """Apply one independently parameterized SDN per pyramid stage."""
    if len(stage_params) != len(feats):
        raise ValueError("need one parameter set per stage")
    guides = guidance_multi_scale(feats, phi_params)
    return [sdn_forward(f, g, p) for f, g, p in zip(feats, guides, stage_params)]
