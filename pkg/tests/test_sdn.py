import numpy as np
import pytest

from semdiff.diffusion import DiffusionSchedule, DiffusivityConfig, diffuse, diffusion_step
from semdiff.operators import SdcKernel
from semdiff.sdn import (
    SdnParams,
    as_diffusion_step,
    fuse,
    guidance_multi_scale,
    guidance_single_scale,
    sdn_backward,
    sdn_forward,
    sdn_multi_scale,
)


def fusion_ab(c, alpha, beta):
    """1x1 fusion weights ``[alpha * I | beta * I]`` for ``c`` channels."""
    return np.concatenate([alpha * np.eye(c), beta * np.eye(c)], axis=1)


def params_for(c, rng, with_phi=False):
    sdc = SdcKernel(rng.standard_normal((c, c, 3, 3)), lam=0.7)
    phi = rng.standard_normal((c, c, 3, 3)) if with_phi else None
    return SdnParams(sdc, rng.standard_normal((c, 2 * c)), phi)


def test_params_validation():
    sdc = SdcKernel(np.ones((2, 2, 3, 3)))
    with pytest.raises(ValueError):
        SdnParams(sdc, np.ones((2, 3)))
    with pytest.raises(ValueError):
        SdnParams(sdc, np.ones((2, 4, 3, 3)))
    with pytest.raises(ValueError):
        SdnParams(sdc, np.ones((2, 4)), phi_weights=np.ones((2, 2, 5, 5)))
    with pytest.raises(ValueError):
        SdnParams(sdc, np.ones((2, 4))).phi_kernel


def test_fuse_weighted_sum_and_passthrough():
    rng = np.random.default_rng(0)
    U, Y = rng.standard_normal((2, 2, 5, 5))
    p = SdnParams(SdcKernel(np.ones((2, 2, 3, 3))), fusion_ab(2, 0.3, -2.0))
    np.testing.assert_allclose(fuse(U, Y, p), 0.3 * U - 2.0 * Y, rtol=0, atol=1e-15)
    p = SdnParams(SdcKernel(np.ones((2, 2, 3, 3))), fusion_ab(2, 1.0, 0.0))
    np.testing.assert_array_equal(fuse(U, Y, p), U)


def test_fuse_upsamples_smaller_input():
    p = SdnParams(SdcKernel(np.ones((1, 1, 3, 3))), fusion_ab(1, 1.0, 1.0))
    out = fuse(np.zeros((1, 8, 8)), np.full((1, 4, 4), 2.0), p)
    assert out.shape == (1, 8, 8)
    np.testing.assert_allclose(out, 2.0, atol=1e-15)
    with pytest.raises(ValueError):
        fuse(np.zeros((1, 8, 4)), np.zeros((1, 4, 8)), p)


def test_constant_U_maps_to_alpha_U():
    V = np.random.default_rng(1).standard_normal((1, 6, 6))
    out = sdn_forward(np.full((1, 6, 6), 4.0), V, as_diffusion_step(0.5, 1 / 9, 1.0))
    np.testing.assert_array_equal(out, 2.0)


def test_equivalent_to_diffusion_step_on_random_pairs():
    rng = np.random.default_rng(2)
    params = as_diffusion_step(1.0, 1 / 9, 1.0)
    sched = DiffusionSchedule(alpha=1.0, beta=1 / 9)
    worst = 0.0
    for _ in range(100):
        U, V = rng.standard_normal((2, 1, 8, 8))
        worst = max(worst, np.max(np.abs(sdn_forward(U, V, params) - diffusion_step(U, V, sched, DiffusivityConfig(1.0)))))
    assert worst <= 1e-12


@pytest.mark.parametrize("T", [1, 5, 20])
def test_chained_blocks_equal_multi_step_diffusion(T):
    rng = np.random.default_rng(T)
    U, V = rng.standard_normal((2, 1, 8, 8))
    params = as_diffusion_step(1.0, 1 / 9, 1.0)
    X = U
    for _ in range(T):
        X = sdn_forward(X, V, params)
    ref = diffuse(U, V, DiffusionSchedule(steps=T, alpha=1.0, beta=1 / 9), DiffusivityConfig(1.0))
    assert np.max(np.abs(X - ref)) <= 1e-12


def test_zero_beta_is_identity():
    rng = np.random.default_rng(3)
    U, V = rng.standard_normal((2, 1, 7, 5))
    np.testing.assert_array_equal(sdn_forward(U, V, as_diffusion_step(1.0, 0.0, 1.0)), U)


def test_coarse_guidance_is_upsampled():
    rng = np.random.default_rng(4)
    p = params_for(2, rng)
    assert sdn_forward(rng.standard_normal((2, 8, 8)), rng.standard_normal((3, 4, 4)), p).shape == (2, 8, 8)


@pytest.mark.parametrize("n,expected", [(8, 4), (7, 4), (1, 1)])
def test_phi_output_extent(n, expected):
    rng = np.random.default_rng(5)
    p = params_for(2, rng, with_phi=True)
    assert guidance_single_scale(rng.standard_normal((2, n, n)), p).shape == (2, expected, expected)


def test_identity_phi_on_constant():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    p = SdnParams(SdcKernel(np.ones((1, 1, 3, 3))), np.ones((1, 2)), phi_weights=w)
    np.testing.assert_array_equal(guidance_single_scale(np.full((1, 7, 7), 3.0), p), 3.0)


def test_multi_scale_single_level_uses_phi():
    rng = np.random.default_rng(6)
    p = params_for(2, rng, with_phi=True)
    F = rng.standard_normal((2, 8, 8))
    (g,) = guidance_multi_scale([F], p, upsample=False)
    np.testing.assert_array_equal(g, guidance_single_scale(F, p))


def test_multi_scale_extent_trace():
    rng = np.random.default_rng(7)
    p = params_for(2, rng, with_phi=True)
    feats = [rng.standard_normal((2, n, n)) for n in (64, 32, 16, 8)]
    raw = guidance_multi_scale(feats, p, upsample=False)
    assert [g.shape[1] for g in raw] == [32, 16, 8, 4]
    for g, f in zip(raw[:-1], feats[1:]):
        np.testing.assert_array_equal(g, f)
    up = guidance_multi_scale(feats, p)
    assert [g.shape[1] for g in up] == [64, 32, 16, 8]
    with pytest.raises(ValueError):
        guidance_multi_scale(feats[::-1], p)
    with pytest.raises(ValueError):
        guidance_multi_scale([], p)


def test_stages_are_independent():
    rng = np.random.default_rng(8)
    feats = [rng.standard_normal((2, n, n)) for n in (16, 8, 4)]
    stages = [params_for(2, rng) for _ in feats]
    phi = params_for(2, rng, with_phi=True)
    base = sdn_multi_scale(feats, stages, phi)
    changed = list(stages)
    changed[1] = params_for(2, rng)
    out = sdn_multi_scale(feats, changed, phi)
    np.testing.assert_array_equal(out[0], base[0])
    np.testing.assert_array_equal(out[2], base[2])
    assert not np.array_equal(out[1], base[1])
    with pytest.raises(ValueError):
        sdn_multi_scale(feats, stages[:2], phi)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(9)
    U = rng.standard_normal((2, 6, 6))
    V = rng.standard_normal((3, 3, 3))
    p = SdnParams(SdcKernel(rng.standard_normal((2, 2, 3, 3)), lam=0.9), rng.standard_normal((2, 4)))
    G = rng.standard_normal((2, 6, 6))
    gU, gV, gW = sdn_backward(G, U, V, p)
    assert gV.shape == V.shape

    def loss(U, V, p):
        return np.sum(G * sdn_forward(U, V, p))

    h = 1e-5
    for arr, grad, make in (
        (U, gU, lambda x: loss(x, V, p)),
        (V, gV, lambda x: loss(U, x, p)),
        (p.sdc.weights, gW["sdc"], lambda x: loss(U, V, SdnParams(p.sdc.with_weights(x), p.fusion_weights))),
        (p.fusion_weights, gW["fusion"], lambda x: loss(U, V, SdnParams(p.sdc, x))),
    ):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            num[idx] = (make(plus) - make(minus)) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-8)
