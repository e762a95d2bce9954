"""Analytic backward passes for conv2d, cdc2d and sdc2d, and a central
finite-difference checker that certifies them.

Each backward returns the gradient of ``sum(grad_out * forward(...))`` with
respect to the input, the guidance and the kernel weights.
"""

from dataclasses import dataclass

import numpy as np

from .diffusion import diffusivity_derivative
from .operators import SdcKernel, cdc2d, conv2d, output_extent, sdc2d, similarity_fields, tap_offsets
from .tensor import as_feature_map, pad_replicate, pad_replicate_backward

REL_FLOOR = 1e-8
BLOCKS = ("input", "guidance", "weights")


@dataclass
class GradTriple:
    grad_input: np.ndarray
    grad_guidance: np.ndarray
    grad_weights: np.ndarray

    def as_dict(self):
        return {"input": self.grad_input, "guidance": self.grad_guidance, "weights": self.grad_weights}


def conv2d_backward(grad_out, x, k, stride=1):
    """Backward of :func:`conv2d`. The guidance slot is zeros shaped like ``x``."""
    x = as_feature_map(x)
    ph, pw = k.margins
    m = max(ph, pw)
    xp = pad_replicate(x, m)
    _, H, W = x.shape
    Ho, Wo = output_extent(H, stride), output_extent(W, stride)
    if grad_out.shape != (k.c_out, Ho, Wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match output {(k.c_out, Ho, Wo)}")
    taps = tap_offsets(k)
    views = [
        (slice(None), slice(m + dy, m + dy + (Ho - 1) * stride + 1, stride),
         slice(m + dx, m + dx + (Wo - 1) * stride + 1, stride))
        for _, dy, dx in taps
    ]
    cols = np.stack([xp[v] for v in views], axis=1)  # (C_in, taps, Ho, Wo)
    w = k.weights.reshape(k.c_out, k.c_in, -1)
    gw = np.tensordot(grad_out, cols, axes=([1, 2], [2, 3])).reshape(k.weights.shape)
    back = np.tensordot(w, grad_out, axes=([0], [0]))  # (C_in, taps, Ho, Wo)
    gxp = np.zeros_like(xp)
    for t, v in enumerate(views):
        gxp[v] += back[:, t]
    return GradTriple(pad_replicate_backward(gxp, m), np.zeros_like(x), gw)


def _difference_conv_backward(grad_out, U, k, V=None):
    U = as_feature_map(U)
    _, H, W = U.shape
    if grad_out.shape != (k.c_out, H, W):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match output {(k.c_out, H, W)}")
    ph, pw = k.margins
    m = max(ph, pw)
    up = pad_replicate(U, m)
    uc = up[:, m:m + H, m:m + W]
    taps = tap_offsets(k)
    S = similarity_fields(V, k) if V is not None else None
    views = [(slice(None), slice(m + dy, m + dy + H), slice(m + dx, m + dx + W)) for _, dy, dx in taps]
    d = np.stack([up[v] - uc for v in views], axis=1)  # (C_in, taps, H, W)
    d_s = d if S is None else d * S[None]
    w = k.weights.reshape(k.c_out, k.c_in, -1)
    gw = np.tensordot(grad_out, d_s, axes=([1, 2], [2, 3])).reshape(k.weights.shape)
    back = np.tensordot(w, grad_out, axes=([0], [0]))  # (C_in, taps, H, W)
    if S is not None:
        gS = np.sum(back * d, axis=0)
        back = back * S[None]
    gup = np.zeros_like(up)
    for t, v in enumerate(views):
        gup[v] += back[:, t]
    gup[:, m:m + H, m:m + W] -= back.sum(axis=1)
    grad_u = pad_replicate_backward(gup, m)

    if V is None:
        return GradTriple(grad_u, np.zeros_like(U), gw)

    V = as_feature_map(V)
    vp = pad_replicate(V, m)
    vc = vp[:, m:m + H, m:m + W]
    c_f = V.shape[0]
    gvp = np.zeros_like(vp)
    for t, (_, dy, dx) in enumerate(taps):
        shifted = (slice(None), slice(m + dy, m + dy + H), slice(m + dx, m + dx + W))
        diff = vp[shifted] - vc
        s = np.mean(diff ** 2, axis=0)
        gs = gS[t] * diffusivity_derivative(s, k.lam)
        gdiff = (2.0 / c_f) * gs * diff
        gvp[shifted] += gdiff
        gvp[:, m:m + H, m:m + W] -= gdiff
    return GradTriple(grad_u, pad_replicate_backward(gvp, m), gw)


def cdc2d_backward(grad_out, x, k):
    """Backward of :func:`cdc2d`. The guidance slot is zeros shaped like ``x``."""
    return _difference_conv_backward(grad_out, x, k)


def sdc2d_backward(grad_out, U, V, k):
    """Backward of :func:`sdc2d`, including the path through the similarity term.

    The center tap's weight gradient is exactly zero because its pixel
    difference is identically zero.
    """
    return _difference_conv_backward(grad_out, U, k, V)


# -- finite-difference certification -------------------------------------

OPERATORS = ("conv2d", "cdc2d", "sdc2d")


def _forward(op, inputs, kernel_args):
    k = SdcKernel(inputs["weights"], **kernel_args.get("kernel", {}))
    if op == "conv2d":
        return conv2d(inputs["input"], k, stride=kernel_args.get("stride", 1))
    if op == "cdc2d":
        return cdc2d(inputs["input"], k)
    if op == "sdc2d":
        return sdc2d(inputs["input"], inputs["guidance"], k)
    raise ValueError(f"unknown operator {op!r}")


def default_backward(op):
    def run(grad_out, inputs, kernel_args):
        k = SdcKernel(inputs["weights"], **kernel_args.get("kernel", {}))
        if op == "conv2d":
            return conv2d_backward(grad_out, inputs["input"], k, stride=kernel_args.get("stride", 1))
        if op == "cdc2d":
            return cdc2d_backward(grad_out, inputs["input"], k)
        return sdc2d_backward(grad_out, inputs["input"], inputs["guidance"], k)

    return run


def relative_error(analytic, numeric, floor=REL_FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_errors(op, inputs, step=1e-5, seed=0, kernel_args=None, backward=None):
    """Max relative error per parameter block between analytic and central-difference gradients.

    ``inputs`` maps block names (``input``, ``guidance``, ``weights``) to arrays;
    the scalar loss is the output weighted by a fixed random cotangent. Only
    blocks the operator actually consumes are checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    kernel_args = kernel_args or {}
    inputs = {name: np.array(v, dtype=np.float64) for name, v in inputs.items()}
    out = _forward(op, inputs, kernel_args)
    cot = np.random.default_rng(seed).standard_normal(out.shape)
    analytic = (backward or default_backward(op))(cot, inputs, kernel_args).as_dict()

    def loss():
        return float(np.sum(cot * _forward(op, inputs, kernel_args)))

    blocks = ["input", "weights"] + (["guidance"] if op == "sdc2d" else [])
    errors = {}
    for name in blocks:
        arr = inputs[name]
        numeric = np.zeros_like(arr)
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + step
            up = loss()
            arr.flat[i] = orig - step
            down = loss()
            arr.flat[i] = orig
            numeric.flat[i] = (up - down) / (2.0 * step)
        errors[name] = float(np.max(relative_error(analytic[name], numeric)))
    return errors


def finite_diff_check(op, inputs, step=1e-5, seed=0, kernel_args=None, backward=None):
    """Largest relative error over all checked parameter blocks."""
    return max(finite_diff_errors(op, inputs, step, seed, kernel_args, backward).values())


def random_instance(op, rng):
    """A small random problem for ``op``: inputs dict and kernel arguments."""
    c_in = int(rng.integers(1, 3))
    c_out = int(rng.integers(1, 3))
    h = int(rng.integers(4, 7))
    w = int(rng.integers(4, 7))
    ksize = int(rng.choice([1, 3, 3, 5])) if op == "conv2d" else int(rng.choice([3, 3, 5]))
    dilation = int(rng.choice([1, 1, 2]))
    inputs = {
        "input": rng.standard_normal((c_in, h, w)),
        "weights": rng.standard_normal((c_out, c_in, ksize, ksize)),
    }
    kernel = {"dilation": dilation}
    kernel_args = {"kernel": kernel}
    if op == "conv2d":
        kernel_args["stride"] = int(rng.choice([1, 2]))
    if op == "sdc2d":
        c_f = int(rng.integers(1, 4))
        inputs["guidance"] = rng.standard_normal((c_f, h, w))
        kernel["lam"] = float(rng.uniform(0.5, 2.0))
    return inputs, kernel_args


def gradcheck_suite(n_instances=20, step=1e-5, seed=0, backwards=None):
    """Certify every operator on ``n_instances`` random problems.

    Returns rows ``(operator, block, max relative error)``, one per operator and
    parameter block. ``backwards`` optionally overrides the backward used per
    operator (negative controls).
    """
    backwards = backwards or {}
    rows = []
    for op_index, op in enumerate(OPERATORS):
        rng = np.random.default_rng([seed, op_index])
        worst = {}
        for i in range(n_instances):
            inputs, kernel_args = random_instance(op, rng)
            errs = finite_diff_errors(
                op, inputs, step, seed=int(rng.integers(2**31)), kernel_args=kernel_args,
                backward=backwards.get(op),
            )
            for name, e in errs.items():
                worst[name] = max(worst.get(name, 0.0), e)
        for name in BLOCKS:
            if name in worst:
                rows.append((op, name, worst[name]))
    return rows


def step_sweep(op="sdc2d", steps=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7), seed=0):
    """Max relative error of one fixed random instance as the perturbation shrinks."""
    rng = np.random.default_rng([seed, 99])
    inputs, kernel_args = random_instance(op, rng)
    return [(s, finite_diff_check(op, inputs, s, seed=seed, kernel_args=kernel_args)) for s in steps]
