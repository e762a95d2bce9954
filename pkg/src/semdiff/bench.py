"""Desk-scale segmentation benchmark with a pluggable neck.

Synthetic scenes carry class-colored shapes plus intra-class texture (noise
and same-class sub-regions of different shade, i.e. pseudo boundaries). A
tiny encoder (two stride-2 3x3 stages with ReLU) feeds a neck (``none``,
``vanilla``, ``cdc`` or ``sdn``) and a 1x1 classifier whose logits are
bilinearly upsampled back to the image size.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .gradients import cdc2d_backward, conv2d_backward, sdc2d_backward
from .metrics import evaluate_pair, mean_defined
from .operators import SdcKernel, cdc2d, conv2d, sdc2d
from .tensor import bilinear_upsample, bilinear_upsample_backward, concat_channels

NECKS = ("none", "vanilla", "cdc", "sdn")

# base RGB per class; texture perturbs around these
PALETTE = np.array(
    [
        [0.20, 0.25, 0.30],
        [0.75, 0.35, 0.30],
        [0.30, 0.70, 0.35],
        [0.35, 0.40, 0.80],
    ]
)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    n_classes: int = 3
    shapes: int = 4
    texture: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("scene extents must be at least 16 pixels")
        if not 2 <= self.n_classes <= len(PALETTE):
            raise ValueError(f"n_classes must lie in [2, {len(PALETTE)}]")
        if self.texture < 0:
            raise ValueError("texture amplitude must be nonnegative")


def gen_scene(cfg):
    """Return ``(image, labels)``: a ``(3, H, W)`` image in roughly [0, 1] and its label map."""
    rng = np.random.default_rng(cfg.seed)
    H, W = cfg.height, cfg.width
    labels = np.zeros((H, W), dtype=np.int64)
    # sub-region id per pixel; each (class, part) pair gets its own shade offset
    part = np.zeros((H, W), dtype=np.int64)
    yy, xx = np.mgrid[0:H, 0:W]
    for i in range(cfg.shapes):
        cls = int(rng.integers(1, cfg.n_classes))
        if rng.random() < 0.5:
            h = int(rng.integers(H // 4, H // 2 + 1))
            w = int(rng.integers(W // 4, W // 2 + 1))
            y0 = int(rng.integers(0, H - h + 1))
            x0 = int(rng.integers(0, W - w + 1))
            inside = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            r = rng.uniform(min(H, W) / 8, min(H, W) / 4)
            cy = rng.uniform(r, H - r)
            cx = rng.uniform(r, W - r)
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        labels[inside] = cls
        # split the shape along a random line into two same-class parts
        angle = rng.uniform(0, np.pi)
        proj = (yy - yy[inside].mean()) * np.sin(angle) + (xx - xx[inside].mean()) * np.cos(angle)
        part[inside] = np.where(proj[inside] >= 0, 2 * i + 1, 2 * i + 2)

    image = PALETTE[labels].transpose(2, 0, 1).copy()
    shade = rng.uniform(-1.0, 1.0, size=(2 * cfg.shapes + 1, 3))
    noise = rng.uniform(-1.0, 1.0, size=(3, H, W))
    if cfg.texture > 0:
        image += cfg.texture * (shade[part].transpose(2, 0, 1) + noise)
    return image, labels


def make_dataset(cfg, n, seed):
    """``n`` scenes drawn with scene seeds derived from ``seed``."""
    seeds = np.random.default_rng([seed, 1]).integers(0, 2**31, size=n)
    return [gen_scene(replace(cfg, seed=int(s))) for s in seeds]


# -- model ----------------------------------------------------------------


@dataclass
class ToyModel:
    neck: str
    params: dict
    lam: float = 0.5
    dilation: int = 1
    guidance_grad: bool = True
    n_classes: int = 3

    def copy(self):
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def _he_uniform(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(neck, n_classes=3, channels=(8, 16), seed=0, lam=0.5, dilation=1,
               neck_channels=None, phi_channels=None, guidance_grad=True):
    """He-uniform initialization (bound ``sqrt(6 / fan_in)``), zero biases.

    Fusion weights start as ``[I | 0.1 * He]`` so every neck begins close to the
    identity on the encoder features.
    """
    if neck not in NECKS:
        raise ValueError(f"unknown neck {neck!r}; choose from {NECKS}")
    rng = np.random.default_rng([seed, 2])
    c1, c = channels
    cy = neck_channels or c
    p = {
        "enc1": _he_uniform(rng, (c1, 3, 3, 3)),
        "enc1_b": np.zeros(c1),
        "enc2": _he_uniform(rng, (c, c1, 3, 3)),
        "enc2_b": np.zeros(c),
        "cls": _he_uniform(rng, (n_classes, c, 1, 1)),
        "cls_b": np.zeros(n_classes),
    }
    # draw neck blocks for every variant so the shared blocks match across necks
    neck_w = _he_uniform(rng, (cy, c, 3, 3))
    fusion = np.concatenate([np.eye(c), 0.1 * _he_uniform(rng, (c, cy))], axis=1)[:, :, None, None]
    phi = _he_uniform(rng, (phi_channels or c, c, 3, 3))
    if neck != "none":
        p["neck"] = neck_w
        p["fusion"] = fusion
    if neck == "sdn":
        p["phi"] = phi
    return ToyModel(neck, p, lam, dilation, guidance_grad, n_classes)


def _bias(x, b):
    return x + b[:, None, None]


def model_forward(m, image, return_cache=False):
    """Per-class scores ``(n_classes, H, W)`` for one image."""
    p = m.params
    cache = {"image": image}
    a1 = _bias(conv2d(image, SdcKernel(p["enc1"]), stride=2), p["enc1_b"])
    h1 = np.maximum(a1, 0.0)
    a2 = _bias(conv2d(h1, SdcKernel(p["enc2"]), stride=2), p["enc2_b"])
    F = np.maximum(a2, 0.0)
    cache.update(a1=a1, h1=h1, a2=a2, F=F)

    if m.neck == "none":
        N = F
    else:
        k = SdcKernel(p["neck"], m.dilation, m.lam)
        if m.neck == "vanilla":
            Y = conv2d(F, k)
        elif m.neck == "cdc":
            Y = cdc2d(F, k)
        else:
            G = conv2d(F, SdcKernel(p["phi"]), stride=2)
            Gu = bilinear_upsample(G, *F.shape[1:])
            Y = sdc2d(F, Gu, k)
            cache.update(G=G, Gu=Gu)
        cat = concat_channels(F, Y)
        N = conv2d(cat, SdcKernel(p["fusion"]))
        cache.update(cat=cat)
    cache["N"] = N
    low = _bias(conv2d(N, SdcKernel(p["cls"])), p["cls_b"])
    scores = bilinear_upsample(low, *image.shape[1:])
    cache["low"] = low
    return (scores, cache) if return_cache else scores


def model_backward(m, grad_scores, cache):
    """Parameter gradients for one image, given ``d loss / d scores``."""
    p = m.params
    g = {}
    g_low = bilinear_upsample_backward(grad_scores, *cache["low"].shape[1:])
    g["cls_b"] = g_low.sum(axis=(1, 2))
    t = conv2d_backward(g_low, cache["N"], SdcKernel(p["cls"]))
    g["cls"] = t.grad_weights
    g_n = t.grad_input

    F = cache["F"]
    c = F.shape[0]
    if m.neck == "none":
        g_f = g_n
    else:
        t = conv2d_backward(g_n, cache["cat"], SdcKernel(p["fusion"]))
        g["fusion"] = t.grad_weights
        g_f = t.grad_input[:c].copy()
        g_y = t.grad_input[c:]
        k = SdcKernel(p["neck"], m.dilation, m.lam)
        if m.neck == "vanilla":
            t = conv2d_backward(g_y, F, k)
        elif m.neck == "cdc":
            t = cdc2d_backward(g_y, F, k)
        else:
            t = sdc2d_backward(g_y, F, cache["Gu"], k)
        g["neck"] = t.grad_weights
        g_f += t.grad_input
        if m.neck == "sdn":
            if m.guidance_grad:
                g_g = bilinear_upsample_backward(t.grad_guidance, *cache["G"].shape[1:])
                t = conv2d_backward(g_g, F, SdcKernel(p["phi"]), stride=2)
                g["phi"] = t.grad_weights
                g_f += t.grad_input
            else:
                g["phi"] = np.zeros_like(p["phi"])

    g_a2 = g_f * (cache["a2"] > 0)
    g["enc2_b"] = g_a2.sum(axis=(1, 2))
    t = conv2d_backward(g_a2, cache["h1"], SdcKernel(p["enc2"]), stride=2)
    g["enc2"] = t.grad_weights
    g_a1 = t.grad_input * (cache["a1"] > 0)
    g["enc1_b"] = g_a1.sum(axis=(1, 2))
    g["enc1"] = conv2d_backward(g_a1, cache["image"], SdcKernel(p["enc1"]), stride=2).grad_weights
    return g


def loss_and_grad(scores, labels):
    """Mean pixel-wise softmax cross-entropy and its gradient w.r.t. ``scores``."""
    labels = np.asarray(labels)
    n_classes = scores.shape[0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    shifted = scores - scores.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=0)
    probs = exp / total
    n_pix = labels.size
    picked = np.take_along_axis(shifted, labels[None], axis=0)[0]
    loss = float(np.mean(np.log(total) - picked))
    grad = probs.copy()
    np.put_along_axis(grad, labels[None], np.take_along_axis(grad, labels[None], axis=0) - 1.0, axis=0)
    return loss, grad / n_pix


@dataclass
class TrainResult:
    model: ToyModel
    losses: list = field(default_factory=list)


def train(m, scenes, epochs, lr, seed=0, batch_size=4, momentum=0.9):
    """SGD with momentum; returns the trained copy and the per-epoch mean loss.

    Scene order is a fixed permutation per epoch drawn from ``seed``. A
    non-finite loss raises :class:`DivergenceError`.
    """
    if not scenes:
        raise ValueError("training set is empty")
    m = m.copy()
    rng = np.random.default_rng([seed, 3])
    velocity = {k: np.zeros_like(v) for k, v in m.params.items()}
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(scenes))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            grads = {k: np.zeros_like(v) for k, v in m.params.items()}
            for i in batch:
                image, labels = scenes[i]
                scores, cache = model_forward(m, image, return_cache=True)
                loss, g_scores = loss_and_grad(scores, labels)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, scene {int(i)}")
                epoch_loss += loss
                for k, v in model_backward(m, g_scores, cache).items():
                    grads[k] += v
            for k in m.params:
                velocity[k] = momentum * velocity[k] - lr * grads[k] / len(batch)
                m.params[k] = m.params[k] + velocity[k]
        losses.append(epoch_loss / len(scenes))
    return TrainResult(m, losses)


def predict(m, image):
    """Argmax labels; ties resolve to the lowest class index."""
    return np.argmax(model_forward(m, image), axis=0)


def evaluate_model(m, scenes):
    """Scene-averaged ``{"miou", "f1px", "f3px"}``."""
    per = [evaluate_pair(predict(m, image), labels, m.n_classes) for image, labels in scenes]
    return {key: mean_defined([r[key] for r in per]) for key in ("miou", "f1px", "f3px")}


def error_map(pred, gt, image=None):
    """RGB map that is black where ``pred`` is right; wrong pixels take the predicted class color."""
    wrong = pred != gt
    out = np.zeros((3,) + gt.shape)
    out[:, wrong] = PALETTE[pred[wrong]].T + 0.2
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class BenchConfig:
    """Everything one benchmark run depends on; every neck sees the same data and budget."""

    seeds: tuple = (0, 1, 2, 3, 4, 5)
    variants: tuple = NECKS
    epochs: int = 40
    lr: float = 0.05
    batch_size: int = 4
    train_scenes: int = 32
    test_scenes: int = 16
    channels: tuple = (8, 16)
    lam: float = 0.5
    dilation: int = 1
    scene: SceneConfig = field(default_factory=lambda: SceneConfig(texture=0.5))

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        bad = [v for v in self.variants if v not in NECKS]
        if bad:
            raise ValueError(f"unknown neck variants {bad}; choose from {NECKS}")
        if self.epochs < 1 or self.train_scenes < 1 or self.test_scenes < 1:
            raise ValueError("epochs and scene counts must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scene = d.pop("scene", {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench config keys {sorted(unknown)}")
        for key in ("seeds", "variants", "channels"):
            if key in d:
                d[key] = tuple(d[key])
        base = cls().scene
        return cls(scene=replace(base, **scene), **d)


@dataclass
class BenchRun:
    variant: str
    seed: int
    metrics: dict
    losses: list
    # first held-out scene with its prediction, for error maps
    sample: tuple


def run_bench(cfg, progress=None):
    """Train and evaluate every configured neck on every seed.

    Per seed, all variants share the training set, the held-out set, the
    shared initial weights and the scene order, so only the neck differs.
    ``progress(run)`` is called after each run. Returns a list of
    :class:`BenchRun` in (seed, variant) order.
    """
    runs = []
    for seed in cfg.seeds:
        train_set = make_dataset(cfg.scene, cfg.train_scenes, seed)
        test_set = make_dataset(cfg.scene, cfg.test_scenes, seed + 1000)
        for variant in cfg.variants:
            m = init_model(variant, n_classes=cfg.scene.n_classes, channels=cfg.channels,
                           seed=seed, lam=cfg.lam, dilation=cfg.dilation)
            result = train(m, train_set, cfg.epochs, cfg.lr, seed=seed, batch_size=cfg.batch_size)
            image, labels = test_set[0]
            run = BenchRun(variant, seed, evaluate_model(result.model, test_set), result.losses,
                           (image, labels, predict(result.model, image)))
            runs.append(run)
            if progress is not None:
                progress(run)
    return runs
