"""Command-line entry point: ``semdiff {diffuse,opdemo,gradcheck,bench,eval}``.

Exit status is 0 on success, 1 when a checked post-condition fails (gradient
certification, training divergence) and 2 for unusable input.
"""

import argparse
import csv
import io as _io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bench as _bench
from . import gradients as _grad
from .diffusion import DiffusionSchedule, DiffusivityConfig, diffuse, region_contrast
from .io import read_any, read_labels, write_image, write_tns
from .metrics import boundary_mask, evaluate_pair, mean_defined
from .operators import SdcKernel, cdc2d, conv2d, sdc2d
from .plotting import plot_fscores, plot_loss_curves, plot_step_sweep

OPERATORS = ("vanilla", "cdc", "sdc")


class CliError(Exception):
    """Bad input; reported on stderr with exit status 2."""


def _fmt(x, spec=".6f"):
    return "" if x is None else format(x, spec)


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _parse_kernel(spec):
    """``"HxW"`` or ``"K"`` for odd extents."""
    try:
        parts = [int(p) for p in spec.lower().split("x")]
    except ValueError:
        raise CliError(f"bad kernel spec {spec!r}; expected e.g. 3 or 3x5") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or any(p < 1 or p % 2 == 0 for p in parts):
        raise CliError(f"bad kernel spec {spec!r}; extents must be positive and odd")
    return tuple(parts)


def _load(path, what):
    try:
        return read_any(path)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read {what} {path}: {e}") from None


def _load_guidance(spec, shape):
    if spec is None or spec == "constant":
        return np.zeros((1,) + shape[1:])
    V = _load(spec, "guidance")
    if V.shape[1:] != shape[1:]:
        raise CliError(f"guidance extents {V.shape[1:]} differ from input {shape[1:]}")
    return V


def _load_regions(path, shape):
    try:
        regions = read_labels(path)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read regions {path}: {e}") from None
    if regions.shape != shape[1:]:
        raise CliError(f"region map extents {regions.shape} differ from input {shape[1:]}")
    return regions


def _write_output(path, x):
    path = Path(path)
    if path.suffix == ".tns":
        write_tns(path, x)
    elif path.suffix in (".pgm", ".ppm"):
        write_image(path, x)
    else:
        raise CliError(f"output must end in .tns, .pgm or .ppm, got {path.name}")


# -- diffuse -----------------------------------------------------------------


def cmd_diffuse(args):
    U = _load(args.input, "input")
    V = _load_guidance(args.guidance, U.shape)
    regions = _load_regions(args.regions, U.shape) if args.regions else None
    try:
        cfg = DiffusivityConfig(args.lam)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sched = DiffusionSchedule(args.steps, args.alpha, args.beta, _parse_kernel(args.kernel))
    except ValueError as e:
        raise CliError(str(e)) from None
    if not sched.stable:
        h, w = sched.neighborhood
        raise CliError(f"unstable schedule: beta * (h*w - 1) = {sched.beta * (h * w - 1):.6g} exceeds 1")
    header = ["step", "mean", "range"] + (["contrast"] if regions is not None else [])
    rows = []

    def record(t, Ut):
        row = [t, _fmt(Ut.mean(), ".10f"), _fmt(Ut.max() - Ut.min(), ".10f")]
        if regions is not None:
            row.append(_fmt(region_contrast(Ut, regions), ".10f"))
        rows.append(row)

    out = diffuse(U, V, sched, cfg, callback=record)
    _write_output(args.out, out)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return 0


# -- opdemo ------------------------------------------------------------------


def _demo_kernel(args, c_in):
    if args.weights:
        w = _load(args.weights, "weights")
        if w.ndim != 4:
            raise CliError("weights must be a rank-4 .tns tensor (C_out, C_in, h, w)")
    else:
        kh, kw = _parse_kernel(args.kernel)
        w = np.full((1, c_in, kh, kw), 1.0 / (c_in * kh * kw))
    try:
        return SdcKernel(w, dilation=args.dilation, lam=args.lam)
    except ValueError as e:
        raise CliError(str(e)) from None


def operator_response(op, U, V, k):
    if op == "vanilla":
        return conv2d(U, k)
    if op == "cdc":
        return cdc2d(U, k)
    if op == "sdc":
        return sdc2d(U, V, k)
    raise CliError(f"unknown operator {op!r}; choose from {OPERATORS}")


def response_energy(Y, regions):
    """Mean absolute response inside regions (off the 1px boundary band) and on the band."""
    band = boundary_mask(regions, 1)
    mag = np.abs(Y).mean(axis=0)
    inside = float(mag[~band].mean()) if (~band).any() else None
    on_band = float(mag[band].mean()) if band.any() else None
    return inside, on_band


def cmd_opdemo(args):
    if args.op not in OPERATORS:
        raise CliError(f"unknown operator {args.op!r}; choose from {OPERATORS}")
    U = _load(args.input, "input")
    V = _load_guidance(args.guidance, U.shape)
    k = _demo_kernel(args, U.shape[0])
    if k.c_in != U.shape[0]:
        raise CliError(f"weights expect {k.c_in} input channels, input has {U.shape[0]}")
    Y = operator_response(args.op, U, V, k)
    out = Path(args.out)
    if out.suffix != ".pgm":
        raise CliError("opdemo writes a PGM; give an --out path ending in .pgm")
    write_tns(out.with_suffix(".tns"), Y)
    shown = Y.mean(axis=0)
    lo, hi = shown.min(), shown.max()
    write_image(out, (shown - lo) / (hi - lo) if hi > lo else np.zeros_like(shown))
    print(f"operator,{args.op}")
    print(f"mean_abs_response,{_fmt(float(np.abs(Y).mean()), '.10f')}")
    if args.regions:
        inside, on_band = response_energy(Y, _load_regions(args.regions, U.shape))
        print(f"in_region_energy,{_fmt(inside, '.10f')}")
        print(f"band_energy,{_fmt(on_band, '.10f')}")
    return 0


# -- gradcheck ---------------------------------------------------------------

GRADCHECK_TOL = 1e-6


def cmd_gradcheck(args):
    out = Path(args.out)
    rows = _grad.gradcheck_suite(n_instances=args.instances, seed=args.seed)
    _write_csv(out, ["operator", "block", "max_rel_err"], [[op, b, _fmt(e, ".3e")] for op, b, e in rows])
    sweep = _grad.step_sweep(seed=args.seed)
    _write_csv(out.with_name(out.stem + "_sweep.csv"), ["step", "max_rel_err"],
               [[_fmt(s, ".0e"), _fmt(e, ".3e")] for s, e in sweep])
    plot_step_sweep(sweep, out.with_name(out.stem + "_sweep.png"))
    failed = [r for r in rows if not r[2] <= GRADCHECK_TOL]
    for op, block, err in failed:
        print(f"FAIL {op},{block},{err:.3e} exceeds {GRADCHECK_TOL:g}", file=sys.stderr)
    if failed:
        return 1
    worst = max(rows, key=lambda r: r[2])
    print(f"gradcheck passed: {len(rows)} blocks, worst {worst[0]}/{worst[1]} at {worst[2]:.3e}")
    return 0


# -- bench -------------------------------------------------------------------


def load_bench_config(path, seed=None):
    cfg = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, ValueError) as e:
            raise CliError(f"cannot read config {path}: {e}") from None
        if not isinstance(cfg, dict):
            raise CliError("bench config must be a JSON object")
    if seed is not None:
        cfg["seeds"] = [seed]
    try:
        return _bench.BenchConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad bench config: {e}") from None


def cmd_bench(args):
    cfg = load_bench_config(args.config, args.seed)
    out = Path(args.out)
    (out / "errors").mkdir(parents=True, exist_ok=True)

    def progress(run):
        m = run.metrics
        print(f"{run.variant} seed {run.seed}: mIoU {_fmt(m['miou'], '.4f')} "
              f"F@1px {_fmt(m['f1px'], '.4f')} F@3px {_fmt(m['f3px'], '.4f')}", flush=True)

    try:
        runs = _bench.run_bench(cfg, progress)
    except _bench.DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1

    _write_csv(out / "metrics.csv", ["variant", "seed", "mIoU", "F@1px", "F@3px"],
               [[r.variant, r.seed, _fmt(r.metrics["miou"]), _fmt(r.metrics["f1px"]), _fmt(r.metrics["f3px"])]
                for r in runs])
    _write_csv(out / "loss_curves.csv", ["variant", "seed", "epoch", "loss"],
               [[r.variant, r.seed, e + 1, _fmt(loss, ".8f")] for r in runs for e, loss in enumerate(r.losses)])
    summary = []
    for v in cfg.variants:
        per = [r.metrics for r in runs if r.variant == v]
        summary.append([v] + [_fmt(mean_defined([m[k] for m in per])) for k in ("miou", "f1px", "f3px")])
    _write_csv(out / "summary.csv", ["variant", "mIoU", "F@1px", "F@3px"], summary)

    for r in runs:
        image, labels, pred = r.sample
        stem = out / "errors" / f"{r.variant}_seed{r.seed}"
        write_image(stem.with_name(stem.name + "_error.ppm"), _bench.error_map(pred, labels))
        write_image(stem.with_name(stem.name + "_pred.ppm"), _bench.PALETTE[pred].transpose(2, 0, 1))
    for seed in cfg.seeds:
        image, labels, _ = next(r.sample for r in runs if r.seed == seed)
        write_image(out / "errors" / f"scene_seed{seed}.ppm", np.clip(image, 0.0, 1.0))
        write_image(out / "errors" / f"truth_seed{seed}.ppm", _bench.PALETTE[labels].transpose(2, 0, 1))

    plot_loss_curves({(r.variant, r.seed): r.losses for r in runs}, out / "loss_curves.png")
    plot_fscores([{"variant": r.variant, **r.metrics} for r in runs], out / "fscores.png")
    for row in summary:
        print("mean " + " ".join(f"{h}={x}" for h, x in zip(["variant", "mIoU", "F@1px", "F@3px"], row)))
    return 0


# -- eval --------------------------------------------------------------------


def _label_files(d):
    d = Path(d)
    if not d.is_dir():
        raise CliError(f"not a directory: {d}")
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix == ".pgm"}


def cmd_eval(args):
    preds, gts = _label_files(args.pred), _label_files(args.gt)
    if not preds and not gts:
        raise CliError("no data: both directories hold no .pgm label maps")
    if preds.keys() != gts.keys():
        missing = sorted(preds.keys() ^ gts.keys())
        raise CliError(f"file names differ between directories: {', '.join(missing)}")
    maps = {}
    for name in gts:
        try:
            maps[name] = (read_labels(preds[name]), read_labels(gts[name]))
        except (OSError, ValueError) as e:
            raise CliError(f"cannot read {name}: {e}") from None
    n_classes = args.classes or 1 + max(int(max(p.max(), g.max())) for p, g in maps.values())
    rows, per = [], []
    for name, (pred, gt) in maps.items():
        if pred.shape != gt.shape:
            raise CliError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ in extent")
        try:
            r = evaluate_pair(pred, gt, n_classes)
        except ValueError as e:
            raise CliError(f"{name}: {e}") from None
        per.append(r)
        rows.append([Path(name).stem, _fmt(r["miou"]), _fmt(r["f1px"]), _fmt(r["f3px"])])
    rows.append(["mean"] + [_fmt(mean_defined([r[k] for r in per])) for k in ("miou", "f1px", "f3px")])
    _write_csv(args.out, ["image", "mIoU", "F@1px", "F@3px"], rows)
    return 0


# -- entry point -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="semdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diffuse", help="run explicit guided diffusion on an image or tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--guidance", default="constant", help='guidance image/tensor, or "constant"')
    p.add_argument("--regions", help="PGM label map; adds a region-contrast column")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=None, help="default 1 / window size")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--kernel", default="3x3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("opdemo", help="apply one operator and report response energy")
    p.add_argument("op", help="|".join(OPERATORS))
    p.add_argument("--input", required=True)
    p.add_argument("--guidance", default="constant")
    p.add_argument("--regions", help="PGM label map; prints in-region and boundary-band energy")
    p.add_argument("--kernel", default="3x3", help="extent of a window-mean kernel, e.g. 3 or 3x5")
    p.add_argument("--weights", help="rank-4 .tns kernel; overrides --kernel")
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_opdemo)

    p = sub.add_parser("gradcheck", help="certify analytic gradients by finite differences")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="train and compare neck variants on synthetic scenes")
    p.add_argument("--config", help="JSON config; omitted keys take defaults")
    p.add_argument("--seed", type=int, default=None, help="run this single seed instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="score PGM label predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--classes", type=int, default=0, help="class count; inferred when 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"semdiff {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
