"""Command-line workflow: generate data, fit, estimate threshold, render, evaluate.

Machine-readable results go to stdout or CSV files; diagnostics go to
stderr.  Every command is deterministic given its seed flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from . import metrics, scenegen, threshold, train
from .field import load_field, save_field
from .render import Camera, render_image

CURVE_HEADER = "sigma_thre,kappa_raw,kappa_smooth"
REPORT_HEADER = "frame,psnr,ssim,masked_psnr"
LOG_HEADER = "step,loss,psnr"


def write_curve_csv(curve, path):
    rows = zip(
        (float(v) for v in curve.sigma_thre),
        (float(v) for v in curve.kappa_raw),
        (float(v) for v in curve.kappa_smooth),
    )
    comments = []
    if curve.detected is not None:
        comments.append(f"# detected={fio.format_float(curve.detected)}")
    fio.write_csv(path, CURVE_HEADER, rows, trailing_comments=comments)


def _cmd_gen_scene(args):
    spec = scenegen.preset(args.preset, seed=args.seed, fog_sigma=args.fog)
    scenegen.generate_dataset(spec, args.out)
    print(f"# wrote dataset {spec.name} (fog_sigma={spec.fog_sigma}) to {args.out}",
          file=sys.stderr)
    return 0


def _cmd_fit(args):
    dataset = fio.load_dataset(args.data)
    cfg = train.TrainConfig(
        steps=args.steps,
        rays_per_step=args.rays,
        samples_per_ray=args.samples,
        learning_rate=args.lr,
        seed=args.seed,
        softplus_beta=args.beta,
    )
    rows = []
    field = train.fit(dataset, cfg, args.dims, on_step=lambda s, l, p: rows.append((s, l, p)))
    out = Path(args.out)
    save_field(field, out)
    log_path = out.with_name(out.stem + "_log.csv")
    fio.write_csv(log_path, LOG_HEADER, [(s, float(l), float(p)) for s, l, p in rows])
    print(f"# fitted field -> {out}, log -> {log_path}", file=sys.stderr)
    if rows:
        print(f"psnr={fio.format_float(rows[-1][2])}")
    return 0


def _threshold_config(args):
    return threshold.ThresholdConfig(
        q_max=args.qmax,
        q_step=args.qstep,
        batch_size=args.batch,
        savgol_window=args.window,
        savgol_order=args.order,
        rng_seed=args.seed,
    )


def _estimate(field, dataset, cfg, n_samples):
    cams = [dataset.cameras[i] for i in dataset.frame_indices("train")] or dataset.cameras
    return threshold.estimate_threshold(field, cams, cfg, n_samples=n_samples)


def _cmd_estimate(args):
    field = load_field(args.field)
    dataset = fio.load_dataset(args.data)
    cfg = _threshold_config(args)
    print(f"# qmax={args.qmax} qstep={args.qstep} candidates={len(cfg.candidates())} "
          f"window={args.window} order={args.order} batch={args.batch} seed={args.seed}",
          file=sys.stderr)
    detected, curve = _estimate(field, dataset, cfg, args.n_samples)
    if args.curve:
        write_curve_csv(curve, args.curve)
    print(f"sigma_thre={fio.format_float(detected)}")
    return 0


def _auto_threshold(args):
    """Estimate (or reuse a cached estimate of) the threshold for a field file."""
    field_path = Path(args.field)
    digest = hashlib.sha256(field_path.read_bytes()).hexdigest()
    params = {
        "qmax": args.qmax, "qstep": args.qstep, "batch": args.batch,
        "window": args.window, "order": args.order, "seed": args.seed,
        "n_samples": args.n_samples, "data": str(Path(args.data).resolve()),
    }
    cache_path = field_path.with_name(field_path.name + ".thre.json")
    if cache_path.exists():
        cached = json.loads(cache_path.read_text())
        if cached.get("field_sha256") == digest and cached.get("params") == params:
            return float(cached["sigma_thre"])
    field = load_field(field_path)
    dataset = fio.load_dataset(args.data)
    detected, _ = _estimate(field, dataset, _threshold_config(args), args.n_samples)
    fio.write_json(cache_path, {
        "field_sha256": digest, "params": params, "sigma_thre": detected,
    })
    return detected


def _pose_camera(args, dataset):
    try:
        index = int(args.pose)
    except ValueError:
        with open(args.pose) as fh:
            pose = json.load(fh)
        return Camera(
            width=int(pose["width"]),
            height=int(pose["height"]),
            camera_angle_x=float(pose["camera_angle_x"]),
            transform=np.asarray(pose["transform_matrix"], dtype=np.float64),
            near=float(pose["near"]),
            far=float(pose["far"]),
        )
    if dataset is None:
        raise ValueError("--pose by index requires --data")
    return dataset.cameras[index]


def _cmd_render(args):
    field = load_field(args.field)
    dataset = fio.load_dataset(args.data) if args.data else None
    cam = _pose_camera(args, dataset)
    if args.thre == "auto":
        if not args.data:
            raise ValueError("--thre auto requires --data for the estimation cameras")
        thre = _auto_threshold(args)
        print(f"sigma_thre={fio.format_float(thre)}")
    else:
        thre = float(args.thre)
    rgb, alpha, depth = render_image(field, cam, n_samples=args.n_samples, threshold=thre)
    out = Path(args.out)
    fio.write_png(out, rgb)
    fio.write_png_gray(out.with_name(out.stem + "_alpha.png"), alpha)
    fio.write_pfm(out.with_name(out.stem + "_depth.pfm"), depth)
    print(f"# rendered {out} (threshold={thre})", file=sys.stderr)
    return 0


def _cmd_eval(args):
    dataset = fio.load_dataset(args.data)
    if dataset.clear is None or dataset.depth is None:
        raise ValueError("eval needs a dataset with clear counterparts and depth maps")
    test_ids = dataset.frame_indices("test")
    render_dir = Path(args.render_dir)
    renders = sorted(render_dir.glob("*.png"))
    renders = [p for p in renders if not p.stem.endswith("_alpha")]
    if len(renders) != len(test_ids):
        raise ValueError(
            f"{len(renders)} renders in {render_dir} but {len(test_ids)} test frames"
        )
    rows = []
    scores = []
    for fi in test_ids:
        name = dataset.names[fi]
        path = render_dir / f"{name}.png"
        if not path.exists():
            raise ValueError(f"missing render for frame {name}: {path}")
        img = fio.read_png(path)
        p = metrics.psnr(img, dataset.clear[fi])
        s = metrics.ssim(img, dataset.clear[fi])
        m = metrics.masked_psnr(img, dataset.clear[fi], dataset.depth[fi])
        rows.append((name, p, s, m))
        scores.append((p, s, m))
    means = np.mean(np.asarray(scores), axis=0)
    rows.append(("mean", float(means[0]), float(means[1]), float(means[2])))
    fio.write_csv(args.out, REPORT_HEADER, rows,
                  trailing_comments=["# colorspace=linear"])
    print(f"masked_psnr_mean={fio.format_float(float(means[2]))}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="foglift",
        description="Voxel radiance fields with automatic fog-removal thresholding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a paired foggy/clear dataset")
    p.add_argument("--preset", required=True, choices=sorted(scenegen.PRESET_BUILDERS))
    p.add_argument("--fog", type=float, default=None, help="override preset fog density")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("fit", help="fit a voxel field to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--rays", type=int, default=1024)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--lr", type=float, default=train.TrainConfig.learning_rate)
    p.add_argument("--beta", type=float, default=train.TrainConfig.softplus_beta)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    def add_estimate_flags(p):
        p.add_argument("--qmax", type=float, default=8.0)
        p.add_argument("--qstep", type=float, default=0.05)
        p.add_argument("--window", type=int, default=21)
        p.add_argument("--order", type=int, default=2)
        p.add_argument("--batch", type=int, default=4096)
        p.add_argument("--n-samples", type=int, default=128)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("estimate", help="estimate the fog-removal density threshold")
    p.add_argument("--field", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--curve", default=None, help="write the contrast curve CSV here")
    add_estimate_flags(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("render", help="render a pose with an optional density threshold")
    p.add_argument("--field", required=True)
    p.add_argument("--data", default=None, help="dataset for pose indices / auto estimation")
    p.add_argument("--pose", required=True, help="frame index into --data, or a pose JSON file")
    p.add_argument("--thre", default="0", help="density threshold, or 'auto'")
    p.add_argument("--out", required=True)
    add_estimate_flags(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="score renders against clear ground truth")
    p.add_argument("--render-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, threshold.NoPlateauError,
            metrics.NoForegroundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
