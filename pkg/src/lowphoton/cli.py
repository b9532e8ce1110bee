"""Command line interface: ``lowphoton <command> ...`` or ``python -m lowphoton``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import LA_FORMAT, MPDNET_FORMAT, CheckpointError, load_checkpoint
from .imaging_sim import PhotonSimParams, synthesize_raw, demosaic_bilinear
from .training import RunConfig

log = logging.getLogger("lowphoton")


def parse_ppp(text: str) -> list[float]:
    """``"1..10"`` (integer steps), ``"0.5..2:0.5"`` or ``"1,2,4"``."""
    text = text.strip()
    if ".." in text:
        lo, _, rest = text.partition("..")
        hi, _, step = rest.partition(":")
        lo, hi, step = float(lo), float(hi), float(step or 1)
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad ppp range {text!r}")
        n = int(round((hi - lo) / step)) + 1
        grid = [lo + i * step for i in range(n)]
    else:
        grid = [float(v) for v in text.split(",") if v.strip()]
    if not grid or min(grid) <= 0:
        raise argparse.ArgumentTypeError(f"ppp values must be positive: {text!r}")
    return grid


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def _run_config(args, stage) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    dirs = {s: getattr(args, f"{s}_dir", None) for s in data_mod.SPLITS}
    dirs = {k: v for k, v in dirs.items() if v}
    if dirs:
        overrides["data_dirs"] = dirs
    overrides["stage"] = stage
    if getattr(args, "config", None):
        return RunConfig.from_json(args.config, **overrides)
    if getattr(args, "toy", False):
        return RunConfig.toy(**overrides)
    return RunConfig(**overrides)


def _manifest(config: RunConfig) -> data_mod.DatasetManifest:
    if config.manifest:
        return data_mod.DatasetManifest.load(config.manifest)
    if config.data_dirs:
        return data_mod.DatasetManifest.from_dirs(**config.data_dirs)
    raise SystemExit("no data given: use --manifest, --train-dir/--val-dir/--test-dir "
                     "or a config with 'manifest' or 'data_dirs'")


def _split(manifest, name):
    return list(data_mod.load_dataset(manifest.split(name)))


# commands

def cmd_synthesize(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    paths = data_mod.list_images(args.input_dir)
    if not paths:
        raise SystemExit(f"no images in {args.input_dir}")
    rows = []
    for i, p in enumerate(paths):
        gt = data_mod.read_rgb(p)
        ppp = float(rng.uniform(args.ppp_min, args.ppp_max))
        seed = int(rng.integers(2**31))
        params = PhotonSimParams(ppp=ppp, read_noise_sigma=args.read_noise_sigma, seed=seed)
        raw = synthesize_raw(gt, params)
        noisy = demosaic_bilinear(raw)
        data_mod.write_rgb(out / f"{p.stem}.png", noisy)
        if not args.no_raw:
            data_mod.write_raw(out / f"{p.stem}_raw.png", raw,
                               {"source": p.name, "ppp": ppp, "seed": seed,
                                "read_noise_sigma": args.read_noise_sigma})
        rows.append({"source": p.name, "output": f"{p.stem}.png", "ppp": ppp, "seed": seed})
    with open(out / "synthesis.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"images": len(rows), "output_dir": str(out)}))


def cmd_make_dataset(args):
    m = data_mod.make_sample_dataset(args.output_dir, args.n_train, args.n_val, args.n_test,
                                     args.size, args.seed)
    counts = {s: len(m.split(s)) for s in data_mod.SPLITS}
    print(json.dumps({"manifest": str(Path(args.output_dir) / "manifest.json"), **counts}))


def _train(args, stage):
    from .plotting import plot_history
    from .training import train_denoiser, train_la

    config = _run_config(args, stage)
    manifest = _manifest(config)
    train, val = _split(manifest, "train"), _split(manifest, "val")
    if not train:
        raise SystemExit("training split is empty")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"{stage}_config.json", config.to_dict())
    fn = train_denoiser if stage == "train-denoiser" else train_la
    result = fn(config, train, val, out_dir=out)
    plot_history(result.history, out / f"{stage}_history.png",
                 "denoiser" if stage == "train-denoiser" else "LA")
    summary = {"checkpoint": str(result.checkpoint), "best_epoch": result.best_epoch,
               "best_val_psnr": result.best_val_psnr, "seconds": result.seconds}
    _write_json(out / f"{stage}_summary.json", summary)
    print(json.dumps(summary))


def cmd_restore(args):
    from .pipeline import restore
    from .plotting import plot_images

    try:
        denoiser = load_checkpoint(args.denoiser, expect=MPDNET_FORMAT)[0]
        la = load_checkpoint(args.la, expect=LA_FORMAT)[0] if args.la else None
    except CheckpointError as exc:
        raise SystemExit(str(exc))
    img = data_mod.read_rgb(args.input)
    res = restore(img, denoiser, la, k=args.k, keep_intermediates=bool(args.intermediates))
    data_mod.write_rgb(args.output, res.image)
    if args.intermediates:
        d = Path(args.intermediates)
        d.mkdir(parents=True, exist_ok=True)
        panels = {"input": img, **res.intermediates, "denoised": res.denoised}
        if res.illumination is not None:
            panels["illumination"] = res.illumination
        panels["output"] = res.image
        for name, arr in res.intermediates.items():
            np.save(d / f"{name}.npy", arr)
        plot_images(panels, d / "intermediates.png")
    print(json.dumps({"output": str(args.output), "k": args.k}))


def cmd_evaluate(args):
    from .metrics import evaluate_model, make_lpips
    from .pipeline import restore
    from .plotting import plot_metric_curves

    config = _run_config(args, "evaluate")
    images = _split(_manifest(config), args.split)
    if not images:
        raise SystemExit(f"{args.split} split is empty")
    lpips_fn = make_lpips() if args.lpips else None
    reports = {}
    if not args.no_baseline:
        reports["noisy input"] = evaluate_model(None, images, args.ppp, seed=config.seed,
                                                read_noise_sigma=config.read_noise_sigma,
                                                lpips_fn=lpips_fn, label="noisy input")
    if args.denoiser:
        denoiser = load_checkpoint(args.denoiser, expect=MPDNET_FORMAT)[0]
        la = load_checkpoint(args.la, expect=LA_FORMAT)[0] if args.la else None
        label = "restored" if la is None else "restored + LA"
        reports[label] = evaluate_model(lambda x: restore(x, denoiser, la, k=args.k).image,
                                        images, args.ppp, seed=config.seed,
                                        read_noise_sigma=config.read_noise_sigma,
                                        lpips_fn=lpips_fn, label=label)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {k: r.to_dict() for k, r in reports.items()})
    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "ppp", "psnr", "ssim", "lpips", "n_images"])
        for label, r in reports.items():
            for ppp, b in sorted(r.per_ppp.items()):
                writer.writerow([label, ppp, f"{b.psnr:.4f}", f"{b.ssim:.4f}",
                                 "" if b.lpips is None else f"{b.lpips:.4f}", b.n_images])
    plot_metric_curves(reports, out / "metrics.png")
    print(json.dumps({k: {"psnr": r.aggregate.psnr, "ssim": r.aggregate.ssim}
                      for k, r in reports.items()}))


def cmd_ablate(args):
    from .pipeline import direction_checks, rows_to_csv, run_ablation_suite
    from .plotting import plot_ablation

    config = _run_config(args, "ablate")
    manifest = _manifest(config)
    train, val, test = (_split(manifest, s) for s in data_mod.SPLITS)
    rows = run_ablation_suite(config, train, val, test, args.ppp, variants=args.variants,
                              la_epochs=args.la_epochs, eval_seed=config.seed)
    out = Path(args.output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_to_csv(rows, out / "ablation.csv")
    checks = direction_checks(rows)
    _write_json(out / "ablation.json", {"rows": [dataclasses.asdict(r) for r in rows],
                                        "direction_checks": checks,
                                        "run_config": config.to_dict()})
    plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r.name:22s} params={r.params:9d} psnr={r.psnr:7.3f} ssim={r.ssim:.4f} {r.note}")
    for name, ok in checks.items():
        print(f"{'ok  ' if ok else 'MISS'} {name}")


def cmd_pyramid_roundtrip(args):
    import torch

    from .pyramid import laplacian_decompose, laplacian_reconstruct

    img = data_mod.read_rgb(args.input)
    h, w = img.shape[:2]
    img = img[:h - h % 4, :w - w % 4]
    x = torch.from_numpy(img).permute(2, 0, 1).contiguous()
    top, highs = laplacian_decompose(x, levels=2)
    rec = laplacian_reconstruct(top, highs)
    err = float((rec - x).abs().max())
    result = {"input": str(args.input), "shape": list(img.shape), "max_abs_error": err,
              "ok": err < args.tol}
    if args.output_dir:
        from .plotting import plot_images

        to = lambda t: t.permute(1, 2, 0).numpy()
        plot_images({"input": img, "t2": to(top), "h_half": to(highs[0]),
                     "h_full": to(highs[1]), "reconstruction": to(rec)},
                    Path(args.output_dir) / "pyramid.png", cols=5)
        _write_json(Path(args.output_dir) / "pyramid.json", result)
    print(json.dumps(result))
    return 0 if result["ok"] else 1


# parser

def _add_data_args(p):
    p.add_argument("--config", help="JSON RunConfig; flags given here override it")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--train-dir")
    p.add_argument("--val-dir")
    p.add_argument("--test-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--read-noise-sigma", type=float)


def _add_train_args(p):
    _add_data_args(p)
    p.add_argument("--output-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-period", type=int)
    p.add_argument("--toy", action="store_true", help="96px crops, 30 epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowphoton", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="low-photon versions of a folder of images")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--ppp-min", type=float, default=1.0)
    p.add_argument("--ppp-max", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--read-noise-sigma", type=float, default=0.25)
    p.add_argument("--no-raw", action="store_true", help="skip the 16-bit mosaic files")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("make-dataset", help="small train/val/test set from bundled photos")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n-train", type=int, default=50)
    p.add_argument("--n-val", type=int, default=10)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-denoiser", help="train the multi-scale denoiser")
    _add_train_args(p)
    p.add_argument("--ablation")
    p.add_argument("--k-sharpness", type=float)
    p.add_argument("--perceptual-loss", choices=("on", "off", "auto"))
    p.add_argument("--perceptual-weights")
    p.set_defaults(func=lambda a: _train(a, "train-denoiser"))

    p = sub.add_parser("train-la", help="train the light adjustment module")
    _add_train_args(p)
    p.add_argument("--la-variant", choices=("illumination", "residual"))
    p.add_argument("--eta", type=float)
    p.set_defaults(func=lambda a: _train(a, "train-la"))

    p = sub.add_parser("restore", help="restore one image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--denoiser", required=True, help="denoiser checkpoint")
    p.add_argument("--la", help="light adjustment checkpoint")
    p.add_argument("--k", type=float, default=None, help="high-frequency gain")
    p.add_argument("--intermediates", help="directory for pyramid outputs and a figure")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="PSNR/SSIM per photon level")
    _add_data_args(p)
    p.add_argument("--ppp", type=parse_ppp, default=parse_ppp("1..10"))
    p.add_argument("--denoiser")
    p.add_argument("--la")
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--split", default="test", choices=data_mod.SPLITS)
    p.add_argument("--output-dir", default="eval")
    p.add_argument("--lpips", action="store_true", help="needs the optional lpips package")
    p.add_argument("--no-baseline", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score the ablation variants")
    _add_train_args(p)
    p.add_argument("--ppp", type=parse_ppp, default=parse_ppp("1,4,10"))
    p.add_argument("--variants", type=lambda s: s.split(","), default=None)
    p.add_argument("--la-epochs", type=int)
    p.add_argument("--channel-schedule", type=lambda s: tuple(int(v) for v in s.split(",")))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pyramid-roundtrip", help="check decompose/reconstruct on an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_pyramid_roundtrip)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    code = args.func(args)
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
