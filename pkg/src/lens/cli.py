"""Command-line entry points: infer, train, gradcheck, eval, route."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .interchange import (export_pgm, read_tensor, write_keypoints_txt,
                          write_metrics_csv)
from .objectives import ciou, giou
from .pipeline import LensPipeline, Sample
from .router import route_intent
from .synthetic import BlobTask
from .trainer import (ParameterStore, fd_gradient_check, fit_synthetic,
                      save_checkpoint, toy_fit_config)


def _square_grid(n: int) -> tuple[int, int]:
    return (n, n)


def _load_manifest_sample(manifest_path: Path, config: RunConfig) -> Sample:
    """Build a Sample from an exported feature manifest (see the extractor)."""
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    by_role = {entry["role"]: base / entry["path"] for entry in manifest["files"]}
    f_i = torch.from_numpy(read_tensor(by_role["image_features"]))
    f_t = torch.from_numpy(read_tensor(by_role["text_features"]))
    emb = torch.from_numpy(read_tensor(by_role["sam_embedding"]))
    if emb.ndim != 3:
        raise ValueError("sam_embedding must be (h_e, w_e, d_s)")
    grid_n = int(round(f_i.shape[0] ** 0.5))
    if grid_n * grid_n != f_i.shape[0]:
        raise ValueError(f"image token count {f_i.shape[0]} is not a square grid")
    grid = (grid_n, grid_n)
    h_out = emb.shape[0] * config.upsample_factor
    w_out = emb.shape[1] * config.upsample_factor
    if "gt_mask" in by_role:
        gt = torch.from_numpy(read_tensor(by_role["gt_mask"]))
    else:
        gt = torch.zeros(h_out, w_out, dtype=torch.float64)
    gt_small = torch.zeros(grid, dtype=torch.float64)
    return Sample(f_i=f_i, f_t=f_t, image_embedding=emb, gt_mask=gt,
                  gt_small=gt_small, grid=grid)


def _cmd_infer(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        config = RunConfig(grid=_square_grid(int(round(manifest["L_i"] ** 0.5))),
                           d=manifest["d"], d_s=args.d_s, seed=args.seed)
        sample = _load_manifest_sample(Path(args.manifest), config)
    else:
        config = toy_fit_config(grid=_square_grid(args.grid), seed=args.seed)
        task = BlobTask(config, seed=args.seed)
        sample = task.generate(np.random.default_rng(args.seed))
    pipeline = LensPipeline(config)
    pipeline.reset_parameters(args.seed)
    with torch.no_grad():
        out = pipeline(sample, use_locals=True)
    export_pgm(out.mask_prob, out_dir / "mask.pgm")
    write_keypoints_txt(out_dir / "keypoints.txt", out.keypoints)
    print(f"wrote {out_dir / 'mask.pgm'} and {out_dir / 'keypoints.txt'} "
          f"({len(out.keypoints)} keypoints)")
    return 0


def _cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = toy_fit_config(grid=_square_grid(args.grid), seed=args.seed,
                            learning_rate=args.lr)
    pipeline, report = fit_synthetic(config, steps=args.steps, seed=args.seed)
    save_checkpoint(out_dir / "checkpoint", ParameterStore(pipeline))
    write_metrics_csv(out_dir / "metrics.csv", report.history)
    print(f"steps={args.steps} best_total={report.best_total:.6f} "
          f"gIoU={report.final_giou:.4f} cIoU={report.final_ciou:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = RunConfig(grid=_square_grid(args.grid), d=args.d, d_s=args.d,
                       head_count=4, m=args.m, seed=args.seed)
    task = BlobTask(config, seed=args.seed)
    sample = task.generate(np.random.default_rng(args.seed))
    pipeline = LensPipeline(config)
    pipeline.reset_parameters(args.seed)
    report = fd_gradient_check(sample, ParameterStore(pipeline),
                               step=args.step, subset=args.subset, seed=args.seed)
    print(f"checked={report.checked} max_rel_error={report.max_rel_error:.3e}")
    if report.offending:
        print("offending parameters:", ", ".join(report.offending))
        return 1
    return 0


def _cmd_eval(args) -> int:
    directory = Path(args.dir)
    preds = sorted(directory.glob("pred_*.ltns"))
    if not preds:
        print("no pred_*.ltns files found", file=sys.stderr)
        return 1
    pairs = []
    for pred_path in preds:
        gt_path = directory / pred_path.name.replace("pred_", "gt_", 1)
        pairs.append((read_tensor(pred_path), read_tensor(gt_path)))
    print(f"gIoU={giou(pairs):.6g} cIoU={ciou(pairs):.6g}")
    return 0


def _cmd_route(args) -> int:
    intent = route_intent(None, args.text, args.has_image)
    print(intent.value)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lens")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run the pipeline, emit mask PGM + keypoints")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--manifest", help="exported feature manifest (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--d-s", type=int, default=32)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("train", help="train on the synthetic blob task")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--subset", type=float, default=0.02)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("eval", help="gIoU/cIoU over pred_/gt_ tensor pairs")
    p.add_argument("--dir", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("route", help="classify a text instruction's intent")
    p.add_argument("--text", required=True)
    p.add_argument("--has-image", action="store_true")
    p.set_defaults(fn=_cmd_route)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failure -> exit 1, usage errors exit 2 via argparse
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
