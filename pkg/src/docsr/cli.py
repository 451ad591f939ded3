"""Command-line entry point: prepare | train | matrix | eval | plot.

One verb per pipeline stage. Exit code 0 means complete success;
partial failures (unreadable source files, failed matrix rows) are
enumerated on stderr and exit nonzero. All randomness flows from the
config's top-level seed; `--seed` overrides it for every stage.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from docsr import models
from docsr.config import ExperimentConfig, load_config, load_matrix
from docsr.core import save_png
from docsr.data import DatasetSpec, load_patch_pairs, prepare_dataset
from docsr.evaluation import (IOU_MODES, ReportRow, evaluate_model,
                              get_perceptual_plugin, render_report)
from docsr.plotting import plot_metrics
from docsr.synthdoc import generate_synthetic_document
from docsr.train import train_run, training_matrix


def _log(msg: str) -> None:
    print(msg, flush=True)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_prepare(args) -> int:
    root = Path(args.root)
    if args.synth:
        hr_dir = root / "hr"
        hr_dir.mkdir(parents=True, exist_ok=True)
        h, w = args.synth_size
        for i in range(args.synth):
            page, _ = generate_synthetic_document(seed=args.seed * 100003 + i, size=(h, w))
            save_png(hr_dir / f"synth{i:04d}.png", page)
        _log(f"generated {args.synth} synthetic pages ({h}x{w}) under {hr_dir}")
    if not root.exists():
        _err(f"error: dataset root {root} does not exist")
        return 1
    spec = DatasetSpec(scale=args.scale, patch_size_hr=args.patch_size,
                       stride_hr=args.stride, split_fraction=args.fraction,
                       seed=args.seed)
    errors: list[str] = []
    manifest = prepare_dataset(root, spec, errors=errors)
    _log(f"prepared {len(manifest['train_ids'])} train / {len(manifest['test_ids'])} test "
         f"documents; {len(manifest['patches']['train'])} train / "
         f"{len(manifest['patches']['test'])} test patches")
    for e in errors:
        _err(f"error: {e}")
    return 1 if errors else 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output)
    run_dir = train_run(cfg, log=_log)
    _log(f"run complete: {run_dir}")
    return 0


def cmd_matrix(args) -> int:
    configs = load_matrix(args.config)
    if args.seed is not None:
        import dataclasses
        configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
    if args.output is not None:
        import dataclasses
        configs = [dataclasses.replace(c, output_dir=args.output) for c in configs]
    results = training_matrix(configs, jobs=args.jobs, log=_log)
    out_root = Path(args.output or configs[0].output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    status_path = out_root / "matrix_status.csv"
    with open(status_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "ok", "run_dir", "error"])
        for r in results:
            writer.writerow([r.label, str(r.ok).lower(), r.run_dir or "", r.error or ""])
    failed = [r for r in results if not r.ok]
    for r in failed:
        _err(f"error: row {r.label!r} failed: {r.error}")
    _log(f"matrix: {len(results) - len(failed)}/{len(results)} rows succeeded "
         f"({status_path})")
    return 1 if failed else 0


def _eval_one(cfg: ExperimentConfig, args, report_dir: Path) -> ReportRow:
    from docsr.train import resolve_backend

    pairs = load_patch_pairs(Path(cfg.data.root), "test")
    backend = resolve_backend(cfg)
    model = None
    if not args.identity_bypass:
        ckpt_path = args.checkpoint or Path(cfg.output_dir) / "runs" / cfg.label / "final.ckpt"
        model = models.load_model(ckpt_path)
        if model.config != cfg.model:
            raise ValueError(f"checkpoint {ckpt_path} model config does not match {cfg.label}")
    plugin = get_perceptual_plugin(args.perceptual)
    losses_desc = "+".join(c.value for c in cfg.enabled_losses)
    return evaluate_model(
        model, pairs, backend, label=cfg.label, losses_desc=losses_desc,
        plugin=plugin, iou_mode=args.iou_mode, identity_bypass=args.identity_bypass,
        cache_root=Path(cfg.output_dir) / "cache",
        panels_dir=report_dir / "panels" / cfg.label, log=_log)


def cmd_eval(args) -> int:
    if args.matrix:
        configs = load_matrix(args.matrix)
    else:
        configs = [load_config(p, seed=args.seed, output_dir=args.output)
                   for p in args.config]
    if args.checkpoint and len(configs) > 1:
        _err("error: --checkpoint only applies to a single config")
        return 1
    report_dir = Path(args.output or configs[0].output_dir) / "report"
    rows = []
    datasets = []
    for cfg in configs:
        rows.append(_eval_one(cfg, args, report_dir))
        datasets.append(Path(cfg.data.root).name or "dataset")
    for dataset in sorted(set(datasets)):
        subset = [r for r, d in zip(rows, datasets) if d == dataset]
        csv_path, txt_path = render_report(subset, dataset, report_dir)
        _log(f"report: {csv_path} {txt_path}")
        _log(Path(txt_path).read_text().rstrip())
    return 0


def cmd_plot(args) -> int:
    metrics = Path(args.run) / "metrics.csv" if args.run else Path(args.metrics)
    out_dir = Path(args.output) if args.output else metrics.parent / "plots"
    paths = plot_metrics(metrics, out_dir)
    for k, p in sorted(paths.items()):
        _log(f"{k}: {p}")
    return 0


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docsr",
                                description="document super-resolution experiments")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build the patch dataset and manifest")
    sp.add_argument("--root", required=True, help="dataset root (hr/ inside, patches out)")
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--patch-size", type=int, default=128, help="HR patch size")
    sp.add_argument("--stride", type=int, default=128, help="HR patch stride")
    sp.add_argument("--fraction", type=float, default=0.7, help="train split fraction")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--synth", type=int, default=0, metavar="N",
                    help="generate N synthetic document pages into root/hr first")
    sp.add_argument("--synth-size", type=_size, default=(192, 256), metavar="HxW")
    sp.set_defaults(fn=cmd_prepare)

    st = sub.add_parser("train", help="run one training config")
    st.add_argument("--config", required=True)
    st.add_argument("--seed", type=int, default=None, help="override the config seed")
    st.add_argument("--output", default=None, help="override output_dir")
    st.set_defaults(fn=cmd_train)

    sm = sub.add_parser("matrix", help="run a grid of training rows")
    sm.add_argument("--config", required=True, help="matrix file (defaults + rows)")
    sm.add_argument("--jobs", type=int, default=1)
    sm.add_argument("--seed", type=int, default=None)
    sm.add_argument("--output", default=None)
    sm.set_defaults(fn=cmd_matrix)

    se = sub.add_parser("eval", help="score checkpoints on the test split")
    se.add_argument("--config", nargs="*", default=[], help="experiment config(s)")
    se.add_argument("--matrix", default=None, help="evaluate every row of a matrix file")
    se.add_argument("--checkpoint", default=None,
                    help="explicit checkpoint (single config only; default: the "
                         "config's final.ckpt)")
    se.add_argument("--seed", type=int, default=None)
    se.add_argument("--output", default=None)
    se.add_argument("--iou-mode", choices=IOU_MODES, default="mask")
    se.add_argument("--identity-bypass", action="store_true",
                    help="score hr against itself instead of the model output")
    se.add_argument("--perceptual", default=None,
                    help="perceptual metric plugin name (column is blank without one)")
    se.set_defaults(fn=cmd_eval)

    sl = sub.add_parser("plot", help="loss/weight curves from a run's metrics.csv")
    sl.add_argument("--metrics", default=None, help="path to metrics.csv")
    sl.add_argument("--run", default=None, help="run directory (uses its metrics.csv)")
    sl.add_argument("--output", default=None)
    sl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not args.config and not args.matrix:
        _err("error: eval needs --config or --matrix")
        return 2
    if args.command == "plot" and not args.metrics and not args.run:
        _err("error: plot needs --metrics or --run")
        return 2
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary: diagnostics, not tracebacks
        _err(f"error: {e}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
