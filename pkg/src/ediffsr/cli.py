"""Command-line entry point: train, sample, eval, synth, selfcheck.

Exit codes: 0 success, 1 internal failure, 2 usage error or missing input.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path


from . import metrics
from .config import configs_from_echo, load_config
from .data import GENERATORS, DatasetSpec, PairDataset, synth_dataset
from .imaging import load_png, save_png
from .model import EDiffSR
from .sampling import SampleConfig, sample_sr
from .selfcheck import run_selfcheck
from .training import CheckpointError, load_checkpoint, restore, train_loop

log = logging.getLogger("ediffsr")


class UsageError(Exception):
    pass


def model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    eanet_cfg, cpem_cfg, cpem_enabled, sched_cfg = configs_from_echo(ckpt.config_echo)
    model = EDiffSR(eanet_cfg, cpem_cfg, use_cpem=cpem_enabled)
    restore(model, ckpt)
    return model, sched_cfg.build()


def cmd_train(args):
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if not Path(cfg.train_dir).is_dir():
        raise UsageError(f"training directory not found: {cfg.train_dir}")
    dataset = PairDataset.from_dir(cfg.train_dir, cfg.cpem.scale)
    model = EDiffSR(cfg.eanet, cfg.cpem, use_cpem=cfg.cpem_enabled)
    s = cfg.schedule.build()
    resume = None
    if args.resume:
        if not Path(args.resume).is_file():
            raise UsageError(f"checkpoint not found: {args.resume}")
        resume = load_checkpoint(args.resume, expected_echo=model.config_echo() + "\n" + s.echo())
    ckpt, trace = train_loop(cfg.train, dataset, model, s, out_dir=cfg.out_dir, resume=resume)
    last = trace[-1][1] if trace else float("nan")
    print(f"trained to iteration {ckpt.iteration}, last loss {last:.5f}; outputs in {cfg.out_dir}")
    return 0


def _inputs(path: Path):
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise UsageError(f"no PNG files in {path}")
        return files
    if path.is_file():
        return [path]
    raise UsageError(f"input not found: {path}")


def cmd_sample(args):
    if not Path(args.ckpt).is_file():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    files = _inputs(Path(args.inp))
    model, s = model_from_checkpoint(args.ckpt)
    if args.steps is not None and not 1 <= args.steps <= s.T:
        raise UsageError(f"--steps must be in [1, {s.T}]")
    cfg = SampleConfig(steps=args.steps, stochastic=not args.deterministic, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        v = load_png(f)[None]
        sr = sample_sr(model, s, v, cfg)
        save_png(out / f.name, sr[0])
        print(f"{f} -> {out / f.name}")
    return 0


def cmd_eval(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"directory not found: {d}")
    pred = {f.name for f in pred_dir.glob("*.png")}
    gt = {f.name for f in gt_dir.glob("*.png")}
    unpaired = sorted(pred ^ gt)
    if unpaired:
        for name in unpaired:
            side = "pred" if name in pred else "gt"
            print(f"unpaired ({side} only): {name}", file=sys.stderr)
        return 2
    if not pred:
        raise UsageError("no PNG files to evaluate")
    rows = []
    for name in sorted(pred):
        a, b = load_png(pred_dir / name), load_png(gt_dir / name)
        if a.shape != b.shape:
            raise UsageError(f"size mismatch for {name}: {tuple(a.shape)} vs {tuple(b.shape)}")
        rows.append((name, metrics.psnr(a, b), metrics.ssim(a, b), metrics.avg_gradient(a)))
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "psnr", "ssim", "ag"])
        for row in rows:
            w.writerow([row[0]] + [f"{x:.6f}" for x in row[1:]])
        means = [sum(r[i] for r in rows) / len(rows) for i in (1, 2, 3)]
        w.writerow(["MEAN"] + [f"{x:.6f}" for x in means])
    print(f"{len(rows)} images: psnr {means[0]:.3f} dB, ssim {means[1]:.4f}, ag {means[2]:.5f}")
    print("ag = mean of sqrt((dx^2 + dy^2) / 2), forward differences on Rec.601 luminance")
    return 0


def cmd_synth(args):
    try:
        spec = DatasetSpec(count=args.count, hr_size=args.size, scale=args.scale, seed=args.seed,
                           family=args.family)
    except ValueError as e:
        raise UsageError(str(e)) from None
    manifest = synth_dataset(spec, args.out)
    print(f"wrote {len(manifest['files'])} images to {args.out}")
    return 0


def cmd_selfcheck(args):
    return 0 if run_selfcheck(quick=args.quick) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ediffsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="super-resolve PNG images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="PSNR/SSIM/AG report for paired directories")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("synth", help="generate a procedural HR image set")
    y.add_argument("--out", required=True)
    y.add_argument("--count", type=int, required=True)
    y.add_argument("--size", type=int, required=True)
    y.add_argument("--scale", type=int, required=True)
    y.add_argument("--seed", type=int, required=True)
    y.add_argument("--family", default="mixed", choices=sorted(GENERATORS))
    y.set_defaults(func=cmd_synth)

    c = sub.add_parser("selfcheck", help="run the oracle suites")
    c.add_argument("--quick", action="store_true")
    c.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal failure")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
