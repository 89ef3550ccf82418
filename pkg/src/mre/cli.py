"""Command line entry point: ``mre {synth,train,eval,ablate,analyze}``.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import SynthConfig, load_dataset, save_dataset, split_and_batch, synth_generate
from .exceptions import NumericalError, ValidationError
from .harness import (RunReport, TrainConfig, ablation_run, evaluate, load_checkpoint, relevance_report,
                      run_report_markdown, save_checkpoint, train)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

logger = logging.getLogger("mre")


def _cmd_synth(args):
    cfg = SynthConfig(n_samples=args.n, n_classes=args.classes, p_irr=args.p_irr, sigma=args.sigma,
                      separation=args.separation, dims=args.dims, lengths=args.lengths, seed=args.seed)
    path = save_dataset(synth_generate(cfg), args.out)
    print(f"wrote {cfg.n_samples} samples to {path}")


def _load_config(path) -> TrainConfig:
    return TrainConfig.from_json(path) if path else TrainConfig()


def _cmd_train(args):
    cfg = _load_config(args.config)
    dataset = load_dataset(args.data)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for seed in seeds:
        model, record = train(cfg, dataset, seed)
        records.append(record)
        ckpt = save_checkpoint(out / f"model_seed{seed}.json", model, cfg,
                               meta={"seed": seed, "data": str(args.data)})
        print(f"seed {seed}: test acc {100 * record.test_acc:.2f}  F1 {100 * record.test_f1:.2f}  -> {ckpt}")
    report = RunReport(cfg.to_dict(), records)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.md").write_text(run_report_markdown(report), encoding="utf-8")
    print(run_report_markdown(report), end="")


def _cmd_eval(args):
    model, cfg, _ = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    if tuple(dataset.dims) != tuple(model.config.dims) or dataset.n_classes > model.config.n_classes:
        raise ValidationError(f"dataset dims {dataset.dims}/{dataset.n_classes} classes do not match "
                              f"model {model.config.dims}/{model.config.n_classes}")
    splits = split_and_batch(dataset, cfg.split_ratios, cfg.batch_size, cfg.split_seed)
    acc, f1 = evaluate(model, splits.split(args.split), cfg.f1_average)
    print(json.dumps({"split": args.split, "n": len(splits.split(args.split)), "acc": acc, "f1": f1}))


def _cmd_ablate(args):
    cfg = _load_config(args.config)
    dataset = load_dataset(args.data)
    report = ablation_run(cfg, dataset, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "ablation.md").write_text(report.to_markdown(), encoding="utf-8")
    (out / "ablation.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(report.to_markdown(), end="")


def _cmd_analyze(args):
    dataset = load_dataset(args.data)
    report = relevance_report(dataset, neutral=args.neutral)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in report.modalities:
        (out / f"consistency_{m.modality}.csv").write_text(report.matrix_csv(m.modality), encoding="utf-8")
    (out / "consistency.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "consistency.md").write_text(report.summary() + "\n", encoding="utf-8")
    print(report.summary())


def _triple(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated integers")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mre", description="Multimodal relevance estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--p-irr", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--separation", type=float, default=SynthConfig.separation)
    p.add_argument("--dims", type=_triple, default=(8, 8, 8))
    p.add_argument("--lengths", type=_triple, default=(6, 6, 6))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant loss ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("analyze", help="cross-modal label consistency statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--neutral", type=int)
    p.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
