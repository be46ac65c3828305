"""paretofact <gen-data|train|audit|report|verify> --config PATH [--set key=value]... [--anchor I] [--out DIR]"""
from __future__ import annotations

import argparse
import sys
import time

from . import pipeline
from .config import load_config
from .errors import ContractError, FormatError, TrainingError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paretofact", description="Multi-objective counterfactual auditing.")
    p.add_argument("command", choices=["gen-data", "train", "audit", "report", "verify"])
    p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path; VALUE is parsed as JSON when possible")
    p.add_argument("--anchor", type=int, help="anchor position within the holdout candidates (audit only)")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    return p


def cmd_gen_data(cfg) -> None:
    dataset, split = pipeline.gen_data(cfg)
    print(f"wrote {len(dataset)} instances to {pipeline.data_dir(cfg)}")
    for name, count in zip(dataset.class_names, dataset.class_counts()):
        print(f"  {name}: {count}")
    print(f"  bias: {cfg.dataset.bias}")
    print(f"  split sizes: gan_train={len(split.gan_train)} target_train={len(split.target_train)} "
          f"target_holdout={len(split.target_holdout)}")


def cmd_train(cfg) -> None:
    t0 = time.perf_counter()
    _, _, metrics = pipeline.train(cfg)
    last = metrics["gan_history"][-1] if metrics["gan_history"] else {}
    print(f"trained in {time.perf_counter() - t0:.1f}s; models in {pipeline.models_dir(cfg)}")
    if last:
        print(f"  final epoch: rec={last['rec']:.4f} g_total={last['g_total']:.4f} d_total={last['d_total']:.4f}")
    print(f"  target holdout accuracy: {metrics['target_holdout_accuracy']:.4f}")


def cmd_audit(cfg, anchor) -> None:
    t0 = time.perf_counter()
    result = pipeline.audit(cfg, anchor)
    rep = result.report
    print(f"audit of dataset index {result.anchor_index} (predicted {rep.class_names[rep.anchor_class]}) "
          f"in {time.perf_counter() - t0:.1f}s")
    print(f"  evaluations: {result.evaluations}; front size: {len(rep)}")
    print(f"  plausible and flipped: {rep.plausible_flip_fraction():.2f}")
    print(f"  report in {pipeline.audit_dir(cfg)}")


def cmd_report(cfg) -> None:
    summary = pipeline.report(cfg)
    print(f"report in {pipeline.report_dir(cfg)}")
    for name, v in summary["mean_abs_delta"].items():
        print(f"  mean |delta| {name}: {v:.3f}")


def cmd_verify() -> int:
    from .verify import run_checks

    results = run_checks()
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(r.name for r in failed))
        return 1
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify()
    try:
        overrides = list(args.overrides)
        if args.out is not None:
            overrides.append(f"out={args.out}")
        cfg = load_config(args.config, overrides)
        if args.anchor is not None and args.command != "audit":
            raise ContractError("--anchor only applies to the audit command")
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "audit":
            cmd_audit(cfg, args.anchor)
        else:
            cmd_report(cfg)
    except (ContractError, FormatError, TrainingError, FileNotFoundError, OSError) as exc:
        print(f"paretofact {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
