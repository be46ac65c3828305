"""Helpers shared by the experiment scripts."""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from paretofact import pipeline
from paretofact.config import RunConfig, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def parser(description: str, config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / config), help="JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--seeds", type=int, default=10, help="number of seeded audits, seeds 0..n-1")
    p.add_argument("--skip-train", action="store_true", help="reuse data and models already in the output directory")
    return p


def prepare(config: str, overrides: list[str], out: str | None, skip_train: bool) -> RunConfig:
    """Load a config and make sure its data and trained models exist."""
    if out:
        overrides = [*overrides, f"out={Path(out).resolve()}"]
    cfg = load_config(config, overrides)
    if not skip_train:
        pipeline.gen_data(cfg)
        _, _, metrics = pipeline.train(cfg)
        print(f"{cfg.out_dir}: target holdout accuracy {metrics['target_holdout_accuracy']:.3f}")
    return cfg


def save(cfg: RunConfig, name: str, doc: dict) -> Path:
    path = cfg.out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return path
