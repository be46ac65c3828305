"""Run stages: dataset generation, training, auditing and reporting.

Each stage reads what the previous one wrote under ``config.out``::

    data/     dataset.cgmf, manifest.json, split.json
    models/   bundle.cgmf, target.cgmf, metrics.json
    audit/    front.json, front.csv, front.svg, images/
    report/   bias.csv, ssim.csv, diff.csv, luminance.cgmf, summary.json
"""
from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, cgmf
from . import data as ds_mod
from . import ganstack as gs
from . import moea
from . import objectives as ob
from .config import RunConfig
from .data import AnnotatedDataset, SplitPlan
from .errors import ContractError


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def data_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "data"


def models_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "models"


def audit_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "audit"


def report_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "report"


# ---------------------------------------------------------------- gen-data

def build_dataset(cfg: RunConfig) -> tuple[AnnotatedDataset, SplitPlan]:
    d = cfg.dataset
    if d.source == "blobs":
        dataset = ds_mod.generate_blobs(d.seed, d.n, cfg.bias_spec)
    else:
        dataset = ds_mod.load_idx(d.idx_images, d.idx_labels)
    split = ds_mod.make_split(len(dataset), d.split, d.split_seed)
    if d.erased_class:
        n = len(dataset)
        dataset = ds_mod.augment_with_erased_class(dataset, d.erase_seed)
        split = ds_mod.split_with_copies(split, n)
    dataset.meta["config_seed"] = {"dataset": d.seed, "split": d.split_seed}
    return dataset, split


def gen_data(cfg: RunConfig) -> tuple[AnnotatedDataset, SplitPlan]:
    dataset, split = build_dataset(cfg)
    ds_mod.save_dataset(dataset, data_dir(cfg))
    _dump(data_dir(cfg) / "split.json", split.to_dict())
    return dataset, split


def load_data(cfg: RunConfig) -> tuple[AnnotatedDataset, SplitPlan]:
    dataset = ds_mod.load_dataset(data_dir(cfg))
    path = data_dir(cfg) / "split.json"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file: {path}")
    return dataset, SplitPlan.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------- train

def train(cfg: RunConfig) -> tuple[gs.ModelBundle, gs.TargetModel, dict]:
    dataset, split = load_data(cfg)
    split.check_disjoint()
    m = cfg.model
    bundle = gs.build_bundle(dataset.image_shape, dataset.n_attributes, m.latent, tuple(m.hidden), m.mode, m.seed)
    bundle, history = gs.train(bundle, dataset.subset(split.gan_train), cfg.train_config())
    target, acc = gs.train_target(dataset, split, cfg.target_config())
    out = models_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    gs.save_bundle(bundle, out / "bundle.cgmf")
    gs.save_target(target, out / "target.cgmf")
    metrics = {
        "config": cfg.record(),
        "gan_history": history,
        "target_holdout_accuracy": acc,
        "split_sizes": {k: len(getattr(split, k)) for k in ("gan_train", "target_train", "target_holdout")},
    }
    _dump(out / "metrics.json", metrics)
    return bundle, target, metrics


def load_models(cfg: RunConfig) -> tuple[gs.ModelBundle, gs.TargetModel]:
    out = models_dir(cfg)
    for name in ("bundle.cgmf", "target.cgmf"):
        if not (out / name).exists():
            raise FileNotFoundError(f"missing model file: {out / name}")
    return gs.load_bundle(out / "bundle.cgmf"), gs.load_target(out / "target.cgmf")


# ---------------------------------------------------------------- audit

def anchor_candidates(cfg: RunConfig, dataset: AnnotatedDataset, split: SplitPlan) -> np.ndarray:
    """Holdout indices an anchor may be drawn from, in split order."""
    idx = split.target_holdout
    classes = cfg.audit.anchor_classes
    if classes is None and cfg.dataset.erased_class:
        # erased copies are a robustness device, not subjects of the audit
        erased = dataset.meta.get("erased_class", {}).get("label")
        classes = [c for c in range(dataset.n_classes) if c != erased]
    if classes is not None:
        idx = idx[np.isin(dataset.labels[idx], classes)]
    return idx


def select_anchor(cfg: RunConfig, dataset: AnnotatedDataset, split: SplitPlan, anchor: int | None = None) -> int:
    """Dataset index of the anchor: position ``anchor`` among candidates, or a seeded draw."""
    cand = anchor_candidates(cfg, dataset, split)
    if len(cand) == 0:
        raise ContractError("no anchor candidates in target_holdout")
    if anchor is None:
        return int(np.random.default_rng(cfg.audit.anchor_seed).choice(cand))
    if not 0 <= anchor < len(cand):
        raise ContractError(f"anchor index {anchor} out of range [0, {len(cand)})")
    return int(cand[anchor])


@dataclass
class AuditResult:
    front: moea.ParetoFront
    report: analysis.FrontReport
    anchor_index: int
    evaluations: int


def run_audit(cfg: RunConfig, dataset: AnnotatedDataset, split: SplitPlan, bundle: gs.ModelBundle,
              target: gs.TargetModel, anchor: int | None = None) -> AuditResult:
    i = select_anchor(cfg, dataset, split, anchor)
    ctx = ob.make_context(bundle, target, dataset.images[i], dataset.attributes[i],
                          cfg.objective.target_class, cfg.objective.f_att)
    problem = ob.CounterfactualProblem(ctx, bundle, target)
    front = moea.evolve(problem, problem.n_var, cfg.nsga_config())
    meta = {
        "config": cfg.record(),
        "anchor_index": i,
        "anchor_label": int(dataset.labels[i]),
        "anchor_selector": "seeded" if anchor is None else f"holdout position {anchor}",
        "evaluations": problem.evaluations,
        "generations": front.generations,
    }
    erased = dataset.meta.get("erased_class")
    reject = [erased["label"]] if erased else []
    report = analysis.front_report(front, ctx, bundle, target, dataset.subset(split.target_train), meta, reject)
    if report.closest_index is not None:
        # report the index in the full dataset rather than in the target_train subset
        report.closest_index = int(split.target_train[report.closest_index])
    return AuditResult(front, report, i, problem.evaluations)


def audit(cfg: RunConfig, anchor: int | None = None) -> AuditResult:
    dataset, split = load_data(cfg)
    bundle, target = load_models(cfg)
    result = run_audit(cfg, dataset, split, bundle, target, anchor)
    analysis.save_report(result.report, audit_dir(cfg))
    return result


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Copy of ``cfg`` whose anchor draw and evolutionary search both use ``seed``."""
    out = copy.deepcopy(cfg)
    out.audit.anchor_seed = seed
    out.nsga = {**out.nsga, "seed": seed}
    return out


def seeded_audits(cfg: RunConfig, seeds) -> list[AuditResult]:
    """One in-memory audit per seed against the trained models of ``cfg``."""
    dataset, split = load_data(cfg)
    bundle, target = load_models(cfg)
    return [run_audit(with_seed(cfg, s), dataset, split, bundle, target) for s in seeds]


# ---------------------------------------------------------------- report

def _matrix_csv(matrix: np.ndarray, labels: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *labels])
    for name, row in zip(labels, matrix):
        w.writerow([name, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def report(cfg: RunConfig) -> dict:
    dataset, split = load_data(cfg)
    front = analysis.load_report(audit_dir(cfg))
    train_set = dataset.subset(split.target_train)
    out = report_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)

    maps = {}
    for label, name in enumerate(train_set.class_names):
        if np.any(train_set.labels == label):
            maps[f"class_{label}_{name}"] = analysis.class_luminance_map(train_set, label).astype(np.float32)
    cgmf.write(out / "luminance.cgmf", {"kind": "luminance_maps", "split": "target_train"}, maps)

    table = analysis.bias_table(train_set, cfg.report.combinations)
    (out / "bias.csv").write_text(table.to_csv())

    images = [front.anchor_image] + [m.image for m in front.members]
    labels = ["anchor"] + [f"member_{k:03d}" for k in range(len(front.members))]
    (out / "ssim.csv").write_text(_matrix_csv(analysis.ssim_matrix(images), labels))
    (out / "diff.csv").write_text(_matrix_csv(analysis.diff_matrix(images), labels))

    summary = {
        "front_size": len(front),
        "plausible_flip_fraction": front.plausible_flip_fraction(),
        "mean_abs_delta": dict(zip(front.attribute_names, (float(v) for v in front.mean_abs_delta()))),
        "luminance_maps": sorted(maps),
        "bias_rows": len(table.combinations),
    }
    _dump(out / "summary.json", summary)
    return summary
