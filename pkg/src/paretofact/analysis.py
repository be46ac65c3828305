"""Post-hoc analyses of counterfactual fronts and of the training data."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cgmf
from . import ganstack as gs
from . import objectives as ob
from .data import AnnotatedDataset
from .errors import ContractError, FormatError
from .metrics import diff_heatmap, luminance, luminance_image, ssim, ssim_rgb  # noqa: F401
from .moea import ParetoFront


# ---------------------------------------------------------------- dataset statistics

def class_luminance_map(dataset: AnnotatedDataset, label: int) -> np.ndarray:
    """Per-pixel mean luminance over every instance of ``label``."""
    members = dataset.images[dataset.labels == label]
    if len(members) == 0:
        raise ContractError(f"class {label} has no instances")
    lum = np.stack([luminance_image(img) for img in members])
    return lum.mean(axis=0)


@dataclass
class BiasTable:
    combinations: list[tuple[int, ...]]
    counts: np.ndarray  # (combinations, classes)
    class_names: list[str]
    attribute_names: list[str]

    def label(self, k: int) -> str:
        combo = self.combinations[k]
        return "+".join(self.attribute_names[i] for i in combo) if combo else "(all)"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combination", *self.class_names, "total"])
        for k in range(len(self.combinations)):
            row = self.counts[k].tolist()
            w.writerow([self.label(k), *row, sum(row)])
        return buf.getvalue()


def bias_table(dataset: AnnotatedDataset, combinations: Sequence[Sequence[int]], threshold: float = 0.5) -> BiasTable:
    """Per-class counts of instances having every attribute of each combination above ``threshold``."""
    n_attr = dataset.n_attributes
    high = dataset.attributes > threshold
    combos = [tuple(int(i) for i in c) for c in combinations]
    counts = np.zeros((len(combos), dataset.n_classes), dtype=np.int64)
    for k, combo in enumerate(combos):
        for i in combo:
            if not 0 <= i < n_attr:
                raise ContractError(f"unknown attribute index {i} (dataset has {n_attr})")
        mask = np.all(high[:, list(combo)], axis=1) if combo else np.ones(len(dataset), bool)
        counts[k] = np.bincount(dataset.labels[mask], minlength=dataset.n_classes)
    return BiasTable(combos, counts, list(dataset.class_names), list(dataset.attribute_names))


def ssim_matrix(images: Sequence[np.ndarray]) -> np.ndarray:
    n = len(images)
    lum = [luminance_image(x) for x in images]
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = ssim(lum[i], lum[j])
    return out


def diff_matrix(images: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the absolute-difference heatmap for every pair."""
    n = len(images)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = float(diff_heatmap(images[i], images[j]).mean())
    return out


# ---------------------------------------------------------------- front report

@dataclass
class MemberReport:
    delta: np.ndarray
    objectives: ob.ObjectiveTriple
    display: ob.DisplayTriple
    image: np.ndarray
    predicted: int
    probs: np.ndarray
    critic_gap: float


@dataclass
class FrontReport:
    members: list[MemberReport]
    anchor_image: np.ndarray
    anchor_attributes: np.ndarray
    anchor_class: int
    anchor_probs: np.ndarray
    target_class: int | None
    closest_index: int | None
    closest_image: np.ndarray | None
    closest_own_prob: float | None
    class_names: list[str]
    attribute_names: list[str]
    metadata: dict = field(default_factory=dict)
    # classes that are not counterfactual outcomes (e.g. an erased-image class)
    reject_classes: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def mean_abs_delta(self) -> np.ndarray:
        return np.abs(np.array([m.delta for m in self.members])).mean(axis=0)

    def flips(self, member: MemberReport) -> bool:
        """A flip lands on a class other than the anchor's that is not a reject class."""
        if self.target_class is not None:
            return member.predicted == self.target_class
        return member.predicted != self.anchor_class and member.predicted not in self.reject_classes

    def plausible_flip_fraction(self) -> float:
        hits = [m.display.plausible and self.flips(m) for m in self.members]
        return float(np.mean(hits)) if hits else 0.0


def closest_adversarial(probs: np.ndarray, labels: np.ndarray, anchor_class: int,
                        target_class: int | None = None) -> int | None:
    """Index of the other-class instance whose own-class probability is lowest."""
    labels = np.asarray(labels)
    mask = labels == target_class if target_class is not None else labels != anchor_class
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    own = probs[idx, labels[idx]]
    return int(idx[np.argmin(own)])


def front_report(front: ParetoFront, ctx: ob.AnchorContext, bundle: gs.ModelBundle, target: gs.TargetModel,
                 dataset: AnnotatedDataset | None = None, metadata: dict | None = None,
                 reject_classes=()) -> FrontReport:
    if len(front) == 0:
        raise ContractError("cannot report on an empty front")
    deltas = front.deltas.astype(np.float32)
    images = ob.render_batch(ctx, bundle, deltas)
    probs = target.probs(images)
    gaps = ob.critic_gap(ctx, bundle, images)
    members = []
    for k, m in enumerate(front.members):
        triple = ob.ObjectiveTriple(*(float(v) for v in m.objectives))
        members.append(MemberReport(
            m.delta.copy(), triple, ob.display_transform(triple),
            images[k].reshape(bundle.image_shape), int(np.argmax(probs[k])), probs[k], float(gaps[k]),
        ))
    closest = closest_img = closest_prob = None
    if dataset is not None and len(dataset):
        dprobs = target.probs(dataset.images)
        labels = np.where(np.isin(dataset.labels, list(reject_classes)), ctx.anchor_class, dataset.labels)
        closest = closest_adversarial(dprobs, labels, ctx.anchor_class, ctx.target_class)
        if closest is not None:
            closest_img = dataset.images[closest]
            closest_prob = float(dprobs[closest, dataset.labels[closest]])
    names = dataset.attribute_names if dataset is not None else [f"a{i}" for i in range(ctx.n_attributes)]
    return FrontReport(
        members, ctx.x_anchor, ctx.a, ctx.anchor_class, target.probs(ctx.x_anchor)[0], ctx.target_class,
        closest, closest_img, closest_prob, list(target.classes), list(names), dict(metadata or {}),
        [int(c) for c in reject_classes],
    )


# ---------------------------------------------------------------- serialization

def _csv_text(report: FrontReport) -> str:
    n = len(report.anchor_attributes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["member", *[f"delta_{i}" for i in range(n)], "f_gan", "f_adv", "f_att",
                "plausibility_display", "power_display", "plausible", "predicted_class"])
    for k, m in enumerate(report.members):
        w.writerow([k, *[repr(float(v)) for v in m.delta], *[repr(v) for v in m.objectives],
                    repr(m.display.plausibility), repr(m.display.power), int(m.display.plausible), m.predicted])
    return buf.getvalue()


def _svg_scatter(report: FrontReport, size: int = 320) -> str:
    pts = np.array([[m.display.plausibility, m.display.power, m.display.f_att] for m in report.members])
    pad = 30
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - 5}" y2="{size - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="5" x2="{pad}" y2="{size - pad}" stroke="black"/>',
        f'<text x="{size // 2}" y="{size - 8}" font-size="11" text-anchor="middle">1 - f_gan (plausibility)</text>',
        f'<text x="10" y="{size // 2}" font-size="11" transform="rotate(-90 10 {size // 2})" '
        f'text-anchor="middle">1 - f_adv (adversarial power)</text>',
    ]
    if lo[0] <= 0.5 <= hi[0]:
        x = pad + (0.5 - lo[0]) / span[0] * (size - pad - 10)
        lines.append(f'<line x1="{x:.2f}" y1="5" x2="{x:.2f}" y2="{size - pad}" stroke="gray" stroke-dasharray="4"/>')
    for p in pts:
        x = pad + (p[0] - lo[0]) / span[0] * (size - pad - 10)
        y = size - pad - (p[1] - lo[1]) / span[1] * (size - pad - 10)
        shade = int(200 * (p[2] - lo[2]) / span[2])
        lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="rgb({shade},60,{200 - shade})"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_report(report: FrontReport, directory) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    doc = {
        "metadata": report.metadata,
        "anchor": {
            "class": report.anchor_class,
            "attributes": [float(v) for v in report.anchor_attributes],
            "probs": [float(v) for v in report.anchor_probs],
        },
        "target_class": report.target_class,
        "reject_classes": report.reject_classes,
        "class_names": report.class_names,
        "attribute_names": report.attribute_names,
        "closest_adversarial": None if report.closest_index is None else {
            "index": report.closest_index, "own_class_prob": report.closest_own_prob,
        },
        "mean_abs_delta": [float(v) for v in report.mean_abs_delta()],
        "members": [{
            "delta": [float(v) for v in m.delta],
            "objectives": dict(zip(("f_gan", "f_adv", "f_att"), m.objectives)),
            "display": {"plausibility": m.display.plausibility, "power": m.display.power,
                        "f_att": m.display.f_att, "plausible": m.display.plausible},
            "predicted_class": m.predicted,
            "probs": [float(v) for v in m.probs],
            "critic_gap": m.critic_gap,
        } for m in report.members],
    }
    (directory / "front.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (directory / "front.csv").write_text(_csv_text(report))
    (directory / "front.svg").write_text(_svg_scatter(report))
    cgmf.write(directory / "images" / "anchor.cgmf", {"kind": "image", "role": "anchor"}, {"image": report.anchor_image})
    if report.closest_image is not None:
        cgmf.write(directory / "images" / "closest.cgmf", {"kind": "image", "role": "closest"},
                   {"image": report.closest_image})
    for k, m in enumerate(report.members):
        cgmf.write(directory / "images" / f"member_{k:03d}.cgmf", {"kind": "image", "role": "member", "index": k},
                   {"image": m.image})


def load_report(directory) -> FrontReport:
    directory = Path(directory)
    path = directory / "front.json"
    if not path.exists():
        raise FileNotFoundError(f"missing report file: {path}")
    try:
        doc = json.loads(path.read_text())
        anchor = doc["anchor"]
        members = []
        for k, m in enumerate(doc["members"]):
            _, t = cgmf.read(directory / "images" / f"member_{k:03d}.cgmf")
            o = m["objectives"]
            triple = ob.ObjectiveTriple(o["f_gan"], o["f_adv"], o["f_att"])
            members.append(MemberReport(
                np.asarray(m["delta"]), triple, ob.display_transform(triple), t["image"],
                int(m["predicted_class"]), np.asarray(m["probs"]), float(m["critic_gap"]),
            ))
        _, t = cgmf.read(directory / "images" / "anchor.cgmf")
        closest = doc.get("closest_adversarial")
        closest_img = None
        if closest is not None:
            closest_img = cgmf.read(directory / "images" / "closest.cgmf")[1]["image"]
        return FrontReport(
            members, t["image"], np.asarray(anchor["attributes"]), int(anchor["class"]),
            np.asarray(anchor["probs"]), doc.get("target_class"),
            None if closest is None else int(closest["index"]), closest_img,
            None if closest is None else float(closest["own_class_prob"]),
            list(doc["class_names"]), list(doc["attribute_names"]), dict(doc.get("metadata", {})),
            [int(c) for c in doc.get("reject_classes", [])],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed report in {directory}: {exc!r}") from None
