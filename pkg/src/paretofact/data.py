"""Annotated desk-scale datasets, IDX ingestion and leak-free splits."""
from __future__ import annotations

import colorsys
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cgmf
from .errors import ContractError, FormatError

BLOB_ATTRIBUTES = ("hue", "brightness", "radius", "vertical_bar", "border")
BLOB_CLASSES = ("dark", "bright")
BRIGHTNESS = 1
IMAGE_SIZE = 16
LABEL_NOISE = 0.05


@dataclass
class AnnotatedDataset:
    images: np.ndarray  # (n, H, W, C) float32 in [0, 1]
    attributes: np.ndarray  # (n, N) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_names: list[str]
    attribute_names: list[str]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index) -> "AnnotatedDataset":
        index = np.asarray(index, dtype=np.int64)
        return AnnotatedDataset(
            self.images[index], self.attributes[index], self.labels[index],
            list(self.class_names), list(self.attribute_names), dict(self.meta),
        )

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()


@dataclass(frozen=True)
class BiasSpec:
    attribute: int
    cls: int
    strength: float

    def validate(self, n_attributes: int = len(BLOB_ATTRIBUTES), n_classes: int = len(BLOB_CLASSES)) -> None:
        if not 0 <= self.attribute < n_attributes:
            raise ContractError(f"bias.attribute must be in [0, {n_attributes}), got {self.attribute}")
        if self.attribute == BRIGHTNESS:
            raise ContractError("bias.attribute cannot be the brightness attribute that defines the label")
        if not 0 <= self.cls < n_classes:
            raise ContractError(f"bias.cls must be in [0, {n_classes}), got {self.cls}")
        if not 0.0 <= self.strength <= 1.0:
            raise ContractError(f"bias.strength must be in [0, 1], got {self.strength}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "BiasSpec | None":
        if d is None:
            return None
        try:
            return cls(int(d["attribute"]), int(d["cls"]), float(d["strength"]))
        except KeyError as exc:
            raise ContractError(f"bias spec missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {"attribute": self.attribute, "cls": self.cls, "strength": self.strength}


# ---------------------------------------------------------------- blobs

_YY, _XX = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64) + 0.5
_DIST = np.hypot(_YY - IMAGE_SIZE / 2, _XX - IMAGE_SIZE / 2)
_BACKGROUND = np.array([0.12, 0.12, 0.14])
_BORDER = np.array([0.02, 0.02, 0.02])
_BAR = np.array([0.1, 0.85, 0.85])
_LUMA = np.array([0.2126, 0.7152, 0.0722])


def render_blob(attrs: np.ndarray) -> np.ndarray:
    """Render one 16x16 RGB disc from its five attributes (no noise)."""
    hue, bright, radius, bar, border = (float(v) for v in attrs)
    # hue sets chroma only; luminance is fixed by brightness
    color = np.array(colorsys.hsv_to_rgb(0.6 * hue, 0.5, 1.0))
    color *= (0.1 + 0.45 * bright) / float(_LUMA @ color)
    r = 4.0 + 3.0 * radius
    disc = np.clip(r + 0.5 - _DIST, 0.0, 1.0)
    thick = 0.5 + 1.0 * border
    ring = np.clip(_DIST - (r - thick) + 0.5, 0.0, 1.0) * disc
    img = _BACKGROUND * (1 - disc[..., None]) + color * disc[..., None]
    img = img * (1 - ring[..., None]) + _BORDER * ring[..., None]
    band = (np.abs(_XX - IMAGE_SIZE / 2) < 1.0).astype(np.float64) * bar
    img = img * (1 - band[..., None]) + _BAR * band[..., None]
    return img


def _resample_high(rng: np.random.Generator, count: int, p_high: float) -> np.ndarray:
    high = rng.random(count) < p_high
    return np.where(high, rng.uniform(0.5, 1.0, count), rng.uniform(0.0, 0.5, count))


def generate_blobs(seed: int, n: int, bias: BiasSpec | None = None, noise: float = 0.02) -> AnnotatedDataset:
    """Procedural colored-disc dataset with five continuous attributes.

    Label is 1 ("bright") iff brightness > 0.5, then flipped with 5%
    probability. A bias spec resamples one attribute so that it is "high"
    (> 0.5) with probability ``strength`` inside class ``cls`` and with
    probability ``1 - strength`` in the other class.
    """
    if n < 50:
        raise ContractError(f"generate_blobs needs n >= 50, got {n}")
    if bias is not None:
        bias.validate()
    rng = np.random.default_rng(seed)
    attrs = rng.random((n, len(BLOB_ATTRIBUTES)))
    labels = (attrs[:, BRIGHTNESS] > 0.5).astype(np.int64)
    flip = rng.random(n) < LABEL_NOISE
    labels[flip] = 1 - labels[flip]
    if bias is not None:
        for c in range(len(BLOB_CLASSES)):
            members = np.flatnonzero(labels == c)
            p = bias.strength if c == bias.cls else 1.0 - bias.strength
            attrs[members, bias.attribute] = _resample_high(rng, members.size, p)
    images = np.stack([render_blob(a) for a in attrs])
    images = np.clip(images + rng.normal(0.0, noise, images.shape), 0.0, 1.0)
    meta = {"source": "blobs", "seed": seed, "n": n, "bias": bias.to_dict() if bias else None}
    return AnnotatedDataset(
        images.astype(np.float32), attrs.astype(np.float32), labels,
        list(BLOB_CLASSES), list(BLOB_ATTRIBUTES), meta,
    )


def augment_with_erased_class(dataset: AnnotatedDataset, seed: int) -> AnnotatedDataset:
    """Append one erased copy of every instance under a new class label.

    Each copy has a random rectangle covering 25-50% of the image zeroed out.
    The rectangles are recorded in ``meta["erase_boxes"]`` as (top, left, h, w).
    """
    if len(dataset) == 0:
        raise ContractError("cannot augment an empty dataset")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    H, W = dataset.images.shape[1:3]
    erased = dataset.images.copy()
    boxes = []
    for i in range(n):
        area = rng.uniform(0.25, 0.5) * H * W
        w = int(rng.integers(int(np.ceil(area / H)), W + 1))
        h = int(np.clip(round(area / w), 1, H))
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        erased[i, top:top + h, left:left + w, :] = 0.0
        boxes.append([top, left, h, w])
    new_label = dataset.n_classes
    meta = dict(dataset.meta)
    meta["erased_class"] = {"seed": seed, "label": new_label}
    meta["erase_boxes"] = boxes
    return AnnotatedDataset(
        np.concatenate([dataset.images, erased]),
        np.concatenate([dataset.attributes, dataset.attributes]),
        np.concatenate([dataset.labels, np.full(n, new_label, dtype=np.int64)]),
        dataset.class_names + ["erased"],
        list(dataset.attribute_names),
        meta,
    )


# ---------------------------------------------------------------- IDX

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def _read_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{what}: file too short for magic number", len(raw))
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise FormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{what}: truncated dimension header", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head != size:
        raise FormatError(
            f"{what}: payload is {len(raw) - head} bytes, dimensions {list(dims)} need {size}", head
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> AnnotatedDataset:
    """Parse an IDX image/label pair; attributes are the one-hot labels."""
    raw_images = _read_idx(Path(images_path).read_bytes(), _IDX_IMAGES, 3, "images")
    raw_labels = _read_idx(Path(labels_path).read_bytes(), _IDX_LABELS, 1, "labels")
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise FormatError(
            f"count mismatch: {raw_images.shape[0]} images vs {raw_labels.shape[0]} labels", 4
        )
    labels = raw_labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    images = (raw_images.astype(np.float32) / np.float32(255.0))[..., None]
    attrs = np.eye(n_classes, dtype=np.float32)[labels]
    meta = {"source": "idx", "images": str(images_path), "labels": str(labels_path)}
    return AnnotatedDataset(
        images, attrs, labels,
        [str(c) for c in range(n_classes)], [f"digit_{c}" for c in range(n_classes)], meta,
    )


def write_idx(dataset: AnnotatedDataset, images_path, labels_path) -> None:
    imgs = np.rint(dataset.images[..., 0] * 255.0).astype(np.uint8)
    n, h, w = imgs.shape
    Path(images_path).write_bytes(struct.pack(">4I", _IDX_IMAGES, n, h, w) + imgs.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", _IDX_LABELS, n) + dataset.labels.astype(np.uint8).tobytes()
    )


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitPlan:
    gan_train: np.ndarray
    target_train: np.ndarray
    target_holdout: np.ndarray
    seed: int

    def check_disjoint(self) -> None:
        from .errors import LeakageError

        gan = set(self.gan_train.tolist())
        for name in ("target_train", "target_holdout"):
            overlap = gan & set(getattr(self, name).tolist())
            if overlap:
                raise LeakageError(f"gan_train and {name} share {len(overlap)} instances")
        if set(self.target_train.tolist()) & set(self.target_holdout.tolist()):
            raise LeakageError("target_train and target_holdout overlap")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "gan_train": self.gan_train.tolist(),
            "target_train": self.target_train.tolist(),
            "target_holdout": self.target_holdout.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            np.asarray(d["gan_train"], dtype=np.int64),
            np.asarray(d["target_train"], dtype=np.int64),
            np.asarray(d["target_holdout"], dtype=np.int64),
            int(d["seed"]),
        )


def make_split(n: int, fractions=(0.5, 0.3, 0.2), seed: int = 0) -> SplitPlan:
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ContractError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"split fractions must sum to 1, got {sum(fractions)}")
    order = np.random.default_rng(seed).permutation(n)
    a = int(round(fractions[0] * n))
    b = min(n, a + int(round(fractions[1] * n)))
    return SplitPlan(np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:]), seed)


def split_with_copies(split: SplitPlan, n: int) -> SplitPlan:
    """Extend a split over n source instances to a dataset with copies at i + n.

    A copy always lands in the same partition as its source, so an erased
    version of a training image can never leak into the holdout.
    """
    def extend(idx):
        return np.concatenate([idx, idx + n])

    return SplitPlan(extend(split.gan_train), extend(split.target_train), extend(split.target_holdout), split.seed)


# ---------------------------------------------------------------- persistence

def save_dataset(dataset: AnnotatedDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"kind": "dataset", "n": len(dataset)}
    cgmf.write(directory / "dataset.cgmf", header, {
        "images": dataset.images,
        "attributes": dataset.attributes,
        "labels": dataset.labels.astype(np.float32),
    })
    manifest = {
        "meta": dataset.meta,
        "class_names": dataset.class_names,
        "attribute_names": dataset.attribute_names,
        "class_counts": dataset.class_counts(),
        "n": len(dataset),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> AnnotatedDataset:
    directory = Path(directory)
    for name in ("dataset.cgmf", "manifest.json"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"missing dataset file: {directory / name}")
    _, tensors = cgmf.read(directory / "dataset.cgmf")
    manifest = json.loads((directory / "manifest.json").read_text())
    return AnnotatedDataset(
        tensors["images"], tensors["attributes"], tensors["labels"].astype(np.int64),
        manifest["class_names"], manifest["attribute_names"], manifest["meta"],
    )
