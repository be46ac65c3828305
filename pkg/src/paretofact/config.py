"""Run configuration: one JSON document, validated against a published schema.

Every key can be overridden from the command line with a dotted path,
e.g. ``--set nsga.generations=10`` or ``--set dataset.bias='{"attribute": 3, "cls": 1, "strength": 0.9}'``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from . import ganstack as gs
from .data import BiasSpec
from .errors import ContractError
from .moea import NsgaConfig

_INT = {"type": "integer"}
_SEED = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "paretofact run configuration",
    **_obj({
        "out": {"type": "string", "description": "output directory; relative paths resolve against the config file"},
        "dataset": _obj({
            "source": {"enum": ["blobs", "idx"]},
            "seed": _SEED,
            "n": {"type": "integer", "minimum": 50},
            "bias": {"oneOf": [{"type": "null"}, _obj({
                "attribute": _INT, "cls": _INT, "strength": _PROB}, ["attribute", "cls", "strength"])]},
            "erased_class": {"type": "boolean"},
            "erase_seed": _SEED,
            "idx_images": {"type": ["string", "null"]},
            "idx_labels": {"type": ["string", "null"]},
            "split": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                      "minItems": 3, "maxItems": 3},
            "split_seed": _SEED,
        }),
        "model": _obj({
            "latent": _POS_INT,
            "hidden": {"type": "array", "items": _POS_INT, "minItems": 1},
            "mode": {"enum": [gs.CONDITIONAL, gs.NON_CONDITIONAL]},
            "seed": _SEED,
        }),
        "weights": _obj({"lambda1": _NONNEG, "lambda2": _NONNEG, "lambda3": _NONNEG}),
        "train": _obj({
            "epochs": {"type": "integer", "minimum": 0}, "batch_size": _POS_INT, "lr": _NONNEG,
            "momentum": _PROB, "clip": _NONNEG, "n_critic": _POS_INT, "seed": _SEED,
        }),
        "target": _obj({
            "hidden": {"type": "array", "items": _POS_INT}, "epochs": {"type": "integer", "minimum": 0},
            "batch_size": _POS_INT, "lr": _NONNEG, "momentum": _PROB, "seed": _SEED,
        }),
        "nsga": _obj({
            "population": {"type": "integer", "minimum": 2}, "offspring": {"type": "integer", "minimum": 2},
            "p_m": {"oneOf": [{"type": "null"}, _PROB]}, "eta_m": _NONNEG, "p_c": _PROB, "eta_c": _NONNEG,
            "generations": {"type": "integer", "minimum": 0}, "seed": _SEED,
            "lower": {"type": "number"}, "upper": {"type": "number"},
        }),
        "objective": _obj({
            "target_class": {"type": ["integer", "null"], "minimum": 0},
            "f_att": {"enum": ["norm", "ssim"]},
        }),
        "audit": _obj({
            "anchor_seed": _SEED,
            "anchor_classes": {"oneOf": [{"type": "null"}, {"type": "array", "items": _INT}]},
        }),
        "report": _obj({
            "combinations": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        }),
    }),
}


@dataclass
class DatasetConfig:
    source: str = "blobs"
    seed: int = 42
    n: int = 2000
    bias: dict | None = None
    erased_class: bool = False
    erase_seed: int = 0
    idx_images: str | None = None
    idx_labels: str | None = None
    split: list = field(default_factory=lambda: [0.5, 0.3, 0.2])
    split_seed: int = 0


@dataclass
class ModelConfig:
    latent: int = 32
    hidden: list = field(default_factory=lambda: [256, 64])
    mode: str = gs.CONDITIONAL
    seed: int = 0


@dataclass
class ObjectiveConfig:
    target_class: int | None = None
    f_att: str = "norm"


@dataclass
class AuditConfig:
    anchor_seed: int = 0
    # restrict anchor candidates to these true labels (None: every holdout instance)
    anchor_classes: list | None = None


@dataclass
class ReportConfig:
    combinations: list = field(default_factory=lambda: [[], [0], [1], [2], [3], [4], [1, 3]])


def _train_defaults() -> dict:
    d = asdict(gs.TrainConfig())
    d.pop("weights")
    return d


def _nsga_defaults() -> dict:
    c = NsgaConfig()
    return {k: getattr(c, k) for k in SCHEMA["properties"]["nsga"]["properties"]} | {"p_m": None}


@dataclass
class RunConfig:
    out: str = "runs/reference"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: dict = field(default_factory=lambda: asdict(gs.LossWeights()))
    train: dict = field(default_factory=_train_defaults)
    target: dict = field(default_factory=lambda: {**asdict(gs.TargetConfig()), "hidden": [64]})
    nsga: dict = field(default_factory=_nsga_defaults)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    # ---- typed views consumed by the pipeline

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def bias_spec(self) -> BiasSpec | None:
        return BiasSpec.from_dict(self.dataset.bias)

    def loss_weights(self) -> gs.LossWeights:
        return gs.LossWeights(**self.weights)

    def train_config(self) -> gs.TrainConfig:
        return gs.TrainConfig(**self.train, weights=self.loss_weights())

    def target_config(self) -> gs.TargetConfig:
        return gs.TargetConfig(**{**self.target, "hidden": tuple(self.target["hidden"])})

    def nsga_config(self) -> NsgaConfig:
        return NsgaConfig(**self.nsga)

    def to_dict(self) -> dict:
        return asdict(self)

    def record(self) -> dict:
        """Parameters written into output manifests; the output location is left out
        so that identical runs in different directories produce identical bytes."""
        d = self.to_dict()
        del d["out"]
        return d

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        merged = _deep_merge(RunConfig().to_dict(), raw)
        validate(merged)
        cfg = cls(
            out=merged["out"],
            dataset=DatasetConfig(**merged["dataset"]),
            model=ModelConfig(**merged["model"]),
            weights=merged["weights"],
            train=merged["train"],
            target=merged["target"],
            nsga=merged["nsga"],
            objective=ObjectiveConfig(**merged["objective"]),
            audit=AuditConfig(**merged["audit"]),
            report=ReportConfig(**merged["report"]),
        )
        if base_dir is not None:
            cfg._resolve_paths(Path(base_dir))
        cfg.check()
        return cfg

    def _resolve_paths(self, base: Path) -> None:
        if not Path(self.out).is_absolute():
            self.out = str(base / self.out)
        for key in ("idx_images", "idx_labels"):
            value = getattr(self.dataset, key)
            if value is not None and not Path(value).is_absolute():
                setattr(self.dataset, key, str(base / value))

    def check(self) -> None:
        """Semantic checks the schema cannot express."""
        d = self.dataset
        if d.source == "idx":
            for key in ("idx_images", "idx_labels"):
                value = getattr(d, key)
                if value is None:
                    raise ContractError(f"dataset.{key} is required when dataset.source is 'idx'")
                if not Path(value).exists():
                    raise ContractError(f"dataset.{key}: file not found: {value}")
        if d.bias is not None:
            if d.source != "blobs":
                raise ContractError("dataset.bias is only supported for the blobs source")
            try:
                self.bias_spec.validate()
            except ContractError as exc:
                raise ContractError(f"dataset.bias: {exc}") from None
        try:
            self.loss_weights()
            self.nsga_config()
        except ContractError as exc:
            raise ContractError(f"invalid configuration: {exc}") from None


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ContractError(f"config field {where}: {exc.message}") from None


def parse_override(item: str) -> tuple[list[str], object]:
    """Split ``a.b.c=value``; the value is parsed as JSON, falling back to a plain string."""
    if "=" not in item:
        raise ContractError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ContractError(f"override {item!r} has an empty key segment")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return path, value


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides or ():
        path, value = parse_override(item)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ContractError(f"override {item!r}: {part!r} is not a section")
        node[path[-1]] = value
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (or start from defaults), apply overrides, validate."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"config file {path} is not valid JSON: {exc}") from None
        base = path.resolve().parent
    return RunConfig.from_dict(apply_overrides(raw, overrides), base_dir=base)


if __name__ == "__main__":
    print(json.dumps(SCHEMA, indent=2))
