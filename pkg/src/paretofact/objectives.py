"""Plausibility, adversarial power and change intensity of a perturbation.

A perturbation ``delta`` lives in the box [-1, 1]^N and is added to the
anchor's attribute vector; the sum is clamped back into [0, 1] before it
conditions the decoder. All three objectives are minimized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ganstack as gs
from . import numcore as nc
from .errors import ContractError, DimensionError
from .metrics import luminance_image, ssim
from .numcore import EPS, Tensor

LOWER, UPPER = -1.0, 1.0
PLAUSIBLE = 0.5
F_ATT_MODES = ("norm", "ssim")


class ObjectiveTriple(NamedTuple):
    f_gan: float
    f_adv: float
    f_att: float


class DisplayTriple(NamedTuple):
    plausibility: float  # 1 - f_gan
    power: float  # 1 - f_adv
    f_att: float
    plausible: bool


@dataclass(frozen=True)
class AnchorContext:
    x_anchor: np.ndarray  # image, bundle.image_shape
    a: np.ndarray  # (N,)
    anchor_class: int
    plaus_anchor: float
    critic_anchor: float
    z_anchor: np.ndarray  # (1, latent)
    target_class: int | None = None
    f_att_mode: str = "norm"

    @property
    def targeted(self) -> bool:
        return self.target_class is not None

    @property
    def n_attributes(self) -> int:
        return self.a.shape[0]


def make_context(bundle: gs.ModelBundle, target: gs.TargetModel, x_anchor: np.ndarray, a: np.ndarray,
                 target_class: int | None = None, f_att_mode: str = "norm") -> AnchorContext:
    x_anchor = np.asarray(x_anchor, dtype=np.float32).reshape(bundle.image_shape)
    a = np.asarray(a, dtype=np.float32)
    if a.shape != (bundle.n_attributes,):
        raise DimensionError(f"anchor attributes have shape {a.shape}, expected ({bundle.n_attributes},)")
    if np.any(a < 0) or np.any(a > 1):
        raise ContractError("anchor attributes must lie in [0, 1]")
    if f_att_mode not in F_ATT_MODES:
        raise ContractError(f"f_att mode must be one of {F_ATT_MODES}, got {f_att_mode!r}")
    anchor_class = int(target.predict(x_anchor)[0])
    if target_class is not None:
        if not 0 <= target_class < target.n_classes:
            raise ContractError(f"target_class {target_class} outside [0, {target.n_classes})")
        if target_class == anchor_class:
            raise ContractError(f"target_class {target_class} equals the anchor's predicted class")
    with nc.no_grad():
        flat = Tensor(x_anchor.reshape(1, -1))
        plaus = bundle.plausibility(flat).item()
        critic = bundle.critic(flat).item()
        z = bundle.encoder(flat).data.copy()
    return AnchorContext(x_anchor, a, anchor_class, plaus, critic, z, target_class, f_att_mode)


def effective_attributes(ctx: AnchorContext, delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float32)
    if delta.shape[-1] != ctx.n_attributes:
        raise DimensionError(f"perturbation length {delta.shape[-1]} != {ctx.n_attributes} attributes")
    return np.clip(ctx.a + delta, 0.0, 1.0).astype(np.float32)


def render_batch(ctx: AnchorContext, bundle: gs.ModelBundle, deltas: np.ndarray) -> np.ndarray:
    """Counterfactual images, flattened, one row per perturbation."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float32))
    b = effective_attributes(ctx, deltas)
    z = np.repeat(ctx.z_anchor, len(b), axis=0)
    with nc.no_grad():
        return gs.decode(bundle, Tensor(z), Tensor(b)).data


def render(ctx: AnchorContext, bundle: gs.ModelBundle, delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float32)
    if delta.shape != (ctx.n_attributes,):
        raise DimensionError(f"perturbation shape {delta.shape}, expected ({ctx.n_attributes},)")
    return render_batch(ctx, bundle, delta[None])[0].reshape(bundle.image_shape)


def _rows(bundle: gs.ModelBundle, x_cf: np.ndarray) -> np.ndarray:
    return np.asarray(x_cf, dtype=np.float32).reshape(-1, bundle.pixels)


def eval_f_gan(ctx: AnchorContext, bundle: gs.ModelBundle, x_cf: np.ndarray) -> np.ndarray:
    """Plausibility-head score of the anchor minus that of each counterfactual."""
    with nc.no_grad():
        p = bundle.plausibility(Tensor(_rows(bundle, x_cf))).data[:, 0].astype(np.float64)
    return ctx.plaus_anchor - p


def critic_gap(ctx: AnchorContext, bundle: gs.ModelBundle, x_cf: np.ndarray) -> np.ndarray:
    """Raw critic score difference, logged alongside f_gan."""
    with nc.no_grad():
        c = bundle.critic(Tensor(_rows(bundle, x_cf))).data[:, 0].astype(np.float64)
    return ctx.critic_anchor - c


def eval_f_adv(ctx: AnchorContext, target: gs.TargetModel, x_cf: np.ndarray) -> np.ndarray:
    """Untargeted: ln p(anchor class); targeted: -ln p(target class). Clamped to [EPS, 1-EPS]."""
    probs = np.clip(target.probs(x_cf).astype(np.float64), EPS, 1 - EPS)
    if ctx.targeted:
        return -np.log(probs[:, ctx.target_class])
    return np.log(probs[:, ctx.anchor_class])


def eval_f_att(delta: np.ndarray, mode: str = "norm", x_anchor: np.ndarray | None = None,
               x_cf: np.ndarray | None = None) -> float:
    if mode == "norm":
        return float(np.sqrt(np.sum(np.asarray(delta, dtype=np.float64) ** 2)))
    if mode == "ssim":
        if x_anchor is None or x_cf is None:
            raise ContractError("ssim mode needs the anchor and counterfactual images")
        x_cf = np.asarray(x_cf).reshape(np.shape(x_anchor))
        return 1.0 - ssim(luminance_image(x_anchor), luminance_image(x_cf))
    raise ContractError(f"unknown f_att mode {mode!r}")


def evaluate_batch(ctx: AnchorContext, bundle: gs.ModelBundle, target: gs.TargetModel,
                   deltas: np.ndarray) -> np.ndarray:
    """Objective matrix (K, 3) with columns f_gan, f_adv, f_att."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float32))
    x_cf = render_batch(ctx, bundle, deltas)
    f_gan = eval_f_gan(ctx, bundle, x_cf)
    f_adv = eval_f_adv(ctx, target, x_cf)
    if ctx.f_att_mode == "norm":
        f_att = np.sqrt(np.sum(deltas.astype(np.float64) ** 2, axis=1))
    else:
        f_att = np.array([eval_f_att(d, "ssim", ctx.x_anchor, x.reshape(bundle.image_shape))
                          for d, x in zip(deltas, x_cf)])
    return np.column_stack([f_gan, f_adv, f_att])


def evaluate(ctx: AnchorContext, bundle: gs.ModelBundle, target: gs.TargetModel,
             delta: np.ndarray) -> ObjectiveTriple:
    delta = np.asarray(delta, dtype=np.float32)
    if delta.shape != (ctx.n_attributes,):
        raise DimensionError(f"perturbation shape {delta.shape}, expected ({ctx.n_attributes},)")
    row = evaluate_batch(ctx, bundle, target, delta[None])[0]
    return ObjectiveTriple(float(row[0]), float(row[1]), float(row[2]))


def display_transform(triple) -> DisplayTriple:
    f_gan, f_adv, f_att = (float(v) for v in triple)
    plaus = 1.0 - f_gan
    return DisplayTriple(plaus, 1.0 - f_adv, f_att, plaus >= PLAUSIBLE)


class CounterfactualProblem:
    """Batch objective callable for the evolutionary search."""

    def __init__(self, ctx: AnchorContext, bundle: gs.ModelBundle, target: gs.TargetModel):
        if bundle.mode != gs.CONDITIONAL:
            raise ContractError("counterfactual search needs a conditional generator")
        self.ctx = ctx
        self.bundle = bundle
        self.target = target
        self.n_var = ctx.n_attributes
        self.evaluations = 0

    def __call__(self, deltas: np.ndarray) -> np.ndarray:
        self.evaluations += len(deltas)
        return evaluate_batch(self.ctx, self.bundle, self.target, deltas)
