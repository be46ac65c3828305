"""Finite-difference gradient checks for every differentiable op and GAN loss.

Checks run in float64. Inputs that land within ``KINK_MARGIN`` of a kink
(abs, clamp, leaky-ReLU) are redrawn, since a central difference across a
kink measures nothing useful.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ganstack as gs
from . import numcore as nc
from .numcore import Tensor

H = 1e-5
# a central difference straddles a kink only within about H of it; 10x leaves headroom
KINK_MARGIN = 10 * H
TOLERANCE = 1e-3
MAX_REDRAWS = 20

# a case builds (loss thunk, parameters) from an rng
Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class GradResult:
    name: str
    max_rel_error: float
    redraws: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _unary(op, lo=-2.0, hi=2.0, shape=(3, 4)) -> Case:
    def build(rng):
        x = _leaf(rng, shape, lo, hi)
        w = Tensor(rng.normal(size=op(x).shape))
        return (lambda: nc.total(nc.mul(op(x), w))), [x]
    return build


def _binary(op, shape_a=(3, 4), shape_b=(3, 4)) -> Case:
    def build(rng):
        a, b = _leaf(rng, shape_a), _leaf(rng, shape_b)
        w = Tensor(rng.normal(size=op(a, b).shape))
        return (lambda: nc.total(nc.mul(op(a, b), w))), [a, b]
    return build


def _reduction(op, lo=-2.0, hi=2.0) -> Case:
    def build(rng):
        x = _leaf(rng, (3, 4), lo, hi)
        return (lambda: op(x)), [x]
    return build


def _cross_entropy(rng):
    logits = _leaf(rng, (4, 3), -2, 2)
    t = np.eye(3)[rng.integers(0, 3, 4)]
    return (lambda: nc.cross_entropy(t, nc.softmax(logits))), [logits]


def _bce(rng):
    logits = _leaf(rng, (4, 3), -2, 2)
    t = rng.uniform(0, 1, (4, 3))
    return (lambda: nc.binary_cross_entropy(t, nc.sigmoid(logits))), [logits]


OP_CASES: dict[str, Case] = {
    "matmul": _binary(nc.matmul, (3, 4), (4, 2)),
    "add": _binary(nc.add),
    "sub": _binary(nc.sub),
    "mul": _binary(nc.mul),
    "scale": _unary(lambda x: nc.scale(x, -1.7)),
    "add_bias": _binary(nc.add_bias, (3, 4), (4,)),
    "concat": _binary(nc.concat, (3, 2), (3, 3)),
    "reshape": _unary(lambda x: nc.reshape(x, (4, 3))),
    "abs": _unary(nc.abs_),
    "log": _unary(nc.log, 0.3, 3.0),
    "clamp": _unary(lambda x: nc.clamp(x, -0.5, 0.5), -1.0, 1.0),
    "leaky_relu": _unary(nc.leaky_relu),
    "sigmoid": _unary(nc.sigmoid, -4, 4),
    "softmax": _unary(nc.softmax),
    "total": _reduction(nc.total),
    "mean": _reduction(nc.mean),
    "norm_l1": _reduction(lambda x: nc.norm(x, "l1")),
    "norm_l2": _reduction(lambda x: nc.norm(x, "l2")),
    "sum_squares": _reduction(nc.sum_squares),
    "cross_entropy": _cross_entropy,
    "binary_cross_entropy": _bce,
}


# ---------------------------------------------------------------- GAN losses

def random_bundle(rng: np.random.Generator, mode: str | None = None) -> gs.ModelBundle:
    """A small bundle with randomly drawn layer sizes."""
    pixels = int(rng.integers(2, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 4, size=int(rng.integers(1, 3))))
    mode = mode or (gs.CONDITIONAL if rng.random() < 0.5 else gs.NON_CONDITIONAL)
    with nc.precision(np.float64):
        bundle = gs.build_bundle((pixels,), int(rng.integers(1, 3)), int(rng.integers(1, 3)), hidden, mode,
                                 seed=int(rng.integers(0, 2**31)))
        # zero biases would pin every pre-activation of a zero input at the kink
        for p in bundle.params:
            if p.data.ndim == 1:
                p.data = rng.normal(0.0, 0.5, p.shape)
    return bundle


def _gan_batch(rng, bundle: gs.ModelBundle, batch: int = 3):
    P, N = bundle.pixels, bundle.n_attributes
    x = rng.uniform(0, 1, (batch, P))
    a = rng.uniform(0, 1, (batch, N))
    b = rng.uniform(0, 1, (batch, N))
    fake = rng.uniform(0, 1, (batch, P))
    return x, a, b, fake


def loss_cases(bundle: gs.ModelBundle) -> dict[str, Callable[[np.random.Generator], Callable[[], Tensor]]]:
    """Every generator and discriminator/classifier loss applicable to ``bundle``.

    Discriminator-side cases use a fixed fake batch, so generator parameters
    are structurally unreachable from them; see ``case_params``.
    """
    weights = gs.LossWeights(10.0, 1.0, 1.0)
    cond = bundle.mode == gs.CONDITIONAL
    cases = {}

    def gen_term(key, mode=None):
        return lambda rng: (lambda x, a, b, f: lambda: gs.generator_terms(bundle, x, a, b, mode)[key])(
            *_gan_batch(rng, bundle))

    def disc_term(key):
        return lambda rng: (lambda x, a, b, f: lambda: gs.discriminator_terms(bundle, x, a, b, f)[key])(
            *_gan_batch(rng, bundle))

    cases["generator.rec"] = gen_term("rec")
    cases["generator.adv"] = gen_term("adv")
    cases["discriminator.adv"] = disc_term("adv")
    cases["discriminator.plausibility"] = disc_term("plaus")
    cases["generator.total"] = lambda rng: (lambda x, a, b, f: lambda: gs.loss_generator(
        bundle, x, a, b, weights))(*_gan_batch(rng, bundle))
    cases["discriminator.total"] = lambda rng: (lambda x, a, b, f: lambda: gs.loss_discriminator_classifier(
        bundle, x, a, b, weights, f))(*_gan_batch(rng, bundle))
    if cond:
        cases["generator.att"] = gen_term("att")
        cases["classifier.att"] = disc_term("att")
        cases["generator.non_conditional_rec"] = gen_term("rec", gs.NON_CONDITIONAL)
        cases["generator.non_conditional_total"] = lambda rng: (lambda x, a, b, f: lambda: gs.loss_generator(
            bundle, x, a, b, weights, gs.NON_CONDITIONAL))(*_gan_batch(rng, bundle))
    return cases


def case_params(bundle: gs.ModelBundle, name: str) -> list[Tensor]:
    if name.startswith(("discriminator.", "classifier.")):
        return bundle.discriminator_params
    return bundle.params


# ---------------------------------------------------------------- checking

def compare(fn: Callable[[], Tensor], params: list[Tensor], h: float = H) -> float:
    analytic = nc.grad(fn(), params)
    numeric = nc.finite_difference(fn, params, h)
    return max((nc.relative_error(a, n, floor=1e-6) for a, n in zip(analytic, numeric)), default=0.0)


def _clear_of_kinks(fn: Callable[[], Tensor]) -> bool:
    with nc.no_grad(), nc.kink_monitor() as mon:
        fn()
    return mon.min_distance > KINK_MARGIN


def check_case(name: str, build: Case, seed: int = 0) -> GradResult:
    """Gradient check of one op case, redrawing inputs that sit on a kink."""
    rng = np.random.default_rng(seed)
    with nc.precision(np.float64):
        for redraw in range(MAX_REDRAWS):
            fn, params = build(rng)
            if _clear_of_kinks(fn):
                return GradResult(name, compare(fn, params), redraw)
    return GradResult(name, float("inf"), MAX_REDRAWS)


def check_bundle_losses(bundle: gs.ModelBundle, seed: int = 0) -> list[GradResult]:
    """Check every loss of ``bundle`` against finite differences over all its parameters."""
    rng = np.random.default_rng(seed)
    out = []
    with nc.precision(np.float64):
        for name, build in loss_cases(bundle).items():
            for redraw in range(MAX_REDRAWS):
                fn = build(rng)
                if _clear_of_kinks(fn):
                    out.append(GradResult(name, compare(fn, case_params(bundle, name)), redraw))
                    break
            else:
                out.append(GradResult(name, float("inf"), MAX_REDRAWS))
    return out
