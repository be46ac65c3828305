"""Release-gate checks run by ``paretofact verify``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradcheck, metrics, moea


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _brute_force_ranks(F: np.ndarray) -> np.ndarray:
    """Peel off non-dominated layers by direct pairwise comparison."""
    n = len(F)
    rank = np.full(n, -1)
    remaining = set(range(n))
    level = 0
    while remaining:
        layer = [i for i in remaining
                 if not any(np.all(F[j] <= F[i]) and np.any(F[j] < F[i]) for j in remaining if j != i)]
        for i in layer:
            rank[i] = level
        remaining -= set(layer)
        level += 1
    return rank


def check_gradients(cases: dict[str, gradcheck.Case] | None = None, seeds=(0, 1, 2)) -> list[CheckResult]:
    cases = gradcheck.OP_CASES if cases is None else cases
    out = []
    for name, build in cases.items():
        worst = max(gradcheck.check_case(name, build, s).max_rel_error for s in seeds)
        out.append(CheckResult(f"grad:{name}", worst < gradcheck.TOLERANCE, f"max rel error {worst:.2e}"))
    for s in seeds:
        bundle = gradcheck.random_bundle(np.random.default_rng(1000 + s))
        for r in gradcheck.check_bundle_losses(bundle, s):
            out.append(CheckResult(f"grad:{r.name}[{bundle.mode},{s}]", r.ok, f"max rel error {r.max_rel_error:.2e}"))
    return out


def check_dominance(seeds=range(10), n: int = 200) -> CheckResult:
    for s in seeds:
        F = np.random.default_rng(s).random((n, 3))
        ranks = moea.ranks_from_fronts(moea.fast_non_dominated_sort(F), n)
        if not np.array_equal(ranks, _brute_force_ranks(F)):
            return CheckResult("dominance_oracle", False, f"rank mismatch on seed {s}")
    return CheckResult("dominance_oracle", True, f"{len(seeds)} seeds x {n} points")


def check_sbx_mean(trials: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(0)
    p1, p2 = np.array([-0.3, 0.1, 0.25]), np.array([0.2, -0.15, 0.3])
    kids = [moea.sbx_from_draws(p1, p2, rng.random(3), 20.0) for _ in range(trials)]
    mean = np.mean([(a + b) / 2 for a, b in kids], axis=0)
    err = float(np.max(np.abs(mean - (p1 + p2) / 2)))
    return CheckResult("sbx_parent_mean", err < 0.01, f"max deviation {err:.2e}")


def check_mutation_rate(trials: int = 10_000, n_var: int = 5) -> CheckResult:
    rng = np.random.default_rng(0)
    p = 1.0 / n_var
    x = np.zeros(n_var)
    fired = np.zeros(n_var)
    for _ in range(trials):
        fired += moea.polynomial_mutation(x, p, 20.0, rng) != x
    se = np.sqrt(p * (1 - p) / trials)
    z = float(np.max(np.abs(fired / trials - p)) / se)
    return CheckResult("mutation_rate", z < 3.0, f"max |z| {z:.2f}")


def check_metrics() -> list[CheckResult]:
    rng = np.random.default_rng(0)
    x, y = rng.random((16, 16)), rng.random((16, 16))
    img = rng.random((8, 8, 3))
    return [
        CheckResult("luminance_white", metrics.luminance(255, 255, 255) == 1.0, "white -> 1"),
        CheckResult("luminance_red", abs(metrics.luminance(255, 0, 0) - 0.2126) < 1e-12, "red -> 0.2126"),
        CheckResult("ssim_identity", abs(metrics.ssim(x, x) - 1.0) < 1e-9, "ssim(x, x) = 1"),
        CheckResult("ssim_symmetry", abs(metrics.ssim(x, y) - metrics.ssim(y, x)) < 1e-9, "ssim symmetric"),
        CheckResult("diff_identity", not np.any(metrics.diff_heatmap(img, img)), "diff(x, x) = 0"),
    ]


def check_hypervolume() -> CheckResult:
    cases = [
        (np.array([[0.0, 0.0, 0.0]]), 1.0),
        (np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 0.0]]), 0.75),
        (np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.6, 0.6, 0.6]]), 0.75),
    ]
    for pts, want in cases:
        got = moea.hypervolume(pts, np.ones(3))
        if abs(got - want) > 1e-12:
            return CheckResult("hypervolume", False, f"{pts.tolist()} -> {got}, expected {want}")
    return CheckResult("hypervolume", True, "unit-cube cases")


def run_checks(gradient_cases: dict[str, gradcheck.Case] | None = None) -> list[CheckResult]:
    steps: list[Callable[[], CheckResult | list[CheckResult]]] = [
        lambda: check_gradients(gradient_cases),
        check_dominance,
        check_sbx_mean,
        check_mutation_rate,
        check_metrics,
        check_hypervolume,
    ]
    results = []
    for step in steps:
        try:
            r = step()
        except Exception as exc:  # an exception is a failed check, not a crash of the gate
            name = getattr(step, "__name__", "check")
            r = CheckResult(name, False, f"raised {exc!r}")
        results.extend(r if isinstance(r, list) else [r])
    return results
