import time

import numpy as np

from paretofact import cli, gradcheck
from paretofact import numcore as nc
from paretofact import verify


def _broken_square(rng):
    x = nc.Tensor(rng.uniform(0.5, 2.0, 3), requires_grad=True)

    def fn():
        xv = x.data
        return nc.total(nc._node(xv * xv, (x,), lambda g: (g * xv,)))  # derivative should be 2x

    return fn, [x]


def test_injected_broken_gradient_is_reported_by_name():
    cases = {"matmul": gradcheck.OP_CASES["matmul"], "broken_square": _broken_square}
    failed = [r.name for r in verify.check_gradients(cases, seeds=(0,)) if not r.ok]
    assert failed == ["grad:broken_square"]


def test_run_checks_lists_injected_failure():
    results = verify.run_checks(gradient_cases={"broken_square": _broken_square})
    bad = [r for r in results if not r.ok]
    assert [r.name for r in bad] == ["grad:broken_square"]


def test_brute_force_oracle_agrees_with_sort():
    assert verify.check_dominance(seeds=range(3), n=60).ok


def test_verify_command_passes_and_is_fast(capsys):
    t0 = time.perf_counter()
    assert cli.main(["verify"]) == 0
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out
    assert elapsed < 300


def test_verify_command_exit_code_on_failure(monkeypatch, capsys):
    def fake():
        return [verify.CheckResult("fine", True, ""), verify.CheckResult("grad:bad", False, "oops")]

    monkeypatch.setattr(verify, "run_checks", lambda: fake())
    assert cli.main(["verify"]) == 1
    out = capsys.readouterr().out
    assert "FAIL grad:bad" in out and "failed: grad:bad" in out


def test_check_gradients_covers_every_op():
    names = {r.name for r in verify.check_gradients(seeds=(0,))}
    assert {f"grad:{op}" for op in gradcheck.OP_CASES} <= names
    assert any("generator.total" in n for n in names)
    assert np.isfinite(0.0)
