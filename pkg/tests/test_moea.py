import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from paretofact import moea
from paretofact.errors import ContractError, DimensionError

import oracles

triples = arrays(np.float64, 3, elements=st.floats(-5, 5))


def schaffer(X):
    return np.column_stack([X[:, 0] ** 2, (X[:, 0] - 1) ** 2, np.zeros(len(X))])


# ---------------------------------------------------------------- dominance and sorting

def test_dominance_examples():
    assert moea.dominates((1, 1, 1), (2, 2, 2))
    assert not moea.dominates((1, 2, 3), (1, 2, 3))
    assert not moea.dominates((1, 4, 0), (2, 2, 0))
    assert not moea.dominates((2, 2, 0), (1, 4, 0))


@given(triples, triples)
def test_dominance_irreflexive_and_antisymmetric(a, b):
    assert not moea.dominates(a, a)
    assert not (moea.dominates(a, b) and moea.dominates(b, a))
    assert moea.dominates(a, b) == oracles.dominates(a.tolist(), b.tolist())


def test_sort_examples():
    pts = [(1, 4), (2, 2), (3, 1), (3, 3), (4, 4)]
    assert moea.fast_non_dominated_sort(pts) == [[0, 1, 2], [3], [4]]
    assert moea.fast_non_dominated_sort([(1, 1)] * 4) == [[0, 1, 2, 3]]
    assert moea.fast_non_dominated_sort([(3, 3, 3), (1, 1, 1), (2, 2, 2)]) == [[1], [2], [0]]


def test_sort_rejects_unevaluated():
    with pytest.raises(ContractError):
        moea.fast_non_dominated_sort([(1.0, 2.0), (np.nan, 1.0)])


@pytest.mark.parametrize("seed", range(5))
def test_sort_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    F = rng.integers(0, 6, (200, 3)).astype(float)  # integer grid forces ties
    rank = moea.ranks_from_fronts(moea.fast_non_dominated_sort(F), len(F))
    assert rank.tolist() == oracles.stratify(F.tolist())


# ---------------------------------------------------------------- crowding

def test_crowding_examples():
    assert np.all(np.isinf(moea.crowding_distance([(1, 2), (2, 1)])))
    d = moea.crowding_distance([(1, 3), (2, 2), (3, 1)])
    assert d[1] == 2.0 and math.isinf(d[0]) and math.isinf(d[2])
    flat = moea.crowding_distance([(1, 5), (2, 5), (3, 5), (4, 5)])
    assert flat[1] == pytest.approx(2 / 3) and flat[2] == pytest.approx(2 / 3)


@given(arrays(np.float64, (6, 3), elements=st.floats(0, 10)))
def test_crowding_nonnegative(F):
    assert np.all(moea.crowding_distance(F) >= 0)


# ---------------------------------------------------------------- variation

def test_sbx_fixed_point_and_identical_parents():
    p1, p2 = np.array([-0.3, 0.2, 0.5]), np.array([0.4, -0.6, 0.1])
    c1, c2 = moea.sbx_from_draws(p1, p2, np.full(3, 0.5), 20)
    np.testing.assert_allclose(c1, p1) and np.testing.assert_allclose(c2, p2)
    rng = np.random.default_rng(0)
    c1, c2 = moea.sbx_crossover(p1, p1, 20, rng)
    np.testing.assert_allclose(c1, p1) and np.testing.assert_allclose(c2, p1)


@given(arrays(np.float64, 4, elements=st.floats(-1, 1)), arrays(np.float64, 4, elements=st.floats(-1, 1)),
       arrays(np.float64, 4, elements=st.floats(0.001, 0.999)))
def test_sbx_matches_textbook(p1, p2, u):
    c1, c2 = moea.sbx_from_draws(p1, p2, u, 20)
    w1, w2 = oracles.sbx_children(p1, p2, u, 20)
    np.testing.assert_allclose(c1, w1, atol=1e-12)
    np.testing.assert_allclose(c2, w2, atol=1e-12)


def test_sbx_preserves_parent_mean():
    rng = np.random.default_rng(1)
    p1, p2 = np.array([-0.1, 0.0, 0.2]), np.array([0.1, 0.05, 0.25])
    sums = np.zeros(3)
    for _ in range(10_000):
        c1, c2 = moea.sbx_crossover(p1, p2, 20, rng)
        sums += (c1 + c2) / 2
    assert np.all(np.abs(sums / 10_000 - (p1 + p2) / 2) < 0.01)


def test_sbx_length_mismatch():
    with pytest.raises(DimensionError):
        moea.sbx_crossover(np.zeros(2), np.zeros(3), 20, np.random.default_rng(0))


@given(arrays(np.float64, 5, elements=st.floats(-1, 1)), st.integers(0, 2**32 - 1))
def test_variation_stays_in_box(x, seed):
    rng = np.random.default_rng(seed)
    c1, c2 = moea.sbx_crossover(x, -x[::-1], 20, rng)
    m = moea.polynomial_mutation(c1, 1.0, 20, rng)
    for v in (c1, c2, m):
        assert np.all((v >= -1) & (v <= 1))


def test_mutation_no_op_cases():
    x = np.array([0.3, -0.7, 1.0, -1.0])
    np.testing.assert_array_equal(moea.polynomial_mutation(x, 0.0, 20, np.random.default_rng(0)), x)
    np.testing.assert_allclose(moea.polynomial_from_draws(x, np.full(4, 0.5), 20), x, atol=1e-12)


def test_mutation_frequency():
    rng = np.random.default_rng(2)
    n, trials = 5, 10_000
    x = np.zeros(n)
    changed = sum(int(np.sum(moea.polynomial_mutation(x, 1 / n, 20, rng) != x)) for _ in range(trials))
    p = 1 / n
    se = math.sqrt(p * (1 - p) / (n * trials))
    assert abs(changed / (n * trials) - p) < 3 * se


# ---------------------------------------------------------------- evolve

def test_zero_generations_returns_initial_front():
    cfg = moea.NsgaConfig(population=30, generations=0, seed=4)
    front = moea.evolve(schaffer, 2, cfg)
    X0 = np.random.default_rng(4).uniform(-1, 1, (30, 2))
    F0 = schaffer(X0)
    want = {X0[i].tobytes() for i in moea.fast_non_dominated_sort(F0)[0]}
    assert {m.delta.tobytes() for m in front.members} == want
    assert front.evaluations == 30


def test_evolve_is_deterministic():
    cfg = moea.NsgaConfig(population=20, offspring=20, generations=5, seed=9)
    a, b = moea.evolve(schaffer, 3, cfg), moea.evolve(schaffer, 3, cfg)
    assert a.deltas.tobytes() == b.deltas.tobytes()
    assert a.objectives.tobytes() == b.objectives.tobytes()


def test_front_is_mutually_non_dominated_and_in_box():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(4, 3))
    front = moea.evolve(lambda X: np.sin(X @ W), 4, moea.NsgaConfig(population=40, offspring=40, generations=10))
    F = front.objectives
    assert not any(moea.dominates(F[i], F[j]) for i in range(len(F)) for j in range(len(F)))
    assert np.all(np.abs(front.deltas) <= 1)
    assert len({d.tobytes() for d in front.deltas}) == len(front)


def test_schaffer_front_and_evaluation_count():
    front = moea.evolve(schaffer, 5, moea.NsgaConfig(seed=0), keep_history=True)
    assert front.evaluations == 100 + 50 * 100
    x1 = front.deltas[:, 0]
    assert np.mean((x1 >= -0.05) & (x1 <= 1.05)) >= 0.95


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_hypervolume_never_decreases(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, 3))
    obj = lambda X: np.tanh(X @ W)  # noqa: E731  bounded in (-1, 1)
    front = moea.evolve(obj, 3, moea.NsgaConfig(population=16, offspring=16, generations=12, seed=seed),
                        keep_history=True)
    ref = np.full(3, 1.5)
    hv = []
    for F in front.history:
        first = F[moea.fast_non_dominated_sort(F)[0]]
        hv.append(moea.hypervolume(first, ref))
    assert all(b >= a - 1e-12 for a, b in zip(hv, hv[1:]))


def test_evaluation_error_names_generation():
    calls = {"n": 0}

    def flaky(X):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ValueError("boom")
        return schaffer(X)

    with pytest.raises(moea.EvolutionError, match="generation 2") as err:
        moea.evolve(flaky, 2, moea.NsgaConfig(population=10, offspring=10, generations=5))
    assert err.value.generation == 2


def test_config_contracts():
    with pytest.raises(ContractError):
        moea.NsgaConfig(population=0)
    with pytest.raises(ContractError):
        moea.NsgaConfig(p_c=1.5)
    with pytest.raises(ContractError):
        moea.NsgaConfig(eta_m=0)
    assert moea.NsgaConfig().mutation_probability(5) == 0.2


# ---------------------------------------------------------------- hypervolume

def test_hypervolume_examples():
    assert moea.hypervolume([(0, 0, 0)], (1, 1, 1)) == 1.0
    assert moea.hypervolume([(0, 0.5, 0), (0.5, 0, 0)], (1, 1, 1)) == pytest.approx(0.75)
    base = moea.hypervolume([(0.2, 0.3, 0.1), (0.5, 0.1, 0.4)], (1, 1, 1))
    assert moea.hypervolume([(0.2, 0.3, 0.1), (0.5, 0.1, 0.4), (0.6, 0.6, 0.6)], (1, 1, 1)) == pytest.approx(base)
    with pytest.raises(ContractError):
        moea.hypervolume([(1.2, 0, 0)], (1, 1, 1))


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.just(3)), elements=st.floats(0, 0.99)))
def test_hypervolume_matches_inclusion_exclusion(P):
    want = oracles.hypervolume_inclusion_exclusion(P.tolist(), (1, 1, 1))
    assert moea.hypervolume(P, (1, 1, 1)) == pytest.approx(want, abs=1e-9)
