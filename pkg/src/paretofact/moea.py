"""NSGA-II over box-bounded real vectors.

Objectives are minimized. ``evolve`` takes any callable mapping a (K, N)
matrix of decision vectors to a (K, M) objective matrix, so the same solver
runs the counterfactual search and analytic test problems.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError


class EvolutionError(RuntimeError):
    def __init__(self, generation: int, cause: Exception):
        super().__init__(f"objective evaluation failed at generation {generation}: {cause}")
        self.generation = generation


@dataclass
class NsgaConfig:
    population: int = 100
    offspring: int = 100
    p_m: float | None = None  # None means 1/N
    eta_m: float = 20.0
    p_c: float = 0.9
    eta_c: float = 20.0
    generations: int = 50
    seed: int = 0
    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        if self.population <= 0 or self.offspring <= 0 or self.generations < 0:
            raise ContractError("population and offspring must be > 0, generations >= 0")
        for name in ("p_c", "p_m"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must be in [0, 1], got {v}")
        if self.eta_m <= 0 or self.eta_c <= 0:
            raise ContractError("distribution indices must be > 0")
        if not self.lower < self.upper:
            raise ContractError("lower bound must be below upper bound")

    def mutation_probability(self, n_var: int) -> float:
        return 1.0 / n_var if self.p_m is None else self.p_m

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Individual:
    delta: np.ndarray
    objectives: np.ndarray
    rank: int = 0
    crowding: float = 0.0


@dataclass
class ParetoFront:
    members: list[Individual]
    config: NsgaConfig
    generations: int
    evaluations: int
    history: list[np.ndarray] = field(default_factory=list)  # retained objectives per generation

    def __len__(self) -> int:
        return len(self.members)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([m.delta for m in self.members])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([m.objectives for m in self.members])


# ---------------------------------------------------------------- dominance

def dominates(a, b) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def _check_evaluated(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ContractError(f"objective matrix must be 2-D, got shape {F.shape}")
    if np.isnan(F).any():
        raise ContractError("population contains unevaluated individuals (NaN objectives)")
    return F


def fast_non_dominated_sort(F) -> list[list[int]]:
    """Partition row indices of ``F`` into successive non-dominated fronts."""
    F = _check_evaluated(F)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts: list[list[int]] = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def ranks_from_fronts(fronts: list[list[int]], n: int) -> np.ndarray:
    rank = np.empty(n, dtype=np.int64)
    for r, front in enumerate(fronts):
        rank[front] = r
    return rank


def crowding_distance(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    n, m = F.shape
    if n <= 2:
        return np.full(n, np.inf)
    dist = np.zeros(n)
    for k in range(m):
        col = F[:, k]
        span = col.max() - col.min()
        if span == 0:
            continue
        order = np.argsort(col, kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        dist[order[1:-1]] += (col[order[2:]] - col[order[:-2]]) / span
    return dist


# ---------------------------------------------------------------- variation

def sbx_from_draws(p1, p2, u, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Unbounded SBX given uniform draws ``u`` (one per component)."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    e = 1.0 / (eta + 1.0)
    with np.errstate(divide="ignore"):
        beta = np.where(u <= 0.5, (2 * u) ** e, (1.0 / (2 * (1 - u))) ** e)
    c1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    c2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    return c1, c2


def sbx_crossover(p1, p2, eta: float, rng: np.random.Generator,
                  lower: float = -1.0, upper: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise DimensionError(f"sbx: parent shapes {p1.shape} and {p2.shape} differ")
    c1, c2 = sbx_from_draws(p1, p2, rng.random(p1.shape), eta)
    return np.clip(c1, lower, upper), np.clip(c2, lower, upper)


def polynomial_from_draws(x, u, eta: float, lower: float = -1.0, upper: float = 1.0) -> np.ndarray:
    """Bounded polynomial perturbation of every component given draws ``u``."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    span = upper - lower
    d1 = (x - lower) / span
    d2 = (upper - x) / span
    mp = 1.0 / (eta + 1.0)
    low = 2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)
    high = 2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)
    dq = np.where(u < 0.5, np.abs(low) ** mp - 1.0, 1.0 - np.abs(high) ** mp)
    return np.clip(x + dq * span, lower, upper)


def polynomial_mutation(x, p_m: float, eta: float, rng: np.random.Generator,
                        lower: float = -1.0, upper: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    fire = rng.random(x.shape) < p_m
    u = rng.random(x.shape)
    return np.where(fire, polynomial_from_draws(x, u, eta, lower, upper), x)


# ---------------------------------------------------------------- selection

def _tournament(rng: np.random.Generator, rank: np.ndarray, crowd: np.ndarray, count: int) -> np.ndarray:
    a = rng.integers(0, len(rank), count)
    b = rng.integers(0, len(rank), count)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def _survivors(F: np.ndarray, size: int, old_front: np.ndarray | None = None
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices kept by non-dominated sorting + truncation, with their rank and crowding.

    ``old_front`` lists the rows of ``F`` that formed the previous population's
    first front. When the merged first front overflows, each of those rows is
    kept, or replaced by one offspring that dominates it; only the remaining
    slots are filled by crowding distance. The retained first front therefore
    weakly dominates the previous one and hypervolume cannot decrease.
    """
    fronts = fast_non_dominated_sort(F)
    keep: list[int] = []
    rank = np.empty(len(F), dtype=np.int64)
    crowd = np.empty(len(F))
    for r, front in enumerate(fronts):
        idx = np.asarray(front)
        rank[idx] = r
        crowd[idx] = crowding_distance(F[idx])
        if len(keep) + len(idx) <= size:
            keep.extend(idx.tolist())
            if len(keep) == size:
                break
            continue
        required: list[int] = []
        if r == 0 and old_front is not None:
            members = set(idx.tolist())
            for j in old_front.tolist():
                if j in members:
                    required.append(j)
                else:
                    required.append(next(i for i in idx.tolist() if dominates(F[i], F[j])))
            required = sorted(set(required))
        rest = sorted((i for i in idx.tolist() if i not in set(required)), key=lambda i: (-crowd[i], i))
        keep.extend(required)
        keep.extend(rest[: size - len(keep)])
        break
    keep_arr = np.asarray(keep)
    return keep_arr, rank[keep_arr], crowd[keep_arr]


def evolve(objective: Callable[[np.ndarray], np.ndarray], n_var: int, config: NsgaConfig,
           keep_history: bool = False) -> ParetoFront:
    """Run NSGA-II and return the deduplicated rank-0 members of the final population."""
    if n_var < 1:
        raise ContractError("n_var must be >= 1")
    rng = np.random.default_rng(config.seed)
    lo, hi = config.lower, config.upper
    p_m = config.mutation_probability(n_var)

    def run(X: np.ndarray, gen: int) -> np.ndarray:
        try:
            F = np.asarray(objective(X), dtype=np.float64)
        except Exception as exc:
            raise EvolutionError(gen, exc) from exc
        if F.ndim != 2 or len(F) != len(X):
            raise EvolutionError(gen, DimensionError(f"objective returned shape {F.shape} for {len(X)} inputs"))
        return F

    X = rng.uniform(lo, hi, (config.population, n_var))
    F = run(X, 0)
    evaluations = len(X)
    keep, rank, crowd = _survivors(F, config.population)
    X, F = X[keep], F[keep]
    history = [F.copy()] if keep_history else []

    for gen in range(1, config.generations + 1):
        n_pairs = (config.offspring + 1) // 2
        parents = _tournament(rng, rank, crowd, 2 * n_pairs)
        children = []
        for k in range(n_pairs):
            p1, p2 = X[parents[2 * k]], X[parents[2 * k + 1]]
            if rng.random() < config.p_c:
                c1, c2 = sbx_crossover(p1, p2, config.eta_c, rng, lo, hi)
            else:
                c1, c2 = p1.copy(), p2.copy()
            children.append(polynomial_mutation(c1, p_m, config.eta_m, rng, lo, hi))
            children.append(polynomial_mutation(c2, p_m, config.eta_m, rng, lo, hi))
        Xo = np.array(children[: config.offspring])
        Fo = run(Xo, gen)
        evaluations += len(Xo)
        Xa = np.vstack([X, Xo])
        Fa = np.vstack([F, Fo])
        keep, rank, crowd = _survivors(Fa, config.population, np.flatnonzero(rank == 0))
        X, F = Xa[keep], Fa[keep]
        if keep_history:
            history.append(F.copy())

    members = []
    seen: set[bytes] = set()
    for i in np.flatnonzero(rank == 0):
        key = X[i].tobytes()
        if key in seen:
            continue
        seen.add(key)
        members.append(Individual(X[i].copy(), F[i].copy(), 0, float(crowd[i])))
    return ParetoFront(members, config, config.generations, evaluations, history)


# ---------------------------------------------------------------- hypervolume

def _hv2d(points: np.ndarray, ref: np.ndarray) -> float:
    pts = points[np.argsort(points[:, 0], kind="stable")]
    area = 0.0
    best_y = ref[1]
    for x, y in pts:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return area


def hypervolume(points, reference) -> float:
    """Exact 3-D dominated volume by sweeping slices along the last objective."""
    P = np.asarray(points, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if P.size == 0:
        return 0.0
    if P.ndim != 2 or P.shape[1] != 3 or ref.shape != (3,):
        raise DimensionError(f"hypervolume needs (n, 3) points and a 3-vector, got {P.shape}, {ref.shape}")
    for p in P:
        if not dominates(p, ref):
            raise ContractError(f"point {p.tolist()} does not dominate reference {ref.tolist()}")
    P = P[np.argsort(P[:, 2], kind="stable")]
    total = 0.0
    for i in range(len(P)):
        z_next = P[i + 1, 2] if i + 1 < len(P) else ref[2]
        height = z_next - P[i, 2]
        if height > 0:
            total += height * _hv2d(P[: i + 1, :2], ref[:2])
    return total
