"""The two-target zero-sum security game: actions, payoffs and equilibrium solving.

Payoffs are always from the attacker's point of view; the defender receives the
negation. A mixed strategy is a plain 1-d probability vector indexed like the
corresponding :class:`ActionSpace`.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .cascade import CascadeModel, run_cascade, run_cascade_mask
from .errors import BudgetExceeded, DimensionMismatch, InvalidParams, SolverFailure

ATTACKER = "attacker"
DEFENDER = "defender"
DEFAULT_MATRIX_BUDGET = 25_000_000
FICTITIOUS_PLAY_ABOVE = 2000


def pair_index(u: int, v: int, n: int) -> int:
    """Position of the pair ``{u, v}`` in the lexicographic list of all pairs of ``range(n)``."""
    if u == v:
        raise InvalidParams("a pair needs two distinct nodes")
    if u > v:
        u, v = v, u
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


def pair_indices(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
    u, v = pairs[:, 0], pairs[:, 1]
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


def all_pairs(n: int) -> np.ndarray:
    u, v = np.triu_indices(n, 1)
    return np.column_stack([u, v])


@dataclass(frozen=True, eq=False)
class ActionSpace:
    """All unordered node pairs from ``node_pool``, in lexicographic order."""

    node_pool: tuple
    actions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pool = tuple(sorted(int(v) for v in self.node_pool))
        if len(set(pool)) != len(pool):
            raise InvalidParams("node pool has repeated nodes")
        if len(pool) < 2:
            raise InvalidParams("an action space needs at least two nodes")
        object.__setattr__(self, "node_pool", pool)
        acts = np.array(list(combinations(pool, 2)), dtype=np.int64)
        acts.setflags(write=False)
        object.__setattr__(self, "actions", acts)

    @classmethod
    def full(cls, n: int) -> "ActionSpace":
        return cls(tuple(range(n)))

    def __len__(self) -> int:
        return len(self.actions)

    def pair(self, i: int) -> tuple:
        u, v = self.actions[i]
        return int(u), int(v)

    def index(self, pair) -> int:
        u, v = sorted(int(x) for x in pair)
        lookup = self.__dict__.get("_lookup")
        if lookup is None:
            lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(self.actions.tolist())}
            object.__setattr__(self, "_lookup", lookup)
        return lookup[(u, v)]


def initial_failures(alpha_a, alpha_d) -> frozenset:
    """Attacked nodes that are not also defended."""
    a = frozenset(int(v) for v in alpha_a)
    return a - (a & frozenset(int(v) for v in alpha_d))


def play_trial(model: CascadeModel, alpha_a, alpha_d) -> tuple:
    """Simulate one joint action; returns ``(attacker payoff, CascadeOutcome)``."""
    outcome = run_cascade(model, initial_failures(alpha_a, alpha_d))
    return len(outcome.omega) / model.n, outcome


class CascadeSizeCache:
    """Memoised ``|C(theta)|`` keyed by the seed set.

    A payoff only depends on the seed set, and with two targets per side there
    are at most ``n(n+1)/2 + 1`` distinct seed sets, so this turns payoff
    matrices and exploiter rollouts into cheap lookups.
    """

    def __init__(self, model: CascadeModel):
        self.model = model
        self._sizes = {frozenset(): 0}

    def size(self, theta: frozenset) -> int:
        s = self._sizes.get(theta)
        if s is None:
            mask = np.zeros(self.model.n, dtype=bool)
            mask[list(theta)] = True
            omega, _ = run_cascade_mask(self.model, mask)
            s = int(omega.sum())
            self._sizes[theta] = s
        return s

    def fill(self, thetas, threads: int = 1) -> None:
        todo = sorted({t for t in thetas if t not in self._sizes}, key=sorted)
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(threads) as ex:
                sizes = list(ex.map(self._compute, todo))
        else:
            sizes = [self._compute(t) for t in todo]
        self._sizes.update(zip(todo, sizes))

    def _compute(self, theta):
        mask = np.zeros(self.model.n, dtype=bool)
        mask[list(theta)] = True
        return int(run_cascade_mask(self.model, mask)[0].sum())

    def payoff(self, alpha_a, alpha_d) -> float:
        return self.size(initial_failures(alpha_a, alpha_d)) / self.model.n


def build_payoff_matrix(model: CascadeModel, space_a: ActionSpace, space_d: ActionSpace,
                        budget: int = DEFAULT_MATRIX_BUDGET, threads: int = 1,
                        cache: CascadeSizeCache | None = None) -> np.ndarray:
    """Attacker payoff for every (attack, defense) pair, as a float32 matrix."""
    need = len(space_a) * len(space_d)
    if need > budget:
        raise BudgetExceeded(need, budget)
    cache = cache or CascadeSizeCache(model)
    acts_a = [frozenset(p) for p in space_a.actions.tolist()]
    acts_d = [frozenset(p) for p in space_d.actions.tolist()]
    thetas = [[a - d for d in acts_d] for a in acts_a]
    cache.fill((t for row in thetas for t in row), threads=threads)
    sizes = np.array([[cache.size(t) for t in row] for row in thetas], dtype=np.float64)
    return (sizes / model.n).astype(np.float32)


def check_strategy(pi, size: int | None = None, name: str = "strategy") -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector")
    if size is not None and pi.shape[0] != size:
        raise DimensionMismatch(f"{name} has {pi.shape[0]} entries, expected {size}")
    if np.any(pi < -1e-12) or abs(pi.sum() - 1.0) > 1e-9:
        raise InvalidParams(f"{name} is not a probability vector")
    return pi


def expected_payoff(P, pi_a, pi_d) -> float:
    P = np.asarray(P, dtype=np.float64)
    pi_a = check_strategy(pi_a, P.shape[0], "attacker strategy")
    pi_d = check_strategy(pi_d, P.shape[1], "defender strategy")
    return float(pi_a @ P @ pi_d)


def best_response(P, opponent, side: str) -> tuple:
    """Pure best response for ``side`` against ``opponent``; ties go to the lowest index."""
    P = np.asarray(P, dtype=np.float64)
    if side == ATTACKER:
        values = P @ check_strategy(opponent, P.shape[1], "defender strategy")
        i = int(np.argmax(values))
        size = P.shape[0]
    elif side == DEFENDER:
        values = check_strategy(opponent, P.shape[0], "attacker strategy") @ P
        i = int(np.argmin(values))
        size = P.shape[1]
    else:
        raise InvalidParams(f"unknown side {side!r}")
    pure = np.zeros(size)
    pure[i] = 1.0
    return pure, float(values[i])


def nash_conv(P, pi_a, pi_d) -> float:
    """Sum of both players' best-response gains; zero exactly at an equilibrium."""
    _, br_a = best_response(P, pi_d, ATTACKER)
    _, br_d = best_response(P, pi_a, DEFENDER)
    return br_a - br_d


def _clean(x):
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def _maximin(P):
    # max v  s.t.  P^T x >= v, sum x = 1, x >= 0   (variables x..., v)
    m, n = P.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-P.T, np.ones((n, 1))])
    a_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverFailure(f"maximin LP failed: {res.message}")
    return _clean(res.x[:m])


def solve_zero_sum_ne(P, tol: float = 1e-6) -> tuple:
    """Exact equilibrium ``(pi_a, pi_d, value)`` of the matrix game.

    Solves the maximin LP for each side. Matrices with more than 2000 rows or
    columns fall back to fictitious play with an exploitability target of 1e-4.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or 0 in P.shape or not np.all(np.isfinite(P)):
        raise SolverFailure("payoff matrix must be a finite non-empty 2-d array")
    if max(P.shape) > FICTITIOUS_PLAY_ABOVE:
        return fictitious_play(P, tol=1e-4)
    pi_a = _maximin(P)
    pi_d = _maximin(-P.T)
    gap = nash_conv(P, pi_a, pi_d)
    if gap > tol:
        raise SolverFailure(f"LP solution has exploitability {gap:.3g} > {tol}")
    return pi_a, pi_d, float(pi_a @ P @ pi_d)


def fictitious_play(P, tol: float = 1e-4, max_iter: int = 200_000) -> tuple:
    """Approximate equilibrium by simultaneous fictitious play.

    Stops once the empirical strategies are within ``tol`` exploitability;
    raises :class:`SolverFailure` when ``max_iter`` is reached first.
    """
    P = np.asarray(P, dtype=np.float64)
    m, n = P.shape
    count_a = np.zeros(m)
    count_d = np.zeros(n)
    row_sum = np.zeros(m)   # P @ count_d
    col_sum = np.zeros(n)   # count_a @ P
    i, j = 0, 0
    for it in range(1, max_iter + 1):
        count_a[i] += 1
        count_d[j] += 1
        row_sum += P[:, j]
        col_sum += P[i]
        upper = row_sum.max() / it
        lower = col_sum.min() / it
        if upper - lower <= tol:
            pi_a, pi_d = count_a / it, count_d / it
            return pi_a, pi_d, float(pi_a @ P @ pi_d)
        i = int(np.argmax(row_sum))
        j = int(np.argmin(col_sum))
    raise SolverFailure(f"fictitious play did not reach exploitability {tol} in {max_iter} iterations")


def save_payoff_csv(P, path) -> None:
    np.savetxt(path, np.asarray(P, dtype=np.float64), delimiter=",", fmt="%.9g")


def strategy_records(space: ActionSpace, pi, min_prob: float = 0.0) -> list:
    pi = np.asarray(pi, dtype=np.float64)
    return [
        {"action_index": int(i), "node_pair": list(space.pair(i)), "probability": float(pi[i])}
        for i in np.flatnonzero(pi > min_prob)
    ]


def save_strategy_json(space: ActionSpace, pi, path) -> None:
    Path(path).write_text(json.dumps(strategy_records(space, pi), indent=1) + "\n")
