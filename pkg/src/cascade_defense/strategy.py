"""Mixed strategies: uniform, centrality heuristics, restricted meta-games and predictor-driven synthesis."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeModel
from .errors import BudgetExceeded, InvalidParams
from .game import ActionSpace, CascadeSizeCache, initial_failures, pair_indices, solve_zero_sum_ne
from .graph import CentralityTable, centralities

PREDICTOR_LP = "PredictorLP"
BASELINE = "Baseline"
EXACT_NE = "ExactNE"
TOP_TWO = "TopTwo"
TOP_WEIGHTED = "TopWeightedSampling"
DEFAULT_CANDIDATE_BUDGET = 1_000_000


@dataclass(frozen=True, eq=False)
class SynthesizedStrategy:
    """Mixed strategy stored sparsely as ``support`` indices into ``space``."""

    space: ActionSpace
    support: np.ndarray
    probs: np.ndarray
    source: str = BASELINE

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).reshape(-1)
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(support) != len(probs) or len(support) == 0:
            raise InvalidParams("support and probs must be non-empty and the same length")
        if len(np.unique(support)) != len(support):
            raise InvalidParams("support actions must be distinct")
        if support.min() < 0 or support.max() >= len(self.space):
            raise InvalidParams("support index outside the action space")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidParams("probabilities must be non-negative and sum to 1")
        order = np.argsort(support)
        object.__setattr__(self, "support", support[order])
        object.__setattr__(self, "probs", probs[order] / probs.sum())

    @classmethod
    def from_dense(cls, space: ActionSpace, pi, source: str = BASELINE, min_prob: float = 0.0):
        pi = np.asarray(pi, dtype=np.float64)
        keep = np.flatnonzero(pi > min_prob)
        return cls(space, keep, pi[keep] / pi[keep].sum(), source)

    def dense(self) -> np.ndarray:
        pi = np.zeros(len(self.space))
        pi[self.support] = self.probs
        return pi

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` action indices."""
        if len(self.support) == 1:
            return np.full(size, self.support[0])
        return self.support[rng.choice(len(self.support), size=size, p=self.probs)]

    def to_records(self) -> list:
        return [{"action_index": int(i), "node_pair": list(self.space.pair(i)), "probability": float(p)}
                for i, p in zip(self.support, self.probs)]


def mixture(parts, weights, source: str = BASELINE) -> SynthesizedStrategy:
    """Convex combination of strategies over the same action space."""
    space = parts[0].space
    pi = sum(w * s.dense() for s, w in zip(parts, weights))
    return SynthesizedStrategy.from_dense(space, pi, source)


def save_strategy(strategy: SynthesizedStrategy, path) -> None:
    doc = {"source": strategy.source, "actions": strategy.to_records()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def uniform_strategy(space: ActionSpace) -> SynthesizedStrategy:
    k = len(space)
    return SynthesizedStrategy(space, np.arange(k), np.full(k, 1.0 / k), BASELINE)


# -- EWM-TOPSIS ------------------------------------------------------------------


@dataclass(frozen=True)
class TopsisRanking:
    scores: np.ndarray
    ranking: np.ndarray
    weights: np.ndarray
    table: CentralityTable = field(repr=False)

    @property
    def rank_of(self) -> np.ndarray:
        r = np.empty(len(self.ranking), dtype=np.int64)
        r[self.ranking] = np.arange(len(self.ranking))
        return r


def entropy_weights(normalized: np.ndarray) -> np.ndarray:
    """Entropy weight per column of a non-negative matrix; constant columns get zero weight."""
    m, k = normalized.shape
    col = normalized.sum(axis=0)
    share = np.where(col > 0, normalized / np.where(col > 0, col, 1.0), 1.0 / m)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(share > 0, share * np.log(share), 0.0)
    entropy = -plogp.sum(axis=0) / np.log(m)
    spread = normalized.max(axis=0) - normalized.min(axis=0)
    diversity = np.where(spread > 0, np.clip(1.0 - entropy, 0.0, None), 0.0)
    if diversity.sum() <= 0:
        return np.full(k, 1.0 / k)
    return diversity / diversity.sum()


def ewm_topsis_ranking(table: CentralityTable) -> TopsisRanking:
    """Score nodes by closeness to the ideal point over entropy-weighted centralities."""
    raw = table.as_matrix()
    if raw.shape[0] < 2:
        raise InvalidParams("ranking needs at least two nodes")
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = hi - lo
    norm = np.where(span > 0, (raw - lo) / np.where(span > 0, span, 1.0), 0.0)
    w = entropy_weights(norm)
    weighted = norm * w
    best, worst = weighted.max(axis=0), weighted.min(axis=0)
    d_best = np.sqrt(((weighted - best) ** 2).sum(axis=1))
    d_worst = np.sqrt(((weighted - worst) ** 2).sum(axis=1))
    total = d_best + d_worst
    scores = np.divide(d_worst, total, out=np.full(len(total), 0.5), where=total > 0)
    ranking = np.lexsort((np.arange(len(scores)), -scores))
    return TopsisRanking(scores, ranking, w, table)


def save_ranking_csv(ranking: TopsisRanking, path) -> None:
    names = ranking.table.names
    raw = ranking.table.as_matrix()
    rank = ranking.rank_of
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["node", *names, *(f"weight_{c}" for c in names), "score", "rank"])
        for v in range(len(ranking.scores)):
            out.writerow([v, *(f"{x:.9g}" for x in raw[v]), *(f"{x:.9g}" for x in ranking.weights),
                          f"{ranking.scores[v]:.9g}", int(rank[v]) + 1])


def heuristic_strategy(ranking, space: ActionSpace, pair_rule: str = TOP_TWO) -> SynthesizedStrategy:
    """Pair strategy derived from a node ranking (array of nodes, best first, or a TopsisRanking).

    ``TopTwo`` plays the two best-ranked nodes of the space's pool. ``TopWeightedSampling``
    mixes over all pairs with weight proportional to the product of the two
    nodes' rank scores, where the best node scores ``n`` and the worst 1.
    """
    order = np.asarray(ranking.ranking if isinstance(ranking, TopsisRanking) else ranking, dtype=np.int64)
    pool = set(space.node_pool)
    order = np.array([v for v in order if v in pool], dtype=np.int64)
    if pair_rule == TOP_TWO:
        return SynthesizedStrategy(space, [space.index(order[:2])], [1.0], BASELINE)
    if pair_rule == TOP_WEIGHTED:
        score = np.zeros(max(space.node_pool) + 1)
        score[order] = np.arange(len(order), 0, -1)
        w = score[space.actions[:, 0]] * score[space.actions[:, 1]]
        return SynthesizedStrategy(space, np.arange(len(space)), w / w.sum(), BASELINE)
    raise InvalidParams(f"unknown pair rule {pair_rule!r}")


# -- restricted meta-game ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RestrictedStrategyGame:
    attacker_meta_actions: tuple
    defender_meta_actions: tuple
    payoff: np.ndarray
    ne_attacker: np.ndarray
    ne_defender: np.ndarray
    value: float

    def attacker_strategy(self) -> SynthesizedStrategy:
        return mixture([s for _, s in self.attacker_meta_actions], self.ne_attacker)

    def defender_strategy(self) -> SynthesizedStrategy:
        return mixture([s for _, s in self.defender_meta_actions], self.ne_defender)


def solve_two_by_two(P) -> tuple:
    """Equilibrium of a 2x2 zero-sum game by saddle-point check, then the indifference formula."""
    P = np.asarray(P, dtype=np.float64)
    (a, b), (c, d) = P
    lower = P.min(axis=1).max()
    upper = P.max(axis=0).min()
    if lower >= upper:
        i = int(np.argmax(P.min(axis=1)))
        j = int(np.argmin(P.max(axis=0)))
        return np.eye(2)[i], np.eye(2)[j], float(P[i, j])
    denom = a - b - c + d
    p = (d - c) / denom
    q = (d - b) / denom
    pi_a, pi_d = np.array([p, 1 - p]), np.array([q, 1 - q])
    return pi_a, pi_d, float(pi_a @ P @ pi_d)


def estimate_cell(model: CascadeModel, meta_a: SynthesizedStrategy, meta_d: SynthesizedStrategy,
                  samples: int, rng: np.random.Generator, cache: CascadeSizeCache | None = None) -> float:
    cache = cache or CascadeSizeCache(model)
    atk = meta_a.space.actions[meta_a.sample(rng, samples)]
    dfn = meta_d.space.actions[meta_d.sample(rng, samples)]
    total = sum(cache.size(initial_failures(a, d)) for a, d in zip(atk.tolist(), dfn.tolist()))
    return total / (samples * model.n)


def restricted_strategy_ne(model: CascadeModel, metas_a, metas_d, samples_per_cell: int = 2000, seed: int = 0,
                           cache: CascadeSizeCache | None = None) -> RestrictedStrategyGame:
    """Monte-Carlo payoff matrix over named meta-strategies and its equilibrium.

    ``metas_a``/``metas_d`` are sequences of ``(name, SynthesizedStrategy)``.
    Cell ``(i, j)`` draws from its own stream seeded by ``(seed, i, j)``.
    """
    if samples_per_cell < 1:
        raise InvalidParams("samples_per_cell must be positive")
    metas_a, metas_d = tuple(metas_a), tuple(metas_d)
    cache = cache or CascadeSizeCache(model)
    P = np.array([[estimate_cell(model, sa, sd, samples_per_cell, np.random.default_rng([seed, i, j]), cache)
                   for j, (_, sd) in enumerate(metas_d)] for i, (_, sa) in enumerate(metas_a)])
    if P.shape == (2, 2):
        pi_a, pi_d, value = solve_two_by_two(P)
    else:
        pi_a, pi_d, value = solve_zero_sum_ne(P)
    return RestrictedStrategyGame(metas_a, metas_d, P, pi_a, pi_d, value)


def strategy_restricted_baseline(model: CascadeModel, space: ActionSpace, samples_per_cell: int = 2000,
                                 seed: int = 0, cache: CascadeSizeCache | None = None) -> RestrictedStrategyGame:
    """Meta-game between uniform pair sampling and the EWM-TOPSIS top pair, for both sides."""
    ranking = ewm_topsis_ranking(centralities(model.graph))
    metas = (("uniform", uniform_strategy(space)), ("ewm-topsis", heuristic_strategy(ranking, space, TOP_TWO)))
    return restricted_strategy_ne(model, metas, metas, samples_per_cell, seed, cache)


# -- synthesis from predicted payoffs ---------------------------------------------


class PayoffOracle:
    """Attacker payoffs for arbitrary action combinations of one action space."""

    def matrix(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def paired(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PredictorOracle(PayoffOracle):
    """Predicted payoffs, except that a defense covering the whole attack is worth exactly 0.

    With no initial failure nothing can cascade, so those cells are known
    without asking the network; an unseen pair often gets them badly wrong.
    """

    def __init__(self, predictor, space: ActionSpace, x):
        self.predictor, self.space, self.x = predictor, space, x

    def matrix(self, rows, cols):
        from .predictor import predicted_payoff_matrix

        rows, cols = np.asarray(rows), np.asarray(cols)
        out = predicted_payoff_matrix(self.predictor, self.space.actions[rows], self.space.actions[cols], self.x)
        out[rows[:, None] == cols[None, :]] = 0.0
        return out

    def paired(self, rows, cols, chunk: int = 8192):
        acts = self.space.actions
        n = self.predictor.n
        out = np.empty(len(rows))
        for s in range(0, len(rows), chunk):
            ai = pair_indices(acts[rows[s:s + chunk]], n)
            di = pair_indices(acts[cols[s:s + chunk]], n)
            out[s:s + chunk] = self.predictor.predict_indices(ai, di, self.x).mean(axis=1)
        out[np.asarray(rows) == np.asarray(cols)] = 0.0
        return out


class CascadeOracle(PayoffOracle):
    """True payoffs by simulation, memoised on the seed set."""

    def __init__(self, model: CascadeModel, space: ActionSpace, cache: CascadeSizeCache | None = None):
        self.model, self.space = model, space
        self.cache = cache or CascadeSizeCache(model)

    def _pay(self, i, j):
        return self.cache.payoff(self.space.actions[i], self.space.actions[j])

    def matrix(self, rows, cols):
        return np.array([[self._pay(i, j) for j in cols] for i in rows])

    def paired(self, rows, cols):
        return np.array([self._pay(i, j) for i, j in zip(rows, cols)])


def unopposed_defense(space: ActionSpace) -> np.ndarray:
    """For every action, the first action of the space sharing no node with it."""
    acts = space.actions
    out = np.full(len(acts), -1, dtype=np.int64)
    for i, (u, v) in enumerate(acts.tolist()):
        free = np.flatnonzero((acts[:, 0] != u) & (acts[:, 0] != v) & (acts[:, 1] != u) & (acts[:, 1] != v))
        out[i] = free[0] if len(free) else (1 if i == 0 and len(acts) > 1 else 0)
    return out


def candidate_pool(scores: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """The ``k - k // 2`` best-scoring actions plus ``k // 2`` others drawn uniformly."""
    size = len(scores)
    if not 1 <= k <= size:
        raise InvalidParams(f"k_candidates must lie in [1, {size}], got {k}")
    top = np.lexsort((np.arange(size), -scores))[: k - k // 2]
    rest = np.setdiff1d(np.arange(size), top)
    extra = rng.choice(rest, k // 2, replace=False) if k // 2 else np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate([top, extra]))


def synthesize_from_oracle(oracle: PayoffOracle, space: ActionSpace, k_candidates: int | None = None, seed: int = 0,
                           budget: int = DEFAULT_CANDIDATE_BUDGET, source: str = PREDICTOR_LP) -> tuple:
    """Equilibrium of the payoff game restricted to candidate pools chosen from the oracle.

    Both sides rank actions by their unopposed payoff (the oracle's payoff
    against a defense sharing no node with them), keep the better half of
    their pool from that ranking and fill the rest uniformly at random.
    """
    size = len(space)
    k = size if k_candidates is None else k_candidates
    if k * k > budget:
        raise BudgetExceeded(k * k, budget, "candidate payoff matrix")
    rng = np.random.default_rng(seed)
    scores = oracle.paired(np.arange(size), unopposed_defense(space))
    rows = candidate_pool(scores, k, rng)
    cols = candidate_pool(scores, k, rng)
    P = oracle.matrix(rows, cols)
    pi_a, pi_d, _ = solve_zero_sum_ne(P)
    keep_a, keep_d = pi_a > 0, pi_d > 0
    atk = SynthesizedStrategy(space, rows[keep_a], pi_a[keep_a], source)
    dfn = SynthesizedStrategy(space, cols[keep_d], pi_d[keep_d], source)
    return atk, dfn


def synthesize_from_predictor(predictor, space: ActionSpace, x, k_candidates: int | None = None, seed: int = 0,
                              budget: int = DEFAULT_CANDIDATE_BUDGET) -> tuple:
    """Attacker and defender strategies from the predictor's payoff estimates."""
    return synthesize_from_oracle(PredictorOracle(predictor, space, x), space, k_candidates, seed, budget)
