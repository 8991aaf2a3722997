"""Bandit exploiters, exploitability estimates and KL divergence to an equilibrium.

All payoffs are attacker payoffs (failed fraction). An exploiter of the ego
*defender* is an attacker maximising that payoff; an exploiter of the ego
*attacker* is a defender, and its gain is the negated attacker payoff.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeModel
from .errors import DimensionMismatch, InvalidParams
from .game import ATTACKER, DEFENDER, CascadeSizeCache, initial_failures
from .strategy import SynthesizedStrategy

KL_SMOOTHING = 1e-9
METRIC_FIELDS = ("run_id", "method", "n_nodes", "cascade", "kl", "exploitability", "val_err", "wall_time_s")


@dataclass
class ExploiterConfig:
    arm_pool_size: int = 1000
    pulls_budget: int = 50_000
    ucb_c: float = float(np.sqrt(2.0))
    seed: int = 0
    eval_plays: int = 5000
    self_play: int = 10_000

    def __post_init__(self):
        if min(self.arm_pool_size, self.pulls_budget, self.eval_plays, self.self_play) < 1 or self.ucb_c < 0:
            raise InvalidParams("exploiter budgets must be positive and ucb_c non-negative")


@dataclass(frozen=True)
class ExploiterResult:
    strategy: SynthesizedStrategy
    mean_payoff: float
    arm_pool: np.ndarray = field(repr=False)
    pulls: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ExploitabilityReport:
    delta_g: float
    delta_XA: float
    delta_XD: float
    delta: float
    pulls: int
    arm_pool: dict = field(repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "arm_pool"}
        d["arm_pool"] = {k: np.asarray(v).tolist() for k, v in self.arm_pool.items()}
        return d


def combine(delta_g: float, delta_XA: float, delta_XD: float) -> float:
    return (delta_XD - delta_g) + (delta_XA + delta_g)


def monte_carlo_se_bound(*batch_sizes: int) -> float:
    """Worst-case standard error of a sum of independent means of [0, 1] payoffs."""
    return 0.5 * float(np.sqrt(sum(1.0 / m for m in batch_sizes)))


def _payoffs(cache: CascadeSizeCache, atk: np.ndarray, dfn: np.ndarray) -> np.ndarray:
    n = cache.model.n
    return np.array([cache.size(initial_failures(a, d)) for a, d in zip(atk.tolist(), dfn.tolist())]) / n


def ucb1(pull, n_arms: int, budget: int, c: float = float(np.sqrt(2.0))) -> tuple:
    """UCB1 over rewards in [0, 1]; ``pull(arm)`` returns one reward.

    Every arm is pulled once in index order, then the arm maximising
    ``mean + c * sqrt(ln t / pulls)`` is pulled (lowest index on ties).
    Returns ``(counts, sums)``.
    """
    counts = np.zeros(n_arms, dtype=np.int64)
    sums = np.zeros(n_arms)
    for t in range(budget):
        if t < n_arms:
            arm = t
        else:
            bonus = c * np.sqrt(np.log(t) / counts)
            arm = int(np.argmax(sums / counts + bonus))
        sums[arm] += pull(arm)
        counts[arm] += 1
    return counts, sums


def train_exploiter(model: CascadeModel, ego: SynthesizedStrategy, side_to_exploit: str,
                    config: ExploiterConfig | None = None, extra_arms=(), cache: CascadeSizeCache | None = None
                    ) -> ExploiterResult:
    """Bandit best response to ``ego``, which plays ``side_to_exploit``.

    The reported mean payoff is the exploiter's own gain: the attacker payoff
    when exploiting a defender, its negation when exploiting an attacker.
    """
    config = config or ExploiterConfig()
    if side_to_exploit not in (ATTACKER, DEFENDER):
        raise InvalidParams(f"unknown side {side_to_exploit!r}")
    cache = cache or CascadeSizeCache(model)
    space = ego.space
    rng = np.random.default_rng([config.seed, 0 if side_to_exploit == DEFENDER else 1])
    size = len(space)
    if size <= config.arm_pool_size:
        arms = np.arange(size)
    else:
        arms = rng.choice(size, config.arm_pool_size, replace=False)
    arms = np.unique(np.concatenate([arms, np.asarray(extra_arms, dtype=np.int64)]))
    acts = space.actions
    ego_draws = acts[ego.sample(rng, config.pulls_budget)]
    exploiting_defender = side_to_exploit == DEFENDER
    step = iter(range(config.pulls_budget))

    def pull(arm):
        other = ego_draws[next(step)]
        if exploiting_defender:
            return cache.size(initial_failures(acts[arms[arm]], other)) / model.n
        return 1.0 - cache.size(initial_failures(other, acts[arms[arm]])) / model.n

    counts, sums = ucb1(pull, len(arms), config.pulls_budget, config.ucb_c)
    pulled = counts > 0
    means = np.where(pulled, sums / np.maximum(counts, 1), -np.inf)
    best = int(arms[int(np.argmax(means))])
    eval_rng = np.random.default_rng([config.seed, 2 if exploiting_defender else 3])
    other = acts[ego.sample(eval_rng, config.eval_plays)]
    mine = np.repeat(acts[best][None, :], config.eval_plays, axis=0)
    if exploiting_defender:
        gain = _payoffs(cache, mine, other).mean()
    else:
        gain = -_payoffs(cache, other, mine).mean()
    return ExploiterResult(SynthesizedStrategy(space, [best], [1.0], "Exploiter"), float(gain), arms, counts)


def self_play_value(model: CascadeModel, ego_atk: SynthesizedStrategy, ego_def: SynthesizedStrategy,
                    plays: int, seed: int, cache: CascadeSizeCache | None = None) -> float:
    cache = cache or CascadeSizeCache(model)
    rng = np.random.default_rng([seed, 4])
    atk = ego_atk.space.actions[ego_atk.sample(rng, plays)]
    dfn = ego_def.space.actions[ego_def.sample(rng, plays)]
    return float(_payoffs(cache, atk, dfn).mean())


def best_pure_responses(P, ego_atk: SynthesizedStrategy, ego_def: SynthesizedStrategy) -> tuple:
    """Indices of exact best responses under a known payoff matrix (attacker's, defender's)."""
    P = np.asarray(P, dtype=np.float64)
    row_vals = P @ ego_def.dense()
    col_vals = ego_atk.dense() @ P
    return (np.flatnonzero(row_vals >= row_vals.max() - 1e-12),
            np.flatnonzero(col_vals <= col_vals.min() + 1e-12))


def exploitability(model: CascadeModel, ego_atk: SynthesizedStrategy, ego_def: SynthesizedStrategy,
                   config: ExploiterConfig | None = None, true_matrix=None,
                   cache: CascadeSizeCache | None = None) -> ExploitabilityReport:
    """Combined gain of an attacker exploiter and a defender exploiter against the ego pair.

    ``delta_XD`` is the attacker payoff the attacker exploiter reaches against
    the ego defender; ``delta_XA`` is the defender exploiter's gain (negated
    attacker payoff) against the ego attacker. Their sum is zero at an
    equilibrium and positive otherwise, up to sampling noise.
    """
    config = config or ExploiterConfig()
    cache = cache or CascadeSizeCache(model)
    extra_a, extra_d = ((), ()) if true_matrix is None else best_pure_responses(true_matrix, ego_atk, ego_def)
    xd = train_exploiter(model, ego_def, DEFENDER, config, extra_a, cache)
    xa = train_exploiter(model, ego_atk, ATTACKER, config, extra_d, cache)
    g = self_play_value(model, ego_atk, ego_def, config.self_play, config.seed, cache)
    delta = combine(g, xa.mean_payoff, xd.mean_payoff)
    return ExploitabilityReport(g, xa.mean_payoff, xd.mean_payoff, delta, 2 * config.pulls_budget,
                                {ATTACKER: xd.arm_pool, DEFENDER: xa.arm_pool})


def kl_divergence(method, ne, eps: float = KL_SMOOTHING) -> float:
    """KL(method || (1 - eps) * ne + eps * uniform) for one player."""
    p = np.asarray(method, dtype=np.float64)
    q = np.asarray(ne, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionMismatch(f"strategies have shapes {p.shape} and {q.shape}")
    q = (1.0 - eps) * q + eps / len(q)
    mask = p > 0
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def kl_to_ne(method_atk, method_def, ne_atk, ne_def, eps: float = KL_SMOOTHING) -> float:
    """Attacker plus defender KL divergence to the (smoothed) equilibrium."""
    def vec(s):
        return s.dense() if isinstance(s, SynthesizedStrategy) else s
    return kl_divergence(vec(method_atk), vec(ne_atk), eps) + kl_divergence(vec(method_def), vec(ne_def), eps)


def append_metrics(path, rows) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if new:
            out.writeheader()
        for row in rows:
            out.writerow({k: _fmt(row.get(k, "")) for k in METRIC_FIELDS})


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


def save_report(report: ExploitabilityReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
