import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_defense.cascade import SHORTEST_PATH
from cascade_defense.errors import DimensionMismatch
from cascade_defense.evaluation import (
    ExploiterConfig,
    append_metrics,
    combine,
    exploitability,
    kl_divergence,
    kl_to_ne,
    monte_carlo_se_bound,
    save_report,
    train_exploiter,
    ucb1,
)
from cascade_defense.game import DEFENDER, ActionSpace, CascadeSizeCache, build_payoff_matrix, solve_zero_sum_ne
from cascade_defense.graph import THRESHOLD
from cascade_defense.strategy import SynthesizedStrategy, uniform_strategy

from conftest import make_model


def test_ucb_prefers_better_arm():
    counts, sums = ucb1(lambda arm: 1.0 if arm == 0 else 0.0, 2, 10_000)
    assert counts[0] >= 0.95 * 10_000
    assert sums[1] == 0
    counts, _ = ucb1(lambda arm: 0.5, 1, 20)
    assert counts.tolist() == [20]


def test_single_arm_exploiter():
    m = make_model(THRESHOLD, 6, seed=0)
    space = ActionSpace((0, 1))
    ego = uniform_strategy(space)
    res = train_exploiter(m, ego, DEFENDER, ExploiterConfig(pulls_budget=30, eval_plays=10))
    assert res.strategy.support.tolist() == [0] and res.strategy.probs.tolist() == [1.0]


def test_combine_arithmetic():
    assert combine(0.1, -0.05, 0.3) == pytest.approx(0.25)


def ne_pair(m):
    space = ActionSpace.full(m.n)
    P = build_payoff_matrix(m, space, space).astype(float)
    a, d, v = solve_zero_sum_ne(P)
    return space, P, SynthesizedStrategy.from_dense(space, a), SynthesizedStrategy.from_dense(space, d), v


@pytest.mark.parametrize("kind,seed", [(THRESHOLD, 0), (SHORTEST_PATH, 1), (THRESHOLD, 5)])
def test_equilibrium_is_unexploitable(kind, seed):
    m = make_model(kind, 8, seed)
    space, P, atk, dfn, v = ne_pair(m)
    cfg = ExploiterConfig(pulls_budget=5000, seed=seed)
    cache = CascadeSizeCache(m)
    rep = exploitability(m, atk, dfn, cfg, true_matrix=P, cache=cache)
    bound = 2 * monte_carlo_se_bound(cfg.eval_plays, cfg.eval_plays)
    assert rep.delta <= bound
    assert rep.delta == pytest.approx(combine(rep.delta_g, rep.delta_XA, rep.delta_XD))
    # each exploiter alone is held to the game value
    assert rep.delta_XD <= v + bound
    assert -rep.delta_XA >= v - bound
    uni = uniform_strategy(space)
    worse = exploitability(m, uni, uni, cfg, true_matrix=P, cache=cache)
    assert worse.delta > rep.delta


def test_dominant_target_game_exploits_uniform():
    # a star: whoever holds the centre decides the outcome
    from cascade_defense.cascade import CascadeModel
    from cascade_defense.graph import Graph, NodeFeatures
    g = Graph(6, [(0, i) for i in range(1, 6)])
    m = CascadeModel(THRESHOLD, g, NodeFeatures(THRESHOLD, np.full(6, 0.5)))
    uni = uniform_strategy(ActionSpace.full(6))
    rep = exploitability(m, uni, uni, ExploiterConfig(pulls_budget=3000))
    assert rep.delta > 0.2


def test_full_pool_beats_sub_pool():
    m = make_model(SHORTEST_PATH, 10, seed=2)
    space, P, _, _, _ = ne_pair(m)
    cache = CascadeSizeCache(m)
    rng = np.random.default_rng(0)
    full, small = [], []
    for seed in range(5):
        ego_a = SynthesizedStrategy.from_dense(space, rng.dirichlet(np.ones(len(space))))
        ego_d = SynthesizedStrategy.from_dense(space, rng.dirichlet(np.ones(len(space))))
        full.append(exploitability(m, ego_a, ego_d, ExploiterConfig(pulls_budget=4000, seed=seed), cache=cache).delta)
        small.append(exploitability(m, ego_a, ego_d, ExploiterConfig(arm_pool_size=4, pulls_budget=4000, seed=seed),
                                    cache=cache).delta)
    assert np.mean(full) >= np.mean(small)
    assert sum(f >= s - 0.01 for f, s in zip(full, small)) >= 4


def test_kl_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == pytest.approx(0, abs=1e-8)
    point = np.array([1.0, 0, 0])
    eps = 1e-9
    assert kl_divergence(point, np.array([0, 0.5, 0.5]), eps) == pytest.approx(np.log(3 / eps), rel=1e-6)
    q = np.array([0.6, 0.3, 0.1])
    assert kl_divergence(p, q) != pytest.approx(kl_divergence(q, p))
    with pytest.raises(DimensionMismatch):
        kl_divergence(p, np.ones(4) / 4)
    assert kl_to_ne(p, q, p, q) == pytest.approx(kl_divergence(q, q), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12))
def test_kl_non_negative(seed, size):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(size))
    q = rng.dirichlet(np.ones(size) * 0.3)
    assert kl_divergence(p, q) >= 0


def test_metrics_and_report_files(tmp_path):
    path = tmp_path / "metrics.csv"
    append_metrics(path, [{"run_id": "r", "method": "NN", "n_nodes": 25, "cascade": "threshold", "kl": 0.5}])
    append_metrics(path, [{"run_id": "r", "method": "CfDA", "n_nodes": 25, "cascade": "threshold",
                           "exploitability": 0.125}])
    rows = list(csv.DictReader(open(path)))
    assert [r["method"] for r in rows] == ["NN", "CfDA"]
    assert rows[1]["exploitability"] == "0.125" and rows[1]["kl"] == ""
    m = make_model(THRESHOLD, 6, seed=0)
    uni = uniform_strategy(ActionSpace.full(6))
    rep = exploitability(m, uni, uni, ExploiterConfig(pulls_budget=200, eval_plays=50, self_play=50))
    save_report(rep, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["delta"] == pytest.approx(rep.delta) and doc["pulls"] == 400
