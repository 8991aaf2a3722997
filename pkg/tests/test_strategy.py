import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_defense.cascade import SHORTEST_PATH
from cascade_defense.errors import BudgetExceeded, InvalidParams
from cascade_defense.game import ActionSpace, CascadeSizeCache, build_payoff_matrix, solve_zero_sum_ne
from cascade_defense.graph import THRESHOLD, CentralityTable, Graph, centralities
from cascade_defense.predictor import PredictorModel
from cascade_defense.strategy import (
    TOP_TWO,
    TOP_WEIGHTED,
    CascadeOracle,
    PayoffOracle,
    SynthesizedStrategy,
    entropy_weights,
    estimate_cell,
    ewm_topsis_ranking,
    heuristic_strategy,
    restricted_strategy_ne,
    save_ranking_csv,
    save_strategy,
    solve_two_by_two,
    strategy_restricted_baseline,
    synthesize_from_oracle,
    synthesize_from_predictor,
    uniform_strategy,
)

from conftest import make_model


class MatrixOracle(PayoffOracle):
    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)

    def matrix(self, rows, cols):
        return self.P[np.ix_(rows, cols)]

    def paired(self, rows, cols):
        return self.P[rows, cols]


def test_uniform():
    s = uniform_strategy(ActionSpace.full(5))
    np.testing.assert_allclose(s.probs, 0.1)
    one = uniform_strategy(ActionSpace((3, 9)))
    assert one.probs.tolist() == [1.0]


def test_uniform_sampling_frequencies():
    s = uniform_strategy(ActionSpace.full(5))
    draws = s.sample(np.random.default_rng(0), 100_000)
    counts = np.bincount(draws, minlength=10)
    sigma = np.sqrt(100_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 10_000) < 3 * sigma)


def test_strategy_validation():
    space = ActionSpace.full(4)
    with pytest.raises(InvalidParams):
        SynthesizedStrategy(space, [0, 0], [0.5, 0.5])
    with pytest.raises(InvalidParams):
        SynthesizedStrategy(space, [0, 1], [0.7, 0.7])
    with pytest.raises(InvalidParams):
        SynthesizedStrategy(space, [6], [1.0])


def star_path():
    # star centred on 0 with leaves 1..4, and a tail 4-5-6
    return Graph(7, [(0, 1), (0, 2), (0, 3), (0, 4), (4, 5), (5, 6)])


def test_ranking_star_centre_first():
    r = ewm_topsis_ranking(centralities(Graph(5, [(0, i) for i in range(1, 5)])))
    assert r.ranking[0] == 0
    np.testing.assert_allclose(r.scores[1:], r.scores[1])


def test_top_two_on_star_path():
    g = star_path()
    r = ewm_topsis_ranking(centralities(g))
    s = heuristic_strategy(r, ActionSpace.full(7), TOP_TWO)
    assert s.space.pair(s.support[0]) == tuple(sorted(r.ranking[:2].tolist()))
    assert r.ranking[0] == 0 and r.ranking[1] == 4
    only = heuristic_strategy(np.array([1, 0]), ActionSpace.full(2), TOP_TWO)
    assert only.support.tolist() == [0] and only.probs.tolist() == [1.0]


def test_ties_go_to_lowest_index():
    t = CentralityTable(*(np.ones(4) for _ in range(4)))
    r = ewm_topsis_ranking(t)
    assert r.ranking.tolist() == [0, 1, 2, 3]
    s = heuristic_strategy(r, ActionSpace.full(4), TOP_TWO)
    assert s.space.pair(s.support[0]) == (0, 1)


def test_weighted_sampling_rule():
    space = ActionSpace.full(4)
    s = heuristic_strategy(np.array([2, 0, 3, 1]), space, TOP_WEIGHTED)
    # scores: node 2 -> 4, node 0 -> 3, node 3 -> 2, node 1 -> 1
    pi = s.dense()
    assert pi[space.index((0, 2))] == pi.max()
    assert pi[space.index((0, 2))] / pi[space.index((1, 3))] == pytest.approx(12 / 2)


def test_constant_column_gets_zero_weight():
    t = CentralityTable(np.ones(5), np.arange(5.0), np.array([0, 1, 0, 1, 3.0]), np.linspace(0.2, 1, 5))
    r = ewm_topsis_ranking(t)
    assert r.weights[0] == 0
    assert r.weights.sum() == pytest.approx(1) and np.all(r.weights >= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 3), st.floats(0.1, 100), st.floats(-50, 50))
def test_topsis_invariant_to_affine_column_rescale(seed, col, scale, shift):
    rng = np.random.default_rng(seed)
    m = rng.random((8, 4))
    base = ewm_topsis_ranking(CentralityTable(*m.T))
    m2 = m.copy()
    m2[:, col] = scale * m2[:, col] + shift
    moved = ewm_topsis_ranking(CentralityTable(*m2.T))
    np.testing.assert_allclose(moved.scores, base.scores, atol=1e-9)
    assert base.weights.sum() == pytest.approx(1) and np.all(base.weights >= 0)


def test_entropy_weights_uniform_column():
    w = entropy_weights(np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.5]]))
    assert w[0] == 0 and w[1] == pytest.approx(1)


def test_two_by_two_closed_form():
    a, d, v = solve_two_by_two([[0.5, 0.1], [0.2, 0.3]])
    np.testing.assert_allclose(a, [0.2, 0.8])
    np.testing.assert_allclose(d, [0.4, 0.6])
    assert v == pytest.approx(0.26)
    # saddle point: row 0 dominates
    a, d, v = solve_two_by_two([[0.6, 0.5], [0.2, 0.1]])
    assert a.tolist() == [1, 0] and d.tolist() == [0, 1] and v == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_two_by_two_agrees_with_lp(seed):
    P = np.random.default_rng(seed).random((2, 2))
    assert solve_two_by_two(P)[2] == pytest.approx(solve_zero_sum_ne(P)[2], abs=1e-9)


def test_identical_metas_give_self_play_value():
    m = make_model(THRESHOLD, 10, seed=2)
    space = ActionSpace.full(10)
    u = uniform_strategy(space)
    game = restricted_strategy_ne(m, [("u", u), ("u2", u)], [("u", u), ("u2", u)], samples_per_cell=500, seed=0)
    assert game.payoff.shape == (2, 2)
    assert np.all((game.payoff >= 0) & (game.payoff <= 1))
    assert game.value == pytest.approx(game.payoff.mean(), abs=0.05)
    assert game.ne_attacker.sum() == pytest.approx(1)


def test_cells_converge_to_enumeration():
    m = make_model(SHORTEST_PATH, 8, seed=1)
    space = ActionSpace.full(8)
    P = build_payoff_matrix(m, space, space).astype(float)
    top = heuristic_strategy(ewm_topsis_ranking(centralities(m.graph)), space, TOP_TWO)
    u = uniform_strategy(space)
    rng = np.random.default_rng(0)
    exact = u.dense() @ P @ top.dense()
    assert estimate_cell(m, u, top, 40_000, rng) == pytest.approx(exact, abs=0.01)
    assert estimate_cell(m, top, top, 10, rng) == pytest.approx(top.dense() @ P @ top.dense())


def test_baseline_is_a_mixture():
    m = make_model(THRESHOLD, 12, seed=3)
    space = ActionSpace.full(12)
    game = strategy_restricted_baseline(m, space, samples_per_cell=200, seed=1)
    atk = game.attacker_strategy()
    assert atk.dense().sum() == pytest.approx(1)
    names = [n for n, _ in game.attacker_meta_actions]
    assert names == ["uniform", "ewm-topsis"]


@pytest.mark.parametrize("seed", range(6))
def test_true_oracle_recovers_game_value(seed):
    n = 6 + seed % 5
    m = make_model(SHORTEST_PATH if seed % 2 else THRESHOLD, n, seed)
    space = ActionSpace.full(n)
    P = build_payoff_matrix(m, space, space).astype(float)
    _, _, value = solve_zero_sum_ne(P)
    atk, dfn = synthesize_from_oracle(CascadeOracle(m, space), space, seed=seed)
    assert atk.dense() @ P @ dfn.dense() == pytest.approx(value, abs=1e-6)
    # the synthesized pair is itself an equilibrium of the true game
    assert (P @ dfn.dense()).max() <= value + 1e-6
    assert (atk.dense() @ P).min() >= value - 1e-6


def test_candidate_pools_and_limits():
    P = np.random.default_rng(1).random((10, 10))
    space = ActionSpace.full(5)
    atk, dfn = synthesize_from_oracle(MatrixOracle(P), space, k_candidates=1, seed=0)
    assert atk.probs.tolist() == [1.0] and dfn.probs.tolist() == [1.0]
    with pytest.raises(BudgetExceeded):
        synthesize_from_oracle(MatrixOracle(P), space, k_candidates=10, budget=50)
    with pytest.raises(InvalidParams):
        synthesize_from_oracle(MatrixOracle(P), space, k_candidates=11)


def test_full_k_equals_full_predicted_game():
    model = PredictorModel(7, b=4, h=8, seed=0)
    x = np.linspace(0.2, 1, 7)
    space = ActionSpace.full(7)
    atk, dfn = synthesize_from_predictor(model, space, x, seed=0)
    from cascade_defense.predictor import predicted_payoff_matrix
    Q = predicted_payoff_matrix(model, space.actions, space.actions, x)
    # a defense equal to the attack stops everything, whatever the network says
    assert Q.diagonal().min() > 0
    np.fill_diagonal(Q, 0.0)
    _, _, v = solve_zero_sum_ne(Q)
    assert atk.dense() @ Q @ dfn.dense() == pytest.approx(v, abs=1e-6)


def test_exports(tmp_path):
    g = star_path()
    r = ewm_topsis_ranking(centralities(g))
    save_ranking_csv(r, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 7 and rows[0]["rank"] == "1"
    s = heuristic_strategy(r, ActionSpace.full(7))
    save_strategy(s, tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["actions"][0]["node_pair"] == [0, 4] and doc["actions"][0]["probability"] == 1.0
