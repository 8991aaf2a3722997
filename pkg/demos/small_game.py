#!/usr/bin/env python3
# A whole game small enough to solve exactly: 8 nodes, 28 two-node actions per side.

import numpy as np

from cascade_defense import (ActionSpace, CascadeModel, ExploiterConfig, build_payoff_matrix, exploitability,
                             generate_graph, random_thresholds, run_cascade, solve_zero_sum_ne, uniform_strategy)
from cascade_defense.strategy import SynthesizedStrategy

g = generate_graph("erdos-renyi", 8, seed=3)
model = CascadeModel("threshold", g, random_thresholds(8, seed=4))
print("edges:", g.n_edges)
print("thresholds:", np.round(model.features.values, 2))

# one cascade by hand: attack nodes 0 and 1 with nothing defended
out = run_cascade(model, {0, 1})
print("seeds {0, 1} ->", sorted(out.omega), "in", len(out.rounds), "rounds")

space = ActionSpace.full(8)
P = build_payoff_matrix(model, space, space).astype(float)
print("payoff matrix", P.shape, "mean failed fraction", round(float(P.mean()), 3))

atk, dfn, value = solve_zero_sum_ne(P)
print("game value", round(value, 4))
for side, pi in (("attacker", atk), ("defender", dfn)):
    top = np.argsort(-pi)[:4]
    print(side, [(space.pair(i), round(float(pi[i]), 3)) for i in top if pi[i] > 0])

# the equilibrium should be (nearly) unexploitable, uniform play should not
cfg = ExploiterConfig(pulls_budget=3000, eval_plays=2000, self_play=2000, seed=0)
ne_a = SynthesizedStrategy.from_dense(space, atk)
ne_d = SynthesizedStrategy.from_dense(space, dfn)
print("exploitability of NE     ", round(exploitability(model, ne_a, ne_d, cfg, true_matrix=P).delta, 4))
uni = uniform_strategy(space)
print("exploitability of uniform", round(exploitability(model, uni, uni, cfg, true_matrix=P).delta, 4))
