#!/usr/bin/env python3
# Counterfactual trials: how many come out of a factual dataset, how cheap they are,
# and whether simulating their seeds really gives the label they were built with.

import numpy as np

from cascade_defense import (REPLAY, SHORTEST_PATH, STRICT, CascadeModel, capacities_from_loads, deduplicate,
                             generate_counterfactual_dataset, generate_factual_dataset, generate_graph,
                             partition_subaction_spaces, random_thresholds)
from cascade_defense.cascade import run_cascade_mask


def replays(model, cf):
    ok = 0
    for atk, omega in zip(cf.atk, cf.omega):
        theta = np.zeros(model.n, dtype=bool)
        theta[atk] = True
        ok += np.array_equal(run_cascade_mask(model, theta)[0], omega)
    return ok


n = 40
g = generate_graph("erdos-renyi", n, seed=0)
models = {"threshold": CascadeModel("threshold", g, random_thresholds(n, seed=1)),
          SHORTEST_PATH: CascadeModel(SHORTEST_PATH, g, capacities_from_loads(g))}
spaces = partition_subaction_spaces(n, 5, 3 * n, seed=0)

for kind, model in models.items():
    fac, dropped = deduplicate(generate_factual_dataset(model, spaces, 40, seed=0))
    print(f"\n{kind}: {len(fac)} factual trials ({dropped} duplicates dropped)")
    cf, stats = generate_counterfactual_dataset(fac, model, cap_factor=2, seed=0, mode=STRICT)
    print(f"  strict: {len(cf)} counterfactuals, {stats.ms_per_cfac:.3f} ms each vs {stats.ms_per_fac:.3f} ms "
          f"per factual trial")
    print(f"  of those, {replays(model, cf)} reproduce when their seeds are simulated")
    if kind == SHORTEST_PATH:
        cf, stats = generate_counterfactual_dataset(fac, model, cap_factor=2, seed=0, mode=REPLAY)
        print(f"  replay: {len(cf)} counterfactuals, {stats.ms_per_cfac:.3f} ms each, "
              f"{replays(model, cf)} reproduce")
