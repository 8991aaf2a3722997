"""Counterfactual trials built by recombining per-seed cascades from factual trials.

A factual trial is *attributed* by splitting its failure set into the part
caused by each seed. Two attributions from different subaction spaces are then
merged into a candidate with seeds ``{v, w}`` and failure set
``Omega_v | Omega_w``; the candidate is kept only if that set is a steady state
of the cascade rule, which is checked in a single round instead of a full
simulation.

Threshold model: the per-seed part is the connected component of the failed
subgraph containing the seed, and a candidate is steady iff every surviving
node stays strictly below its threshold.

Shortest-path model: only single-seed trials are attributed, with
``gamma_v = loads(G - Omega_v) - baseline``. The fast check bounds the extra
load from removing ``Omega_w`` by the loads ``Omega_w`` carried once
``Omega_v`` was gone; candidates failing it are re-checked exactly in strict
mode. The bound relies on one routed path per pair, so with fractional loads
strict mode re-checks every candidate.

Shortest-path cascades are not monotone: a steady set containing the seeds is
not necessarily the set a simulation from those seeds ends in, so a steady
candidate can carry the wrong label. ``replay`` mode keeps only candidates whose
simulated outcome equals the proposed failure set. For the threshold model
every steady candidate already reproduces, and the modes coincide.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cascade import SHORTEST_PATH, CascadeModel, run_cascade_mask, single_round_mask
from .datagen import TrialSet
from .errors import InvalidParams, NoValidDefense
from .graph import SINGLE_PATH, THRESHOLD, Graph, NodeFeatures, connected_components, shortest_path_loads
from .game import pair_indices

FAST = "fast"
STRICT = "strict"
REPLAY = "replay"
MODES = (FAST, STRICT, REPLAY)

MERGED = "merged"
INSEPARABLE = "inseparable"
EMPTY = "empty"


@dataclass(frozen=True)
class Discard:
    reason: str


@dataclass(frozen=True, eq=False)
class Attribution:
    """Per-seed failure sets of one factual trial.

    ``per_seed`` maps a seed node to a boolean mask of the failures it caused;
    ``gamma`` (shortest-path only) maps it to the load change on every node,
    ``nan`` on the seed's own failures.
    """

    subspace_id: int
    alpha_d: tuple
    per_seed: dict
    gamma: dict = field(default_factory=dict)
    trial_index: int | None = None


@dataclass(frozen=True, eq=False)
class CounterfactualCandidate:
    theta_hat: tuple
    omega_v: np.ndarray
    omega_w: np.ndarray
    alpha_a_hat: tuple
    alpha_d_hat: tuple
    gamma_v: np.ndarray | None = None
    gamma_w: np.ndarray | None = None

    @property
    def omega_hat(self) -> np.ndarray:
        return self.omega_v | self.omega_w

    @property
    def overlapping(self) -> bool:
        return bool((self.omega_v & self.omega_w).any())


def _seeds(atk, dfn) -> list:
    return sorted(set(int(x) for x in atk) - set(int(x) for x in dfn))


def _trial_fields(trial):
    if isinstance(trial, TrialSet):
        raise InvalidParams("pass a single TrialRecord")
    return trial.alpha_a, trial.alpha_d, np.asarray(trial.omega, dtype=bool), trial.subspace_id


def attribute_threshold(trial, graph: Graph):
    """Split a threshold-model trial along the connected components of its failed set."""
    atk, dfn, omega, sub = _trial_fields(trial)
    seeds = _seeds(atk, dfn)
    if not seeds:
        return Discard(EMPTY)
    comps = connected_components(graph, omega)
    owner = {}
    for c in comps:
        for v in seeds:
            if v in c:
                owner[v] = c
    if len(seeds) == 2 and owner[seeds[0]] is owner[seeds[1]]:
        return Discard(MERGED)
    per_seed = {}
    for v in seeds:
        mask = np.zeros(graph.n, dtype=bool)
        mask[list(owner[v])] = True
        per_seed[v] = mask
    return Attribution(-1 if sub is None else sub, tuple(dfn), per_seed)


def load_shift(graph: Graph, features: NodeFeatures, omega_v: np.ndarray) -> np.ndarray:
    """``loads(G - omega_v) - baseline``; ``nan`` on ``omega_v``."""
    return shortest_path_loads(graph, omega_v, mode=features.load_mode) - features.baseline_loads


def attribute_shortest_path(trial, graph: Graph, features: NodeFeatures):
    """Attribute a single-seed shortest-path trial; two-seed trials cannot be split."""
    atk, dfn, omega, sub = _trial_fields(trial)
    seeds = _seeds(atk, dfn)
    if not seeds:
        return Discard(EMPTY)
    if len(seeds) == 2:
        return Discard(INSEPARABLE)
    v = seeds[0]
    return Attribution(-1 if sub is None else sub, tuple(dfn), {v: omega.copy()},
                       {v: load_shift(graph, features, omega)})


def _defense_options(d1, d2, v, w) -> list:
    out = []
    for a in d1:
        for b in d2:
            if a != b and a not in (v, w) and b not in (v, w):
                pair = tuple(sorted((int(a), int(b))))
                if pair not in out:
                    out.append(pair)
    return out


def propose_counterfactual(attr1: Attribution, attr2: Attribution, seed) -> CounterfactualCandidate:
    """Combine one seed of each attribution into a two-seed candidate.

    The defense pair takes one node from each source trial's defense, drawn
    uniformly among the combinations that leave both new seeds undefended.
    """
    if attr1.subspace_id == attr2.subspace_id:
        raise InvalidParams("attributions must come from different subaction spaces")
    if not attr1.per_seed or not attr2.per_seed:
        raise InvalidParams("each attribution needs at least one seed")
    rng = np.random.default_rng(seed)
    seed_pairs = [(v, w) for v in sorted(attr1.per_seed) for w in sorted(attr2.per_seed) if v != w]
    if not seed_pairs:
        raise InvalidParams("both attributions offer only the same seed node")
    v, w = seed_pairs[rng.integers(len(seed_pairs))]
    options = _defense_options(attr1.alpha_d, attr2.alpha_d, v, w)
    if not options:
        raise NoValidDefense(f"every defense combination touches seeds {v}, {w}")
    alpha_d = options[rng.integers(len(options))]
    return CounterfactualCandidate(
        theta_hat=(v, w),
        omega_v=attr1.per_seed[v],
        omega_w=attr2.per_seed[w],
        alpha_a_hat=tuple(sorted((v, w))),
        alpha_d_hat=alpha_d,
        gamma_v=attr1.gamma.get(v),
        gamma_w=attr2.gamma.get(w),
    )


def _threshold_steady(adj: np.ndarray, degree: np.ndarray, phi: np.ndarray, omega_hat: np.ndarray) -> np.ndarray:
    # Row-wise: no surviving node reaches its threshold. Same arithmetic as the
    # cascade rule so that the check agrees with simulation bit for bit.
    counts = omega_hat.astype(np.float64) @ adj
    deg = degree.astype(np.float64)
    frac = np.divide(counts, deg, out=np.zeros_like(counts), where=deg > 0)
    trip = ~omega_hat & (degree > 0) & (frac >= phi)
    return ~trip.any(axis=-1)


def validate_threshold(candidate: CounterfactualCandidate, graph: Graph, features: NodeFeatures) -> bool:
    if candidate.overlapping:
        return False
    return bool(_threshold_steady(graph.adj_float, graph.degree, features.values, candidate.omega_hat))


def _fast_bound_ok(k, base, gamma_v, omega_v, omega_w, omega_hat) -> np.ndarray:
    # Loads carried by omega_w's nodes once omega_v is gone bound the extra
    # load any survivor can pick up when omega_w fails as well.
    shifted = np.where(omega_v, 0.0, base + np.nan_to_num(gamma_v))
    extra = (omega_w * shifted).sum(axis=-1, keepdims=True)
    bound = base + np.nan_to_num(gamma_v) + extra
    return ~(~omega_hat & (k < bound)).any(axis=-1)


def fast_shortest_path_check(candidate: CounterfactualCandidate, features: NodeFeatures) -> bool:
    c = candidate
    k, base = features.values, features.baseline_loads
    om = c.omega_hat
    one = _fast_bound_ok(k, base, c.gamma_v, c.omega_v, c.omega_w, om)
    two = _fast_bound_ok(k, base, c.gamma_w, c.omega_w, c.omega_v, om)
    return bool(one or two)


def validate_shortest_path(candidate: CounterfactualCandidate, graph: Graph, features: NodeFeatures,
                           mode: str = STRICT) -> bool:
    """Steady-state check for a shortest-path candidate.

    ``fast`` accepts only when one of the two load bounds holds. ``strict``
    additionally recomputes the loads on ``G - omega_hat`` for candidates the
    bound cannot clear. ``replay`` then also simulates the candidate's seeds
    and requires the outcome to be exactly ``omega_hat``.
    """
    if mode not in MODES:
        raise InvalidParams(f"unknown validation mode {mode!r}")
    if candidate.overlapping:
        return False
    if candidate.gamma_v is None or candidate.gamma_w is None:
        raise InvalidParams("shortest-path candidates need load shifts for both seeds")
    model = CascadeModel(SHORTEST_PATH, graph, features)
    if fast_shortest_path_check(candidate, features):
        if mode == FAST:
            return True
        steady = features.load_mode == SINGLE_PATH or not single_round_mask(model, candidate.omega_hat).any()
    elif mode == FAST:
        return False
    else:
        steady = not single_round_mask(model, candidate.omega_hat).any()
    if not steady or mode == STRICT:
        return steady
    return _reproduces(model, candidate.theta_hat, candidate.omega_hat)


def _reproduces(model: CascadeModel, seeds, omega_hat: np.ndarray) -> bool:
    theta = np.zeros(model.n, dtype=bool)
    theta[list(seeds)] = True
    return bool(np.array_equal(run_cascade_mask(model, theta)[0], omega_hat))


def validate(candidate, model: CascadeModel, mode: str = STRICT) -> bool:
    if model.kind == THRESHOLD:
        return validate_threshold(candidate, model.graph, model.features)
    return validate_shortest_path(candidate, model.graph, model.features, mode)


# ---------------------------------------------------------------------------
# batched generation


@dataclass
class CfdaStats:
    n_fac: int = 0
    n_cfac: int = 0
    n_candidates: int = 0
    n_pairs_total: int = 0
    n_pairs_tried: int = 0
    n_usable_trials: int = 0
    fac_seconds: float = 0.0
    cfac_seconds: float = 0.0
    attribution_discards: dict = field(default_factory=dict)
    reject_reasons: dict = field(default_factory=dict)
    exhausted: bool = False

    @property
    def ms_per_fac(self) -> float:
        return 1e3 * self.fac_seconds / self.n_fac if self.n_fac else float("nan")

    @property
    def ms_per_cfac(self) -> float:
        return 1e3 * self.cfac_seconds / self.n_cfac if self.n_cfac else float("nan")

    def to_dict(self) -> dict:
        return {"n_fac": self.n_fac, "n_cfac": self.n_cfac, "ms_per_fac": self.ms_per_fac,
                "ms_per_cfac": self.ms_per_cfac, "n_candidates": self.n_candidates,
                "n_pairs_total": self.n_pairs_total,
                "n_pairs_tried": self.n_pairs_tried, "n_usable_trials": self.n_usable_trials,
                "exhausted": self.exhausted,
                "attribution_discards": dict(sorted(self.attribution_discards.items())),
                "reject_reasons": dict(sorted(self.reject_reasons.items()))}


class _AttributionTable:
    """Attributions of a whole dataset as flat arrays.

    ``seeds[i]``/``comp[i]`` hold up to two usable seeds of trial ``i`` and the
    row of their failure mask in ``masks`` (-1 when absent).
    """

    def __init__(self, factual: TrialSet, model: CascadeModel):
        n = model.n
        m = len(factual)
        self.seeds = np.full((m, 2), -1, dtype=np.int64)
        self.comp = np.full((m, 2), -1, dtype=np.int64)
        self.discards = {}
        rows, shifts, index = [], [], {}
        omega_cache = {}
        sp = model.kind == SHORTEST_PATH

        self.comp_seed = []

        def comp_id(mask, seed):
            # shortest-path components are told apart by seed as well, since replay depends on it
            key = (mask.tobytes(), seed if sp else -1)
            cid = index.get(key)
            if cid is None:
                cid = index[key] = len(rows)
                rows.append(mask)
                self.comp_seed.append(seed)
                if sp:
                    shifts.append(load_shift(model.graph, model.features, mask))
            return cid

        for i in range(m):
            rec = factual.record(i)
            key = (rec.omega.tobytes(), tuple(_seeds(rec.alpha_a, rec.alpha_d)))
            parts = omega_cache.get(key)
            if parts is None:
                attr = (attribute_shortest_path(rec, model.graph, model.features) if sp
                        else attribute_threshold(rec, model.graph))
                if isinstance(attr, Discard):
                    parts = attr
                else:
                    parts = [(v, comp_id(attr.per_seed[v], v)) for v in sorted(attr.per_seed)]
                omega_cache[key] = parts
            if isinstance(parts, Discard):
                self.discards[parts.reason] = self.discards.get(parts.reason, 0) + 1
                continue
            for slot, (v, cid) in enumerate(parts):
                self.seeds[i, slot] = v
                self.comp[i, slot] = cid
        self.masks = np.array(rows, dtype=bool).reshape(-1, n)
        self.shifts = np.array(shifts, dtype=np.float64).reshape(-1, n) if sp else None
        k = len(rows)
        self._verdict = np.full((k, k), _UNKNOWN, dtype=np.int8)

    def verdicts(self, cv: np.ndarray, cw: np.ndarray, model: CascadeModel, mode: str) -> np.ndarray:
        """Overlap/steadiness verdict for each component pair, computed once per pair."""
        todo = self._verdict[cv, cw] == _UNKNOWN
        if todo.any():
            k = len(self.masks)
            uniq = np.unique(cv[todo] * k + cw[todo])
            a, b = uniq // k, uniq % k
            mv, mw = self.masks[a], self.masks[b]
            res = np.full(len(uniq), _OVERLAP, dtype=np.int8)
            free = ~(mv & mw).any(axis=1)
            fa, fb = a[free], b[free]
            omega_hat = mv[free] | mw[free]
            if model.kind == THRESHOLD:
                g = model.graph
                steady = _threshold_steady(g.adj_float, g.degree, model.features.values, omega_hat)
            else:
                feats = model.features
                k_, base = feats.values, feats.baseline_loads
                steady = (_fast_bound_ok(k_, base, self.shifts[fa], self.masks[fa], self.masks[fb], omega_hat)
                          | _fast_bound_ok(k_, base, self.shifts[fb], self.masks[fb], self.masks[fa], omega_hat))
                if mode in (STRICT, REPLAY):
                    if feats.load_mode != SINGLE_PATH:
                        steady[:] = False
                    for r in np.flatnonzero(~steady):
                        steady[r] = not single_round_mask(model, omega_hat[r]).any()
                if mode == REPLAY:
                    for r in np.flatnonzero(steady):
                        steady[r] = _reproduces(model, (self.comp_seed[fa[r]], self.comp_seed[fb[r]]), omega_hat[r])
            res[free] = np.where(steady, _STEADY, _UNSTEADY)
            self._verdict[a, b] = res
            self._verdict[b, a] = res
        return self._verdict[cv, cw]


def _triangle_pairs(k: np.ndarray, u: int) -> tuple:
    # Linear index over the strict upper triangle of a u x u array -> (i, j).
    k = k.astype(np.int64)
    total = u * (u - 1) // 2
    r = (np.sqrt(8.0 * (total - 1 - k) + 1) - 1) // 2
    r = r.astype(np.int64)
    i = u - 2 - r
    # correct float rounding on the boundary
    start = i * (2 * u - i - 1) // 2
    low = k < start
    i = np.where(low, i - 1, i)
    start = i * (2 * u - i - 1) // 2
    nxt = (i + 1) * (2 * u - i - 2) // 2
    high = k >= nxt
    i = np.where(high, i + 1, i)
    start = i * (2 * u - i - 1) // 2
    j = k - start + i + 1
    return i, j


_PERMUTE_LIMIT = 20_000_000
_UNKNOWN, _OVERLAP, _UNSTEADY, _STEADY = -1, 0, 1, 2


def _pair_stream(total: int, rng, block: int):
    """Yield blocks of distinct indices in ``range(total)`` in random order."""
    if total <= _PERMUTE_LIMIT:
        order = rng.permutation(total)
        for s in range(0, total, block):
            yield order[s:s + block]
        return
    # too many to shuffle: a random affine bijection i -> (a*i + c) mod total
    a = 1
    while total > 1:
        a = int(rng.integers(1, total))
        if math.gcd(a, total) == 1:
            break
    c = int(rng.integers(0, total))
    for s in range(0, total, block):
        # int64 products stay exact while total < 3e9
        i = np.arange(s, min(s + block, total), dtype=np.int64 if total < 3_000_000_000 else object)
        yield ((a * i + c) % total).astype(np.int64)


def _bump(d, key, count=1):
    if count:
        d[key] = d.get(key, 0) + int(count)


def generate_counterfactual_dataset(factual: TrialSet, model: CascadeModel, cap_factor: float | None = 10,
                                    seed=0, mode: str = STRICT, collect: bool = True,
                                    block: int = 4096, max_pairs: int | None = None) -> tuple:
    """Counterfactual trials from random cross-subspace pairs of factual trials.

    Pairs are visited uniformly without replacement until ``cap_factor`` times
    the factual count have been accepted, or every pair has been tried
    (``cap_factor=None``), or ``max_pairs`` pairs have been visited. Accepted candidates are distinct joint actions that
    do not repeat a factual one. Returns ``(TrialSet or None, CfdaStats)``;
    with ``collect=False`` only the statistics are produced.
    """
    if mode not in MODES:
        raise InvalidParams(f"unknown validation mode {mode!r}")
    n = model.n
    stats = CfdaStats(n_fac=len(factual))
    if "sim_seconds" in factual.meta:
        stats.fac_seconds = factual.meta["sim_seconds"]
    empty = TrialSet.empty(n) if collect else None
    if len(factual) == 0:
        stats.exhausted = True
        return empty, stats
    cap = None if cap_factor is None else int(round(cap_factor * len(factual)))

    t0 = time.perf_counter()
    table = _AttributionTable(factual, model)
    stats.attribution_discards = dict(table.discards)
    usable = np.flatnonzero(table.seeds[:, 0] >= 0)
    u = len(usable)
    stats.n_usable_trials = u
    total = u * (u - 1) // 2
    stats.n_pairs_total = total
    fac_keys = np.unique(factual.keys())
    n_pairs = n * (n - 1) // 2
    rng = np.random.default_rng(seed)
    accepted_keys = set()
    all_valid_keys = []
    out = {"atk": [], "dfn": [], "omega": [], "sub": []}
    n_acc = 0
    done = False
    stats.exhausted = True
    budget = total if max_pairs is None else min(total, max_pairs)
    for block_idx in _pair_stream(total, rng, block):
        if stats.n_pairs_tried >= budget:
            stats.exhausted = False
            break
        block_idx = block_idx[:budget - stats.n_pairs_tried]
        stats.n_pairs_tried += len(block_idx)
        ii, jj = _triangle_pairs(block_idx, u)
        ti, tj = usable[ii], usable[jj]
        cross = factual.sub[ti] != factual.sub[tj]
        _bump(stats.reject_reasons, "same_subspace", (~cross).sum())
        ti, tj = ti[cross], tj[cross]
        b = len(ti)
        stats.n_candidates += b
        if b == 0:
            continue
        # pick one seed from each trial
        si = np.where(table.seeds[ti, 1] >= 0, rng.integers(0, 2, b), 0)
        sj = np.where(table.seeds[tj, 1] >= 0, rng.integers(0, 2, b), 0)
        v, w = table.seeds[ti, si], table.seeds[tj, sj]
        cv, cw = table.comp[ti, si], table.comp[tj, sj]
        # defense: one node from each source defense, avoiding the new seeds
        d1, d2 = factual.dfn[ti], factual.dfn[tj]
        a_opts = np.stack([d1[:, 0], d1[:, 0], d1[:, 1], d1[:, 1]], axis=1)
        b_opts = np.stack([d2[:, 0], d2[:, 1], d2[:, 0], d2[:, 1]], axis=1)
        ok = ((a_opts != b_opts) & (a_opts != v[:, None]) & (a_opts != w[:, None])
              & (b_opts != v[:, None]) & (b_opts != w[:, None]))
        prio = np.where(ok, rng.random((b, 4)), -1.0)
        pick = prio.argmax(axis=1)
        da, db = a_opts[np.arange(b), pick], b_opts[np.arange(b), pick]
        has_def = ok.any(axis=1)

        same = v == w
        verdict = table.verdicts(cv, cw, model, mode)
        overlap = (verdict == _OVERLAP) & ~same
        unsteady = (verdict == _UNSTEADY) & ~same
        _bump(stats.reject_reasons, "same_seed", same.sum())
        _bump(stats.reject_reasons, "overlap", overlap.sum())
        _bump(stats.reject_reasons, "unsteady", unsteady.sum())
        ok_pair = ~same & (verdict == _STEADY)
        _bump(stats.reject_reasons, "no_defense", (ok_pair & ~has_def).sum())
        idx = np.flatnonzero(ok_pair & has_def)

        atk = np.sort(np.stack([v[idx], w[idx]], axis=1), axis=1)
        dfn = np.sort(np.stack([da[idx], db[idx]], axis=1), axis=1)
        keys = pair_indices(atk, n) * n_pairs + pair_indices(dfn, n)
        fresh = ~np.isin(keys, fac_keys)
        _bump(stats.reject_reasons, "duplicate", (~fresh).sum())
        if cap is None and not collect:
            all_valid_keys.append(keys[fresh])
            continue
        take = []
        for r in np.flatnonzero(fresh):
            key = int(keys[r])
            if key in accepted_keys:
                _bump(stats.reject_reasons, "duplicate")
                continue
            accepted_keys.add(key)
            take.append(r)
            n_acc += 1
            if cap is not None and n_acc >= cap:
                done = True
                break
        if collect and take:
            take = np.array(take)
            out["atk"].append(atk[take])
            out["dfn"].append(dfn[take])
            out["omega"].append(table.masks[cv[idx[take]]] | table.masks[cw[idx[take]]])
            out["sub"].append(np.full(len(take), -1))
        if done:
            stats.exhausted = False
            break

    if cap is None and not collect:
        merged = np.concatenate(all_valid_keys) if all_valid_keys else np.zeros(0, dtype=np.int64)
        uniq = np.unique(merged)
        _bump(stats.reject_reasons, "duplicate", len(merged) - len(uniq))
        n_acc = len(uniq)
    stats.cfac_seconds = time.perf_counter() - t0
    stats.n_cfac = n_acc
    if not collect:
        return None, stats
    if not out["atk"]:
        return empty, stats
    cf = TrialSet(n, np.concatenate(out["atk"]), np.concatenate(out["dfn"]), np.concatenate(out["omega"]),
                  np.concatenate(out["sub"]), np.ones(n_acc), meta={"cfda": stats.to_dict()})
    return cf, stats


def counterfactual_growth(factual: TrialSet, model: CascadeModel, sizes, seed=0,
                          max_pairs: int | None = None) -> list:
    """Pre-cap counterfactual counts for nested prefixes of ``factual``.

    Returns ``[(n_factual, n_counterfactual, estimated), ...]`` for each size,
    the data behind a counterfactual-vs-factual volume curve. When a prefix has
    more than ``max_pairs`` pairs, a random ``max_pairs`` of them are tried and
    the count is scaled up to all pairs; such rows carry ``estimated=True``.
    """
    rows = []
    for size in sizes:
        sub = factual.take(np.arange(min(size, len(factual))))
        _, st = generate_counterfactual_dataset(sub, model, cap_factor=None, seed=seed, collect=False,
                                                max_pairs=max_pairs)
        partial = st.n_pairs_tried < st.n_pairs_total
        count = int(round(st.n_cfac * st.n_pairs_total / st.n_pairs_tried)) if partial else st.n_cfac
        rows.append((len(sub), count, partial))
    return rows
