"""Subaction-space partitioning and factual trial datasets.

Datasets are held column-wise in :class:`TrialSet` so that tens of thousands
of trials on a few hundred nodes stay a handful of numpy arrays.
"""
from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, run_cascade_mask
from .errors import InvalidParams, ParseError
from .game import ActionSpace, pair_indices

FACTUAL = "fac"
COUNTERFACTUAL = "cfac"
_SRC_CODES = {FACTUAL: 0, COUNTERFACTUAL: 1}
_SRC_NAMES = {v: k for k, v in _SRC_CODES.items()}


@dataclass(frozen=True)
class SubactionSpace:
    id: int
    node_pool: tuple
    space: ActionSpace = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "space", ActionSpace(self.node_pool))
        object.__setattr__(self, "node_pool", self.space.node_pool)

    @property
    def M(self) -> int:
        return len(self.node_pool)

    @property
    def n_joint(self) -> int:
        return len(self.space) ** 2


@dataclass(frozen=True)
class TrialRecord:
    alpha_a: tuple
    alpha_d: tuple
    omega: np.ndarray
    subspace_id: int | None
    provenance: str


@dataclass
class TrialSet:
    """Column store of trials over an ``n``-node graph.

    ``atk``/``dfn`` are ``(m, 2)`` node pairs with the smaller node first,
    ``omega`` the ``(m, n)`` multi-hot failure labels, ``sub`` the subaction
    space id (-1 when the trial was not drawn from one) and ``src`` 0 for
    factual, 1 for counterfactual rows.
    """

    n: int
    atk: np.ndarray
    dfn: np.ndarray
    omega: np.ndarray
    sub: np.ndarray
    src: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.atk = np.sort(np.asarray(self.atk, dtype=np.int64).reshape(-1, 2), axis=1)
        self.dfn = np.sort(np.asarray(self.dfn, dtype=np.int64).reshape(-1, 2), axis=1)
        self.omega = np.asarray(self.omega, dtype=bool).reshape(-1, self.n)
        self.sub = np.asarray(self.sub, dtype=np.int64).reshape(-1)
        self.src = np.asarray(self.src, dtype=np.int8).reshape(-1)
        m = len(self.atk)
        if not (len(self.dfn) == len(self.omega) == len(self.sub) == len(self.src) == m):
            raise InvalidParams("trial columns have different lengths")

    @classmethod
    def empty(cls, n: int) -> "TrialSet":
        return cls(n, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, n)), [], [])

    def __len__(self) -> int:
        return len(self.atk)

    def record(self, i: int) -> TrialRecord:
        sub = int(self.sub[i])
        return TrialRecord(tuple(int(x) for x in self.atk[i]), tuple(int(x) for x in self.dfn[i]),
                           self.omega[i].copy(), None if sub < 0 else sub, _SRC_NAMES[int(self.src[i])])

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def take(self, idx) -> "TrialSet":
        idx = np.asarray(idx)
        return TrialSet(self.n, self.atk[idx], self.dfn[idx], self.omega[idx], self.sub[idx],
                        self.src[idx], dict(self.meta))

    def keys(self) -> np.ndarray:
        """Integer id of each joint action ``(attack pair, defense pair)``."""
        n_pairs = self.n * (self.n - 1) // 2
        return pair_indices(self.atk, self.n) * n_pairs + pair_indices(self.dfn, self.n)

    @property
    def is_counterfactual(self) -> np.ndarray:
        return self.src == _SRC_CODES[COUNTERFACTUAL]

    @staticmethod
    def concat(parts) -> "TrialSet":
        parts = list(parts)
        n = parts[0].n
        return TrialSet(n, np.concatenate([p.atk for p in parts]), np.concatenate([p.dfn for p in parts]),
                        np.concatenate([p.omega for p in parts]), np.concatenate([p.sub for p in parts]),
                        np.concatenate([p.src for p in parts]), dict(parts[0].meta))

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                row = {"atk": self.atk[i].tolist(), "def": self.dfn[i].tolist(),
                       "omega": np.flatnonzero(self.omega[i]).tolist(), "sub": int(self.sub[i]),
                       "src": _SRC_NAMES[int(self.src[i])]}
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")

    @classmethod
    def from_jsonl(cls, path, n: int) -> "TrialSet":
        atk, dfn, omega, sub, src = [], [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    atk.append(row["atk"])
                    dfn.append(row["def"])
                    mask = np.zeros(n, dtype=bool)
                    mask[row["omega"]] = True
                    omega.append(mask)
                    sub.append(row.get("sub", -1))
                    src.append(_SRC_CODES[row.get("src", FACTUAL)])
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ParseError(f"bad trial record: {exc}", line=lineno) from None
        if not atk:
            return cls.empty(n)
        return cls(n, atk, dfn, np.array(omega), sub, src)


def partition_subaction_spaces(n: int, M: int = 5, p: int | None = None, seed: int = 0) -> list:
    """Draw ``p`` random pools of ``M`` distinct nodes (default ``p = 3n``).

    Pools are independent, so they may overlap. A warning lists any node that
    no pool covers.
    """
    if p is None:
        p = 3 * n
    if not 2 <= M <= n or p < 1:
        raise InvalidParams(f"need 2 <= M <= n and p >= 1, got M={M}, n={n}, p={p}")
    rng = np.random.default_rng(seed)
    spaces = [SubactionSpace(i, tuple(np.sort(rng.choice(n, M, replace=False)).tolist())) for i in range(p)]
    covered = np.zeros(n, dtype=bool)
    for s in spaces:
        covered[list(s.node_pool)] = True
    if not covered.all():
        missing = np.flatnonzero(~covered).tolist()
        warnings.warn(f"{len(missing)} nodes are in no subaction space: {missing}", stacklevel=2)
    return spaces


def _simulate(model: CascadeModel, atk: np.ndarray, dfn: np.ndarray, threads: int = 1) -> np.ndarray:
    n = model.n

    def run(rows):
        out = np.zeros((len(rows), n), dtype=bool)
        for k, i in enumerate(rows):
            theta = np.zeros(n, dtype=bool)
            theta[atk[i]] = True
            theta[dfn[i]] = False
            out[k] = run_cascade_mask(model, theta)[0]
        return out

    idx = np.arange(len(atk))
    if threads > 1 and len(idx) > 1:
        chunks = np.array_split(idx, threads * 4)
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, chunks))
        return np.concatenate(parts) if parts else np.zeros((0, n), dtype=bool)
    return run(idx)


def generate_factual_dataset(model: CascadeModel, spaces, q: int, seed: int = 0, threads: int = 1) -> TrialSet:
    """Play ``q`` joint actions in every subaction space and record the failure sets.

    With ``q`` equal to the number of joint actions of a space every joint
    action is played once; otherwise ``q`` distinct ones are drawn uniformly.
    Each space draws from its own stream seeded by ``(seed, space.id)``.
    """
    if q < 1:
        raise InvalidParams("q must be positive")
    atk, dfn, sub = [], [], []
    for s in spaces:
        acts = s.space.actions
        k = len(acts)
        if q > k * k:
            raise InvalidParams(f"q={q} exceeds the {k * k} joint actions of space {s.id}")
        if q == k * k:
            joint = np.arange(k * k)
        else:
            joint = np.random.default_rng([seed, s.id]).choice(k * k, q, replace=False)
        atk.append(acts[joint // k])
        dfn.append(acts[joint % k])
        sub.append(np.full(len(joint), s.id))
    if not atk:
        return TrialSet.empty(model.n)
    atk, dfn = np.concatenate(atk), np.concatenate(dfn)
    t0 = time.perf_counter()
    omega = _simulate(model, atk, dfn, threads)
    elapsed = time.perf_counter() - t0
    return TrialSet(model.n, atk, dfn, omega, np.concatenate(sub), np.zeros(len(atk)),
                    meta={"sim_seconds": elapsed})


def sample_joint_actions(n: int, count: int, seed, exclude_keys=None) -> tuple:
    """Uniform distinct joint actions over the full space, skipping ``exclude_keys``."""
    n_pairs = comb(n, 2)
    total = n_pairs * n_pairs
    exclude = np.unique(np.asarray(exclude_keys if exclude_keys is not None else [], dtype=np.int64))
    if count > total - len(exclude):
        raise InvalidParams(f"cannot draw {count} joint actions out of {total - len(exclude)} available")
    rng = np.random.default_rng(seed)
    pairs = np.column_stack(np.triu_indices(n, 1))
    # distinct draws of size count + |exclude| always leave `count` usable keys
    draw = rng.choice(total, min(total, count + len(exclude)), replace=False)
    keys = draw[~np.isin(draw, exclude)][:count]
    return pairs[keys // n_pairs], pairs[keys % n_pairs]


def sample_uniform_dataset(model: CascadeModel, count: int, seed, exclude_keys=None, threads: int = 1) -> TrialSet:
    """Trials on uniformly drawn joint actions from the whole action space."""
    atk, dfn = sample_joint_actions(model.n, count, seed, exclude_keys)
    t0 = time.perf_counter()
    omega = _simulate(model, atk, dfn, threads)
    elapsed = time.perf_counter() - t0
    return TrialSet(model.n, atk, dfn, omega, np.full(len(atk), -1), np.zeros(len(atk)),
                    meta={"sim_seconds": elapsed})


def deduplicate(trials: TrialSet) -> tuple:
    """Keep the first trial of every joint action; returns ``(trials, removed_count)``."""
    if len(trials) == 0:
        return trials, 0
    _, first = np.unique(trials.keys(), return_index=True)
    keep = np.sort(first)
    return trials.take(keep), len(trials) - len(keep)


def save_dataset(trials: TrialSet, path, metadata: dict) -> None:
    path = Path(path)
    trials.to_jsonl(path)
    path.with_suffix(".meta.json").write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n")
