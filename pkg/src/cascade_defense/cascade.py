"""Single-round failure rules and full cascades for the threshold and shortest-path models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams
from .graph import CAPACITY, THRESHOLD, Graph, NodeFeatures, as_mask, mask_to_set, shortest_path_loads

SHORTEST_PATH = "shortest-path"
CASCADE_KINDS = (THRESHOLD, SHORTEST_PATH)


@dataclass(frozen=True, eq=False)
class CascadeModel:
    kind: str
    graph: Graph
    features: NodeFeatures

    def __post_init__(self):
        want = {THRESHOLD: THRESHOLD, SHORTEST_PATH: CAPACITY}.get(self.kind)
        if want is None:
            raise InvalidParams(f"unknown cascade kind {self.kind!r}")
        if self.features.kind != want:
            raise InvalidParams(f"{self.kind} cascades need {want} features, got {self.features.kind}")
        if self.features.n != self.graph.n:
            raise InvalidParams("feature vector length does not match node count")

    @property
    def n(self) -> int:
        return self.graph.n

    def failure_fraction(self, failed: np.ndarray) -> np.ndarray:
        """Fraction of failed neighbours per node (0 for isolated nodes)."""
        g = self.graph
        counts = g.adj_float @ failed.astype(np.float64)
        deg = g.degree.astype(np.float64)
        return np.divide(counts, deg, out=np.zeros(g.n), where=deg > 0)


@dataclass(frozen=True)
class CascadeOutcome:
    theta: frozenset
    rounds: tuple
    omega: frozenset
    n: int

    @property
    def T(self) -> int:
        return len(self.rounds)

    @property
    def omega_mask(self) -> np.ndarray:
        return as_mask(self.omega, self.n)


def single_round_mask(model: CascadeModel, failed: np.ndarray) -> np.ndarray:
    """Mask of nodes that newly fail given the failed mask ``failed``."""
    if model.kind == THRESHOLD:
        deg = model.graph.degree
        frac = model.failure_fraction(failed)
        return ~failed & (deg > 0) & (frac >= model.features.values)
    loads = shortest_path_loads(model.graph, failed, mode=model.features.load_mode)
    with np.errstate(invalid="ignore"):
        over = loads > model.features.values
    return ~failed & over


def single_round(model: CascadeModel, omega_t) -> frozenset:
    return mask_to_set(single_round_mask(model, as_mask(omega_t, model.n)))


def run_cascade_mask(model: CascadeModel, theta_mask: np.ndarray) -> tuple:
    """Iterate rounds from ``theta_mask``; returns ``(omega_mask, list of round masks)``."""
    failed = theta_mask.copy()
    rounds = []
    if not failed.any():
        return failed, rounds
    while not failed.all():
        new = single_round_mask(model, failed)
        if not new.any():
            break
        rounds.append(new)
        failed = failed | new
    return failed, rounds


def run_cascade(model: CascadeModel, theta) -> CascadeOutcome:
    theta_mask = as_mask(theta, model.n)
    omega, rounds = run_cascade_mask(model, theta_mask)
    return CascadeOutcome(
        theta=mask_to_set(theta_mask),
        rounds=tuple(mask_to_set(r) for r in rounds),
        omega=mask_to_set(omega),
        n=model.n,
    )
