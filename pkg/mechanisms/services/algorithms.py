"""
Base allocation algorithms fed into the reductions.

These are the social-cost-minimization algorithms (and fixtures) that the
reductions treat as black boxes.
"""

import itertools
import logging
from typing import Callable, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

from mechanisms.exceptions import InvalidInstance, SupportTooLarge
from .core_model import (
    EXPLICIT_TABLE_MAX_AGENTS,
    AllocationAlgorithm,
    CostFunction,
    ProfileLike,
    ServiceOutcome,
    as_values,
)

logger = logging.getLogger(__name__)


class ServeAll(AllocationAlgorithm):
    name = "serve_all"
    claims_truthful = True
    claims_no_bossy = True

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        return frozenset(range(as_values(v).size))

    def serve_batch(self, values, rng=None):
        return np.ones(np.shape(values), dtype=bool)

    def closed_form_interim(self, agent: int, cells: int) -> Optional[np.ndarray]:
        return np.ones(cells)


class ServeNone(AllocationAlgorithm):
    name = "serve_none"
    claims_truthful = True
    claims_no_bossy = True

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        return frozenset()

    def serve_batch(self, values, rng=None):
        return np.zeros(np.shape(values), dtype=bool)

    def closed_form_interim(self, agent: int, cells: int) -> Optional[np.ndarray]:
        return np.zeros(cells)


class UniqueArgmax(AllocationAlgorithm):
    """Serve the single highest bidder; ties go to the lower index."""

    name = "argmax"
    claims_truthful = True
    claims_no_bossy = True

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        return frozenset([int(np.argmax(as_values(v)))])

    def serve_batch(self, values, rng=None):
        values = np.asarray(values, dtype=float)
        mask = np.zeros(values.shape, dtype=bool)
        mask[np.arange(values.shape[0]), np.argmax(values, axis=1)] = True
        return mask


class FixedThreshold(AllocationAlgorithm):
    """Serve every agent whose value is at least ``threshold``."""

    name = "fixed_threshold"
    claims_truthful = True
    claims_no_bossy = True

    def __init__(self, threshold: float):
        if threshold < 0:
            raise InvalidInstance(f"threshold must be >= 0, got {threshold}")
        self.threshold = float(threshold)

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        return frozenset(int(i) for i in np.flatnonzero(as_values(v) >= self.threshold))

    def serve_batch(self, values, rng=None):
        return np.asarray(values, dtype=float) >= self.threshold


class SocialCostMinimizer(AllocationAlgorithm):
    """
    Exact argmin over all 2^n subsets of C(S) + sum of excluded values.

    Ties resolve to the smallest subset bitmask. Only practical for small n.
    """

    name = "cost_minimizer"

    def __init__(self, cost: CostFunction, n: int, batch_rows: int = 2048):
        if n > EXPLICIT_TABLE_MAX_AGENTS:
            raise SupportTooLarge(f"social-cost minimization enumerates 2^{n} subsets")
        self.cost = cost
        self.n = n
        self.batch_rows = batch_rows
        bits = np.arange(2 ** n)
        self._subsets = ((bits[:, None] >> np.arange(n)) & 1).astype(bool)
        self._subset_costs = cost.cost_batch(self._subsets)

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        row = self.serve_batch(as_values(v)[None, :])[0]
        return frozenset(int(i) for i in np.flatnonzero(row))

    def serve_batch(self, values, rng=None):
        values = np.asarray(values, dtype=float)
        excluded = (~self._subsets).astype(float).T
        best = np.empty(values.shape[0], dtype=np.int64)
        for start in range(0, values.shape[0], self.batch_rows):
            block = values[start:start + self.batch_rows]
            totals = self._subset_costs[None, :] + block @ excluded
            best[start:start + self.batch_rows] = np.argmin(totals, axis=1)
        return self._subsets[best]


class BernoulliServe(AllocationAlgorithm):
    """Serve each agent independently with probability ``p``, ignoring values."""

    name = "bernoulli"
    deterministic = False
    claims_truthful = True

    def __init__(self, p: float):
        if not 0 <= p <= 1:
            raise InvalidInstance(f"bernoulli probability must lie in [0, 1], got {p}")
        self.p = float(p)

    def serve(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> ServiceOutcome:
        if rng is None:
            raise InvalidInstance("bernoulli serving needs a random generator")
        draws = rng.random(as_values(v).size)
        return frozenset(int(i) for i in np.flatnonzero(draws < self.p))

    def serve_batch(self, values, rng=None):
        if rng is None:
            raise InvalidInstance("bernoulli serving needs a random generator")
        return rng.random(np.shape(values)) < self.p

    def outcome_distribution(self, v: ProfileLike) -> List[Tuple[ServiceOutcome, float]]:
        n = as_values(v).size
        if n > EXPLICIT_TABLE_MAX_AGENTS:
            raise SupportTooLarge(f"bernoulli outcome law has 2^{n} sets")
        outcomes = []
        for bits in itertools.product((False, True), repeat=n):
            k = sum(bits)
            prob = self.p ** k * (1 - self.p) ** (n - k)
            if prob > 0:
                outcomes.append((frozenset(i for i, b in enumerate(bits) if b), prob))
        return outcomes

    def closed_form_interim(self, agent: int, cells: int) -> Optional[np.ndarray]:
        return np.full(cells, self.p)


class FunctionAlgorithm(AllocationAlgorithm):
    """Wrap a plain function of the value vector."""

    def __init__(
        self,
        func: Callable[[np.ndarray], Iterable[int]],
        name: str = "function",
        claims_truthful: bool = False,
        claims_no_bossy: bool = False,
    ):
        self.func = func
        self.name = name
        self.claims_truthful = claims_truthful
        self.claims_no_bossy = claims_no_bossy

    def serve(self, v: ProfileLike, rng=None) -> FrozenSet[int]:
        values = as_values(v)
        served = frozenset(int(i) for i in self.func(values))
        if any(i < 0 or i >= values.size for i in served):
            raise InvalidInstance(f"{self.name} returned agents outside 0..{values.size - 1}")
        return served
