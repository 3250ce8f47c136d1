"""
Mechanisms: allocation plus payments.

``Mechanism`` is what the audits consume. The ex-post reductions are wrapped
here; the Bayesian reduced mechanism lives in bic_reduction.
"""

import logging
from abc import ABC, abstractmethod
from collections import defaultdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from mechanisms.exceptions import IncompatibleMode, InvalidInstance
from .core_model import (
    AllocationAlgorithm,
    CostFunction,
    MechanismResult,
    ProfileLike,
    ServiceOutcome,
    as_values,
)
from .expost_reduction import (
    SupportList,
    powers_of_two_trace,
    reduce_zero_one,
    require_truthful_no_bossy,
    support_list_trace,
    zero_one_from_outcome,
)

logger = logging.getLogger(__name__)

BAYESIAN = "bayesian"
EX_POST = "ex_post"


class Mechanism(ABC):
    """Maps a reported profile (and randomness) to a MechanismResult."""

    name = "mechanism"
    guarantee = BAYESIAN
    deterministic = True

    def __init__(self, base: AllocationAlgorithm):
        self.base = base
        self.deterministic = base.deterministic

    @abstractmethod
    def run(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> MechanismResult:
        ...

    def run_batch(self, values: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Served mask and payment matrix for a batch of profiles."""
        values = np.asarray(values, dtype=float)
        served = np.zeros(values.shape, dtype=bool)
        payments = np.zeros(values.shape)
        for r, row in enumerate(values):
            result = self.run(row, rng)
            served[r, list(result.served)] = True
            payments[r] = result.payments
        return served, payments

    def result_distribution(self, v: ProfileLike) -> List[Tuple[MechanismResult, float]]:
        """Finite law of results at ``v``, built from the base algorithm's outcome law."""
        values = as_values(v)
        law: Dict[MechanismResult, float] = defaultdict(float)
        for served, q in self.base.outcome_distribution(values):
            law[self.result_for(served, values)] += q
        return list(law.items())

    def result_for(self, served: ServiceOutcome, values: np.ndarray) -> MechanismResult:
        """Result when the base algorithm returns ``served`` at ``values``."""
        raise IncompatibleMode(f"{self.name} does not expose per-outcome results")

    def allocation(self) -> "MechanismAllocation":
        return MechanismAllocation(self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class MechanismAllocation(AllocationAlgorithm):
    """The served-set part of a mechanism, so interim curves can be computed for it."""

    def __init__(self, mechanism: Mechanism):
        self.mechanism = mechanism
        self.name = f"allocation({mechanism.name})"
        self.deterministic = mechanism.deterministic

    def serve(self, v: ProfileLike, rng=None) -> ServiceOutcome:
        return self.mechanism.run(v, rng).served

    def serve_batch(self, values, rng=None):
        return self.mechanism.run_batch(values, rng)[0]

    def outcome_distribution(self, v: ProfileLike) -> List[Tuple[ServiceOutcome, float]]:
        law: Dict[ServiceOutcome, float] = defaultdict(float)
        for result, q in self.mechanism.result_distribution(v):
            law[result.served] += q
        return list(law.items())


class FreeServiceMechanism(Mechanism):
    """Serve what the base algorithm serves and charge nothing."""

    name = "free"

    def result_for(self, served, values):
        return MechanismResult(served, (0.0,) * values.size)

    def run(self, v, rng=None):
        values = as_values(v)
        return self.result_for(self.base.serve(values, rng), values)

    def run_batch(self, values, rng=None):
        served = self.base.serve_batch(values, rng)
        return served, np.zeros(served.shape)


class PostedPriceMechanism(Mechanism):
    """Serve the base algorithm's set and charge every served agent a flat price."""

    name = "posted_price"

    def __init__(self, base: AllocationAlgorithm, price: float):
        super().__init__(base)
        if price < 0:
            raise InvalidInstance(f"price must be >= 0, got {price}")
        self.price = float(price)

    def result_for(self, served, values):
        return MechanismResult(served, tuple(self.price if i in served else 0.0 for i in range(values.size)))

    def run(self, v, rng=None):
        values = as_values(v)
        return self.result_for(self.base.serve(values, rng), values)

    def run_batch(self, values, rng=None):
        served = self.base.serve_batch(values, rng)
        return served, np.where(served, self.price, 0.0)


class PayYourBidMechanism(Mechanism):
    name = "pay_your_bid"
    guarantee = EX_POST

    def result_for(self, served, values):
        return MechanismResult(served, tuple(float(values[i]) if i in served else 0.0 for i in range(values.size)))

    def run(self, v, rng=None):
        values = as_values(v)
        return self.result_for(self.base.serve(values, rng), values)

    def run_batch(self, values, rng=None):
        values = np.asarray(values, dtype=float)
        served = self.base.serve_batch(values, rng)
        return served, np.where(served, values, 0.0)


class ZeroOneMechanism(Mechanism):
    """Price-1 reduction for 0/1 valuations; accepts any base algorithm."""

    name = "expost_01"
    guarantee = EX_POST

    def __init__(self, base: AllocationAlgorithm, cost: CostFunction):
        super().__init__(base)
        self.cost = cost

    def result_for(self, served, values):
        return zero_one_from_outcome(served, values, self.cost)

    def run(self, v, rng=None):
        return reduce_zero_one(self.base, v, self.cost, rng)


class PowersOfTwoMechanism(Mechanism):
    """Uniform price v_min * 2^j at the first level whose revenue covers its cost."""

    name = "expost_pow2"
    guarantee = EX_POST

    def __init__(self, base: AllocationAlgorithm, cost: CostFunction, h: float, v_min: float = 1.0):
        require_truthful_no_bossy(base)
        super().__init__(base)
        self.cost = cost
        self.h = float(h)
        self.v_min = float(v_min)

    def trace(self, v: ProfileLike):
        return powers_of_two_trace(self.base, v, self.cost, self.h, self.v_min)

    def run(self, v, rng=None):
        values = as_values(v)
        return self.trace(values).result(values.size)

    def result_distribution(self, v):
        return [(self.run(v), 1.0)]


class SupportListMechanism(Mechanism):
    name = "expost_support"
    guarantee = EX_POST

    def __init__(self, base: AllocationAlgorithm, cost: CostFunction, support: SupportList):
        require_truthful_no_bossy(base)
        super().__init__(base)
        self.cost = cost
        self.support = support

    def trace(self, v: ProfileLike):
        return support_list_trace(self.base, v, self.cost, self.support)

    def run(self, v, rng=None):
        values = as_values(v)
        return self.trace(values).result(values.size)

    def result_distribution(self, v):
        return [(self.run(v), 1.0)]
