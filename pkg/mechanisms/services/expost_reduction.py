"""
Per-profile ex-post reductions.

Each function takes one reported profile, queries the base algorithm once and
filters its served set by ascending price levels until the level's revenue
covers the level's cost.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mechanisms.exceptions import (
    InvalidInstance,
    NonBinaryValuation,
    ReductionConfigError,
    SupportTooLarge,
    ValueOutsideSupport,
)
from .core_model import (
    AllocationAlgorithm,
    CostFunction,
    MechanismResult,
    ProfileLike,
    ServiceOutcome,
    as_values,
    enumeration_cap,
)

logger = logging.getLogger(__name__)

SUPPORT_MATCH_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SupportList:
    """Strictly increasing positive support values."""
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise InvalidInstance("a support list needs at least one value")
        if values[0] <= 0 or any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidInstance(f"support values must be positive and strictly increasing: {values}")
        object.__setattr__(self, "values", values)

    @classmethod
    def powers_of_two(cls, h: float, v_min: float = 1.0) -> "SupportList":
        top = int(math.floor(math.log2(h) + 1e-12))
        return cls(tuple(v_min * 2.0 ** j for j in range(top + 1)))

    def contains(self, value: float) -> bool:
        return any(abs(value - s) <= SUPPORT_MATCH_TOLERANCE * max(1.0, s) for s in self.values)


@dataclass(frozen=True)
class PriceLevel:
    price: float
    served: ServiceOutcome
    cost: float

    @property
    def passed(self) -> bool:
        return self.price * len(self.served) >= self.cost


@dataclass
class LevelTrace:
    """Levels tried in ascending order and the first one that covered its cost."""
    base_served: ServiceOutcome
    levels: List[PriceLevel] = field(default_factory=list)
    chosen: Optional[int] = None

    def result(self, n: int) -> MechanismResult:
        if self.chosen is None:
            return MechanismResult.nobody(n)
        level = self.levels[self.chosen]
        payments = tuple(level.price if i in level.served else 0.0 for i in range(n))
        return MechanismResult(level.served, payments)

    def excluded_value(self, v: ProfileLike) -> float:
        values = as_values(v)
        kept = self.levels[self.chosen].served if self.chosen is not None else frozenset()
        return float(sum(values[i] for i in self.base_served - kept))

    def cost_before_chosen(self) -> float:
        stop = len(self.levels) if self.chosen is None else self.chosen
        return float(sum(level.cost for level in self.levels[:stop]))


def require_truthful_no_bossy(alg: AllocationAlgorithm) -> None:
    missing = [
        flag for flag, ok in (
            ("deterministic", alg.deterministic),
            ("truthful", alg.claims_truthful),
            ("no-bossy", alg.claims_no_bossy),
        ) if not ok
    ]
    if missing:
        raise ReductionConfigError(f"{alg.name} cannot feed the price-level reduction: not {', '.join(missing)}")


def price_level_trace(served: ServiceOutcome, values: np.ndarray, cost: CostFunction, prices: Sequence[float]) -> LevelTrace:
    trace = LevelTrace(base_served=frozenset(served))
    for price in prices:
        # the base runs once; each level only filters its output
        level_set = frozenset(i for i in served if values[i] >= price)
        level = PriceLevel(price=float(price), served=level_set, cost=cost.cost(level_set))
        trace.levels.append(level)
        if level.passed:
            trace.chosen = len(trace.levels) - 1
            break
    return trace


def zero_one_from_outcome(served: ServiceOutcome, values: np.ndarray, cost: CostFunction) -> MechanismResult:
    # zero-value winners add cost and no revenue at price 1
    kept = frozenset(i for i in served if values[i] == 1)
    if cost.cost(kept) <= len(kept):
        return MechanismResult(kept, tuple(1.0 if i in kept else 0.0 for i in range(values.size)))
    return MechanismResult.nobody(values.size)


def _require_binary(values: np.ndarray) -> None:
    bad = [float(x) for x in values if x not in (0.0, 1.0)]
    if bad:
        raise NonBinaryValuation(f"0/1 reduction received values {bad}")


def reduce_zero_one(
    alg: AllocationAlgorithm,
    v: ProfileLike,
    cost: CostFunction,
    rng: Optional[np.random.Generator] = None,
) -> MechanismResult:
    """Drop zero-value winners; serve the rest at price 1 iff they cover their cost."""
    values = as_values(v)
    _require_binary(values)
    return zero_one_from_outcome(alg.serve(values, rng), values, cost)


def powers_of_two_trace(alg: AllocationAlgorithm, v: ProfileLike, cost: CostFunction, h: float, v_min: float = 1.0) -> LevelTrace:
    require_truthful_no_bossy(alg)
    values = as_values(v)
    prices = SupportList.powers_of_two(h, v_min).values
    return price_level_trace(alg.serve(values, None), values, cost, prices)


def reduce_powers_of_two(alg: AllocationAlgorithm, v: ProfileLike, cost: CostFunction, h: float, v_min: float = 1.0) -> MechanismResult:
    values = as_values(v)
    return powers_of_two_trace(alg, values, cost, h, v_min).result(values.size)


def support_list_trace(alg: AllocationAlgorithm, v: ProfileLike, cost: CostFunction, support: SupportList) -> LevelTrace:
    require_truthful_no_bossy(alg)
    values = as_values(v)
    outside = [float(x) for x in values if not support.contains(float(x))]
    if outside:
        raise ValueOutsideSupport(f"values {outside} are not in the support {list(support.values)}")
    return price_level_trace(alg.serve(values, None), values, cost, support.values)


def reduce_support_list(alg: AllocationAlgorithm, v: ProfileLike, cost: CostFunction, support: SupportList) -> MechanismResult:
    values = as_values(v)
    return support_list_trace(alg, values, cost, support).result(values.size)


@dataclass(frozen=True)
class NoBossyViolation:
    agent: int
    value: float
    other_value: float
    others: Tuple[Optional[float], ...]
    served: ServiceOutcome
    other_served: ServiceOutcome


def check_no_bossy(alg: AllocationAlgorithm, grid: Sequence[Sequence[float]], cap: Optional[int] = None) -> List[NoBossyViolation]:
    """
    Scan every (agent, v_i, v_i', v_-i) on the grid.

    Whenever the agent is served at both values, the served sets must agree.
    ``others`` records v_-i with None in the agent's slot.
    """
    if not alg.deterministic:
        raise ReductionConfigError(f"no-bossiness is checked on deterministic algorithms; {alg.name} is randomized")
    cap = enumeration_cap() if cap is None else cap
    size = math.prod(len(g) for g in grid)
    if size > cap:
        raise SupportTooLarge(f"no-bossy scan covers {size} profiles, cap is {cap}")
    outcomes = {
        profile: alg.serve(np.array(profile), None)
        for profile in itertools.product(*[tuple(float(x) for x in g) for g in grid])
    }
    violations = []
    for i, own in enumerate(grid):
        others_grid = [tuple(float(x) for x in g) if j != i else (None,) for j, g in enumerate(grid)]
        for others in itertools.product(*others_grid):
            for a, b in itertools.combinations(sorted(float(x) for x in own), 2):
                first = outcomes[others[:i] + (a,) + others[i + 1:]]
                second = outcomes[others[:i] + (b,) + others[i + 1:]]
                if i in first and i in second and first != second:
                    violations.append(NoBossyViolation(i, a, b, others, first, second))
    if violations:
        logger.info(f"{alg.name}: {len(violations)} no-bossy violations on the grid")
    return violations
