"""
Instance representation for cost-sharing mechanism design.

Valuation profiles, independent priors, monotone cost functions, the
allocation-algorithm interface and the social-cost objective. Everything here
is immutable after construction and safe to share between worker threads.
"""

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from scipy import integrate, stats

from mechanisms.exceptions import (
    IncompatibleMode,
    InvalidInstance,
    NotDiscrete,
    SupportTooLarge,
    ZeroMassInterval,
)
from .randomness import Stream, keyed_generator, keyed_map, profile_chunks

logger = logging.getLogger(__name__)

ATOM_SUM_TOLERANCE = 1e-12
ENUMERATION_SUM_TOLERANCE = 1e-9
EXPLICIT_TABLE_MAX_AGENTS = 20

ServiceOutcome = FrozenSet[int]


def enumeration_cap() -> int:
    return int(getattr(settings, "COSTSHARE_ENUMERATION_CAP", 10**6))


# ---------------------------------------------------------------------------
# Profiles and outcomes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValuationProfile:
    """Reported values, one per agent, in the same units as costs."""
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise InvalidInstance("a valuation profile needs at least one agent")
        for i, v in enumerate(values):
            if not math.isfinite(v) or v < 0:
                raise InvalidInstance(f"value of agent {i} must be finite and >= 0, got {v}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def replace(self, agent: int, value: float) -> "ValuationProfile":
        values = list(self.values)
        values[agent] = value
        return ValuationProfile(tuple(values))


ProfileLike = Union[ValuationProfile, Sequence[float], np.ndarray]


def as_values(v: ProfileLike) -> np.ndarray:
    if isinstance(v, ValuationProfile):
        return v.as_array()
    return np.asarray(v, dtype=float)


def validate_outcome(served: Iterable[int], n: int) -> ServiceOutcome:
    served = frozenset(int(i) for i in served)
    bad = [i for i in served if i < 0 or i >= n]
    if bad:
        raise InvalidInstance(f"served set contains agents outside 0..{n - 1}: {sorted(bad)}")
    return served


@dataclass(frozen=True)
class MechanismResult:
    """Served set plus one payment per agent."""
    served: ServiceOutcome
    payments: Tuple[float, ...]

    def __post_init__(self):
        served = validate_outcome(self.served, len(self.payments))
        payments = tuple(float(p) for p in self.payments)
        for i, p in enumerate(payments):
            if p < 0:
                raise InvalidInstance(f"payment of agent {i} is negative: {p}")
            if i not in served and p != 0:
                raise InvalidInstance(f"unserved agent {i} is charged {p}")
        object.__setattr__(self, "served", served)
        object.__setattr__(self, "payments", payments)

    @classmethod
    def nobody(cls, n: int) -> "MechanismResult":
        return cls(frozenset(), (0.0,) * n)

    @property
    def revenue(self) -> float:
        return float(sum(self.payments))

    def utility(self, agent: int, value: float) -> float:
        return (value if agent in self.served else 0.0) - self.payments[agent]


def social_cost(served: Iterable[int], v: ProfileLike, cost: "CostFunction") -> float:
    """C(S) plus the total value of the agents left out."""
    values = as_values(v)
    served = validate_outcome(served, values.size)
    excluded = sum(float(values[i]) for i in range(values.size) if i not in served)
    return cost.cost(served) + excluded


def social_welfare(served: Iterable[int], v: ProfileLike) -> float:
    values = as_values(v)
    served = validate_outcome(served, values.size)
    return float(sum(values[i] for i in served))


# ---------------------------------------------------------------------------
# Value distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    """Half-open interval (lo, hi]."""
    lo: float
    hi: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x <= self.hi)


ZERO_CELL = Interval(-math.inf, 0.0)


class ValueDistribution(ABC):
    """A single agent's value distribution F_i."""

    is_discrete = False

    @property
    @abstractmethod
    def support_bounds(self) -> Tuple[float, float]:
        """(v_lo, v_hi) containing the whole support."""

    @property
    @abstractmethod
    def min_positive(self) -> float:
        """Infimum of the nonzero support values."""

    @abstractmethod
    def cdf(self, x):
        ...

    @abstractmethod
    def ppf(self, u):
        """Generalized inverse: smallest x with F(x) >= u."""

    @abstractmethod
    def mean(self) -> float:
        ...

    def pdf(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no density")

    def mass(self, interval: Interval) -> float:
        lo = 0.0 if interval.lo == -math.inf else float(self.cdf(interval.lo))
        return max(0.0, float(self.cdf(interval.hi)) - lo)

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.sample_many(rng, 1)[0])

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.ppf(rng.random(size))

    def conditional_sample(self, interval: Interval, rng: np.random.Generator) -> float:
        return float(self.conditional_sample_many(interval, rng, 1)[0])

    def conditional_sample_many(self, interval: Interval, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF draw restricted to (lo, hi]."""
        lo_mass = 0.0 if interval.lo == -math.inf else float(self.cdf(interval.lo))
        hi_mass = float(self.cdf(interval.hi))
        if hi_mass - lo_mass <= 0:
            raise ZeroMassInterval(f"{self!r} puts no mass on ({interval.lo}, {interval.hi}]")
        # 1 - U lies in (0, 1], so u lies in (F(lo), F(hi)]
        u = lo_mass + (hi_mass - lo_mass) * (1.0 - rng.random(size))
        return np.clip(self.ppf(u), max(interval.lo, self.support_bounds[0]), interval.hi)

    def partial_mean(self, a: float, b: float) -> float:
        """Integral of v dF(v) over (a, b], continuous part."""
        lo, hi = self.support_bounds
        a, b = max(a, lo), min(b, hi)
        if b <= a:
            return 0.0
        value, _ = integrate.quad(lambda y: y * self.pdf(y), a, b)
        return float(value)

    def survival_integral(self, a: float, b: float) -> float:
        """Integral of 1 - F(y) dy over [a, b]."""
        if b <= a:
            return 0.0
        lo, hi = self.support_bounds
        total = 0.0
        if a < lo:
            total += min(b, lo) - a
            a = lo
        b_in = min(b, hi)
        if b_in > a:
            value, _ = integrate.quad(lambda y: 1.0 - float(self.cdf(y)), a, b_in)
            total += value
        return float(total)


@dataclass(frozen=True)
class DiscreteAtoms(ValueDistribution):
    """Finitely many (value, probability) atoms, values strictly increasing."""
    atoms: Tuple[Tuple[float, float], ...]

    is_discrete = True

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        if not atoms:
            raise InvalidInstance("a discrete distribution needs at least one atom")
        values = [v for v, _ in atoms]
        probs = [p for _, p in atoms]
        if any(p < 0 for p in probs):
            raise InvalidInstance(f"atom probabilities must be >= 0: {probs}")
        if abs(sum(probs) - 1.0) > ATOM_SUM_TOLERANCE:
            raise InvalidInstance(f"atom probabilities sum to {sum(probs)!r}, not 1")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidInstance(f"atom values must be strictly increasing: {values}")
        if values[0] < 0 or not all(math.isfinite(v) for v in values):
            raise InvalidInstance(f"atom values must be finite and >= 0: {values}")
        object.__setattr__(self, "atoms", atoms)

    @cached_property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @property
    def support_bounds(self) -> Tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    @property
    def min_positive(self) -> float:
        positive = self.values[self.values > 0]
        return float(positive[0]) if positive.size else 0.0

    def cdf(self, x):
        idx = np.searchsorted(self.values, x, side="right")
        cum = np.concatenate(([0.0], self._cumulative))
        return cum[idx]

    def ppf(self, u):
        idx = np.searchsorted(self._cumulative, u, side="left")
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def pdf(self, x):
        raise NotImplementedError("discrete distributions have no density")

    def mass(self, interval: Interval) -> float:
        return float(self.probs[interval.contains(self.values)].sum())

    def conditional_sample_many(self, interval: Interval, rng: np.random.Generator, size: int) -> np.ndarray:
        inside = interval.contains(self.values) & (self.probs > 0)
        if not inside.any():
            raise ZeroMassInterval(f"no atom of {self.atoms} lies in ({interval.lo}, {interval.hi}]")
        values = self.values[inside]
        probs = self.probs[inside] / self.probs[inside].sum()
        return rng.choice(values, size=size, p=probs)

    def conditional_atoms(self, interval: Interval) -> List[Tuple[float, float]]:
        """Atoms inside the interval with renormalized probabilities."""
        inside = interval.contains(self.values) & (self.probs > 0)
        if not inside.any():
            raise ZeroMassInterval(f"no atom of {self.atoms} lies in ({interval.lo}, {interval.hi}]")
        total = self.probs[inside].sum()
        return [(float(v), float(p / total)) for v, p in zip(self.values[inside], self.probs[inside])]

    def partial_mean(self, a: float, b: float) -> float:
        inside = (self.values > a) & (self.values <= b)
        return float(self.values[inside] @ self.probs[inside])

    def survival_integral(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        cuts = [a] + [float(v) for v in self.values if a < v < b] + [b]
        return float(sum((1.0 - float(self.cdf(left))) * (right - left) for left, right in zip(cuts, cuts[1:])))


@dataclass(frozen=True)
class UniformContinuous(ValueDistribution):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi) or not math.isfinite(self.hi):
            raise InvalidInstance(f"uniform bounds must satisfy 0 <= lo < hi < inf, got ({self.lo}, {self.hi})")

    @cached_property
    def _frozen(self):
        return stats.uniform(loc=self.lo, scale=self.hi - self.lo)

    @property
    def support_bounds(self) -> Tuple[float, float]:
        return float(self.lo), float(self.hi)

    @property
    def min_positive(self) -> float:
        return float(self.lo)

    def cdf(self, x):
        return self._frozen.cdf(x)

    def ppf(self, u):
        return self._frozen.ppf(u)

    def pdf(self, x):
        return self._frozen.pdf(x)

    def mean(self) -> float:
        return float(self._frozen.mean())


@dataclass(frozen=True)
class EqualRevenue(ValueDistribution):
    """
    Atom of mass 1/h at 0 plus density 1/z^2 on [1, h], all scaled by ``scale``.

    In native units the continuous part has density scale/v^2 on
    [scale, scale*h]. Sampling inverts the CDF in closed form.
    """
    h: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.h > 1 and math.isfinite(self.h)):
            raise InvalidInstance(f"equal-revenue h must be finite and > 1, got {self.h}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidInstance(f"equal-revenue scale must be finite and > 0, got {self.scale}")

    @property
    def support_bounds(self) -> Tuple[float, float]:
        return 0.0, float(self.scale * self.h)

    @property
    def min_positive(self) -> float:
        return float(self.scale)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        s, h = self.scale, self.h
        with np.errstate(divide="ignore"):
            middle = 1.0 / h + 1.0 - s / np.where(x > 0, x, 1.0)
        out = np.where(x < 0, 0.0, np.where(x < s, 1.0 / h, np.where(x < s * h, middle, 1.0)))
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        h = self.h
        denom = np.maximum(1.0 + 1.0 / h - u, 1.0 / h)
        out = np.where(u < 1.0 / h, 0.0, self.scale / denom)
        return out if out.ndim else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = self.scale
        inside = (x >= s) & (x <= s * self.h)
        out = np.where(inside, s / np.where(inside, x, 1.0) ** 2, 0.0)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return float(self.scale * math.log(self.h))

    def conditional_sample_many(self, interval: Interval, rng: np.random.Generator, size: int) -> np.ndarray:
        if interval.hi < self.scale and interval.lo < 0 <= interval.hi:
            return np.zeros(size)
        return super().conditional_sample_many(interval, rng, size)

    def partial_mean(self, a: float, b: float) -> float:
        s = self.scale
        a, b = max(a, s), min(b, s * self.h)
        return float(s * math.log(b / a)) if b > a else 0.0

    def survival_integral(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        s, h = self.scale, self.h
        total = 0.0
        # (-inf, 0): survival 1
        if a < 0:
            total += min(b, 0.0) - a
        # [0, s): survival 1 - 1/h
        lo, hi = max(a, 0.0), min(b, s)
        if hi > lo:
            total += (1.0 - 1.0 / h) * (hi - lo)
        # [s, s*h): survival s/y - 1/h
        lo, hi = max(a, s), min(b, s * h)
        if hi > lo:
            total += s * math.log(hi / lo) - (hi - lo) / h
        return float(total)


def discrete_equal_revenue(h: float, scale: float = 1.0) -> DiscreteAtoms:
    """
    Finite equal-revenue analogue on {scale * 2^j : j = 0..floor(log2 h)}.

    Pr[v >= scale * 2^j] = 2^-j, so a posted price at any atom earns scale.
    """
    if h < 1:
        raise InvalidInstance(f"h must be >= 1, got {h}")
    top = int(math.floor(math.log2(h) + 1e-12))
    atoms = []
    for j in range(top + 1):
        p = 2.0 ** -j - (2.0 ** -(j + 1) if j < top else 0.0)
        atoms.append((scale * 2.0 ** j, p))
    return DiscreteAtoms(tuple(atoms))


@dataclass(frozen=True)
class ProductPrior:
    """Independent per-agent value distributions."""
    dists: Tuple[ValueDistribution, ...]

    def __post_init__(self):
        dists = tuple(self.dists)
        if not dists:
            raise InvalidInstance("a prior needs at least one agent")
        object.__setattr__(self, "dists", dists)
        if self.v_min <= 0:
            raise InvalidInstance("every prior needs nonzero values bounded away from 0 (v_min > 0)")

    @classmethod
    def iid(cls, dist: ValueDistribution, n: int) -> "ProductPrior":
        return cls((dist,) * n)

    @property
    def n(self) -> int:
        return len(self.dists)

    @property
    def is_discrete(self) -> bool:
        return all(d.is_discrete for d in self.dists)

    @property
    def v_max(self) -> float:
        return max(d.support_bounds[1] for d in self.dists)

    @property
    def v_min(self) -> float:
        positives = [d.min_positive for d in self.dists if d.min_positive > 0]
        return min(positives) if positives else 0.0

    @property
    def h(self) -> float:
        return self.v_max / self.v_min

    def sample_profiles(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, n) matrix of independent profiles."""
        return np.column_stack([d.sample_many(rng, size) for d in self.dists])

    def support_size(self) -> int:
        if not self.is_discrete:
            raise NotDiscrete("the prior has a continuous marginal")
        return math.prod(len(d.atoms) for d in self.dists)


def _require_enumerable(prior: ProductPrior, cap: Optional[int]) -> int:
    if not prior.is_discrete:
        raise NotDiscrete("exact enumeration needs every marginal to be discrete")
    cap = enumeration_cap() if cap is None else cap
    size = prior.support_size()
    if size > cap:
        raise SupportTooLarge(f"product support has {size} profiles, cap is {cap}")
    return size


def support_arrays(prior: ProductPrior, cap: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Every profile of the product support as rows, with exact probabilities."""
    _require_enumerable(prior, cap)
    grids = np.meshgrid(*[d.values for d in prior.dists], indexing="ij")
    weights = np.meshgrid(*[d.probs for d in prior.dists], indexing="ij")
    values = np.column_stack([g.ravel() for g in grids])
    probs = np.prod(np.column_stack([w.ravel() for w in weights]), axis=1)
    total = probs.sum()
    if abs(total - 1.0) > ENUMERATION_SUM_TOLERANCE:
        raise InvalidInstance(f"support probabilities sum to {total!r}")
    return values, probs


def enumerate_support(prior: ProductPrior, cap: Optional[int] = None) -> List[Tuple[ValuationProfile, float]]:
    values, probs = support_arrays(prior, cap)
    return [(ValuationProfile(tuple(row)), float(p)) for row, p in zip(values, probs)]


def enumerate_others(prior: ProductPrior, agent: int, cap: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Profiles of everyone but ``agent`` (column left at 0) and their probabilities."""
    _require_enumerable(prior, cap)
    lists = [d.values if j != agent else np.zeros(1) for j, d in enumerate(prior.dists)]
    probs = [d.probs if j != agent else np.ones(1) for j, d in enumerate(prior.dists)]
    grids = np.meshgrid(*lists, indexing="ij")
    weights = np.meshgrid(*probs, indexing="ij")
    values = np.column_stack([g.ravel() for g in grids])
    return values, np.prod(np.column_stack([w.ravel() for w in weights]), axis=1)


# ---------------------------------------------------------------------------
# Cost functions
# ---------------------------------------------------------------------------

def subset_bits(served: Iterable[int]) -> int:
    return sum(1 << i for i in served)


class CostFunction(ABC):
    """Monotone set cost with C(empty) = 0."""

    kind = "cost"

    @abstractmethod
    def cost(self, served: Iterable[int]) -> float:
        ...

    def cost_batch(self, mask: np.ndarray) -> np.ndarray:
        """Cost of every row of a boolean (m, n) served matrix."""
        mask = np.asarray(mask, dtype=bool)
        return np.array([self.cost(np.flatnonzero(row)) for row in mask], dtype=float)


@dataclass(frozen=True)
class PublicExcludable(CostFunction):
    """C(S) = c for every nonempty S."""
    c: float

    kind = "public_excludable"

    def __post_init__(self):
        if not (self.c >= 0 and math.isfinite(self.c)):
            raise InvalidInstance(f"public good cost must be finite and >= 0, got {self.c}")

    def cost(self, served: Iterable[int]) -> float:
        return float(self.c) if any(True for _ in served) else 0.0

    def cost_batch(self, mask: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(mask, dtype=bool).any(axis=1), float(self.c), 0.0)


@dataclass(frozen=True)
class Additive(CostFunction):
    costs: Tuple[float, ...]

    kind = "additive"

    def __post_init__(self):
        costs = tuple(float(c) for c in self.costs)
        if any(c < 0 or not math.isfinite(c) for c in costs):
            raise InvalidInstance(f"per-agent costs must be finite and >= 0: {costs}")
        object.__setattr__(self, "costs", costs)

    def cost(self, served: Iterable[int]) -> float:
        return float(sum(self.costs[i] for i in served))

    def cost_batch(self, mask: np.ndarray) -> np.ndarray:
        return np.asarray(mask, dtype=float) @ np.asarray(self.costs)


@dataclass(frozen=True)
class CardinalityConcave(CostFunction):
    """C(S) = g(|S|) from a table g(0..n)."""
    g: Tuple[float, ...]

    kind = "cardinality"

    def __post_init__(self):
        g = tuple(float(x) for x in self.g)
        if not g or g[0] != 0:
            raise InvalidInstance(f"g(0) must be 0, got table {g}")
        if any(x < 0 or not math.isfinite(x) for x in g):
            raise InvalidInstance(f"g values must be finite and >= 0: {g}")
        object.__setattr__(self, "g", g)

    def cost(self, served: Iterable[int]) -> float:
        return self.g[len(frozenset(served))]

    def cost_batch(self, mask: np.ndarray) -> np.ndarray:
        return np.asarray(self.g)[np.asarray(mask, dtype=bool).sum(axis=1)]


@dataclass(frozen=True)
class ExplicitTable(CostFunction):
    """C(S) read from a table of 2^n values indexed by the bitmask of S (agent i is bit i)."""
    values: Tuple[float, ...]

    kind = "table"

    def __post_init__(self):
        values = tuple(float(x) for x in self.values)
        n = int(round(math.log2(len(values)))) if values else -1
        if n < 0 or 2 ** n != len(values):
            raise InvalidInstance(f"table length must be a power of two, got {len(values)}")
        if n > EXPLICIT_TABLE_MAX_AGENTS:
            raise InvalidInstance(f"explicit tables support at most {EXPLICIT_TABLE_MAX_AGENTS} agents")
        if values[0] != 0:
            raise InvalidInstance(f"C(empty) must be 0, got {values[0]}")
        if any(x < 0 or not math.isfinite(x) for x in values):
            raise InvalidInstance("table values must be finite and >= 0")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(round(math.log2(len(self.values))))

    def cost(self, served: Iterable[int]) -> float:
        return self.values[subset_bits(served)]

    def cost_batch(self, mask: np.ndarray) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        bits = mask.astype(np.int64) @ (1 << np.arange(mask.shape[1], dtype=np.int64))
        return np.asarray(self.values)[bits]


@dataclass
class CostMonotonicityReport:
    empty_cost: float
    violations: List[Tuple[Tuple[int, ...], Tuple[int, ...], float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.empty_cost == 0 and not self.violations


def check_cost_monotone(cost: CostFunction, n: int) -> CostMonotonicityReport:
    """
    Compare every subset with each of its one-agent extensions.

    Monotonicity over all pairs S subset T follows from the one-step checks, and
    the minimal violating pairs are the ones reported.
    """
    if n > EXPLICIT_TABLE_MAX_AGENTS:
        raise SupportTooLarge(f"monotonicity check enumerates 2^{n} subsets; limit is {EXPLICIT_TABLE_MAX_AGENTS}")
    report = CostMonotonicityReport(empty_cost=cost.cost(()))
    for bits in range(2 ** n):
        subset = tuple(i for i in range(n) if bits >> i & 1)
        base = cost.cost(subset)
        for j in range(n):
            if bits >> j & 1:
                continue
            bigger = tuple(sorted(subset + (j,)))
            extended = cost.cost(bigger)
            if extended < base:
                report.violations.append((subset, bigger, base, extended))
    return report


# ---------------------------------------------------------------------------
# Algorithms
# ---------------------------------------------------------------------------

class AllocationAlgorithm(ABC):
    """
    Black-box map from a valuation profile (and randomness) to a served set.

    Subclasses set the capability flags; reductions check them instead of
    trusting the caller.
    """

    name = "algorithm"
    deterministic = True
    claims_truthful = False
    claims_no_bossy = False

    @abstractmethod
    def serve(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> ServiceOutcome:
        ...

    def serve_batch(self, values: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Boolean (m, n) served matrix for a batch of profiles."""
        values = np.asarray(values, dtype=float)
        mask = np.zeros(values.shape, dtype=bool)
        for r, row in enumerate(values):
            served = list(self.serve(row, rng))
            mask[r, served] = True
        return mask

    def outcome_distribution(self, v: ProfileLike) -> List[Tuple[ServiceOutcome, float]]:
        """Finite law of the served set at ``v``; only enumerable algorithms implement it."""
        if self.deterministic:
            return [(self.serve(v, None), 1.0)]
        raise IncompatibleMode(f"{self.name} does not expose a finite outcome distribution")

    def closed_form_interim(self, agent: int, cells: int) -> Optional[np.ndarray]:
        """Interim curve known without sampling (value-independent algorithms)."""
        return None

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


# ---------------------------------------------------------------------------
# Joint law of (v, S(v))
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeTable:
    """
    Weighted rows (profile, served set) describing the joint law of (v, S(v)).

    Exact tables enumerate the product support and the algorithm's outcome
    distribution; sampled tables hold equally weighted Monte Carlo draws.
    """
    values: np.ndarray
    served: np.ndarray
    weights: np.ndarray
    exact: bool
    samples: int = 0
    seed: Optional[int] = None

    @classmethod
    def build_exact(cls, alg: AllocationAlgorithm, prior: ProductPrior, cap: Optional[int] = None) -> "OutcomeTable":
        values, probs = support_arrays(prior, cap)
        if alg.deterministic:
            served = alg.serve_batch(values, None)
            return cls(values=values, served=served, weights=probs, exact=True)
        rows, masks, weights = [], [], []
        for row, p in zip(values, probs):
            for outcome, q in alg.outcome_distribution(row):
                if q <= 0:
                    continue
                mask = np.zeros(prior.n, dtype=bool)
                mask[list(outcome)] = True
                rows.append(row)
                masks.append(mask)
                weights.append(p * q)
        return cls(values=np.array(rows), served=np.array(masks), weights=np.array(weights), exact=True)

    @classmethod
    def build_sampled(
        cls,
        alg: AllocationAlgorithm,
        prior: ProductPrior,
        samples: int,
        seed: int,
        jobs: Optional[int] = None,
    ) -> "OutcomeTable":
        def draw(task):
            index, size = task
            rng = keyed_generator(seed, Stream.COST, index)
            values = prior.sample_profiles(rng, size)
            return values, alg.serve_batch(values, rng)

        parts = keyed_map(draw, list(enumerate(profile_chunks(samples, prior.n))), jobs)
        values = np.vstack([p[0] for p in parts]) if parts else np.zeros((0, prior.n))
        served = np.vstack([p[1] for p in parts]) if parts else np.zeros((0, prior.n), dtype=bool)
        weights = np.full(values.shape[0], 1.0 / max(values.shape[0], 1))
        logger.debug(f"Sampled outcome table: {samples} profiles, seed {seed}")
        return cls(values=values, served=served, weights=weights, exact=False, samples=samples, seed=seed)

    @classmethod
    def build(
        cls,
        alg: AllocationAlgorithm,
        prior: ProductPrior,
        exact: bool,
        samples: int = 0,
        seed: int = 0,
        jobs: Optional[int] = None,
    ) -> "OutcomeTable":
        if exact:
            return cls.build_exact(alg, prior)
        return cls.build_sampled(alg, prior, samples, seed, jobs)

    def threshold_mask(self, t: float) -> np.ndarray:
        """S_t(v) = {i in S(v) : v_i >= t} for every row."""
        return self.served & (self.values >= t)

    def expected_cost(self, cost: CostFunction, t: float = -math.inf) -> float:
        return float(self.weights @ cost.cost_batch(self.threshold_mask(t)))

    def expected_size(self, t: float = -math.inf) -> float:
        return float(self.weights @ self.threshold_mask(t).sum(axis=1))

    def expected_excluded_value(self, t: float) -> float:
        """E[sum of v_i over i in S(v) minus S_t(v)]."""
        dropped = self.served & ~(self.values >= t)
        return float(self.weights @ (self.values * dropped).sum(axis=1))

    def expected_social_cost(self, cost: CostFunction, t: float = -math.inf) -> float:
        mask = self.threshold_mask(t)
        excluded = (self.values * ~mask).sum(axis=1)
        return float(self.weights @ (cost.cost_batch(mask) + excluded))

    def empty_at(self, t: float) -> bool:
        return not self.threshold_mask(t).any()

    def describe(self) -> Dict[str, object]:
        return {"exact": self.exact, "rows": int(self.values.shape[0]), "samples": self.samples, "seed": self.seed}
