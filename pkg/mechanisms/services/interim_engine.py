"""
Interim allocation curves on a delta-grid.

Exact curves come from enumeration, estimated curves from conditional Monte
Carlo with a running maximum. Myerson payments (closed form and the unbiased
sampled estimator) integrate these step functions, and the two monotonization
wrappers turn an almost-monotone algorithm into one with a monotone curve.

Curve layout: index 0 is the zero cell (-inf, 0], index k >= 1 is the cell
((k-1)*delta, k*delta]. Curves are right-continuous step functions.
"""

import enum
import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import isotonic_regression

from mechanisms.exceptions import (
    GammaOutOfRange,
    GridMismatch,
    IncompatibleMode,
    InvalidInstance,
    NonMonotoneCurve,
    ZeroMassInterval,
)
from .core_model import (
    AllocationAlgorithm,
    DiscreteAtoms,
    Interval,
    OutcomeTable,
    ProductPrior,
    ProfileLike,
    ServiceOutcome,
    ValueDistribution,
    ZERO_CELL,
    as_values,
)
from .randomness import Stream, chunk_sizes, keyed_generator, keyed_map

logger = logging.getLogger(__name__)

CELL_TOLERANCE = 1e-9
MONOTONE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DiscretizationConfig:
    """Grid of width ``delta`` covering (0, v_hi]."""
    delta: float
    v_hi: float

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise InvalidInstance(f"delta must be finite and > 0, got {self.delta}")
        if not (self.v_hi > 0 and math.isfinite(self.v_hi)):
            raise InvalidInstance(f"v_hi must be finite and > 0, got {self.v_hi}")

    @property
    def cells(self) -> int:
        return max(1, math.ceil(self.v_hi / self.delta - CELL_TOLERANCE))

    @property
    def size(self) -> int:
        return self.cells + 1

    def cell_of(self, v):
        v = np.asarray(v, dtype=float)
        k = np.clip(np.ceil(v / self.delta - CELL_TOLERANCE), 1, self.cells).astype(np.int64)
        out = np.where(v <= 0, 0, k)
        return out if out.ndim else int(out)

    def lower_edge(self, k: int) -> float:
        return 0.0 if k == 0 else (k - 1) * self.delta

    def interval(self, k: int) -> Interval:
        if k == 0:
            return ZERO_CELL
        return Interval((k - 1) * self.delta, k * self.delta)

    def span(self, first: int, last: int) -> Interval:
        """Union of the contiguous cells first..last."""
        return Interval(self.interval(first).lo, self.interval(last).hi)

    def cell_masses(self, dist: ValueDistribution) -> np.ndarray:
        if isinstance(dist, DiscreteAtoms):
            return np.bincount(self.cell_of(dist.values), weights=dist.probs, minlength=self.size)
        edges = np.arange(self.size) * self.delta
        cum = np.asarray(dist.cdf(edges), dtype=float)
        masses = np.empty(self.size)
        masses[0] = cum[0]
        masses[1:] = np.diff(cum)
        masses[-1] += max(0.0, 1.0 - cum[-1])
        return np.clip(masses, 0.0, None)


class CurveSource(str, enum.Enum):
    EXACT = "exact"
    ESTIMATED = "estimated"
    CLOSED_FORM = "closed_form"
    POOLED = "pooled"
    BLATANT = "blatant"


@dataclass(frozen=True)
class Provenance:
    source: CurveSource
    epsilon: Optional[float] = None
    samples: Optional[int] = None
    seed: Optional[int] = None

    def label(self) -> str:
        if self.samples is None:
            return self.source.value
        return f"{self.source.value}(eps={self.epsilon:g},N={self.samples},seed={self.seed})"


@dataclass(frozen=True, eq=False)
class InterimCurve:
    """
    One agent's interim allocation probability per grid cell.

    ``raw`` keeps the pre-monotonization entries of estimated curves (and the
    unfilled entries of exact ones); ``present`` marks cells with prior mass.
    """
    agent: int
    disc: DiscretizationConfig
    values: np.ndarray
    masses: np.ndarray
    present: np.ndarray
    provenance: Provenance
    raw: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.disc.size,):
            raise GridMismatch(f"curve has {values.shape} entries, grid needs {self.disc.size}")
        if np.any(values < -MONOTONE_TOLERANCE) or np.any(values > 1 + MONOTONE_TOLERANCE):
            raise InvalidInstance(f"interim probabilities of agent {self.agent} leave [0, 1]")
        values = np.clip(values, 0.0, 1.0)
        masses = np.array(self.masses, dtype=float)
        present = np.array(self.present, dtype=bool)
        for arr in (values, masses, present):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "present", present)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= -MONOTONE_TOLERANCE))

    def first_decrease(self) -> Optional[Tuple[int, float]]:
        """(cell, drop) of the largest decrease, or None."""
        drops = -np.diff(self.values)
        if drops.size == 0 or drops.max() <= MONOTONE_TOLERANCE:
            return None
        k = int(np.argmax(drops))
        return k + 1, float(drops[k])

    def at(self, v):
        return self.values[self.disc.cell_of(v)]

    def antiderivative(self, y):
        """Integral of x over [0, y], partial cells prorated linearly."""
        y = np.asarray(y, dtype=float)
        delta, cells = self.disc.delta, self.disc.cells
        cum = delta * np.concatenate(([0.0], np.cumsum(self.values[1:])))
        k = np.clip(np.floor(y / delta), 0, cells).astype(np.int64)
        following = np.minimum(k + 1, cells)
        out = cum[k] + (y - k * delta) * self.values[following]
        out = np.where(y <= 0, 0.0, out)
        return out if out.ndim else float(out)

    def integral(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        return float(self.antiderivative(b) - self.antiderivative(a))

    def key(self) -> Tuple:
        return (self.disc, self.values.tobytes())

    def with_values(self, values: np.ndarray, provenance: Provenance) -> "InterimCurve":
        return replace(self, values=values, provenance=provenance)

    def to_rows(self) -> List[Tuple]:
        label = self.provenance.label()
        return [(self.agent, k, self.disc.lower_edge(k), float(self.values[k]), label) for k in range(self.disc.size)]


def fill_absent(raw: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Leading absent cells take the first present value; later ones carry the running value."""
    out = np.array(raw, dtype=float)
    if not present.any():
        return out
    first = int(np.argmax(present))
    out[:first] = out[first]
    running = out[first]
    for k in range(first, out.size):
        if present[k]:
            running = out[k]
        else:
            out[k] = running
    return out


# ---------------------------------------------------------------------------
# Conditional draws on grid cells
# ---------------------------------------------------------------------------

def atoms_in_cells(dist: DiscreteAtoms, disc: DiscretizationConfig, first: int, last: int) -> List[Tuple[float, float]]:
    cells = disc.cell_of(dist.values)
    inside = (cells >= first) & (cells <= last) & (dist.probs > 0)
    if not inside.any():
        raise ZeroMassInterval(f"no atom of {dist.atoms} lies in cells {first}..{last}")
    total = dist.probs[inside].sum()
    return [(float(v), float(p / total)) for v, p in zip(dist.values[inside], dist.probs[inside])]


def draw_in_cells(
    dist: ValueDistribution,
    disc: DiscretizationConfig,
    first: int,
    last: int,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Draw from ``dist`` conditional on lying in cells first..last."""
    if isinstance(dist, DiscreteAtoms):
        atoms = atoms_in_cells(dist, disc, first, last)
        return rng.choice(np.array([v for v, _ in atoms]), size=size, p=np.array([p for _, p in atoms]))
    return dist.conditional_sample_many(disc.span(first, last), rng, size)


# ---------------------------------------------------------------------------
# Exact, closed-form and estimated curves
# ---------------------------------------------------------------------------

def closed_form_curves(alg: AllocationAlgorithm, prior: ProductPrior, disc: DiscretizationConfig) -> Optional[Tuple[InterimCurve, ...]]:
    curves = []
    for i, dist in enumerate(prior.dists):
        values = alg.closed_form_interim(i, disc.size)
        if values is None:
            return None
        masses = disc.cell_masses(dist)
        curves.append(InterimCurve(i, disc, values, masses, masses > 0, Provenance(CurveSource.CLOSED_FORM)))
    return tuple(curves)


def exact_interim_curve(
    alg: AllocationAlgorithm,
    prior: ProductPrior,
    disc: DiscretizationConfig,
    cap: Optional[int] = None,
    table: Optional[OutcomeTable] = None,
) -> Tuple[InterimCurve, ...]:
    """Conditional service probability per cell, by enumerating the prior and the algorithm's outcome law."""
    if table is None or not table.exact:
        table = OutcomeTable.build_exact(alg, prior, cap)
    curves = []
    for i in range(prior.n):
        cells = disc.cell_of(table.values[:, i])
        mass = np.bincount(cells, weights=table.weights, minlength=disc.size)
        served = np.bincount(cells, weights=table.weights * table.served[:, i], minlength=disc.size)
        present = mass > 0
        raw = np.divide(served, mass, out=np.zeros(disc.size), where=present)
        values = np.clip(fill_absent(raw, present), 0.0, 1.0)
        curves.append(InterimCurve(i, disc, values, mass, present, Provenance(CurveSource.EXACT), raw=raw))
    return tuple(curves)


def hoeffding_samples(epsilon: float, delta: float, n: int) -> int:
    """Per-cell sample count giving failure probability at most epsilon*delta/n."""
    return int(math.ceil(math.log(2 * n / (epsilon * delta)) / (2 * epsilon ** 2)))


@dataclass(frozen=True)
class SamplingConfig:
    epsilon: float
    samples: int
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise InvalidInstance(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.samples < 1:
            raise InvalidInstance(f"sample count must be >= 1, got {self.samples}")
        if self.seed < 0:
            raise InvalidInstance(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def for_grid(cls, epsilon: float, delta: float, n: int, seed: int = 0) -> "SamplingConfig":
        return cls(epsilon=epsilon, samples=hoeffding_samples(epsilon, delta, n), seed=seed)


def estimate_interim_curve(
    alg: AllocationAlgorithm,
    prior: ProductPrior,
    disc: DiscretizationConfig,
    sampling: SamplingConfig,
    jobs: Optional[int] = None,
) -> Tuple[InterimCurve, ...]:
    """
    Monte Carlo interim curves.

    For each agent i and each cell k with prior mass, draws N profiles with
    v_i conditioned on cell k and counts how often i is served. Draws for
    (i, k, chunk) come from their own keyed stream, so the result does not
    depend on ``jobs``. The returned values are the running maximum of the
    filled raw frequencies.
    """
    # cells without prior mass get no samples; fill_absent covers them below
    masses = [disc.cell_masses(dist) for dist in prior.dists]
    tasks = []
    for i in range(prior.n):
        for k in np.flatnonzero(masses[i] > 0):
            for rep, size in enumerate(chunk_sizes(sampling.samples)):
                tasks.append((i, int(k), rep, size))

    def count(task):
        i, k, rep, size = task
        rng = keyed_generator(sampling.seed, Stream.ESTIMATE, i, k, rep)
        profiles = prior.sample_profiles(rng, size)
        # agent i is conditioned on cell k, the others keep their prior
        profiles[:, i] = draw_in_cells(prior.dists[i], disc, k, k, rng, size)
        return int(alg.serve_batch(profiles, rng)[:, i].sum())

    counts = keyed_map(count, tasks, jobs)
    hits = np.zeros((prior.n, disc.size))
    for (i, k, _, _), c in zip(tasks, counts):
        hits[i, k] += c

    provenance = Provenance(CurveSource.ESTIMATED, sampling.epsilon, sampling.samples, sampling.seed)
    curves = []
    for i in range(prior.n):
        present = masses[i] > 0
        raw = np.where(present, hits[i] / sampling.samples, 0.0)
        # running max: a monotone curve stays within epsilon of the exact one if raw does
        values = np.maximum.accumulate(fill_absent(raw, present))
        curves.append(InterimCurve(i, disc, values, masses[i], present, provenance, raw=raw))
    logger.info(f"Estimated interim curves: {len(tasks)} tasks, N={sampling.samples}, seed={sampling.seed}")
    return tuple(curves)


def interim_curves(
    alg: AllocationAlgorithm,
    prior: ProductPrior,
    disc: DiscretizationConfig,
    exact: bool,
    sampling: Optional[SamplingConfig] = None,
    jobs: Optional[int] = None,
    table: Optional[OutcomeTable] = None,
) -> Tuple[InterimCurve, ...]:
    """Closed form when the algorithm has one, otherwise exact or estimated."""
    closed = closed_form_curves(alg, prior, disc)
    if closed is not None:
        return closed
    if exact:
        return exact_interim_curve(alg, prior, disc, table=table)
    if sampling is None:
        raise IncompatibleMode("estimated curves need a sampling configuration")
    return estimate_interim_curve(alg, prior, disc, sampling, jobs)


CurveArg = Union[InterimCurve, Sequence[InterimCurve]]


def _curve_list(curves: CurveArg) -> List[InterimCurve]:
    return [curves] if isinstance(curves, InterimCurve) else list(curves)


def max_deviation(first: CurveArg, second: CurveArg) -> float:
    a, b = _curve_list(first), _curve_list(second)
    if len(a) != len(b):
        raise GridMismatch(f"{len(a)} curves against {len(b)}")
    worst = 0.0
    for x, y in zip(a, b):
        if x.disc != y.disc or x.values.shape != y.values.shape:
            raise GridMismatch(f"agent {x.agent}: grids {x.disc} and {y.disc} differ")
        worst = max(worst, float(np.max(np.abs(x.values - y.values))))
    return worst


def eps_close(first: CurveArg, second: CurveArg, epsilon: float) -> bool:
    """True iff every entry differs by strictly less than epsilon."""
    return max_deviation(first, second) < epsilon


# ---------------------------------------------------------------------------
# Pool-adjacent-violators monotonization
# ---------------------------------------------------------------------------

def pool_adjacent_violators(raw: np.ndarray, masses: np.ndarray) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """
    Mass-weighted isotonic fit of ``raw`` over the cells with positive mass.

    Returns the pooled values for every cell and the pools as inclusive
    (first, last) cell ranges covering the whole grid. Zero-mass cells join
    the pool on their left (the first pool for leading ones).
    """
    raw = np.asarray(raw, dtype=float)
    masses = np.asarray(masses, dtype=float)
    idx = np.flatnonzero(masses > 0)
    if idx.size == 0:
        raise ZeroMassInterval("cannot pool a curve without any cell mass")
    fit = isotonic_regression(raw[idx], weights=masses[idx], increasing=True)
    starts = [int(idx[b]) for b in fit.blocks[:-1]]
    starts[0] = 0
    ends = [s - 1 for s in starts[1:]] + [raw.size - 1]
    pooled = np.empty(raw.size)
    pools = []
    for first, last, b in zip(starts, ends, fit.blocks[:-1]):
        pooled[first:last + 1] = fit.x[b]
        pools.append((first, last))
    return pooled, pools


class MonotonizedAlgorithm(AllocationAlgorithm):
    """
    Resample each reported value within its pooled cell, then run the wrapped algorithm.

    Resampling within pools preserves every marginal, so agent i's interim
    allocation at v_i is the mass-weighted average of the wrapped curve over
    the pool containing v_i.
    """

    deterministic = False

    def __init__(
        self,
        wrapped: AllocationAlgorithm,
        prior: ProductPrior,
        disc: DiscretizationConfig,
        pools: Sequence[Sequence[Tuple[int, int]]],
        curves: Sequence[InterimCurve],
    ):
        self.wrapped = wrapped
        self.prior = prior
        self.disc = disc
        self.pools = [list(p) for p in pools]
        self.curves = tuple(curves)
        self.name = f"pava({wrapped.name})"
        self._pool_of = []
        for agent_pools in self.pools:
            lookup = np.empty(disc.size, dtype=np.int64)
            for p, (first, last) in enumerate(agent_pools):
                lookup[first:last + 1] = p
            self._pool_of.append(lookup)

    def pool_range(self, agent: int, value: float) -> Tuple[int, int]:
        return self.pools[agent][self._pool_of[agent][self.disc.cell_of(value)]]

    def resample(self, values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        values = np.array(values, dtype=float, ndmin=2)
        out = values.copy()
        for i, dist in enumerate(self.prior.dists):
            pool_ids = self._pool_of[i][self.disc.cell_of(values[:, i])]
            for p in np.unique(pool_ids):
                rows = pool_ids == p
                first, last = self.pools[i][p]
                out[rows, i] = draw_in_cells(dist, self.disc, first, last, rng, int(rows.sum()))
        return out

    def serve(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> ServiceOutcome:
        if rng is None:
            raise InvalidInstance("pooled resampling needs a random generator")
        return self.wrapped.serve(self.resample(as_values(v), rng)[0], rng)

    def serve_batch(self, values, rng=None):
        if rng is None:
            raise InvalidInstance("pooled resampling needs a random generator")
        return self.wrapped.serve_batch(self.resample(values, rng), rng)

    def outcome_distribution(self, v: ProfileLike) -> List[Tuple[ServiceOutcome, float]]:
        if not self.prior.is_discrete:
            raise IncompatibleMode("pooled outcome laws are enumerable only for discrete priors")
        values = as_values(v)
        per_agent = [
            atoms_in_cells(dist, self.disc, *self.pool_range(i, values[i]))
            for i, dist in enumerate(self.prior.dists)
        ]
        law: Dict[ServiceOutcome, float] = defaultdict(float)
        for combo in itertools.product(*per_agent):
            prob = math.prod(p for _, p in combo)
            profile = np.array([x for x, _ in combo])
            for served, q in self.wrapped.outcome_distribution(profile):
                law[served] += prob * q
        return sorted(law.items(), key=lambda item: sorted(item[0]))


def pava_monotonize(
    alg: AllocationAlgorithm,
    prior: ProductPrior,
    disc: DiscretizationConfig,
    raw_curves: Sequence[InterimCurve],
) -> MonotonizedAlgorithm:
    pools, pooled_curves = [], []
    for curve in raw_curves:
        raw = curve.raw if curve.raw is not None else curve.values
        pooled, agent_pools = pool_adjacent_violators(raw, curve.masses)
        provenance = replace(curve.provenance, source=CurveSource.POOLED)
        pooled_curves.append(InterimCurve(curve.agent, disc, pooled, curve.masses, curve.present, provenance, raw=raw))
        pools.append(agent_pools)
        if len(agent_pools) < int(curve.present.sum()):
            logger.debug(f"Agent {curve.agent}: pooled {int(curve.present.sum())} cells into {len(agent_pools)}")
    return MonotonizedAlgorithm(alg, prior, disc, pools, pooled_curves)


# ---------------------------------------------------------------------------
# Blatant monotonization
# ---------------------------------------------------------------------------

def blatant_gamma(epsilon: float, delta: float, v_hi: float = 1.0) -> float:
    return 2 * epsilon * v_hi / delta


def blatant_service_probability(disc: DiscretizationConfig, values) -> np.ndarray:
    """min(1, k*delta/v_hi) for the cell k holding each value; 0 on the zero cell."""
    cells = np.asarray(disc.cell_of(values))
    return np.minimum(1.0, cells * disc.delta / disc.v_hi)


class BlatantMonotonizedAlgorithm(AllocationAlgorithm):
    """
    With probability 1 - gamma run the base algorithm; otherwise pick one agent
    uniformly and serve it alone with probability min(1, k*delta/v_hi).
    """

    deterministic = False

    def __init__(self, base: AllocationAlgorithm, disc: DiscretizationConfig, gamma: float):
        if not 0 <= gamma <= 1:
            raise GammaOutOfRange(f"gamma must lie in [0, 1], got {gamma}")
        self.base = base
        self.disc = disc
        self.gamma = float(gamma)
        self.name = f"blatant({base.name})"

    def serve(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> ServiceOutcome:
        if self.gamma == 0:
            return self.base.serve(v, rng)
        if rng is None:
            raise InvalidInstance("blatant monotonization needs a random generator")
        values = as_values(v)
        if rng.random() < 1 - self.gamma:
            return self.base.serve(values, rng)
        agent = int(rng.integers(values.size))
        if rng.random() < float(blatant_service_probability(self.disc, values[agent])):
            return frozenset([agent])
        return frozenset()

    def serve_batch(self, values, rng=None):
        if self.gamma == 0:
            return self.base.serve_batch(values, rng)
        if rng is None:
            raise InvalidInstance("blatant monotonization needs a random generator")
        values = np.asarray(values, dtype=float)
        rows, n = values.shape
        use_base = rng.random(rows) < 1 - self.gamma
        out = np.zeros(values.shape, dtype=bool)
        if use_base.any():
            out[use_base] = self.base.serve_batch(values[use_base], rng)
        others = np.flatnonzero(~use_base)
        agents = rng.integers(n, size=others.size)
        hit = rng.random(others.size) < blatant_service_probability(self.disc, values[others, agents])
        out[others[hit], agents[hit]] = True
        return out

    def outcome_distribution(self, v: ProfileLike) -> List[Tuple[ServiceOutcome, float]]:
        values = as_values(v)
        law: Dict[ServiceOutcome, float] = defaultdict(float)
        if self.gamma < 1:
            for served, q in self.base.outcome_distribution(values):
                law[served] += (1 - self.gamma) * q
        if self.gamma > 0:
            share = self.gamma / values.size
            for i in range(values.size):
                q = float(blatant_service_probability(self.disc, values[i]))
                law[frozenset([i])] += share * q
                law[frozenset()] += share * (1 - q)
        return sorted(((s, p) for s, p in law.items() if p > 0), key=lambda item: sorted(item[0]))


def blatant_monotonize(alg_bar: AllocationAlgorithm, disc: DiscretizationConfig, gamma: float) -> BlatantMonotonizedAlgorithm:
    return BlatantMonotonizedAlgorithm(alg_bar, disc, gamma)


def blatant_interim_curve(curve: InterimCurve, n: int, gamma: float, per_agent: bool = True) -> InterimCurve:
    """
    Corrected curve (1 - gamma) * x + share * min(1, k*delta/v_hi).

    ``share`` is gamma/n for the algorithm as run (one agent picked uniformly)
    and gamma for the reading that omits the 1/n factor.
    """
    if not 0 <= gamma <= 1:
        raise GammaOutOfRange(f"gamma must lie in [0, 1], got {gamma}")
    disc = curve.disc
    correction = np.minimum(1.0, np.arange(disc.size) * disc.delta / disc.v_hi)
    share = gamma / n if per_agent else gamma
    values = np.clip((1 - gamma) * curve.values + share * correction, 0.0, 1.0)
    return curve.with_values(values, replace(curve.provenance, source=CurveSource.BLATANT))


# ---------------------------------------------------------------------------
# Myerson payments
# ---------------------------------------------------------------------------

def _require_monotone(curve: InterimCurve) -> None:
    decrease = curve.first_decrease()
    if decrease is not None:
        k, drop = decrease
        raise NonMonotoneCurve(f"curve of agent {curve.agent} drops by {drop:.6g} at cell {k}")


def truncated_payments(curve: InterimCurve, values, t: float) -> np.ndarray:
    """v*x(v) - integral of x over [t, v] where v >= t, else 0; vectorized over values."""
    _require_monotone(curve)
    values = np.asarray(values, dtype=float)
    lower = float(curve.antiderivative(t)) if t > 0 else 0.0
    pay = values * curve.at(values) - (curve.antiderivative(values) - lower)
    return np.where(values >= t, np.maximum(pay, 0.0), 0.0)


def truncated_interim_payment(curve: InterimCurve, v: float, t: float) -> float:
    return float(truncated_payments(curve, np.array([v]), t)[0])


def sampled_payments(curve: InterimCurve, values, t: float, rng: np.random.Generator) -> np.ndarray:
    """
    Unbiased payment draws: v*x(v) - (v - t)*x(Y) with Y uniform on [t, v].

    Each draw is at least t*x(v) >= 0 because x is nondecreasing and Y <= v.
    """
    _require_monotone(curve)
    values = np.asarray(values, dtype=float)
    span = np.maximum(values - t, 0.0)
    y = t + span * rng.random(values.shape)
    pay = values * curve.at(values) - span * curve.at(y)
    return np.where(values >= t, np.maximum(pay, 0.0), 0.0)


def sampled_payment(curve: InterimCurve, v: float, t: float, rng: np.random.Generator) -> float:
    return float(sampled_payments(curve, np.array([v]), t, rng)[0])


def expected_truncated_payment(curve: InterimCurve, dist: ValueDistribution, t: float) -> float:
    """E over v ~ dist of the truncated payment: atom sums, or per-cell closed forms/quadrature."""
    _require_monotone(curve)
    if isinstance(dist, DiscreteAtoms):
        return float(dist.probs @ truncated_payments(curve, dist.values, t))
    disc = curve.disc
    total = 0.0
    for k in range(1, disc.size):
        x = float(curve.values[k])
        lo, hi = max((k - 1) * disc.delta, t), k * disc.delta
        if x == 0 or hi <= lo:
            continue
        total += x * (dist.partial_mean(lo, hi) - dist.survival_integral(lo, hi))
    return max(total, 0.0)
