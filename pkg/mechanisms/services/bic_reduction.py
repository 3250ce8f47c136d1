"""
Bayesian cost-recovering reductions.

Both selectors truncate the base algorithm's served set at a threshold T and
charge Myerson payments of the truncated interim curve. The log-h selector
tries T = v_min * 2^j; the log-n selector sets T to the rounded-up average
cost per served agent of the previous level. Each stops at the first level
whose expected revenue covers expected cost plus the slack eps0.
"""

import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mechanisms.exceptions import InvalidInstance, ZeroInterimServed
from .core_model import (
    AllocationAlgorithm,
    CostFunction,
    MechanismResult,
    OutcomeTable,
    ProductPrior,
    ProfileLike,
    ServiceOutcome,
    as_values,
)
from .interim_engine import (
    InterimCurve,
    expected_truncated_payment,
    sampled_payments,
    truncated_payments,
)
from .mechanisms import BAYESIAN, Mechanism

logger = logging.getLogger(__name__)

LOG_H = "log_h"
LOG_N = "log_n"
GRID_TOLERANCE = 1e-9
TIE_TOLERANCE = 1e-12


class ReductionMode(str, enum.Enum):
    EXACT = "exact"
    SAMPLED = "sampled"


class PaymentRule(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class ScheduleRow:
    j: int
    threshold: float
    expected_cost: float
    expected_revenue: float
    expected_served: float
    slack: float
    passed: bool


@dataclass
class ThresholdSchedule:
    selector: str
    mode: ReductionMode
    slack: float
    rows: List[ScheduleRow] = field(default_factory=list)
    chosen_k: Optional[int] = None
    cost_samples: int = 0
    seed: Optional[int] = None

    @property
    def chosen(self) -> ScheduleRow:
        return self.rows[self.chosen_k]

    @property
    def threshold(self) -> float:
        return self.chosen.threshold

    @property
    def iterations(self) -> int:
        return len(self.rows)


def default_slack(mode: ReductionMode, epsilon: float, n: int, v_max: float) -> float:
    """2*eps*n in [0, 1] units, scaled to native units; zero in exact mode."""
    if mode == ReductionMode.EXACT:
        return 0.0
    return 2 * epsilon * n * v_max


def round_up_to_grid(x: float, delta: float) -> float:
    """Smallest multiple of delta strictly larger than x."""
    return (math.floor(x / delta + GRID_TOLERANCE) + 1) * delta


def expected_cost_at_threshold(table: OutcomeTable, cost: CostFunction, t: float) -> float:
    return table.expected_cost(cost, t)


def expected_revenue_at_threshold(curves: Sequence[InterimCurve], prior: ProductPrior, t: float) -> float:
    """Sum over agents of E[p_i(v_i)] for the payment truncated at t; identical (marginal, curve) pairs are evaluated once."""
    cache: Dict[Tuple, float] = {}
    total = 0.0
    for curve, dist in zip(curves, prior.dists):
        key = (dist, curve.key())
        if key not in cache:
            cache[key] = expected_truncated_payment(curve, dist, t)
        total += cache[key]
    return total


def _row(j, t, table, cost, curves, prior, slack) -> ScheduleRow:
    expected_cost = expected_cost_at_threshold(table, cost, t)
    revenue = expected_revenue_at_threshold(curves, prior, t)
    row_slack = 0.0 if table.empty_at(t) else slack
    return ScheduleRow(
        j=j,
        threshold=float(t),
        expected_cost=expected_cost,
        expected_revenue=revenue,
        expected_served=table.expected_size(t),
        slack=row_slack,
        passed=revenue >= expected_cost + row_slack,
    )


def _log_row(schedule: ThresholdSchedule, row: ScheduleRow) -> None:
    logger.info(
        f"{schedule.selector} j={row.j} t={row.threshold:.6g} cost={row.expected_cost:.6g} "
        f"revenue={row.expected_revenue:.6g} slack={row.slack:.3g} passed={row.passed}"
    )


def select_threshold_log_h(
    prior: ProductPrior,
    cost: CostFunction,
    curves: Sequence[InterimCurve],
    table: OutcomeTable,
    slack: float = 0.0,
) -> ThresholdSchedule:
    """Try t = v_min * 2^j for j = 0..1+floor(log2 h); the last level always serves nobody."""
    mode = ReductionMode.EXACT if table.exact else ReductionMode.SAMPLED
    schedule = ThresholdSchedule(LOG_H, mode, slack, cost_samples=table.samples, seed=table.seed)
    # v_min * 2^last exceeds v_max, so the last level serves nobody and costs nothing
    last = 1 + int(math.floor(math.log2(prior.h) + 1e-12))
    for j in range(last + 1):
        t = prior.v_min * 2.0 ** j
        # no slack on the empty level: it recovers exactly zero
        row = _row(j, t, table, cost, curves, prior, slack if j < last else 0.0)
        schedule.rows.append(row)
        _log_row(schedule, row)
        if row.passed:
            schedule.chosen_k = j
            break
    return schedule


def max_log_n_rows(prior: ProductPrior, delta: float) -> int:
    return math.ceil((prior.v_max - prior.v_min) / delta) + 2


def select_threshold_log_n(
    prior: ProductPrior,
    cost: CostFunction,
    curves: Sequence[InterimCurve],
    table: OutcomeTable,
    delta: float,
    slack: float = 0.0,
) -> ThresholdSchedule:
    """
    Adaptive thresholds t_j = ceil(E[C(S_{j-1})] / E[|S_{j-1}|])_delta from t_0 = 0.

    A first threshold at or below v_min is raised to the largest grid point
    not above v_min: every such threshold serves the same agents and revenue
    only grows with t. From j = 2 on, t_j is at least t_{j-1} + delta, so
    every later threshold lies above v_min. The schedule has at most
    ceil((v_max - v_min) / delta) + 2 rows; if the previous level is empty in
    expectation, or only the last row is left, a final row above v_max
    (nobody served, no slack) ends it.
    """
    mode = ReductionMode.EXACT if table.exact else ReductionMode.SAMPLED
    schedule = ThresholdSchedule(LOG_N, mode, slack, cost_samples=table.samples, seed=table.seed)
    cap = max_log_n_rows(prior, delta)
    floor_grid = math.floor(prior.v_min / delta + GRID_TOLERANCE) * delta
    t = 0.0
    for j in range(cap):
        if j > 0:
            previous = schedule.rows[-1]
            if previous.expected_served <= 0:
                break
            # average cost per served agent, rounded strictly up to the grid
            t = round_up_to_grid(previous.expected_cost / previous.expected_served, delta)
            if j == 1 and t <= floor_grid:
                t = floor_grid
            if j >= 2:
                t = max(t, previous.threshold + delta)
        row = _row(j, t, table, cost, curves, prior, slack)
        if j == cap - 1 and not row.passed:
            # out of rows: the fallback takes the last slot
            logger.info(f"log_n cap of {cap} rows reached at t={t:.6g}")
            break
        schedule.rows.append(row)
        _log_row(schedule, row)
        if row.passed:
            schedule.chosen_k = j
            return schedule
    fallback = _row(len(schedule.rows), round_up_to_grid(prior.v_max, delta), table, cost, curves, prior, 0.0)
    schedule.rows.append(fallback)
    _log_row(schedule, fallback)
    schedule.chosen_k = fallback.j
    return schedule


class ReducedMechanism(Mechanism):
    """
    Serve S_T(v) = {i in S(v) : v_i >= T}; charge p_i(v_i)/x_i(v_i).

    ``p_i`` is the Myerson payment of the base curve truncated at T, either in
    closed form or as the unbiased sampled estimate. Dividing by x_i(v_i)
    makes the expected charge, over everyone else's values, equal p_i(v_i).
    """

    name = "reduced"
    guarantee = BAYESIAN

    def __init__(
        self,
        base: AllocationAlgorithm,
        curves: Sequence[InterimCurve],
        schedule: ThresholdSchedule,
        payment: PaymentRule = PaymentRule.CLOSED_FORM,
    ):
        super().__init__(base)
        self.curves = tuple(curves)
        self.schedule = schedule
        self.threshold = schedule.threshold
        self.payment = PaymentRule(payment)
        self.name = f"reduced_{schedule.selector}({base.name})"
        if self.payment == PaymentRule.SAMPLED:
            self.deterministic = False
        groups: Dict[Tuple, List[int]] = defaultdict(list)
        for curve in self.curves:
            groups[curve.key()].append(curve.agent)
        self._groups = list(groups.values())

    def _charges(self, served: np.ndarray, values: np.ndarray, rng: Optional[np.random.Generator], expected: bool) -> np.ndarray:
        charges = np.zeros(values.shape)
        for agents in self._groups:
            curve = self.curves[agents[0]]
            cols = values[:, agents]
            x = curve.at(cols)
            mask = served[:, agents]
            if np.any(mask & (x <= 0)):
                row, col = np.argwhere(mask & (x <= 0))[0]
                raise ZeroInterimServed(
                    f"agent {agents[col]} served at value {cols[row, col]:.6g} with zero interim allocation"
                )
            if self.payment == PaymentRule.SAMPLED and not expected:
                if rng is None:
                    raise InvalidInstance("sampled payments need a random generator")
                pay = sampled_payments(curve, cols, self.threshold, rng)
            else:
                pay = truncated_payments(curve, cols, self.threshold)
            charges[:, agents] = np.where(mask, pay / np.where(mask, x, 1.0), 0.0)
        return charges

    def served_from(self, served: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.asarray(served, dtype=bool) & (values >= self.threshold)

    def run_batch(self, values, rng=None):
        values = np.asarray(values, dtype=float)
        served = self.served_from(self.base.serve_batch(values, rng), values)
        return served, self._charges(served, values, rng, expected=False)

    def run(self, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> MechanismResult:
        served, payments = self.run_batch(as_values(v)[None, :], rng)
        return MechanismResult(frozenset(int(i) for i in np.flatnonzero(served[0])), tuple(payments[0]))

    def result_for(self, served: ServiceOutcome, values: np.ndarray) -> MechanismResult:
        """Result for a given base outcome; sampled payments are replaced by their expectation."""
        mask = np.zeros((1, values.size), dtype=bool)
        mask[0, list(served)] = True
        mask = self.served_from(mask, values[None, :])
        payments = self._charges(mask, values[None, :], None, expected=True)
        return MechanismResult(frozenset(int(i) for i in np.flatnonzero(mask[0])), tuple(payments[0]))

    def expected_social_cost(self, table: OutcomeTable, cost: CostFunction) -> float:
        return table.expected_social_cost(cost, self.threshold)


def reduce_log_h(base, prior, cost, curves, table, slack=0.0, payment=PaymentRule.CLOSED_FORM) -> ReducedMechanism:
    schedule = select_threshold_log_h(prior, cost, curves, table, slack)
    return ReducedMechanism(base, curves, schedule, payment)


def reduce_log_n(base, prior, cost, curves, table, delta, slack=0.0, payment=PaymentRule.CLOSED_FORM) -> ReducedMechanism:
    schedule = select_threshold_log_n(prior, cost, curves, table, delta, slack)
    return ReducedMechanism(base, curves, schedule, payment)


@dataclass
class CombinedReduction:
    chosen: ReducedMechanism
    log_h: ReducedMechanism
    log_n: ReducedMechanism
    social_cost_log_h: float
    social_cost_log_n: float


def combine_reductions(
    base: AllocationAlgorithm,
    prior: ProductPrior,
    cost: CostFunction,
    curves: Sequence[InterimCurve],
    table: OutcomeTable,
    delta: float,
    slack: float = 0.0,
    payment: PaymentRule = PaymentRule.CLOSED_FORM,
) -> CombinedReduction:
    """
    Build both reductions and keep the one with the smaller expected social cost.

    Equal social costs go to the lower threshold, and equal thresholds to the
    log-h variant.
    """
    by_h = reduce_log_h(base, prior, cost, curves, table, slack, payment)
    by_n = reduce_log_n(base, prior, cost, curves, table, delta, slack, payment)
    sc_h = by_h.expected_social_cost(table, cost)
    sc_n = by_n.expected_social_cost(table, cost)
    if abs(sc_h - sc_n) <= TIE_TOLERANCE * max(1.0, abs(sc_h)):
        chosen = by_n if by_n.threshold < by_h.threshold else by_h
    else:
        chosen = by_h if sc_h < sc_n else by_n
    logger.info(f"Combined reduction: SC log_h={sc_h:.6g} (T={by_h.threshold:.6g}), "
                f"log_n={sc_n:.6g} (T={by_n.threshold:.6g}); chose {chosen.schedule.selector}")
    return CombinedReduction(chosen, by_h, by_n, sc_h, sc_n)


def reduce_combined(base, prior, cost, curves, table, delta, slack=0.0, payment=PaymentRule.CLOSED_FORM) -> ReducedMechanism:
    return combine_reductions(base, prior, cost, curves, table, delta, slack, payment).chosen


def run_reduced_mechanism(mech: ReducedMechanism, v: ProfileLike, rng: Optional[np.random.Generator] = None) -> MechanismResult:
    return mech.run(v, rng)
