"""
Experiment pipeline behind the management commands.

config file -> ExperimentConfig -> instance (prior, cost, base algorithm)
-> mechanism for the chosen reduction -> summary, schedule and profile rows.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from django.conf import settings
from pydantic import ValidationError

from mechanisms.exceptions import ConfigError, IncompatibleMode, NotDiscrete, SupportTooLarge
from mechanisms.schemas import (
    AlgorithmSpec,
    ExperimentConfig,
    InstanceSpec,
    RunSummary,
)
from mechanisms.utils import config_hash, format_number, harmonic_number
from .algorithms import (
    BernoulliServe,
    FixedThreshold,
    ServeAll,
    ServeNone,
    SocialCostMinimizer,
    UniqueArgmax,
)
from .audit import check_cost_recovery, social_cost_ratio
from .bic_reduction import (
    LOG_H,
    LOG_N,
    PaymentRule,
    ReducedMechanism,
    ReductionMode,
    combine_reductions,
    default_slack,
    reduce_log_h,
    reduce_log_n,
)
from .core_model import (
    Additive,
    AllocationAlgorithm,
    CardinalityConcave,
    CostFunction,
    DiscreteAtoms,
    EqualRevenue,
    ExplicitTable,
    OutcomeTable,
    ProductPrior,
    PublicExcludable,
    UniformContinuous,
    ValueDistribution,
    discrete_equal_revenue,
    enumeration_cap,
)
from .expost_reduction import SupportList
from .interim_engine import (
    DiscretizationConfig,
    InterimCurve,
    SamplingConfig,
    closed_form_curves,
    interim_curves,
    pava_monotonize,
)
from .mechanisms import (
    FreeServiceMechanism,
    Mechanism,
    PostedPriceMechanism,
    PowersOfTwoMechanism,
    SupportListMechanism,
    ZeroOneMechanism,
)
from .randomness import Stream, keyed_generator

logger = logging.getLogger(__name__)

DEFAULT_GRID_DIVISIONS = 32
BAYESIAN_KINDS = ("log_h", "log_n", "combined")
SWEEP_KEYS = ("h", "n", "delta", "epsilon")


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def _node_line(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Tuple[Optional[int], str]:
    """Line of the deepest YAML node on ``loc`` and the dotted field path through it."""
    node, line, parts = root, None, []
    if root is not None:
        line = root.start_mark.line + 1
    for position, key in enumerate(loc):
        child = None
        if isinstance(node, yaml.MappingNode):
            child = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        if child is not None:
            node, line = child, child.start_mark.line + 1
            parts.append(str(key))
        elif position == len(loc) - 1:
            parts.append(str(key))
    return line, ".".join(parts)


def validation_messages(error: ValidationError, root: Optional[yaml.Node]) -> List[str]:
    messages = []
    for item in error.errors():
        line, path = _node_line(root, item["loc"])
        prefix = f"line {line}: " if line is not None else ""
        messages.append(f"{prefix}field {path or '<root>'}: {item['msg']}")
    return messages


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}malformed YAML: {getattr(e, 'problem', e)}") from e
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with instance/reduction/mode/output sections")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("\n".join(validation_messages(e, root))) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    config = parse_config(text)
    logger.debug(f"Loaded config {path} ({config.reduction.kind}, {config.mode.kind} mode)")
    return config


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, mode: Optional[str] = None) -> ExperimentConfig:
    """Apply --seed / --mode on top of the file; the result is re-validated."""
    data = config.model_dump()
    if seed is not None:
        data["mode"]["seed"] = seed
    if mode is not None:
        data["mode"]["kind"] = mode
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("\n".join(validation_messages(e, None))) from e


# ---------------------------------------------------------------------------
# Instance builders
# ---------------------------------------------------------------------------

def build_distribution(spec) -> ValueDistribution:
    if spec.kind == "discrete":
        return DiscreteAtoms(tuple((float(v), float(p)) for v, p in spec.atoms))
    if spec.kind == "uniform":
        return UniformContinuous(spec.lo, spec.hi)
    if spec.kind == "equal_revenue":
        return EqualRevenue(spec.h, spec.scale)
    return discrete_equal_revenue(spec.h, spec.scale)


def build_prior(spec) -> ProductPrior:
    return ProductPrior(tuple(build_distribution(d) for d in spec.all_distributions()))


def build_cost(spec, n: int) -> CostFunction:
    if spec.kind == "public_excludable":
        return PublicExcludable(spec.c)
    if spec.kind == "additive":
        if len(spec.costs) != n:
            raise ConfigError(f"field instance.cost.costs: expected {n} entries, got {len(spec.costs)}")
        return Additive(tuple(spec.costs))
    if spec.kind == "cardinality":
        if len(spec.g) != n + 1:
            raise ConfigError(f"field instance.cost.g: expected {n + 1} entries g(0..{n}), got {len(spec.g)}")
        return CardinalityConcave(tuple(spec.g))
    if len(spec.values) != 2 ** n:
        raise ConfigError(f"field instance.cost.values: expected {2 ** n} entries, got {len(spec.values)}")
    return ExplicitTable(tuple(spec.values))


def build_algorithm(spec: AlgorithmSpec, cost: CostFunction, n: int) -> AllocationAlgorithm:
    if spec.kind == "serve_all":
        return ServeAll()
    if spec.kind == "serve_none":
        return ServeNone()
    if spec.kind == "argmax":
        return UniqueArgmax()
    if spec.kind == "fixed_threshold":
        return FixedThreshold(spec.threshold)
    if spec.kind == "cost_minimizer":
        return SocialCostMinimizer(cost, n)
    return BernoulliServe(spec.p)


@dataclass
class Instance:
    prior: ProductPrior
    cost: CostFunction
    base: AllocationAlgorithm


def build_instance(spec: InstanceSpec) -> Instance:
    prior = build_prior(spec.prior)
    cost = build_cost(spec.cost, prior.n)
    return Instance(prior, cost, build_algorithm(spec.algorithm, cost, prior.n))


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

@dataclass
class Experiment:
    """Everything a run or an audit needs, built once from a config."""
    config: ExperimentConfig
    instance: Instance
    disc: DiscretizationConfig
    mode: ReductionMode
    table: OutcomeTable
    mechanism: Mechanism
    curves: Optional[Tuple[InterimCurve, ...]] = None
    slack: Optional[float] = None
    selector_costs: Dict[str, float] = field(default_factory=dict)
    jobs: Optional[int] = None

    @property
    def prior(self) -> ProductPrior:
        return self.instance.prior

    @property
    def cost(self) -> CostFunction:
        return self.instance.cost

    @property
    def base(self) -> AllocationAlgorithm:
        return self.instance.base

    @property
    def seed(self) -> int:
        return self.config.mode.seed


def require_mode(prior: ProductPrior, mode: ReductionMode) -> None:
    if mode != ReductionMode.EXACT:
        return
    if not prior.is_discrete:
        raise NotDiscrete("exact mode needs every marginal to be a discrete atom list; use --mode sampled")
    cap = enumeration_cap()
    if prior.support_size() > cap:
        raise SupportTooLarge(f"exact mode would enumerate {prior.support_size()} profiles (cap {cap})")


def _require_values_in(prior: ProductPrior, allowed, what: str) -> None:
    for i, dist in enumerate(prior.dists):
        if not isinstance(dist, DiscreteAtoms):
            raise IncompatibleMode(f"{what} needs discrete marginals; agent {i} is {type(dist).__name__}")
        outside = [float(x) for x in dist.values if not allowed(float(x))]
        if outside:
            raise IncompatibleMode(f"{what}: agent {i} has values {outside} outside the accepted set")


def base_curves(base, prior, disc, mode, config, jobs) -> Tuple[InterimCurve, ...]:
    closed = closed_form_curves(base, prior, disc)
    if closed is not None:
        return closed
    sampling = None
    if mode == ReductionMode.SAMPLED:
        sampling = SamplingConfig.for_grid(config.reduction.epsilon, disc.delta, prior.n, config.mode.seed)
    return interim_curves(base, prior, disc, mode == ReductionMode.EXACT, sampling, jobs)


def build_experiment(config: ExperimentConfig, jobs: Optional[int] = None) -> Experiment:
    instance = build_instance(config.instance)
    prior, cost, base = instance.prior, instance.cost, instance.base
    mode = ReductionMode(config.mode.kind)
    require_mode(prior, mode)
    reduction = config.reduction
    delta = reduction.delta if reduction.delta is not None else prior.v_max / DEFAULT_GRID_DIVISIONS
    disc = DiscretizationConfig(delta, prior.v_max)
    seed = config.mode.seed
    logger.info(f"Building {reduction.kind} over {base.name}: n={prior.n}, h={prior.h:.6g}, delta={delta:.6g}, {mode.value} mode")

    curves = slack = None
    selector_costs: Dict[str, float] = {}
    if reduction.kind in BAYESIAN_KINDS:
        curves = base_curves(base, prior, disc, mode, config, jobs)
        decreasing = [c.agent for c in curves if not c.monotone]
        if reduction.monotonize == "pava" or (reduction.monotonize == "auto" and decreasing):
            if decreasing:
                logger.info(f"Interim curves of agents {decreasing} decrease; pooling adjacent violators")
            # the pooled algorithm drives the reduction; the instance keeps the original for comparisons
            base = pava_monotonize(base, prior, disc, curves)
            curves = base.curves
        table = OutcomeTable.build(base, prior, mode == ReductionMode.EXACT, config.mode.cost_samples, seed, jobs)
        if reduction.epsilon_zero is not None:
            slack = reduction.epsilon_zero
        else:
            slack = default_slack(mode, reduction.epsilon, prior.n, prior.v_max)
        payment = PaymentRule.SAMPLED if reduction.payment == "sampled" else PaymentRule.CLOSED_FORM
        if reduction.kind == "log_h":
            mechanism = reduce_log_h(base, prior, cost, curves, table, slack, payment)
        elif reduction.kind == "log_n":
            mechanism = reduce_log_n(base, prior, cost, curves, table, delta, slack, payment)
        else:
            combined = combine_reductions(base, prior, cost, curves, table, delta, slack, payment)
            mechanism = combined.chosen
            selector_costs = {LOG_H: combined.social_cost_log_h, LOG_N: combined.social_cost_log_n}
    else:
        table = OutcomeTable.build(base, prior, mode == ReductionMode.EXACT, config.mode.cost_samples, seed, jobs)
        if reduction.kind == "expost_01":
            _require_values_in(prior, lambda x: x in (0.0, 1.0), "the 0/1 reduction")
            mechanism = ZeroOneMechanism(base, cost)
        elif reduction.kind == "expost_pow2":
            support = SupportList.powers_of_two(prior.h, prior.v_min)
            _require_values_in(prior, support.contains, "the powers-of-two reduction")
            mechanism = PowersOfTwoMechanism(base, cost, prior.h, prior.v_min)
        elif reduction.kind == "expost_support":
            support = SupportList(tuple(reduction.support))
            _require_values_in(prior, support.contains, "the support-list reduction")
            mechanism = SupportListMechanism(base, cost, support)
        elif reduction.kind == "posted_price":
            mechanism = PostedPriceMechanism(base, reduction.price)
        else:
            mechanism = FreeServiceMechanism(base)
    return Experiment(config, instance, disc, mode, table, mechanism, curves, slack, selector_costs, jobs)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

PROFILE_HEADER = ("row", "values", "served", "payments", "revenue", "cost", "social_cost", "base_served", "base_social_cost")
SCHEDULE_HEADER = ("selector", "j", "threshold", "expected_cost", "expected_revenue", "expected_served", "slack", "passed", "chosen")


@dataclass
class RunResult:
    experiment: Experiment
    summary: RunSummary
    schedule_rows: List[Tuple] = field(default_factory=list)
    profile_rows: List[Tuple] = field(default_factory=list)


def schedule_rows(mechanism: Mechanism) -> List[Tuple]:
    if not isinstance(mechanism, ReducedMechanism):
        return []
    schedule = mechanism.schedule
    return [
        (schedule.selector, row.j, row.threshold, row.expected_cost, row.expected_revenue,
         row.expected_served, row.slack, row.passed, k == schedule.chosen_k)
        for k, row in enumerate(schedule.rows)
    ]


def _members(mask: np.ndarray) -> str:
    return ";".join(str(i) for i in np.flatnonzero(mask))


def profile_rows(experiment: Experiment, count: int) -> List[Tuple]:
    """Mechanism and base outcomes on ``count`` keyed profiles drawn from the prior."""
    prior, cost, seed = experiment.prior, experiment.cost, experiment.seed
    profiles = prior.sample_profiles(keyed_generator(seed, Stream.PRIOR, 0), count)
    rows = []
    for r, values in enumerate(profiles):
        served, payments = experiment.mechanism.run_batch(values[None, :], keyed_generator(seed, Stream.MECHANISM, r))
        base_served = experiment.base.serve_batch(values[None, :], keyed_generator(seed, Stream.MECHANISM, r))
        c = float(cost.cost_batch(served)[0])
        sc = c + float(values[~served[0]].sum())
        base_sc = float(cost.cost_batch(base_served)[0]) + float(values[~base_served[0]].sum())
        rows.append((
            r,
            ";".join(format_number(float(x)) for x in values),
            _members(served[0]),
            ";".join(format_number(float(p)) for p in payments[0]),
            float(payments[0].sum()),
            c,
            sc,
            _members(base_served[0]),
            base_sc,
        ))
    return rows


def run_experiment(
    config: ExperimentConfig,
    jobs: Optional[int] = None,
    command: str = "run",
    with_profiles: bool = True,
) -> RunResult:
    experiment = build_experiment(config, jobs)
    prior, cost, mechanism = experiment.prior, experiment.cost, experiment.mechanism
    mode, seed = experiment.mode, experiment.seed
    samples = config.mode.audit_samples

    recovery = check_cost_recovery(mechanism, prior, cost, mode, samples=samples, seed=seed, jobs=jobs)
    comparison = social_cost_ratio(mechanism, experiment.base, prior, cost, mode, samples, seed, jobs)

    schedule = mechanism.schedule if isinstance(mechanism, ReducedMechanism) else None
    curve_source = experiment.curves[0].provenance.label() if experiment.curves else None
    sample_counts = {}
    if mode == ReductionMode.SAMPLED:
        sample_counts = {"cost": config.mode.cost_samples, "audit": samples}
        if experiment.curves and experiment.curves[0].provenance.samples:
            sample_counts["interim_per_cell"] = experiment.curves[0].provenance.samples
    extra: Dict[str, Any] = {
        "guarantee": mechanism.guarantee,
        "mechanism": mechanism.name,
        "base": experiment.base.name,
        "profile_recovery_rate": recovery.measured["profile_recovery_rate"],
        "nonempty_rate": comparison.nonempty_rate,
    }
    if experiment.selector_costs:
        extra["selector_social_costs"] = experiment.selector_costs
    if mode == ReductionMode.SAMPLED:
        extra["social_cost_se"] = comparison.mechanism_se
        extra["base_social_cost_se"] = comparison.base_se

    summary = RunSummary(
        command=command,
        reduction=config.reduction.kind,
        mode=mode.value,
        seed=seed,
        config_hash=config_hash(config.hashed_payload()),
        n=prior.n,
        h=prior.h,
        v_min=prior.v_min,
        v_max=prior.v_max,
        delta=experiment.disc.delta if config.reduction.kind in BAYESIAN_KINDS else None,
        epsilon=config.reduction.epsilon if mode == ReductionMode.SAMPLED else None,
        epsilon_zero=experiment.slack,
        selector=schedule.selector if schedule else None,
        chosen_k=schedule.chosen_k if schedule else None,
        threshold=schedule.threshold if schedule else None,
        expected_cost=recovery.measured["expected_cost"],
        expected_revenue=recovery.measured["expected_revenue"],
        expected_social_cost=comparison.mechanism,
        base_social_cost=comparison.base,
        ratio=comparison.ratio,
        log2_h=math.log2(prior.h),
        harmonic_n=harmonic_number(prior.n),
        curve_source=curve_source,
        samples=sample_counts,
        extra=extra,
    )
    logger.info(
        f"{config.reduction.kind}: E[C]={summary.expected_cost:.6g}, E[rev]={summary.expected_revenue:.6g}, "
        f"E[SC]={summary.expected_social_cost:.6g} vs base {summary.base_social_cost:.6g}"
    )
    return RunResult(
        experiment=experiment,
        summary=summary,
        schedule_rows=schedule_rows(mechanism),
        profile_rows=profile_rows(experiment, config.mode.profile_rows) if with_profiles else [],
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_HEADER = (
    "cell", "h", "n", "delta", "epsilon", "status", "reduction", "selector", "threshold",
    "expected_cost", "expected_revenue", "expected_social_cost", "base_social_cost", "ratio",
    "log2_h", "harmonic_n", "config_hash", "message",
)


def parse_grid(items: Sequence[str]) -> Dict[str, List[float]]:
    """``["h=4,16,64", "n=2,3"]`` -> {"h": [4.0, 16.0, 64.0], "n": [2, 3]}."""
    grid: Dict[str, List[float]] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in SWEEP_KEYS:
            raise ConfigError(f"grid entry {item!r}: expected KEY=V1,V2,... with KEY among {', '.join(SWEEP_KEYS)}")
        if key in grid:
            raise ConfigError(f"grid key {key!r} given twice")
        try:
            values = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"grid entry {item!r}: {e}") from e
        if not values:
            raise ConfigError(f"grid entry {item!r} has no values")
        if key == "n":
            if any(v != int(v) or v < 1 for v in values):
                raise ConfigError(f"grid entry {item!r}: n must be positive integers")
            values = [int(v) for v in values]
        grid[key] = values
    return grid


def _rewrite_h(distributions: List[Dict[str, Any]], h: float) -> int:
    hits = 0
    for d in distributions:
        if d is not None and "h" in d:
            d["h"] = h
            hits += 1
    return hits


def sweep_cell_config(config: ExperimentConfig, cell: Dict[str, float]) -> ExperimentConfig:
    data = config.model_dump()
    prior = data["instance"]["prior"]
    if "h" in cell:
        listed = prior["distributions"] or []
        if not _rewrite_h([prior["distribution"]] + listed, cell["h"]):
            raise ConfigError("grid key h needs a distribution with an 'h' field")
    if "n" in cell:
        if prior["distributions"] is not None:
            raise ConfigError("grid key n needs a shared 'distribution' with 'agents'")
        prior["agents"] = int(cell["n"])
    if "delta" in cell:
        data["reduction"]["delta"] = cell["delta"]
    if "epsilon" in cell:
        data["reduction"]["epsilon"] = cell["epsilon"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"grid cell {cell}: " + "; ".join(validation_messages(e, None))) from e


def sweep_cells(grid: Dict[str, List[float]]) -> List[Dict[str, float]]:
    if not grid:
        return []
    keys = [k for k in SWEEP_KEYS if k in grid]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_sweep(config: ExperimentConfig, grid: Dict[str, List[float]], jobs: Optional[int] = None) -> List[Tuple]:
    """
    One summary row per grid cell, in product order over h, n, delta, epsilon.

    Cells whose instance is incompatible with the mode are marked skipped.
    """
    cells = sweep_cells(grid)
    configs = [sweep_cell_config(config, cell) for cell in cells]
    rows = []
    for index, (cell, cell_config) in enumerate(zip(cells, configs)):
        params = tuple(cell.get(k, "") for k in SWEEP_KEYS)
        try:
            s = run_experiment(cell_config, jobs, command="sweep", with_profiles=False).summary
        except IncompatibleMode as e:
            logger.warning(f"Sweep cell {cell} skipped: {e}")
            rows.append((index,) + params + ("skipped", cell_config.reduction.kind) + ("",) * 10 + (str(e),))
            continue
        rows.append((index,) + params + (
            "completed", s.reduction, s.selector or "", "" if s.threshold is None else s.threshold,
            s.expected_cost, s.expected_revenue, s.expected_social_cost, s.base_social_cost, s.ratio,
            s.log2_h, s.harmonic_n, s.config_hash, "",
        ))
    return rows


def default_output_dir() -> Path:
    return Path(getattr(settings, "COSTSHARE_OUTPUT_DIR", "results"))
