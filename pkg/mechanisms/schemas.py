import json
from typing import Annotated, Any, ClassVar, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from .utils import format_number, round_floats


class StrictSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Instance specs
# ---------------------------------------------------------------------------

class DiscreteDistributionSpec(StrictSchema):
    kind: Literal["discrete"]
    atoms: List[Tuple[float, float]] = Field(..., min_length=1, description="(value, probability) pairs, values increasing")


class UniformDistributionSpec(StrictSchema):
    kind: Literal["uniform"]
    lo: float = Field(..., ge=0)
    hi: PositiveFloat


class EqualRevenueSpec(StrictSchema):
    kind: Literal["equal_revenue"]
    h: float = Field(..., gt=1)
    scale: PositiveFloat = 1.0


class DiscreteEqualRevenueSpec(StrictSchema):
    kind: Literal["discrete_equal_revenue"]
    h: float = Field(..., ge=1)
    scale: PositiveFloat = 1.0


DistributionSpec = Annotated[
    Union[DiscreteDistributionSpec, UniformDistributionSpec, EqualRevenueSpec, DiscreteEqualRevenueSpec],
    Field(discriminator="kind"),
]


class PriorSpec(StrictSchema):
    agents: Optional[PositiveInt] = Field(None, description="Agent count when one distribution is shared by all agents")
    distribution: Optional[DistributionSpec] = None
    distributions: Optional[List[DistributionSpec]] = Field(None, min_length=1)

    @model_validator(mode="after")
    def one_source(self):
        if (self.distribution is None) == (self.distributions is None):
            raise ValueError("give exactly one of 'distribution' (with 'agents') or 'distributions'")
        if self.distribution is not None and self.agents is None:
            raise ValueError("'agents' is required with a shared 'distribution'")
        if self.distributions is not None and self.agents is not None and self.agents != len(self.distributions):
            raise ValueError(f"'agents' is {self.agents} but {len(self.distributions)} distributions are listed")
        return self

    @property
    def n(self) -> int:
        return self.agents if self.distributions is None else len(self.distributions)

    def all_distributions(self) -> List[Any]:
        if self.distributions is not None:
            return list(self.distributions)
        return [self.distribution] * self.agents


class PublicExcludableSpec(StrictSchema):
    kind: Literal["public_excludable"]
    c: float = Field(..., ge=0)


class AdditiveSpec(StrictSchema):
    kind: Literal["additive"]
    costs: List[Annotated[float, Field(ge=0)]]


class CardinalitySpec(StrictSchema):
    kind: Literal["cardinality"]
    g: List[Annotated[float, Field(ge=0)]] = Field(..., description="g(0..n) with g(0) = 0")


class TableSpec(StrictSchema):
    kind: Literal["table"]
    values: List[Annotated[float, Field(ge=0)]] = Field(..., description="C(S) indexed by the bitmask of S")


CostSpec = Annotated[
    Union[PublicExcludableSpec, AdditiveSpec, CardinalitySpec, TableSpec],
    Field(discriminator="kind"),
]


class AlgorithmSpec(StrictSchema):
    kind: Literal["serve_all", "serve_none", "argmax", "fixed_threshold", "cost_minimizer", "bernoulli"]
    threshold: Optional[float] = Field(None, ge=0, description="fixed_threshold only")
    p: Optional[float] = Field(None, ge=0, le=1, description="bernoulli only")

    @model_validator(mode="after")
    def parameters(self):
        if self.kind == "fixed_threshold" and self.threshold is None:
            raise ValueError("fixed_threshold needs 'threshold'")
        if self.kind == "bernoulli" and self.p is None:
            raise ValueError("bernoulli needs 'p'")
        return self


class InstanceSpec(StrictSchema):
    prior: PriorSpec
    cost: CostSpec
    algorithm: AlgorithmSpec


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------

class ReductionSpec(StrictSchema):
    kind: Literal["log_h", "log_n", "combined", "expost_01", "expost_pow2", "expost_support", "posted_price", "free"]
    delta: Optional[PositiveFloat] = Field(None, description="Grid width; defaults to v_max/32")
    epsilon: float = Field(0.1, gt=0, lt=1)
    epsilon_zero: Optional[float] = Field(None, ge=0, description="Stopping-test slack override")
    payment: Literal["closed_form", "sampled"] = "closed_form"
    monotonize: Literal["auto", "none", "pava"] = "auto"
    price: Optional[float] = Field(None, ge=0, description="posted_price only")
    support: Optional[List[PositiveFloat]] = Field(None, min_length=1, description="expost_support only")

    @model_validator(mode="after")
    def kind_parameters(self):
        if self.kind == "posted_price" and self.price is None:
            raise ValueError("posted_price needs 'price'")
        if self.kind == "expost_support" and self.support is None:
            raise ValueError("expost_support needs 'support'")
        return self


class ModeSpec(StrictSchema):
    kind: Literal["exact", "sampled"] = "exact"
    cost_samples: PositiveInt = 20_000
    audit_samples: PositiveInt = 20_000
    profile_rows: PositiveInt = 200
    seed: int = Field(0, ge=0)


class OutputSpec(StrictSchema):
    dir: Optional[str] = None
    prefix: str = ""


class ExperimentConfig(StrictSchema):
    instance: InstanceSpec
    reduction: ReductionSpec
    mode: ModeSpec = Field(default_factory=ModeSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    def hashed_payload(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude={"output"})


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

class AuditReport(BaseModel):
    name: str
    passed: bool
    hard: bool = Field(True, description="False for informational reports that never fail a run")
    measured: Dict[str, Any] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    seed: Optional[int] = None
    samples: Optional[int] = None
    worst_violation: Optional[Dict[str, Any]] = None
    notes: Optional[str] = None
    primary: Optional[str] = Field(None, description="Key of the measured value shown in the CSV summary")

    CSV_HEADER: ClassVar[Tuple[str, ...]] = ("name", "passed", "hard", "key", "value", "worst_violation")

    @property
    def failed(self) -> bool:
        return self.hard and not self.passed

    def to_json(self) -> str:
        return json.dumps(round_floats(self.model_dump()), sort_keys=True, indent=2)

    def csv_row(self) -> Tuple[str, ...]:
        key = self.primary if self.primary in self.measured else next(iter(sorted(self.measured)), "")
        value = self.measured.get(key, "")
        worst = json.dumps(round_floats(self.worst_violation), sort_keys=True) if self.worst_violation else ""
        shown = format_number(value)
        return (self.name, str(self.passed).lower(), str(self.hard).lower(), key, shown, worst)


class RunSummary(BaseModel):
    command: str
    reduction: str
    mode: str
    seed: int
    config_hash: str
    n: int
    h: float
    v_min: float
    v_max: float
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    epsilon_zero: Optional[float] = None
    selector: Optional[str] = None
    chosen_k: Optional[int] = None
    threshold: Optional[float] = None
    expected_cost: float
    expected_revenue: float
    expected_social_cost: float
    base_social_cost: float
    ratio: float
    log2_h: float
    harmonic_n: float
    curve_source: Optional[str] = None
    samples: Dict[str, int] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)
