from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import Field, model_validator

from robustfair.models import (
    AllocationInstance,
    AnyAggregator,
    Direction,
    ExtendedReal,
    FrozenModel,
    GameSpec,
    HolderCertificate,
    SampleComplexityQuery,
    SentimentVector,
    SolveConfig,
    StrategyProfile,
    WeightSet,
    WeightVector,
)


# Result schemas
class BestResponse(FrozenModel):
    """An adversary's optimal weights against a fixed sentiment vector"""
    w: WeightVector
    value: float
    exact: bool = Field(True, description="Closed form or greedy (True) versus iterative (False)")
    converged: bool = True


class DiameterBound(FrozenModel):
    value: float
    upper_bound: bool = Field(False, description="True when value only bounds the diameter from above")


class CoordinateBounds(FrozenModel):
    w_min: float
    w_max: float
    exact: bool = True


class Interval(FrozenModel):
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


class TracePoint(FrozenModel):
    iter: int
    value: float
    gap: Optional[float] = None
    step: float


class SolveReport(FrozenModel):
    """Approximate saddle point returned by the maximin solver"""
    theta: List[float] = Field(..., description="Parameter point, row-major")
    shape: List[int]
    adversary: WeightVector
    value: float
    gap_estimate: float
    iterations: int
    converged: bool
    method: str
    refined: bool = Field(False, description="Replaced by a closed-form utility-space optimum")
    seed: int = 0
    trace: Optional[List[TracePoint]] = None

    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float).reshape(self.shape)


class UtilitySetDescription(FrozenModel):
    """
    Feasible utility set of an allocation instance.

    halfspace: {S >= 0 : sum_i S_i / rates_i <= capacity} (rate 0 pins S_i to 0)
    ellipsoid: {S >= 0 : sum_i S_i / rates_i + S_i^2 / (2 rates_i^2) <= capacity}
    polytope:  convex hull of `vertices`
    """
    kind: Literal["halfspace", "ellipsoid", "polytope"]
    rates: Optional[List[float]] = None
    capacity: Optional[float] = None
    vertices: Optional[List[List[float]]] = None


class StrategicValue(FrozenModel):
    choice_index: Optional[int] = None
    sentiment: SentimentVector
    angel: BestResponse
    value: float
    mixture: Optional[List[float]] = Field(None, description="Daemon mixture over finite points when the hull is enabled")
    solve: Optional[SolveReport] = None


class InterchangeResult(FrozenModel):
    gap: float
    ok: bool
    maxmin: float
    minmax: float
    hull: bool
    iterations: int
    daemon_mixture: List[float]
    angel_weights: WeightVector


class EquilibriumReport(FrozenModel):
    no_deviation: bool
    max_improvement: float
    daemon_choice: SentimentVector
    deviation: Optional[SentimentVector] = None
    angel_payoff: float
    best_angel_payoff: float
    angel_optimal: bool
    grid_points: int


class CertificateSet(FrozenModel):
    tightest: Optional[HolderCertificate] = None
    applicable: List[HolderCertificate] = Field(default_factory=list)
    w_min: float
    w_max: float


class HolderCheck(FrozenModel):
    passed: bool
    max_ratio: float
    trials: int
    seed: int


# Instance file bodies
class AggregateBody(FrozenModel):
    aggregator: AnyAggregator
    sentiment: SentimentVector

    @model_validator(mode="after")
    def _dims(self):
        if self.aggregator.g != self.sentiment.g:
            raise ValueError(f"aggregator has {self.aggregator.g} groups, sentiment {self.sentiment.g}")
        return self


class AdversaryBody(FrozenModel):
    weight_set: WeightSet
    sentiment: SentimentVector
    direction: Direction = Direction.MINIMIZE

    @model_validator(mode="after")
    def _dims(self):
        if self.weight_set.g != self.sentiment.g:
            raise ValueError(f"weight set has {self.weight_set.g} groups, sentiment {self.sentiment.g}")
        return self


class AllocationBody(FrozenModel):
    instance: AllocationInstance
    aggregator: AnyAggregator
    config: SolveConfig = Field(default_factory=SolveConfig)

    @model_validator(mode="after")
    def _dims(self):
        if self.aggregator.g != self.instance.g:
            raise ValueError(f"aggregator has {self.aggregator.g} groups, instance {self.instance.g} agents")
        return self


class GameBody(FrozenModel):
    game: GameSpec
    strategy_at: Optional[SentimentVector] = Field(None, description="Evaluate the Angel's equilibrium strategy here")
    profile: Optional[StrategyProfile] = None
    solve_config: Optional[SolveConfig] = None


class HolderQuery(FrozenModel):
    p: ExtendedReal
    r: float = Field(..., gt=0)


class BoundsBody(FrozenModel):
    sentiment: SentimentVector
    aggregator: AnyAggregator
    weight_set: WeightSet
    epsilon: Optional[List[float]] = None
    holder: Optional[HolderQuery] = None

    @model_validator(mode="after")
    def _dims(self):
        g = self.sentiment.g
        if self.aggregator.g != g or self.weight_set.g != g:
            raise ValueError("aggregator, weight set and sentiment must share one dimension")
        if self.epsilon is not None and len(self.epsilon) != g:
            raise ValueError(f"epsilon must have {g} entries")
        return self


class AggregateFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["aggregate"]
    body: AggregateBody


class AdversaryFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["adversary"]
    body: AdversaryBody


class AllocationFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["allocation"]
    body: AllocationBody


class GameFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["game"]
    body: GameBody


class BoundsFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["bounds"]
    body: BoundsBody


class SampleComplexityFile(FrozenModel):
    version: Literal["1"]
    kind: Literal["sample_complexity"]
    body: SampleComplexityQuery


InstanceFile = Annotated[
    Union[AggregateFile, AdversaryFile, AllocationFile, GameFile, BoundsFile, SampleComplexityFile],
    Field(discriminator="kind"),
]


class ReportFile(FrozenModel):
    version: Literal["1"] = "1"
    kind: str
    input_digest: str
    seed: int
    result: Dict[str, Any]
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    timing: Optional[Dict[str, float]] = None


class ServiceOutcome(FrozenModel):
    """What a service hands the CLI: the report's result and diagnostics sections"""
    result: Dict[str, Any]
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    converged: bool = True
