import enum
import math
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_serializer,
    model_validator,
)

from robustfair.exceptions import DimensionMismatchError, DomainError, SimplexError

# Fixed numeric conventions shared by every module
SIMPLEX_SUM_TOLERANCE = 1e-9
SIMPLEX_ENTRY_TOLERANCE = -1e-12
GEOMETRIC_BRANCH_THRESHOLD = 1e-8


class FrozenModel(BaseModel):
    """Immutable model that rejects unknown fields"""
    model_config = ConfigDict(extra="forbid", frozen=True)


class Sense(str, enum.Enum):
    """Whether sentiment values are utilities (welfare) or disutilities (malfare)"""
    UTILITY = "utility"
    DISUTILITY = "disutility"


class Direction(str, enum.Enum):
    """Direction of an adversary's optimization over a weight set"""
    MINIMIZE = "min"
    MAXIMIZE = "max"


class Norm(str, enum.Enum):
    """Norms available for robustness balls"""
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


class HolderNorm(str, enum.Enum):
    """Norms a continuity certificate may be stated in"""
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"
    SELF_REFERENTIAL = "self_referential"


class ObjectiveSense(str, enum.Enum):
    MAXIMIZE_WELFARE = "maximize_welfare"
    MINIMIZE_MALFARE = "minimize_malfare"


# Extended reals: a float where +/-inf are legal and serialize as "inf"/"-inf"
def _parse_extended_real(value):
    if isinstance(value, bool):
        raise ValueError("extended real must be a number or 'inf'/'-inf'")
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
        raise ValueError(f"not an extended real: {value!r}")
    value = float(value)
    if math.isnan(value):
        raise ValueError("extended real must not be NaN")
    return value


def _dump_extended_real(value):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


ExtendedReal = Annotated[
    float,
    BeforeValidator(_parse_extended_real),
    PlainSerializer(_dump_extended_real, when_used="json"),
]


def check_simplex(weights: np.ndarray) -> None:
    """Raise SimplexError unless weights lie on the probability simplex"""
    if weights.ndim != 1 or weights.size == 0:
        raise DimensionMismatchError("weight vector must be a non-empty 1-d array")
    if not np.all(np.isfinite(weights)):
        raise SimplexError("weight vector has non-finite entries")
    if np.any(weights < SIMPLEX_ENTRY_TOLERANCE):
        raise SimplexError(f"weight vector has negative entries: {weights.tolist()}")
    total = float(weights.sum())
    if abs(total - 1.0) > SIMPLEX_SUM_TOLERANCE:
        raise SimplexError(f"weights sum to {total!r}, not 1")


def check_welfare_validity(p: float, sense: "Sense") -> None:
    """Welfare needs p <= 1, malfare needs p >= 1"""
    if sense == Sense.UTILITY and p > 1:
        raise DomainError(f"p={p} is not a valid welfare parameter (needs p <= 1)")
    if sense == Sense.DISUTILITY and p < 1:
        raise DomainError(f"p={p} is not a valid malfare parameter (needs p >= 1)")


class SentimentVector(FrozenModel):
    """Per-group utility or disutility values"""
    values: List[float] = Field(..., min_length=1, description="One value per group")
    sense: Sense = Field(Sense.UTILITY, description="Utility or disutility")

    @model_validator(mode="before")
    @classmethod
    def _accept_bare_list(cls, data):
        if isinstance(data, np.ndarray):
            data = data.tolist()
        if isinstance(data, (list, tuple)):
            return {"values": list(data)}
        return data

    @field_validator("values")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        if not all(math.isfinite(x) for x in values):
            raise ValueError("sentiment values must be finite")
        return values

    @classmethod
    def of(cls, values, sense: Sense = Sense.UTILITY) -> "SentimentVector":
        return cls(values=[float(x) for x in np.asarray(values, dtype=float).ravel()], sense=sense)

    @property
    def g(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class WeightVector(FrozenModel):
    """A point on the probability simplex"""
    weights: List[float] = Field(..., min_length=1, description="Nonnegative entries summing to 1")

    @model_validator(mode="before")
    @classmethod
    def _accept_bare_list(cls, data):
        if isinstance(data, np.ndarray):
            data = data.tolist()
        if isinstance(data, (list, tuple)):
            return {"weights": list(data)}
        return data

    @field_validator("weights")
    @classmethod
    def _on_simplex(cls, weights: List[float]) -> List[float]:
        check_simplex(np.asarray(weights, dtype=float))
        return weights

    @model_serializer
    def _dump(self):
        return list(self.weights)

    @classmethod
    def of(cls, weights) -> "WeightVector":
        return cls(weights=[float(x) for x in np.asarray(weights, dtype=float).ravel()])

    @classmethod
    def uniform(cls, g: int) -> "WeightVector":
        return cls(weights=[1.0 / g] * g)

    @property
    def g(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.clip(np.asarray(self.weights, dtype=float), 0.0, None)


def sentiment_array(S) -> np.ndarray:
    """Coerce a SentimentVector or array-like into a finite 1-d float array"""
    if isinstance(S, SentimentVector):
        return S.as_array()
    arr = np.asarray(S, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatchError("sentiment must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        raise DomainError("sentiment values must be finite")
    return arr


def sentiment_sense(S, default: Sense = Sense.UTILITY) -> Sense:
    return S.sense if isinstance(S, SentimentVector) else default


def weight_array(w) -> np.ndarray:
    """Coerce a WeightVector or array-like into a validated simplex point"""
    if isinstance(w, WeightVector):
        return w.as_array()
    arr = np.asarray(w, dtype=float)
    check_simplex(arr)
    return np.clip(arr, 0.0, None)


def _ascending(w: WeightVector) -> WeightVector:
    if np.any(np.diff(np.asarray(w.weights)) < SIMPLEX_ENTRY_TOLERANCE):
        raise ValueError("sorted weights must be stored in ascending order")
    return w


AscendingWeights = Annotated[WeightVector, AfterValidator(_ascending)]


# Aggregators
class PowerMean(FrozenModel):
    kind: Literal["power_mean"] = "power_mean"
    p: ExtendedReal
    weights: WeightVector

    @property
    def g(self) -> int:
        return self.weights.g


class Gini(FrozenModel):
    """Generalized Gini aggregator; weights stored ascending"""
    kind: Literal["gini"] = "gini"
    sorted_weights: AscendingWeights
    sense: Sense = Sense.UTILITY

    @property
    def g(self) -> int:
        return self.sorted_weights.g


class Umswf(FrozenModel):
    """Utilitarian-maximin: gamma * utilitarian + (1 - gamma) * egalitarian"""
    kind: Literal["umswf"] = "umswf"
    gamma: float = Field(..., ge=0.0, le=1.0)
    base_weights: WeightVector

    @property
    def g(self) -> int:
        return self.base_weights.g


class GiniPowerMean(FrozenModel):
    kind: Literal["gini_power_mean"] = "gini_power_mean"
    p: ExtendedReal
    sorted_weights: AscendingWeights
    sense: Sense = Sense.UTILITY

    @model_validator(mode="after")
    def _valid_for_sense(self):
        check_welfare_validity(self.p, self.sense)
        return self

    @property
    def g(self) -> int:
        return self.sorted_weights.g


Aggregator = Annotated[Union[PowerMean, Gini, Umswf, GiniPowerMean], Field(discriminator="kind")]


# Weight sets (Angel action spaces)
class Singleton(FrozenModel):
    kind: Literal["singleton"] = "singleton"
    w_star: WeightVector

    @property
    def g(self) -> int:
        return self.w_star.g


class FullSimplex(FrozenModel):
    kind: Literal["simplex"] = "simplex"
    g: int = Field(..., ge=1)


class LowerBounded(FrozenModel):
    """{w in simplex : w >= gamma * w_star}"""
    kind: Literal["lower_bounded"] = "lower_bounded"
    gamma: float = Field(..., ge=0.0, le=1.0)
    w_star: WeightVector

    @property
    def g(self) -> int:
        return self.w_star.g


class PermutationOrbit(FrozenModel):
    """All rearrangements of a weight vector; stored ascending"""
    kind: Literal["permutation"] = "permutation"
    sorted_weights: WeightVector

    @field_validator("sorted_weights")
    @classmethod
    def _sort(cls, w: WeightVector) -> WeightVector:
        return WeightVector(weights=sorted(w.weights))

    @property
    def g(self) -> int:
        return self.sorted_weights.g


BallBase = Annotated[Union[Singleton, LowerBounded, PermutationOrbit], Field(discriminator="kind")]


class NormBall(FrozenModel):
    """(base + radius ball) intersected with the simplex"""
    kind: Literal["norm_ball"] = "norm_ball"
    base: BallBase
    norm: Norm
    radius: float = Field(..., ge=0.0)

    @property
    def g(self) -> int:
        return self.base.g


WeightSet = Annotated[
    Union[Singleton, FullSimplex, LowerBounded, PermutationOrbit, NormBall],
    Field(discriminator="kind"),
]


class RobustAggregator(FrozenModel):
    """Worst-case power mean M_p(S; W) over a weight set"""
    kind: Literal["robust"] = "robust"
    p: ExtendedReal
    weight_set: WeightSet
    sense: Sense = Sense.UTILITY

    @model_validator(mode="after")
    def _valid_for_sense(self):
        check_welfare_validity(self.p, self.sense)
        return self

    @property
    def g(self) -> int:
        return self.weight_set.g


AnyAggregator = Annotated[
    Union[PowerMean, Gini, Umswf, GiniPowerMean, RobustAggregator],
    Field(discriminator="kind"),
]


# Allocation instances
UNBOUNDED = "unbounded"
Cap = Union[Literal["unbounded"], float]


def _matrix_shape(matrix: List[List[float]], name: str):
    rows = len(matrix)
    cols = {len(row) for row in matrix}
    if rows == 0 or len(cols) != 1 or 0 in cols:
        raise ValueError(f"{name} must be a non-empty rectangular matrix")
    return rows, cols.pop()


def _nonnegative_finite(values, name: str):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and nonnegative")


class LinearSingle(FrozenModel):
    """One good, S_i = p_i * theta_i"""
    kind: Literal["linear_single"] = "linear_single"
    p: List[float] = Field(..., min_length=1)


class SqrtSingle(FrozenModel):
    """One good, S_i = (sqrt(1 + 2 theta_i) - 1) * p_i"""
    kind: Literal["sqrt_single"] = "sqrt_single"
    p: List[float] = Field(..., min_length=1)


class LinearMulti(FrozenModel):
    """k goods, S_i = sum_j P_ij theta_ij"""
    kind: Literal["linear_multi"] = "linear_multi"
    P: List[List[float]]


class LogSaturating(FrozenModel):
    """Store profit utility ln(1 + sum_j P_ij min(C_ij, theta_ij))"""
    kind: Literal["log_saturating"] = "log_saturating"
    P: List[List[float]]
    C: List[List[Cap]]

    @field_validator("C")
    @classmethod
    def _caps(cls, caps):
        for row in caps:
            for cap in row:
                if cap != UNBOUNDED and (not math.isfinite(cap) or cap < 0):
                    raise ValueError("caps must be finite and nonnegative, or 'unbounded'")
        return caps

    def caps_array(self) -> np.ndarray:
        return np.array([[math.inf if c == UNBOUNDED else float(c) for c in row] for row in self.C])

    def bounded_mask(self) -> np.ndarray:
        return np.array([[c != UNBOUNDED for c in row] for row in self.C])


UtilityModel = Annotated[
    Union[LinearSingle, SqrtSingle, LinearMulti, LogSaturating],
    Field(discriminator="kind"),
]


class LinearConstraint(FrozenModel):
    """sum_ij a_ij theta_ij (<= | >= | ==) rhs"""
    coefficients: List[List[float]]
    rhs: float
    relation: Literal["le", "ge", "eq"] = "le"


class AllocationInstance(FrozenModel):
    """Fair division of k divisible goods among g agents"""
    g: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    capacities: List[float] = Field(..., min_length=1)
    utility_model: UtilityModel
    extra_constraints: List[LinearConstraint] = Field(default_factory=list)
    feasible_point: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.capacities) != self.k:
            raise ValueError(f"expected {self.k} capacities, got {len(self.capacities)}")
        if any(not math.isfinite(c) or c <= 0 for c in self.capacities):
            raise ValueError("capacities must be finite and positive")
        model = self.utility_model
        if isinstance(model, (LinearSingle, SqrtSingle)):
            if self.k != 1:
                raise ValueError(f"{model.kind} needs exactly one good")
            if len(model.p) != self.g:
                raise ValueError(f"expected {self.g} rates, got {len(model.p)}")
            _nonnegative_finite(model.p, "rates")
        else:
            if _matrix_shape(model.P, "P") != (self.g, self.k):
                raise ValueError(f"P must be {self.g}x{self.k}")
            _nonnegative_finite(model.P, "P")
            if isinstance(model, LogSaturating) and _matrix_shape(model.C, "C") != (self.g, self.k):
                raise ValueError(f"C must be {self.g}x{self.k}")
        if self.extra_constraints:
            if not isinstance(model, LinearMulti):
                raise ValueError("extra constraints are only supported for linear_multi")
            for constraint in self.extra_constraints:
                if _matrix_shape(constraint.coefficients, "constraint") != (self.g, self.k):
                    raise ValueError(f"constraint coefficients must be {self.g}x{self.k}")
            self._check_feasible_point()
        return self

    def _check_feasible_point(self):
        if self.feasible_point is None:
            point = np.zeros((self.g, self.k))
        else:
            point = np.asarray(self.feasible_point, dtype=float)
            if point.shape != (self.g, self.k):
                raise ValueError(f"feasible_point must be {self.g}x{self.k}")
        violation = self.constraint_violation(point)
        if violation > SIMPLEX_SUM_TOLERANCE:
            source = "declared feasible point" if self.feasible_point is not None else "zero allocation"
            raise ValueError(
                f"the {source} violates the constraint system by {violation:.3g}; "
                "declare a feasible_point"
            )

    def constraint_violation(self, theta: np.ndarray) -> float:
        """Largest violation of nonnegativity, capacity and extra constraints"""
        theta = np.asarray(theta, dtype=float)
        worst = max(0.0, float(-theta.min()))
        worst = max(worst, float(np.max(theta.sum(axis=0) - np.asarray(self.capacities))))
        for constraint in self.extra_constraints:
            lhs = float(np.sum(np.asarray(constraint.coefficients) * theta))
            if constraint.relation == "le":
                worst = max(worst, lhs - constraint.rhs)
            elif constraint.relation == "ge":
                worst = max(worst, constraint.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - constraint.rhs))
        return worst


class Allocation(FrozenModel):
    theta: List[List[float]]

    @classmethod
    def of(cls, theta) -> "Allocation":
        return cls(theta=np.asarray(theta, dtype=float).tolist())

    def as_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)


# Games
class FiniteDaemonSpace(FrozenModel):
    kind: Literal["finite"] = "finite"
    points: List[SentimentVector] = Field(..., min_length=1)
    convex_hull: bool = False

    @model_validator(mode="after")
    def _same_length(self):
        if len({s.g for s in self.points}) != 1:
            raise ValueError("daemon points must share one length")
        return self

    @property
    def g(self) -> int:
        return self.points[0].g

    def as_array(self) -> np.ndarray:
        return np.array([s.values for s in self.points], dtype=float)


class CapacityDaemonSpace(FrozenModel):
    """{S >= 0 : sum_i S_i / rate_i <= total}"""
    kind: Literal["capacity"] = "capacity"
    g: int = Field(..., ge=1)
    total: float = Field(..., gt=0)
    rates: Optional[List[float]] = None

    @model_validator(mode="after")
    def _rates(self):
        if self.rates is not None:
            if len(self.rates) != self.g or any(r <= 0 for r in self.rates):
                raise ValueError(f"rates must be {self.g} positive numbers")
        return self

    def rate_array(self) -> np.ndarray:
        return np.ones(self.g) if self.rates is None else np.asarray(self.rates, dtype=float)


class AllocationDaemonSpace(FrozenModel):
    kind: Literal["allocation"] = "allocation"
    instance: AllocationInstance

    @property
    def g(self) -> int:
        return self.instance.g


DaemonSpace = Annotated[
    Union[FiniteDaemonSpace, CapacityDaemonSpace, AllocationDaemonSpace],
    Field(discriminator="kind"),
]


class Egocentric(FrozenModel):
    kind: Literal["egocentric"] = "egocentric"


class AggregatorPayoff(FrozenModel):
    """Daemon is paid M(S; w) for a power-mean or UMSWF aggregator parameterized by the Angel"""
    kind: Literal["aggregator"] = "aggregator"
    aggregator: Aggregator


class UtilityTransform(FrozenModel):
    kind: Literal["utility_transform"] = "utility_transform"
    p: ExtendedReal
    s_min: float = Field(0.0, ge=0.0)


class AltruisticAngel(FrozenModel):
    kind: Literal["altruistic_angel"] = "altruistic_angel"
    p: float
    w_star: WeightVector
    s_min: float = Field(0.0, ge=0.0)


Payoff = Annotated[
    Union[Egocentric, AggregatorPayoff, UtilityTransform, AltruisticAngel],
    Field(discriminator="kind"),
]


class GameSpec(FrozenModel):
    daemon_space: DaemonSpace
    angel_space: WeightSet
    payoff: Payoff = Field(default_factory=Egocentric)
    sense: Sense = Sense.UTILITY

    @model_validator(mode="after")
    def _consistent(self):
        g = self.daemon_space.g
        if self.angel_space.g != g:
            raise ValueError(f"angel space has dimension {self.angel_space.g}, daemon space {g}")
        payoff = self.payoff
        if isinstance(payoff, AggregatorPayoff):
            if not isinstance(payoff.aggregator, (PowerMean, Umswf)):
                raise ValueError("aggregator payoffs must be power_mean or umswf")
            if payoff.aggregator.g != g:
                raise ValueError("aggregator dimension does not match the daemon space")
        if isinstance(payoff, AltruisticAngel) and payoff.w_star.g != g:
            raise ValueError("w_star dimension does not match the daemon space")
        if isinstance(payoff, (UtilityTransform, AltruisticAngel)) and payoff.p <= 0:
            if payoff.s_min <= 0:
                raise ValueError("p <= 0 requires s_min > 0")
            if isinstance(self.daemon_space, FiniteDaemonSpace):
                if np.any(self.daemon_space.as_array() < payoff.s_min):
                    raise ValueError("every daemon point must be at least s_min")
        return self


class AltruisticStrategy(FrozenModel):
    """The Angel's equilibrium strategy against an altruistic payoff"""
    kind: Literal["altruistic"] = "altruistic"
    p: float
    w_star: WeightVector
    s_min: float = Field(0.0, ge=0.0)


class PowerTiltedStrategy(FrozenModel):
    """w proportional to w_star * S**exponent"""
    kind: Literal["power_tilted"] = "power_tilted"
    w_star: WeightVector
    exponent: float


class FixedStrategy(FrozenModel):
    kind: Literal["fixed"] = "fixed"
    w: WeightVector


AngelStrategy = Annotated[
    Union[AltruisticStrategy, PowerTiltedStrategy, FixedStrategy],
    Field(discriminator="kind"),
]


class StrategyProfile(FrozenModel):
    daemon_choice: Optional[Union[int, SentimentVector]] = Field(
        None, description="Index into a finite space or an explicit point; None picks the Angel-optimal point"
    )
    angel_strategy: AngelStrategy


# Solver configuration
class ConstantStep(FrozenModel):
    kind: Literal["constant"] = "constant"
    eta: float = Field(..., gt=0)


class InverseSqrtStep(FrozenModel):
    """eta_t = eta0 / sqrt(t); eta0 defaults to range(S) * diameter / sqrt(max_iters)"""
    kind: Literal["inverse_sqrt"] = "inverse_sqrt"
    eta0: Optional[float] = Field(None, gt=0)


StepSchedule = Annotated[Union[ConstantStep, InverseSqrtStep], Field(discriminator="kind")]


class ClosedFormOracle(FrozenModel):
    kind: Literal["closed_form"] = "closed_form"


class GradientAscentOracle(FrozenModel):
    """Simultaneous descent-ascent with `steps` projected weight updates per outer step"""
    kind: Literal["gradient_ascent"] = "gradient_ascent"
    steps: int = Field(1, ge=1)
    eta: float = Field(0.05, gt=0)


InnerOracle = Annotated[Union[ClosedFormOracle, GradientAscentOracle], Field(discriminator="kind")]


def _default_max_iters() -> int:
    from robustfair.config import get_settings
    return get_settings().max_iters


def _default_tolerance() -> float:
    from robustfair.config import get_settings
    return get_settings().solver_tolerance


class SolveConfig(FrozenModel):
    max_iters: int = Field(default_factory=_default_max_iters, ge=1)
    step_schedule: StepSchedule = Field(default_factory=InverseSqrtStep)
    tolerance: float = Field(default_factory=_default_tolerance, gt=0)
    inner_oracle: InnerOracle = Field(default_factory=ClosedFormOracle)
    seed: int = Field(0, ge=0)
    restarts: int = Field(1, ge=1)
    record_trace: bool = False
    check_every: int = Field(50, ge=1)


# Bounds
class HolderCertificate(FrozenModel):
    """|M(S) - M(S')| <= lam * ||S - S'||**alpha"""
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lam: float = Field(..., gt=0, alias="lambda")
    alpha: float = Field(..., gt=0, le=1)
    norm: HolderNorm
    case: str = Field(..., description="Which continuity case produced the certificate")

    @property
    def lipschitz(self) -> bool:
        return self.alpha == 1.0


class SampleComplexityQuery(FrozenModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lam: float = Field(..., gt=0, alias="lambda")
    alpha: float = Field(..., gt=0, le=1)
    norm: HolderNorm
    v: List[float] = Field(..., min_length=1, description="Per-group variance proxies")
    t: int = Field(..., ge=1, description="Tail count")
    delta: float = Field(..., gt=0, lt=1)
    epsilon: float = Field(..., gt=0)
    m0: int = Field(1, ge=0)
    aggregator: Optional[RobustAggregator] = Field(
        None, description="Required for the self-referential norm"
    )

    @field_validator("v")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(not math.isfinite(x) or x <= 0 for x in v):
            raise ValueError("variance proxies must be positive")
        return v

    @property
    def g(self) -> int:
        return len(self.v)
