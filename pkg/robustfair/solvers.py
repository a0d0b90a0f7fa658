"""
Maximin / minimax solvers for robust fair objectives over continuous
parameter spaces.

The outer variable theta moves by projected supergradient steps on the signed
objective (welfare, or minus malfare). By default each step differentiates
through the exact inner best response (envelope subgradient); a simultaneous
descent-ascent mode is available for weight sets with a Euclidean projection.
"""
import logging
import math
from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from robustfair import weightsets
from robustfair.aggregators import (
    _power_mean,
    _power_mean_gradient,
    aggregate,
    effective_weights,
    gradient,
    weight_gradient,
)
from robustfair.exceptions import (
    ConvergenceError,
    CurvatureViolationError,
    DimensionMismatchError,
    DomainError,
    ProjectionError,
)
from robustfair.models import (
    AnyAggregator,
    ConstantStep,
    GradientAscentOracle,
    LinearConstraint,
    ObjectiveSense,
    PowerMean,
    RobustAggregator,
    Sense,
    SentimentVector,
    SolveConfig,
    WeightVector,
    check_welfare_validity,
)
from robustfair.projections import capped_simplex_projection, dykstra, halfspace_projection, simplex_projection
from robustfair.schemas import SolveReport, TracePoint

logger = logging.getLogger(__name__)

CURVATURE_WINDOW = 100
CURVATURE_VIOLATION_SHARE = 0.25
FEASIBILITY_TOLERANCE = 1e-7


def project_simplex(v) -> WeightVector:
    """Euclidean projection of v onto the probability simplex"""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatchError("project_simplex needs a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("project_simplex needs finite entries")
    return WeightVector.of(simplex_projection(v))


# Feasible sets
class FeasibleSet:
    """A convex parameter set with a Euclidean projection; points are flat arrays"""

    shape: Tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x: np.ndarray, tol: float = FEASIBILITY_TOLERANCE) -> bool:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def linear_maximizer(self, direction: np.ndarray) -> Optional[np.ndarray]:
        """argmax over the set of direction . x, or None when no exact oracle exists"""
        return None


class BoxSet(FeasibleSet):
    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise DimensionMismatchError("box bounds must have the same length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise DomainError("box bounds must be finite")
        if np.any(self.lower > self.upper):
            raise DomainError("box lower bounds exceed upper bounds")
        self.shape = (self.lower.size,)

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float).ravel(), self.lower, self.upper)

    def contains(self, x, tol=FEASIBILITY_TOLERANCE):
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def initial_point(self):
        return (self.lower + self.upper) / 2.0

    def random_point(self, rng):
        return rng.uniform(self.lower, self.upper)

    def linear_maximizer(self, direction):
        return np.where(np.asarray(direction) > 0, self.upper, self.lower)


class ScaledSimplexSet(FeasibleSet):
    """{x >= 0 : sum(x) <= total}"""

    def __init__(self, n: int, total: float):
        if n < 1 or not total > 0:
            raise DomainError("scaled simplex needs n >= 1 and a positive total")
        self.n = n
        self.total = float(total)
        self.shape = (n,)

    def project(self, x):
        return capped_simplex_projection(np.asarray(x, dtype=float).ravel(), self.total)

    def contains(self, x, tol=FEASIBILITY_TOLERANCE):
        x = np.asarray(x, dtype=float).ravel()
        return bool(x.min() >= -tol and x.sum() <= self.total + tol)

    def diameter(self):
        return self.total * (math.sqrt(2.0) if self.n > 1 else 1.0)

    def initial_point(self):
        return np.full(self.n, self.total / self.n)

    def random_point(self, rng):
        return rng.dirichlet(np.ones(self.n + 1))[: self.n] * self.total

    def linear_maximizer(self, direction):
        direction = np.asarray(direction, dtype=float)
        x = np.zeros(self.n)
        best = int(np.argmax(direction))
        if direction[best] > 0:
            x[best] = self.total
        return x


class CapacitySet(FeasibleSet):
    """
    Allocations theta in R_+^{g x k} with column sums at most the capacities,
    optionally intersected with linear constraints (cyclic projection).
    """

    def __init__(
        self,
        g: int,
        k: int,
        capacities: Sequence[float],
        constraints: Sequence[LinearConstraint] = (),
    ):
        self.g, self.k = g, k
        self.capacities = np.asarray(capacities, dtype=float)
        if self.capacities.shape != (k,):
            raise DimensionMismatchError(f"expected {k} capacities")
        self.shape = (g, k)
        self._halfspaces = []
        for constraint in constraints:
            normal = np.asarray(constraint.coefficients, dtype=float).ravel()
            if normal.size != g * k:
                raise DimensionMismatchError(f"constraint coefficients must be {g}x{k}")
            rhs = float(constraint.rhs)
            if constraint.relation == "ge":
                normal, rhs = -normal, -rhs
            self._halfspaces.append((normal, rhs, constraint.relation == "eq"))

    def _project_capacity(self, x: np.ndarray) -> np.ndarray:
        theta = x.reshape(self.shape)
        out = np.empty_like(theta)
        for j in range(self.k):
            out[:, j] = capped_simplex_projection(theta[:, j], self.capacities[j])
        return out.ravel()

    def _violation(self, x: np.ndarray) -> float:
        theta = x.reshape(self.shape)
        worst = max(0.0, float(-theta.min()))
        worst = max(worst, float(np.max(theta.sum(axis=0) - self.capacities)))
        for normal, rhs, equality in self._halfspaces:
            excess = float(normal @ x) - rhs
            worst = max(worst, abs(excess) if equality else excess)
        return worst

    def project(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if not self._halfspaces:
            return self._project_capacity(x)
        projectors = [self._project_capacity] + [
            (lambda v, n=normal, r=rhs, e=equality: halfspace_projection(v, n, r, e))
            for normal, rhs, equality in self._halfspaces
        ]
        y = dykstra(x, projectors)
        violation = self._violation(y)
        if violation > FEASIBILITY_TOLERANCE:
            raise ProjectionError(f"cyclic projection left a constraint violation of {violation:.3g}")
        return np.maximum(y, 0.0)

    def contains(self, x, tol=FEASIBILITY_TOLERANCE):
        return self._violation(np.asarray(x, dtype=float).ravel()) <= tol

    def diameter(self):
        per_column = self.capacities * (math.sqrt(2.0) if self.g > 1 else 1.0)
        return float(np.linalg.norm(per_column))

    def initial_point(self):
        even = np.tile(self.capacities / self.g, (self.g, 1)).ravel()
        return self.project(even) if self._halfspaces else even

    def random_point(self, rng):
        columns = [rng.dirichlet(np.ones(self.g + 1))[: self.g] * c for c in self.capacities]
        return self.project(np.column_stack(columns).ravel())

    def linear_maximizer(self, direction):
        if self._halfspaces:
            return None
        d = np.asarray(direction, dtype=float).reshape(self.shape)
        theta = np.zeros(self.shape)
        for j in range(self.k):
            i = int(np.argmax(d[:, j]))
            if d[i, j] > 0:
                theta[i, j] = self.capacities[j]
        return theta.ravel()


# Sentiment maps
class SentimentMap:
    """
    theta (flat, n entries) -> S(theta) (g entries).

    `curvature` declares the per-coordinate shape of S: "linear", "concave" or
    "convex". Jacobians are one-sided at kinks.
    """

    name = "abstract"
    curvature = "linear"

    def __init__(self, g: int, n: int):
        self.g, self.n = g, n

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta: np.ndarray, side: str = "left") -> np.ndarray:
        raise NotImplementedError


SENTIMENT_MAPS: Dict[str, Type[SentimentMap]] = {}


def register_sentiment_map(name: str):
    def decorator(cls: Type[SentimentMap]) -> Type[SentimentMap]:
        cls.name = name
        SENTIMENT_MAPS[name] = cls
        return cls
    return decorator


def build_sentiment_map(name: str, **params) -> SentimentMap:
    try:
        cls = SENTIMENT_MAPS[name]
    except KeyError:
        raise DomainError(f"unknown sentiment map {name!r}; registered: {sorted(SENTIMENT_MAPS)}") from None
    return cls(**params)


@register_sentiment_map("identity")
class IdentityMap(SentimentMap):
    def __init__(self, n: int):
        super().__init__(n, n)

    def evaluate(self, theta):
        return np.asarray(theta, dtype=float).ravel().copy()

    def jacobian(self, theta, side="left"):
        return np.eye(self.n)


@register_sentiment_map("linear")
class LinearMap(SentimentMap):
    """S = A theta + b"""

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        g, n = self.A.shape
        self.b = np.zeros(g) if b is None else np.asarray(b, dtype=float).ravel()
        if self.b.shape != (g,):
            raise DimensionMismatchError(f"offset must have {g} entries")
        super().__init__(g, n)

    def evaluate(self, theta):
        return self.A @ np.asarray(theta, dtype=float).ravel() + self.b

    def jacobian(self, theta, side="left"):
        return self.A


class ObjectiveSpec(BaseModel):
    """An aggregator composed with a sentiment map, to maximize (welfare) or minimize (malfare)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    aggregator: AnyAggregator
    sentiment_map: SentimentMap
    sense: ObjectiveSense = ObjectiveSense.MAXIMIZE_WELFARE

    @model_validator(mode="after")
    def _curvature_contract(self):
        welfare = self.sense == ObjectiveSense.MAXIMIZE_WELFARE
        allowed = ("linear", "concave") if welfare else ("linear", "convex")
        if self.sentiment_map.curvature not in allowed:
            raise ValueError(
                f"a {self.sentiment_map.curvature} sentiment map breaks the curvature contract for {self.sense.value}"
            )
        if self.aggregator.g != self.sentiment_map.g:
            raise ValueError(f"aggregator has {self.aggregator.g} groups, sentiment map {self.sentiment_map.g}")
        sense = getattr(self.aggregator, "sense", None)
        if sense is not None and (sense == Sense.UTILITY) != welfare:
            raise ValueError(f"a {sense.value} aggregator cannot {self.sense.value.replace('_', ' ')}")
        if isinstance(self.aggregator, PowerMean):
            check_welfare_validity(self.aggregator.p, Sense.UTILITY if welfare else Sense.DISUTILITY)
        return self

    @property
    def welfare(self) -> bool:
        return self.sense == ObjectiveSense.MAXIMIZE_WELFARE


def _floored(s: np.ndarray) -> np.ndarray:
    """Lift exact zeros so power-mean gradients with p < 1 stay finite"""
    if np.any(s == 0):
        return np.maximum(s, 1e-12 * max(1.0, float(s.max())))
    return s


class _InnerProblem:
    """The adversary's side of a maximin objective at a fixed sentiment vector"""

    def __init__(self, obj: ObjectiveSpec, W=None):
        a = obj.aggregator
        self.aggregator = a
        self.welfare = obj.welfare
        self.sense = Sense.UTILITY if self.welfare else Sense.DISUTILITY
        self.W, self.p = None, None
        if W is not None:
            if not isinstance(a, (PowerMean, RobustAggregator)):
                raise DomainError(f"an explicit weight set needs a power-mean aggregator, got {a.kind}")
            if W.g != a.g:
                raise DimensionMismatchError(f"weight set has dimension {W.g}, aggregator {a.g}")
            self.W, self.p = W, float(a.p)
        elif isinstance(a, RobustAggregator):
            self.W, self.p = a.weight_set, float(a.p)

    @property
    def robust(self) -> bool:
        return self.W is not None

    def _sentiment(self, s: np.ndarray) -> SentimentVector:
        return SentimentVector.of(s, self.sense)

    def respond(self, s: np.ndarray) -> Tuple[float, np.ndarray, bool]:
        """(value, adversary weights, exact) at s"""
        if self.robust:
            w, exact, _ = weightsets._robust_weights(s, self.p, self.W, minimize=self.welfare)
            return _power_mean(s, w, self.p), w, exact
        S = self._sentiment(s)
        return aggregate(self.aggregator, S), effective_weights(self.aggregator, S), True

    def value_at(self, s: np.ndarray, w: np.ndarray) -> float:
        if self.robust:
            return _power_mean(s, w, self.p)
        return aggregate(self.aggregator, self._sentiment(s))

    def gradient_at(self, s: np.ndarray, w: np.ndarray) -> np.ndarray:
        if np.any(s < 0):
            raise DomainError("sentiment map produced negative sentiment")
        if self.robust:
            return _power_mean_gradient(_floored(s), w, self.p)
        return gradient(self.aggregator, self._sentiment(_floored(s)))


def envelope_subgradient(obj: ObjectiveSpec, theta, W=None, side: str = "left") -> np.ndarray:
    """
    Gradient of theta -> inf_w M(S(theta); w) (sup for malfare) by the chain
    rule through the aggregator gradient at the inner best response. At kinks
    of S the one-sided Jacobian on `side` is used.
    """
    inner = _InnerProblem(obj, W)
    theta = np.asarray(theta, dtype=float).ravel()
    s = obj.sentiment_map.evaluate(theta)
    _, w, _ = inner.respond(s)
    return obj.sentiment_map.jacobian(theta, side).T @ inner.gradient_at(s, w)


def objective_value(obj: ObjectiveSpec, theta, W=None) -> float:
    """The robust objective at theta"""
    inner = _InnerProblem(obj, W)
    value, _, _ = inner.respond(obj.sentiment_map.evaluate(np.asarray(theta, dtype=float).ravel()))
    return value


class _Average:
    def __init__(self):
        self.total = None
        self.weight = 0.0

    def add(self, x: np.ndarray, weight: float) -> None:
        self.total = weight * x if self.total is None else self.total + weight * x
        self.weight += weight

    def mean(self) -> Optional[np.ndarray]:
        return None if self.total is None else self.total / self.weight


def _initial_step(cfg: SolveConfig, s0: np.ndarray, feasible: FeasibleSet) -> float:
    schedule = cfg.step_schedule
    if isinstance(schedule, ConstantStep):
        return schedule.eta
    if schedule.eta0 is not None:
        return schedule.eta0
    scale = float(np.ptp(s0))
    if scale == 0:
        scale = max(float(np.abs(s0).max()), 1.0)
    diameter = feasible.diameter() or 1.0
    return scale * diameter / math.sqrt(cfg.max_iters)


def _step_size(cfg: SolveConfig, eta0: float, t: int) -> float:
    if isinstance(cfg.step_schedule, ConstantStep):
        return eta0
    return eta0 / math.sqrt(t)


class _Ascent:
    """One run of the outer loop from a given start"""

    def __init__(self, obj: ObjectiveSpec, feasible: FeasibleSet, inner: _InnerProblem, cfg: SolveConfig):
        self.obj = obj
        self.smap = obj.sentiment_map
        self.feasible = feasible
        self.inner = inner
        self.cfg = cfg
        self.sign = 1.0 if inner.welfare else -1.0
        self.descent_ascent = isinstance(cfg.inner_oracle, GradientAscentOracle)
        self.best_theta: Optional[np.ndarray] = None
        self.best_score = -math.inf

    def _score(self, theta: np.ndarray) -> float:
        value, _, _ = self.inner.respond(self.smap.evaluate(theta))
        return self.sign * value

    def _offer(self, theta: np.ndarray, score: float = None) -> None:
        if score is None:
            score = self._score(theta)
        if score > self.best_score:
            self.best_score, self.best_theta = score, theta.copy()

    def _bound(self, w_bar: np.ndarray) -> Optional[float]:
        """Upper bound on the optimal signed score from a fixed adversary w_bar"""
        theta = self.best_theta
        s = self.smap.evaluate(theta)
        direction = self.sign * (self.smap.jacobian(theta, "right").T @ self.inner.gradient_at(s, w_bar))
        y = self.feasible.linear_maximizer(direction)
        if y is None:
            return None
        return self.sign * self.inner.value_at(s, w_bar) + float(direction @ (y - theta))

    def _gap(self, averages: List[_Average], recent_scores: deque) -> float:
        bounds = []
        for average in averages:
            w_bar = average.mean()
            if w_bar is None:
                continue
            w_bar = np.clip(w_bar, 0.0, None)
            bound = self._bound(w_bar / w_bar.sum())
            if bound is not None:
                bounds.append(bound)
            if not self.inner.robust:
                break
        if bounds:
            return max(0.0, min(bounds) - self.best_score)
        return float(max(recent_scores) - min(recent_scores)) if recent_scores else math.inf

    def _adversary_step(self, s: np.ndarray, w: np.ndarray) -> np.ndarray:
        oracle = self.cfg.inner_oracle
        move = -1.0 if self.inner.welfare else 1.0
        for _ in range(oracle.steps):
            w = weightsets.project(self.inner.W, w + move * oracle.eta * weight_gradient(self.inner.p, _floored(s), w))
        return w

    def run(self, start: np.ndarray) -> SolveReport:
        cfg, smap, feasible, inner = self.cfg, self.smap, self.feasible, self.inner
        theta = feasible.project(start)
        eta0 = _initial_step(cfg, smap.evaluate(theta), feasible)
        w_state = None
        if self.descent_ascent:
            w_state = weightsets.project(inner.W, np.full(inner.W.g, 1.0 / inner.W.g))
        theta_full, theta_window = _Average(), _Average()
        w_full, w_window = _Average(), _Average()
        violations = deque(maxlen=CURVATURE_WINDOW)
        recent_scores = deque(maxlen=cfg.check_every)
        trace = [] if cfg.record_trace else None
        previous = None
        gap, converged, t = math.inf, False, 0

        for t in range(1, cfg.max_iters + 1):
            s = smap.evaluate(theta)
            if self.descent_ascent:
                w_state = self._adversary_step(s, w_state)
                w = w_state
                value = inner.value_at(s, w)
            else:
                value, w, _ = inner.respond(s)
                score = self.sign * value
                self._offer(theta, score)
                recent_scores.append(score)
                if previous is not None:
                    prev_score, prev_theta, prev_grad = previous
                    predicted = prev_score + float(prev_grad @ (theta - prev_theta))
                    violations.append(score > predicted + 1e-7 * (1.0 + abs(predicted)))
                    if len(violations) == CURVATURE_WINDOW and sum(violations) > CURVATURE_VIOLATION_SHARE * CURVATURE_WINDOW:
                        raise CurvatureViolationError(
                            f"objective broke its {'concave' if inner.welfare else 'convex'} contract on "
                            f"{sum(violations)} of the last {CURVATURE_WINDOW} steps (iteration {t})"
                        )

            grad = self.sign * (smap.jacobian(theta, "left").T @ inner.gradient_at(s, w))
            eta = _step_size(cfg, eta0, t)
            previous = (self.sign * value, theta, grad)
            theta_full.add(theta, eta)
            theta_window.add(theta, eta)
            w_full.add(w, eta)
            w_window.add(w, eta)

            check_gap = None
            if t % cfg.check_every == 0 or t == cfg.max_iters:
                if self.descent_ascent:
                    score = self._score(theta)
                    self._offer(theta, score)
                    recent_scores.append(score)
                self._offer(feasible.project(theta_window.mean()))
                self._offer(feasible.project(theta_full.mean()))
                gap = self._gap([w_full, w_window], recent_scores)
                check_gap = gap
                theta_window, w_window = _Average(), _Average()
                converged = gap <= cfg.tolerance
            if trace is not None:
                trace.append(TracePoint(iter=t, value=value, gap=check_gap, step=eta))
            if t % 500 == 0:
                logger.debug("iteration %d: value %.10g, best %.10g, gap %.3g", t, value, self.sign * self.best_score, gap)
            if converged:
                break
            theta = feasible.project(theta + eta * grad)

        value, w, _ = inner.respond(smap.evaluate(self.best_theta))
        return SolveReport(
            theta=self.best_theta.tolist(),
            shape=list(feasible.shape),
            adversary=WeightVector.of(w),
            value=value,
            gap_estimate=gap,
            iterations=t,
            converged=converged,
            method="descent_ascent" if self.descent_ascent else "best_response_subgradient",
            seed=cfg.seed,
            trace=trace,
        )


def _check_descent_ascent(inner: _InnerProblem) -> None:
    if not inner.robust:
        raise DomainError("descent-ascent needs a weight set")
    if math.isinf(inner.p):
        raise DomainError("descent-ascent needs a finite p")
    # raises DomainError for weight sets without a projection
    weightsets.project(inner.W, np.full(inner.W.g, 1.0 / inner.W.g))


def solve_maximin(
    obj: ObjectiveSpec,
    feasible: FeasibleSet,
    W=None,
    cfg: SolveConfig = None,
    require_convergence: bool = False,
) -> SolveReport:
    """
    Approximate saddle point of max_theta min_w M(S(theta); w) (min-max for
    malfare).

    Stops when the primal-dual gap estimate drops to cfg.tolerance or at
    cfg.max_iters; the report says which. Restarts after the first start from
    seeded random feasible points.
    """
    cfg = cfg or SolveConfig()
    if feasible.size != obj.sentiment_map.n:
        raise DimensionMismatchError(
            f"feasible set has {feasible.size} coordinates, sentiment map expects {obj.sentiment_map.n}"
        )
    inner = _InnerProblem(obj, W)
    if isinstance(cfg.inner_oracle, GradientAscentOracle):
        _check_descent_ascent(inner)
    rng = np.random.default_rng(cfg.seed)
    sign = 1.0 if inner.welfare else -1.0

    best: Optional[SolveReport] = None
    for attempt in range(cfg.restarts):
        start = feasible.initial_point() if attempt == 0 else feasible.random_point(rng)
        try:
            report = _Ascent(obj, feasible, inner, cfg).run(start)
        except CurvatureViolationError:
            if attempt == cfg.restarts - 1:
                raise
            logger.warning("curvature contract violated on attempt %d, restarting", attempt + 1)
            continue
        if best is None or sign * report.value > sign * best.value:
            best = report
        if report.converged:
            break

    logger.info(
        "solve_maximin stopped after %d iterations: value %.10g, gap %.3g, converged=%s",
        best.iterations, best.value, best.gap_estimate, best.converged,
    )
    if require_convergence and not best.converged:
        raise ConvergenceError(
            f"gap {best.gap_estimate:.3g} above tolerance {cfg.tolerance:.3g} after {best.iterations} iterations",
            best=best,
        )
    return best
