"""
Fair division of divisible goods: utility models, inversions between
utility space and allocation space, and the allocation solver.
"""
import itertools
import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from robustfair.aggregators import aggregate, effective_weights
from robustfair.exceptions import DimensionMismatchError, DomainError
from robustfair.models import (
    SIMPLEX_SUM_TOLERANCE,
    Allocation,
    AllocationInstance,
    FullSimplex,
    LinearMulti,
    LinearSingle,
    LogSaturating,
    LowerBounded,
    ObjectiveSense,
    PowerMean,
    RobustAggregator,
    Sense,
    SentimentVector,
    Singleton,
    SolveConfig,
    SqrtSingle,
    Umswf,
    sentiment_array,
)
from robustfair.projections import in_convex_hull
from robustfair.schemas import SolveReport, UtilitySetDescription
from robustfair.solvers import (
    CapacitySet,
    ObjectiveSpec,
    SentimentMap,
    register_sentiment_map,
    solve_maximin,
)
from robustfair.weightsets import robust_aggregate

logger = logging.getLogger(__name__)

VERTEX_ENUMERATION_LIMIT = 8


# Sentiment maps for the utility models; theta is the flattened g x k allocation
@register_sentiment_map("linear_single")
class LinearSingleMap(SentimentMap):
    """S_i = p_i theta_i"""

    def __init__(self, p):
        self.p = np.asarray(p, dtype=float)
        super().__init__(self.p.size, self.p.size)

    def evaluate(self, theta):
        return self.p * np.asarray(theta, dtype=float).ravel()

    def jacobian(self, theta, side="left"):
        return np.diag(self.p)


@register_sentiment_map("sqrt_single")
class SqrtSingleMap(SentimentMap):
    """S_i = (sqrt(1 + 2 theta_i) - 1) p_i"""
    curvature = "concave"

    def __init__(self, p):
        self.p = np.asarray(p, dtype=float)
        super().__init__(self.p.size, self.p.size)

    def evaluate(self, theta):
        theta = np.maximum(np.asarray(theta, dtype=float).ravel(), 0.0)
        return (np.sqrt(1.0 + 2.0 * theta) - 1.0) * self.p

    def jacobian(self, theta, side="left"):
        theta = np.maximum(np.asarray(theta, dtype=float).ravel(), 0.0)
        return np.diag(self.p / np.sqrt(1.0 + 2.0 * theta))


@register_sentiment_map("linear_multi")
class LinearMultiMap(SentimentMap):
    """S_i = sum_j P_ij theta_ij"""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)
        g, k = self.P.shape
        super().__init__(g, g * k)

    def evaluate(self, theta):
        return (self.P * np.asarray(theta, dtype=float).reshape(self.P.shape)).sum(axis=1)

    def jacobian(self, theta, side="left"):
        g, k = self.P.shape
        J = np.zeros((g, g * k))
        for i in range(g):
            J[i, i * k:(i + 1) * k] = self.P[i]
        return J


@register_sentiment_map("log_saturating")
class LogSaturatingMap(SentimentMap):
    """
    S_i = ln(1 + sum_j P_ij min(C_ij, theta_ij)); infinite caps never saturate.

    At theta_ij = C_ij the left derivative keeps the slope, the right one drops it.
    """
    curvature = "concave"

    def __init__(self, P, C):
        self.P = np.asarray(P, dtype=float)
        self.C = np.asarray(C, dtype=float)
        g, k = self.P.shape
        super().__init__(g, g * k)

    def _reshape(self, theta):
        return np.asarray(theta, dtype=float).reshape(self.P.shape)

    def evaluate(self, theta):
        theta = self._reshape(theta)
        return np.log1p((self.P * np.minimum(self.C, theta)).sum(axis=1))

    def jacobian(self, theta, side="left"):
        theta = self._reshape(theta)
        denominator = 1.0 + (self.P * np.minimum(self.C, theta)).sum(axis=1)
        if side == "left":
            active = theta <= self.C
        else:
            active = theta < self.C
        slopes = self.P * active / denominator[:, None]
        g, k = self.P.shape
        J = np.zeros((g, g * k))
        for i in range(g):
            J[i, i * k:(i + 1) * k] = slopes[i]
        return J


def sentiment_map(inst: AllocationInstance) -> SentimentMap:
    model = inst.utility_model
    if isinstance(model, LinearSingle):
        return LinearSingleMap(model.p)
    if isinstance(model, SqrtSingle):
        return SqrtSingleMap(model.p)
    if isinstance(model, LinearMulti):
        return LinearMultiMap(model.P)
    return LogSaturatingMap(model.P, model.caps_array())


def feasible_set(inst: AllocationInstance) -> CapacitySet:
    return CapacitySet(inst.g, inst.k, inst.capacities, inst.extra_constraints)


def _theta_array(inst: AllocationInstance, theta) -> np.ndarray:
    arr = theta.as_array() if isinstance(theta, Allocation) else np.asarray(theta, dtype=float)
    if arr.shape != (inst.g, inst.k):
        raise DimensionMismatchError(f"allocation must be {inst.g}x{inst.k}, got {arr.shape}")
    return arr


def utilities(inst: AllocationInstance, theta) -> SentimentVector:
    """Per-agent utilities of a feasible allocation"""
    arr = _theta_array(inst, theta)
    violation = inst.constraint_violation(arr)
    if violation > SIMPLEX_SUM_TOLERANCE:
        raise DomainError(f"allocation is infeasible (violation {violation:.3g})")
    return SentimentVector.of(sentiment_map(inst).evaluate(np.maximum(arr, 0.0)))


def _single_good_target(inst: AllocationInstance, S, model_type) -> Tuple[np.ndarray, np.ndarray]:
    if not isinstance(inst.utility_model, model_type):
        raise DomainError(f"instance has a {inst.utility_model.kind} model, not {model_type.__name__}")
    s = sentiment_array(S)
    if s.size != inst.g:
        raise DimensionMismatchError(f"expected {inst.g} utilities, got {s.size}")
    if np.any(s < 0):
        raise DomainError("target utilities must be nonnegative")
    p = np.asarray(inst.utility_model.p, dtype=float)
    if np.any((p == 0) & (s > 0)):
        raise DomainError("an agent with rate 0 cannot reach a positive utility")
    return s, p


def _checked_allocation(inst: AllocationInstance, theta: np.ndarray) -> Allocation:
    used = float(theta.sum())
    if used > inst.capacities[0] + SIMPLEX_SUM_TOLERANCE:
        raise DomainError(f"target utilities need {used!r} units, capacity is {inst.capacities[0]!r}")
    return Allocation.of(theta[:, None])


def invert_single_linear(inst: AllocationInstance, S) -> Allocation:
    """theta_i = S_i / p_i"""
    s, p = _single_good_target(inst, S, LinearSingle)
    safe = np.where(p > 0, p, 1.0)
    return _checked_allocation(inst, np.where(p > 0, s / safe, 0.0))


def invert_single_sqrt(inst: AllocationInstance, S) -> Allocation:
    """theta_i = S_i / p_i + S_i^2 / (2 p_i^2)"""
    s, p = _single_good_target(inst, S, SqrtSingle)
    safe = np.where(p > 0, p, 1.0)
    ratio = np.where(p > 0, s / safe, 0.0)
    return _checked_allocation(inst, ratio + ratio ** 2 / 2.0)


# Utility-space descriptions
def _column_vertices(inst: AllocationInstance) -> np.ndarray:
    """Vertices of prod_j {x >= 0, sum(x) <= c_j}: each column empty or all on one agent"""
    g, k = inst.g, inst.k
    choices = range(g + 1)
    vertices = []
    for pick in itertools.product(choices, repeat=k):
        theta = np.zeros((g, k))
        for j, i in enumerate(pick):
            if i < g:
                theta[i, j] = inst.capacities[j]
        vertices.append(theta)
    return np.array(vertices)


def _constrained_vertices(inst: AllocationInstance) -> np.ndarray:
    """Active-set enumeration of the vertices of the constrained allocation polytope"""
    g, k = inst.g, inst.k
    n = g * k
    rows, rhs = [], []
    for idx in range(n):
        e = np.zeros(n)
        e[idx] = -1.0
        rows.append(e)
        rhs.append(0.0)
    for j in range(k):
        column = np.zeros((g, k))
        column[:, j] = 1.0
        rows.append(column.ravel())
        rhs.append(inst.capacities[j])
    eq_rows, eq_rhs = [], []
    for constraint in inst.extra_constraints:
        a = np.asarray(constraint.coefficients, dtype=float).ravel()
        if constraint.relation == "eq":
            eq_rows.append(a)
            eq_rhs.append(constraint.rhs)
        elif constraint.relation == "le":
            rows.append(a)
            rhs.append(constraint.rhs)
        else:
            rows.append(-a)
            rhs.append(-constraint.rhs)
    A, b = np.array(rows), np.array(rhs)
    free = n - len(eq_rows)
    vertices = []
    for active in itertools.combinations(range(len(rows)), free):
        system = np.vstack([A[list(active)]] + ([np.array(eq_rows)] if eq_rows else []))
        target = np.concatenate([b[list(active)], np.array(eq_rhs, dtype=float)])
        if np.linalg.matrix_rank(system) < n:
            continue
        theta = np.linalg.solve(system, target)
        if inst.constraint_violation(theta.reshape(g, k)) <= SIMPLEX_SUM_TOLERANCE:
            vertices.append(theta.reshape(g, k))
    if not vertices:
        raise DomainError("the constraint system has no vertices")
    return np.array(vertices)


def allocation_vertices(inst: AllocationInstance) -> np.ndarray:
    """Vertices of the allocation polytope of a linear_multi instance"""
    if inst.g * inst.k > VERTEX_ENUMERATION_LIMIT:
        raise DomainError(f"vertex enumeration is limited to g*k <= {VERTEX_ENUMERATION_LIMIT}")
    if inst.extra_constraints:
        return _constrained_vertices(inst)
    return _column_vertices(inst)


def feasible_utility_set_bounds(inst: AllocationInstance) -> UtilitySetDescription:
    """
    The feasible utility set: a halfspace for one good with linear utility, the
    inversion-consistent ellipsoid for sqrt utility, and the image polytope for
    several goods with linear utility.
    """
    model = inst.utility_model
    if isinstance(model, LinearSingle):
        return UtilitySetDescription(kind="halfspace", rates=model.p, capacity=inst.capacities[0])
    if isinstance(model, SqrtSingle):
        return UtilitySetDescription(kind="ellipsoid", rates=model.p, capacity=inst.capacities[0])
    if isinstance(model, LinearMulti):
        P = np.asarray(model.P, dtype=float)
        images = (P[None, :, :] * allocation_vertices(inst)).sum(axis=2)
        unique = np.unique(np.round(images, 12), axis=0)
        return UtilitySetDescription(kind="polytope", vertices=unique.tolist())
    raise DomainError(f"no utility-space description for {model.kind} instances")


def utility_set_contains(inst: AllocationInstance, S, tol: float = 1e-9) -> bool:
    s = sentiment_array(S)
    if s.size != inst.g:
        raise DimensionMismatchError(f"expected {inst.g} utilities, got {s.size}")
    description = feasible_utility_set_bounds(inst)
    if description.kind == "polytope":
        return in_convex_hull(np.array(description.vertices), s, tol)
    if np.any(s < -tol):
        return False
    s = np.maximum(s, 0.0)
    p = np.asarray(description.rates, dtype=float)
    if np.any((p == 0) & (s > tol)):
        return False
    ratio = np.where(p > 0, s / np.where(p > 0, p, 1.0), 0.0)
    used = ratio.sum() if description.kind == "halfspace" else (ratio + ratio ** 2 / 2.0).sum()
    return bool(used <= description.capacity + tol)


# Closed-form utility-space optima (one good)
def _utility_space_objective(agg) -> Optional[Tuple[float, np.ndarray]]:
    """(gamma, w) when agg is gamma * w.S + (1 - gamma) * min S on utilities"""
    if isinstance(agg, RobustAggregator):
        if agg.sense != Sense.UTILITY:
            return None
        W = agg.weight_set
        if isinstance(W, FullSimplex) and agg.p <= 1:
            return 0.0, np.full(W.g, 1.0 / W.g)
        if agg.p != 1:
            return None
        if isinstance(W, Singleton):
            return 1.0, W.w_star.as_array()
        if isinstance(W, LowerBounded):
            return W.gamma, W.w_star.as_array()
        return None
    if isinstance(agg, PowerMean):
        w = agg.weights.as_array()
        if agg.p == -math.inf and np.all(w > 0):
            return 0.0, w
        if agg.p == 1:
            return 1.0, w
        return None
    if isinstance(agg, Umswf):
        return agg.gamma, agg.base_weights.as_array()
    return None


def _linear_optimum(p: np.ndarray, c: float, gamma: float, w: np.ndarray) -> np.ndarray:
    # a floor s for everyone, the rest of the capacity to the best weighted rate
    B = float(np.sum(1.0 / p))
    best = int(np.argmax(w * p))
    theta = np.zeros_like(p)
    if 1.0 - gamma * w[best] * p[best] * B >= 0:
        theta = (c / B) / p
    else:
        theta[best] = c
    return theta


def _sqrt_floor_cost(p: np.ndarray, s: float) -> np.ndarray:
    return s / p + s ** 2 / (2.0 * p ** 2)


def _egalitarian_sqrt_level(p: np.ndarray, c: float) -> float:
    a = float(np.sum(1.0 / (2.0 * p ** 2)))
    b = float(np.sum(1.0 / p))
    return 2.0 * c / (b + math.sqrt(b * b + 4.0 * a * c))


def _water_fill(marginal: np.ndarray, floor: np.ndarray, c: float) -> np.ndarray:
    """Maximize sum_i marginal_i (sqrt(1 + 2 theta_i) - 1) over theta >= floor, sum(theta) = c"""
    residual = c - float(floor.sum())
    top = float(marginal.max())
    if residual <= 0 or top <= 0:
        return floor.copy()

    def level(nu: float) -> np.ndarray:
        return np.maximum(floor, ((marginal / nu) ** 2 - 1.0) / 2.0)

    hi = float(np.max(marginal / np.sqrt(1.0 + 2.0 * floor)))
    j = int(np.argmax(marginal))
    lo = top / math.sqrt(1.0 + 2.0 * (floor[j] + 2.0 * c))
    nu = brentq(lambda x: level(x).sum() - c, lo, hi, xtol=1e-15, rtol=1e-15)
    theta = level(nu)
    excess = theta - floor
    if excess.sum() > 0:
        theta = floor + excess * (residual / excess.sum())
    return theta


def _sqrt_optimum(p: np.ndarray, c: float, gamma: float, w: np.ndarray) -> np.ndarray:
    s_max = _egalitarian_sqrt_level(p, c)
    if gamma == 0:
        return _sqrt_floor_cost(p, s_max)
    marginal = w * p

    def allocate(s: float) -> np.ndarray:
        return _water_fill(marginal, _sqrt_floor_cost(p, s), c)

    if gamma == 1:
        return allocate(0.0)

    def negative_value(s: float) -> float:
        S = (np.sqrt(1.0 + 2.0 * allocate(s)) - 1.0) * p
        return -(gamma * float(w @ S) + (1.0 - gamma) * float(S.min()))

    result = minimize_scalar(negative_value, bounds=(0.0, s_max), method="bounded", options={"xatol": 1e-12})
    candidates = [0.0, s_max, float(result.x)]
    s_best = min(candidates, key=negative_value)
    return allocate(s_best)


def _adversary(agg, S: SentimentVector) -> np.ndarray:
    if isinstance(agg, RobustAggregator):
        return robust_aggregate(S, agg).w.as_array()
    return effective_weights(agg, S)


def closed_form_optimum(inst: AllocationInstance, agg) -> Optional[SolveReport]:
    """
    Exact optimum for one good with linear or sqrt utility under egalitarian,
    utilitarian and utilitarian-maximin objectives; None when not available.
    """
    model = inst.utility_model
    if not isinstance(model, (LinearSingle, SqrtSingle)):
        return None
    objective = _utility_space_objective(agg)
    if objective is None:
        return None
    p = np.asarray(model.p, dtype=float)
    if np.any(p <= 0):
        return None
    gamma, w = objective
    c = inst.capacities[0]
    if isinstance(model, LinearSingle):
        theta = _linear_optimum(p, c, gamma, w)
    else:
        theta = _sqrt_optimum(p, c, gamma, w)
    # rounding can overshoot the capacity by a few ulps
    if theta.sum() > c:
        theta = theta * (c / theta.sum())
    S = utilities(inst, theta[:, None])
    return SolveReport(
        theta=theta.tolist(),
        shape=[inst.g, 1],
        adversary=_adversary(agg, S).tolist(),
        value=aggregate(agg, S),
        gap_estimate=0.0,
        iterations=0,
        converged=True,
        method="closed_form",
        refined=True,
    )


def _objective_sense(agg) -> ObjectiveSense:
    if getattr(agg, "sense", Sense.UTILITY) == Sense.DISUTILITY:
        return ObjectiveSense.MINIMIZE_MALFARE
    return ObjectiveSense.MAXIMIZE_WELFARE


def solve_allocation(inst: AllocationInstance, agg, cfg: SolveConfig = None) -> SolveReport:
    """
    argmax over feasible allocations of the (robust) aggregator of utilities.

    Runs the maximin solver on the instance's sentiment map; one-good linear and
    sqrt instances are then replaced by the closed-form optimum when the
    objective has one.
    """
    if agg.g != inst.g:
        raise DimensionMismatchError(f"aggregator has {agg.g} groups, instance has {inst.g} agents")
    cfg = cfg or SolveConfig()
    obj = ObjectiveSpec(aggregator=agg, sentiment_map=sentiment_map(inst), sense=_objective_sense(agg))
    report = solve_maximin(obj, feasible_set(inst), cfg=cfg)

    model = inst.utility_model
    if isinstance(model, LogSaturating):
        trimmed = np.minimum(report.theta_array(), model.caps_array())
        report = report.model_copy(update={"theta": trimmed.ravel().tolist()})

    closed = closed_form_optimum(inst, agg)
    if closed is None:
        return report
    scale = max(1.0, abs(closed.value))
    if abs(closed.value - report.value) > 1e-3 * scale:
        logger.warning("iterative value %.10g differs from the closed form %.10g", report.value, closed.value)
    return closed.model_copy(
        update={
            "iterations": report.iterations,
            "method": f"{report.method}+closed_form",
            "seed": cfg.seed,
            "trace": report.trace,
        }
    )
