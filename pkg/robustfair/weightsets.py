"""
Angel action spaces W inside the simplex and their best-response oracles.

Every oracle minimizes c . w over W; maximization runs on -c so the
lowest-index tie rule carries over unchanged.
"""
import itertools
import logging
import math
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from robustfair.aggregators import _check_nonnegative, _power_mean
from robustfair.config import get_settings
from robustfair.exceptions import DimensionMismatchError, DomainError, GridTooLargeError
from robustfair.models import (
    GEOMETRIC_BRANCH_THRESHOLD,
    Direction,
    FullSimplex,
    LowerBounded,
    Norm,
    NormBall,
    PermutationOrbit,
    RobustAggregator,
    Sense,
    Singleton,
    WeightVector,
    sentiment_array,
)
from robustfair.projections import (
    dykstra,
    l1_ball_projection,
    l2_ball_projection,
    linf_ball_projection,
    simplex_projection,
)
from robustfair.schemas import BestResponse, CoordinateBounds, DiameterBound

logger = logging.getLogger(__name__)

# stand-in for +/-inf in transformed sentiment so the oracles keep finite arithmetic
_HUGE = 1e300

# (w, exact, converged)
Response = Tuple[np.ndarray, bool, bool]


def _unit(g: int, i: int) -> np.ndarray:
    e = np.zeros(g)
    e[i] = 1.0
    return e


def _check_dimension(W, s: np.ndarray) -> None:
    if W.g != s.size:
        raise DimensionMismatchError(f"weight set has dimension {W.g}, sentiment has {s.size} entries")


def _permutations(sorted_weights: np.ndarray) -> np.ndarray:
    """Distinct rearrangements in lexicographic order"""
    return np.array(sorted(set(itertools.permutations(sorted_weights.tolist()))))


# Greedy kernels for balls around a single center
def _linf_greedy(center: np.ndarray, radius: float, c: np.ndarray) -> np.ndarray:
    lower = np.maximum(0.0, center - radius)
    upper = np.minimum(1.0, center + radius)
    w = lower.copy()
    residual = 1.0 - lower.sum()
    for i in np.argsort(c, kind="stable"):
        if residual <= 0:
            break
        add = min(upper[i] - lower[i], residual)
        w[i] += add
        residual -= add
    return w


def _l1_greedy(center: np.ndarray, radius: float, c: np.ndarray) -> np.ndarray:
    w = center.copy()
    target = int(np.argmin(c))
    budget = min(radius / 2.0, 1.0 - w[target])
    for i in np.argsort(-c, kind="stable"):
        if budget <= 0 or c[i] <= c[target]:
            break
        take = min(w[i], budget)
        w[i] -= take
        w[target] += take
        budget -= take
    return w


def _l2_ball(center: np.ndarray, radius: float, c: np.ndarray) -> Tuple[np.ndarray, bool, bool, Optional[float]]:
    """
    min c.w over the simplex intersected with an L2 ball.

    The optimum lies on the path w(tau) = proj(center - tau c), whose distance
    to the center is nondecreasing in tau; tau is found by bracketing and Brent's
    method. Returns (w, exact, converged, tau) with tau None when the ball is slack.
    """
    settings = get_settings()
    g = c.size
    vertex = _unit(g, int(np.argmin(c)))
    if radius == 0:
        return center.copy(), True, True, None
    if np.linalg.norm(vertex - center) <= radius:
        return vertex, True, True, None
    spread = float(c.max() - c.min())
    if spread == 0:
        return center.copy(), True, True, None
    direction = (c - c.min()) / spread

    def excess(tau: float) -> float:
        return float(np.linalg.norm(simplex_projection(center - tau * direction) - center)) - radius

    hi = 1.0
    while excess(hi) < 0 and hi < 1e12:
        hi *= 2.0
    if excess(hi) < 0:
        # the minimizing face is reachable without exhausting the radius
        return simplex_projection(center - hi * direction), False, True, None
    tau, result = brentq(
        excess, 0.0, hi, xtol=1e-15, maxiter=settings.l2_max_iterations, full_output=True, disp=False
    )
    if not result.converged:
        logger.warning("L2 ball oracle stopped after %d iterations", result.iterations)
    w = simplex_projection(center - tau * direction)
    offset = w - center
    norm = float(np.linalg.norm(offset))
    if norm > radius + settings.l2_feasibility_tolerance:
        w = center + offset * (radius / norm)
    return w, False, bool(result.converged), tau / spread


def _l2_lower_bounded(gamma: float, w_star: np.ndarray, radius: float, c: np.ndarray) -> Response:
    """Ball around the best base vertex, refined by projected subgradient on the base mixture"""
    g = c.size
    anchor = gamma * w_star
    mix = _unit(g, int(np.argmin(c)))
    w, _, converged, tau = _l2_ball(anchor + (1 - gamma) * mix, radius, c)
    best, best_value = w, float(c @ w)
    if gamma == 1.0 or tau is None:
        return best, False, converged
    for k in range(1, 61):
        base = anchor + (1 - gamma) * mix
        grad = (1 - gamma) * (base - w) / tau
        norm = float(np.linalg.norm(grad))
        if norm < 1e-14:
            break
        mix = simplex_projection(mix - (0.5 / math.sqrt(k)) * grad / norm)
        w, _, ok, tau = _l2_ball(anchor + (1 - gamma) * mix, radius, c)
        converged = converged and ok
        if float(c @ w) < best_value:
            best, best_value = w, float(c @ w)
        if tau is None:
            break
    return best, False, converged


def _ball_around(center: np.ndarray, norm: Norm, radius: float, c: np.ndarray) -> Response:
    if norm == Norm.LINF:
        return _linf_greedy(center, radius, c), True, True
    if norm == Norm.L1:
        return _l1_greedy(center, radius, c), True, True
    w, exact, converged, _ = _l2_ball(center, radius, c)
    return w, exact, converged


def _norm_ball(W: NormBall, c: np.ndarray) -> Response:
    base = W.base
    if isinstance(base, Singleton):
        return _ball_around(base.w_star.as_array(), W.norm, W.radius, c)
    if isinstance(base, LowerBounded):
        if W.norm == Norm.L2:
            return _l2_lower_bounded(base.gamma, base.w_star.as_array(), W.radius, c)
        point = base.gamma * base.w_star.as_array() + (1 - base.gamma) * _unit(c.size, int(np.argmin(c)))
        return _ball_around(point, W.norm, W.radius, c)
    # permutation orbit: union of balls around each rearrangement
    u = base.sorted_weights.as_array()
    if c.size > get_settings().permutation_enumeration_limit:
        center = _sort_pairing(u, c)
        w, _, converged = _ball_around(center, W.norm, W.radius, c)
        return w, False, converged
    best = None
    for center in _permutations(u):
        w, exact, converged = _ball_around(center, W.norm, W.radius, c)
        value = float(c @ w)
        if best is None or value < best[1] - 1e-15:
            best = (w, value, exact, converged)
    return best[0], best[2], best[3]


def _sort_pairing(sorted_weights: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Largest weight on the smallest cost, stable in index"""
    w = np.empty_like(c)
    w[np.argsort(c, kind="stable")] = sorted_weights[::-1]
    return w


def _respond(W, c: np.ndarray, minimize: bool = True) -> Response:
    if not minimize:
        c = -c
    if isinstance(W, FullSimplex):
        return _unit(c.size, int(np.argmin(c))), True, True
    if isinstance(W, Singleton):
        return W.w_star.as_array(), True, True
    if isinstance(W, LowerBounded):
        point = W.gamma * W.w_star.as_array() + (1 - W.gamma) * _unit(c.size, int(np.argmin(c)))
        return point, True, True
    if isinstance(W, PermutationOrbit):
        return _sort_pairing(W.sorted_weights.as_array(), c), True, True
    if isinstance(W, NormBall):
        return _norm_ball(W, c)
    raise DomainError(f"unknown weight set {type(W).__name__}")


def _response(w: np.ndarray, s: np.ndarray, exact: bool, converged: bool, value: float = None) -> BestResponse:
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    return BestResponse(
        w=WeightVector(weights=w.tolist()),
        value=float(w @ s) if value is None else value,
        exact=exact,
        converged=converged,
    )


def best_response(W, S, direction: Direction = Direction.MINIMIZE) -> BestResponse:
    """
    The Angel's best response min (or max) of w . S over W.

    Closed forms cover the simplex, singleton, lower-bounded and permutation
    sets; L1/Linf balls use exact greedy mass transport; L2 balls are iterative
    (exact=False).
    """
    s = sentiment_array(S)
    _check_dimension(W, s)
    w, exact, converged = _respond(W, s, direction == Direction.MINIMIZE)
    return _response(w, s, exact, converged)


# Membership
def _distance_rows(diff: np.ndarray, norm: Norm) -> np.ndarray:
    if norm == Norm.L1:
        return np.abs(diff).sum(axis=1)
    if norm == Norm.L2:
        return np.linalg.norm(diff, axis=1)
    return np.abs(diff).max(axis=1)


def _lower_bounded_ball_mask(base: LowerBounded, norm: Norm, radius: float, P: np.ndarray, tol: float) -> np.ndarray:
    anchor = base.gamma * base.w_star.as_array()
    if norm == Norm.L1:
        return 2.0 * np.maximum(anchor - P, 0.0).sum(axis=1) <= radius + tol
    if norm == Norm.LINF:
        rho = radius + tol
        return np.all(P >= anchor - rho, axis=1) & (np.maximum(anchor, P - rho).sum(axis=1) <= 1.0 + tol)
    if base.gamma == 1.0:
        nearest = np.broadcast_to(anchor, P.shape)
    else:
        free = 1.0 - base.gamma
        nearest = anchor + free * simplex_projection((P - anchor) / free)
    return np.linalg.norm(P - nearest, axis=1) <= radius + tol


def _membership_mask(W, P: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized membership of the rows of P, which are assumed to be on the simplex"""
    if isinstance(W, FullSimplex):
        return np.ones(P.shape[0], dtype=bool)
    if isinstance(W, Singleton):
        return np.abs(P - W.w_star.as_array()).max(axis=1) <= tol
    if isinstance(W, LowerBounded):
        return np.all(P >= W.gamma * W.w_star.as_array() - tol, axis=1)
    if isinstance(W, PermutationOrbit):
        return np.abs(np.sort(P, axis=1) - W.sorted_weights.as_array()).max(axis=1) <= tol
    base = W.base
    if isinstance(base, Singleton):
        return _distance_rows(P - base.w_star.as_array(), W.norm) <= W.radius + tol
    if isinstance(base, PermutationOrbit):
        diff = np.sort(P, axis=1) - base.sorted_weights.as_array()
        return _distance_rows(diff, W.norm) <= W.radius + tol
    return _lower_bounded_ball_mask(base, W.norm, W.radius, P, tol)


def membership_mask(W, points, tol: float = 1e-9) -> np.ndarray:
    """Row-wise membership of a (n, g) array of candidate weight vectors"""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != W.g:
        raise DimensionMismatchError(f"weight set has dimension {W.g}, got points of shape {P.shape}")
    on_simplex = np.all(P >= -tol, axis=1) & (np.abs(P.sum(axis=1) - 1.0) <= tol)
    return on_simplex & _membership_mask(W, P, tol)


def membership(W, w, tol: float = 1e-9) -> bool:
    """True iff w lies in W within tol"""
    arr = np.asarray(w.weights if isinstance(w, WeightVector) else w, dtype=float)
    if arr.ndim != 1 or arr.size != W.g:
        raise DimensionMismatchError(f"weight set has dimension {W.g}, got {arr.size} weights")
    return bool(membership_mask(W, arr[None, :], tol)[0])


# Geometry
def _base_diameter(W) -> float:
    g = W.g
    if isinstance(W, Singleton) or g == 1:
        return 0.0
    if isinstance(W, FullSimplex):
        return 2.0
    if isinstance(W, LowerBounded):
        return 2.0 * (1.0 - W.gamma)
    u = W.sorted_weights.as_array()
    return float(np.abs(u - u[::-1]).sum())


def _support_width_diameter(W) -> float:
    """max over sign vectors s of (max_W s.w - min_W s.w); exact for polytopal sets"""
    g = W.g
    best = 0.0
    for tail in itertools.product((1.0, -1.0), repeat=g - 1):
        signs = np.array((1.0,) + tail)
        hi = _respond(W, signs, minimize=False)[0] @ signs
        lo = _respond(W, signs, minimize=True)[0] @ signs
        best = max(best, float(hi - lo))
    return min(best, 2.0)


def diameter_l1(W) -> DiameterBound:
    """sup over u, v in W of ||u - v||_1, flagged when only an upper bound is available"""
    if not isinstance(W, NormBall):
        return DiameterBound(value=_base_diameter(W), upper_bound=False)
    g = W.g
    if g == 1:
        return DiameterBound(value=0.0, upper_bound=False)
    small = g <= (5 if isinstance(W.base, PermutationOrbit) else 12)
    if W.norm != Norm.L2 and small:
        return DiameterBound(value=_support_width_diameter(W), upper_bound=False)
    spread = {Norm.L1: 2.0 * W.radius, Norm.LINF: 2.0 * g * W.radius, Norm.L2: 2.0 * W.radius * math.sqrt(g)}
    return DiameterBound(value=min(2.0, _base_diameter(W.base) + spread[W.norm]), upper_bound=True)


def coordinate_bounds(W) -> CoordinateBounds:
    """Inf and sup of the coordinate values attained over W; L2 balls err outward"""
    g = W.g
    if isinstance(W, NormBall) and W.norm == Norm.L2:
        inner = coordinate_bounds(W.base)
        return CoordinateBounds(
            w_min=max(0.0, inner.w_min - W.radius),
            w_max=min(1.0, inner.w_max + W.radius),
            exact=False,
        )
    lows, highs = [], []
    for i in range(g):
        e = _unit(g, i)
        lows.append(float(_respond(W, e, minimize=True)[0][i]))
        highs.append(float(_respond(W, e, minimize=False)[0][i]))
    return CoordinateBounds(w_min=max(0.0, min(lows)), w_max=min(1.0, max(highs)), exact=True)


def vertices(W) -> Optional[np.ndarray]:
    """Extreme points of the simpler polytopal variants, None otherwise"""
    g = W.g
    if isinstance(W, Singleton):
        return W.w_star.as_array()[None, :]
    if isinstance(W, FullSimplex):
        return np.eye(g)
    if isinstance(W, LowerBounded):
        return W.gamma * W.w_star.as_array() + (1 - W.gamma) * np.eye(g)
    if isinstance(W, PermutationOrbit) and g <= get_settings().permutation_enumeration_limit:
        return _permutations(W.sorted_weights.as_array())
    return None


def project(W, v) -> np.ndarray:
    """Euclidean projection onto W for the variants descent-ascent supports"""
    v = np.asarray(v, dtype=float)
    if isinstance(W, FullSimplex):
        return simplex_projection(v)
    if isinstance(W, Singleton):
        return W.w_star.as_array()
    if isinstance(W, LowerBounded):
        anchor = W.gamma * W.w_star.as_array()
        if W.gamma == 1.0:
            return anchor
        free = 1.0 - W.gamma
        return anchor + free * simplex_projection((v - anchor) / free)
    if isinstance(W, NormBall) and isinstance(W.base, Singleton):
        center = W.base.w_star.as_array()
        ball = {
            Norm.L1: l1_ball_projection,
            Norm.L2: l2_ball_projection,
            Norm.LINF: linf_ball_projection,
        }[W.norm]
        return dykstra(v, [lambda x: ball(x, center, W.radius), simplex_projection])
    raise DomainError(f"no Euclidean projection available for {W.kind} weight sets")


# Brute force
def simplex_grid(g: int, resolution: float) -> np.ndarray:
    """All simplex points whose coordinates are multiples of 1/n, n = round(1/resolution)"""
    settings = get_settings()
    if g > 4:
        raise GridTooLargeError(f"brute-force grids support g <= 4, got {g}")
    n = max(1, int(round(1.0 / resolution)))
    count = math.comb(n + g - 1, g - 1)
    if count > settings.grid_max_points:
        raise GridTooLargeError(f"grid with {count} points exceeds the limit of {settings.grid_max_points}")
    return _grid_points(g, n).copy()


@lru_cache(maxsize=16)
def _grid_points(g: int, n: int) -> np.ndarray:
    if g == 1:
        return np.ones((1, 1))
    bars = np.array(list(itertools.combinations(range(n + g - 1), g - 1)))
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), n + g - 1)])
    return (np.diff(edges, axis=1) - 1) / n


def brute_force_best_response(
    W, S, direction: Direction = Direction.MINIMIZE, resolution: float = 1e-3, candidates=None
) -> BestResponse:
    """
    Exhaustive search over the simplex grid intersected with W (membership within
    `resolution`), or over explicit candidate weight vectors when given.
    """
    s = sentiment_array(S)
    _check_dimension(W, s)
    if candidates is not None:
        P = np.asarray(candidates, dtype=float)
        if P.ndim != 2 or P.shape[1] != s.size:
            raise DimensionMismatchError(f"candidates must have {s.size} columns, got shape {P.shape}")
    else:
        P = simplex_grid(s.size, resolution)
        P = P[_membership_mask(W, P, resolution)]
    if P.shape[0] == 0:
        raise DomainError("no grid point lies in the weight set at this resolution")
    values = P @ s
    idx = int(np.argmin(values) if direction == Direction.MINIMIZE else np.argmax(values))
    return _response(P[idx], s, exact=True, converged=True, value=float(values[idx]))


# Robust power means
def _support_threshold(s: np.ndarray, W, p: float, minimize: bool) -> Response:
    """inf/sup over W of the min (p=-inf) or max (p=+inf) of S over supp(w)"""
    g = s.size
    aligned = (p < 0) == minimize
    if aligned:
        # extreme over the union of supports
        order = np.argsort(s if p < 0 else -s, kind="stable")
        for i in order:
            w, exact, converged = _respond(W, _unit(g, int(i)), minimize=False)
            if w[i] > 1e-12:
                return w, exact, converged
    else:
        levels = np.unique(s)
        levels = levels[::-1] if p < 0 else levels
        for level in levels:
            excluded = (s < level) if p < 0 else (s > level)
            w, exact, converged = _respond(W, excluded.astype(float), minimize=True)
            if w[excluded].sum() <= 1e-12:
                w = np.where(excluded, 0.0, w)
                return w, exact, converged
    raise DomainError("weight set has no admissible support")


def _robust_weights(s: np.ndarray, p: float, W, minimize: bool) -> Response:
    """Weights attaining inf (or sup) of M_p(s; w) over W"""
    if math.isinf(p):
        w, exact, converged = _support_threshold(s, W, p, minimize)
    else:
        with np.errstate(divide="ignore"):
            if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
                transformed = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -_HUGE)
                flip = False
            elif p > 0:
                transformed, flip = s ** p, False
            else:
                transformed = np.where(s > 0, np.where(s > 0, s, 1.0) ** p, _HUGE)
                flip = True
        w, exact, converged = _respond(W, transformed, minimize != flip)
    w = np.clip(w, 0.0, None)
    return w / w.sum(), exact, converged


def robust_power_mean(S, p: float, W, direction: Direction = Direction.MINIMIZE) -> BestResponse:
    """
    inf (or sup) over W of M_p(S; w), reduced exactly to the linear oracle on a
    monotone transform of S.
    """
    s = sentiment_array(S)
    _check_dimension(W, s)
    _check_nonnegative(s)
    p = float(p)
    w, exact, converged = _robust_weights(s, p, W, direction == Direction.MINIMIZE)
    return _response(w, s, exact, converged, value=_power_mean(s, w, p))


def robust_aggregate(S, a: RobustAggregator) -> BestResponse:
    """M_p(S; W): inf over W for welfare, sup for malfare"""
    direction = Direction.MINIMIZE if a.sense == Sense.UTILITY else Direction.MAXIMIZE
    return robust_power_mean(S, a.p, a.weight_set, direction)


def best_responses(W, rows: np.ndarray, minimize: bool = True) -> List[np.ndarray]:
    """Best responses against each row of a cost matrix"""
    return [_respond(W, np.asarray(row, dtype=float), minimize)[0] for row in rows]
