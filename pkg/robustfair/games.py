"""
Rawlsian games between a Daemon choosing group sentiments and an Angel
choosing group weights: payoffs, strategic values, maximin interchange checks
and the altruistic-Angel equilibrium strategy.
"""
import itertools
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from robustfair.aggregators import _power_mean, power_mean, umswf, utility_transform
from robustfair.allocation import solve_allocation, utilities, utility_set_contains
from robustfair.config import get_settings
from robustfair.exceptions import DimensionMismatchError, DomainError
from robustfair.models import (
    GEOMETRIC_BRANCH_THRESHOLD,
    AggregatorPayoff,
    AllocationDaemonSpace,
    AllocationInstance,
    AltruisticAngel,
    AltruisticStrategy,
    CapacityDaemonSpace,
    Direction,
    Egocentric,
    FiniteDaemonSpace,
    FixedStrategy,
    GameSpec,
    LinearSingle,
    LogSaturating,
    PowerMean,
    PowerTiltedStrategy,
    RobustAggregator,
    Sense,
    SentimentVector,
    SolveConfig,
    SqrtSingle,
    StrategyProfile,
    UtilityTransform,
    WeightVector,
    sentiment_array,
    weight_array,
)
from robustfair.projections import in_convex_hull
from robustfair.schemas import BestResponse, EquilibriumReport, InterchangeResult, StrategicValue
from robustfair.weightsets import best_response, membership, robust_power_mean, simplex_grid

logger = logging.getLogger(__name__)

NO_DEVIATION_TOLERANCE = 1e-9
DOUBLE_ORACLE_MAX_ROUNDS = 200


# Payoffs
def _renormalized(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def _daemon_contains(space, s: np.ndarray, tol: float = 1e-9) -> bool:
    if isinstance(space, FiniteDaemonSpace):
        points = space.as_array()
        if points.shape[1] != s.size:
            return False
        if np.any(np.all(np.abs(points - s) <= tol, axis=1)):
            return True
        return space.convex_hull and in_convex_hull(points, s)
    if isinstance(space, CapacityDaemonSpace):
        return bool(np.all(s >= -tol) and (s / space.rate_array()).sum() <= space.total + tol)
    if isinstance(space.instance.utility_model, LogSaturating):
        return bool(np.all(s >= -tol))
    return utility_set_contains(space.instance, s, tol)


def _check_actions(G: GameSpec, s: np.ndarray, w: np.ndarray) -> None:
    if s.size != G.daemon_space.g or w.size != G.angel_space.g:
        raise DimensionMismatchError("actions do not match the game's dimension")
    if not _daemon_contains(G.daemon_space, s):
        raise DomainError(f"sentiment {s.tolist()} is not a Daemon action")
    if not membership(G.angel_space, w, tol=get_settings().membership_tolerance):
        raise DomainError(f"weights {w.tolist()} are not an Angel action")


def _check_floor(payoff, s: np.ndarray) -> None:
    if payoff.p <= 0 and np.any(s < payoff.s_min):
        raise DomainError(f"sentiment below s_min={payoff.s_min} for p={payoff.p}")


def payoff(G: GameSpec, S, w) -> Tuple[float, float]:
    """(Daemon payoff, Angel payoff) of a pure action pair"""
    s = sentiment_array(S)
    wts = np.asarray(w.weights if isinstance(w, WeightVector) else w, dtype=float)
    _check_actions(G, s, wts)
    wts = _renormalized(wts)
    kind = G.payoff
    if isinstance(kind, Egocentric):
        value = float(wts @ s)
        return value, -value
    if isinstance(kind, AggregatorPayoff):
        agg = kind.aggregator
        if isinstance(agg, PowerMean):
            value = power_mean(s, wts, agg.p)
        else:
            value = umswf(s, agg.gamma, wts, sense=G.sense)
        return value, -value
    if isinstance(kind, UtilityTransform):
        _check_floor(kind, s)
        value = float(wts @ utility_transform(s, kind.p))
        return value, -value
    _check_floor(kind, s)
    return float(wts @ s), power_mean(s, kind.w_star, kind.p)


# Angel strategies
def _tilted_scores(rows: np.ndarray, w_star: np.ndarray, exponent: float) -> np.ndarray:
    """w_star * S**exponent row-wise; a zero with a negative exponent takes all the mass"""
    positive = rows > 0
    base = np.where(positive, rows, 1.0)
    powered = np.where(positive, base ** exponent, 0.0 if exponent > 0 else 1.0)
    if exponent < 0:
        singular = (~positive) & (w_star > 0)
        hit = singular.any(axis=1)
        powered = np.where(hit[:, None], singular.astype(float), powered)
    return w_star * powered


def _altruistic_scores(rows: np.ndarray, w_star: np.ndarray, p: float, s_min: float) -> np.ndarray:
    if p >= GEOMETRIC_BRANCH_THRESHOLD:
        if np.any(rows < 0):
            raise DomainError("altruistic strategy needs nonnegative sentiment")
        return _tilted_scores(rows, w_star, p - 1.0)
    if s_min <= 0:
        raise DomainError(f"altruistic strategy with p={p} needs s_min > 0")
    if np.any(rows < s_min * (1.0 - 1e-12)):
        raise DomainError(f"sentiment below s_min={s_min}")
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        x = np.maximum(rows / s_min, 1.0)
        return w_star * np.log(x) / x
    x = np.minimum(s_min / rows, 1.0)
    return w_star * (x - x ** (1.0 - p))


def _normalized(scores: np.ndarray, w_star: np.ndarray) -> np.ndarray:
    totals = scores.sum(axis=1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(totals > 0, scores / safe, w_star)


def _strategy_weights(strategy, rows: np.ndarray) -> np.ndarray:
    """Angel weights for each row of a sentiment matrix"""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if isinstance(strategy, FixedStrategy):
        return np.tile(strategy.w.as_array(), (rows.shape[0], 1))
    w_star = strategy.w_star.as_array()
    if w_star.size != rows.shape[1]:
        raise DimensionMismatchError(f"strategy has {w_star.size} groups, sentiment {rows.shape[1]}")
    if isinstance(strategy, PowerTiltedStrategy):
        return _normalized(_tilted_scores(rows, w_star, strategy.exponent), w_star)
    return _normalized(_altruistic_scores(rows, w_star, strategy.p, strategy.s_min), w_star)


def altruistic_angel_strategy(p: float, w_star, S, s_min: float = 0.0) -> WeightVector:
    """
    The Angel's equilibrium weights against an altruistic payoff:

        p > 0:  w_i ~ w*_i S_i^(p-1)
        p = 0:  w_i ~ w*_i ln(S_i/s_min) / (S_i/s_min)
        p < 0:  w_i ~ w*_i ((s_min/S_i) - (s_min/S_i)^(1-p))

    All-zero scores fall back to w*.
    """
    strategy = AltruisticStrategy(p=p, w_star=WeightVector.of(weight_array(w_star)), s_min=s_min)
    return apply_strategy(strategy, S)


def apply_strategy(strategy, S) -> WeightVector:
    s = sentiment_array(S)
    return WeightVector.of(_strategy_weights(strategy, s[None, :])[0])


# Strategic values
def _inner_direction(G: GameSpec) -> Direction:
    return Direction.MINIMIZE if G.sense == Sense.UTILITY else Direction.MAXIMIZE


def _inner_response(G: GameSpec, s: np.ndarray) -> BestResponse:
    """The Angel's response to a pure Daemon action, valued in the Daemon's payoff"""
    direction = _inner_direction(G)
    kind, W = G.payoff, G.angel_space
    if isinstance(kind, Egocentric):
        return best_response(W, s, direction)
    if isinstance(kind, AggregatorPayoff):
        agg = kind.aggregator
        if isinstance(agg, PowerMean):
            return robust_power_mean(s, agg.p, W, direction)
        linear = best_response(W, s, direction)
        value = umswf(s, agg.gamma, linear.w, sense=G.sense)
        return linear.model_copy(update={"value": value})
    if isinstance(kind, UtilityTransform):
        _check_floor(kind, s)
        response = best_response(W, utility_transform(s, kind.p), direction)
        return response
    _check_floor(kind, s)
    w = apply_strategy(AltruisticStrategy(p=kind.p, w_star=kind.w_star, s_min=kind.s_min), s)
    return BestResponse(w=w, value=float(w.as_array() @ s))


def _pick(values: np.ndarray, maximize: bool) -> int:
    """Best index, lowest index on ties"""
    target = values.max() if maximize else values.min()
    slack = 1e-12 * max(1.0, abs(float(target)))
    close = np.abs(values - target) <= slack
    return int(np.flatnonzero(close)[0])


def _continuous_instance(space) -> AllocationInstance:
    if isinstance(space, AllocationDaemonSpace):
        return space.instance
    return AllocationInstance(
        g=space.g, k=1, capacities=[space.total], utility_model=LinearSingle(p=space.rate_array().tolist())
    )


def _continuous_aggregator(G: GameSpec) -> RobustAggregator:
    kind = G.payoff
    if isinstance(kind, Egocentric):
        p = 1.0
    elif isinstance(kind, AggregatorPayoff) and isinstance(kind.aggregator, PowerMean):
        p = kind.aggregator.p
    else:
        raise DomainError(f"continuous Daemon spaces support egocentric and power-mean payoffs, not {kind.kind}")
    try:
        return RobustAggregator(p=p, weight_set=G.angel_space, sense=G.sense)
    except ValueError as exc:
        raise DomainError(f"payoff is not concave-convex on a continuous Daemon space: {exc}") from exc


def daemon_strategic_value(G: GameSpec, solve_config: Optional[SolveConfig] = None) -> StrategicValue:
    """
    The Daemon moves first: argmax over its actions of the Angel's worst-case
    payoff (argmin of the best case for disutilities).
    """
    space = G.daemon_space
    if not isinstance(space, FiniteDaemonSpace):
        if solve_config is None:
            raise DomainError("a continuous Daemon space needs a solve configuration")
        instance = _continuous_instance(space)
        report = solve_allocation(instance, _continuous_aggregator(G), solve_config)
        sentiment = utilities(instance, report.theta_array())
        if G.sense == Sense.DISUTILITY:
            sentiment = SentimentVector.of(sentiment.values, Sense.DISUTILITY)
        angel = BestResponse(w=report.adversary, value=report.value, converged=report.converged)
        return StrategicValue(sentiment=sentiment, angel=angel, value=report.value, solve=report)

    points = space.as_array()
    maximize = G.sense == Sense.UTILITY
    if space.convex_hull and isinstance(G.payoff, Egocentric):
        game = _double_oracle(points, G.angel_space, maximize)
        s = game.mixture @ points
        angel = best_response(G.angel_space, s, _inner_direction(G))
        return StrategicValue(
            sentiment=SentimentVector.of(s, G.sense),
            angel=angel,
            value=angel.value,
            mixture=game.mixture.tolist(),
        )

    responses = [_inner_response(G, row) for row in points]
    values = np.array([r.value for r in responses])
    index = _pick(values, maximize)
    return StrategicValue(
        choice_index=index,
        sentiment=space.points[index],
        angel=responses[index],
        value=float(values[index]),
    )


# Matrix games and the interchange check
def solve_matrix_game(M) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Value and optimal mixtures of the zero-sum game where the row player
    maximizes x' M y, by enumerating square kernels (Shapley-Snow).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m, n = M.shape
    # a strictly positive game keeps every kernel value nonzero
    shift = 1.0 - float(M.min())
    A = M + shift
    tol = 1e-10 * max(1.0, float(np.abs(A).max()))
    for size in range(1, min(m, n) + 1):
        for rows in itertools.combinations(range(m), size):
            for cols in itertools.combinations(range(n), size):
                K = A[np.ix_(rows, cols)]
                try:
                    inverse = np.linalg.inv(K)
                except np.linalg.LinAlgError:
                    continue
                total = float(inverse.sum())
                if abs(total) < 1e-14:
                    continue
                v = 1.0 / total
                # x' K = v 1' and K y = v 1
                x_k = v * inverse.sum(axis=0)
                y_k = v * inverse.sum(axis=1)
                if x_k.min() < -tol or y_k.min() < -tol:
                    continue
                x, y = np.zeros(m), np.zeros(n)
                x[list(rows)] = np.clip(x_k, 0.0, None)
                y[list(cols)] = np.clip(y_k, 0.0, None)
                x /= x.sum()
                y /= y.sum()
                if np.all(x @ A >= v - tol) and np.all(A @ y <= v + tol):
                    return v - shift, x, y
    raise DomainError("no square kernel solved the matrix game")


class _GameSolution:
    def __init__(self, value: float, lower: float, upper: float, mixture: np.ndarray, angel: np.ndarray, rounds: int):
        self.value, self.lower, self.upper = value, lower, upper
        self.mixture, self.angel, self.rounds = mixture, angel, rounds


def _double_oracle(points: np.ndarray, W, maximize: bool) -> _GameSolution:
    """
    Daemon mixes over `points`, the Angel picks w in W; payoff w . S (negated
    for disutilities). Angel pure strategies grow by best response.
    """
    sign = 1.0 if maximize else -1.0
    V = sign * points
    angels: List[np.ndarray] = [best_response(W, V.mean(axis=0)).w.as_array()]
    lower, upper = -math.inf, math.inf
    x = np.full(V.shape[0], 1.0 / V.shape[0])
    w_bar = angels[0]
    rounds = 0
    for rounds in range(1, DOUBLE_ORACLE_MAX_ROUNDS + 1):
        M = V @ np.array(angels).T
        _, x, y = solve_matrix_game(M)
        w_bar = y @ np.array(angels)
        response = best_response(W, x @ V)
        lower = response.value
        upper = float((V @ w_bar).max())
        if upper - lower <= 1e-12 * max(1.0, abs(upper)):
            break
        candidate = response.w.as_array()
        if any(np.allclose(candidate, a, atol=1e-12) for a in angels):
            break
        angels.append(candidate)
    else:
        logger.warning("double oracle stopped at %d rounds with bounds [%.10g, %.10g]", rounds, lower, upper)
    if maximize:
        return _GameSolution(lower, lower, upper, x, w_bar, rounds)
    return _GameSolution(-lower, -upper, -lower, x, w_bar, rounds)


def check_interchange(G: GameSpec, tol: float = 1e-6) -> InterchangeResult:
    """
    |max-min - min-max| of the egocentric game. With the convex hull enabled the
    Daemon mixes over its points; otherwise max-min is over pure points.
    """
    if not isinstance(G.payoff, Egocentric):
        raise DomainError("the interchange check needs an egocentric payoff")
    space = G.daemon_space
    if not isinstance(space, FiniteDaemonSpace):
        raise DomainError("the interchange check needs a finite Daemon space")
    points = space.as_array()
    maximize = G.sense == Sense.UTILITY
    game = _double_oracle(points, G.angel_space, maximize)
    minmax = game.upper if maximize else game.lower

    if space.convex_hull:
        maxmin, mixture = (game.lower if maximize else game.upper), game.mixture
    else:
        direction = _inner_direction(G)
        values = np.array([best_response(G.angel_space, row, direction).value for row in points])
        index = _pick(values, maximize)
        maxmin = float(values[index])
        mixture = np.zeros(points.shape[0])
        mixture[index] = 1.0

    gap = abs(minmax - maxmin)
    return InterchangeResult(
        gap=gap,
        ok=gap <= tol,
        maxmin=maxmin,
        minmax=minmax,
        hull=space.convex_hull,
        iterations=game.rounds,
        daemon_mixture=mixture.tolist(),
        angel_weights=WeightVector.of(_renormalized(game.angel)),
    )


# Equilibrium verification
def daemon_grid(G: GameSpec, resolution: float) -> np.ndarray:
    """Daemon actions on a grid of the given resolution (finite spaces: the points, or their hull)"""
    space = G.daemon_space
    if isinstance(space, FiniteDaemonSpace):
        points = space.as_array()
        if not space.convex_hull:
            return points
        return simplex_grid(points.shape[0], resolution) @ points
    if isinstance(space, CapacityDaemonSpace):
        shares = simplex_grid(space.g + 1, resolution)[:, : space.g]
        return shares * space.total * space.rate_array()
    instance = space.instance
    model = instance.utility_model
    if not isinstance(model, (LinearSingle, SqrtSingle)):
        raise DomainError("grid discretization supports one-good linear and sqrt instances")
    shares = simplex_grid(instance.g + 1, resolution)[:, : instance.g]
    theta = shares * instance.capacities[0]
    p = np.asarray(model.p, dtype=float)
    if isinstance(model, LinearSingle):
        return theta * p
    return (np.sqrt(1.0 + 2.0 * theta) - 1.0) * p


def _power_mean_rows(rows: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """M_p(row; w) for every row"""
    support = w > 0
    vals, wts = rows[:, support], w[support]
    if math.isinf(p):
        return vals.min(axis=1) if p < 0 else vals.max(axis=1)
    has_zero = np.any(vals == 0, axis=1)
    safe = np.where(vals > 0, vals, 1.0)
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        return np.where(has_zero, 0.0, np.exp(np.log(safe) @ wts))
    if p < 0:
        scale = safe.min(axis=1)
        out = scale * ((safe / scale[:, None]) ** p @ wts) ** (1.0 / p)
        return np.where(has_zero, 0.0, out)
    scale = vals.max(axis=1)
    safe_scale = np.where(scale > 0, scale, 1.0)
    return scale * ((vals / safe_scale[:, None]) ** p @ wts) ** (1.0 / p)


def verify_equilibrium(G: GameSpec, profile: StrategyProfile, resolution: float = 1e-2) -> EquilibriumReport:
    """
    Search the gridded Daemon space for a profitable deviation from the
    profile's Daemon choice against the fixed Angel strategy, and check that no
    grid point gives the Angel a higher payoff.
    """
    kind = G.payoff
    if not isinstance(kind, AltruisticAngel):
        raise DomainError("equilibrium verification needs an altruistic-angel payoff")
    grid = daemon_grid(G, resolution)
    if kind.s_min > 0 or kind.p <= 0:
        grid = grid[np.all(grid >= kind.s_min, axis=1)]
    if grid.shape[0] == 0:
        raise DomainError("no grid point satisfies s_min")
    w_star = kind.w_star.as_array()
    angel_values = _power_mean_rows(grid, w_star, kind.p)

    choice = profile.daemon_choice
    if choice is None:
        s0 = grid[int(np.argmax(angel_values))]
    elif isinstance(choice, int):
        if not isinstance(G.daemon_space, FiniteDaemonSpace):
            raise DomainError("an index choice needs a finite Daemon space")
        s0 = G.daemon_space.as_array()[choice]
    else:
        s0 = choice.as_array()
    if s0.size != grid.shape[1]:
        raise DimensionMismatchError("Daemon choice does not match the game's dimension")

    strategy = profile.angel_strategy
    daemon_values = (_strategy_weights(strategy, grid) * grid).sum(axis=1)
    chosen = float(_strategy_weights(strategy, s0[None, :])[0] @ s0)
    best = int(np.argmax(daemon_values))
    improvement = max(0.0, float(daemon_values[best]) - chosen)
    no_deviation = improvement <= NO_DEVIATION_TOLERANCE

    angel_payoff = _power_mean(s0, w_star, kind.p)
    best_angel = float(angel_values.max())
    logger.info("equilibrium check on %d grid points: improvement %.3g", grid.shape[0], improvement)
    return EquilibriumReport(
        no_deviation=no_deviation,
        max_improvement=improvement,
        daemon_choice=SentimentVector.of(s0, G.sense),
        deviation=None if no_deviation else SentimentVector.of(grid[best], G.sense),
        angel_payoff=angel_payoff,
        best_angel_payoff=best_angel,
        angel_optimal=angel_payoff >= best_angel - NO_DEVIATION_TOLERANCE * max(1.0, abs(best_angel)),
        grid_points=int(grid.shape[0]),
    )
