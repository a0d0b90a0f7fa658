import logging
from typing import Optional

import numpy as np

from robustfair.aggregators import aggregate, gradient
from robustfair.allocation import solve_allocation, utilities
from robustfair.bounds import (
    generalization_sandwich,
    holder_certificate,
    holder_empirical_check,
    robust_gap_bound,
    sample_complexity,
    sample_complexity_bound,
    sandwich,
)
from robustfair.exceptions import DomainError
from robustfair.games import (
    altruistic_angel_strategy,
    check_interchange,
    daemon_strategic_value,
    verify_equilibrium,
)
from robustfair.models import (
    AltruisticAngel,
    AltruisticStrategy,
    Direction,
    FiniteDaemonSpace,
    PowerMean,
    RobustAggregator,
    SampleComplexityQuery,
    StrategyProfile,
    WeightVector,
)
from robustfair.schemas import (
    AdversaryBody,
    AggregateBody,
    AllocationBody,
    BoundsBody,
    GameBody,
    ServiceOutcome,
    SolveReport,
)
from robustfair.weightsets import best_response, diameter_l1, robust_aggregate

logger = logging.getLogger(__name__)


def _dump(model) -> dict:
    return model.model_dump(mode="json", by_alias=True)


class AggregateService:
    """Service class for evaluating aggregators"""

    @staticmethod
    def evaluate(body: AggregateBody, with_gradient: bool = False) -> ServiceOutcome:
        """Aggregate value, the weights a robust aggregator settles on and optionally the gradient"""
        agg, S = body.aggregator, body.sentiment
        result = {"value": aggregate(agg, S)}
        if isinstance(agg, RobustAggregator):
            response = robust_aggregate(S, agg)
            result["weights"] = response.w.weights
            result["exact"] = response.exact
        if with_gradient:
            result["gradient"] = gradient(agg, S).tolist()
        return ServiceOutcome(result=result, diagnostics={"kind": agg.kind, "g": S.g})


class AdversaryService:
    """Service class for weight-set best responses"""

    @staticmethod
    def respond(body: AdversaryBody, direction: Optional[Direction] = None) -> ServiceOutcome:
        direction = direction or body.direction
        response = best_response(body.weight_set, body.sentiment, direction)
        result = _dump(response)
        result["direction"] = direction.value
        return ServiceOutcome(
            result=result,
            diagnostics={"weight_set": body.weight_set.kind, "diameter_l1": _dump(diameter_l1(body.weight_set))},
            converged=response.converged,
        )


class AllocationService:
    """Service class for robust allocation solves"""

    @staticmethod
    def solve(
        body: AllocationBody, seed: int = None, tolerance: float = None, record_trace: bool = False
    ) -> SolveReport:
        update = {}
        if seed is not None:
            update["seed"] = seed
        if tolerance is not None:
            update["tolerance"] = tolerance
        if record_trace:
            update["record_trace"] = True
        cfg = body.config.model_copy(update=update)
        return solve_allocation(body.instance, body.aggregator, cfg)

    @staticmethod
    def outcome(body: AllocationBody, report: SolveReport) -> ServiceOutcome:
        """Report sections for a finished solve; the trace goes to CSV, not JSON"""
        result = _dump(report)
        result.pop("trace", None)
        result["utilities"] = utilities(body.instance, report.theta_array()).values
        return ServiceOutcome(
            result=result,
            diagnostics={
                "iterations": report.iterations,
                "gap_estimate": report.gap_estimate,
                "seed": report.seed,
                "method": report.method,
            },
            converged=report.converged,
        )


class GameService:
    """Service class for Daemon/Angel games"""

    @staticmethod
    def analyze(
        body: GameBody,
        verify: bool = False,
        resolution: float = 1e-2,
        interchange: bool = False,
        tolerance: float = None,
    ) -> ServiceOutcome:
        G = body.game
        result, converged = {}, True
        if isinstance(G.daemon_space, FiniteDaemonSpace) or body.solve_config is not None:
            value = daemon_strategic_value(G, body.solve_config)
            result["strategic_value"] = _dump(value)
            if value.solve is not None:
                converged = value.solve.converged
        if body.strategy_at is not None:
            result["strategy"] = GameService._equilibrium_strategy(G, body.strategy_at).weights
        if verify:
            profile = body.profile or GameService._default_profile(G)
            result["equilibrium"] = _dump(verify_equilibrium(G, profile, resolution))
        if interchange:
            check = check_interchange(G) if tolerance is None else check_interchange(G, tolerance)
            result["interchange"] = _dump(check)
        if not result:
            raise DomainError("nothing to compute: give a finite Daemon space, a solve_config, strategy_at or a flag")
        diagnostics = {"daemon_space": G.daemon_space.kind, "payoff": G.payoff.kind}
        if verify:
            diagnostics["grid_resolution"] = resolution
        return ServiceOutcome(result=result, diagnostics=diagnostics, converged=converged)

    @staticmethod
    def _equilibrium_strategy(G, S) -> WeightVector:
        kind = G.payoff
        if not isinstance(kind, AltruisticAngel):
            raise DomainError("strategy_at needs an altruistic-angel payoff")
        return altruistic_angel_strategy(kind.p, kind.w_star, S, kind.s_min)

    @staticmethod
    def _default_profile(G) -> StrategyProfile:
        kind = G.payoff
        if not isinstance(kind, AltruisticAngel):
            raise DomainError("equilibrium verification needs an altruistic-angel payoff")
        return StrategyProfile(angel_strategy=AltruisticStrategy(p=kind.p, w_star=kind.w_star, s_min=kind.s_min))


class BoundsService:
    """Service class for sandwich, gap, generalization and continuity bounds"""

    @staticmethod
    def compute(body: BoundsBody, trials: int = None, seed: int = None) -> ServiceOutcome:
        S, W = body.sentiment, body.weight_set
        s = S.as_array()
        result = {
            "sandwich": _dump(sandwich(S, body.aggregator, W)),
            "robust_gap_bound": robust_gap_bound(float(np.ptp(s)), W),
        }
        diagnostics = {"diameter_l1": _dump(diameter_l1(W))}
        if body.epsilon is not None:
            result["generalization"] = _dump(generalization_sandwich(S, body.epsilon, body.aggregator))
        if body.holder is not None:
            certs = holder_certificate(body.holder.p, W, body.holder.r)
            result["holder"] = _dump(certs)
            if certs.tightest is not None:
                # only the order matters here; the weights come from W
                order = PowerMean(p=body.holder.p, weights=WeightVector.of(np.full(W.g, 1.0 / W.g)))
                check = holder_empirical_check(order, W, certs.tightest, trials=trials, r=body.holder.r, seed=seed)
                result["holder_check"] = _dump(check)
                diagnostics["seed"] = check.seed
        return ServiceOutcome(result=result, diagnostics=diagnostics)


class SampleComplexityService:
    """Service class for sample-complexity queries"""

    @staticmethod
    def compute(q: SampleComplexityQuery) -> ServiceOutcome:
        return ServiceOutcome(
            result={"m": sample_complexity(q), "bound": sample_complexity_bound(q)},
            diagnostics={"norm": q.norm.value, "g": q.g},
        )
