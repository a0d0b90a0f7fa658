import math

import numpy as np
import pytest
from pydantic import ValidationError

from robustfair.aggregators import power_mean
from robustfair.allocation import LogSaturatingMap, SqrtSingleMap
from robustfair.exceptions import (
    ConvergenceError,
    CurvatureViolationError,
    DimensionMismatchError,
    DomainError,
)
from robustfair.models import (
    ConstantStep,
    FullSimplex,
    GradientAscentOracle,
    LinearConstraint,
    LowerBounded,
    Norm,
    NormBall,
    ObjectiveSense,
    PermutationOrbit,
    PowerMean,
    RobustAggregator,
    Sense,
    Singleton,
    SolveConfig,
    WeightVector,
)
from robustfair.solvers import (
    BoxSet,
    CapacitySet,
    IdentityMap,
    LinearMap,
    ObjectiveSpec,
    ScaledSimplexSet,
    SentimentMap,
    build_sentiment_map,
    envelope_subgradient,
    objective_value,
    project_simplex,
    solve_maximin,
)
from robustfair.weightsets import membership, membership_mask, simplex_grid


class SquareMap(SentimentMap):
    """S = theta**2, declared concave although it is convex"""
    curvature = "concave"

    def __init__(self):
        super().__init__(1, 1)

    def evaluate(self, theta):
        return np.asarray(theta, dtype=float).ravel() ** 2

    def jacobian(self, theta, side="left"):
        return np.diag(2.0 * np.asarray(theta, dtype=float).ravel())


class HonestSquareMap(SquareMap):
    curvature = "convex"


LB_HALF = LowerBounded(gamma=0.5, w_star=WeightVector.uniform(2))
COMPOSITION_MAPS = {
    "linear": lambda: LinearMap([[1.0, 0.5], [0.25, 2.0]]),
    "sqrt": lambda: SqrtSingleMap([1.0, 2.0]),
    "log_saturating": lambda: LogSaturatingMap([[1.0, 2.0], [0.5, 1.5]], [[1.0, math.inf], [2.0, 0.5]]),
}


def grid_maximin(A, W, p, resolution=1e-2):
    """max over theta >= 0 with sum(theta) <= 1 of min over grid members w of M_p(A theta; w)"""
    theta = simplex_grid(A.shape[1] + 1, resolution)[:, :-1]
    weights = simplex_grid(W.g, resolution)
    members = weights[membership_mask(W, weights)]
    S = theta @ A.T
    values = ((S ** p) @ members.T) ** (1.0 / p)
    per_theta = values.min(axis=1)
    return float(per_theta.max()), float(np.ptp(per_theta))


@pytest.fixture
def egalitarian_box():
    """max over [0, 1]^2 of min(theta_1, theta_2) as a robust linear welfare"""
    aggregator = RobustAggregator(p=1, weight_set=FullSimplex(g=2))
    return ObjectiveSpec(aggregator=aggregator, sentiment_map=IdentityMap(2)), BoxSet([0, 0], [1, 1])


class TestProjectSimplex:
    def test_interior_point_is_kept(self):
        assert project_simplex([0.5, 0.5]).weights == pytest.approx([0.5, 0.5])

    def test_far_point(self):
        assert project_simplex([2.0, 0.0]).weights == pytest.approx([1.0, 0.0])

    def test_shift_invariance(self):
        assert project_simplex([3.0, 4.0, 5.0]).weights == pytest.approx(project_simplex([0.0, 1.0, 2.0]).weights)

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            project_simplex([math.nan, 1.0])

    def test_matrix_rejected(self):
        with pytest.raises(DimensionMismatchError):
            project_simplex([[1.0, 0.0]])


class TestFeasibleSets:
    """Projections, membership and linear oracles of the parameter sets"""

    def test_box(self):
        box = BoxSet([0, 0], [1, 2])
        np.testing.assert_array_equal(box.project([-1, 3]), [0, 2])
        assert box.contains([1, 2])
        assert not box.contains([1.1, 0])
        np.testing.assert_array_equal(box.linear_maximizer([1, -1]), [1, 0])

    def test_box_bounds_must_be_ordered(self):
        with pytest.raises(DomainError):
            BoxSet([1], [0])

    def test_scaled_simplex(self):
        simplex = ScaledSimplexSet(2, 3.0)
        assert simplex.project([5.0, 5.0]).sum() == pytest.approx(3.0)
        np.testing.assert_array_equal(simplex.linear_maximizer([-1.0, 2.0]), [0.0, 3.0])
        np.testing.assert_array_equal(simplex.linear_maximizer([-1.0, -2.0]), [0.0, 0.0])

    def test_capacity_set_projects_each_column(self):
        cap = CapacitySet(2, 2, [1.0, 2.0])
        projected = cap.project(np.array([3.0, 3.0, -1.0, 0.0]))
        assert cap.contains(projected)
        np.testing.assert_allclose(projected.reshape(2, 2).sum(axis=0), [1.0, 2.0])

    def test_capacity_set_with_constraint(self, rng):
        constraint = LinearConstraint(coefficients=[[1.0, 0.0], [0.0, 0.0]], rhs=0.25)
        cap = CapacitySet(2, 2, [1.0, 1.0], [constraint])
        for _ in range(10):
            assert cap.contains(cap.project(rng.normal(size=4)), tol=1e-7)
        assert cap.linear_maximizer(np.ones(4)) is None

    def test_random_points_are_feasible(self, rng):
        for feasible in (BoxSet([0, -1], [1, 1]), ScaledSimplexSet(3, 2.0), CapacitySet(2, 1, [4.0])):
            for _ in range(10):
                assert feasible.contains(feasible.random_point(rng))


class TestObjectiveSpec:
    def test_registry(self):
        assert isinstance(build_sentiment_map("identity", n=3), IdentityMap)
        with pytest.raises(DomainError):
            build_sentiment_map("nonexistent")

    def test_concave_map_cannot_be_minimized(self):
        aggregator = PowerMean(p=1, weights=WeightVector(weights=[1.0]))
        with pytest.raises(ValidationError):
            ObjectiveSpec(aggregator=aggregator, sentiment_map=SquareMap(), sense=ObjectiveSense.MINIMIZE_MALFARE)

    def test_group_counts_must_agree(self):
        with pytest.raises(ValidationError):
            ObjectiveSpec(aggregator=PowerMean(p=1, weights=WeightVector.uniform(3)), sentiment_map=IdentityMap(2))

    def test_welfare_order_enforced(self):
        with pytest.raises(ValidationError):
            ObjectiveSpec(aggregator=PowerMean(p=2, weights=WeightVector.uniform(2)), sentiment_map=IdentityMap(2))

    def test_malfare_aggregator_cannot_maximize(self):
        aggregator = RobustAggregator(p=1, weight_set=FullSimplex(g=2), sense=Sense.DISUTILITY)
        with pytest.raises(ValidationError):
            ObjectiveSpec(aggregator=aggregator, sentiment_map=IdentityMap(2))

    def test_convex_map_cannot_be_maximized(self):
        aggregator = PowerMean(p=1, weights=WeightVector(weights=[1.0]))
        with pytest.raises(ValidationError):
            ObjectiveSpec(aggregator=aggregator, sentiment_map=HonestSquareMap())
        spec = ObjectiveSpec(aggregator=aggregator, sentiment_map=HonestSquareMap(), sense=ObjectiveSense.MINIMIZE_MALFARE)
        assert not spec.welfare


class TestComposition:
    """A concave welfare of concave nondecreasing sentiment stays concave in theta"""

    @pytest.mark.parametrize("p", [1.0, 0.5, 0.0, -1.0, -math.inf])
    @pytest.mark.parametrize("name", list(COMPOSITION_MAPS))
    def test_concave_along_segments(self, rng, name, p):
        smap = COMPOSITION_MAPS[name]()
        obj = ObjectiveSpec(aggregator=RobustAggregator(p=p, weight_set=LB_HALF), sentiment_map=smap)
        for _ in range(1000):
            a, b = rng.uniform(0.1, 3.0, size=(2, smap.n))
            t = rng.uniform()
            mixed = objective_value(obj, t * a + (1 - t) * b)
            assert mixed >= t * objective_value(obj, a) + (1 - t) * objective_value(obj, b) - 1e-10


class TestEnvelopeSubgradient:
    """Danskin gradients through the inner best response"""

    def test_linear_map_example(self):
        obj = ObjectiveSpec(
            aggregator=RobustAggregator(p=1, weight_set=FullSimplex(g=2)),
            sentiment_map=LinearMap([[1.0, 0.0], [0.0, 2.0]]),
        )
        np.testing.assert_allclose(envelope_subgradient(obj, [3.0, 1.0]), [0.0, 2.0])
        assert objective_value(obj, [3.0, 1.0]) == pytest.approx(2.0)

    def test_matches_finite_differences(self, rng):
        A = rng.uniform(0.5, 2.0, size=(3, 2))
        obj = ObjectiveSpec(
            aggregator=RobustAggregator(p=0.5, weight_set=LowerBounded(gamma=0.5, w_star=WeightVector.uniform(3))),
            sentiment_map=LinearMap(A),
        )
        h = 1e-6
        for _ in range(50):
            theta = rng.uniform(0.5, 2.0, size=2)
            numeric = np.array([
                (objective_value(obj, theta + h * e) - objective_value(obj, theta - h * e)) / (2 * h)
                for e in np.eye(2)
            ])
            np.testing.assert_allclose(envelope_subgradient(obj, theta), numeric, rtol=1e-5, atol=1e-8)

    def test_explicit_weight_set(self):
        obj = ObjectiveSpec(aggregator=PowerMean(p=1, weights=WeightVector.uniform(2)), sentiment_map=IdentityMap(2))
        np.testing.assert_allclose(envelope_subgradient(obj, [2.0, 1.0]), [0.5, 0.5])
        np.testing.assert_allclose(envelope_subgradient(obj, [2.0, 1.0], W=FullSimplex(g=2)), [0.0, 1.0])


class TestSolveMaximin:
    """Projected supergradient solves"""

    def test_egalitarian_box(self, egalitarian_box):
        obj, box = egalitarian_box
        report = solve_maximin(obj, box, cfg=SolveConfig(max_iters=5000, tolerance=1e-6))
        assert report.converged
        assert report.value == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(report.theta, [1.0, 1.0], atol=1e-6)
        assert report.method == "best_response_subgradient"

    def test_minimum_power_mean(self):
        obj = ObjectiveSpec(aggregator=PowerMean(p="-inf", weights=WeightVector.uniform(2)), sentiment_map=IdentityMap(2))
        report = solve_maximin(obj, BoxSet([0, 0], [1, 1]), cfg=SolveConfig(max_iters=5000, tolerance=1e-6))
        assert report.converged
        assert report.value == pytest.approx(1.0, abs=1e-6)

    def test_malfare_minimization(self):
        aggregator = PowerMean(p=1, weights=WeightVector.uniform(2))
        obj = ObjectiveSpec(
            aggregator=aggregator,
            sentiment_map=LinearMap([[-1.0], [-1.0]], [2.0, 2.0]),
            sense=ObjectiveSense.MINIMIZE_MALFARE,
        )
        report = solve_maximin(obj, BoxSet([0], [1]), cfg=SolveConfig(max_iters=2000, tolerance=1e-6))
        assert report.converged
        assert report.value == pytest.approx(1.0, abs=1e-6)
        assert report.theta == pytest.approx([1.0])

    def test_robust_malfare_minimization(self):
        aggregator = RobustAggregator(p=1, weight_set=FullSimplex(g=2), sense=Sense.DISUTILITY)
        obj = ObjectiveSpec(
            aggregator=aggregator,
            sentiment_map=LinearMap(-np.eye(2), [2.0, 2.0]),
            sense=ObjectiveSense.MINIMIZE_MALFARE,
        )
        report = solve_maximin(obj, BoxSet([0, 0], [1, 1]), cfg=SolveConfig(max_iters=5000, tolerance=1e-6))
        assert report.converged
        assert report.value == pytest.approx(1.0, abs=1e-6)

    def test_trace(self, egalitarian_box):
        obj, box = egalitarian_box
        report = solve_maximin(obj, box, cfg=SolveConfig(max_iters=120, check_every=50, record_trace=True))
        assert len(report.trace) == report.iterations
        checkpoints = [point.iter for point in report.trace if point.gap is not None]
        assert checkpoints[0] == min(50, report.iterations)
        assert all(i % 50 == 0 or i == report.iterations for i in checkpoints)

    def test_iteration_cap_without_convergence(self, egalitarian_box):
        obj, box = egalitarian_box
        report = solve_maximin(obj, box, cfg=SolveConfig(max_iters=3, tolerance=1e-12, step_schedule=ConstantStep(eta=1e-3)))
        assert not report.converged
        assert report.iterations == 3
        assert report.gap_estimate > 0

    def test_require_convergence(self, egalitarian_box):
        obj, box = egalitarian_box
        with pytest.raises(ConvergenceError) as info:
            solve_maximin(obj, box, cfg=SolveConfig(max_iters=3, tolerance=1e-12, step_schedule=ConstantStep(eta=1e-3)), require_convergence=True)
        assert info.value.best.iterations == 3

    def test_dimension_mismatch(self, egalitarian_box):
        obj, _ = egalitarian_box
        with pytest.raises(DimensionMismatchError):
            solve_maximin(obj, BoxSet([0, 0, 0], [1, 1, 1]))

    def test_curvature_violation(self):
        obj = ObjectiveSpec(aggregator=PowerMean(p=1, weights=WeightVector(weights=[1.0])), sentiment_map=SquareMap())
        cfg = SolveConfig(max_iters=1000, step_schedule=ConstantStep(eta=1e-3), restarts=1)
        with pytest.raises(CurvatureViolationError):
            solve_maximin(obj, BoxSet([0], [1]), cfg=cfg)

    def test_restarts_are_seeded(self, egalitarian_box):
        obj, box = egalitarian_box
        cfg = SolveConfig(max_iters=40, tolerance=1e-12, restarts=3, seed=7)
        first = solve_maximin(obj, box, cfg=cfg)
        second = solve_maximin(obj, box, cfg=cfg)
        assert first.theta == second.theta
        assert first.seed == 7


class TestSaddlePoint:
    """The returned (theta, w) pair against deviations of either player"""

    @pytest.fixture
    def solved(self):
        obj = ObjectiveSpec(aggregator=RobustAggregator(p=1, weight_set=LB_HALF), sentiment_map=LinearMap(np.diag([1.0, 2.0])))
        feasible = CapacitySet(2, 1, [1.0])
        report = solve_maximin(obj, feasible, cfg=SolveConfig(max_iters=20000, tolerance=1e-6))
        return obj, feasible, report

    def test_value(self, solved):
        _, _, report = solved
        # kink at theta_2 = 1/3
        assert report.value == pytest.approx(2 / 3, abs=1e-3)
        assert report.theta == pytest.approx([2 / 3, 1 / 3], abs=1e-2)

    def test_adversary_cannot_lower_the_value(self, solved, rng):
        obj, _, report = solved
        assert membership(LB_HALF, report.adversary, tol=1e-9)
        s = obj.sentiment_map.evaluate(report.theta)
        assert power_mean(s, report.adversary, 1) == pytest.approx(report.value, rel=1e-9)
        draws = rng.dirichlet(np.ones(2), size=2000)
        for w in draws[membership_mask(LB_HALF, draws)]:
            assert power_mean(s, w, 1) >= report.value - 1e-9

    def test_allocator_cannot_raise_the_value(self, solved, rng):
        obj, feasible, report = solved
        theta = np.asarray(report.theta)
        for _ in range(200):
            moved = feasible.project(theta + rng.uniform(-1e-3, 1e-3, size=2))
            assert objective_value(obj, moved) <= report.value + 1e-3


class TestGridAgreement:
    """Solver values against exhaustive theta and weight grids"""

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "A,W,p",
        [
            (np.diag([1.0, 2.0]), LB_HALF, 1.0),
            (np.diag([1.0, 2.0]), LB_HALF, 0.5),
            (
                np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
                NormBall(base=Singleton(w_star=WeightVector(weights=[0.2, 0.3, 0.5])), norm=Norm.L1, radius=0.2),
                0.5,
            ),
        ],
    )
    def test_matches_the_grid(self, A, W, p):
        obj = ObjectiveSpec(aggregator=RobustAggregator(p=p, weight_set=W), sentiment_map=LinearMap(A))
        report = solve_maximin(obj, CapacitySet(2, 1, [1.0]), cfg=SolveConfig(max_iters=10000, tolerance=1e-4))
        best, spread = grid_maximin(A, W, p)
        assert abs(report.value - best) <= 2e-2 * spread


class TestDescentAscent:
    """Simultaneous projected steps for both players"""

    def test_runs_on_projectable_sets(self, egalitarian_box):
        obj, box = egalitarian_box
        cfg = SolveConfig(max_iters=500, inner_oracle=GradientAscentOracle(steps=2, eta=0.1))
        report = solve_maximin(obj, box, cfg=cfg)
        assert report.method == "descent_ascent"
        assert box.contains(report.theta)
        assert report.value <= 1.0 + 1e-9

    def test_permutation_orbit_has_no_projection(self):
        aggregator = RobustAggregator(p=1, weight_set=PermutationOrbit(sorted_weights=WeightVector(weights=[0.3, 0.7])))
        obj = ObjectiveSpec(aggregator=aggregator, sentiment_map=IdentityMap(2))
        with pytest.raises(DomainError):
            solve_maximin(obj, BoxSet([0, 0], [1, 1]), cfg=SolveConfig(inner_oracle=GradientAscentOracle()))

    def test_needs_a_finite_order(self):
        aggregator = RobustAggregator(p="-inf", weight_set=FullSimplex(g=2))
        obj = ObjectiveSpec(aggregator=aggregator, sentiment_map=IdentityMap(2))
        with pytest.raises(DomainError):
            solve_maximin(obj, BoxSet([0, 0], [1, 1]), cfg=SolveConfig(inner_oracle=GradientAscentOracle()))

    def test_needs_a_weight_set(self):
        obj = ObjectiveSpec(aggregator=PowerMean(p=1, weights=WeightVector.uniform(2)), sentiment_map=IdentityMap(2))
        with pytest.raises(DomainError):
            solve_maximin(obj, BoxSet([0, 0], [1, 1]), cfg=SolveConfig(inner_oracle=GradientAscentOracle()))
