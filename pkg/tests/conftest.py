from pathlib import Path

import numpy as np
import pytest

from robustfair.config import get_settings
from robustfair.models import (
    AllocationInstance,
    FullSimplex,
    LinearSingle,
    LowerBounded,
    Norm,
    NormBall,
    PermutationOrbit,
    Singleton,
    SqrtSingle,
    WeightVector,
)

FIXTURES = Path(__file__).resolve().parent.parent / "data" / "fixtures"


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached per process; start and end every test with a clean cache"""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def rng():
    """Seeded generator for the fixed-count randomized suites"""
    return np.random.default_rng(20240611)


@pytest.fixture
def uniform2():
    return WeightVector.uniform(2)


@pytest.fixture
def weight_sets_3():
    """One representative of every weight-set variant in three groups"""
    center = WeightVector(weights=[0.25, 0.25, 0.5])
    return {
        "simplex": FullSimplex(g=3),
        "singleton": Singleton(w_star=center),
        "lower_bounded": LowerBounded(gamma=0.5, w_star=WeightVector.uniform(3)),
        "permutation": PermutationOrbit(sorted_weights=WeightVector(weights=[0.2, 0.3, 0.5])),
        "linf_ball": NormBall(base=Singleton(w_star=center), norm=Norm.LINF, radius=0.2),
        "l1_ball": NormBall(base=Singleton(w_star=center), norm=Norm.L1, radius=0.3),
        "l2_ball": NormBall(base=Singleton(w_star=center), norm=Norm.L2, radius=0.2),
    }


@pytest.fixture
def linear_instance():
    """One good, capacity 10, rates [1, 2]"""
    return AllocationInstance(g=2, k=1, capacities=[10.0], utility_model=LinearSingle(p=[1.0, 2.0]))


@pytest.fixture
def sqrt_instance():
    return AllocationInstance(g=2, k=1, capacities=[7.5], utility_model=SqrtSingle(p=[1.0, 2.0]))
