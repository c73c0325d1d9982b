"""
Shared parameter sets for the bundled experiments plus a seeded
generator of admissible random models.
"""

import numpy as np
import pytest

from couponcli.estimation import CostDistribution, CostDistributions
from couponcli.model import CostModel, TransitionModel
from couponcli.solvers.coupon_dependent import CouponDependentModel
from couponcli.solvers.value_iteration import MultiStateModel


@pytest.fixture
def base_costs() -> CostModel:
    return CostModel(c_l=3, c_hn=1, c_ha=12, beta=0.9)


@pytest.fixture
def base_model() -> TransitionModel:
    return TransitionModel(lambda_na=0.1, lambda_aa=0.7)


@pytest.fixture
def cd_model() -> CouponDependentModel:
    return CouponDependentModel(TransitionModel(0.2, 0.8), TransitionModel(0.5, 0.9))


@pytest.fixture
def three_state_model() -> MultiStateModel:
    return MultiStateModel(
        np.array([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]]),
        np.array([1.0, 10.0, 20.0]),
        lp_cost=7.0,
        beta=0.9,
    )


@pytest.fixture
def disjoint_distributions() -> CostDistributions:
    return CostDistributions(
        CostDistribution.uniform(6, 10),
        CostDistribution.uniform(0.2, 5.8),
        CostDistribution.uniform(12, 20),
    )


@pytest.fixture
def overlapping_distributions() -> CostDistributions:
    return CostDistributions(
        CostDistribution.uniform(3, 9),
        CostDistribution.uniform(0.25, 7.75),
        CostDistribution.uniform(6, 18),
    )


def admissible_draws(count: int, seed: int, beta_range=(0.5, 0.99)):
    """
    Random (TransitionModel, CostModel) pairs with lambda_na <= lambda_aa and
    c_hn <= c_l <= c_ha
    """
    rng = np.random.default_rng(seed)
    for _ in range(count):
        lambda_na = rng.uniform(0.0, 0.6)
        lambda_aa = rng.uniform(lambda_na, 1.0)
        c_hn = rng.uniform(0.0, 2.0)
        c_l = c_hn + rng.uniform(0.1, 5.0)
        c_ha = c_l + rng.uniform(0.5, 10.0)
        beta = rng.uniform(*beta_range)
        yield TransitionModel(lambda_na, lambda_aa), CostModel(c_l, c_hn, c_ha, beta)
