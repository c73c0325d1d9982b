"""
Chain, cost and Bellman primitives.
"""

import math

import numpy as np
import pytest

from couponcli.errors import AssumptionError, DegenerateChainError
from couponcli.model import (
    Action,
    ConsumerState,
    CostModel,
    TransitionModel,
    bellman_backup,
    horizon_for,
    instantaneous_cost,
    one_step_transition,
    stationary_belief,
)

TOL = 1e-12


class TestTransitionModel:
    def test_rejects_lambda_na_above_lambda_aa(self):
        with pytest.raises(AssumptionError, match="Assumption 2"):
            TransitionModel(0.8, 0.2)

    def test_permissive_accepts_any_chain(self):
        m = TransitionModel.permissive(0.8, 0.2)
        assert m.gap == pytest.approx(-0.6)

    def test_inertia_is_opt_in(self):
        TransitionModel(0.1, 0.3)
        with pytest.raises(AssumptionError):
            TransitionModel(0.1, 0.3, require_inertia=True)
        assert TransitionModel(0.3, 0.8, require_inertia=True).satisfies_inertia

    def test_rounding_noise_is_clipped(self):
        m = TransitionModel(0.2, 1 + 1e-13)
        assert m.lambda_aa == 1.0

    def test_out_of_range_probability(self):
        with pytest.raises(AssumptionError):
            TransitionModel(-0.1, 0.5)

    def test_matrix_rows_are_stochastic(self):
        m = TransitionModel(0.1, 0.7)
        assert np.allclose(m.matrix.sum(axis=1), 1.0)
        assert m.row(ConsumerState.NORMAL) == 0.1
        assert m.row(ConsumerState.ALERTED) == 0.7

    def test_transition_n_matches_repeated_transition(self):
        m = TransitionModel(0.2, 0.8)
        p = 0.05
        for n in range(8):
            assert m.transition_n(0.05, n) == pytest.approx(p, abs=TOL)
            p = m.transition(p)

    def test_one_step_transition_bounds(self):
        m = TransitionModel(0.2, 0.8)
        assert one_step_transition(0.0, m) == pytest.approx(0.2)
        assert one_step_transition(1.0, m) == pytest.approx(0.8)

    def test_degenerate_chain_is_fixed_pointwise(self):
        m = TransitionModel(0.0, 1.0)
        assert m.is_degenerate
        assert float(m.transition_n(0.3, 5)) == pytest.approx(0.3)


class TestStationaryBelief:
    def test_symmetric_chain(self):
        assert stationary_belief(TransitionModel(0.2, 0.8)) == pytest.approx(0.5)

    def test_is_a_fixed_point(self):
        m = TransitionModel(0.1, 0.7)
        p_f = stationary_belief(m)
        assert m.transition(p_f) == pytest.approx(p_f, abs=TOL)

    def test_degenerate_chain(self):
        with pytest.raises(DegenerateChainError):
            stationary_belief(TransitionModel(0.0, 1.0))


class TestCostModel:
    def test_ordering(self):
        with pytest.raises(AssumptionError):
            CostModel(c_l=13, c_hn=1, c_ha=12, beta=0.9)
        CostModel.permissive(13, 1, 12, 0.9)

    @pytest.mark.parametrize("beta", [0.0, 1.0, 1.5])
    def test_discount_range(self, beta):
        with pytest.raises(AssumptionError):
            CostModel(3, 1, 12, beta)

    def test_replace_keeps_other_fields(self, base_costs):
        changed = base_costs.replace(c_l=4)
        assert (changed.c_l, changed.c_hn, changed.c_ha, changed.beta) == (4, 1, 12, 0.9)

    def test_instantaneous_cost(self, base_costs):
        assert instantaneous_cost(0.5, Action.LP, base_costs) == 3
        assert instantaneous_cost(0.5, Action.HP, base_costs) == pytest.approx(6.5)


class TestHorizon:
    @pytest.mark.parametrize("beta", [0.5, 0.9, 0.95, 0.99])
    def test_tail_below_eps(self, beta):
        h = horizon_for(beta, 20.0)
        assert beta**h * 20.0 / (1 - beta) <= 1e-3
        assert beta ** (h - 1) * 20.0 / (1 - beta) > 1e-3 or h == 1


class TestBellmanBackup:
    def test_lp_forever_is_a_fixed_point(self, base_model, base_costs):
        v = base_costs.lp_forever
        out = bellman_backup(0.4, Action.LP, lambda p: v, base_model, base_costs)
        assert out == pytest.approx(v)

    def test_hp_resets_to_chain_rows(self, base_model, base_costs):
        seen = []

        def v_next(p):
            seen.append(p)
            return 0.0

        out = bellman_backup(0.25, Action.HP, v_next, base_model, base_costs)
        assert out == pytest.approx(0.75 * 1 + 0.25 * 12)
        assert seen == [0.1, 0.7]
        assert not math.isnan(out)
