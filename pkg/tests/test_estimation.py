"""
Noisy-cost likelihoods, belief estimators and the threshold variants.
"""

import numpy as np
import pytest

from couponcli.errors import AssumptionError, ValidationError, ZeroLikelihoodError
from couponcli.estimation import (
    BeliefFilter,
    BeliefPosterior,
    CostDistribution,
    CostDistributions,
    bayes_predict,
    bayes_update,
    exact_belief_update,
    likelihood,
    map_state_update,
    point_estimate,
    threshold_variants,
)
from couponcli.model import Action, ConsumerState, CostModel, TransitionModel
from couponcli.solvers.threshold import solve_threshold

CHAIN = TransitionModel(0.2, 0.8)


class TestCostDistribution:
    def test_uniform_pdf(self):
        d = CostDistribution.uniform(6, 18)
        assert d.pdf(7) == pytest.approx(1 / 12)
        assert d.pdf(20) == 0
        assert d.mean == 12

    def test_discrete_needs_unit_mass(self):
        with pytest.raises(AssumptionError):
            CostDistribution.discrete([1, 2], [0.5, 0.6])

    def test_uniform_needs_interval(self):
        with pytest.raises(AssumptionError):
            CostDistribution.uniform(3, 3)

    def test_degenerate_uniform_config_is_a_point(self):
        d = CostDistribution.from_config({"family": "uniform", "lo": 3, "hi": 3})
        assert d.is_point_mass
        assert d.pdf(3) == 1.0

    def test_sample_stays_in_support(self):
        rng = np.random.default_rng(0)
        draws = CostDistribution.uniform(0.25, 7.75).sample(rng, 1000)
        assert draws.min() >= 0.25 and draws.max() <= 7.75

    def test_disjoint_supports(self, disjoint_distributions, overlapping_distributions):
        assert disjoint_distributions.disjoint_hp
        assert not overlapping_distributions.disjoint_hp

    def test_deterministic(self, base_costs):
        d = CostDistributions.deterministic(base_costs)
        assert d.is_deterministic
        assert d.mean_costs(0.9) == base_costs


class TestLikelihood:
    def test_mixture(self, overlapping_distributions):
        value = likelihood(7, Action.HP, 0.5, overlapping_distributions)
        assert value == pytest.approx(0.5 / 7.5 + 0.5 / 12)

    def test_lp_ignores_belief(self, overlapping_distributions):
        values = likelihood(5, Action.LP, np.array([0.0, 0.5, 1.0]), overlapping_distributions)
        assert np.allclose(values, 1 / 6)

    def test_outside_support(self, overlapping_distributions):
        assert likelihood(100, Action.HP, 0.5, overlapping_distributions) == 0

    def test_known_normal_state(self, overlapping_distributions):
        assert likelihood(7, Action.HP, 0.0, overlapping_distributions) == pytest.approx(1 / 7.5)


class TestMapState:
    def test_alerted_only_cost(self, disjoint_distributions):
        state, p = map_state_update(0.5, Action.HP, 15, CHAIN, disjoint_distributions)
        assert state is ConsumerState.ALERTED
        assert p == pytest.approx(0.8)

    def test_lp_propagates(self, disjoint_distributions):
        state, p = map_state_update(0.5, Action.LP, 8, CHAIN, disjoint_distributions)
        assert state is None
        assert p == pytest.approx(0.5)

    def test_overlap_prefers_denser_state(self, overlapping_distributions):
        state, p = map_state_update(0.5, Action.HP, 7, CHAIN, overlapping_distributions)
        assert state is ConsumerState.NORMAL
        assert p == pytest.approx(0.2)

    def test_tie_goes_to_alerted(self):
        d = CostDistributions(
            CostDistribution.point(2.0),
            CostDistribution.discrete([1.0, 2.0], [0.5, 0.5]),
            CostDistribution.discrete([2.0, 3.0], [0.5, 0.5]),
        )
        state, _ = map_state_update(0.5, Action.HP, 2.0, CHAIN, d)
        assert state is ConsumerState.ALERTED

    @pytest.mark.slow
    def test_disjoint_supports_recover_every_state(self, disjoint_distributions):
        d = disjoint_distributions
        rng = np.random.default_rng(17)
        steps = 100_000
        states = np.empty(steps, dtype=np.int64)
        states[0] = 0
        uniforms = rng.random(steps)
        for t in range(1, steps):
            states[t] = int(uniforms[t] < CHAIN.row(states[t - 1]))
        normal = d.normal_hp.sample(rng, steps)
        alerted = d.alerted_hp.sample(rng, steps)
        costs = np.where(states == ConsumerState.ALERTED, alerted, normal)

        p_hat, errors = CHAIN.lambda_na, 0
        for state, c in zip(states, costs):
            detected, p_hat = map_state_update(p_hat, Action.HP, float(c), CHAIN, d)
            errors += detected != state
            assert 0 < p_hat < 1
        assert errors == 0

    def test_impossible_cost(self, overlapping_distributions):
        with pytest.raises(ZeroLikelihoodError):
            map_state_update(0.5, Action.HP, 100, CHAIN, overlapping_distributions)


class TestExactBelief:
    def test_deterministic_costs_reveal_the_state(self, base_costs):
        d = CostDistributions.deterministic(base_costs)
        m = TransitionModel(0.1, 0.7)
        assert exact_belief_update(0.4, Action.HP, 1, m, d) == pytest.approx(0.1)
        assert exact_belief_update(0.4, Action.HP, 12, m, d) == pytest.approx(0.7)

    def test_overlap(self, overlapping_distributions):
        posterior = (0.5 / 12) / (0.5 / 7.5 + 0.5 / 12)
        p = exact_belief_update(0.5, Action.HP, 7, CHAIN, overlapping_distributions)
        assert p == pytest.approx(CHAIN.transition(posterior))


class TestPosterior:
    def test_uniform_mean(self):
        assert BeliefPosterior.uniform().mean == pytest.approx(0.5)

    def test_point(self):
        q = BeliefPosterior.point(0.3)
        assert q.mean == pytest.approx(0.3, abs=1e-12)
        assert q.map_estimate == pytest.approx(0.3, abs=1e-12)

    def test_update_with_alerted_only_cost(self, disjoint_distributions):
        q = bayes_update(BeliefPosterior.uniform(), Action.HP, 15, disjoint_distributions)
        assert q.mean == pytest.approx(2 / 3, abs=1e-5)
        # the end node carries half a cell of mass
        assert point_estimate(q, "map") == pytest.approx(0.999)

    def test_rejects_bad_weights(self):
        grid = np.linspace(0, 1, 3)
        with pytest.raises(ValidationError):
            BeliefPosterior(grid, np.array([0.5, 0.6, -0.1]))
        with pytest.raises(ValidationError):
            BeliefPosterior(grid, np.array([0.5, 0.6, 0.1]))

    def test_unknown_point_estimate(self):
        with pytest.raises(ValidationError):
            point_estimate(BeliefPosterior.uniform(), "median")

    def test_lp_update_is_identity(self, disjoint_distributions):
        q = BeliefPosterior.uniform()
        assert bayes_update(q, Action.LP, 8, disjoint_distributions) is q

    def test_point_mass_survives_update(self, overlapping_distributions):
        q = bayes_update(BeliefPosterior.point(0.3), Action.HP, 7, overlapping_distributions)
        assert q.mean == pytest.approx(0.3, abs=1e-12)

    def test_predict_point_follows_chain(self):
        q = bayes_predict(BeliefPosterior.point(0.3), CHAIN)
        assert q.mean == pytest.approx(0.38, abs=1e-12)
        q = bayes_predict(q, CHAIN)
        assert q.mean == pytest.approx(CHAIN.transition(0.38), abs=1e-12)

    def test_predict_uniform_spreads_over_image(self):
        q = bayes_predict(BeliefPosterior.uniform(), CHAIN)
        outside = (q.grid < 0.2 - 2e-3) | (q.grid > 0.8 + 2e-3)
        assert q.weights[outside].sum() == pytest.approx(0.0, abs=1e-12)
        middle = (q.grid >= 0.3) & (q.grid <= 0.7)
        assert q.weights[middle].sum() == pytest.approx(2 / 3, abs=1e-2)

    def test_constant_chain_collapses(self):
        q = bayes_predict(BeliefPosterior.uniform(), TransitionModel(0.4, 0.4))
        assert q.mean == pytest.approx(0.4, abs=1e-12)

    @pytest.mark.slow
    def test_stays_normalized(self, overlapping_distributions):
        rng = np.random.default_rng(5)
        f = BeliefFilter(BeliefPosterior.uniform(), CHAIN, overlapping_distributions)
        state = 0
        for _ in range(10_000):
            u = Action.HP if rng.random() < 0.5 else Action.LP
            c = float(overlapping_distributions.for_state(u, state).sample(rng, 1)[0])
            q = f.step(u, c)
            assert abs(q.weights.sum() - 1) <= 1e-9
            state = int(rng.random() < CHAIN.row(state))


class TestBeliefFilter:
    def test_tracks_exact_belief_with_disjoint_costs(self, disjoint_distributions):
        rng = np.random.default_rng(1)
        p = 0.2
        f = BeliefFilter(BeliefPosterior.point(p), CHAIN, disjoint_distributions)
        state = 0
        for _ in range(200):
            u = Action.HP if rng.random() < 0.3 else Action.LP
            c = float(disjoint_distributions.for_state(u, state).sample(rng, 1)[0])
            p = exact_belief_update(p, u, c, CHAIN, disjoint_distributions)
            f.step(u, c)
            assert f.estimate() == pytest.approx(p, abs=1e-3)
            state = int(rng.random() < CHAIN.row(state))

    def test_parameter_mode_ignores_revealed_state(self, disjoint_distributions):
        f = BeliefFilter(BeliefPosterior.point(0.2), CHAIN, disjoint_distributions, mode="parameter")
        f.step(Action.HP, 15)
        assert f.estimate() == pytest.approx(CHAIN.transition(0.2), abs=1e-9)

    def test_reveal(self, disjoint_distributions):
        f = BeliefFilter(BeliefPosterior.uniform(), CHAIN, disjoint_distributions)
        f.reveal(0.8)
        assert f.estimate("map") == pytest.approx(0.8, abs=1e-9)

    def test_unknown_mode(self, disjoint_distributions):
        with pytest.raises(ValidationError):
            BeliefFilter(BeliefPosterior.uniform(), CHAIN, disjoint_distributions, mode="other")


class TestThresholdVariants:
    def test_point_masses_collapse(self, base_costs):
        m = TransitionModel(0.1, 0.7)
        d = CostDistributions.deterministic(base_costs)
        variants = threshold_variants(d, m, 0.9)
        tau = solve_threshold(m, base_costs).tau
        for value in (
            variants.tau_avg,
            variants.tau_max,
            variants.tau_min,
            variants.tau_r,
            variants.tau_upper,
            variants.tau_lower,
        ):
            assert value == pytest.approx(tau)

    def test_disjoint_cost_triples(self, disjoint_distributions):
        variants = threshold_variants(disjoint_distributions, CHAIN, 0.95)
        top = solve_threshold(CHAIN, CostModel(10, 5.8, 20, 0.95)).tau
        bottom = solve_threshold(CHAIN, CostModel(6, 5.8, 12, 0.95)).tau
        assert variants.tau_max == pytest.approx(top)
        assert variants.tau_min == pytest.approx(bottom)
        assert variants.tau_min == pytest.approx(0.2 / 6.2)
        assert variants.tau_max < variants.tau_upper
        assert variants.p0 == pytest.approx(0.5)
        assert len(variants.corners) == 8

    def test_corner_bracket(self, disjoint_distributions, overlapping_distributions):
        for d, beta in ((disjoint_distributions, 0.95), (overlapping_distributions, 0.9)):
            variants = threshold_variants(d, CHAIN, beta)
            taus = [corner[3] for corner in variants.corners]
            assert variants.tau_lower == min(taus)
            assert variants.tau_upper == max(taus)
            assert variants.tau_lower - 1e-9 <= variants.tau_avg <= variants.tau_upper + 1e-9

    def test_robust_threshold_on_flat_worst_case(self, disjoint_distributions):
        variants = threshold_variants(disjoint_distributions, CHAIN, 0.95)
        assert variants.tau_r == pytest.approx(variants.tau_max)
        assert variants.tau_r in [corner[3] for corner in variants.corners]

    def test_overlapping_supports_clamp_the_triples(self, overlapping_distributions):
        variants = threshold_variants(overlapping_distributions, CHAIN, 0.9)
        # (min C_L, max C_HN) = (3, 7.75) clamps to c_hn = c_l
        assert variants.tau_min == pytest.approx(0.0, abs=1e-6)
        assert variants.tau_max == pytest.approx(
            solve_threshold(CHAIN, CostModel(9, 7.75, 18, 0.9)).tau
        )

    def test_no_valid_corner(self):
        d = CostDistributions(
            CostDistribution.uniform(0, 1),
            CostDistribution.uniform(5, 6),
            CostDistribution.uniform(7, 8),
        )
        with pytest.raises(AssumptionError):
            threshold_variants(d, CHAIN, 0.9)

    def test_mean_costs(self, overlapping_distributions):
        assert overlapping_distributions.mean_costs(0.9) == CostModel(6, 4, 12, 0.9)
