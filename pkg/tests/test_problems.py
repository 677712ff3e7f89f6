"""Problem families: constructions, analytic oracles, noise models, serialization."""

import math

import numpy as np
import pytest

import oracle_suites
from pdsgd import problems
from pdsgd.problems import NoiseModel


class TestTwoAgentFixture:
    def test_hand_values(self):
        prob = problems.two_agent_fixture()
        assert prob.kind == "quadratic"
        assert (prob.n, prob.p) == (2, 1)
        assert prob.grad_agent(0, np.zeros(1)) == pytest.approx([-1.0], abs=0)
        assert prob.grad_agent(1, np.zeros(1)) == pytest.approx([1.0], abs=0)
        assert prob.f_star == pytest.approx(0.5, abs=1e-15)
        assert prob.l_f == 1.0
        assert prob.nu == 1.0
        assert np.asarray(prob.x_ref) == pytest.approx([0.0], abs=1e-15)

    def test_global_cost_formula(self):
        prob = problems.two_agent_fixture()
        for x in (-2.0, 0.3, 5.0):
            assert prob.f(np.array([x])) == pytest.approx(0.5 * x * x + 0.5, rel=1e-14)
            assert prob.grad_f(np.array([x])) == pytest.approx([x], rel=1e-14)

    def test_per_agent_minima_vanish(self):
        prob = problems.two_agent_fixture()
        minima = problems.per_agent_minima(prob)
        assert minima == pytest.approx([0.0, 0.0], abs=1e-18)
        # each local system is solvable, so the heterogeneity-at-optimum
        # second moment reduces to 2*l_f*f_star = 1
        assert 2.0 * prob.l_f * (prob.f_star - minima.mean()) == pytest.approx(1.0, rel=1e-12)


class TestQuadraticConstruction:
    def test_single_agent_hand_problem(self):
        prob = problems.quadratic_from_data([[[1.0]]], [[2.0]])
        assert prob.f(np.array([3.5])) == pytest.approx(0.5 * 1.5**2, rel=1e-14)
        assert prob.grad_agent(0, np.array([3.5])) == pytest.approx([1.5], abs=1e-15)
        assert prob.f_star == pytest.approx(0.0, abs=1e-15)
        assert np.asarray(prob.x_ref) == pytest.approx([2.0], rel=1e-14)

    def test_requested_spectrum_and_rank(self):
        spectrum = [3.0, 2.0, 1.0]
        prob = problems.make_quadratic(3, 4, 1, seed=2, spectrum=spectrum)
        h = np.mean([a.T @ a for a in prob.a_mats], axis=0)
        eigs = np.sort(np.linalg.eigvalsh(h))
        assert eigs[0] == pytest.approx(0.0, abs=1e-10)
        assert eigs[1:] == pytest.approx([1.0, 2.0, 3.0], rel=1e-8)
        assert np.linalg.matrix_rank(np.vstack(prob.a_mats)) == 3
        assert prob.nu == pytest.approx(1.0, rel=1e-8)
        assert not prob.nu_is_sampled

    def test_full_rank_nu_matches_smallest_gram_eigenvalue(self):
        prob = problems.make_quadratic(4, 3, 0, seed=8)
        h = np.mean([a.T @ a for a in prob.a_mats], axis=0)
        assert prob.nu == pytest.approx(np.linalg.eigvalsh(h)[0], rel=1e-10)

    def test_smoothness_constant_is_worst_local_gram_eigenvalue(self):
        prob = problems.make_quadratic(3, 4, 1, seed=2)
        expected = max(np.linalg.eigvalsh(a.T @ a)[-1] for a in prob.a_mats)
        assert prob.l_f == pytest.approx(expected, rel=1e-12)

    def test_minimizers_form_affine_set_under_rank_deficit(self):
        prob = problems.make_quadratic(3, 4, 1, seed=2)
        h = np.mean([a.T @ a for a in prob.a_mats], axis=0)
        vals, vecs = np.linalg.eigh(h)
        null_dir = vecs[:, 0]
        assert vals[0] == pytest.approx(0.0, abs=1e-10)
        x_ref = np.asarray(prob.x_ref)
        assert np.linalg.norm(prob.grad_f(x_ref)) <= 1e-8
        shifted = x_ref + 3.0 * null_dir
        assert prob.f(shifted) == pytest.approx(prob.f_star, abs=1e-9)
        assert np.linalg.norm(prob.grad_f(shifted)) <= 1e-7

    def test_minimum_matches_least_squares_oracle(self):
        # heterogeneous right-hand sides make the stacked system inconsistent
        prob = problems.make_quadratic(4, 3, 1, seed=9, shared_design=True, b_spread=1.0)
        a_stack = np.vstack(prob.a_mats)
        b_stack = np.concatenate(prob.b_vecs)
        x_star, *_ = np.linalg.lstsq(a_stack, b_stack, rcond=None)
        resid = a_stack @ x_star - b_stack
        f_star_oracle = 0.5 * float(resid @ resid) / prob.n
        assert prob.f_star > 1e-6
        assert prob.f_star == pytest.approx(f_star_oracle, rel=1e-12)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = x_star + rng.standard_normal(prob.p)
            assert prob.f(x) >= prob.f_star - 1e-12

    def test_shared_design_shares_matrices_only(self):
        prob = problems.make_quadratic(3, 3, 0, seed=4, shared_design=True, b_spread=1.0)
        assert all(np.array_equal(a, prob.a_mats[0]) for a in prob.a_mats)
        assert not np.array_equal(prob.b_vecs[0], prob.b_vecs[1])

    def test_zero_spread_aligns_all_local_optima(self):
        prob = problems.make_quadratic(3, 3, 0, seed=4, shared_design=True, b_spread=0.0)
        x_ref = np.asarray(prob.x_ref)
        for i in range(prob.n):
            assert np.linalg.norm(prob.grad_agent(i, x_ref)) <= 1e-10
        assert prob.f_star == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("deficit", [-1, 3, 7])
    def test_rank_deficit_out_of_range_rejected(self, deficit):
        with pytest.raises(ValueError, match="rank_deficit"):
            problems.make_quadratic(2, 3, deficit, seed=0)

    def test_spectrum_length_must_match_rank(self):
        with pytest.raises(ValueError, match="spectrum"):
            problems.make_quadratic(2, 3, 1, seed=0, spectrum=[1.0, 1.0, 1.0])

    def test_shared_design_needs_enough_rows(self):
        with pytest.raises(ValueError, match="samples_per_agent"):
            problems.make_quadratic(2, 3, 0, seed=0, shared_design=True, samples_per_agent=2)

    def test_explicit_data_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="column dimension"):
            problems.quadratic_from_data([[[1.0, 0.0]], [[1.0]]], [[1.0], [1.0]])
        with pytest.raises(ValueError, match="row count"):
            problems.quadratic_from_data([[[1.0], [2.0]]], [[1.0]])


class TestPLComposition:
    def test_zero_map_gives_constant_cost(self):
        prob = problems.make_pl_composition(3, 2, seed=5, a_matrix=np.zeros((2, 2)))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = 10.0 * rng.standard_normal(2)
            assert np.array_equal(prob.grad_f(x), np.zeros(2))
            assert prob.f(x) == prob.f_star
        assert prob.nu is None

    def test_identity_map_keeps_strong_convexity_modulus(self):
        prob = problems.make_pl_composition(3, 3, seed=4, a_matrix=np.eye(3))
        assert prob.nu is not None
        assert prob.nu >= 0.5  # construction draws curvatures >= mu = 0.5

    def test_generic_map_is_singular_with_positive_ratio(self):
        prob = problems.make_pl_composition(2, 4, seed=6)
        assert np.linalg.matrix_rank(prob.a_mat) == 3
        assert prob.nu is not None and prob.nu > 0.0
        assert prob.nu_is_sampled
        assert np.linalg.norm(prob.grad_f(np.asarray(prob.x_ref))) <= 1e-10

    def test_reported_ratio_is_the_protocol_sample_minimum(self):
        seed = 6
        prob = problems.make_pl_composition(2, 4, seed=seed)
        worst, bound = oracle_suites.pl_ratio_check(prob, 0, construction_seed=seed)
        assert worst >= bound
        assert worst == pytest.approx(prob.nu, rel=1e-9)


class TestLogistic:
    def test_cost_at_origin_is_log_two(self):
        for lam in (0.0, 0.1):
            prob = problems.make_logistic(3, 2, 20, lam, seed=3)
            assert prob.f(np.zeros(2)) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_regularized_instance_reports_ridge_curvature(self):
        prob = problems.make_logistic(3, 2, 50, 0.1, seed=3)
        assert prob.nu == 0.1
        assert not prob.nu_is_sampled
        assert np.linalg.norm(prob.grad_f(np.asarray(prob.x_ref))) <= 1e-10

    def test_unregularized_instance_keeps_attained_minimum(self):
        prob = problems.make_logistic(2, 2, 30, 0.0, seed=7)
        assert prob.nu is None
        flat = prob.z_mats.reshape(-1, prob.p)
        assert not problems._is_separable(flat, prob.labels.reshape(-1))
        assert np.linalg.norm(prob.grad_f(np.asarray(prob.x_ref))) <= 1e-10

    def test_smoothness_constant_formula(self):
        prob = problems.make_logistic(3, 2, 25, 0.1, seed=3)
        m = prob.z_mats.shape[1]
        expected = 0.1 + max(
            np.linalg.eigvalsh(prob.z_mats[i].T @ prob.z_mats[i])[-1] for i in range(3)
        ) / (4.0 * m)
        assert prob.l_f == pytest.approx(expected, rel=1e-12)

    def test_labels_are_binary(self):
        prob = problems.make_logistic(3, 2, 25, 0.1, seed=3)
        assert set(np.unique(prob.labels)) <= {0.0, 1.0}

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError, match="samples_per_agent"):
            problems.make_logistic(2, 2, 0, 0.1, seed=0)
        with pytest.raises(ValueError, match="regularizer"):
            problems.make_logistic(2, 2, 10, -0.1, seed=0)

    def test_local_minima_do_not_exceed_value_at_global_solution(self):
        prob = problems.make_logistic(3, 2, 25, 0.1, seed=3)
        minima = problems.per_agent_minima(prob)
        x_ref = np.asarray(prob.x_ref)
        for i in range(prob.n):
            assert minima[i] <= prob.f_agent(i, x_ref) + 1e-12


def _fixture_problems():
    return [
        problems.make_quadratic(3, 4, 1, seed=2),
        problems.make_logistic(3, 2, 25, 0.1, seed=3),
        problems.make_pl_composition(2, 4, seed=6),
    ]


class TestGradientOracles:
    @pytest.mark.parametrize("prob_idx", [0, 1, 2])
    def test_matches_central_finite_differences(self, prob_idx):
        prob = _fixture_problems()[prob_idx]
        rng = np.random.default_rng(17)
        h = 1e-6
        pairs = [
            (prob.f, prob.grad_f),
            (lambda t: prob.f_agent(0, t), lambda t: prob.grad_agent(0, t)),
        ]
        for _ in range(3):
            x = rng.standard_normal(prob.p)
            for fn, grad in pairs:
                fd = np.array([
                    (fn(x + h * e) - fn(x - h * e)) / (2.0 * h)
                    for e in np.eye(prob.p)
                ])
                g = grad(x)
                assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))

    def test_stacked_gradients_match_per_agent_calls(self):
        for prob in _fixture_problems():
            x_stack = np.random.default_rng(23).standard_normal((prob.n, prob.p))
            stacked = problems.stacked_full_gradient(prob, x_stack)
            for i in range(prob.n):
                # the stacked path may sum in a different order; demand
                # agreement to rounding, not bitwise identity
                single = problems.full_gradient(prob, i, x_stack[i])
                assert stacked[i] == pytest.approx(single, rel=1e-12, abs=1e-14)

    def test_global_gradient_averages_local_ones(self):
        for prob in _fixture_problems():
            x = np.random.default_rng(29).standard_normal(prob.p)
            mean_local = np.mean([prob.grad_agent(i, x) for i in range(prob.n)], axis=0)
            assert prob.grad_f(x) == pytest.approx(mean_local, rel=1e-12, abs=1e-14)

    def test_non_finite_inputs_rejected(self):
        prob = problems.two_agent_fixture()
        for bad in (np.array([np.nan]), np.array([np.inf])):
            with pytest.raises(ValueError, match="non-finite"):
                prob.grad_agent(0, bad)
            with pytest.raises(ValueError, match="non-finite"):
                prob.grad_stack(np.vstack([bad, bad]))

    def test_secant_ratios_stay_below_declared_smoothness(self):
        for prob in _fixture_problems():
            worst, bound = oracle_suites.smoothness_check(prob, seed=31, n_pairs=10**3)
            assert worst <= bound


class TestGradientDominationRatios:
    def test_quadratic_ratio_holds_on_fresh_samples(self):
        prob = problems.make_quadratic(3, 4, 1, seed=2)
        worst, bound = oracle_suites.pl_ratio_check(prob, seed=37)
        assert worst >= bound

    def test_logistic_ratio_holds_on_fresh_samples(self):
        prob = problems.make_logistic(3, 2, 25, 0.1, seed=3)
        worst, bound = oracle_suites.pl_ratio_check(prob, seed=41, n_points=2000)
        assert worst >= bound

    def test_sampled_ratio_holds_on_its_defining_protocol(self):
        prob = problems.make_pl_composition(2, 4, seed=6)
        worst, bound = oracle_suites.pl_ratio_check(prob, 0, construction_seed=6)
        assert worst >= bound


class TestNoiseModels:
    def test_invalid_specifications_rejected(self):
        with pytest.raises(ValueError, match="noise mode"):
            NoiseModel(1.0, mode="white")
        with pytest.raises(ValueError, match="sigma2"):
            NoiseModel(-1.0)
        with pytest.raises(ValueError, match="bias"):
            NoiseModel(1.0, mode="additive_gaussian", bias=0.1)
        with pytest.raises(ValueError, match="batch_size"):
            NoiseModel(1.0, mode="minibatch", batch_size=0)

    def test_bias_vector_norm_and_direction(self):
        noise = NoiseModel(1.0, mode="biased_additive", bias=0.1)
        b = noise.bias_vector(4)
        assert np.linalg.norm(b) == pytest.approx(0.1, rel=1e-14)
        assert np.all(b == b[0])

    def test_noiseless_draw_equals_exact_gradient(self):
        prob = problems.two_agent_fixture()
        x_stack = np.array([[0.3], [-1.2]])
        g = problems.sample_stochastic_gradient(
            prob, NoiseModel(0.0), x_stack, problems.agent_streams(0, 2)
        )
        assert np.array_equal(g, prob.grad_stack(x_stack))

    def test_stream_count_must_match_agents(self):
        prob = problems.two_agent_fixture()
        with pytest.raises(ValueError, match="one RNG stream per agent"):
            problems.sample_stochastic_gradient(
                prob, NoiseModel(1.0), np.zeros((2, 1)), problems.agent_streams(0, 3)
            )

    def test_minibatch_requires_data_defined_costs(self):
        prob = problems.make_pl_composition(2, 3, seed=1)
        with pytest.raises(ValueError, match="data-defined"):
            problems.sample_stochastic_gradient(
                prob, NoiseModel(1.0, mode="minibatch"), np.zeros((2, 3)),
                problems.agent_streams(0, 2),
            )

    def test_exhaustive_minibatch_average_is_exact(self):
        for prob in (
            problems.make_quadratic(2, 3, 0, seed=12),
            problems.make_logistic(2, 2, 5, 0.1, seed=3),
        ):
            rng = np.random.default_rng(43)
            for i in range(prob.n):
                x = rng.standard_normal(prob.p)
                m = prob.samples_per_agent(i)
                avg = np.mean(
                    [problems.single_point_gradient(prob, i, x, j) for j in range(m)], axis=0
                )
                exact = prob.grad_agent(i, x)
                assert np.linalg.norm(avg - exact) <= 1e-12 * max(1.0, np.linalg.norm(exact))

    def test_batching_divides_enumerated_variance_exactly(self):
        prob = problems.make_quadratic(2, 3, 0, seed=12)
        x = np.ones(3)
        v1 = problems.minibatch_variance(prob, NoiseModel(1.0, mode="minibatch"), 0, x)
        v4 = problems.minibatch_variance(
            prob, NoiseModel(1.0, mode="minibatch", batch_size=4), 0, x
        )
        assert v1 > 0.0
        assert v1 == pytest.approx(4.0 * v4, rel=1e-15)

    def test_identical_seeds_reproduce_draws(self):
        prob = problems.make_quadratic(2, 3, 0, seed=12)
        noise = NoiseModel(1.0)
        x_stack = np.zeros((2, 3))
        a = problems.sample_stochastic_gradient(prob, noise, x_stack, problems.agent_streams(5, 2))
        b = problems.sample_stochastic_gradient(prob, noise, x_stack, problems.agent_streams(5, 2))
        assert np.array_equal(a, b)

    def test_agent_and_init_streams_are_distinct(self):
        streams = problems.agent_streams(5, 3)
        draws = [s.standard_normal(4) for s in streams]
        init_draw = problems.init_stream(5, 3).standard_normal(4)
        for i in range(3):
            for j in range(i + 1, 3):
                assert not np.allclose(draws[i], draws[j])
            assert not np.allclose(draws[i], init_draw)


class TestNoiseStatistics:
    def test_additive_sample_mean_matches_gradient_per_coordinate(self):
        prob = problems.make_quadratic(2, 3, 0, seed=12)
        worst, bound = oracle_suites.coordinatewise_mean_check(
            prob, NoiseModel(1.0), seed=47
        )
        assert worst <= bound

    @pytest.mark.parametrize(
        "kind,mode",
        [("quadratic", "additive_gaussian"), ("quadratic", "minibatch"),
         ("logistic", "additive_gaussian"), ("logistic", "minibatch")],
    )
    def test_oracle_draws_are_unbiased(self, kind, mode):
        prob = (
            problems.make_quadratic(2, 3, 0, seed=12)
            if kind == "quadratic"
            else problems.make_logistic(2, 2, 5, 0.1, seed=3)
        )
        noise = NoiseModel(1.0, mode=mode)
        worst, bound = oracle_suites.unbiasedness_check(prob, noise, seed=53)
        assert worst <= bound

    @pytest.mark.parametrize(
        "mode,kwargs",
        [("additive_gaussian", {}), ("biased_additive", {"bias": 0.1}),
         ("minibatch", {"batch_size": 2})],
    )
    def test_second_moment_stays_within_declared_bound(self, mode, kwargs):
        prob = problems.make_quadratic(2, 3, 0, seed=12)
        noise = NoiseModel(1.0, mode=mode, **kwargs)
        worst, bound = oracle_suites.variance_check(prob, noise, seed=59)
        assert worst <= bound

    def test_biased_mode_shifts_the_mean_by_the_declared_offset(self):
        prob = problems.make_quadratic(2, 3, 0, seed=12)
        noise = NoiseModel(0.01, mode="biased_additive", bias=0.1)
        rng = np.random.default_rng(61)
        x_stack = rng.standard_normal((2, 3))
        exact = prob.grad_stack(x_stack)
        streams = problems.agent_streams(67, 2)
        n_draws = 20000
        acc = np.zeros_like(exact)
        for _ in range(n_draws):
            acc += problems.sample_stochastic_gradient(prob, noise, x_stack, streams)
        dev = acc / n_draws - exact
        for i in range(2):
            assert np.linalg.norm(dev[i] - noise.bias_vector(3)) <= 5.0 * 0.1 / math.sqrt(n_draws)
            assert np.linalg.norm(dev[i]) >= 0.05


class TestSerialization:
    @pytest.mark.parametrize("prob_idx", [0, 1, 2])
    def test_round_trip_preserves_evaluations_exactly(self, prob_idx):
        prob = _fixture_problems()[prob_idx]
        text = problems.problem_to_text(prob)
        back = problems.problem_from_text(text)
        assert (back.kind, back.n, back.p) == (prob.kind, prob.n, prob.p)
        assert back.l_f == prob.l_f
        assert back.f_star == prob.f_star
        assert back.nu == prob.nu
        assert back.nu_is_sampled == prob.nu_is_sampled
        assert back.lam == prob.lam and back.tau == prob.tau
        assert np.array_equal(np.asarray(back.x_ref), np.asarray(prob.x_ref))
        rng = np.random.default_rng(71)
        for _ in range(4):
            x_stack = rng.standard_normal((prob.n, prob.p))
            assert np.array_equal(back.grad_stack(x_stack), prob.grad_stack(x_stack))
            x = rng.standard_normal(prob.p)
            assert back.f(x) == prob.f(x)
        assert problems.problem_to_text(back) == text

    def test_unrecognized_header_rejected(self):
        with pytest.raises(ValueError, match="header"):
            problems.problem_from_text("not-a-problem v9\nkind quadratic\n")
