import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import beta as beta_dist

from srflvm.dp_mixture import (Assignments, MixtureComponents, MixtureState,
                               StickState, alpha_objective, assignment_kl,
                               expected_log_pi, mixture_moments, sample_alpha,
                               stick_log_moments, stick_objective, update_alpha,
                               update_v)
from srflvm.errors import ShapeError, ValidationError


def random_stick(rng, k):
    return StickState(a_v=rng.uniform(0.5, 5.0, k), b_v=rng.uniform(0.5, 5.0, k),
                      a_alpha=rng.uniform(0.5, 4.0), b_alpha=rng.uniform(0.5, 4.0))


def random_assignments(rng, half, k):
    return Assignments.from_logits(rng.standard_normal((half, k)))


class TestStickMoments:
    def test_uniform_beta(self):
        stick = StickState.uniform(3)
        e_v, e_1mv = stick_log_moments(stick)
        assert np.allclose(e_v, -1.0)
        assert np.allclose(e_1mv, -1.0)

    def test_digamma_recurrence(self):
        stick = StickState(a_v=np.array([2.0]), b_v=np.array([1.0]),
                           a_alpha=1.0, b_alpha=1.0)
        e_v, _ = stick_log_moments(stick)
        assert np.isclose(e_v[0], -0.5)

    def test_quadrature_oracle(self):
        a, b = 3.7, 0.9
        stick = StickState(a_v=np.array([a]), b_v=np.array([b]),
                           a_alpha=1.0, b_alpha=1.0)
        e_v, e_1mv = stick_log_moments(stick)
        pdf = beta_dist(a, b).pdf
        num_v = quad(lambda v: np.log(v) * pdf(v), 0, 1)[0]
        num_1mv = quad(lambda v: np.log1p(-v) * pdf(v), 0, 1, points=[1.0])[0]
        assert np.isclose(e_v[0], num_v, atol=1e-8)
        assert np.isclose(e_1mv[0], num_1mv, atol=1e-6)

    def test_expected_log_pi_prefix_structure(self):
        rng = np.random.default_rng(0)
        stick = random_stick(rng, 4)
        e_v, e_1mv = stick_log_moments(stick)
        e_pi = expected_log_pi(stick)
        assert np.isclose(e_pi[0], e_v[0])
        assert np.isclose(e_pi[2], e_v[2] + e_1mv[0] + e_1mv[1])


class TestMixtureMoments:
    def test_one_hot_recovers_component(self):
        comps = MixtureComponents(means=np.array([[0.0, 0.0], [2.0, 1.0]]),
                                  chol_factors=np.broadcast_to(np.eye(2), (2, 2, 2)))
        phi = Assignments(phi=np.array([[0.0, 1.0]]))
        m = mixture_moments(phi, comps)
        assert np.allclose(m.means[0], [2.0, 1.0])
        assert np.allclose(m.covs[0], np.eye(2))

    def test_even_mixture(self):
        comps = MixtureComponents(means=np.array([[0.0, 0.0], [2.0, 0.0]]),
                                  chol_factors=np.broadcast_to(np.eye(2), (2, 2, 2)))
        phi = Assignments(phi=np.array([[0.5, 0.5]]))
        m = mixture_moments(phi, comps)
        assert np.allclose(m.means[0], [1.0, 0.0])
        assert np.allclose(m.covs[0], np.eye(2))

    def test_brute_force_sum(self):
        rng = np.random.default_rng(1)
        k, q = 4, 3
        chols = np.tril(rng.standard_normal((k, q, q)))
        idx = np.arange(q)
        chols[:, idx, idx] = np.abs(chols[:, idx, idx]) + 0.5
        comps = MixtureComponents(means=rng.standard_normal((k, q)),
                                  chol_factors=chols)
        phi = random_assignments(rng, 5, k)
        m = mixture_moments(phi, comps)
        brute = sum(phi.phi[2, j] * comps.means[j] for j in range(k))
        assert np.allclose(m.means[2], brute, atol=1e-14)

    def test_shape_mismatch(self):
        comps = MixtureComponents(means=np.zeros((2, 2)),
                                  chol_factors=np.broadcast_to(np.eye(2), (2, 2, 2)))
        with pytest.raises(ShapeError):
            mixture_moments(Assignments(phi=np.ones((3, 3)) / 3.0), comps)


class TestConjugateUpdates:
    def test_update_v_single_cluster_mass(self):
        phi = Assignments(phi=np.hstack([np.ones((10, 1)), np.zeros((10, 2))]))
        a_v, b_v = update_v(phi, expected_alpha=2.0)
        assert np.allclose(a_v, [11.0, 1.0, 1.0])
        assert np.allclose(b_v, [2.0, 2.0, 2.0])

    def test_update_v_uniform(self):
        phi = Assignments(phi=np.full((4, 2), 0.5))
        a_v, b_v = update_v(phi, expected_alpha=1.0)
        assert np.isclose(a_v[0], 3.0)
        assert np.isclose(b_v[0], 3.0)

    def test_update_v_empty(self):
        phi = Assignments(phi=np.zeros((0, 3)))
        a_v, b_v = update_v(phi, expected_alpha=1.5)
        assert np.allclose(a_v, 1.0)
        assert np.allclose(b_v, 1.5)

    def test_update_alpha_single_uniform_stick(self):
        stick = StickState.uniform(1)
        a, b = update_alpha(stick)
        assert a == 1.0 and np.isclose(b, 2.0)
        stick.a_alpha, stick.b_alpha = a, b
        assert np.isclose(stick.expected_alpha(), 0.5)

    def test_update_alpha_empty(self):
        stick = StickState(a_v=np.zeros(0) + 1, b_v=np.zeros(0) + 1,
                           a_alpha=1.0, b_alpha=1.0, alpha0=2.0, beta0=3.0)
        # zero components: the update returns the prior
        assert update_alpha(stick) == (2.0, 3.0)

    def test_update_alpha_direct_formula(self):
        rng = np.random.default_rng(2)
        stick = random_stick(rng, 3)
        _, e_1mv = stick_log_moments(stick)
        a, b = update_alpha(stick)
        assert a == stick.alpha0
        assert np.isclose(b, stick.beta0 - e_1mv.sum(), atol=1e-12)

    @settings(deadline=None, max_examples=50)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(1, 8))
    def test_update_v_is_coordinate_ascent(self, seed, k, half):
        rng = np.random.default_rng(seed)
        stick = random_stick(rng, k)
        phi = random_assignments(rng, half, k)
        before = stick_objective(phi, stick)
        stick.a_v, stick.b_v = update_v(phi, stick.expected_alpha())
        assert stick_objective(phi, stick) >= before - 1e-10

    @settings(deadline=None, max_examples=50)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
    def test_update_alpha_is_coordinate_ascent(self, seed, k):
        rng = np.random.default_rng(seed)
        stick = random_stick(rng, k)
        before = alpha_objective(stick)
        stick.a_alpha, stick.b_alpha = update_alpha(stick)
        assert alpha_objective(stick) >= before - 1e-10


class TestAssignmentKl:
    def test_single_cluster_value(self):
        half = 6
        phi = Assignments(phi=np.ones((half, 1)))
        stick = StickState.uniform(1)
        assert np.isclose(assignment_kl(phi, stick), half)

    def test_matched_distributions_vanish(self):
        # point-mass assignment where the stick strongly favors cluster 1
        phi = Assignments(phi=np.hstack([np.ones((4, 1)), np.zeros((4, 1))]))
        stick = StickState(a_v=np.array([5000.0, 1.0]), b_v=np.array([1.0, 1.0]),
                           a_alpha=1.0, b_alpha=1.0)
        assert abs(assignment_kl(phi, stick)) < 1e-3

    def test_linearity_in_expected_log_pi(self):
        # MC over stick draws reproduces the plug-in expectation
        rng = np.random.default_rng(3)
        stick = random_stick(rng, 3)
        phi = random_assignments(rng, 4, 3)
        draws = 100_000
        v = rng.beta(stick.a_v, stick.b_v, size=(draws, 3))
        log_v = np.log(v)
        log_1mv = np.log1p(-v)
        prefix = np.concatenate([np.zeros((draws, 1)),
                                 np.cumsum(log_1mv, axis=1)[:, :-1]], axis=1)
        log_pi = log_v + prefix
        p = phi.phi
        ent = np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0))
        samples = ent - log_pi @ p.sum(axis=0)
        mc = samples.mean()
        stderr = samples.std() / np.sqrt(draws)
        assert abs(assignment_kl(phi, stick) - mc) <= 3.0 * stderr

    def test_zero_probability_contributes_zero(self):
        phi = Assignments(phi=np.array([[1.0, 0.0]]))
        stick = StickState.uniform(2)
        assert np.isfinite(assignment_kl(phi, stick))


class TestStateAndValidation:
    def test_assignments_rows_must_normalize(self):
        with pytest.raises(ValidationError):
            Assignments(phi=np.array([[0.5, 0.4]]))

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5), st.integers(1, 6))
    def test_logits_always_give_simplex_rows(self, seed, k, half):
        rng = np.random.default_rng(seed)
        phi = Assignments.from_logits(rng.standard_normal((half, k)) * 10)
        assert np.allclose(phi.phi.sum(axis=1), 1.0)
        assert np.all(phi.phi >= 0)

    def test_small_chol_diag_rejected(self):
        with pytest.raises(ValidationError):
            MixtureComponents(means=np.zeros((1, 2)),
                              chol_factors=np.array([[[1e-12, 0.0], [0.0, 1.0]]]))

    def test_nonpositive_stick_rejected(self):
        with pytest.raises(ValidationError):
            StickState(a_v=np.array([0.0]), b_v=np.array([1.0]),
                       a_alpha=1.0, b_alpha=1.0)

    def test_expected_alpha_is_exact_ratio(self):
        stick = StickState.uniform(2)
        stick.a_alpha, stick.b_alpha = 3.0, 4.0
        assert stick.expected_alpha() == 0.75

    def test_init_random_shapes(self):
        state = MixtureState.init_random(5, 3, 2, np.random.default_rng(0))
        assert state.assignments.phi.shape == (5, 3)
        assert state.spectral_moments().means.shape == (5, 2)
        assert np.allclose(state.occupancy(), 5.0 / 3.0)


class TestSampleAlpha:
    def test_moment(self):
        rng = np.random.default_rng(4)
        stick = StickState.uniform(1)
        draws = [sample_alpha(stick, rng) for _ in range(100_000)]
        assert abs(np.mean(draws) - 1.0) < 0.01

    def test_fixed_seed_reproducible(self):
        stick = StickState.uniform(1)
        a = sample_alpha(stick, np.random.default_rng(7))
        b = sample_alpha(stick, np.random.default_rng(7))
        assert a == b

    def test_large_rate_shrinks_draws(self):
        stick = StickState.uniform(1)
        stick.b_alpha = 1e9
        assert sample_alpha(stick, np.random.default_rng(0)) < 1e-6
