import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

import srflvm._reparam as rp
from srflvm.dp_mixture import MixtureState
from srflvm.errors import (NumericDegeneracyError, ShapeError, ValidationError)
from srflvm.gaussian_block import (GaussianLikelihood, ObservationSet,
                                   _chol_jitter, draw_feature_matrix,
                                   gaussian_elbo, gaussian_elbo_core,
                                   gaussian_elbo_grad, gaussian_impute,
                                   marginal_loglik)
from srflvm.latent_state import LatentState


def small_problem(seed=0, n=6, m=2, q=2, half=3, k=2, mask=None):
    rng = np.random.default_rng(seed)
    obs = ObservationSet(Y=rng.standard_normal((n, m)), mask=mask)
    latent = LatentState(mean=rng.standard_normal((n, q)) * 0.5,
                         log_scale=np.full((n, q), np.log(0.3)))
    mixture = MixtureState.init_random(half, k, q, rng)
    return rng, obs, latent, mixture


class TestMarginalLoglik:
    def test_matches_dense_gaussian(self):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((5, 3)) / np.sqrt(3)
        y = rng.standard_normal(5)
        nv = 0.3
        dense = multivariate_normal(mean=np.zeros(5),
                                    cov=phi @ phi.T + nv * np.eye(5)).logpdf(y)
        assert np.isclose(marginal_loglik(y, phi, nv), dense, atol=1e-12)

    def test_masked_matches_dense_on_observed_rows(self):
        rng = np.random.default_rng(1)
        phi = rng.standard_normal((6, 2)) / np.sqrt(2)
        y = rng.standard_normal(6)
        sel = np.array([True, False, True, True, False, True])
        nv = 0.5
        dense = multivariate_normal(
            mean=np.zeros(int(sel.sum())),
            cov=phi[sel] @ phi[sel].T + nv * np.eye(int(sel.sum()))).logpdf(y[sel])
        assert np.isclose(marginal_loglik(y, phi, nv, mask_col=sel), dense,
                          atol=1e-12)

    def test_low_rank_agrees_with_dense_many_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = rng.integers(2, 12)
            L = rng.integers(1, 8)
            phi = rng.standard_normal((n, L))
            y = rng.standard_normal(n)
            nv = float(rng.uniform(0.05, 2.0))
            dense = multivariate_normal(
                mean=np.zeros(n), cov=phi @ phi.T + nv * np.eye(n)).logpdf(y)
            assert abs(marginal_loglik(y, phi, nv) - dense) <= 1e-8

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            marginal_loglik(np.zeros(3), np.zeros((4, 2)), 1.0)

    def test_all_masked_column_rejected(self):
        with pytest.raises(ValidationError):
            marginal_loglik(np.zeros(3), np.ones((3, 2)), 1.0,
                            mask_col=np.zeros(3, dtype=bool))


class TestObservationSet:
    def test_default_mask_fully_observed(self):
        obs = ObservationSet(Y=np.zeros((3, 2)))
        assert obs.fully_observed

    def test_empty_column_rejected(self):
        mask = np.ones((3, 2), dtype=bool)
        mask[:, 1] = False
        with pytest.raises(ValidationError):
            ObservationSet(Y=np.zeros((3, 2)), mask=mask)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ObservationSet(Y=np.zeros((3, 2)), mask=np.ones((2, 3), dtype=bool))


class TestCholJitter:
    def test_exact_when_possible(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        assert np.allclose(_chol_jitter(A) @ _chol_jitter(A).T, A)

    def test_escalates_on_near_singular(self):
        # rank-1 plus a negative round-off perturbation needs jitter
        v = np.ones(3)
        A = np.outer(v, v) - 1e-13 * np.eye(3)
        chol = _chol_jitter(A)
        assert np.all(np.isfinite(chol))

    def test_degenerate_raises(self):
        with pytest.raises(NumericDegeneracyError):
            _chol_jitter(-np.eye(2))


class TestElboEstimator:
    def test_deterministic_given_seed(self):
        _, obs, latent, mixture = small_problem()
        a = gaussian_elbo(obs, latent, mixture, 0.5, 4, np.random.default_rng(3))
        b = gaussian_elbo(obs, latent, mixture, 0.5, 4, np.random.default_rng(3))
        assert a == b

    def test_requires_positive_sample_count(self):
        _, obs, latent, mixture = small_problem()
        with pytest.raises(ValidationError):
            gaussian_elbo(obs, latent, mixture, 0.5, 0, np.random.default_rng(0))

    def test_masked_elbo_drops_hidden_entries(self):
        # scaling a masked-out entry must not change the objective
        rng, obs, latent, mixture = small_problem(seed=4)
        mask = np.ones(obs.shape, dtype=bool)
        mask[0, 0] = False
        obs_a = ObservationSet(Y=obs.Y, mask=mask)
        y2 = obs.Y.copy()
        y2[0, 0] = 1e6
        obs_b = ObservationSet(Y=y2, mask=mask)
        a = gaussian_elbo(obs_a, latent, mixture, 0.5, 3, np.random.default_rng(5))
        b = gaussian_elbo(obs_b, latent, mixture, 0.5, 3, np.random.default_rng(5))
        assert np.isclose(a, b)

    def test_elbo_lower_bounds_evidence(self):
        # tiny instance: importance-free MC of log p(Y) with X from the prior
        # and W from the current spectral mixture must dominate the bound
        rng = np.random.default_rng(6)
        n, q, half = 3, 1, 1
        obs = ObservationSet(Y=rng.standard_normal((n, 1)) * 0.5)
        latent = LatentState(mean=rng.standard_normal((n, q)) * 0.3,
                             log_scale=np.full((n, q), np.log(0.8)))
        mixture = MixtureState.init_random(half, 1, q, rng)
        nv = 0.4
        elbo = gaussian_elbo(obs, latent, mixture, nv, 2000,
                             np.random.default_rng(7))

        moments = mixture.spectral_moments()
        chol_w = np.linalg.cholesky(moments.covs)
        draws = 200_000
        x = rng.standard_normal((draws, n, q))
        w = moments.means + np.einsum("lqr,slr->slq", chol_w,
                                      rng.standard_normal((draws, half, q)))
        angles = np.einsum("snq,slq->snl", x, w)
        phi = np.empty((draws, n, 2 * half))
        phi[..., 0::2] = np.sin(angles)
        phi[..., 1::2] = np.cos(angles)
        phi *= 1.0 / np.sqrt(half)
        cov = phi @ phi.transpose(0, 2, 1) + nv * np.eye(n)
        chol = np.linalg.cholesky(cov)
        z = np.linalg.solve(chol, np.broadcast_to(obs.Y[:, 0], (draws, n))[..., None])
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        ll = -0.5 * n * np.log(2 * np.pi) - 0.5 * logdet - 0.5 * (z[..., 0] ** 2).sum(axis=1)
        log_evidence = logsumexp(ll) - np.log(draws)
        assert elbo <= log_evidence + 0.02

    def test_gradients_match_finite_differences(self):
        _, obs, latent, mixture = small_problem(seed=8, n=5, m=2, q=2, half=2, k=2)
        log_nv = float(np.log(0.7))
        noise = rp.draw_noise(3, 5, 2, 2, np.random.default_rng(9))

        def value():
            v, _ = gaussian_elbo_core(obs, latent, mixture, log_nv, noise,
                                      with_assignment_kl=True)
            return v

        _, grads = gaussian_elbo_core(obs, latent, mixture, log_nv, noise,
                                      want_grads=True, with_assignment_kl=True)
        step = 1e-5
        targets = {
            "latent_mean": latent.mean,
            "latent_scale": latent.log_scale,
            "logits": mixture.assign_logits,
            "comp_means": mixture.components.means,
            "comp_chols": mixture.components.chol_factors,
        }
        rng = np.random.default_rng(10)
        for name, arr in targets.items():
            flat_idx = rng.choice(arr.size, size=min(4, arr.size), replace=False)
            for fi in flat_idx:
                idx = np.unravel_index(fi, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + step
                up = value()
                arr[idx] = orig - step
                dn = value()
                arr[idx] = orig
                fd = (up - dn) / (2 * step)
                assert abs(fd - grads[name][idx]) <= 1e-4 * max(1.0, abs(fd)), name

        base_up, _ = gaussian_elbo_core(obs, latent, mixture, log_nv + step, noise)
        base_dn, _ = gaussian_elbo_core(obs, latent, mixture, log_nv - step, noise)
        fd = (base_up - base_dn) / (2 * step)
        assert abs(fd - grads["log_noise"]) <= 1e-4 * max(1.0, abs(fd))

    def test_grad_entry_point_shapes(self):
        _, obs, latent, mixture = small_problem(seed=11)
        grads = gaussian_elbo_grad(obs, latent, mixture, 0.5, 2,
                                   np.random.default_rng(12))
        assert grads["latent_mean"].shape == latent.mean.shape
        assert grads["comp_means"].shape == mixture.components.means.shape
        assert np.isscalar(grads["log_noise"]) or grads["log_noise"].shape == ()


class TestImputation:
    def test_fully_observed_passthrough(self):
        _, obs, latent, mixture = small_problem(seed=13)
        out = gaussian_impute(obs, latent, mixture, 0.5, 3,
                              np.random.default_rng(14))
        assert np.array_equal(out, obs.Y)

    def test_observed_entries_unchanged(self):
        rng, obs, latent, mixture = small_problem(seed=15)
        mask = np.ones(obs.shape, dtype=bool)
        mask[[0, 2], [0, 1]] = False
        obs = ObservationSet(Y=obs.Y, mask=mask)
        out = gaussian_impute(obs, latent, mixture, 0.5, 3,
                              np.random.default_rng(16))
        assert np.array_equal(out[mask], obs.Y[mask])
        assert not np.array_equal(out[~mask], obs.Y[~mask])

    def test_recovers_exact_low_rank_signal(self):
        # data generated exactly as Phi h with tiny noise: conditional means
        # reproduce the hidden entries
        rng = np.random.default_rng(17)
        n, q, half = 40, 2, 5
        latent = LatentState(mean=rng.standard_normal((n, q)),
                             log_scale=np.full((n, q), np.log(1e-6)))
        mixture = MixtureState.init_random(half, 1, q, rng)
        # pin the spectral posterior to (near) point masses so every feature
        # draw reproduces the generating frequencies
        mixture.components.chol_factors = (
            1e-6 * np.broadcast_to(np.eye(q), (1, q, q)).copy())
        phi = draw_feature_matrix(latent, mixture, np.random.default_rng(18))
        h = rng.standard_normal(2 * half)
        y = (phi @ h)[:, None]
        mask = np.ones((n, 1), dtype=bool)
        mask[:5, 0] = False
        obs = ObservationSet(Y=y, mask=mask)
        out = gaussian_impute(obs, latent, mixture, 1e-8, 50,
                              np.random.default_rng(18))
        assert np.allclose(out[:5, 0], y[:5, 0], atol=0.05)

    def test_requires_positive_sample_count(self):
        _, obs, latent, mixture = small_problem(seed=19)
        with pytest.raises(ValidationError):
            gaussian_impute(obs, latent, mixture, 0.5, 0, np.random.default_rng(0))


class TestLikelihoodParams:
    def test_noise_clamp(self):
        lik = GaussianLikelihood(log_noise_var=-100.0)
        lik.clamp()
        assert np.isclose(lik.noise_var, 1e-8)
        lik = GaussianLikelihood(log_noise_var=100.0)
        lik.clamp()
        assert np.isclose(lik.noise_var, 1e8)
