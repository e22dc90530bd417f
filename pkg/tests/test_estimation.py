"""Parameter packing, the optimization objective, and MAP fitting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddhmm.errors import EstimationError
from ddhmm.estimation import (
    FitConfig,
    ParamLayout,
    check_gradient,
    draw_prior_params,
    fit_map,
    format_diagnostics,
    log_prior,
    neg_log_posterior,
    pack_params,
    permute_states,
    prior_mode_params,
    reorder_states,
    sample_posterior_rw,
    unpack_params,
    _objective_for,
)
from ddhmm.inference import log_likelihood_complete
from ddhmm.simulate import GeneratorConfig, demo_params, sample_sessions
from conftest import random_params, random_session


@pytest.fixture(scope="module")
def corpus():
    sampled = sample_sessions(demo_params(), GeneratorConfig(seed=77), 25)
    return [s.session for s in sampled]


class TestPacking:
    def test_dimension(self):
        layout = ParamLayout(n_states=3)
        # K-1 + K + K + 2 K(K-1) + K*9 + K*9*5
        assert layout.dim == 2 + 3 + 3 + 12 + 27 + 135

    @given(seed=st.integers(min_value=0, max_value=2**31 - 1),
           k=st.integers(min_value=2, max_value=4))
    @settings(max_examples=25, deadline=None)
    def test_round_trip(self, seed, k):
        params = random_params(np.random.default_rng(seed), k)
        layout = ParamLayout.from_params(params)
        vec = pack_params(params)
        back = unpack_params(vec, layout)
        assert np.allclose(back.pi, params.pi, atol=1e-12)
        assert np.allclose(back.theta, params.theta, atol=1e-12)
        assert np.allclose(back.c, params.c, rtol=1e-12)
        assert np.allclose(back.mu, params.mu, atol=1e-12)
        assert np.allclose(back.delta, params.delta, atol=1e-12)
        assert np.allclose(back.emission_intercepts,
                           params.emission_intercepts, atol=1e-12)
        assert np.allclose(back.emission_coefficients,
                           params.emission_coefficients, atol=1e-12)

    def test_vector_round_trip(self):
        layout = ParamLayout(n_states=3)
        rng = np.random.default_rng(5)
        vec = rng.normal(0.0, 1.0, layout.dim)
        assert np.allclose(
            pack_params(unpack_params(vec, layout)), vec, atol=1e-10
        )


class TestPrior:
    def test_shape_prior_prefers_one(self):
        rng = np.random.default_rng(0)
        base = random_params(rng, 3)

        def with_c(c):
            return base.__class__(
                n_states=3, pi=base.pi, theta=base.theta,
                c=np.full(3, c), mu=base.mu, delta=base.delta,
                emission_intercepts=base.emission_intercepts,
                emission_coefficients=base.emission_coefficients,
            )

        # N(1,1) on c: moving every state from 1 to 2 costs 0.5 each
        diff = log_prior(with_c(2.0)) - log_prior(with_c(1.0))
        assert diff == pytest.approx(-1.5, abs=1e-12)

    def test_neg_log_posterior_decomposes(self, corpus):
        params = demo_params()
        nlp = neg_log_posterior(params, corpus)
        ll = sum(log_likelihood_complete(params, s) for s in corpus)
        assert nlp == pytest.approx(-(ll + log_prior(params)), rel=1e-12)


class TestObjective:
    def test_jax_matches_numpy(self, corpus):
        layout = ParamLayout.from_sessions(corpus, n_states=3)
        f, _ = _objective_for(corpus, layout)
        rng = np.random.default_rng(17)
        for _ in range(3):
            params = random_params(rng, 3)
            vec = pack_params(params)
            a = f(vec)
            b = neg_log_posterior(unpack_params(vec, layout), corpus)
            assert a == pytest.approx(b, rel=1e-9)

    def test_gradient_against_finite_differences(self, corpus):
        params = random_params(np.random.default_rng(23), 3)
        err = check_gradient(params, corpus[:8], step=1e-5)
        assert err < 1e-4


class TestRelabelling:
    def test_permutation_preserves_likelihood(self, corpus):
        params = random_params(np.random.default_rng(31), 3)
        for perm in ((1, 0, 2), (2, 1, 0), (1, 2, 0)):
            permuted = permute_states(params, perm)
            for session in corpus[:5]:
                assert log_likelihood_complete(
                    permuted, session
                ) == pytest.approx(
                    log_likelihood_complete(params, session), rel=1e-12
                )

    def test_reorder_sorts_by_shape(self):
        params = random_params(np.random.default_rng(37), 4)
        ordered = reorder_states(params)
        assert np.all(np.diff(ordered.c) >= 0)

    def test_reorder_is_idempotent(self):
        params = random_params(np.random.default_rng(41), 3)
        once = reorder_states(params)
        twice = reorder_states(once)
        assert np.array_equal(once.c, twice.c)
        assert np.array_equal(once.pi, twice.pi)


class TestFitting:
    def test_fit_improves_on_prior_mode(self, corpus):
        layout = ParamLayout.from_sessions(corpus, n_states=2)
        start = prior_mode_params(layout)
        before = neg_log_posterior(start, corpus)
        result = fit_map(
            corpus,
            FitConfig(n_states=2, restarts=2, max_iterations=150, seed=3),
        )
        assert result.objective < before
        assert result.params.n_states == 2
        assert np.all(np.diff(result.params.c) >= 0)  # canonical order
        assert result.n_sessions == len(corpus)
        assert len(result.restart_table) == 2

    def test_fit_accepts_warm_start(self, corpus):
        warm = random_params(np.random.default_rng(43), 2)
        result = fit_map(
            corpus,
            FitConfig(n_states=2, restarts=1, max_iterations=60, seed=0),
            init_params=warm,
        )
        assert math.isfinite(result.objective)

    def test_empty_corpus_rejected(self):
        from ddhmm.errors import ConfigError

        with pytest.raises(ConfigError):
            fit_map([], FitConfig(n_states=2))

    def test_diagnostics_format(self, corpus):
        result = fit_map(
            corpus,
            FitConfig(n_states=2, restarts=2, max_iterations=60, seed=9),
        )
        text = format_diagnostics(result)
        assert "restart,objective" in text
        assert "best_objective" in text
        assert str(len(corpus)) in text


class TestPriorDraws:
    def test_draw_respects_support(self):
        layout = ParamLayout(n_states=3)
        rng = np.random.default_rng(0)
        for _ in range(20):
            params = draw_prior_params(rng, layout)
            assert np.all(params.theta > 0) and np.all(params.theta < 1)
            assert np.all(params.c > 0)
            assert params.pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_prior_mode_is_neutral(self):
        layout = ParamLayout(n_states=3)
        params = prior_mode_params(layout)
        assert np.allclose(params.theta, 0.5)
        assert np.allclose(params.c, 1.0)
        assert np.allclose(params.pi, 1.0 / 3.0)
        assert np.all(params.mu == 0.0)


class TestSampler:
    def test_chain_properties(self, corpus):
        chain = sample_posterior_rw(
            corpus[:6],
            FitConfig(n_states=2, restarts=1, max_iterations=40, seed=1),
            chain_length=60,
            step_size=0.05,
            thin=2,
        )
        assert len(chain.draws) == 30
        assert 0.0 <= chain.acceptance_rate <= 1.0
        assert chain.vectors.shape[0] == 30
        for draw in chain.draws[:3]:
            assert np.all(np.diff(draw.c) >= 0)

    def test_target_override_recovers_gaussian(self):
        # with an externally supplied log density the chain must sample
        # that density, giving a direct correctness oracle
        def target(vec):
            return -0.5 * float(vec @ vec)

        # the unconstrained space for two states has 117 coordinates, so
        # the walk needs a step near 2.4 / sqrt(dim) to mix
        chain = sample_posterior_rw(
            None,
            FitConfig(n_states=2, restarts=1, seed=2),
            chain_length=6000,
            step_size=0.2,
            target_log_density=target,
        )
        sd = chain.vectors.std()
        assert 0.75 < sd < 1.25
        assert 0.05 < chain.acceptance_rate < 0.9
