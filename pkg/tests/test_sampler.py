import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgegen._random import make_rng
from bridgegen.exceptions import ShapeError, ValidationError
from bridgegen.nn import MlpNetwork
from bridgegen.pretrain import EncoderDecoderPair
from bridgegen.sampler import (
    DiffusionSchedule, StepSizeWarning, derive_schedule, em_step, generate, init_chain,
    resolution, run_chain, run_chains, truncate,
)
from bridgegen.score import ConvolutionDensity, OracleScore, ZeroScore


class ConstantScore:
    def __init__(self, b):
        self.b = np.asarray(b, dtype=float)

    def __call__(self, u, X):
        return np.broadcast_to(self.b, np.shape(X)).copy()


class TestSchedule:
    def test_reference_values(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            s = derive_schedule(1024, 2, 1.0, 1.0, 100)
        assert s.R == 6
        assert s.T == 1 - 1 / 36
        assert s.C_T == 2.0
        assert s.m_theory == 33_554_432
        assert s.step_target == 1024 ** -1.5 == 2.0 ** -15

    def test_single_sample(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            s = derive_schedule(1, 3, 0.5, 1.0, 10)
        assert s.R == 2 and s.T == 0.5

    def test_exact_power_is_not_rounded_down(self):
        # 81^(1/4) = 3 exactly
        assert resolution(81, 2, 1.0) == 4
        assert resolution(80, 2, 1.0) == 3

    def test_resolution_monotone(self):
        rs = [resolution(n, 2, 1.0) for n in (1, 10, 100, 1000, 10_000)]
        assert rs == sorted(rs)
        assert [resolution(1000, 2, b) for b in (0.5, 1, 2, 4)] == sorted(
            [resolution(1000, 2, b) for b in (0.5, 1, 2, 4)], reverse=True)

    @pytest.mark.parametrize("K", [1, 10, 1000, 32768, 40000])
    def test_warning_iff_step_exceeds_target(self, K):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            s = derive_schedule(1024, 2, 1.0, 1.0, K)
        fired = any(issubclass(w.category, StepSizeWarning) for w in caught)
        assert fired == (s.T / K > s.step_target)

    def test_defaults_and_validation(self):
        s = DiffusionSchedule(0.5, 10, 0.9)
        assert s.L == 6.0 and s.dt == pytest.approx(0.09)
        assert DiffusionSchedule(1.0, 0, 0.9).dt == 0.0
        for bad in [dict(sigma=-1, K=1, T=0.5), dict(sigma=1, K=1, T=1.0),
                    dict(sigma=1, K=-1, T=0.5), dict(sigma=1, K=1, T=0.5, noise_scale="x")]:
            with pytest.raises(ValidationError):
                DiffusionSchedule(**bad)


class TestChains:
    def test_zero_sigma_starts_on_a_point(self):
        P = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
        state = init_chain(P, 0.0, seed=3)
        assert any(np.array_equal(state.x, p) for p in P)
        assert state.start_index is not None and state.i == 0

    def test_initial_law_moments(self):
        P = np.array([[0.0, 0.0], [1.0, 0.0]])
        X = np.array([init_chain(P, 0.5, 0, c).x for c in range(4000)])
        # mean (0.5, 0); first-coordinate variance 0.25 + 0.25
        assert abs(X[:, 0].mean() - 0.5) < 5 * math.sqrt(0.5 / 4000)
        assert X[:, 0].var() == pytest.approx(0.5, rel=0.1)
        assert X[:, 1].var() == pytest.approx(0.25, rel=0.1)

    def test_zero_score_zero_noise_is_fixed(self):
        s = DiffusionSchedule(1.0, 5, 0.9)
        state = init_chain(np.zeros((1, 2)), 1.0, 0)
        x0 = state.x.copy()
        for _ in range(5):
            state = em_step(state, ZeroScore(2), s, eps=np.zeros(2))
        np.testing.assert_array_equal(state.x, x0)

    def test_constant_score_displacement(self):
        sigma, T, K, b = 0.7, 0.8, 64, np.array([1.0, -2.0])
        s = DiffusionSchedule(sigma, K, T)
        state = init_chain(np.zeros((1, 2)), sigma, 1)
        x0 = state.x.copy()
        for _ in range(K):
            state = em_step(state, ConstantScore(b), s, eps=np.zeros(2))
        np.testing.assert_allclose(state.x - x0, sigma ** 2 * T * b, rtol=1e-13)

    def test_single_step_by_hand(self):
        x1, sigma, K, T = np.array([0.5, -0.5]), 1.2, 4, 0.8
        s = DiffusionSchedule(sigma, K, T)
        cd = ConvolutionDensity(x1[None, :], sigma)
        state = init_chain(x1[None, :], sigma, 5)
        x, eps = state.x.copy(), np.array([0.3, -1.1])
        state = em_step(state, OracleScore(cd), s, eps=eps)
        dt = T / K
        # at t = 0 the score is -(x - x1) / sigma^2
        expected = x + dt * sigma ** 2 * (-(x - x1) / sigma ** 2) + sigma * math.sqrt(dt) * eps
        np.testing.assert_allclose(state.x, expected, rtol=1e-14)
        state = em_step(state, OracleScore(cd), s, eps=eps)
        x_prev = expected
        expected = (x_prev + dt * sigma ** 2 * (-(x_prev - x1) / (sigma ** 2 * (1 - dt)))
                    + sigma * math.sqrt(dt) * eps)
        np.testing.assert_allclose(state.x, expected, rtol=1e-14)

    def test_algorithm1_noise_scale(self):
        s = DiffusionSchedule(2.0, 8, 0.5, noise_scale="algorithm1")
        state = init_chain(np.zeros((1, 1)), 2.0, 0)
        x0 = state.x.copy()
        state = em_step(state, ZeroScore(1), s, eps=np.array([1.0]))
        np.testing.assert_allclose(state.x - x0, [2.0 / 8], rtol=1e-15)

    def test_zero_steps_returns_start(self):
        s = DiffusionSchedule(1.0, 0, 0.5)
        P = np.array([[0.2, 0.1]])
        np.testing.assert_array_equal(run_chain(P, ZeroScore(2), s, 9),
                                      init_chain(P, 1.0, 9).x)

    def test_step_past_end(self):
        s = DiffusionSchedule(1.0, 1, 0.5)
        state = em_step(init_chain(np.zeros((1, 1)), 1.0, 0), ZeroScore(1), s)
        with pytest.raises(ValidationError):
            em_step(state, ZeroScore(1), s)

    def test_batched_matches_single(self, rng):
        P = rng.uniform(-1, 1, size=(10, 2))
        score = OracleScore(ConvolutionDensity(P, 1.0))
        s = DiffusionSchedule(1.0, 20, 0.9)
        batch, init = run_chains(P, score, s, 6, seed=4, start=3, return_initial=True)
        for c in range(6):
            np.testing.assert_allclose(batch[c], run_chain(P, score, s, 4, chain_index=3 + c),
                                       rtol=1e-12, atol=1e-12)
            np.testing.assert_array_equal(init[c], init_chain(P, 1.0, 4, 3 + c).x)

    def test_batch_layout_does_not_matter(self, rng):
        P = rng.uniform(-1, 1, size=(5, 2))
        score = OracleScore(ConvolutionDensity(P, 1.0))
        s = DiffusionSchedule(1.0, 10, 0.9)
        whole = run_chains(P, score, s, 8, seed=1)
        split = np.concatenate([run_chains(P, score, s, 3, seed=1),
                                run_chains(P, score, s, 5, seed=1, start=3)])
        np.testing.assert_allclose(whole, split, rtol=1e-13, atol=1e-13)
        tiny = run_chains(P, score, s, 8, seed=1, max_noise_bytes=1)
        np.testing.assert_allclose(whole, tiny, rtol=1e-13, atol=1e-13)

    def test_oracle_sampling_contracts_toward_data(self):
        from bridgegen.metrics import w2_exact
        P = make_rng(0).uniform(-1, 1, size=(64, 2))
        s = DiffusionSchedule(1.0, 200, 0.97)
        end, start = run_chains(P, OracleScore(ConvolutionDensity(P, 1.0)), s, 64, seed=2,
                                return_initial=True)
        assert w2_exact(end, P) < 0.5 * w2_exact(start, P)


class TestTruncate:
    def test_boundary_is_kept(self):
        np.testing.assert_array_equal(truncate([2.0, -1.0], 2.0), [2.0, -1.0])
        np.testing.assert_array_equal(truncate([2.0 + 1e-12, 0.0], 2.0), [0.0, 0.0])

    def test_batch(self):
        X = np.array([[0.5, 0.5], [3.0, 0.0], [0.0, -3.0]])
        np.testing.assert_array_equal(truncate(X, 1.0), [[0.5, 0.5], [0, 0], [0, 0]])
        assert truncate(np.zeros((0, 2)), 1.0).shape == (0, 2)

    def test_idempotent(self, rng):
        X = rng.normal(size=(50, 3)) * 3
        np.testing.assert_array_equal(truncate(truncate(X, 2.0), 2.0), truncate(X, 2.0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.integers(0, 10**6))
    def test_monotone_in_level(self, a, b, seed):
        X = make_rng(seed).normal(size=(30, 2)) * 3
        lo, hi = min(a, b), max(a, b)
        zeroed = lambda L: int(np.sum(~np.any(truncate(X, L), axis=1)))
        assert zeroed(hi) <= zeroed(lo)
        assert np.max(np.abs(truncate(X, lo))) <= lo


class TestGenerate:
    def test_identity_decoder(self, rng):
        P = rng.uniform(-1, 1, size=(8, 2))
        score = OracleScore(ConvolutionDensity(P, 1.0))
        s = DiffusionSchedule(1.0, 10, 0.9, L=1.5)
        batch = generate(None, P, score, s, 12, seed=3)
        np.testing.assert_array_equal(batch.points, truncate(run_chains(P, score, s, 12, 3), 1.5))

    def test_linear_decoder(self, rng):
        P = rng.uniform(-1, 1, size=(8, 2))
        A = rng.normal(size=(3, 2))
        pair = EncoderDecoderPair(MlpNetwork((3, 2), [A.T], [np.zeros(2)]),
                                  MlpNetwork((2, 3), [A], [np.zeros(3)]))
        s = DiffusionSchedule(1.0, 5, 0.9)
        latent = generate(None, P, ZeroScore(2), s, 4, seed=0).points
        np.testing.assert_allclose(generate(pair, P, ZeroScore(2), s, 4, seed=0).points,
                                   latent @ A.T, rtol=1e-14)

    def test_zero_count(self):
        P = np.zeros((2, 2))
        s = DiffusionSchedule(1.0, 5, 0.9)
        assert generate(None, P, ZeroScore(2), s, 0, 0).points.shape == (0, 2)

    def test_init_pool_dimension(self):
        s = DiffusionSchedule(1.0, 5, 0.9)
        with pytest.raises(ShapeError):
            generate(None, np.zeros((2, 2)), ZeroScore(2), s, 3, 0, init_points=np.zeros((2, 3)))

    def test_algorithm1_differs_from_em(self, rng):
        P = rng.uniform(-1, 1, size=(8, 2))
        score = OracleScore(ConvolutionDensity(P, 1.0))
        a = generate(None, P, score, DiffusionSchedule(1.0, 10, 0.9), 5, 0).points
        b = generate(None, P, score, DiffusionSchedule(1.0, 10, 0.9, noise_scale="algorithm1"),
                     5, 0).points
        assert not np.allclose(a, b)
