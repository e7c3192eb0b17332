import numpy as np
import pytest

from bridgegen._random import make_rng
from bridgegen.datagen import SampleBatch, TargetSpec, sample_target
from bridgegen.exceptions import ShapeError, ValidationError
from bridgegen.nn import AdamHyper, MlpNetwork, init_network, lipschitz_upper_bound
from bridgegen.pretrain import (
    EncoderDecoderPair, decode_batch, encode_batch, lipschitz_estimate, load_pair,
    outside_cube_fraction, pretrain, reconstruction_loss, save_pair,
)


def linear(W, b=None):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return MlpNetwork(W.shape[::-1], [W], [np.zeros(W.shape[0]) if b is None else np.asarray(b)])


Y3 = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0]])


class TestReconstructionLoss:
    def test_identity_pair_has_zero_loss(self):
        pair = EncoderDecoderPair(linear(np.eye(2)), linear(np.eye(2)))
        assert reconstruction_loss(pair, Y3) == 0.0

    def test_zero_decoder_gives_mean_squared_norm(self):
        pair = EncoderDecoderPair(linear(np.eye(2)), linear(np.zeros((2, 2))))
        assert reconstruction_loss(pair, Y3) == pytest.approx((1 + 4 + 2) / 3)

    def test_constant_decoder_hand_value(self):
        # decoder ignores its input and returns c = (1, 1)
        pair = EncoderDecoderPair(linear(np.eye(2)), linear(np.zeros((2, 2)), [1.0, 1.0]))
        expected = ((0 + 1) + (1 + 1) + (4 + 4)) / 3
        assert reconstruction_loss(pair, Y3) == pytest.approx(expected)

    def test_row_permutation_invariance(self, rng):
        pair = EncoderDecoderPair(init_network((3, 5, 2), rng), init_network((2, 5, 3), rng))
        Y = rng.normal(size=(50, 3))
        a = reconstruction_loss(pair, Y)
        b = reconstruction_loss(pair, Y[rng.permutation(50)])
        assert a == pytest.approx(b, rel=1e-12)

    def test_errors(self):
        pair = EncoderDecoderPair(linear(np.eye(2)), linear(np.eye(2)))
        with pytest.raises(ValidationError):
            reconstruction_loss(pair, np.zeros((0, 2)))
        with pytest.raises(ShapeError):
            reconstruction_loss(pair, np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            EncoderDecoderPair(linear(np.eye(2)), linear(np.ones((3, 2))))


class TestLipschitz:
    def test_scaled_identity(self, rng):
        est = lipschitz_estimate(linear(2 * np.eye(3)), rng.normal(size=(100, 3)), pairs=500)
        assert 2 - 1e-9 <= est <= 2

    def test_below_spectral_product(self, rng):
        for _ in range(5):
            net = init_network((3, 8, 8, 2), rng)
            est = lipschitz_estimate(net, rng.uniform(-1, 1, size=(200, 3)), pairs=2000)
            assert est <= lipschitz_upper_bound(net) * (1 + 1e-9)

    def test_degenerate_probe(self):
        with pytest.raises(ValidationError):
            lipschitz_estimate(linear(np.eye(2)), np.ones((5, 2)), pairs=10)


class TestPretrain:
    def test_zero_learning_rate_keeps_initialization(self):
        Y = sample_target(TargetSpec("uniform_cube", 3), 64, 0).points
        pair = pretrain((3, 4, 2), (2, 4, 3), Y, epochs=2, hyper=AdamHyper(lr=0.0), seed=5)
        enc0 = init_network((3, 4, 2), make_rng(5, 0))
        for a, b in zip(pair.encoder.parameters(), enc0.parameters()):
            np.testing.assert_array_equal(a, b)
        assert pair.final_loss == pytest.approx(pair.initial_loss, rel=1e-14)

    def test_loss_decreases_and_history_shape(self):
        Y = sample_target(TargetSpec("embedded_manifold", 4, latent_dim=2), 256, 0).points
        pair = pretrain((4, 16, 2), (2, 16, 4), Y, epochs=30, hyper=AdamHyper(lr=3e-3), seed=0)
        assert [e for e, _ in pair.loss_history] == list(range(1, 31))
        assert pair.final_loss < 0.5 * pair.initial_loss
        assert all(g is not None and g > 0 for g in pair.lipschitz_estimates)

    def test_determinism(self):
        Y = sample_target(TargetSpec("uniform_cube", 2), 50, 1).points
        a = pretrain((2, 6, 1), (1, 6, 2), Y, epochs=3, seed=7)
        b = pretrain((2, 6, 1), (1, 6, 2), Y, epochs=3, seed=7)
        for p, q in zip(a.decoder.parameters(), b.decoder.parameters()):
            assert p.tobytes() == q.tobytes()
        assert a.loss_history == b.loss_history

    def test_dimension_checks(self):
        with pytest.raises(ShapeError):
            pretrain((3, 2), (2, 3), np.zeros((4, 2)), epochs=1)
        with pytest.raises(ShapeError):
            pretrain((2, 2), (1, 2), np.zeros((4, 2)), epochs=1)

    def test_save_and_load(self, tmp_path):
        Y = sample_target(TargetSpec("uniform_cube", 2), 32, 1).points
        pair = pretrain((2, 4, 1), (1, 4, 2), Y, epochs=2, seed=3, lipschitz_pairs=100)
        save_pair(pair, tmp_path)
        back = load_pair(tmp_path)
        assert back.final_loss == pair.final_loss
        assert back.lipschitz_estimates == pair.lipschitz_estimates
        np.testing.assert_array_equal(back.reconstruct(Y), pair.reconstruct(Y))


def test_encode_decode_batches():
    pair = EncoderDecoderPair(linear([[1.0, 0.0]]), linear([[2.0], [0.0]]))
    z = encode_batch(pair, SampleBatch(Y3, seed=4))
    assert z.dim_tag == "latent" and z.seed == 4
    np.testing.assert_array_equal(z.points[:, 0], [1.0, 0.0, -1.0])
    np.testing.assert_array_equal(decode_batch(pair, z).points, [[2, 0], [0, 0], [-2, 0]])
    assert decode_batch(pair, np.zeros((0, 1))).points.shape == (0, 2)


def test_outside_cube_fraction():
    assert outside_cube_fraction(np.array([[0.5, 1.0], [1.5, 0.0], [0.0, -2.0], [0, 0]])) == 0.5
