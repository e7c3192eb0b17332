import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bridgegen.datagen import TargetSpec, sample_target
from bridgegen.estimators import DenoisingScoreModel, LatentAutoencoder, LatentBridgeGenerator

SPEC = TargetSpec("embedded_manifold", 4, latent_dim=2)


@pytest.fixture(scope="module")
def data():
    return sample_target(SPEC, 128, seed=0).points


class TestAutoencoder:
    def test_params_and_clone(self):
        ae = LatentAutoencoder(latent_dim=3, epochs=5)
        assert ae.get_params()["latent_dim"] == 3
        twin = clone(ae)
        assert twin.get_params() == ae.get_params() and twin is not ae

    def test_fit_transform(self, data):
        ae = LatentAutoencoder(encoder_hidden=(16,), decoder_hidden=(16,), epochs=20,
                               learning_rate=3e-3)
        Z = ae.fit_transform(data)
        assert Z.shape == (128, 2)
        assert ae.inverse_transform(Z).shape == data.shape
        assert ae.score(data) == pytest.approx(-ae.loss_history_[-1], rel=1e-12)
        assert ae.n_features_in_ == 4

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            LatentAutoencoder().transform(data)

    def test_feature_count_checked(self, data):
        ae = LatentAutoencoder(epochs=1).fit(data)
        with pytest.raises(ValueError):
            ae.transform(data[:, :3])


class TestScoreModel:
    def test_fit_predict(self):
        Z = np.random.default_rng(0).uniform(-1, 1, size=(16, 2))
        sm = DenoisingScoreModel(hidden=(16,), steps=30, batch_size=32).fit(Z)
        assert sm.predict(Z, 0.5).shape == (16, 2)
        assert sm.score() < 0


class TestGenerator:
    def test_oracle_pipeline(self, data):
        gen = LatentBridgeGenerator(
            n_steps=50, stop_time=0.9, score_mode="oracle",
            autoencoder=LatentAutoencoder(encoder_hidden=(16,), decoder_hidden=(16,), epochs=10))
        gen.fit(data)
        assert gen.sample(20).shape == (20, 4)
        assert gen.sample_latent(5).shape == (5, 2)
        np.testing.assert_array_equal(gen.sample(7, random_state=1), gen.sample(7, random_state=1))
        enc_gamma, dec_gamma = gen.lipschitz_report(data, pairs=200)
        assert enc_gamma > 0 and dec_gamma > 0
        # the template estimator is cloned, never fitted in place
        assert not hasattr(gen.autoencoder, "pair_")

    def test_learned_score(self, data):
        gen = LatentBridgeGenerator(
            n_steps=20, stop_time=0.9,
            autoencoder=LatentAutoencoder(encoder_hidden=(8,), decoder_hidden=(8,), epochs=2),
            score_model=DenoisingScoreModel(hidden=(8,), steps=10, batch_size=16))
        gen.fit(data)
        assert gen.score_model_.stop_time == 0.9
        assert gen.sample(3).shape == (3, 4)

    def test_derived_schedule(self, data):
        gen = LatentBridgeGenerator(score_mode="oracle", derive_schedule=True, n_steps=400000,
                                    autoencoder=LatentAutoencoder(epochs=1))
        gen.fit(data)
        assert gen.schedule_.R == 4 and gen.schedule_.T == 1 - 4.0 ** -2

    def test_bad_score_mode(self, data):
        with pytest.raises(ValueError):
            LatentBridgeGenerator(score_mode="magic",
                                  autoencoder=LatentAutoencoder(epochs=1)).fit(data)
