"""scikit-learn compatible wrappers around the functional pipeline.

``LatentAutoencoder`` is a transformer (``fit``/``transform``/``inverse_transform``),
``DenoisingScoreModel`` fits a time-conditioned score on latent points, and
``LatentBridgeGenerator`` chains both with the sampler so a fitted generator
can ``sample`` new ambient points. All hyperparameters are constructor
arguments, so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted, validate_data

from .nn import AdamHyper, forward
from .pretrain import lipschitz_estimate, pretrain, reconstruction_loss
from .sampler import DiffusionSchedule, derive_schedule, generate
from .score import ConvolutionDensity, OracleScore, midpoint_grid, score_l2_error, train_score


class LatentAutoencoder(TransformerMixin, BaseEstimator):
    """ReLU encoder/decoder fitted by reconstruction error minimization.

    Parameters
    ----------
    latent_dim : int
        Bottleneck dimension.
    encoder_hidden, decoder_hidden : tuple of int
        Hidden layer widths.
    epochs, batch_size, learning_rate :
        Adam minibatch training settings.
    random_state : int
        Seed for initialization and shuffling.
    """

    def __init__(self, latent_dim=2, encoder_hidden=(32, 32), decoder_hidden=(32, 32),
                 epochs=100, batch_size=64, learning_rate=1e-3, random_state=0):
        self.latent_dim = latent_dim
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        d = X.shape[1]
        self.pair_ = pretrain((d, *self.encoder_hidden, self.latent_dim),
                              (self.latent_dim, *self.decoder_hidden, d), X,
                              epochs=self.epochs, batch_size=self.batch_size,
                              hyper=AdamHyper(lr=self.learning_rate), seed=self.random_state)
        self.loss_history_ = [loss for _, loss in self.pair_.loss_history]
        self.lipschitz_estimates_ = self.pair_.lipschitz_estimates
        return self

    def transform(self, X):
        check_is_fitted(self, "pair_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return forward(self.pair_.encoder, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "pair_")
        Z = np.asarray(Z, dtype=np.float64)
        return forward(self.pair_.decoder, Z)

    def score(self, X, y=None):
        """Negative mean squared reconstruction error."""
        check_is_fitted(self, "pair_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return -reconstruction_loss(self.pair_, X)


class DenoisingScoreModel(BaseEstimator):
    """Time-conditioned score network fitted by denoising score matching.

    ``predict(X, time)`` returns the estimated ``grad log q_time`` at the rows of ``X``.
    """

    def __init__(self, sigma=1.0, stop_time=0.97, hidden=(64, 64, 64), steps=2000,
                 batch_size=256, learning_rate=1e-3, random_state=0):
        self.sigma = sigma
        self.stop_time = stop_time
        self.hidden = hidden
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        self.model_ = train_score(X, self.hidden, self.sigma, self.stop_time, steps=self.steps,
                                  batch_size=self.batch_size,
                                  hyper=AdamHyper(lr=self.learning_rate), seed=self.random_state)
        self.density_ = ConvolutionDensity(X, self.sigma)
        return self

    def predict(self, X, time):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.model_(time, X)

    def score(self, X=None, y=None, grid_size=16, eval_points=256):
        """Negative time-averaged squared error against the exact mixture score of the fit data."""
        check_is_fitted(self, "model_")
        grid = midpoint_grid(self.stop_time, grid_size)
        return -score_l2_error(self.model_, self.density_, grid, eval_points, self.random_state)


class LatentBridgeGenerator(BaseEstimator):
    """Latent bridge diffusion generator.

    ``fit`` pretrains the autoencoder (on ``pretrain_X`` if given, else on ``X``),
    encodes ``X`` and fits the score (or uses the exact mixture score when
    ``score_mode="oracle"``). ``sample`` runs the truncated Euler-Maruyama chains
    and decodes them.

    With ``derive_schedule=True`` the stopping time comes from the sample size
    and ``smoothness`` instead of ``stop_time``.
    """

    def __init__(self, latent_dim=2, sigma=1.0, n_steps=256, stop_time=0.97,
                 truncation=None, noise_scale="em", score_mode="learned", derive_schedule=False,
                 smoothness=1.0, autoencoder=None, score_model=None, random_state=0):
        self.latent_dim = latent_dim
        self.sigma = sigma
        self.n_steps = n_steps
        self.stop_time = stop_time
        self.truncation = truncation
        self.noise_scale = noise_scale
        self.score_mode = score_mode
        self.derive_schedule = derive_schedule
        self.smoothness = smoothness
        self.autoencoder = autoencoder
        self.score_model = score_model
        self.random_state = random_state

    def _schedule(self, n):
        if self.derive_schedule:
            return derive_schedule(n, self.latent_dim, self.smoothness, self.sigma, self.n_steps,
                                   self.truncation, self.noise_scale)
        return DiffusionSchedule(self.sigma, self.n_steps, self.stop_time, self.truncation,
                                 self.noise_scale)

    def fit(self, X, y=None, pretrain_X=None):
        X = validate_data(self, X, dtype=np.float64)
        ae = clone(self.autoencoder) if self.autoencoder is not None else LatentAutoencoder(
            random_state=self.random_state)
        ae.set_params(latent_dim=self.latent_dim)
        self.autoencoder_ = ae.fit(X if pretrain_X is None else pretrain_X)
        self.latent_ = self.autoencoder_.transform(X)
        self.schedule_ = self._schedule(X.shape[0])
        if self.score_mode == "oracle":
            self.score_fn_ = OracleScore(ConvolutionDensity(self.latent_, self.sigma))
        elif self.score_mode == "learned":
            sm = clone(self.score_model) if self.score_model is not None else \
                DenoisingScoreModel(random_state=self.random_state)
            sm.set_params(sigma=self.sigma, stop_time=self.schedule_.T)
            self.score_model_ = sm.fit(self.latent_)
            self.score_fn_ = self.score_model_.model_
        else:
            raise ValueError(f"score_mode must be 'learned' or 'oracle', got {self.score_mode!r}")
        return self

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "score_fn_")
        seed = self.random_state if random_state is None else random_state
        batch = generate(self.autoencoder_.pair_, self.latent_, self.score_fn_, self.schedule_,
                         n_samples, seed)
        return batch.points

    def sample_latent(self, n_samples=1, random_state=None):
        """Truncated latent chain endpoints, before decoding."""
        check_is_fitted(self, "score_fn_")
        seed = self.random_state if random_state is None else random_state
        return generate(None, self.latent_, self.score_fn_, self.schedule_, n_samples, seed).points

    def lipschitz_report(self, X, pairs=2000):
        """Empirical Lipschitz ratios of the fitted encoder and decoder on ``X``."""
        check_is_fitted(self, "autoencoder_")
        pair = self.autoencoder_.pair_
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return (lipschitz_estimate(pair.encoder, X, pairs, self.random_state),
                lipschitz_estimate(pair.decoder, forward(pair.encoder, X), pairs,
                                   self.random_state))
