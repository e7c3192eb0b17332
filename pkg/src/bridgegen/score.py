"""Gaussian-smoothed empirical density, its exact score, and denoising score matching.

Time convention
---------------
``q_u`` denotes the latent empirical measure convolved with ``N(0, u sigma^2 I)``,
so the noise level at time argument ``u`` is ``sigma_u = sqrt(u) * sigma``.
Every score callable in this package has the signature ``score(u, X)`` and
approximates ``grad log q_u`` at the rows of ``X``. A score network receives
the raw scalar ``u`` as its first input, followed by the point, i.e. the input
row is ``[u, x_1, ..., x_{d*}]``.

During sampling at bridge time ``t`` the drift uses ``u = 1 - t``. The
sampler in this package calls the score with that time argument rather than
with a noise level.
"""

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._random import make_rng
from ._validation import as_points, check_count, check_positive, check_stop_time
from .datagen import SampleBatch
from .exceptions import DomainError, NumericError, ShapeError, ValidationError
from .nn import AdamHyper, AdamState, MlpNetwork, adam_step, backward, forward, init_network

# 1 - t is floored here inside the denoising target
TIME_FLOOR = 1e-12
clamp_events = {"count": 0}

_CHUNK = 1 << 22


@dataclass
class ConvolutionDensity:
    """Uniform mixture of ``N(x_i, u sigma^2 I)`` over the latent points ``x_i``."""

    latent_points: np.ndarray
    sigma: float

    def __post_init__(self):
        if isinstance(self.latent_points, SampleBatch):
            self.latent_points = self.latent_points.points
        self.latent_points = as_points(self.latent_points, name="latent_points")
        self.sigma = check_positive(self.sigma, "sigma")

    @property
    def n(self):
        return self.latent_points.shape[0]

    @property
    def dim(self):
        return self.latent_points.shape[1]

    def noise_level(self, u):
        return np.sqrt(u) * self.sigma

    def sample(self, u, count, rng):
        """Draw ``count`` points from ``q_u``: a uniformly chosen latent point plus Gaussian noise."""
        idx = rng.integers(self.n, size=count)
        noise = rng.standard_normal((count, self.dim))
        return self.latent_points[idx] + self.noise_level(u) * noise


def _check_time(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(~(u > 0)) or np.any(u > 1):
        raise DomainError("time argument must lie in (0, 1]")
    return u


def _rows(cd, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = as_points(x, cd.dim, "x")
    return X, single


def _sq_dists(X, P):
    # ||x - p||^2 expanded directly, not via the Gram trick, to keep full precision
    diff = X[:, None, :] - P[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def log_density(cd, t, x):
    """``log q_t(x)`` evaluated with log-sum-exp."""
    t = float(_check_time(t))
    X, single = _rows(cd, x)
    var = t * cd.sigma ** 2
    sq = _sq_dists(X, cd.latent_points)
    out = (logsumexp(-sq / (2.0 * var), axis=1) - np.log(cd.n)
           - 0.5 * cd.dim * np.log(2.0 * np.pi * var))
    return float(out[0]) if single else out


def oracle_score(cd, t, x):
    """Exact ``grad_x log q_t(x)``: softmax-weighted pull toward the latent points.

    ``t`` may be a scalar or one value per row of ``x``.
    """
    t = _check_time(t)
    X, single = _rows(cd, x)
    var = np.broadcast_to(t * cd.sigma ** 2, (X.shape[0],))
    P = cd.latent_points
    step = max(1, _CHUNK // max(1, P.shape[0] * P.shape[1]))
    out = np.empty_like(X)
    for start in range(0, X.shape[0], step):
        sl = slice(start, start + step)
        logits = -_sq_dists(X[sl], P) / (2.0 * var[sl, None])
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        out[sl] = (w @ P - X[sl]) / var[sl, None]
    return out[0] if single else out


class OracleScore:
    """Score callable backed by :func:`oracle_score`."""

    def __init__(self, cd):
        self.cd = cd

    @property
    def dim(self):
        return self.cd.dim

    def __call__(self, u, X):
        return oracle_score(self.cd, u, X)


class ZeroScore:
    def __init__(self, dim):
        self.dim = dim

    def __call__(self, u, X):
        return np.zeros_like(np.asarray(X, dtype=np.float64))


@dataclass
class ScoreModel:
    """Time-conditioned network ``s(u, x)`` on the latent space.

    The network input is ``[u, x]`` with ``u`` the raw time argument.
    """

    net: MlpNetwork
    sigma: float = 1.0
    T: float = 0.5
    n: int = 0
    seed: int = 0
    final_dsm_loss: float = None
    time_convention: str = "u=1-t"

    def __post_init__(self):
        if self.net.input_dim != self.net.output_dim + 1:
            raise ShapeError("score network must map 1 + d* inputs to d* outputs")

    @property
    def dim(self):
        return self.net.output_dim

    def inputs(self, u, X):
        X = np.asarray(X, dtype=np.float64)
        u = np.broadcast_to(np.asarray(u, dtype=np.float64), (X.shape[0],))
        return np.column_stack([u, X])

    def __call__(self, u, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return forward(self.net, self.inputs(u, X[None, :]))[0]
        return forward(self.net, self.inputs(u, X))

    def manifest(self):
        return {"sigma": self.sigma, "T": self.T, "n": self.n, "seed": self.seed,
                "final_dsm_loss": self.final_dsm_loss, "time_convention": self.time_convention}


@dataclass
class DsmSample:
    """Draws ``(t_j, z_j)`` for the denoising objective, stored as arrays.

    ``index`` optionally pins each draw to one latent point; without it the
    loss uses every (draw, point) combination.
    """

    t: np.ndarray
    z: np.ndarray
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t = np.atleast_1d(np.asarray(self.t, dtype=np.float64))
        self.z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        if self.z.shape[0] != self.t.shape[0]:
            raise ShapeError("t and z must have the same number of draws")
        if not np.all(np.isfinite(self.z)):
            raise NumericError("non-finite noise draw")
        if self.index is not None:
            self.index = np.asarray(self.index, dtype=np.intp)

    def __len__(self):
        return self.t.shape[0]


def draw_dsm_samples(m, dim, T, rng, n_points=None):
    """``m`` draws with ``t ~ U[0, T]`` and ``z ~ N(0, I)``; pinned to random points if ``n_points``."""
    t = rng.uniform(0.0, T, size=m)
    z = rng.standard_normal((m, dim))
    index = None if n_points is None else rng.integers(n_points, size=m)
    return DsmSample(t, z, index)


def _denoise_target(one_minus_t, z, sigma):
    clamped = one_minus_t < TIME_FLOOR
    if np.any(clamped):
        clamp_events["count"] += int(np.sum(clamped))
        warnings.warn(f"1 - t floored at {TIME_FLOOR} for {int(np.sum(clamped))} draws")
        one_minus_t = np.maximum(one_minus_t, TIME_FLOOR)
    return -z / (sigma * np.sqrt(one_minus_t))[:, None]


def _dsm_rows(latent, samples, sigma):
    """Network inputs and regression targets for every term of the objective."""
    P = latent
    one_minus_t = 1.0 - samples.t
    shift = sigma * np.sqrt(one_minus_t)[:, None] * samples.z
    target = _denoise_target(one_minus_t, samples.z, sigma)
    if samples.index is not None:
        return one_minus_t, P[samples.index] + shift, target
    m, n = len(samples), P.shape[0]
    X = (P[None, :, :] + shift[:, None, :]).reshape(m * n, P.shape[1])
    return np.repeat(one_minus_t, n), X, np.repeat(target, n, axis=0)


def dsm_loss(score, latent, samples, sigma, T):
    """Denoising score-matching objective on fixed draws.

    Averages ``||s(1 - t_j, x_i + sigma sqrt(1 - t_j) z_j) + z_j / (sigma sqrt(1 - t_j))||^2``
    over all ``m * n`` pairs, or over the pinned pairs when ``samples.index`` is set.
    """
    P = latent.points if isinstance(latent, SampleBatch) else as_points(latent, name="latent")
    sigma = check_positive(sigma, "sigma")
    T = check_stop_time(T)
    if len(samples) == 0:
        raise ValidationError("no DSM draws")
    if np.any(samples.t < 0) or np.any(samples.t > T):
        raise ValidationError("every draw time must lie in [0, T]")
    if samples.z.shape[1] != P.shape[1]:
        raise ShapeError("noise dimension differs from latent dimension")
    u, X, target = _dsm_rows(P, samples, sigma)
    resid = score(u, X) - target
    return float(np.mean(np.sum(resid * resid, axis=1)))


def train_score(latent, hidden, sigma, T, steps=2000, batch_size=256, hyper=AdamHyper(),
                seed=0, eval_draws=128):
    """Fit a :class:`ScoreModel` by minibatch Adam on the denoising objective.

    Each step uses fresh ``(t, z)`` draws, each pinned to a uniformly chosen
    latent point. ``final_dsm_loss`` is the full cross-product objective on
    ``eval_draws`` held-aside draws.
    """
    P = latent.points if isinstance(latent, SampleBatch) else as_points(latent, name="latent")
    sigma = check_positive(sigma, "sigma")
    T = check_stop_time(T)
    steps = check_count(steps, "steps", 0)
    batch_size = check_count(batch_size, "batch_size", 1)
    n, dim = P.shape
    net = init_network((dim + 1, *hidden, dim), make_rng(seed, 0))
    state = AdamState.zeros_like(net)
    rng = make_rng(seed, 1)
    model = ScoreModel(net, sigma, T, n, int(seed))
    for step in range(steps):
        draws = draw_dsm_samples(batch_size, dim, T, rng, n_points=n)
        u, X, target = _dsm_rows(P, draws, sigma)
        inputs = model.inputs(u, X)
        resid = forward(model.net, inputs) - target
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise NumericError(f"DSM loss diverged at step {step}")
        tape = backward(model.net, inputs, 2.0 * resid / batch_size)
        model.net, state = adam_step(model.net, tape, state, hyper)
    held = draw_dsm_samples(eval_draws, dim, T, make_rng(seed, 2))
    model.final_dsm_loss = dsm_loss(model, P, held, sigma, T)
    return model


def midpoint_grid(T, size):
    """``size`` midpoints of a uniform partition of [0, T]."""
    return (np.arange(size) + 0.5) * (T / size)


def score_l2_error(score, cd, t_grid, eval_points=256, seed=0):
    """Monte-Carlo estimate of the time-averaged squared score error against the oracle.

    For each bridge time ``t`` in the grid, points are drawn from ``q_{1-t}`` and
    ``||score(1 - t, x) - grad log q_{1-t}(x)||^2`` is averaged; the grid average
    stands in for the time integral over [0, T].
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    if t_grid.size == 0 or np.any(t_grid < 0) or np.any(t_grid >= 1):
        raise ValidationError("time grid must be nonempty with values in [0, 1)")
    eval_points = check_count(eval_points, "eval_points", 1)
    rng = make_rng(seed, 0)
    errs = []
    for t in t_grid:
        u = 1.0 - t
        X = cd.sample(u, eval_points, rng)
        diff = score(u, X) - oracle_score(cd, u, X)
        errs.append(np.mean(np.sum(diff * diff, axis=1)))
    return float(np.mean(errs))


def save_score_model(model, directory):
    os.makedirs(directory, exist_ok=True)
    paths = {"model": os.path.join(directory, "score_model.json"),
             "manifest": os.path.join(directory, "score_manifest.json")}
    with open(paths["model"], "w") as fh:
        fh.write(model.net.to_json())
    with open(paths["manifest"], "w") as fh:
        json.dump(model.manifest(), fh, indent=2, sort_keys=True)
    return paths


def load_score_model(directory):
    with open(os.path.join(directory, "score_model.json")) as fh:
        net = MlpNetwork.from_json(fh.read())
    with open(os.path.join(directory, "score_manifest.json")) as fh:
        meta = json.load(fh)
    return ScoreModel(net, meta["sigma"], meta["T"], meta["n"], meta["seed"],
                      meta["final_dsm_loss"], meta.get("time_convention", "u=1-t"))
