"""Euler-Maruyama sampling of the latent bridge SDE, truncation and decoding.

A chain starts at ``x_0 = y + sigma * eps`` with ``y`` drawn uniformly from
the latent training points, then takes ``K`` steps on the uniform grid
``t_i = i T / K``::

    x_{i+1} = x_i + sigma^2 * dt * s(1 - t_i, x_i) + noise_i

With ``noise_scale="em"`` (default) the Brownian increment is
``sigma * sqrt(dt) * eps_i``, the consistent discretization of ``sigma dw_t``.
``noise_scale="algorithm1"`` uses ``sigma / K * eps_i`` instead, a much
smaller increment kept for comparison runs; the drift is the same in both
modes.

Each chain owns a random stream derived from ``(seed, chain index)``, drawn
in the order: start index, initial noise, then one noise vector per step.
Batched and single-chain runs therefore agree regardless of batch layout.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._random import make_rng
from ._validation import as_points, check_count, check_positive, check_stop_time
from .datagen import SampleBatch
from .exceptions import NumericError, ShapeError, ValidationError
from .nn import forward

NOISE_SCALES = ("em", "algorithm1")


class StepSizeWarning(UserWarning):
    """Grid spacing exceeds the step-size target of the rate analysis."""


@dataclass
class DiffusionSchedule:
    sigma: float
    K: int
    T: float
    L: float = None
    noise_scale: str = "em"
    beta: float = None
    d_star: int = None
    n: int = None
    R: int = None
    C_T: float = None
    m_theory: float = None
    step_target: float = None

    def __post_init__(self):
        self.sigma = float(self.sigma)
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"sigma must be non-negative, got {self.sigma}")
        self.K = check_count(self.K, "K", 0)
        self.T = check_stop_time(self.T)
        if self.L is None:
            self.L = default_truncation(self.sigma)
        self.L = check_positive(self.L, "L")
        if self.noise_scale not in NOISE_SCALES:
            raise ValidationError(f"noise_scale must be one of {NOISE_SCALES}")

    @property
    def dt(self):
        return self.T / self.K if self.K else 0.0

    def times(self):
        return np.arange(self.K + 1) * self.dt

    @property
    def max_step(self):
        return self.dt

    @property
    def step_warning(self):
        return self.step_target is not None and self.K > 0 and self.max_step > self.step_target

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_truncation(sigma):
    return 4.0 * (1.0 + sigma)


def resolution(n, d_star, beta):
    """``floor(n^(1/(d* + 2 beta))) + 1``, with the root corrected for rounding."""
    root = n ** (1.0 / (d_star + 2.0 * beta))
    r = math.floor(root)
    # exact powers can land a hair below the integer
    if abs(root - round(root)) <= 1e-12 * max(root, 1.0):
        r = int(round(root))
    return r + 1


def derive_schedule(n, d_star, beta, sigma, K, L=None, noise_scale="em"):
    """Schedule from the rate-optimal choices: ``T = 1 - R^(-2 beta)`` with ``C_T = 2 beta``.

    Also records the prescribed number of DSM draws
    ``n^((d* + 8 beta)/(d* + 2 beta))`` and the step-size target
    ``n^(-6 beta/(d* + 2 beta))``; a :class:`StepSizeWarning` is emitted when
    ``T / K`` exceeds the target.
    """
    n = check_count(n, "n", 1)
    d_star = check_count(d_star, "d_star", 1)
    beta = check_positive(beta, "beta")
    sigma = check_positive(sigma, "sigma")
    K = check_count(K, "K", 1)
    R = resolution(n, d_star, beta)
    C_T = 2.0 * beta
    T = 1.0 - float(R) ** (-C_T)
    schedule = DiffusionSchedule(
        sigma, K, T, L, noise_scale, beta=beta, d_star=d_star, n=n, R=R, C_T=C_T,
        m_theory=n ** ((d_star + 8.0 * beta) / (d_star + 2.0 * beta)),
        step_target=n ** (-6.0 * beta / (d_star + 2.0 * beta)),
    )
    if schedule.step_warning:
        warnings.warn(f"step T/K = {schedule.max_step:.3g} exceeds target "
                      f"{schedule.step_target:.3g}", StepSizeWarning, stacklevel=2)
    return schedule


@dataclass
class ChainState:
    x: np.ndarray
    i: int
    rng: np.random.Generator
    start_index: int = None


def _latent(latent):
    if isinstance(latent, SampleBatch):
        return latent.points
    return as_points(latent, name="latent")


def chain_rng(seed, chain_index):
    return make_rng(seed, 7, chain_index)


def init_chain(latent, sigma, seed, chain_index=0):
    """Start a chain at a uniformly chosen latent point plus ``N(0, sigma^2 I)`` noise."""
    P = _latent(latent)
    rng = chain_rng(seed, chain_index)
    idx = int(rng.integers(P.shape[0]))
    eps = rng.standard_normal(P.shape[1])
    return ChainState(P[idx] + sigma * eps, 0, rng, idx)


def _increment_scale(schedule):
    if schedule.noise_scale == "algorithm1":
        return schedule.sigma / schedule.K
    return schedule.sigma * math.sqrt(schedule.dt)


def em_step(state, score, schedule, eps=None):
    """Advance one Euler-Maruyama step. ``eps`` overrides the chain's own noise draw."""
    if state.i >= schedule.K:
        raise ValidationError(f"chain already at step {state.i} of {schedule.K}")
    if eps is None:
        eps = state.rng.standard_normal(state.x.shape[0])
    t = state.i * schedule.dt
    drift = schedule.sigma ** 2 * np.asarray(score(1.0 - t, state.x[None, :]))[0]
    x = state.x + schedule.dt * drift + _increment_scale(schedule) * eps
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite chain state at step {state.i + 1}")
    return ChainState(x, state.i + 1, state.rng, state.start_index)


def run_chain(latent, score, schedule, seed, chain_index=0):
    """Run one chain for ``K`` steps and return the untruncated endpoint."""
    state = init_chain(latent, schedule.sigma, seed, chain_index)
    for _ in range(schedule.K):
        state = em_step(state, score, schedule)
    return state.x


def run_chains(latent, score, schedule, count, seed, start=0, return_initial=False,
               max_noise_bytes=1 << 27):
    """Run ``count`` chains as one vectorized batch.

    Row ``c`` equals ``run_chain(..., chain_index=start + c)`` up to rounding in the
    score evaluation. Returns the endpoints, plus the starting points if
    ``return_initial``.
    """
    P = _latent(latent)
    count = check_count(count, "count", 0)
    dim = P.shape[1]
    K = schedule.K
    per_chain = 8 * dim * max(K, 1)
    block = max(1, max_noise_bytes // per_chain)
    ends, starts = [], []
    for lo in range(0, count, block):
        hi = min(count, lo + block)
        rngs = [chain_rng(seed, start + c) for c in range(lo, hi)]
        idx = np.array([r.integers(P.shape[0]) for r in rngs], dtype=np.intp)
        X = P[idx] + schedule.sigma * np.array([r.standard_normal(dim) for r in rngs])
        starts.append(X.copy())
        noise = np.stack([r.standard_normal((K, dim)) for r in rngs], axis=1) if K else None
        scale = _increment_scale(schedule) if K else 0.0
        for i in range(K):
            t = i * schedule.dt
            X = X + schedule.dt * (schedule.sigma ** 2 * score(1.0 - t, X)) + scale * noise[i]
            if not np.all(np.isfinite(X)):
                bad = lo + int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
                raise NumericError(f"non-finite state in chain {start + bad} at step {i + 1}")
        ends.append(X)
    empty = np.zeros((0, dim))
    end = np.concatenate(ends) if ends else empty
    if return_initial:
        return end, (np.concatenate(starts) if starts else empty)
    return end


def truncate(x, L):
    """Zero out points whose sup-norm exceeds ``L``; points with ``||x||_inf <= L`` pass unchanged.

    Works on a single vector or row-wise on a batch.
    """
    L = check_positive(L, "L")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x.copy() if np.max(np.abs(x), initial=0.0) <= L else np.zeros_like(x)
    keep = np.max(np.abs(x), axis=1, initial=0.0) <= L
    return np.where(keep[:, None], x, 0.0)


def generate(pair, latent, score, schedule, count, seed, init_points=None):
    """Run ``count`` chains, truncate at ``schedule.L`` and decode.

    ``pair=None`` means an identity decoder. ``init_points`` replaces the
    latent training points as the starting pool (held-out initialization);
    by default the training points are used.
    """
    P = _latent(latent)
    pool = P if init_points is None else _latent(init_points)
    if pool.shape[1] != P.shape[1]:
        raise ShapeError("initialization pool and latent points differ in dimension")
    Z = truncate(run_chains(pool, score, schedule, count, seed), schedule.L) if count else \
        np.zeros((0, P.shape[1]))
    if pair is None:
        return SampleBatch(Z, "ambient", int(seed))
    if pair.latent_dim != P.shape[1]:
        raise ShapeError(f"decoder expects latent dim {pair.latent_dim}, got {P.shape[1]}")
    out = forward(pair.decoder, Z) if count else np.zeros((0, pair.ambient_dim))
    return SampleBatch(out, "ambient", int(seed))
