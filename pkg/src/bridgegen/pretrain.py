"""Encoder/decoder pretraining by reconstruction risk minimization.

Training is unconstrained: the Lipschitz and boundedness properties that the
theory asks of the encoder and decoder are measured after the fact
(:func:`lipschitz_estimate`, :func:`outside_cube_fraction`) rather than
imposed. Encoded points are never clipped to the latent cube.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ._random import make_rng
from ._validation import as_points, check_count
from .datagen import SampleBatch
from .exceptions import NumericError, ShapeError, ValidationError
from .nn import AdamHyper, AdamState, MlpNetwork, adam_step, backward, forward, init_network


@dataclass
class EncoderDecoderPair:
    encoder: MlpNetwork
    decoder: MlpNetwork
    loss_history: list = field(default_factory=list)
    lipschitz_estimates: tuple = (None, None)
    initial_loss: float = None
    seed: int = 0

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise ShapeError("encoder output dim must equal decoder input dim")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise ShapeError("decoder must map back to the encoder's input dim")

    @property
    def ambient_dim(self):
        return self.encoder.input_dim

    @property
    def latent_dim(self):
        return self.encoder.output_dim

    @property
    def final_loss(self):
        return self.loss_history[-1][1] if self.loss_history else self.initial_loss

    def reconstruct(self, X):
        return forward(self.decoder, forward(self.encoder, X))


def _points(batch):
    return batch.points if isinstance(batch, SampleBatch) else as_points(batch, allow_empty=True)


def reconstruction_loss(pair, batch):
    """Mean over rows of ``||D(E(y)) - y||^2``."""
    Y = _points(batch)
    if Y.shape[0] == 0:
        raise ValidationError("reconstruction loss of an empty batch")
    if Y.shape[1] != pair.ambient_dim:
        raise ShapeError(f"batch dim {Y.shape[1]} != ambient dim {pair.ambient_dim}")
    resid = pair.reconstruct(Y) - Y
    return float(np.sum(resid * resid) / Y.shape[0])


def _loss_and_tapes(encoder, decoder, Y):
    Z = forward(encoder, Y)
    resid = forward(decoder, Z) - Y
    n = Y.shape[0]
    tape_d = backward(decoder, Z, 2.0 * resid / n)
    tape_e = backward(encoder, Y, tape_d.input_grad)
    return float(np.sum(resid * resid) / n), tape_e, tape_d


def pretrain(encoder_dims, decoder_dims, data, epochs=300, batch_size=64,
             hyper=AdamHyper(), seed=0, lipschitz_pairs=2000):
    """Fit an encoder/decoder pair on ``data`` with minibatch Adam.

    ``loss_history`` holds ``(epoch, full-data loss)`` measured after each epoch.
    Raises :class:`NumericError` naming the epoch if the loss stops being finite.
    """
    Y = _points(data)
    encoder_dims, decoder_dims = tuple(encoder_dims), tuple(decoder_dims)
    if encoder_dims[0] != Y.shape[1] or decoder_dims[-1] != Y.shape[1]:
        raise ShapeError(f"data dim {Y.shape[1]} incompatible with dims "
                         f"{encoder_dims} / {decoder_dims}")
    if encoder_dims[-1] != decoder_dims[0]:
        raise ShapeError("encoder output and decoder input dims differ")
    epochs = check_count(epochs, "epochs", 1)
    batch_size = check_count(batch_size, "batch_size", 1)

    enc = init_network(encoder_dims, make_rng(seed, 0))
    dec = init_network(decoder_dims, make_rng(seed, 1))
    shuffle = make_rng(seed, 2)
    state_e, state_d = AdamState.zeros_like(enc), AdamState.zeros_like(dec)
    initial = EncoderDecoderPair(enc, dec)
    initial_loss = reconstruction_loss(initial, Y)

    n = Y.shape[0]
    history = []
    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(n)
        for start in range(0, n, batch_size):
            rows = Y[order[start:start + batch_size]]
            loss, tape_e, tape_d = _loss_and_tapes(enc, dec, rows)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite reconstruction loss in epoch {epoch}")
            enc, state_e = adam_step(enc, tape_e, state_e, hyper)
            dec, state_d = adam_step(dec, tape_d, state_d, hyper)
        full = reconstruction_loss(EncoderDecoderPair(enc, dec), Y)
        if not np.isfinite(full):
            raise NumericError(f"non-finite reconstruction loss in epoch {epoch}")
        history.append((epoch, full))

    pair = EncoderDecoderPair(enc, dec, history, initial_loss=initial_loss, seed=int(seed))
    if lipschitz_pairs:
        probe = SampleBatch(Y, "ambient", seed)
        gamma_e = lipschitz_estimate(enc, probe, lipschitz_pairs, seed)
        gamma_d = lipschitz_estimate(dec, SampleBatch(forward(enc, Y), "latent", seed),
                                     lipschitz_pairs, seed)
        pair.lipschitz_estimates = (gamma_e, gamma_d)
    return pair


def lipschitz_estimate(net, probe, pairs=1000, seed=0):
    """Largest difference quotient ``||f(a) - f(b)|| / ||a - b||`` over random probe pairs.

    This is a lower bound on the true Lipschitz constant. Pairs closer than
    1e-12 are skipped.
    """
    P = _points(probe)
    pairs = check_count(pairs, "pairs", 1)
    if P.shape[1] != net.input_dim:
        raise ShapeError(f"probe dim {P.shape[1]} != network input dim {net.input_dim}")
    rng = make_rng(seed, 3)
    ia = rng.integers(P.shape[0], size=pairs)
    ib = rng.integers(P.shape[0], size=pairs)
    dx = np.linalg.norm(P[ia] - P[ib], axis=1)
    keep = dx >= 1e-12
    if not np.any(keep):
        raise ValidationError("all probe pairs are degenerate")
    F = forward(net, P)
    df = np.linalg.norm(F[ia[keep]] - F[ib[keep]], axis=1)
    return float(np.max(df / dx[keep]))


def encode_batch(pair, batch):
    X = _points(batch)
    if X.shape[1] != pair.ambient_dim:
        raise ShapeError(f"batch dim {X.shape[1]} != encoder input dim {pair.ambient_dim}")
    seed = batch.seed if isinstance(batch, SampleBatch) else 0
    return SampleBatch(forward(pair.encoder, X), "latent", seed)


def decode_batch(pair, batch):
    Z = _points(batch)
    if Z.shape[0] == 0:
        return SampleBatch(np.zeros((0, pair.ambient_dim)), "ambient", getattr(batch, "seed", 0))
    if Z.shape[1] != pair.latent_dim:
        raise ShapeError(f"batch dim {Z.shape[1]} != decoder input dim {pair.latent_dim}")
    seed = batch.seed if isinstance(batch, SampleBatch) else 0
    return SampleBatch(forward(pair.decoder, Z), "ambient", seed)


def outside_cube_fraction(latent):
    """Fraction of latent rows with some coordinate outside [-1, 1]."""
    Z = _points(latent)
    return float(np.mean(np.any(np.abs(Z) > 1.0, axis=1)))


def save_pair(pair, directory):
    """Write ``encoder.json``, ``decoder.json`` and ``pair_manifest.json``; return their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, f"{name}.json") for name in ("encoder", "decoder")}
    for name, net in (("encoder", pair.encoder), ("decoder", pair.decoder)):
        with open(paths[name], "w") as fh:
            fh.write(net.to_json())
    gamma_e, gamma_d = pair.lipschitz_estimates
    manifest = {
        "d": pair.ambient_dim,
        "d_star": pair.latent_dim,
        "seed": pair.seed,
        "final_loss": pair.final_loss,
        "initial_loss": pair.initial_loss,
        "gamma_E_hat": gamma_e,
        "gamma_D_hat": gamma_d,
    }
    paths["manifest"] = os.path.join(directory, "pair_manifest.json")
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return paths


def load_pair(directory):
    with open(os.path.join(directory, "encoder.json")) as fh:
        enc = MlpNetwork.from_json(fh.read())
    with open(os.path.join(directory, "decoder.json")) as fh:
        dec = MlpNetwork.from_json(fh.read())
    with open(os.path.join(directory, "pair_manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest["d"] != enc.input_dim or manifest["d_star"] != enc.output_dim:
        raise ShapeError("pair manifest dims disagree with the saved networks")
    # per-epoch history is not persisted; keep only the final value
    return EncoderDecoderPair(enc, dec, [(None, manifest["final_loss"])],
                              (manifest["gamma_E_hat"], manifest["gamma_D_hat"]),
                              manifest["initial_loss"], manifest["seed"])
