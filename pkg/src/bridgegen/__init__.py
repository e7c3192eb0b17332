"""Latent Schrodinger-bridge diffusion: pretraining, score matching, sampling, W2 evaluation."""

from .datagen import SampleBatch, ShiftSpec, TargetSpec, sample_pretrain, sample_target, true_latent
from .estimators import DenoisingScoreModel, LatentAutoencoder, LatentBridgeGenerator
from .metrics import summary, w2_exact, w2_sliced
from .nn import MlpNetwork, init_network
from .pretrain import EncoderDecoderPair, pretrain, reconstruction_loss
from .sampler import DiffusionSchedule, derive_schedule, generate, run_chain, run_chains, truncate
from .score import (
    ConvolutionDensity, OracleScore, ScoreModel, dsm_loss, log_density, oracle_score,
    score_l2_error, train_score,
)

__version__ = "0.1.0"

__all__ = [
    "ConvolutionDensity", "DenoisingScoreModel", "DiffusionSchedule", "EncoderDecoderPair",
    "LatentAutoencoder", "LatentBridgeGenerator", "MlpNetwork", "OracleScore", "SampleBatch",
    "ScoreModel", "ShiftSpec", "TargetSpec", "derive_schedule", "dsm_loss", "generate",
    "init_network", "log_density", "oracle_score", "pretrain", "reconstruction_loss",
    "run_chain", "run_chains", "sample_pretrain", "sample_target", "score_l2_error", "summary",
    "train_score", "true_latent", "truncate", "w2_exact", "w2_sliced",
]
