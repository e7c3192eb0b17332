"""Wasserstein-2 distances between empirical measures and batch diagnostics.

For two uniform empirical measures with the same number of atoms the optimal
coupling is a permutation, so the exact distance reduces to a linear
assignment problem on the squared-distance matrix.
"""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._random import make_rng
from ._validation import as_points, check_count
from .datagen import SampleBatch
from .exceptions import CapacityError, ShapeError, ValidationError

MAX_EXACT = 4096
LEDGER_COLUMNS = ("run_id", "stage", "metric_name", "value", "n", "seed")


def _points(batch, name):
    if isinstance(batch, SampleBatch):
        return batch.points
    return as_points(batch, name=name, allow_empty=True)


def _pair(A, B):
    A, B = _points(A, "A"), _points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] != B.shape[0]:
        raise ValidationError(f"batches must have equal size, got {A.shape[0]} and {B.shape[0]}; "
                              "subsample to a common size")
    if A.shape[0] == 0:
        raise ValidationError("empty batches")
    return A, B


def cost_matrix(A, B):
    """Squared Euclidean distances ``C[i, j] = ||a_i - b_j||^2``."""
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class Assignment:
    permutation: np.ndarray
    total_cost: float


def solve_assignment(C):
    """Minimum-cost perfect matching of a square cost matrix."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"cost matrix must be square, got {C.shape}")
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(C.shape[0], dtype=np.intp)
    perm[rows] = cols
    # fsum is exactly rounded, so the total does not depend on row order
    return Assignment(perm, math.fsum(C[np.arange(C.shape[0]), perm]))


def w2_exact(A, B):
    """Exact W2 between two equal-size uniform empirical measures."""
    A, B = _pair(A, B)
    if A.shape[0] > MAX_EXACT:
        raise CapacityError(f"w2_exact supports at most {MAX_EXACT} points; use w2_sliced")
    # subtracting a common offset leaves W2 unchanged and improves conditioning
    offset = 0.5 * (A.mean(axis=0) + B.mean(axis=0))
    assignment = solve_assignment(cost_matrix(A - offset, B - offset))
    return float(np.sqrt(max(assignment.total_cost, 0.0) / A.shape[0]))


def w2_1d(a, b):
    """W2 between equal-size 1-D samples via the monotone (sorted) coupling."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    if a.shape != b.shape:
        raise ValidationError("1-D samples must have equal size")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def w2_sliced(A, B, projections=256, seed=0):
    """Sliced W2: root mean over random unit directions of the squared 1-D W2."""
    A, B = _pair(A, B)
    projections = check_count(projections, "projections", 1)
    rng = make_rng(seed, 11)
    dirs = rng.standard_normal((projections, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(A @ dirs.T, axis=0)
    pb = np.sort(B @ dirs.T, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


@dataclass
class BatchSummary:
    mean: np.ndarray
    std: np.ndarray
    max_inf_norm: float
    support_violations: int

    def rows(self):
        """Flatten into ``(metric_name, value)`` pairs."""
        out = [(f"mean_{k}", float(v)) for k, v in enumerate(self.mean)]
        out += [(f"std_{k}", float(v)) for k, v in enumerate(self.std)]
        out += [("max_inf_norm", self.max_inf_norm),
                ("support_violations", float(self.support_violations))]
        return out


def summary(batch):
    """Mean, population std (ddof=0), max sup-norm, and rows outside [-1, 1]^d."""
    X = _points(batch, "batch")
    if X.shape[0] == 0:
        raise ValidationError("summary of an empty batch")
    sup = np.max(np.abs(X), axis=1)
    return BatchSummary(X.mean(axis=0), X.std(axis=0), float(sup.max()),
                        int(np.sum(sup > 1.0)))


def append_ledger(path, rows):
    """Append ``(run_id, stage, metric_name, value, n, seed)`` rows; writes the header once."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(LEDGER_COLUMNS)
        for run_id, stage, name, value, n, seed in rows:
            writer.writerow([run_id, stage, name, repr(float(value)), int(n), int(seed)])


def read_ledger(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
