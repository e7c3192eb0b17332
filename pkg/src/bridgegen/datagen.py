"""Synthetic target and pre-training distributions on the cube [-1, 1]^d.

Three kinds of target are supported:

``uniform_cube``
    Uniform on [-1, 1]^d. The intrinsic dimension equals ``d``.
``truncated_gaussian_mixture``
    Equal-weight isotropic Gaussian mixture in [-1, 1]^d, truncated to the
    cube by rejection.
``embedded_manifold``
    Latent points in [-1, 1]^{d*} (uniform, or a truncated mixture when
    ``centers`` are given) pushed through a scaled linear isometry
    ``A`` of shape (d, d*). The scale is chosen so that ``||A z||_inf <= 1`` on
    the latent cube, which keeps every ambient sample inside [-1, 1]^d.

All samplers are pure functions of ``(spec, n, seed)``.

The lower density bound on the latent cube is a property of the idealized
generator; an empirical sample of course violates it pointwise.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._random import make_rng
from ._validation import as_points, check_count
from .exceptions import NumericError, UnsupportedError, ValidationError

KINDS = ("uniform_cube", "truncated_gaussian_mixture", "embedded_manifold")
MAX_REJECTIONS = 10**6

# spawn keys separating the streams used inside one seed
_TARGET_STREAM = 0
_EMBEDDING_STREAM = 1


@dataclass
class SampleBatch:
    """Point cloud with a dimension tag and the seed that produced it.

    ``latent`` holds the generating latent coordinates for manifold targets.
    """

    points: np.ndarray
    dim_tag: str = "ambient"
    seed: int = 0
    latent: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.points = as_points(self.points, name="points", allow_empty=True)
        if self.dim_tag not in ("ambient", "latent"):
            raise ValidationError(f"dim_tag must be 'ambient' or 'latent', got {self.dim_tag!r}")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass
class TargetSpec:
    kind: str
    ambient_dim: int
    latent_dim: int = None
    centers: np.ndarray = None
    std: float = 0.1
    embedding: np.ndarray = None
    embedding_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown target kind {self.kind!r}; expected one of {KINDS}")
        d = check_count(self.ambient_dim, "ambient_dim", 1)
        self.ambient_dim = d
        if self.kind != "embedded_manifold":
            if self.latent_dim not in (None, d):
                raise ValidationError(f"{self.kind} has intrinsic dimension d={d}, "
                                      f"got latent_dim={self.latent_dim}")
            self.latent_dim = d
        elif self.latent_dim is None:
            raise ValidationError("embedded_manifold needs latent_dim")
        k = check_count(self.latent_dim, "latent_dim", 1)
        if k > d:
            raise ValidationError(f"latent_dim {k} exceeds ambient_dim {d}")
        self.latent_dim = k

        if self.centers is not None:
            self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
            if self.centers.shape[1] != k:
                raise ValidationError(f"centers must have {k} columns, got {self.centers.shape}")
            if np.any(np.abs(self.centers) > 1):
                raise ValidationError("mixture centers must lie in [-1, 1]^d*")
        elif self.kind == "truncated_gaussian_mixture":
            raise ValidationError("truncated_gaussian_mixture needs centers")
        if not self.std >= 0:
            raise ValidationError(f"std must be non-negative, got {self.std}")

        if self.kind == "embedded_manifold":
            if self.embedding is None:
                self.embedding = default_embedding(d, k, self.embedding_seed)
            self.embedding = np.asarray(self.embedding, dtype=np.float64)
            if self.embedding.shape != (d, k):
                raise ValidationError(f"embedding must have shape ({d}, {k})")
            if np.max(np.abs(self.embedding).sum(axis=1)) > 1 + 1e-12:
                raise ValidationError("embedding rows must have absolute sum <= 1 "
                                      "to keep samples inside the cube")

    @property
    def lipschitz_constant(self):
        """Lipschitz constant of the latent-to-ambient map (spectral norm of A)."""
        if self.kind != "embedded_manifold":
            return 1.0
        return float(np.linalg.norm(self.embedding, 2))


@dataclass(frozen=True)
class ShiftSpec:
    """Mean translation of the pre-training law relative to the target.

    ``direction`` defaults to the normalized all-ones vector.
    """

    magnitude: float = 0.0
    direction: tuple = None

    def vector(self, d):
        if self.magnitude < 0:
            raise ValidationError("shift magnitude must be non-negative")
        u = np.ones(d) if self.direction is None else np.asarray(self.direction, dtype=np.float64)
        if u.shape != (d,) or not np.linalg.norm(u) > 0:
            raise ValidationError(f"shift direction must be a nonzero {d}-vector")
        return self.magnitude * u / np.linalg.norm(u)


def default_embedding(d, k, seed=0):
    """Orthonormal (d, k) frame scaled so every row has absolute sum below 1."""
    rng = make_rng(seed, _EMBEDDING_STREAM)
    Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    # margin keeps rounding from pushing samples past the cube boundary
    return Q * ((1.0 - 1e-9) / np.max(np.abs(Q).sum(axis=1)))


def _truncated_mixture(centers, std, n, rng):
    k, dim = centers.shape
    out = np.empty((n, dim))
    pending = np.arange(n)
    attempts = 0
    while pending.size:
        attempts += 1
        if attempts > MAX_REJECTIONS:
            raise NumericError(f"rejection sampler exceeded {MAX_REJECTIONS} attempts per point")
        comp = rng.integers(k, size=pending.size)
        prop = centers[comp] + std * rng.standard_normal((pending.size, dim))
        ok = np.all(np.abs(prop) <= 1.0, axis=1)
        out[pending[ok]] = prop[ok]
        pending = pending[~ok]
    return out


def _latent_draw(spec, n, rng):
    if spec.centers is not None:
        return _truncated_mixture(spec.centers, spec.std, n, rng)
    return rng.uniform(-1.0, 1.0, size=(n, spec.latent_dim))


def embed(spec, latent):
    """Map latent coordinates to ambient space for a manifold target."""
    if spec.kind != "embedded_manifold":
        raise UnsupportedError(f"embed is only defined for embedded_manifold, not {spec.kind}")
    Z = as_points(latent, spec.latent_dim, "latent", allow_empty=True)
    return Z @ spec.embedding.T


def sample_target(spec, n, seed):
    """Draw ``n`` i.i.d. ambient points from the target law."""
    n = check_count(n, "n", 1)
    rng = make_rng(seed, _TARGET_STREAM)
    latent = None
    if spec.kind == "uniform_cube":
        pts = rng.uniform(-1.0, 1.0, size=(n, spec.ambient_dim))
    elif spec.kind == "truncated_gaussian_mixture":
        pts = _truncated_mixture(spec.centers, spec.std, n, rng)
    else:
        latent = _latent_draw(spec, n, rng)
        pts = embed(spec, latent)
    return SampleBatch(pts, "ambient", int(seed), latent)


def sample_pretrain(spec, shift, M, seed):
    """Draw ``M`` points from the shifted law, clipped back into the cube.

    With zero shift this returns exactly ``sample_target(spec, M, seed)``.
    """
    M = check_count(M, "M", 1)
    base = sample_target(spec, M, seed)
    pts = np.clip(base.points + shift.vector(spec.ambient_dim), -1.0, 1.0)
    latent = base.latent if shift.magnitude == 0 else None
    return SampleBatch(pts, "ambient", int(seed), latent)


def true_latent(spec, ambient):
    """Generating latent coordinates of a manifold batch.

    Uses the coordinates stored at generation time; for batches without them
    the embedding is inverted by least squares (exact for points on the manifold).
    """
    if spec.kind != "embedded_manifold":
        raise UnsupportedError(f"true_latent is only defined for embedded_manifold, not {spec.kind}")
    if ambient.latent is not None:
        Z = ambient.latent
    else:
        Z = np.linalg.lstsq(spec.embedding, ambient.points.T, rcond=None)[0].T
    return SampleBatch(Z, "latent", ambient.seed)


def write_batch_csv(batch, path_or_buffer):
    """Write a batch as CSV: one ``#`` header line, then one row per point.

    Values use 17 significant digits so the round trip is lossless.
    """
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        fh.write(f"# dim_tag={batch.dim_tag},seed={batch.seed},dim={batch.dim}\n")
        for row in batch.points:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if own:
            fh.close()


def read_batch_csv(path_or_buffer):
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, newline="") if own else path_or_buffer
    try:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValidationError("batch CSV must start with a '# dim_tag=...,seed=...' line")
        meta = dict(item.split("=", 1) for item in header[1:].strip().split(","))
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    finally:
        if own:
            fh.close()
    dim = int(meta["dim"])
    pts = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return SampleBatch(pts, meta["dim_tag"], int(meta["seed"]))
