"""Dense ReLU networks with exact reverse-mode gradients and first-order optimizers.

A network with layer dimensions ``(d_0, ..., d_L)`` computes

    h_0 = x,   h_{i+1} = relu(W_i h_i + b_i)  for i < L-1,   out = W_{L-1} h_{L-1} + b_{L-1}

with ``W_i`` of shape ``(d_{i+1}, d_i)``. There is no activation after the last
affine map. All functions accept either a single vector or a batch of row
vectors; gradients of a batch are summed over rows.

Sparsity and weight-magnitude bounds that appear in theoretical network
classes are not enforced here; networks are trained unconstrained.
"""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericError, ShapeError, ValidationError

FORMAT_VERSION = 1


@dataclass
class MlpNetwork:
    layer_dims: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValidationError(f"invalid layer_dims {self.layer_dims}")
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("need one weight matrix and one bias per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            d_in, d_out = self.layer_dims[i], self.layer_dims[i + 1]
            if W.shape != (d_out, d_in) or b.shape != (d_out,):
                raise ShapeError(
                    f"layer {i}: W {W.shape}, b {b.shape}; expected ({d_out}, {d_in}), ({d_out},)"
                )

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    @property
    def depth(self):
        return len(self.layer_dims) - 1

    def parameters(self):
        return self.weights + self.biases

    def copy(self):
        return MlpNetwork(self.layer_dims, [W.copy() for W in self.weights],
                          [b.copy() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "layer_dims": list(self.layer_dims),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported format_version {doc.get('format_version')!r}")
        dims = doc["layer_dims"]
        weights = [np.array(W, dtype=np.float64).reshape(dims[i + 1], dims[i])
                   for i, W in enumerate(doc["weights"])]
        return cls(dims, weights, doc["biases"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class GradientTape:
    """Parameter gradients mirroring an :class:`MlpNetwork`, plus the input gradient."""

    weights: list
    biases: list
    loss: float = 0.0
    input_grad: np.ndarray = None

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(W) for W in net.weights],
                   [np.zeros_like(b) for b in net.biases])

    def parameters(self):
        return self.weights + self.biases

    def __add__(self, other):
        return GradientTape([a + b for a, b in zip(self.weights, other.weights)],
                            [a + b for a, b in zip(self.biases, other.biases)],
                            self.loss + other.loss)


def init_network(layer_dims, rng):
    """He-uniform initialization: weights in +-sqrt(6/d_in), zero biases."""
    layer_dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpNetwork(layer_dims, weights, biases)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input dim {net.input_dim}")
    return X, single


def _forward_cache(net, X):
    pre_acts = []
    h = X
    acts = [h]
    last = net.depth - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        if i == last:
            return z, acts, pre_acts
        pre_acts.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)


def forward(net, x):
    X, single = _as_batch(net, x)
    out, _, _ = _forward_cache(net, X)
    return out[0] if single else out


def backward(net, x, upstream):
    """Gradients of ``sum_rows <upstream, forward(net, x)>``.

    The ReLU derivative at exactly zero is taken as 0. The returned tape also
    carries the gradient with respect to the input (same shape as ``x``).
    """
    X, single = _as_batch(net, x)
    U = np.asarray(upstream, dtype=np.float64)
    U = U[None, :] if U.ndim == 1 else U
    if U.shape != (X.shape[0], net.output_dim):
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match output "
                         f"({X.shape[0]}, {net.output_dim})")
    _, acts, pre_acts = _forward_cache(net, X)
    gw = [None] * net.depth
    gb = [None] * net.depth
    delta = U
    for i in range(net.depth - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i]
        if i > 0:
            delta = delta * (pre_acts[i - 1] > 0.0)
    input_grad = delta[0] if single else delta
    return GradientTape(gw, gb, input_grad=input_grad)


def _check_tape(net, tape):
    for p, g in zip(net.parameters(), tape.parameters()):
        if p.shape != g.shape:
            raise ShapeError(f"tape shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient entry")


def _rebuild(net, params):
    k = net.depth
    return MlpNetwork(net.layer_dims, params[:k], params[k:])


def sgd_step(net, tape, lr):
    if not lr > 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    _check_tape(net, tape)
    return _rebuild(net, [p - lr * g for p, g in zip(net.parameters(), tape.parameters())])


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    first: list
    second: list
    step: int = 0

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(p) for p in net.parameters()],
                   [np.zeros_like(p) for p in net.parameters()])


def adam_step(net, tape, state, hyper=AdamHyper()):
    """One bias-corrected Adam update. Returns ``(new_net, new_state)``.

    ``hyper.lr == 0`` is allowed and leaves parameters unchanged.
    """
    if hyper.lr < 0:
        raise ValidationError(f"learning rate must be non-negative, got {hyper.lr}")
    _check_tape(net, tape)
    for p, m in zip(net.parameters(), state.first):
        if p.shape != m.shape:
            raise ShapeError("Adam moment shapes do not match parameters")
    step = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    corr1 = 1.0 - b1 ** step
    corr2 = 1.0 - b2 ** step
    first, second, params = [], [], []
    for p, g, m, v in zip(net.parameters(), tape.parameters(), state.first, state.second):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        params.append(p - hyper.lr * (m / corr1) / (np.sqrt(v / corr2) + hyper.eps))
        first.append(m)
        second.append(v)
    new_net = _rebuild(net, params)
    if not all(np.all(np.isfinite(p)) for p in params):
        raise NumericError("non-finite parameter after Adam step")
    return new_net, AdamState(first, second, step)


def spectral_norm(W, iters=500, tol=1e-13, rng=None):
    """Largest singular value of ``W`` by power iteration on ``W^T W``."""
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    v = rng.standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = W.T @ (W @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_sigma = np.sqrt(norm)
        if abs(new_sigma - sigma) <= tol * new_sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return float(np.linalg.norm(W @ v))


def lipschitz_upper_bound(net):
    """Product of layer spectral norms, an upper bound on the network's Lipschitz constant."""
    return float(np.prod([spectral_norm(W) for W in net.weights]))


def mse_and_grad(net, X, target):
    """Mean over rows of ``||net(X) - target||^2`` and its gradient tape."""
    out = forward(net, X)
    resid = out - target
    n = resid.shape[0]
    loss = float(np.sum(resid * resid) / n)
    tape = backward(net, X, 2.0 * resid / n)
    tape.loss = loss
    return loss, tape
