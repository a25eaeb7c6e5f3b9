"""Bias-free (by default) feed-forward classifiers.

Layer ``l`` computes ``h_l = W_l a_{l-1} (+ b_l)`` and ``a_l = phi(h_l)``;
the last layer is linear and returns raw logits.

Flat parameter layout (frozen): layers in order, each contributing its
weight matrix in row-major order (``W[r, c]`` at ``r * d_in + c``) followed
by its bias vector when biases are enabled.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from tavlab import kernels
from tavlab.linalg import as_vector, check_finite

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ActivationKind:
    name: str
    code: int
    beta_phi: float   # sup |phi'|
    gamma_phi: float  # sup |phi''|


ACTIVATIONS = {
    "relu": ActivationKind("relu", kernels.RELU, 1.0, 0.0),
    "sigmoid": ActivationKind("sigmoid", kernels.SIGMOID, 0.25, 1.0 / (6.0 * math.sqrt(3.0))),
    "tanh": ActivationKind("tanh", kernels.TANH, 1.0, 4.0 / (3.0 * math.sqrt(3.0))),
    # linear hidden layers; also what the output layer always uses
    "identity": ActivationKind("identity", kernels.IDENTITY, 1.0, 0.0),
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def activation_eval(kind, z):
    """Return ``(phi(z), phi'(z), phi''(z))`` for a scalar ``z``.

    ReLU uses ``phi'(0) = 0`` and ``phi'' = 0`` everywhere.
    """
    if isinstance(kind, str):
        kind = activation(kind)
    from tavlab._pykernels import _act

    f, d1, d2 = _act(kind.code, np.array([float(z)]))
    return float(f[0]), float(d1[0]), float(d2[0])


@dataclass(frozen=True)
class MlpArchitecture:
    layer_dims: tuple
    activation: str = "tanh"
    bias: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("need at least input and output dims (L >= 1)")
        if any(d < 1 for d in dims):
            raise ValueError("all layer dims must be >= 1")
        activation(self.activation)

    @property
    def depth(self):
        return len(self.layer_dims) - 1

    @property
    def kind(self):
        return activation(self.activation)

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    @property
    def param_count(self):
        d = self.layer_dims
        count = sum(a * b for a, b in zip(d[:-1], d[1:]))
        if self.bias:
            count += sum(d[1:])
        return count

    def layer_slices(self):
        """(weight slice, weight shape, bias slice or None) per layer."""
        out = []
        off = 0
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = slice(off, off + d_in * d_out)
            off += d_in * d_out
            b = None
            if self.bias:
                b = slice(off, off + d_out)
                off += d_out
            out.append((w, (d_out, d_in), b))
        return out

    def to_dict(self):
        return {"dims": list(self.layer_dims), "activation": self.activation, "bias": self.bias}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["dims"]), d["activation"], bool(d.get("bias", False)))


@dataclass(frozen=True)
class ForwardTrace:
    preactivations: list   # h^(1..L)
    activations: list      # a^(0..L), a^(0) = x


@dataclass(frozen=True, eq=False)
class MlpModel:
    """An architecture plus its flat parameter vector (read-only)."""

    arch: MlpArchitecture
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = check_finite(as_vector(self.params), "parameter vector").copy()
        if p.shape[0] != self.arch.param_count:
            raise ValueError(
                f"parameter vector has length {p.shape[0]}, expected {self.arch.param_count}")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)

    @property
    def weights(self):
        return [self.params[w].reshape(shape) for w, shape, _ in self.arch.layer_slices()]

    @property
    def biases(self):
        return [None if b is None else self.params[b] for _, _, b in self.arch.layer_slices()]

    def with_params(self, v):
        return MlpModel(self.arch, v)


def flatten(model):
    return model.params.copy()


def unflatten(arch, v):
    v = as_vector(v)
    if v.shape[0] != arch.param_count:
        raise ValueError(f"wrong length {v.shape[0]} for architecture with {arch.param_count} parameters")
    return MlpModel(arch, v)


def from_weights(arch, weights, biases=None):
    parts = []
    for i, (_, shape, b) in enumerate(arch.layer_slices()):
        W = np.asarray(weights[i], dtype=np.float64)
        if W.shape != shape:
            raise ValueError(f"layer {i + 1}: weight shape {W.shape}, expected {shape}")
        parts.append(W.ravel())
        if b is not None:
            parts.append(np.zeros(shape[0]) if biases is None else np.asarray(biases[i], dtype=np.float64))
    return MlpModel(arch, np.concatenate(parts))


def zeros(arch):
    return MlpModel(arch, np.zeros(arch.param_count))


def init_model(arch, seed, scale=1.0):
    """Gaussian init with std ``scale / sqrt(fan_in)``; biases start at zero."""
    rng = np.random.default_rng(seed)
    v = np.zeros(arch.param_count)
    for w, shape, _ in arch.layer_slices():
        v[w] = rng.standard_normal(shape[0] * shape[1]) * (scale / math.sqrt(shape[1]))
    return MlpModel(arch, v)


def forward(model, x):
    """Single-sample forward pass returning logits and the full trace."""
    x = as_vector(x)
    if x.shape[0] != model.arch.layer_dims[0]:
        raise ValueError(f"input has dim {x.shape[0]}, expected {model.arch.layer_dims[0]}")
    code = model.arch.kind.code
    from tavlab._pykernels import _act

    a = x.copy()
    hs, acts = [], [a]
    L = model.arch.depth
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = W @ a
        if b is not None:
            h = h + b
        hs.append(h)
        a = _act(code, h)[0] if l < L - 1 else h.copy()
        acts.append(a)
    return a, ForwardTrace(hs, acts)


def predict_logits(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.arch.layer_dims[0]:
        raise ValueError("input dimension mismatch")
    return kernels.active().logits(model.params, model.arch.layer_dims, model.arch.bias,
                                   X, model.arch.kind.code)


def checkpoint_dict(model):
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "weights": [W.tolist() for W in model.weights],
        "biases": None if not model.arch.bias else [b.tolist() for b in model.biases],
    }


def model_from_checkpoint(d):
    if d.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
    arch = MlpArchitecture.from_dict(d["arch"])
    return from_weights(arch, d["weights"], d.get("biases"))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh, allow_nan=False)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_checkpoint(json.load(fh))
