"""Mean cross-entropy, its exact gradient and Hessian-vector product.

The heavy lifting is in ``tavlab.kernels``; this module validates inputs,
assembles dense Hessians from HVPs and provides finite-difference oracles.
"""
from dataclasses import dataclass

import numpy as np

from tavlab import kernels
from tavlab.linalg import as_vector, check_finite

HESSIAN_CAP = 5000


class HessianTooLarge(ValueError):
    pass


def _check(model, data):
    if data.n == 0:
        raise ValueError("empty dataset")
    if data.input_dim != model.arch.layer_dims[0]:
        raise ValueError("input dimension mismatch")
    if data.labels.max() >= model.arch.num_classes or data.labels.min() < 0:
        raise ValueError("label class outside the model's output range")
    a = model.arch
    return model.params, a.layer_dims, a.bias, data.inputs, data.labels, a.kind.code


def loss(model, data):
    return float(kernels.active().loss(*_check(model, data)))


def loss_and_grad(model, data):
    value, g = kernels.active().loss_grad(*_check(model, data))
    return float(value), g


def grad(model, data):
    return loss_and_grad(model, data)[1]


def hvp(model, data, v):
    v = check_finite(as_vector(v), "direction")
    if v.shape[0] != model.arch.param_count:
        raise ValueError("direction length mismatch")
    return kernels.active().hvp(*_check(model, data), v)


@dataclass(frozen=True)
class HessianResult:
    matrix: np.ndarray       # symmetrized (H + H^T) / 2
    asymmetry: float         # ||H - H^T||_2 / ||H||_2 before symmetrization


def full_hessian(model, data, cap=HESSIAN_CAP):
    P = model.arch.param_count
    if P > cap:
        raise HessianTooLarge(f"hessian too large: P={P} exceeds cap {cap}")
    H = np.empty((P, P))
    e = np.zeros(P)
    for i in range(P):
        e[i] = 1.0
        H[:, i] = hvp(model, data, e)
        e[i] = 0.0
    scale = np.linalg.norm(H, 2)
    asym = float(np.linalg.norm(H - H.T, 2) / scale) if scale > 0 else 0.0
    return HessianResult(0.5 * (H + H.T), asym)


def hessian_spectral_norm(H):
    """Largest |eigenvalue| of a symmetric matrix."""
    return float(np.max(np.abs(np.linalg.eigvalsh(H))))


def softmax(z):
    z = as_vector(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def logits_hessian(p):
    """Softmax cross-entropy Hessian w.r.t. the logits, ``diag(p) - p p^T``."""
    p = as_vector(p)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("not a probability vector")
    return np.diag(p) - np.outer(p, p)


@dataclass(frozen=True)
class FdReport:
    mode: str
    max_rel_error: float
    worst_index: int
    step: float
    kink_crossings: int = 0


def fd_step(model):
    return max(1e-5, 1e-5 * float(np.max(np.abs(model.params), initial=0.0)))


def _relu_kinks(model, data, direction, step):
    """Samples whose ReLU pattern changes between theta +- step*direction."""
    if model.arch.activation != "relu":
        return 0
    from tavlab.network import forward

    changed = 0
    plus = model.with_params(model.params + step * direction)
    minus = model.with_params(model.params - step * direction)
    for x in data.inputs:
        hp = forward(plus, x)[1].preactivations[:-1]
        hm = forward(minus, x)[1].preactivations[:-1]
        if any(np.any((a > 0) != (b > 0)) for a, b in zip(hp, hm)):
            changed += 1
    return changed


def _rel_err(a, b, floor):
    scale = max(floor * max(np.max(np.abs(a)), np.max(np.abs(b))), 1e-12)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), scale)


def fd_check(model, data, mode="grad", v=None, floor=1e-3):
    """Compare the analytic gradient (or HVP) with central differences.

    ``grad`` mode differences the loss along each coordinate; ``hvp`` mode
    differences the analytic gradient along ``v`` (default: a seeded unit
    vector). The relative error of coordinate ``i`` divides by
    ``max(|a_i|, |b_i|, floor * max(||a||_inf, ||b||_inf))`` so that
    coordinates that are zero up to rounding do not dominate.
    """
    eps = fd_step(model)
    theta = model.params
    P = theta.shape[0]
    if mode == "grad":
        g = grad(model, data)
        fd = np.empty(P)
        e = np.zeros(P)
        for i in range(P):
            e[i] = eps
            fd[i] = (loss(model.with_params(theta + e), data)
                     - loss(model.with_params(theta - e), data)) / (2 * eps)
            e[i] = 0.0
        err = _rel_err(g, fd, floor)
        kinks = 0
    elif mode == "hvp":
        if v is None:
            v = np.random.default_rng(0).standard_normal(P)
            v /= np.linalg.norm(v)
        v = as_vector(v)
        hv = hvp(model, data, v)
        fd = (grad(model.with_params(theta + eps * v), data)
              - grad(model.with_params(theta - eps * v), data)) / (2 * eps)
        err = _rel_err(hv, fd, floor)
        kinks = _relu_kinks(model, data, v, eps)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    worst = int(np.argmax(err))
    return FdReport(mode, float(err[worst]), worst, eps, kinks)
