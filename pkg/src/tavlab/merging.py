"""Task vectors, task-arithmetic merging and the curvature terms that
describe how merged and multitask trajectories separate.

All terms are evaluated on the multitask checkpoints ``theta_MT^(0..)``:

* ``residual_r``  -- ``alpha * sum_t' grad L_t'(theta) - grad L_t(theta)``
* ``accum_p``     -- ``sum_{j<=k} r_t(theta^(j))``
* ``curvature_s`` -- ``sum_{j<=k} H_t(anchor_j) p_t^j``
* ``coefficient_C`` -- ``factor * sum_t s_t^h``

Hessians are only ever applied through HVPs here.
"""
from dataclasses import dataclass

import numpy as np

from tavlab import autodiff
from tavlab.network import MlpModel
from tavlab.parallel import ordered_map

ANCHORS = ("main_text", "appendix")


@dataclass(frozen=True)
class TaskVector:
    task_id: int
    epochs: int
    delta: np.ndarray


@dataclass(frozen=True)
class CurvatureTermConfig:
    """How the curvature coefficient is anchored and scaled.

    ``anchor`` picks the Hessian point for term ``j``: ``theta^(j)``
    ("main_text") or ``theta^(j+1)`` ("appendix"). The coefficient applied
    to the raw sum is ``sign_factor * (alpha if alpha_factor == "alpha"
    else 1) * taylor_scale``; ``taylor_scale = 2`` corresponds to expanding
    the gradient to first order without a 1/2.
    """

    hessian_anchor: str = "main_text"
    sign_factor: int = 1
    alpha_factor: str = "one"
    taylor_scale: float = 1.0

    def __post_init__(self):
        if self.hessian_anchor not in ANCHORS:
            raise ValueError(f"unknown anchor {self.hessian_anchor!r}")
        if self.sign_factor not in (1, -1):
            raise ValueError("sign_factor must be +1 or -1")
        if self.alpha_factor not in ("one", "alpha"):
            raise ValueError("alpha_factor must be 'one' or 'alpha'")
        if self.taylor_scale not in (1.0, 2.0):
            raise ValueError("taylor_scale must be 1 or 2")

    def factor(self, alpha):
        a = alpha if self.alpha_factor == "alpha" else 1.0
        return self.sign_factor * a * self.taylor_scale

    def label(self):
        a = "alpha" if self.alpha_factor == "alpha" else "1"
        s = "+" if self.sign_factor > 0 else "-"
        return f"{self.hessian_anchor}:{s}{a}x{self.taylor_scale:g}"

    def to_dict(self):
        return {"hessian_anchor": self.hessian_anchor, "sign_factor": self.sign_factor,
                "alpha_factor": self.alpha_factor, "taylor_scale": self.taylor_scale}


def candidate_configs(anchor="main_text"):
    """Every sign / alpha / scale combination for one anchor, in a fixed order."""
    return [CurvatureTermConfig(anchor, s, a, sc)
            for sc in (1.0, 2.0) for s in (1, -1) for a in ("one", "alpha")]


def task_vector(traj):
    if traj.epochs < 1:
        raise ValueError("trajectory has no epochs")
    task_id = traj.task_ids[0] if traj.task_ids else -1
    return TaskVector(task_id, traj.epochs, traj.final - traj.base)


def multitask_vector(vectors):
    if not vectors:
        raise ValueError("no task vectors")
    total = vectors[0].delta.copy()
    for tv in vectors[1:]:
        if tv.delta.shape != total.shape:
            raise ValueError("task vector length mismatch")
        total = total + tv.delta
    return total


def merge_ta(base, vectors, alpha):
    for tv in vectors:
        if tv.delta.shape[0] != base.arch.param_count:
            raise ValueError("task vector length mismatch")
    return base.with_params(base.params + alpha * multitask_vector(vectors))


def _model(arch, theta):
    return MlpModel(arch, theta)


def task_gradients(arch, theta, tasks):
    model = _model(arch, theta)
    return ordered_map(lambda t: autodiff.grad(model, t), tasks)


def _sum(vectors):
    total = vectors[0].copy()
    for v in vectors[1:]:
        total = total + v
    return total


def residual_r(t, arch, theta, tasks, alpha, grads=None):
    """``alpha * sum_t' g_t' - g_t`` at ``theta`` for task index ``t``."""
    if not 0 <= t < len(tasks):
        raise ValueError(f"task index {t} not in tasks")
    g = task_gradients(arch, theta, tasks) if grads is None else grads
    return alpha * _sum(g) - g[t]


def residual_r_split(t, arch, theta, tasks, alpha, grads=None):
    """Same quantity written as ``alpha * sum_{t' != t} g_t' + (alpha - 1) g_t``."""
    g = task_gradients(arch, theta, tasks) if grads is None else grads
    others = [g[i] for i in range(len(g)) if i != t]
    rest = alpha * _sum(others) if others else np.zeros_like(g[t])
    return rest + (alpha - 1.0) * g[t]


class _GradCache:
    """Per-checkpoint task gradients, computed once."""

    def __init__(self, arch, checkpoints, tasks):
        self.arch, self.checkpoints, self.tasks = arch, checkpoints, tasks
        self._g = {}

    def __call__(self, j):
        if j not in self._g:
            self._g[j] = task_gradients(self.arch, self.checkpoints[j], self.tasks)
        return self._g[j]


def _p_series(t, arch, checkpoints, tasks, alpha, k, cache=None):
    """[p_t^0, ..., p_t^k]."""
    if len(checkpoints) < k + 1:
        raise ValueError(f"need {k + 1} checkpoints, have {len(checkpoints)}")
    cache = cache or _GradCache(arch, checkpoints, tasks)
    out = []
    acc = None
    for j in range(k + 1):
        r = residual_r(t, arch, checkpoints[j], tasks, alpha, grads=cache(j))
        acc = r if acc is None else acc + r
        out.append(acc)
    return out


def accum_p(t, arch, checkpoints, tasks, alpha, k=None):
    """``p_t^k = sum_{j=0}^{k} r_t(theta^(j))``; ``k`` defaults to the last checkpoint."""
    k = len(checkpoints) - 1 if k is None else k
    return _p_series(t, arch, checkpoints, tasks, alpha, k)[-1]


def _anchor_index(j, anchor):
    return j if anchor == "main_text" else j + 1


def curvature_s(t, arch, checkpoints, tasks, alpha, k, cfg=CurvatureTermConfig(), cache=None):
    """``s_t^k = sum_{j=0}^{k} H_t(anchor_j) p_t^j`` via Hessian-vector products."""
    if k < 0:
        return np.zeros(arch.param_count)
    need = _anchor_index(k, cfg.hessian_anchor) + 1
    if len(checkpoints) < need:
        raise ValueError(f"insufficient checkpoints: need {need}, have {len(checkpoints)}")
    ps = _p_series(t, arch, checkpoints, tasks, alpha, k, cache)
    total = np.zeros(arch.param_count)
    for j in range(k + 1):
        model = _model(arch, checkpoints[_anchor_index(j, cfg.hessian_anchor)])
        total = total + autodiff.hvp(model, tasks[t], ps[j])
    return total


def coefficient_C_raw(arch, checkpoints, tasks, alpha, h, anchor="main_text"):
    """``sum_t sum_{e=0}^{h} H_t(anchor_e) sum_{m<=e} r_t(theta^(m))``, unscaled."""
    cfg = CurvatureTermConfig(hessian_anchor=anchor)
    cache = _GradCache(arch, checkpoints, tasks)
    parts = ordered_map(
        lambda t: curvature_s(t, arch, checkpoints, tasks, alpha, h, cfg, cache),
        range(len(tasks)))
    return _sum(parts)


def coefficient_C(arch, checkpoints, tasks, alpha, h, cfg=CurvatureTermConfig()):
    raw = coefficient_C_raw(arch, checkpoints, tasks, alpha, h, cfg.hessian_anchor)
    return cfg.factor(alpha) * raw
