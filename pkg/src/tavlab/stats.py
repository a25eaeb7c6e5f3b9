"""Trajectory statistics: gradient dominance, gradient alignment, PCA of
checkpoints, and the one-epoch vs converged merging comparison."""
import math
from dataclasses import dataclass, field

import numpy as np

from tavlab.merging import merge_ta, task_vector
from tavlab.parallel import ordered_map
from tavlab.trainer import TrainConfig, accuracy, finetune, train_to_convergence

COSINE_REPORT_THRESHOLD = 0.8


def grad_dominance(traj):
    """Per-epoch gradient norms divided by their sum."""
    if traj.grads is None:
        norms = np.asarray(traj.grad_norms, dtype=np.float64)
    else:
        norms = np.array([np.linalg.norm(g) for g in traj.grads])
    if norms.size == 0:
        raise ValueError("trajectory has no recorded gradients")
    total = norms.sum()
    if total == 0.0:
        raise ValueError("all gradients are zero")
    return norms / total


@dataclass
class CosineMatrix:
    matrix: np.ndarray
    undefined_rows: list = field(default_factory=list)


def cosine_matrix(grads):
    """Pairwise cosines. Rows of zero gradients are NaN and listed in
    ``undefined_rows``; the diagonal of defined rows is exactly 1."""
    G = np.array([np.asarray(g, dtype=np.float64) for g in grads])
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValueError("need a nonempty list of equal-length vectors")
    norms = np.linalg.norm(G, axis=1)
    bad = [int(i) for i in np.flatnonzero(norms == 0.0)]
    n = G.shape[0]
    C = np.full((n, n), np.nan)
    for i in range(n):
        if i in bad:
            continue
        C[i, i] = 1.0
        for j in range(i + 1, n):
            if j in bad:
                continue
            c = float(np.dot(G[i], G[j]) / (norms[i] * norms[j]))
            C[i, j] = C[j, i] = min(1.0, max(-1.0, c))
    return CosineMatrix(C, bad)


@dataclass
class PcaResult:
    points: np.ndarray          # (n, 2)
    explained_variance: tuple
    components: np.ndarray      # (2, P)
    mean: np.ndarray
    rank_deficient: bool = False


def _fix_sign(v):
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def pca_project(checkpoints):
    X = np.array([np.asarray(c, dtype=np.float64) for c in checkpoints])
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need at least 3 checkpoints")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    scale = S[0] if S.size else 0.0
    tol = max(Xc.shape) * np.finfo(float).eps * scale
    rank = int(np.count_nonzero(S > tol))
    comps = np.zeros((2, X.shape[1]))
    var = [0.0, 0.0]
    denom = X.shape[0] - 1
    for i in range(min(2, rank)):
        comps[i] = _fix_sign(Vt[i])
        var[i] = float(S[i] ** 2 / denom)
    points = Xc @ comps.T
    return PcaResult(points, tuple(var), comps, mean, rank_deficient=rank < 2)


@dataclass
class HorizonArm:
    name: str
    epochs: list                 # epochs used per task
    per_alpha: dict              # alpha -> (per-task accuracies, mean)
    best_alpha: float = None
    best_mean: float = None
    best_per_task: list = None
    stop_reasons: list = None


@dataclass
class HorizonReport:
    alpha_grid: list
    one_epoch: HorizonArm
    converged: HorizonArm
    single_task_accuracy: list

    @property
    def gap(self):
        return self.one_epoch.best_mean - self.converged.best_mean


def default_alpha_grid(T):
    grid = {round(a, 12) for a in (0.1, 0.2, 0.3, 0.5, 0.7, 1.0)}
    grid.add(1.0 / T)
    return sorted(grid)


def _evaluate_arm(name, base, vectors, tasks, alpha_grid, epochs, reasons=None):
    arm = HorizonArm(name, epochs, {}, stop_reasons=reasons)
    for a in alpha_grid:
        merged = merge_ta(base, vectors, a)
        accs = [accuracy(merged, t) for t in tasks]
        arm.per_alpha[a] = (accs, float(np.mean(accs)))
    # best alpha: highest mean accuracy, smallest alpha on ties
    best = max(alpha_grid, key=lambda a: (arm.per_alpha[a][1], -a))
    arm.best_alpha = best
    arm.best_per_task, arm.best_mean = arm.per_alpha[best]
    return arm


def merge_horizon_experiment(base, tasks, cfg, alpha_grid=None, eval_tasks=None):
    """Merged accuracy from one-epoch task vectors vs converged ones.

    ``cfg`` supplies ``eta`` and the convergence settings; accuracy is
    measured on ``eval_tasks`` (defaults to the training tasks).
    """
    T = len(tasks)
    alpha_grid = sorted(alpha_grid) if alpha_grid is not None else default_alpha_grid(T)
    if not any(math.isclose(a, 1.0 / T, rel_tol=1e-9) for a in alpha_grid):
        alpha_grid = sorted(list(alpha_grid) + [1.0 / T])
    eval_tasks = tasks if eval_tasks is None else eval_tasks

    one_cfg = TrainConfig(eta=cfg.eta, epochs=1)
    one = ordered_map(lambda t: finetune(base, t, one_cfg), tasks)
    conv = ordered_map(lambda t: train_to_convergence(base, t, cfg), tasks)
    single = [accuracy(tr.model(), e) for tr, e in zip(conv, eval_tasks)]

    arm_a = _evaluate_arm("one_epoch", base, [task_vector(tr) for tr in one],
                          eval_tasks, alpha_grid, [1] * T)
    arm_b = _evaluate_arm("converged", base, [task_vector(tr) for tr in conv],
                          eval_tasks, alpha_grid, [tr.epochs for tr in conv],
                          [tr.stop_reason for tr in conv])
    return HorizonReport(list(alpha_grid), arm_a, arm_b, single)
