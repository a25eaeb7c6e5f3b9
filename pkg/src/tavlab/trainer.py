"""Full-batch gradient descent: per-task finetuning, multitask training,
convergence runs and iterative task arithmetic.

One epoch is exactly one gradient step on the whole dataset.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from tavlab import autodiff
from tavlab.network import MlpModel, predict_logits
from tavlab.parallel import ordered_map


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    alpha: float = 1.0
    epochs: int = 1
    convergence_grad_tol: float = 1e-5
    max_epochs_converged: int = 5000
    retain_grads: bool = False

    def __post_init__(self):
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ValueError("eta must be finite and >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class Trajectory:
    """Checkpoints theta^(0..k) and per-epoch records taken at theta^(j)."""

    arch: object
    step: float
    checkpoints: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    grads: list = None
    stop_reason: str = "epochs"
    task_ids: tuple = ()
    kind: str = "finetune"

    @property
    def epochs(self):
        return len(self.checkpoints) - 1

    @property
    def base(self):
        return self.checkpoints[0]

    @property
    def final(self):
        return self.checkpoints[-1]

    def model(self, j=-1):
        return MlpModel(self.arch, self.checkpoints[j])


def _record(traj, value, g, retain, epoch):
    if not math.isfinite(value):
        raise TrainingDivergence(epoch, value)
    traj.losses.append(value)
    traj.grad_norms.append(float(np.linalg.norm(g)))
    if retain:
        traj.grads.append(g)


def _check_step(theta, epoch):
    if not np.all(np.isfinite(theta)):
        raise TrainingDivergence(epoch, float("nan"))
    return theta


def _task_grads(model, tasks):
    return ordered_map(lambda t: autodiff.loss_and_grad(model, t), tasks)


def finetune(base, task, cfg):
    traj = Trajectory(base.arch, cfg.eta, [base.params.copy()],
                      grads=[] if cfg.retain_grads else None, task_ids=(task.task_id,))
    theta = base.params.copy()
    for j in range(cfg.epochs):
        value, g = autodiff.loss_and_grad(base.with_params(theta), task)
        _record(traj, value, g, cfg.retain_grads, j + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            theta = _check_step(theta - cfg.eta * g, j + 1)
        traj.checkpoints.append(theta)
    return traj


def multitask_gradient(model, tasks):
    """Sum of per-task mean-loss gradients (and losses), reduced in task order."""
    results = _task_grads(model, tasks)
    value = 0.0
    total = np.zeros(model.arch.param_count)
    for v, g in results:
        value += v
        total = total + g
    return value, total


def train_multitask(base, tasks, cfg):
    if not tasks:
        raise ValueError("tasks must be nonempty")
    step = cfg.alpha * cfg.eta
    traj = Trajectory(base.arch, step, [base.params.copy()],
                      grads=[] if cfg.retain_grads else None,
                      task_ids=tuple(t.task_id for t in tasks), kind="multitask")
    theta = base.params.copy()
    for j in range(cfg.epochs):
        value, g = multitask_gradient(base.with_params(theta), tasks)
        _record(traj, value, g, cfg.retain_grads, j + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            theta = _check_step(theta - step * g, j + 1)
        traj.checkpoints.append(theta)
    return traj


def train_to_convergence(base, task, cfg):
    """Run GD until ``||grad|| < convergence_grad_tol`` or the epoch cap.

    ``stop_reason`` is ``"tol"``, ``"cap"`` or ``"diverged"`` (non-finite
    loss; the last finite checkpoint is kept).
    """
    if cfg.convergence_grad_tol is None:
        raise ValueError("convergence_grad_tol must be set")
    traj = Trajectory(base.arch, cfg.eta, [base.params.copy()],
                      grads=[] if cfg.retain_grads else None, task_ids=(task.task_id,))
    theta = base.params.copy()
    while True:
        value, g = autodiff.loss_and_grad(base.with_params(theta), task)
        gn = float(np.linalg.norm(g))
        if not (math.isfinite(value) and math.isfinite(gn)):
            traj.stop_reason = "diverged"
            break
        if gn < cfg.convergence_grad_tol:
            traj.stop_reason = "tol"
            break
        if traj.epochs >= cfg.max_epochs_converged:
            traj.stop_reason = "cap"
            break
        _record(traj, value, g, cfg.retain_grads, traj.epochs + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            new = theta - cfg.eta * g
        if not np.all(np.isfinite(new)):
            traj.losses.pop()
            traj.grad_norms.pop()
            if cfg.retain_grads:
                traj.grads.pop()
            traj.stop_reason = "diverged"
            break
        theta = new
        traj.checkpoints.append(theta)
    return traj


def finetune_all(base, tasks, cfg):
    return ordered_map(lambda t: finetune(base, t, cfg), tasks)


def iterative_ta(base, tasks, rounds, epochs_per_round, alpha, eta):
    """Repeated finetune-then-merge; checkpoint ``r`` is the base after round ``r``."""
    from tavlab.merging import merge_ta, task_vector

    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    cfg = TrainConfig(eta=eta, alpha=alpha, epochs=epochs_per_round)
    traj = Trajectory(base.arch, alpha * eta, [base.params.copy()],
                      task_ids=tuple(t.task_id for t in tasks), kind="iterative_ta")
    current = base
    for _ in range(rounds):
        vectors = [task_vector(tr) for tr in finetune_all(current, tasks, cfg)]
        current = merge_ta(current, vectors, alpha)
        traj.checkpoints.append(current.params.copy())
    return traj


def accuracy(model, data):
    if data.n == 0:
        raise ValueError("empty dataset")
    # argmax returns the first maximum: ties go to the lower class index
    pred = np.argmax(predict_logits(model, data.inputs), axis=1)
    return float(np.count_nonzero(pred == data.labels)) / data.n


def replay(traj, tasks):
    """Recompute every checkpoint from its predecessor; returns the max deviation."""
    worst = 0.0
    for j in range(traj.epochs):
        model = MlpModel(traj.arch, traj.checkpoints[j])
        if traj.kind == "multitask":
            g = multitask_gradient(model, tasks)[1]
        else:
            g = autodiff.grad(model, tasks[0])
        nxt = traj.checkpoints[j] - traj.step * g
        worst = max(worst, float(np.max(np.abs(nxt - traj.checkpoints[j + 1]), initial=0.0)))
    return worst

