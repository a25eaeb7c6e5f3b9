"""Uniform gradient / Hessian / curvature-coefficient bounds for bias-free
MLPs trained with cross-entropy, and their empirical counterparts.

Every theoretical quantity is computed from the layer spectral-norm bounds
``s_l`` (taken as the largest spectral norm of ``W_l`` over all visited
checkpoints), the input bound ``M_x`` and the activation constants.
Measured quantities come from exact gradients and dense Hessians.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from tavlab import autodiff
from tavlab.linalg import spectral_norm
from tavlab.merging import coefficient_C_raw
from tavlab.network import MlpModel, predict_logits
from tavlab.parallel import ordered_map

RATIO_SLACK = 1e-9


def layer_spectral_norms(arch, theta):
    model = MlpModel(arch, theta)
    return [spectral_norm(W) for W in model.weights]


def theoretical_bounds(arch, s, M_x, T, alpha, h):
    """All closed-form bounds for the given constants, keyed by label."""
    kind = arch.kind
    L = arch.depth
    beta, gamma = kind.beta_phi, kind.gamma_phi
    if not (math.isfinite(beta) and math.isfinite(gamma)):
        raise ValueError(f"activation {kind.name!r} unsupported: derivative bounds not finite")
    Pi = math.prod(s)
    binom = math.comb(h + 2, 2) if h >= 0 else 0
    out = {
        "Pi": Pi,
        "binom(h+2,2)": binom,
        "G_max": math.sqrt(2.0) * M_x * Pi * beta ** (L - 1),
        "H_max": 2.0 * gamma * M_x ** 2 * Pi ** 2 * beta ** (2 * L - 2),
    }
    if kind.name == "relu":
        out["G_max_relu"] = math.sqrt(2.0) * M_x * Pi
        out["H_max_relu_statement"] = 0.5 * math.sqrt(2.0) * M_x ** 3 * Pi ** 3 * beta ** (3 * L - 3)
        out["H_max_relu_appendix"] = 0.5 * M_x ** 2 * Pi ** 2 * beta ** (2 * L - 2)
    main = abs(alpha * T - 1.0)
    app = abs(alpha * (T + 1) - 1.0)
    if kind.name == "relu":
        G = out["G_max_relu"]
        for hv in ("statement", "appendix"):
            H = out[f"H_max_relu_{hv}"]
            out[f"C_bound_relu_{hv}_|aT-1|"] = 0.5 * T * binom * main * H * G
            out[f"C_bound_relu_{hv}_|a(T+1)-1|"] = T * binom * app * H * G
    else:
        out["C_bound_|aT-1|"] = T * binom * main * out["H_max"] * out["G_max"]
        out["C_bound_|a(T+1)-1|"] = T * binom * app * out["H_max"] * out["G_max"]
    return out


@dataclass
class BoundReport:
    activation: str
    T: int
    alpha: float
    h: int
    M_x: float
    layer_bounds: list                    # s_l
    measured: dict = field(default_factory=dict)
    theoretical: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    max_logits_hessian_eig: float = 0.0
    worst_checkpoint_gradient_ratio: float = 0.0
    hessian_asymmetry: float = 0.0


# measured key -> theoretical keys it is compared against
def _comparisons(kind):
    if kind == "relu":
        return {
            "G_emp": ["G_max_relu", "G_max"],
            "H_emp": ["H_max_relu_statement", "H_max_relu_appendix"],
            "C_norm": [f"C_bound_relu_{v}_{f}" for v in ("statement", "appendix")
                       for f in ("|aT-1|", "|a(T+1)-1|")],
        }
    return {
        "G_emp": ["G_max"],
        "H_emp": ["H_max"],
        "C_norm": ["C_bound_|aT-1|", "C_bound_|a(T+1)-1|"],
    }


def _logits_hessian_max_eig(model, tasks):
    worst = 0.0
    for task in tasks:
        z = predict_logits(model, task.inputs)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        H = p[:, :, None] * np.eye(p.shape[1])[None] - p[:, :, None] * p[:, None, :]
        worst = max(worst, float(np.linalg.eigvalsh(H)[:, -1].max()))
    return worst


def parameter_bounds(mt_traj, tasks, alpha, h, trajectories=()):
    """Evaluate measured maxima against the closed-form bounds.

    ``mt_traj`` is the multitask trajectory whose checkpoints define C and
    the gradient / Hessian maxima; ``trajectories`` (e.g. single-task runs)
    only widen the set of visited checkpoints used for ``s_l`` and for the
    per-checkpoint gradient check.
    """
    arch = mt_traj.arch
    if arch.bias:
        raise ValueError("bounds assume a bias-free network")
    T = len(tasks)
    M_x = max(t.m_x_bound for t in tasks)
    visited = [(mt_traj, list(range(T)))]
    for tr in trajectories:
        ids = [i for i, t in enumerate(tasks) if t.task_id in tr.task_ids]
        visited.append((tr, ids))

    per_ckpt = []
    for tr, _ in visited:
        per_ckpt.extend(ordered_map(lambda th: layer_spectral_norms(arch, th), tr.checkpoints))
    s = [max(col) for col in zip(*per_ckpt)]
    theory = theoretical_bounds(arch, s, M_x, T, alpha, h)
    beta = arch.kind.beta_phi
    L = arch.depth
    report = BoundReport(arch.activation, T, alpha, h, M_x, s, theoretical=theory)

    # gradient bound with per-checkpoint Pi, on every visited checkpoint
    worst_ratio = 0.0
    idx = 0
    for tr, ids in visited:
        for theta in tr.checkpoints:
            pi_here = math.prod(per_ckpt[idx])
            idx += 1
            bound = math.sqrt(2.0) * M_x * pi_here * beta ** (L - 1)
            model = MlpModel(arch, theta)
            for t in ids:
                gn = float(np.linalg.norm(autodiff.grad(model, tasks[t])))
                worst_ratio = max(worst_ratio, gn / bound if bound > 0 else math.inf)
    report.worst_checkpoint_gradient_ratio = worst_ratio
    if worst_ratio > 1.0 + RATIO_SLACK:
        report.violations.append("checkpoint_gradient")

    G_emp, H_emp, asym, eig = 0.0, 0.0, 0.0, 0.0
    for theta in mt_traj.checkpoints:
        model = MlpModel(arch, theta)
        eig = max(eig, _logits_hessian_max_eig(model, tasks))
        for task in tasks:
            G_emp = max(G_emp, float(np.linalg.norm(autodiff.grad(model, task))))
            res = autodiff.full_hessian(model, task)
            asym = max(asym, res.asymmetry)
            H_emp = max(H_emp, autodiff.hessian_spectral_norm(res.matrix))
    report.max_logits_hessian_eig = eig
    report.hessian_asymmetry = asym

    if h >= 0 and len(mt_traj.checkpoints) < h + 1:
        raise ValueError(f"multitask trajectory too short for h={h}")
    C = coefficient_C_raw(arch, mt_traj.checkpoints, tasks, alpha, h) if h >= 0 \
        else np.zeros(arch.param_count)
    C_norm = float(np.linalg.norm(C))
    binom = theory["binom(h+2,2)"]
    report.measured = {
        "s_l": s, "Pi": theory["Pi"], "M_x": M_x,
        "M_x_data": max(float(np.linalg.norm(t.inputs, axis=1).max()) for t in tasks),
        "G_emp": G_emp, "H_emp": H_emp, "C_norm": C_norm,
        # step (i) of the bound with measured H and G plugged in
        "C_bound_emp_|aT-1|": T * binom * abs(alpha * T - 1) * H_emp * G_emp,
        "C_bound_emp_|a(T+1)-1|": T * binom * abs(alpha * (T + 1) - 1) * H_emp * G_emp,
    }

    for m_key, t_keys in _comparisons(arch.activation).items():
        for t_key in t_keys:
            bound = theory[t_key]
            value = report.measured[m_key]
            ratio = value / bound if bound > 0 else (0.0 if value == 0 else math.inf)
            report.ratios[f"{m_key}/{t_key}"] = ratio
            if ratio > 1.0 + RATIO_SLACK:
                report.violations.append(f"{m_key}/{t_key}")
    for key in ("C_bound_emp_|aT-1|", "C_bound_emp_|a(T+1)-1|"):
        b = report.measured[key]
        report.ratios[f"C_norm/{key}"] = C_norm / b if b > 0 else (0.0 if C_norm == 0 else math.inf)
    if abs(alpha * T - 1.0) < 1e-12:
        report.notes.append("alpha*T == 1: |aT-1| bounds are zero while C need not be")
    if eig > 0.5 + 1e-12:
        report.violations.append("logits_hessian_eig>0.5")
    return report
