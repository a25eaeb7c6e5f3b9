"""Experiment drivers behind the CLI subcommands.

Each ``run_*`` function takes a completed config dict and returns an
``Artifacts`` bundle (JSON payloads and CSV tables keyed by file stem);
writing and validation live in ``tavlab.cli`` and ``tavlab.validate``.
CSV column lists in ``COLUMNS`` are part of the output format.
"""
from dataclasses import dataclass, field

import numpy as np

from tavlab import autodiff, kernels
from tavlab.bounds import parameter_bounds
from tavlab.merging import merge_ta, task_vector
from tavlab.network import MlpArchitecture, checkpoint_dict, init_model
from tavlab.orders import first_order_scan, gap_scan, lemma_scan
from tavlab.stats import (
    COSINE_REPORT_THRESHOLD, cosine_matrix, grad_dominance, merge_horizon_experiment, pca_project,
)
from tavlab.taskgen import GENERATOR_VERSION, make_task_family, task_dict
from tavlab.trainer import (
    TrainConfig, accuracy, finetune, finetune_all, iterative_ta, train_multitask,
)

EPOCH1_TOL = 1e-12
COSINE_GATE_EPOCHS = 5

COLUMNS = {
    "gen-tasks/tasks": ["task_id", "seed", "n", "max_norm", "m_x_bound", "class_counts"],
    "finetune/history": ["trajectory", "epoch", "loss", "grad_norm"],
    "merge/accuracy": ["model", "task_id", "accuracy"],
    "merge/epoch1": ["alpha", "gap_norm", "tolerance"],
    "gap-scan/gap_scan": ["alpha", "eta", "gap_norm", "c_norm", "candidate", "residual_norm"],
    "gap-scan/fits": ["alpha", "series", "slope", "intercept", "r2", "used"],
    "gap-scan/lemma": ["m", "eta", "task_id", "linear_residual", "scale", "corrected_residual"],
    "gap-scan/first_order": ["eta", "residual"],
    "bounds/bounds": ["activation", "ratio", "measured_key", "measured", "bound_key", "bound",
                      "value", "violated"],
    "dominance/dominance": ["task_id", "epoch", "grad_norm", "normalized", "cos_to_first"],
    "dominance/cosine": ["task_id", "i", "j", "cosine"],
    "horizon/horizon": ["arm", "alpha", "task_id", "accuracy"],
    "pca/pca": ["series", "index", "pc1", "pc2"],
}


@dataclass
class Artifacts:
    subcommand: str
    json: dict = field(default_factory=dict)
    csv: dict = field(default_factory=dict)     # stem -> rows

    def table(self, stem, rows):
        key = f"{self.subcommand}/{stem}"
        if key not in COLUMNS:
            raise KeyError(f"no frozen columns for {key}")
        self.csv[stem] = (COLUMNS[key], rows)


def arch_of(cfg, activation=None):
    a = cfg["arch"]
    return MlpArchitecture(tuple(a["layer_dims"]), activation or a["activation"], a["bias"])


def family(cfg):
    t = cfg["tasks"]
    d0 = cfg["arch"]["layer_dims"][0]
    return make_task_family(t["seed"], t["T"], t["n_t"], d0, t["K"], t["M_x"], t["separation"])


def base_model(cfg, activation=None):
    return init_model(arch_of(cfg, activation), cfg["seed"])


def trajectory_dict(traj):
    return {
        "arch": traj.arch.to_dict(),
        "kind": traj.kind,
        "step": traj.step,
        "task_ids": list(traj.task_ids),
        "stop_reason": traj.stop_reason,
        "losses": traj.losses,
        "grad_norms": traj.grad_norms,
        "checkpoints": [np.asarray(c).tolist() for c in traj.checkpoints],
    }


def _akey(a):
    return repr(float(a))


def run_gen_tasks(cfg):
    art = Artifacts("gen-tasks")
    tasks = family(cfg)
    rows, summary = [], []
    for task in tasks:
        counts = np.bincount(task.labels, minlength=task.num_classes).tolist()
        max_norm = float(np.linalg.norm(task.inputs, axis=1).max())
        art.json[f"task_{task.task_id:02d}"] = task_dict(task)
        rows.append([task.task_id, task.seed, task.n, max_norm, task.m_x_bound,
                     ";".join(str(c) for c in counts)])
        summary.append({"task_id": task.task_id, "seed": task.seed, "n": task.n,
                        "max_norm": max_norm, "class_counts": counts})
    art.json["tasks"] = {"generator_version": GENERATOR_VERSION, "family": cfg["tasks"],
                         "tasks": summary}
    art.table("tasks", rows)
    return art


def run_finetune(cfg):
    art = Artifacts("finetune")
    tasks = family(cfg)
    base = base_model(cfg)
    tr = cfg["train"]
    tcfg = TrainConfig(eta=tr["eta"], alpha=tr["alpha"], epochs=tr["k"])
    singles = finetune_all(base, tasks, tcfg)
    mt = train_multitask(base, tasks, tcfg)
    rows = []
    for name, traj in [(f"task_{t.task_id:02d}", s) for t, s in zip(tasks, singles)] + [("multitask", mt)]:
        art.json[f"traj_{name}"] = trajectory_dict(traj)
        rows += [[name, j + 1, l, g] for j, (l, g) in enumerate(zip(traj.losses, traj.grad_norms))]
    # one-epoch task vector against -eta * grad at the base
    worst = 0.0
    for task, traj in zip(tasks, singles):
        tau1 = traj.checkpoints[1] - traj.checkpoints[0]
        ref = -tr["eta"] * autodiff.grad(base, task)
        worst = max(worst, float(np.max(np.abs(tau1 - ref))))
    art.json["base"] = checkpoint_dict(base)
    art.json["finetune"] = {
        "eta": tr["eta"], "alpha": tr["alpha"], "epochs": tr["k"],
        "one_epoch_vector_max_abs_error": worst,
        "final_losses": {f"task_{t.task_id:02d}": s.losses[-1] for t, s in zip(tasks, singles)},
        "multitask_final_loss": mt.losses[-1],
    }
    art.table("history", rows)
    return art


def epoch1_gap(base, tasks, alpha, eta):
    cfg = TrainConfig(eta=eta, alpha=alpha, epochs=1)
    ta = merge_ta(base, [task_vector(t) for t in finetune_all(base, tasks, cfg)], alpha).params
    mt = train_multitask(base, tasks, cfg).final
    return float(np.linalg.norm(ta - mt))


def run_merge(cfg):
    art = Artifacts("merge")
    tasks = family(cfg)
    base = base_model(cfg)
    tr = cfg["train"]
    T = len(tasks)
    tol = EPOCH1_TOL * (1.0 + float(np.linalg.norm(base.params)))
    epoch1 = {}
    for a in sorted({1.0 / T, tr["alpha"], 1.0}):
        epoch1[_akey(a)] = epoch1_gap(base, tasks, a, tr["eta"])
    tcfg = TrainConfig(eta=tr["eta"], alpha=tr["alpha"], epochs=tr["k"])
    vectors = [task_vector(t) for t in finetune_all(base, tasks, tcfg)]
    merged = merge_ta(base, vectors, tr["alpha"])
    mt = train_multitask(base, tasks, tcfg).model()
    acc = {name: [accuracy(m, t) for t in tasks]
           for name, m in (("base", base), ("task_arithmetic", merged), ("multitask", mt))}
    art.json["merged_model"] = checkpoint_dict(merged)
    art.json["merge"] = {
        "alpha": tr["alpha"], "eta": tr["eta"], "k": tr["k"],
        "base_norm": float(np.linalg.norm(base.params)),
        "epoch1_gap": epoch1, "epoch1_tolerance": tol,
        "gap_k": float(np.linalg.norm(merged.params - mt.params)),
        "accuracy": acc,
        "mean_accuracy": {k: float(np.mean(v)) for k, v in acc.items()},
    }
    art.table("accuracy", [[name, t.task_id, a] for name, v in acc.items()
                           for t, a in zip(tasks, v)])
    art.table("epoch1", [[float(a), g, tol] for a, g in epoch1.items()])
    return art


def _fit_dict(f):
    if f is None:
        return None
    return {"slope": f.slope, "intercept": f.intercept, "r2": f.r2, "used": f.used,
            "excluded": list(f.excluded)}


def gap_report_dict(rep):
    return {
        "k": rep.k, "alpha": rep.alpha, "eta_grid": rep.eta_grid,
        "gap_norms": rep.gap_norms, "c_norms": rep.c_norms,
        "corrected": rep.corrected,
        "raw_fit": _fit_dict(rep.raw_fit),
        "corrected_fits": {k: _fit_dict(v) for k, v in rep.corrected_fits.items()},
        "candidates": rep.candidates,
        "selected_config": rep.selected_config,
        "equivalent_configs": rep.equivalent_configs,
        "appendix_anchor_residuals": rep.appendix_anchor_residuals,
        "appendix_anchor_fit": _fit_dict(rep.appendix_anchor_fit),
        "dropped": [list(d) for d in rep.dropped],
    }


def run_gap_scan(cfg):
    art = Artifacts("gap-scan")
    an = cfg["analysis"]
    tasks = family(cfg)[:an["gap_tasks"]]
    base = base_model(cfg)
    k = cfg["train"]["k"]
    grid = an["eta_grid"]
    reports, rows, fits = [], [], []
    for a in an["gap_alphas"]:
        rep = gap_scan(base, tasks, k, a, grid)
        reports.append(gap_report_dict(rep))
        for i, eta in enumerate(rep.eta_grid):
            for label, norms in rep.corrected.items():
                rows.append([a, eta, rep.gap_norms[i], rep.c_norms[i], label, norms[i]])
        series = [("raw", rep.raw_fit)] + list(rep.corrected_fits.items())
        series.append(("appendix_anchor", rep.appendix_anchor_fit))
        for name, f in series:
            if f is not None:
                fits.append([a, name, f.slope, f.intercept, f.r2, f.used])
    art.json["gap_scan"] = {"k": k, "T": len(tasks), "reports": reports}
    art.table("gap_scan", rows)
    art.table("fits", fits)

    lemma_alpha = an["gap_alphas"][0]
    lemma_out, lrows = [], []
    for m in an["lemma_m"]:
        rep = lemma_scan(base, tasks, m, lemma_alpha, grid)
        lemma_out.append({
            "m": m, "alpha": lemma_alpha, "eta_grid": rep.eta_grid, "anchor": rep.anchor,
            "linear_residuals": rep.linear_residuals,
            "corrected_residuals": {repr(s): v for s, v in rep.corrected_residuals.items()},
            "linear_fits": {t: _fit_dict(f) for t, f in rep.linear_fits.items()},
            "corrected_fits": {repr(s): {t: _fit_dict(f) for t, f in d.items()}
                               for s, d in rep.corrected_fits.items()},
            "selected_scale": rep.selected_scale,
        })
        for i, eta in enumerate(rep.eta_grid):
            for t in range(len(tasks)):
                for s in rep.corrected_residuals:
                    lrows.append([m, eta, t, rep.linear_residuals[t][i], s,
                                  rep.corrected_residuals[s][t][i]])
    art.json["lemma"] = {"reports": lemma_out}
    art.table("lemma", lrows)

    fo = first_order_scan(base, tasks, k, lemma_alpha, grid)
    art.json["first_order"] = {"k": k, "alpha": lemma_alpha, "eta_grid": fo.eta_grid,
                               "residuals": fo.residuals, "fit": _fit_dict(fo.fit)}
    art.table("first_order", [[e, r] for e, r in zip(fo.eta_grid, fo.residuals)])
    return art


def bound_report_dict(rep):
    return {
        "activation": rep.activation, "T": rep.T, "alpha": rep.alpha, "h": rep.h, "M_x": rep.M_x,
        "layer_bounds": rep.layer_bounds, "measured": rep.measured,
        "theoretical": rep.theoretical, "ratios": rep.ratios,
        "violations": rep.violations, "notes": rep.notes,
        "max_logits_hessian_eig": rep.max_logits_hessian_eig,
        "worst_checkpoint_gradient_ratio": rep.worst_checkpoint_gradient_ratio,
        "hessian_asymmetry": rep.hessian_asymmetry,
    }


def bounds_for(cfg, activation, tasks=None):
    an = cfg["analysis"]
    tasks = family(cfg) if tasks is None else tasks
    base = base_model(cfg, activation)
    if base.arch.bias:
        base = init_model(MlpArchitecture(base.arch.layer_dims, activation, False), cfg["seed"])
    tcfg = TrainConfig(eta=an["bound_eta"], alpha=an["bound_alpha"], epochs=cfg["train"]["k"])
    mt = train_multitask(base, tasks, tcfg)
    singles = finetune_all(base, tasks, tcfg)
    return parameter_bounds(mt, tasks, an["bound_alpha"], an["h"], singles)


def run_bounds(cfg):
    art = Artifacts("bounds")
    tasks = family(cfg)
    rows, summary = [], {}
    for act in cfg["analysis"]["bound_activations"]:
        rep = bounds_for(cfg, act, tasks)
        art.json[f"bounds_{act}"] = bound_report_dict(rep)
        summary[act] = {"violations": rep.violations, "notes": rep.notes}
        for label, ratio in rep.ratios.items():
            m_key, b_key = label.split("/", 1)
            measured = rep.measured[m_key]
            bound = rep.theoretical.get(b_key, rep.measured.get(b_key))
            rows.append([act, label, m_key, measured, b_key, bound, ratio, label in rep.violations])
    art.json["bounds"] = summary
    art.table("bounds", rows)
    return art


def run_dominance(cfg):
    art = Artifacts("dominance")
    tasks = family(cfg)
    base = base_model(cfg)
    epochs = cfg["analysis"]["dominance_epochs"]
    tcfg = TrainConfig(eta=cfg["train"]["eta"], epochs=epochs, retain_grads=True)
    rows, crows, per_task = [], [], []
    for task in tasks:
        traj = finetune(base, task, tcfg)
        dom = grad_dominance(traj)
        cm = cosine_matrix(traj.grads)
        first = cm.matrix[0]
        gate = first[1:min(COSINE_GATE_EPOCHS, epochs)]
        per_task.append({
            "task_id": task.task_id, "normalized": dom, "argmax_epoch": int(np.argmax(dom)) + 1,
            "epoch1_is_max": bool(np.argmax(dom) == 0), "cos_to_first": first,
            "min_cos_first_epochs": float(np.min(gate)) if gate.size else 1.0,
            "undefined_rows": cm.undefined_rows,
        })
        for j in range(epochs):
            rows.append([task.task_id, j + 1, traj.grad_norms[j], dom[j], first[j]])
            for i in range(epochs):
                crows.append([task.task_id, i + 1, j + 1, cm.matrix[i, j]])
    mins = [p["min_cos_first_epochs"] for p in per_task]
    art.json["dominance"] = {
        "epochs": epochs, "eta": cfg["train"]["eta"], "tasks": per_task,
        "epoch1_max_count": sum(p["epoch1_is_max"] for p in per_task),
        "cosine_gate_epochs": COSINE_GATE_EPOCHS,
        "min_cos_first_epochs": float(min(mins)),
        "cosine_report_threshold": COSINE_REPORT_THRESHOLD,
        "tasks_above_report_threshold": sum(m > COSINE_REPORT_THRESHOLD for m in mins),
    }
    art.table("dominance", rows)
    art.table("cosine", crows)
    return art


def run_horizon(cfg):
    art = Artifacts("horizon")
    tasks = family(cfg)
    base = base_model(cfg)
    tr = cfg["train"]
    tcfg = TrainConfig(eta=tr["eta"], convergence_grad_tol=tr["convergence_tol"],
                       max_epochs_converged=tr["max_epochs"])
    rep = merge_horizon_experiment(base, tasks, tcfg, cfg["analysis"]["alpha_sweep"])
    rows, arms = [], {}
    for arm in (rep.one_epoch, rep.converged):
        arms[arm.name] = {
            "epochs": arm.epochs, "stop_reasons": arm.stop_reasons,
            "best_alpha": arm.best_alpha, "best_mean": arm.best_mean,
            "best_per_task": arm.best_per_task,
            "per_alpha": {_akey(a): {"per_task": v[0], "mean": v[1]} for a, v in arm.per_alpha.items()},
        }
        for a, (accs, _) in arm.per_alpha.items():
            rows += [[arm.name, a, t.task_id, acc] for t, acc in zip(tasks, accs)]
    art.json["horizon"] = {"T": len(tasks), "alpha_grid": rep.alpha_grid, "arms": arms,
                           "single_task_accuracy": rep.single_task_accuracy,
                           "gap_one_minus_converged": rep.gap}
    art.table("horizon", rows)
    return art


def run_pca(cfg):
    art = Artifacts("pca")
    tasks = family(cfg)
    base = base_model(cfg)
    tr = cfg["train"]
    rounds, k = cfg["analysis"]["pca_rounds"], tr["k"]
    ita = iterative_ta(base, tasks, rounds, k, tr["alpha"], tr["eta"])
    mt = train_multitask(base, tasks, TrainConfig(eta=tr["eta"], alpha=tr["alpha"], epochs=rounds * k))
    mt_pts = mt.checkpoints[::k]
    stack = list(ita.checkpoints) + list(mt_pts)
    res = pca_project(stack)
    n_ita = len(ita.checkpoints)
    labels = [("iterative_ta", i) for i in range(n_ita)] + [("multitask", i) for i in range(len(mt_pts))]
    art.json["pca"] = {
        "rounds": rounds, "epochs_per_round": k, "alpha": tr["alpha"], "eta": tr["eta"],
        "series": [s for s, _ in labels], "points": res.points,
        "explained_variance": list(res.explained_variance), "rank_deficient": res.rank_deficient,
        "components": res.components, "mean": res.mean,
        "checkpoints": [np.asarray(c).tolist() for c in stack],
        "round_gap_norms": [float(np.linalg.norm(a - b)) for a, b in zip(ita.checkpoints, mt_pts)],
    }
    art.table("pca", [[s, i, p[0], p[1]] for (s, i), p in zip(labels, res.points)])
    return art


RUNNERS = {
    "gen-tasks": run_gen_tasks,
    "finetune": run_finetune,
    "merge": run_merge,
    "gap-scan": run_gap_scan,
    "bounds": run_bounds,
    "dominance": run_dominance,
    "horizon": run_horizon,
    "pca": run_pca,
}


def backend_name():
    return kernels.BACKEND
