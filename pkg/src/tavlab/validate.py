"""Re-check stored artifacts: file hashes, then the invariants each
subcommand's outputs must satisfy, computed from the stored numbers.

Parameter-bound violations are findings, not validator failures; what the
validator checks for bounds is that the stored ratios and violation lists
are consistent with the stored measured and theoretical values.
"""
import glob
import math
import os
from dataclasses import dataclass

import numpy as np

from tavlab import io
from tavlab.network import MlpArchitecture
from tavlab.orders import NOISE_FLOOR, TARGET_ORDER, fit_order
from tavlab.taskgen import task_from_dict
from tavlab.trainer import Trajectory, replay


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _f(x):
    return io.unplain(x)


def _close(a, b, rel=1e-12, abs_=0.0):
    a, b = _f(a), _f(b)
    if isinstance(a, float) and isinstance(b, float) and (math.isinf(a) or math.isinf(b)):
        return a == b
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_)


def _load(d, stem):
    path = os.path.join(d, stem + ".json")
    try:
        return io.read_json(path)
    except ValueError as exc:
        raise ValueError(f"{os.path.basename(path)}: {exc}") from None


def _family_from(config):
    from tavlab.experiments import family
    return family(config)


def check_gen_tasks(d, man):
    out = []
    summary = _load(d, "tasks")
    for entry in summary["tasks"]:
        name = f"task_{entry['task_id']:02d}"
        try:
            task = task_from_dict(_load(d, name))
            peak = float(np.linalg.norm(task.inputs, axis=1).max())
            ok = _close(peak, entry["max_norm"], rel=0, abs_=0.0)
            out.append(Check(f"{name}/norm_bound", ok, "" if ok else "summary max_norm mismatch"))
        except (ValueError, KeyError) as exc:
            out.append(Check(f"{name}/norm_bound", False, str(exc)))
    return out


def check_finetune(d, man):
    out = []
    tasks = _family_from(man["config"])
    by_id = {t.task_id: t for t in tasks}
    for path in sorted(glob.glob(os.path.join(d, "traj_*.json"))):
        stem = os.path.basename(path)[:-5]
        data = _load(d, stem)
        arch = MlpArchitecture.from_dict(data["arch"])
        traj = Trajectory(arch, data["step"], [np.asarray(c) for c in data["checkpoints"]],
                          task_ids=tuple(data["task_ids"]), kind=data["kind"])
        sub = [by_id[i] for i in traj.task_ids]
        dev = replay(traj, sub)
        scale = 1.0 + max(float(np.max(np.abs(c))) for c in traj.checkpoints)
        out.append(Check(f"{stem}/replay", dev <= 1e-12 * scale, f"max deviation {dev:.3e}"))
        ok = all(math.isfinite(_f(x)) for x in data["losses"])
        out.append(Check(f"{stem}/finite_losses", ok))
    err = _load(d, "finetune")["one_epoch_vector_max_abs_error"]
    out.append(Check("one_epoch_vector", err <= 1e-13, f"max abs error {err:.3e}"))
    return out


def check_merge(d, man):
    m = _load(d, "merge")
    tol = m["epoch1_tolerance"]
    out = []
    for a, g in m["epoch1_gap"].items():
        out.append(Check(f"epoch1_equality[alpha={a}]", g <= tol, f"{g:.3e} (tol {tol:.3e})"))
    for name, accs in m["accuracy"].items():
        ok = all(0.0 <= x <= 1.0 for x in accs) and _close(np.mean(accs), m["mean_accuracy"][name])
        out.append(Check(f"accuracy[{name}]", ok))
    return out


def _fit_matches(name, etas, norms, stored):
    if stored is None:
        return Check(name, True, "no fit stored")
    try:
        f = fit_order(etas, [_f(x) for x in norms], floor=NOISE_FLOOR)
    except ValueError as exc:
        return Check(name, False, str(exc))
    ok = (abs(f.slope - stored["slope"]) <= 1e-9 and abs(f.intercept - stored["intercept"]) <= 1e-9
          and abs(f.r2 - stored["r2"]) <= 1e-9 and f.used == stored["used"])
    return Check(name, ok, f"slope {f.slope:.4f} vs stored {stored['slope']:.4f}")


def check_gap_scan(d, man):
    out = []
    for rep in _load(d, "gap_scan")["reports"]:
        a = rep["alpha"]
        etas = rep["eta_grid"]
        dec = all(y < x for x, y in zip(etas, etas[1:]))
        out.append(Check(f"alpha={a}/grid_decreasing", dec))
        out.append(_fit_matches(f"alpha={a}/raw_slope", etas, rep["gap_norms"], rep["raw_fit"]))
        for label, norms in rep["corrected"].items():
            out.append(_fit_matches(f"alpha={a}/{label}", etas, norms, rep["corrected_fits"][label]))
        fits = rep["corrected_fits"]
        usable = [(abs(f["slope"] - TARGET_ORDER), i, lab)
                  for i, (lab, f) in enumerate(fits.items()) if f is not None]
        best = min(usable)[2] if usable else None
        out.append(Check(f"alpha={a}/selection", best == rep["selected_config"],
                         f"stored {rep['selected_config']}, recomputed {best}"))
    for rep in _load(d, "lemma")["reports"]:
        for t, norms in rep["linear_residuals"].items():
            out.append(_fit_matches(f"lemma m={rep['m']}/task {t}/linear", rep["eta_grid"], norms,
                                    rep["linear_fits"][t]))
    return out


def check_bounds(d, man):
    out = []
    for path in sorted(glob.glob(os.path.join(d, "bounds_*.json"))):
        rep = _load(d, os.path.basename(path)[:-5])
        act = rep["activation"]
        ok, bad = True, []
        for label, ratio in rep["ratios"].items():
            m_key, b_key = label.split("/", 1)
            value = _f(rep["measured"][m_key])
            bound = _f(rep["theoretical"].get(b_key, rep["measured"].get(b_key)))
            expect = value / bound if bound > 0 else (0.0 if value == 0 else math.inf)
            if not _close(expect, ratio):
                ok = False
                bad.append(label)
            flagged = label in rep["violations"]
            if not b_key.startswith("C_bound_emp") and flagged != (_f(ratio) > 1.0 + 1e-9):
                ok = False
                bad.append(label + " (violation flag)")
        out.append(Check(f"{act}/ratios_consistent", ok, ", ".join(bad)))
        eig = rep["max_logits_hessian_eig"]
        out.append(Check(f"{act}/logits_hessian<=0.5", eig <= 0.5 + 1e-12, f"{eig:.6f}"))
        asym = rep["hessian_asymmetry"]
        out.append(Check(f"{act}/hessian_symmetric", asym <= 1e-9, f"{asym:.2e}"))
        findings = [v for v in rep["violations"]]
        out.append(Check(f"{act}/bound_findings", True,
                         "none" if not findings else "violated: " + ", ".join(findings)))
    return out


def check_dominance(d, man):
    out = []
    dom = _load(d, "dominance")
    header, rows = io.read_csv(os.path.join(d, "cosine.csv"))
    mats = {}
    for tid, i, j, c in rows:
        mats.setdefault(int(tid), {})[(int(i), int(j))] = float(c)
    for p in dom["tasks"]:
        s = math.fsum(_f(x) for x in p["normalized"])
        out.append(Check(f"task {p['task_id']}/sum_to_one", abs(s - 1.0) <= 1e-12, f"{s!r}"))
        m = mats.get(p["task_id"], {})
        sym = all(m[(i, j)] == m[(j, i)] for (i, j) in m if not math.isnan(m[(i, j)]))
        diag = all(m[(i, i)] == 1.0 for (i, j) in m
                   if i == j and (i - 1) not in p["undefined_rows"])
        out.append(Check(f"task {p['task_id']}/cosine_symmetric_unit_diag", bool(m) and sym and diag))
    return out


def check_horizon(d, man):
    h = _load(d, "horizon")
    out = []
    T = h["T"]
    out.append(Check("alpha_grid_has_1/T", any(math.isclose(a, 1.0 / T) for a in h["alpha_grid"])))
    for name, arm in h["arms"].items():
        means = {a: v["mean"] for a, v in arm["per_alpha"].items()}
        ok = all(_close(np.mean(v["per_task"]), v["mean"]) for v in arm["per_alpha"].values())
        ok = ok and _close(max(means.values()), arm["best_mean"])
        out.append(Check(f"{name}/best_alpha_consistent", ok))
    return out


def check_pca(d, man):
    p = _load(d, "pca")
    X = np.asarray(p["checkpoints"], dtype=np.float64)
    comps = np.asarray(p["components"], dtype=np.float64)
    pts = np.asarray(p["points"], dtype=np.float64)
    proj = (X - np.asarray(p["mean"])) @ comps.T
    out = [Check("projection_matches", np.allclose(proj, pts, rtol=0, atol=1e-9))]
    worst = -math.inf
    n = X.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            worst = max(worst, np.linalg.norm(pts[i] - pts[j]) - np.linalg.norm(X[i] - X[j]))
    out.append(Check("distances_contract", worst <= 1e-9, f"max excess {worst:.2e}"))
    return out


CHECKS = {
    "gen-tasks": check_gen_tasks,
    "finetune": check_finetune,
    "merge": check_merge,
    "gap-scan": check_gap_scan,
    "bounds": check_bounds,
    "dominance": check_dominance,
    "horizon": check_horizon,
    "pca": check_pca,
}


def validate_dir(artifact_dir):
    """All checks for every manifest under ``artifact_dir``."""
    manifests = sorted(glob.glob(os.path.join(artifact_dir, "**", io.MANIFEST), recursive=True))
    if not manifests:
        return [Check("artifacts", False, f"no artifacts in {artifact_dir}")]
    checks = []
    for mpath in manifests:
        d = os.path.dirname(mpath)
        rel = os.path.basename(os.path.normpath(d))
        try:
            man = io.read_json(mpath)
        except (OSError, ValueError) as exc:
            checks.append(Check(f"{rel}/manifest", False, f"{io.MANIFEST}: {exc}"))
            continue
        intact = True
        for name, digest in man["files"].items():
            path = os.path.join(d, name)
            if not os.path.exists(path):
                checks.append(Check(f"{rel}/{name}", False, "missing"))
                intact = False
            elif io.sha256(path) != digest:
                checks.append(Check(f"{rel}/{name}", False, "hash mismatch"))
                intact = False
        if intact:
            checks.append(Check(f"{rel}/hashes", True, f"{len(man['files'])} files"))
        fn = CHECKS.get(man.get("subcommand"))
        if fn is None:
            checks.append(Check(f"{rel}/subcommand", False, f"unknown {man.get('subcommand')!r}"))
            continue
        try:
            for c in fn(d, man):
                c.name = f"{man['subcommand']}/{c.name}"
                checks.append(c)
        except Exception as exc:  # corrupt content: report, keep going
            checks.append(Check(f"{man['subcommand']}/read", False, f"{type(exc).__name__}: {exc}"))
    return checks
