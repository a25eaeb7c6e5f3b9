"""Step-size scans: how fast task arithmetic and multitask GD separate.

``gap_scan`` measures ``theta_TA^(k) - theta_MT^(k)`` over a grid of step
sizes, subtracts each candidate curvature correction, and fits log-log
slopes. ``lemma_scan`` does the same per task for the single-task vs
multitask distance, and ``first_order_scan`` checks the first-order
description of the merged displacement.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from tavlab.merging import (
    CurvatureTermConfig, _GradCache, _p_series, candidate_configs, coefficient_C_raw,
    curvature_s, merge_ta, task_vector,
)
from tavlab.parallel import ordered_map
from tavlab.trainer import TrainConfig, TrainingDivergence, finetune_all, train_multitask

NOISE_FLOOR = 1e-13
TARGET_ORDER = 3.0


def default_eta_grid(start=1e-2, points=6, ratio=0.5):
    return [start * ratio ** i for i in range(points)]


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r2: float
    used: int
    excluded: tuple = ()


def fit_order(etas, norms, floor=0.0):
    """Least squares of ``log norm`` on ``log eta``.

    Points with ``norm <= floor`` (zeros by default) are excluded and their
    indices reported.
    """
    etas = np.asarray(etas, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    keep = np.isfinite(norms) & (norms > floor) & (etas > 0)
    excluded = tuple(int(i) for i in np.flatnonzero(~keep))
    if keep.sum() < 2:
        raise ValueError("fewer than 2 usable points")
    x, y = np.log(etas[keep]), np.log(norms[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([slope, intercept])
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r2, int(keep.sum()), excluded)


@dataclass
class GapReport:
    k: int
    alpha: float
    eta_grid: list
    gap_norms: list
    c_norms: list
    corrected: dict          # candidate label -> residual norm per eta
    raw_fit: OrderFit = None
    corrected_fits: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)   # label -> config dict
    selected_config: str = None
    equivalent_configs: list = field(default_factory=list)  # same factor at this alpha
    appendix_anchor_residuals: list = None
    appendix_anchor_fit: OrderFit = None
    dropped: list = field(default_factory=list)      # (eta, reason)

    @property
    def selected(self):
        return CurvatureTermConfig(**self.candidates[self.selected_config])


def _select(fits, order):
    """Candidate whose slope is nearest ``TARGET_ORDER``; first wins ties."""
    best, best_d = None, math.inf
    for label in order:
        f = fits.get(label)
        if f is None:
            continue
        d = abs(f.slope - TARGET_ORDER)
        if d < best_d - 1e-12:
            best, best_d = label, d
    return best


def _gap_point(base, tasks, k, alpha, eta):
    cfg = TrainConfig(eta=eta, alpha=alpha, epochs=k)
    vectors = [task_vector(tr) for tr in finetune_all(base, tasks, cfg)]
    ta = merge_ta(base, vectors, alpha).params
    mt = train_multitask(base, tasks, cfg)
    gap = ta - mt.final
    if not np.all(np.isfinite(gap)):
        raise TrainingDivergence(k, float("nan"))
    h = k - 2
    arch = base.arch
    c_main = coefficient_C_raw(arch, mt.checkpoints, tasks, alpha, h, "main_text")
    c_app = coefficient_C_raw(arch, mt.checkpoints, tasks, alpha, h, "appendix")
    return gap, c_main, c_app


def gap_scan(base, tasks, k, alpha, eta_grid, candidates=None):
    """Fit the order of ``||theta_TA^(k) - theta_MT^(k)||`` in ``eta``.

    For every candidate configuration the residual
    ``||gap - eta^2/2 * factor * C||`` is fitted too, and the candidate with
    slope nearest 3 is selected. Runs that diverge are dropped and listed.
    """
    etas = list(eta_grid)
    if len(etas) < 2 or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("eta grid must be strictly decreasing with at least 2 points")
    candidates = candidates or candidate_configs("main_text")

    def run(eta):
        try:
            return _gap_point(base, tasks, k, alpha, eta)
        except TrainingDivergence as exc:
            return exc

    results = ordered_map(run, etas)
    report = GapReport(k, alpha, [], [], [], {c.label(): [] for c in candidates},
                       candidates={c.label(): c.to_dict() for c in candidates})
    app_points = []
    for eta, res in zip(etas, results):
        if isinstance(res, Exception):
            report.dropped.append((eta, str(res)))
            continue
        gap, c_main, c_app = res
        report.eta_grid.append(eta)
        report.gap_norms.append(float(np.linalg.norm(gap)))
        report.c_norms.append(float(np.linalg.norm(c_main)))
        for c in candidates:
            corr = 0.5 * eta ** 2 * c.factor(alpha) * c_main
            report.corrected[c.label()].append(float(np.linalg.norm(gap - corr)))
        app_points.append((eta, gap, c_app))

    if len(report.eta_grid) < 2:
        raise ValueError("fewer than 2 finite runs in the eta grid")
    report.raw_fit = _safe_fit(report.eta_grid, report.gap_norms)
    for label, norms in report.corrected.items():
        report.corrected_fits[label] = _safe_fit(report.eta_grid, norms)
    report.selected_config = _select(report.corrected_fits, [c.label() for c in candidates])

    if report.selected_config is not None:
        sel = report.selected
        report.equivalent_configs = [
            c.label() for c in candidates
            if c.label() != report.selected_config and c.factor(alpha) == sel.factor(alpha)]
        app = CurvatureTermConfig("appendix", sel.sign_factor, sel.alpha_factor, sel.taylor_scale)
        report.appendix_anchor_residuals = [
            float(np.linalg.norm(gap - 0.5 * eta ** 2 * app.factor(alpha) * c_app))
            for eta, gap, c_app in app_points]
        report.appendix_anchor_fit = _safe_fit(report.eta_grid, report.appendix_anchor_residuals)
    return report


def _safe_fit(etas, norms):
    try:
        return fit_order(etas, norms, floor=NOISE_FLOOR)
    except ValueError:
        return None


@dataclass
class LemmaReport:
    m: int
    alpha: float
    eta_grid: list
    linear_residuals: dict      # task index -> ||d - eta p^m|| per eta
    corrected_residuals: dict   # scale -> task index -> ||d - eta p^m + eta^2/2 * scale * s^{m-1}||
    linear_fits: dict = field(default_factory=dict)
    corrected_fits: dict = field(default_factory=dict)
    selected_scale: float = None
    anchor: str = "main_text"


def lemma_scan(base, tasks, m, alpha, eta_grid, anchor="main_text", scales=(1.0, 2.0)):
    """Per-task distance ``theta_t^(m+1) - theta_MT^(m+1)`` against ``eta p_t^m``
    and its curvature-corrected form."""
    if m < 1:
        raise ValueError("m must be >= 1")
    arch = base.arch
    T = len(tasks)
    report = LemmaReport(m, alpha, list(eta_grid),
                         {t: [] for t in range(T)},
                         {s: {t: [] for t in range(T)} for s in scales}, anchor=anchor)

    def run(eta):
        cfg = TrainConfig(eta=eta, alpha=alpha, epochs=m + 1)
        singles = finetune_all(base, tasks, cfg)
        mt = train_multitask(base, tasks, cfg)
        cache = _GradCache(arch, mt.checkpoints, tasks)
        cc = CurvatureTermConfig(hessian_anchor=anchor)
        out = []
        for t in range(T):
            d = singles[t].final - mt.final
            p = _p_series(t, arch, mt.checkpoints, tasks, alpha, m, cache)[-1]
            s = curvature_s(t, arch, mt.checkpoints, tasks, alpha, m - 1, cc, cache)
            lin = d - eta * p
            out.append((float(np.linalg.norm(lin)),
                        {sc: float(np.linalg.norm(lin + 0.5 * eta ** 2 * sc * s)) for sc in scales}))
        return out

    for per_task in ordered_map(run, report.eta_grid):
        for t, (lin, corr) in enumerate(per_task):
            report.linear_residuals[t].append(lin)
            for sc in scales:
                report.corrected_residuals[sc][t].append(corr[sc])

    for t in range(T):
        report.linear_fits[t] = _safe_fit(report.eta_grid, report.linear_residuals[t])
    best, best_d = None, math.inf
    for sc in scales:
        report.corrected_fits[sc] = {
            t: _safe_fit(report.eta_grid, report.corrected_residuals[sc][t]) for t in range(T)}
        slopes = [f.slope for f in report.corrected_fits[sc].values() if f is not None]
        if slopes:
            d = max(abs(s - TARGET_ORDER) for s in slopes)
            if d < best_d - 1e-12:
                best, best_d = sc, d
    report.selected_scale = best
    return report


@dataclass
class FirstOrderReport:
    k: int
    alpha: float
    eta_grid: list
    residuals: list
    fit: OrderFit = None


def first_order_scan(base, tasks, k, alpha, eta_grid):
    """``||alpha * (-eta sum_t sum_j grad L_t(theta_MT^(j))) - (theta_TA^(k) - theta_base)||``."""

    def run(eta):
        cfg = TrainConfig(eta=eta, alpha=alpha, epochs=k)
        vectors = [task_vector(tr) for tr in finetune_all(base, tasks, cfg)]
        ta = merge_ta(base, vectors, alpha).params
        mt = train_multitask(base, tasks, cfg)
        cache = _GradCache(base.arch, mt.checkpoints, tasks)
        lin = np.zeros(base.arch.param_count)
        for t in range(len(tasks)):
            for j in range(k):
                lin = lin + cache(j)[t]
        return float(np.linalg.norm(alpha * (-eta * lin) - (ta - base.params)))

    rep = FirstOrderReport(k, alpha, list(eta_grid), ordered_map(run, list(eta_grid)))
    rep.fit = _safe_fit(rep.eta_grid, rep.residuals)
    return rep
