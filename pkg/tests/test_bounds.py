import math

import numpy as np
import pytest

from tavlab.bounds import layer_spectral_norms, parameter_bounds, theoretical_bounds
from tavlab.network import MlpArchitecture, init_model
from tavlab.taskgen import make_task_family
from tavlab.trainer import TrainConfig, finetune_all, train_multitask


def _run(act, alpha=0.5, h=1, M_x=1.0, T=3):
    arch = MlpArchitecture((4, 6, 3), act)
    base = init_model(arch, 1)
    tasks = make_task_family(2, T, 30, 4, 3, M_x, 4.0)
    cfg = TrainConfig(eta=0.1, alpha=alpha, epochs=h + 2)
    mt = train_multitask(base, tasks, cfg)
    return parameter_bounds(mt, tasks, alpha, h, finetune_all(base, tasks, cfg))


def test_closed_forms():
    arch = MlpArchitecture((4, 6, 3), "tanh")
    b = theoretical_bounds(arch, [2.0, 3.0], 1.5, 4, 0.5, 0)
    assert b["Pi"] == 6.0
    assert b["binom(h+2,2)"] == 1
    assert b["G_max"] == pytest.approx(math.sqrt(2) * 1.5 * 6.0)
    gamma = 4 / (3 * math.sqrt(3))
    assert b["H_max"] == pytest.approx(2 * gamma * 1.5 ** 2 * 36.0)
    # h = 0: C_bound = T |alpha T - 1| H G
    assert b["C_bound_|aT-1|"] == pytest.approx(4 * 1.0 * b["H_max"] * b["G_max"])
    assert b["C_bound_|a(T+1)-1|"] == pytest.approx(4 * 1.5 * b["H_max"] * b["G_max"])
    assert theoretical_bounds(arch, [1, 1], 1, 3, 0.5, 2)["binom(h+2,2)"] == 6


def test_relu_uses_gamma_zero_and_both_variants():
    arch = MlpArchitecture((4, 6, 3), "relu")
    b = theoretical_bounds(arch, [2.0, 3.0], 1.0, 3, 0.5, 1)
    assert b["H_max"] == 0.0
    assert b["H_max_relu_appendix"] == pytest.approx(0.5 * 36.0)
    assert b["H_max_relu_statement"] == pytest.approx(0.5 * math.sqrt(2) * 216.0)
    assert {"C_bound_relu_statement_|aT-1|", "C_bound_relu_appendix_|a(T+1)-1|"} <= set(b)


def test_spectral_norms_per_layer():
    arch = MlpArchitecture((4, 6, 3))
    m = init_model(arch, 0)
    s = layer_spectral_norms(arch, m.params)
    for W, v in zip(m.weights, s):
        assert v == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-8)


def test_tanh_certified():
    rep = _run("tanh")
    assert rep.violations == []
    assert 0 < rep.ratios["G_emp/G_max"] <= 1
    assert rep.max_logits_hessian_eig <= 0.5 + 1e-12
    assert rep.hessian_asymmetry < 1e-9


def test_relu_certified():
    rep = _run("relu")
    assert rep.violations == []


def test_natural_alpha_degenerate_bound():
    rep = _run("tanh", alpha=1 / 3)
    assert rep.theoretical["C_bound_|aT-1|"] == 0.0
    assert rep.measured["C_norm"] > 0
    assert "C_norm/C_bound_|aT-1|" in rep.violations
    assert any("alpha*T == 1" in n for n in rep.notes)


def test_sigmoid_hessian_bound_fails_at_unit_inputs():
    # sigma(0) = 1/2 keeps hidden activations away from zero, which the
    # Hessian bound's chain of norm inequalities does not allow for
    rep = _run("sigmoid")
    assert "H_emp/H_max" in rep.violations
    # on this small net the gradient bound is exceeded as well
    assert rep.ratios["G_emp/G_max"] > 1


def test_bias_rejected():
    arch = MlpArchitecture((4, 6, 3), "tanh", bias=True)
    tasks = make_task_family(2, 2, 10, 4, 3, 1.0, 4.0)
    mt = train_multitask(init_model(arch, 0), tasks, TrainConfig(eta=0.1, epochs=2))
    with pytest.raises(ValueError, match="bias"):
        parameter_bounds(mt, tasks, 0.5, 0)
