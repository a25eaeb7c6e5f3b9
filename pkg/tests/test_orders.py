import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tavlab.network import MlpArchitecture, init_model
from tavlab.orders import default_eta_grid, first_order_scan, fit_order, gap_scan, lemma_scan
from tavlab.taskgen import make_task_family


@pytest.fixture(scope="module")
def setup():
    arch = MlpArchitecture((4, 6, 3), "tanh")
    return init_model(arch, 1), make_task_family(2, 3, 30, 4, 3, 1.0, 4.0)


def test_default_grid():
    g = default_eta_grid()
    assert len(g) == 6 and g[0] == 1e-2 and g[-1] == pytest.approx(3.125e-4)


def test_fit_exact_powers():
    etas = np.array(default_eta_grid())
    assert abs(fit_order(etas, 3.0 * etas ** 2).slope - 2.0) <= 1e-9
    assert fit_order(etas, 0.5 * etas ** 3).slope == pytest.approx(3.0, abs=1e-9)


def test_fit_mixed_series():
    etas = np.array(default_eta_grid())
    f = fit_order(etas, 1.0 * etas ** 2 + 1.0 * etas ** 3)
    assert 2.0 < f.slope < 2.1


@given(st.floats(0.5, 4.0), st.floats(1e-6, 1e3))
def test_fit_recovers_power(p, c):
    etas = np.array(default_eta_grid())
    assert fit_order(etas, c * etas ** p).slope == pytest.approx(p, abs=1e-8)


def test_fit_excludes_zeros():
    etas = np.array(default_eta_grid())
    norms = etas ** 2
    norms[2] = 0.0
    f = fit_order(etas, norms)
    assert f.excluded == (2,) and f.used == 5
    with pytest.raises(ValueError, match="fewer than 2"):
        fit_order(etas[:2], [0.0, 1.0])


def test_epoch_one_gaps_vanish(setup):
    base, tasks = setup
    rep = gap_scan(base, tasks, 1, 0.5, default_eta_grid())
    assert max(rep.gap_norms) <= 1e-12
    assert rep.raw_fit is None  # everything below the noise floor


def test_gap_scan_orders(setup):
    base, tasks = setup
    rep = gap_scan(base, tasks, 3, 1 / 3, default_eta_grid())
    assert 1.9 <= rep.raw_fit.slope <= 2.1
    assert rep.selected_config == "main_text:-alphax2"
    assert 2.6 <= rep.corrected_fits[rep.selected_config].slope <= 3.4
    assert 2.6 <= rep.appendix_anchor_fit.slope <= 3.4


def test_gap_scan_records_equivalent_candidates(setup):
    base, tasks = setup
    rep = gap_scan(base, tasks, 3, 0.5, default_eta_grid())
    both = {rep.selected_config, *rep.equivalent_configs}
    assert {"main_text:-1x1", "main_text:-alphax2"} <= both


def test_gap_scan_grid_checks(setup):
    base, tasks = setup
    with pytest.raises(ValueError):
        gap_scan(base, tasks, 2, 0.5, [1e-3, 1e-2])
    with pytest.raises(ValueError):
        gap_scan(base, tasks, 2, 0.5, [1e-3])


def test_gap_scan_drops_divergent_eta():
    arch = MlpArchitecture((4, 6, 3), "identity")
    base = init_model(arch, 0, scale=30.0)
    tasks = make_task_family(2, 2, 10, 4, 3, 1e150, 4.0)
    rep = gap_scan(base, tasks, 3, 0.5, [1e150, 1e-3, 5e-4, 2.5e-4])
    assert rep.dropped and rep.dropped[0][0] == 1e150
    assert rep.eta_grid == [1e-3, 5e-4, 2.5e-4]


def test_lemma_scan(setup):
    base, tasks = setup
    rep = lemma_scan(base, tasks, 1, 0.5, default_eta_grid())
    for f in rep.linear_fits.values():
        assert 1.9 <= f.slope <= 2.1
    assert rep.selected_scale == 2.0
    for f in rep.corrected_fits[2.0].values():
        assert 2.6 <= f.slope <= 3.4
    with pytest.raises(ValueError):
        lemma_scan(base, tasks, 0, 0.5, default_eta_grid())


def test_first_order_scan(setup):
    base, tasks = setup
    rep = first_order_scan(base, tasks, 3, 0.5, default_eta_grid())
    assert rep.fit.slope == pytest.approx(2.0, abs=0.1)
