import json
import os

import pytest

from tavlab import cli, config, io
from tavlab.parallel import ordered_map, thread_count
from tavlab.validate import validate_dir

SMALL = {
    "schema_version": 1,
    "seed": 3,
    "arch": {"layer_dims": [4, 6, 3], "activation": "tanh"},
    "tasks": {"seed": 2, "T": 3, "n_t": 24, "K": 3, "M_x": 1.0, "separation": 4.0},
    "train": {"eta": 0.5, "alpha": 0.5, "k": 3, "convergence_tol": 1e-2, "max_epochs": 500},
    "analysis": {"eta_grid": [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4], "gap_alphas": [0.5],
                 "lemma_m": [1], "dominance_epochs": 5, "pca_rounds": 3,
                 "bound_activations": ["tanh"]},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    path = _write(tmp, SMALL)
    out = tmp / "out"
    assert cli.main(["all", "--config", path, "--outdir", str(out)]) == 0
    return path, out


def test_missing_field_exit_2(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL))
    del cfg["train"]["k"]
    assert cli.main(["merge", "--config", _write(tmp_path, cfg)]) == 2
    assert "train.k" in capsys.readouterr().err


def test_wrong_type_reports_path(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL))
    cfg["arch"]["layer_dims"] = [4, "six", 3]
    assert cli.main(["merge", "--config", _write(tmp_path, cfg)]) == 2
    assert "arch.layer_dims.1" in capsys.readouterr().err


def test_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  oops\n}')
    assert cli.main(["merge", "--config", str(path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_override_validated(tmp_path, capsys):
    assert cli.main(["merge", "--config", _write(tmp_path, SMALL), "--eta", "-1"]) == 2
    assert "train.eta" in capsys.readouterr().err


def test_overrides_applied(tmp_path):
    cfg = config.load(_write(tmp_path, SMALL), {"train.eta": 0.25, "seed": 9})
    assert cfg["train"]["eta"] == 0.25 and cfg["seed"] == 9
    assert cfg["analysis"]["h"] == 1


def test_hash_ignores_outdir():
    a = dict(SMALL, outdir="x")
    b = dict(SMALL, outdir="y")
    assert config.config_hash(a) == config.config_hash(b)
    assert config.config_hash(a) != config.config_hash(dict(SMALL, seed=4))


def test_layout_and_manifest(small_run):
    _, out = small_run
    for name in cli.ORDER:
        d = out / name
        man = io.read_json(d / "manifest.json")
        assert man["subcommand"] == name
        assert len(man["config_hash"]) == 64
        assert man["files"]
        for rel in man["files"]:
            assert rel.endswith((".json", ".csv"))


def test_csv_columns_frozen(small_run):
    from tavlab.experiments import COLUMNS
    _, out = small_run
    for key, cols in COLUMNS.items():
        header, _ = io.read_csv(out / (key + ".csv"))
        assert header == cols


def test_fresh_output_validates(small_run):
    _, out = small_run
    checks = validate_dir(str(out))
    assert checks and all(c.ok for c in checks), [c.line() for c in checks if not c.ok]


def test_rerun_is_byte_identical(small_run, tmp_path):
    path, out = small_run
    other = tmp_path / "again"
    assert cli.main(["all", "--config", path, "--outdir", str(other)]) == 0
    files = sorted(p.relative_to(out) for p in out.rglob("*.json"))
    assert files
    for rel in files:
        assert (out / rel).read_bytes() == (other / rel).read_bytes(), rel


def test_corrupted_gap_value(small_run, tmp_path):
    import shutil
    _, out = small_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    path = copy / "gap-scan" / "gap_scan.json"
    data = json.loads(path.read_text())
    data["reports"][0]["gap_norms"][2] *= 10.0
    path.write_text(json.dumps(data))
    checks = validate_dir(str(copy))
    failed = {c.name for c in checks if not c.ok}
    assert "gap-scan/gap_scan.json" in failed
    assert any(n.startswith("gap-scan/alpha=0.5/raw_slope") for n in failed)
    assert all(n.startswith("gap-scan") for n in failed)


def test_corrupt_json_names_file(small_run, tmp_path):
    import shutil
    _, out = small_run
    copy = tmp_path / "copy"
    shutil.copytree(out / "merge", copy / "merge")
    (copy / "merge" / "merge.json").write_text("{not json")
    lines = [c.line() for c in validate_dir(str(copy)) if not c.ok]
    assert any("merge.json" in line for line in lines)


def test_empty_directory(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path)]) == 1
    assert "no artifacts" in capsys.readouterr().out


def test_single_subcommand(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["dominance", "--config", _write(tmp_path, SMALL), "--outdir", str(out)]) == 0
    assert os.listdir(out) == ["dominance"]


def test_divergence_exit_code(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL))
    cfg["arch"]["activation"] = "identity"
    cfg["tasks"]["M_x"] = 1e150
    assert cli.main(["finetune", "--config", _write(tmp_path, cfg), "--eta", "1e150",
                     "--outdir", str(tmp_path / "o")]) == 3
    assert "finetune" in capsys.readouterr().err


def test_schema_is_packaged():
    assert config.schema()["properties"]["schema_version"]["const"] == 1


def test_ordered_map_keeps_order(monkeypatch):
    monkeypatch.setenv("TAVLAB_THREADS", "4")
    assert thread_count() == 4
    assert ordered_map(lambda x: x * x, range(50)) == [x * x for x in range(50)]
    monkeypatch.setenv("TAVLAB_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count()
