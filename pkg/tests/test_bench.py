import json
import math
from pathlib import Path

import numpy as np
import pytest

from onebit import orka
from onebit.bench import cli, presets, runner
from onebit.bench.presets import ExperimentConfig, effective_params


def test_nmse_examples():
    assert runner.nmse([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert runner.nmse([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert runner.nmse(np.array([[2.0]]), np.array([[1.0]])) == 1.0
    with pytest.raises(ValueError):
        runner.nmse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        runner.nmse([1.0], [0.0])


def test_fig1_checkpoints():
    cps = presets.fig1_checkpoints(10_000)
    assert cps[0] == 1 and cps[-1] == 10_000
    assert cps == sorted(set(cps))


GOLDEN = json.loads((Path(__file__).parent / "golden" / "presets.json").read_text())


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_preset_matches_golden(name):
    p = effective_params(ExperimentConfig(preset=name))
    for key, val in GOLDEN[name].items():
        got = p[key]
        assert (list(got) if isinstance(got, (list, tuple)) else got) == val, key


def test_fig1_arms_and_budget():
    p = effective_params(ExperimentConfig(preset="fig1"))
    assert p["arms"] == ["rka", "skm", "prskm", "block_skm"]
    assert p["sweep"][-1] == 10_000
    small = effective_params(ExperimentConfig(preset="fig1", solver_cfg={"max_iters": 100}))
    assert small["sweep"][-1] == 100


def test_overrides():
    p = effective_params(ExperimentConfig(preset="fig4a", noise_sigma=0.0, dims={"d": 50}))
    assert p["noise_sigma"] == 0.0 and p["d"] == 50
    q = effective_params(ExperimentConfig(preset="fig3a", log_base=3))
    assert q["sweep"] == [27.0, 81.0, 243.0, 729.0]
    with pytest.raises(ValueError):
        effective_params(ExperimentConfig(preset="fig4a", dims={"arms": ["x"]}))
    with pytest.raises(ValueError):
        effective_params(ExperimentConfig(preset="fig4a", solver="rka"))
    with pytest.raises(ValueError):
        effective_params(ExperimentConfig(preset="fig4a", log_base=2))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(preset="fig9")
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"preset": "fig1", "trails": 3})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "custom", "trials": 2, "seed": 4}))
    cfg = ExperimentConfig.from_json(path)
    assert cfg.trials == 2 and cfg.seed == 4
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(runner.WORKERS_ENV, raising=False)
    assert runner.resolve_workers() == 1
    monkeypatch.setenv(runner.WORKERS_ENV, "3")
    assert runner.resolve_workers() == 3
    assert runner.resolve_workers(2) == 2
    monkeypatch.setenv(runner.WORKERS_ENV, "many")
    with pytest.raises(ValueError):
        runner.resolve_workers()
    with pytest.raises(ValueError):
        runner.resolve_workers(0)


def _small(preset="custom", **kw):
    base = dict(preset=preset, trials=2, seed=3, solver_cfg={"max_iters": 300})
    base.update(kw)
    return ExperimentConfig(**base)


def test_custom_run_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    table = runner.run_experiment(_small(out=str(out)))
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(runner.CSV_COLUMNS)
    assert len(lines) == 3
    assert runner.summary_path(out).exists()
    assert table.exit_code == 0
    assert np.all(table.values("rka", 300) < 1.0)
    back = runner.SummaryTable.from_csv(out)
    assert back.median("rka", 300) == table.median("rka", 300)


def test_csv_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    runner.run_experiment(_small("fig1", out=str(a)))
    runner.run_experiment(_small("fig1", out=str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_worker_pool_matches_serial(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    runner.run_experiment(_small(trials=3, out=str(a)))
    runner.run_experiment(_small(trials=3, out=str(b), workers=2))
    assert a.read_bytes() == b.read_bytes()


def test_abort_sets_exit_code(monkeypatch):
    def boom(*args, **kwargs):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(orka, "orka_solve", boom)
    table = runner.run_experiment(_small())
    assert table.abort_fraction == 1.0
    assert table.exit_code == 1
    assert math.isnan(table.median("rka", 300))


def test_sparse_trial_runs():
    cfg = ExperimentConfig(
        preset="fig4a", trials=1, seed=1, dims={"sweep": [10]}, solver_cfg={"max_iters": 20}
    )
    table = runner.run_experiment(cfg)
    assert set(table.arms) == {"ht_orka", "st_orka", "biht"}
    assert all(np.isfinite(t.nmse) for t in table.trials)


def test_validate_fvp_concentrates():
    small = runner.validate_fvp("sparse", 100, trials=10, seed=0)
    large = runner.validate_fvp("sparse", 10_000, trials=10, seed=0)
    assert np.median([r.deviation for r in large]) < np.median([r.deviation for r in small])
    assert all(r.m_prime == 10_000 for r in large)
    with pytest.raises(ValueError):
        runner.validate_fvp("banded", 100)


def test_cli_run(tmp_path, capsys):
    out = tmp_path / "cli.csv"
    code = cli.main(["run", "--preset", "custom", "--trials", "2", "--seed", "1", "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert "rka" in capsys.readouterr().out


def test_cli_json_config_and_override(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "fig4b", "trials": 7, "noise_sigma": 0.2}))
    code = cli.main(["run", "--json-config", str(path), "--trials", "3", "--dump-params"])
    assert code == 0
    params = json.loads(capsys.readouterr().out)
    assert params["trials"] == 3
    assert params["noise_sigma"] == 0.2


def test_cli_bad_config(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "custom", "bogus": 1}))
    assert cli.main(["run", "--json-config", str(path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_validate_fvp(tmp_path, capsys):
    out = tmp_path / "fvp.csv"
    code = cli.main(["validate-fvp", "--set", "sparse", "--m-prime", "1000", "--trials", "3", "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 4
    assert "median deviation" in capsys.readouterr().out
