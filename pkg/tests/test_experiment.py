import numpy as np
import pytest

from multifid.errors import ConfigError
from multifid.experiment import (
    load_config,
    parse_config,
    run_experiment,
    _aggregate,
)
from multifid.report import read_results


def _base_doc(**over):
    doc = {
        "problem": "illustrative",
        "models": ["gp-hf", "bc"],
        "hf_sizes": [5],
        "lf_size": 15,
        "repetitions": 2,
        "seed": 1,
        "test_size": 100,
        "record_timing": False,
    }
    doc.update(over)
    return doc


def test_parse_valid_config():
    cfg = parse_config(_base_doc())
    assert cfg.problem == "illustrative"
    assert cfg.models == ["gp-hf", "bc"]


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(not_a_key=1))


def test_unknown_train_key_rejected():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(train={"iterationz": 10}))


def test_bad_model_name_rejected():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(models=["gp-hf", "nope"]))


def test_empty_models_rejected():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(models=[]))


def test_shared_space_models_rejected_on_mismatched_dims():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(problem="problem1", models=["ar1"]))
    with pytest.raises(ConfigError):
        parse_config(_base_doc(problem="problem2", models=["mf-dgp"]))


def test_dataset_backed_problem_requires_csv():
    with pytest.raises(ConfigError):
        parse_config(_base_doc(problem="beam", models=["gp-hf"]))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_run_experiment_row_counting(tmp_path):
    cfg = parse_config(_base_doc(repetitions=3, models=["gp-hf", "bc"]))
    info = run_experiment(cfg, tmp_path)
    assert info["total"] == 6 and info["failed"] == 0
    rows = read_results(info["results"])
    assert len(rows) == 6
    # one row per (model x size x rep), canonical ordering
    keys = [(r["model"], r["hf_size"], r["rep"]) for r in rows]
    assert keys == sorted(keys)


def test_run_experiment_determinism(tmp_path):
    cfg = parse_config(_base_doc())
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    assert a == b


def test_rep_seed_derivation(tmp_path):
    cfg = parse_config(_base_doc(repetitions=2, seed=10))
    info = run_experiment(cfg, tmp_path)
    rows = read_results(info["results"])
    assert {r["seed"] for r in rows if r["rep"] == 1} == {11}
    assert {r["seed"] for r in rows if r["rep"] == 2} == {12}


def test_summary_matches_independent_aggregation(tmp_path):
    cfg = parse_config(_base_doc(repetitions=3))
    info = run_experiment(cfg, tmp_path)
    rows = read_results(info["results"])
    # independent recomputation
    for entry in _aggregate(rows):
        sel = [
            r["rmse"]
            for r in rows
            if r["model"] == entry["model"] and r["hf_size"] == entry["hf_size"]
        ]
        assert entry["rmse_mean"] == pytest.approx(np.mean(sel), abs=1e-12)
        expected_std = np.std(sel, ddof=1) if len(sel) > 1 else 0.0
        assert entry["rmse_std"] == pytest.approx(expected_std, abs=1e-12)
    # and the emitted summary.csv agrees
    lines = (tmp_path / "summary.csv").read_text().strip().splitlines()[1:]
    for line, entry in zip(lines, _aggregate(rows)):
        parts = line.split(",")
        assert float(parts[7]) == pytest.approx(entry["rmse_mean"], abs=1e-12)


def test_imc_model_runs(tmp_path):
    cfg = parse_config(_base_doc(models=["imc"], repetitions=1))
    info = run_experiment(cfg, tmp_path)
    assert info["failed"] == 0


def test_custom_csv_problem_requires_bounds():
    with pytest.raises(ConfigError):
        parse_config(
            _base_doc(problem=None, csv={"lf": "a.csv", "hf": "b.csv", "nominal": "n.csv"})
        )


def test_cell_budget_graceful_skip(tmp_path):
    cfg = parse_config(
        _base_doc(repetitions=3, models=["gp-hf"], cell_budget_seconds=0.0,
                  record_timing=True)
    )
    info = run_experiment(cfg, tmp_path)
    rows = read_results(info["results"])
    # first cell runs, later cells of the over-budget model are skipped
    assert np.isfinite(rows[0]["rmse"])
    assert all(r["warnings"] == "skipped-budget" for r in rows[1:])
    assert info["failed"] == 0  # budget skips are not numerical failures
