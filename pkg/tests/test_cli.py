"""End-to-end tests of the batch CLI: config validation, artifacts, cache
warm-start, sweeps, and byte-level determinism."""

import json

import pytest

from pcion import cli


BASE_CONFIG = {
    "stack": {"d_h_nm": 25.0, "d_l_nm": 50.0},
    "index_model": {"variant": "constant", "n": 1.3},
    "cutoff": {"lambda_ev": 1.2, "n_z": 8, "n_rho": 8, "refine": False},
}


def _write_config(tmp_path, name="config.json", **overrides):
    raw = json.loads(json.dumps(BASE_CONFIG))
    for key, value in overrides.items():
        raw[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


@pytest.fixture
def cache_env(tmp_path, monkeypatch):
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv("PCION_CACHE_DIR", str(cache_dir))
    return cache_dir


def _read_log(out):
    return [json.loads(line) for line in (out / "run_log.jsonl").read_text().splitlines()]


# ---------------------------------------------------------------------------
# configuration errors
# ---------------------------------------------------------------------------


def test_missing_config_file_exits_2(tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(out)])
    assert rc == cli.EXIT_CONFIG
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "config"


def test_invalid_json_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json", encoding="utf-8")
    rc = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == cli.EXIT_CONFIG


def test_config_field_validation(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict({"stack": {"d_h_nm": -1, "d_l_nm": 50},
                                 "index_model": {"variant": "constant", "n": 1.3},
                                 "cutoff": {"lambda_ev": 10}})
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict({"stack": {"d_h_nm": 25, "d_l_nm": 50},
                                 "index_model": {"n": 1.3},
                                 "cutoff": {"lambda_ev": 10}})
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict(dict(BASE_CONFIG, figure=7))
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict(dict(BASE_CONFIG, sweep={"bogus_axis": [1.0]}))
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict(dict(BASE_CONFIG, sweep={"g_nm": []}))
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict(dict(BASE_CONFIG, atoms="missing_atoms.csv"))


def test_unknown_variant_exits_2(tmp_path, cache_env):
    cfg = _write_config(tmp_path, index_model={"variant": "mystery"})
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == cli.EXIT_CONFIG
    assert (out / "error.json").is_file()


# ---------------------------------------------------------------------------
# runs, artifacts, caching
# ---------------------------------------------------------------------------


def test_run_artifacts_and_warm_cache(tmp_path, cache_env):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "out1", tmp_path / "out2"

    rc = cli.main(["run", "--config", str(cfg), "--out", str(out1)])
    assert rc == cli.EXIT_OK
    for name in ("mass_coefficients.json", "ionization_report.csv",
                 "index_curve.csv", "band_diagram.csv", "plot.gp",
                 "run_log.jsonl"):
        assert (out1 / name).is_file(), name
    log1 = _read_log(out1)
    compute1 = next(r for r in log1 if r.get("stage") == "compute_AB")
    assert compute1["cache"] == "miss"
    assert compute1["dispersion_solves"] > 0

    coeffs = json.loads((out1 / "mass_coefficients.json").read_text())
    assert coeffs["converged"] is True
    assert coeffs["lambda_ev"] == 1.2

    # warm rerun: byte-identical artifacts, zero dispersion solves
    rc = cli.main(["run", "--config", str(cfg), "--out", str(out2)])
    assert rc == cli.EXIT_OK
    log2 = _read_log(out2)
    compute2 = next(r for r in log2 if r.get("stage") == "compute_AB")
    assert compute2["cache"] == "hit"
    assert compute2["dispersion_solves"] == 0
    for name in ("mass_coefficients.json", "ionization_report.csv",
                 "index_curve.csv", "band_diagram.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_figure_selector_controls_artifacts(tmp_path, cache_env):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out_fig3"
    rc = cli.main(["run", "--config", str(cfg), "--out", str(out), "--figure", "3"])
    assert rc == cli.EXIT_OK
    assert (out / "ionization_report.csv").is_file()
    assert not (out / "index_curve.csv").exists()
    out2 = tmp_path / "out_fig2"
    rc = cli.main(["run", "--config", str(cfg), "--out", str(out2), "--figure", "2"])
    assert rc == cli.EXIT_OK
    assert (out2 / "index_curve.csv").is_file()
    assert not (out2 / "ionization_report.csv").exists()


def test_custom_atoms_table(tmp_path, cache_env):
    (tmp_path / "my_atoms.csv").write_text(
        "symbol,e_ion_ev\nXx,10.0\n", encoding="utf-8"
    )
    cfg = _write_config(tmp_path, atoms="my_atoms.csv")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    lines = (out / "ionization_report.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("Xx,10.0,")


def test_workers_flag_byte_identical(tmp_path, monkeypatch):
    cfg = _write_config(tmp_path)
    results = {}
    for workers, label in ((1, "w1"), (2, "w2")):
        monkeypatch.setenv("PCION_CACHE_DIR", str(tmp_path / f"cache_{label}"))
        out = tmp_path / f"out_{label}"
        rc = cli.main(["run", "--config", str(cfg), "--out", str(out),
                       "--workers", str(workers)])
        assert rc == cli.EXIT_OK
        results[label] = (out / "mass_coefficients.json").read_bytes()
    assert results["w1"] == results["w2"]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_sweep_single_point_matches_run(tmp_path, cache_env):
    cfg_run = _write_config(tmp_path, name="run.json")
    out_run = tmp_path / "out_run"
    assert cli.main(["run", "--config", str(cfg_run), "--out", str(out_run)]) == 0
    coeffs = json.loads((out_run / "mass_coefficients.json").read_text())

    cfg_sweep = _write_config(tmp_path, name="sweep.json",
                              sweep={"index_scale": [1.0]})
    out_sweep = tmp_path / "out_sweep"
    rc = cli.main(["sweep", "--config", str(cfg_sweep), "--out", str(out_sweep)])
    assert rc == cli.EXIT_OK
    lines = (out_sweep / "sweep.csv").read_text().splitlines()
    assert lines[0] == "a_nm,g_nm,d_h_nm,d_l_nm,index_scale,A_ev,B_ev,dE_ion_ev,flag"
    assert len(lines) == 2
    row = lines[1].split(",")
    # the sweep point shares the cache entry with the plain run, so the
    # values must round-trip bit-exactly
    assert float(row[5]) == coeffs["A_ev"]
    assert float(row[6]) == coeffs["B_ev"]
    assert row[8] == "ok"


def test_sweep_partial_failure_flags_and_exit_4(tmp_path, cache_env):
    # index_scale = -10 drives the constant index negative, which is an
    # invalid material: that point must be flagged, the other must succeed
    cfg = _write_config(tmp_path, sweep={"index_scale": [1.0, -10.0]})
    out = tmp_path / "out"
    rc = cli.main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert rc == cli.EXIT_PARTIAL
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    ok_row = lines[1].split(",")
    bad_row = lines[2].split(",")
    assert ok_row[8] == "ok"
    assert bad_row[8] == "failed"
    assert bad_row[5] == "nan"


def test_sweep_without_grid_exits_2(tmp_path, cache_env):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    rc = cli.main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert rc == cli.EXIT_CONFIG
    assert json.loads((out / "error.json").read_text())["error"] == "config"


def test_sweep_grid_order_row_per_point(tmp_path, cache_env):
    cfg = _write_config(
        tmp_path, sweep={"d_h_nm": [25.0, 30.0], "index_scale": [1.0, 0.5]}
    )
    out = tmp_path / "out"
    rc = cli.main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert rc == cli.EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 5
    got = [(r.split(",")[2], r.split(",")[4]) for r in lines[1:]]
    assert got == [("25.0", "1.0"), ("25.0", "0.5"), ("30.0", "1.0"), ("30.0", "0.5")]
