import csv
import json

import pytest

from coco_at1p import data_path
from coco_at1p.calibration import calibrate_full
from coco_at1p.cli import (EXIT_CALIBRATION, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, ScenarioOutcome, main,
                           stress_report)
from coco_at1p.config import RunConfig, load_params
from coco_at1p.engine import PriceResult, SimConfig, price_coco

CFG = str(data_path("lloyds.cfg"))
QUICK = ["--set", "anneal_temps=12", "--set", "anneal_proposals=60"]
SMALL_MC = ["--paths", "2000", "--dt", "1/50"]


def run(tmp, *args):
    return main([args[0], "--config", CFG, "--out", str(tmp), *args[1:]])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def params_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("cal")
    assert run(out, "calibrate", *QUICK, "--csv") == EXIT_OK
    return out / "params.txt"


def test_calibrate_writes_report_and_manifest(params_file):
    out = params_file.parent
    assert (out / "calibration_report.txt").read_text().startswith("parameter")
    rows = read_csv(out / "calibration.csv")
    assert [r["observable"] for r in rows][-2:] == ["capital_ratio", "equity"]
    p = load_params(params_file)
    assert len(p.sigmas) == 7 and 0 < p.H < 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "calibrate"
    assert "threads" not in manifest["settings"] and "parallel_scenarios" not in manifest["settings"]
    assert manifest["settings"]["anneal_temps"] == "12"
    assert set(manifest["inputs_sha256"]) == {"cds_quotes", "balance_sheet"}
    assert sorted(manifest["outputs"]) == ["calibration.csv", "calibration_report.txt", "params.txt"]


def test_missing_config_is_an_input_error(tmp_path, capsys):
    assert main(["calibrate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == EXIT_INPUT
    assert "input error" in capsys.readouterr().err


def test_bad_override_is_an_input_error(tmp_path):
    assert run(tmp_path, "calibrate", "--set", "calibration=bogus") == EXIT_INPUT
    assert run(tmp_path, "calibrate", "--set", "nonsense") == EXIT_INPUT


def test_capital_at_trigger_is_a_calibration_failure(tmp_path, capsys):
    assert run(tmp_path, "calibrate", *QUICK, "--set", "reported_capital_ratio=0.04") == EXIT_CALIBRATION
    assert "trigger" in capsys.readouterr().err


def test_zero_dispersion_is_a_numerical_failure(tmp_path, params_file, capsys):
    text = params_file.read_text().splitlines()
    text = [("sigmas = " + ", ".join(["1e-300"] * 7)) if ln.startswith("sigmas") else ln for ln in text]
    flat = tmp_path / "flat.txt"
    flat.write_text("\n".join(text) + "\n")
    assert run(tmp_path, "price-coco", "--params", str(flat), "--set", "eta=0.5", *SMALL_MC) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_price_commands(tmp_path, params_file, capsys):
    for cmd, name in (("price-coco", "price_coco.csv"), ("price-pdb", "price_pdb.csv"),
                      ("price-stripped", "price_stripped.csv")):
        assert run(tmp_path, cmd, "--params", str(params_file), "--csv", *SMALL_MC) == EXIT_OK
        row = read_csv(tmp_path / name)[0]
        assert float(row["ci_low"]) <= float(row["price"]) <= float(row["ci_high"])
        assert row["n_paths"] == "2000"
    assert "closed form" in capsys.readouterr().out


def test_price_matches_library_call(tmp_path, params_file, lloyds_cfg, lloyds_snapshot):
    assert run(tmp_path, "price-coco", "--params", str(params_file), "--csv", *SMALL_MC) == EXIT_OK
    res = price_coco(load_params(params_file), lloyds_cfg.coco(), lloyds_cfg.capital_model(), lloyds_snapshot,
                     SimConfig(dt=1 / 50, n_paths=2000))
    assert read_csv(tmp_path / "price_coco.csv")[0]["price"] == repr(res.estimate)


def test_regress_capital(tmp_path, capsys):
    assert run(tmp_path, "regress-capital") == EXIT_OK
    avg = read_csv(tmp_path / "regression_average.csv")
    assert {r["rating_class"] for r in avg} == {"A", "C"}
    assert all(float(r["beta_bar"]) < 0 for r in avg)
    assert len(read_csv(tmp_path / "regression_by_date.csv")) == 10
    assert "average" in capsys.readouterr().out


def test_stress_at_zero_shift_equals_base(tmp_path):
    assert run(tmp_path, "stress", *QUICK, *SMALL_MC, "--csv", "--set", "stress_pcts=0") == EXIT_OK
    rows = read_csv(tmp_path / "stress.csv")
    assert [r["scenario"] for r in rows] == ["base", "equity", "cds"]
    assert rows[0]["price"] == rows[1]["price"] == rows[2]["price"]
    assert "same-percentage check" in (tmp_path / "stress_report.txt").read_text()


def test_grid_single_cell_equals_direct_price(tmp_path, lloyds_snapshot):
    args = [*QUICK, *SMALL_MC, "--csv", "--set", "grid_q_multiples=1", "--set", "grid_eta=1"]
    assert run(tmp_path, "grid", *args) == EXIT_OK
    cell = read_csv(tmp_path / "grid.csv")[0]
    cfg = RunConfig.load(CFG, {"anneal_temps": "12", "anneal_proposals": "60"})
    rep = calibrate_full(lloyds_snapshot, cfg.coco(), cfg.capital_model(), seed=0, q=0.0054,
                         anneal_options=cfg.anneal_options())
    res = price_coco(rep.params, cfg.coco(), cfg.capital_model(), lloyds_snapshot, SimConfig(dt=1 / 50, n_paths=2000))
    assert cell["price"] == repr(res.estimate)
    assert float(cell["q"]) == 0.0054 and float(cell["eta"]) == 1.0


def test_sampling_check_command(tmp_path, params_file, capsys):
    assert run(tmp_path, "sampling-check", "--params", str(params_file), "--paths", "2000", "--csv",
               "--set", "sampling_dts=1/2, 1/10") == EXIT_OK
    rows = read_csv(tmp_path / "sampling_check.csv")
    assert [float(r["dt"]) for r in rows] == [0.5, 0.1]
    assert "recommended dt" in capsys.readouterr().out


def test_profiles_command(tmp_path, params_file):
    assert run(tmp_path, "profiles", "--params", str(params_file), *SMALL_MC, "--set", "profile_points=5",
               "--set", "profile_mc_paths=2000") == EXIT_OK
    rows = read_csv(tmp_path / "equity_profiles.csv")
    assert len(rows) == 5
    assert list(rows[0]) == ["V", "bs_fixed_strike", "bs_moving_strike", "at1p_dao_call", "at1p_plain_call"]
    for name in ("hist_conversion_ratio.csv", "hist_conversion_time.csv", "hist_default_time.csv",
                 "path_statistics.csv"):
        assert (tmp_path / name).is_file()


def result(estimate):
    return PriceResult(estimate, 0.001, estimate - 0.002, estimate + 0.002, 0.1, 1000, 0.002)


def test_stress_report_flags_cross_percentage_pairing():
    base = result(1.01775)
    outcomes = {("equity", 0.1): ScenarioOutcome("equity -10%", result(0.991562)),
                ("cds", 0.1): ScenarioOutcome("CDS +10%", result(1.00439)),
                ("equity", 0.3): ScenarioOutcome("equity -30%", result(0.916089)),
                ("cds", 0.3): ScenarioOutcome("CDS +30%", result(0.97059))}
    lines, checks = stress_report(base, outcomes, [0.1, 0.3])
    assert [c["equity_dominates"] for c in checks] == [True, True]
    cross = [ln for ln in lines if ln.startswith("cross-percentage")]
    assert len(cross) == 1 and "not asserted" in cross[0] and "shows the opposite" in cross[0]


def test_stress_report_lists_failures():
    lines, checks = stress_report(result(1.0), {("equity", 0.1): ScenarioOutcome("equity -10%", None, "boom")},
                                  [0.1])
    assert any("FAILED" in ln and "boom" in ln for ln in lines) and checks == []
