"""
Test Cases Module - harness
Run configuration, report writing, alerts and the CLI
"""
import json
import math

import pytest

from alert_system import no_theorem_alert, swap_acceptance_alerts
from config import REPORT_COLUMNS
from errors import EXIT_BUDGET, EXIT_CONFIG, EXIT_OK, ConfigError
from export_manager import emit_report, metadata_path, read_csv, read_jsonl
from main_workflow import execute, main, run_experiment
from model import ModelParameters
from run_config import ReportRow, load_run_config, validate_run_config
from sampler import EstimateWithError


def create_config_data(tmp_path, **overrides):
    """Minimal exact-eval config: N=4, beta_2=0, h=0, two realizations"""
    data = {
        "experiment": "exact-eval",
        "mode": "exact",
        "model": {"N": 4, "terms": [{"p": 2, "beta": 0.0}], "h": 0.0},
        "master_seed": 42,
        "n_disorder": 2,
        "output": str(tmp_path / "report.csv"),
    }
    data.update(overrides)
    return data


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def rows_by_quantity(rows):
    return {row.quantity: row for row in rows}


def test_case_1_unknown_and_missing_keys_are_rejected(tmp_path):
    """
    Test Case 1: Strict config validation
    - an unknown key anywhere raises ConfigError naming it
    - a missing required key raises ConfigError naming it
    """
    with pytest.raises(ConfigError, match="colour"):
        validate_run_config(create_config_data(tmp_path, colour="blue"))

    data = create_config_data(tmp_path)
    data["model"] = {"N": 4, "terms": [{"p": 2, "beta": 0.0, "weight": 1}], "h": 0.0}
    with pytest.raises(ConfigError, match="weight"):
        validate_run_config(data)

    data = create_config_data(tmp_path)
    del data["model"]
    with pytest.raises(ConfigError, match="model"):
        validate_run_config(data)

    data = create_config_data(tmp_path)
    data["model"] = {"N": 4, "terms": []}
    with pytest.raises(ConfigError, match="h"):
        validate_run_config(data)


def test_case_2_section_rules(tmp_path):
    """
    Test Case 2: Cross-field rules
    - the selected experiment needs its section and forbids the others
    - mc needs a schedule, exact-eval needs exact mode
    - M >= 2, concentration degree present in the model
    """
    with pytest.raises(ConfigError, match="'gg'"):
        validate_run_config(create_config_data(tmp_path, experiment="gg-scan"))
    with pytest.raises(ConfigError, match="fe_curve"):
        validate_run_config(create_config_data(tmp_path, fe_curve={"p": 2, "x_grid": [0.0, 0.5, 1.0]}))
    with pytest.raises(ConfigError, match="schedule"):
        validate_run_config(create_config_data(tmp_path, experiment="mc-run", mode="mc"))
    with pytest.raises(ConfigError):
        validate_run_config(create_config_data(
            tmp_path, mode="mc", schedule={"burn_in": 10, "sweeps": 100},
        ))
    with pytest.raises(ConfigError, match="n_disorder"):
        validate_run_config(create_config_data(tmp_path, n_disorder=1))
    with pytest.raises(ConfigError, match="concentration.p"):
        validate_run_config(create_config_data(
            tmp_path, experiment="concentration-scan", concentration={"p": 1, "N_list": [4, 6]},
        ))
    with pytest.raises(ConfigError):
        validate_run_config(create_config_data(
            tmp_path, experiment="fe-curve", fe_curve={"p": 2, "x_grid": [0.0, 1.0]},
        ))


def test_case_3_overrides_are_validated_again(tmp_path):
    """
    Test Case 3: CLI overrides produce a new, re-validated config
    """
    config = validate_run_config(create_config_data(tmp_path))
    changed = config.with_overrides(master_seed=5, workers=None)
    assert changed.master_seed == 5
    assert changed.workers == config.workers
    assert config.master_seed == 42
    with pytest.raises(ConfigError):
        config.with_overrides(workers=0)

    path = write_config(tmp_path, create_config_data(tmp_path))
    assert load_run_config(path) == config
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")


def test_case_4_minimal_exact_eval(tmp_path):
    """
    Test Case 4: exact-eval with no effective couplings and no field
    - psi = log 2 with zero standard error
    - overlap moments <R^2> = 1/N, magnetization 0
    """
    config = validate_run_config(create_config_data(tmp_path))
    rows = rows_by_quantity(run_experiment(config))
    assert rows["psi"].mean == pytest.approx(math.log(2), abs=1e-12)
    assert rows["psi"].std_error == 0.0
    assert rows["psi"].n_samples == 2
    assert rows["log_partition"].mean == pytest.approx(4 * math.log(2), abs=1e-12)
    assert rows["overlap_moment_p2"].mean == pytest.approx(0.25, abs=1e-12)
    assert rows["magnetization"].mean == pytest.approx(0.0, abs=1e-12)
    assert rows["psi"].betas[1] == 0.0 and math.isnan(rows["psi"].betas[0])

    frame = read_csv(tmp_path / "report.csv")
    assert list(frame.columns) == REPORT_COLUMNS
    assert len(frame) == len(rows)
    assert frame["p"].isna().all()


def test_case_5_reports_are_byte_identical(tmp_path):
    """
    Test Case 5: Determinism
    - the same config twice gives the same report and metadata bytes
    - 1 worker and 8 workers give the same report bytes
    """
    first = validate_run_config(create_config_data(tmp_path, output=str(tmp_path / "a.csv")))
    run_experiment(first)
    report = (tmp_path / "a.csv").read_bytes()
    meta = metadata_path(tmp_path / "a.csv").read_bytes()
    run_experiment(first)
    assert (tmp_path / "a.csv").read_bytes() == report
    assert metadata_path(tmp_path / "a.csv").read_bytes() == meta

    data = create_config_data(tmp_path, model={"N": 6, "terms": [{"p": 1, "beta": 0.7}, {"p": 2, "beta": 1.2}], "h": 0.1})
    data["n_disorder"] = 8
    serial = validate_run_config(dict(data, output=str(tmp_path / "serial.jsonl"), format="jsonl"))
    parallel = validate_run_config(dict(data, output=str(tmp_path / "parallel.jsonl"), format="jsonl", workers=8))
    run_experiment(serial)
    run_experiment(parallel)
    assert (tmp_path / "serial.jsonl").read_bytes() == (tmp_path / "parallel.jsonl").read_bytes()


def test_case_6_gg_scan_closed_form(tmp_path):
    """
    Test Case 6: gg-scan rows on the uncoupled model match (N-1)/N^3
    """
    data = create_config_data(
        tmp_path,
        experiment="gg-scan",
        model={"N": 4, "terms": [], "h": 0.0},
        gg={"N_list": [4, 6], "p_list": [2], "n_list": [2], "functions": [{"kind": "monomial", "factors": [[0, 1, 2]]}]},
    )
    rows = execute(validate_run_config(data)).rows
    assert [row.N for row in rows] == [4, 6]
    for row in rows:
        assert row.quantity == "gg_residual:R01^2"
        assert (row.p, row.n) == (2, 2)
        assert row.mean == pytest.approx((row.N - 1) / row.N ** 3, abs=1e-10)


def test_case_7_experiment_runners(tmp_path):
    """
    Test Case 7: The remaining runners produce their quantities
    - concentration-scan with every beta zero reports the analytic value
    - proof-checks on a small model raise no failed-check alert
    - fe-curve reports four columns per grid point plus the derivative check
    - mc-run at beta = 0 accepts every tempering swap
    """
    concentration = execute(validate_run_config(create_config_data(
        tmp_path,
        experiment="concentration-scan",
        model={"N": 4, "terms": [{"p": 1, "beta": 0.0}], "h": 0.0},
        concentration={"p": 1, "N_list": [4, 6]},
        n_disorder=20,
    )))
    names = [row.quantity for row in concentration.rows]
    assert names.count("concentration_analytic") == 2
    assert "surrogate:total_decreasing" in names
    assert [a["type"] for a in concentration.alerts] == ["SURROGATE"]

    proof = execute(validate_run_config(create_config_data(
        tmp_path,
        experiment="proof-checks",
        model={"N": 5, "terms": [{"p": 2, "beta": 0.5}], "h": 0.2},
        proof={"p": 2, "intervals": [[0.2, 0.6]], "gammas": [0.3]},
    )))
    names = {row.quantity for row in proof.rows}
    assert {"delta_bound:lhs@0.2..0.6", "secant:slack@0.2..0.6;gamma=0.3", "gap_derivative:identity"} <= names
    assert proof.alerts == []

    curve = execute(validate_run_config(create_config_data(
        tmp_path, experiment="fe-curve", fe_curve={"p": 2, "x_grid": [0.0, 0.5, 1.0]},
    )))
    assert len(curve.rows) == 3 * 4 + 4
    assert curve.rows[0].quantity == "F" and curve.rows[0].betas[1] == 0.0
    assert curve.rows[4].betas[1] == 0.5

    sampled = execute(validate_run_config(create_config_data(
        tmp_path,
        experiment="mc-run",
        mode="mc",
        schedule={"burn_in": 10, "sweeps": 200, "ladder": {"k": 3, "s_min": 0.5}},
    )))
    rows = rows_by_quantity(sampled.rows)
    assert rows["swap_acceptance:0-1"].mean == pytest.approx(1.0)
    assert rows["swap_acceptance:1-2"].mean == pytest.approx(1.0)
    assert rows["flip_acceptance"].mean == pytest.approx(1.0)
    assert sampled.alerts == []


def test_case_8_report_formatting(tmp_path):
    """
    Test Case 8: Report text
    - one row gives a header plus one CSV line
    - floats are written with 17 significant digits, NaN and None empty
    - JSONL read back and written again is byte-identical
    - an empty report is refused
    """
    row = ReportRow.build(
        "exact-eval", ModelParameters(4, ((2, 1.0),)), "exact", "psi", EstimateWithError(1 / 3, 0.0, 2), 7,
    )
    path = emit_report([row], "csv", tmp_path / "one.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert lines[1] == "exact-eval,4,,,,1,,,0,exact,psi,0.33333333333333331,0,2,7"

    first = emit_report([row, row], "jsonl", tmp_path / "first.jsonl")
    assert json.loads(first.read_text().splitlines()[0])["beta_1"] is None
    again = emit_report(read_jsonl(first), "jsonl", tmp_path / "again.jsonl")
    assert first.read_bytes() == again.read_bytes()

    with pytest.raises(ValueError):
        emit_report([], "csv", tmp_path / "empty.csv")
    with pytest.raises(ValueError):
        emit_report([row], "parquet", tmp_path / "one.parquet")
    assert not (tmp_path / "empty.csv").exists()


def test_case_9_metadata_sidecar(tmp_path):
    """
    Test Case 9: The metadata sidecar echoes the config and the key schedule
    """
    config = validate_run_config(create_config_data(tmp_path))
    rows = run_experiment(config)
    meta = json.loads(metadata_path(tmp_path / "report.csv").read_text())
    assert meta["row_count"] == len(rows)
    assert meta["config"]["master_seed"] == 42
    assert meta["rng"]["bit_generator"] == "Philox"
    assert meta["report"] == "report.csv"
    assert meta["alerts"] == []


def test_case_10_cli_exit_codes(tmp_path):
    """
    Test Case 10: main() exit codes
    - success 0, invalid or mismatched config 2, exceeded budget 3
    """
    good = write_config(tmp_path, create_config_data(tmp_path))
    assert main(["exact-eval", "--config", good]) == EXIT_OK
    assert (tmp_path / "report.csv").exists()

    assert main(["gg-scan", "--config", good]) == EXIT_CONFIG
    bad = write_config(tmp_path, create_config_data(tmp_path, colour="blue"), "bad.json")
    assert main(["exact-eval", "--config", bad]) == EXIT_CONFIG
    assert main(["exact-eval", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG

    capped = write_config(tmp_path, create_config_data(tmp_path, budgets={"exact_n_cap": 3}), "capped.json")
    assert main(["exact-eval", "--config", capped]) == EXIT_BUDGET

    out = tmp_path / "override.jsonl"
    assert main(["exact-eval", "--config", good, "--seed", "9", "--out", str(out), "--format", "jsonl"]) == EXIT_OK
    assert {row.seed for row in read_jsonl(out)} == {9}


def test_case_11_alerts():
    """
    Test Case 11: Alerts
    - odd p >= 3 is flagged, p = 1 and even p are not
    - low swap acceptance per ladder pair, NaN pairs skipped
    """
    assert [a["type"] for a in no_theorem_alert(3)] == ["NO_THEOREM"]
    assert no_theorem_alert(1) == [] and no_theorem_alert(4) == []

    alerts = swap_acceptance_alerts([0.5, 0.01, math.nan, 0.049])
    assert [a["pair"] for a in alerts] == [1, 3]
    assert all(a["type"] == "LOW_SWAP_ACCEPTANCE" for a in alerts)


def test_case_12_odd_degrees_are_flagged_for_every_experiment(tmp_path):
    """
    Test Case 12: NO_THEOREM is raised whenever the run touches an odd p >= 3
    - gg-scan with p_list [3] on a model without that degree
    - exact-eval on a model carrying a p = 3 term
    - even and p = 1 runs stay unflagged
    """
    scan = execute(validate_run_config(create_config_data(
        tmp_path,
        experiment="gg-scan",
        model={"N": 4, "terms": [], "h": 0.0},
        gg={"N_list": [4], "p_list": [3], "n_list": [2], "functions": [{"kind": "monomial", "factors": [[0, 1, 2]]}]},
    )))
    flagged = [a for a in scan.alerts if a["type"] == "NO_THEOREM"]
    assert [a["p"] for a in flagged] == [3]

    evaluated = execute(validate_run_config(create_config_data(
        tmp_path, model={"N": 4, "terms": [{"p": 2, "beta": 0.4}, {"p": 3, "beta": 0.3}], "h": 0.1},
    )))
    assert [a["p"] for a in evaluated.alerts if a["type"] == "NO_THEOREM"] == [3]

    plain = execute(validate_run_config(create_config_data(tmp_path)))
    assert all(a["type"] != "NO_THEOREM" for a in plain.alerts)


def test_case_13_required_and_optional_keys(tmp_path):
    """
    Test Case 13: Which top-level keys may be omitted
    - dropping any required key raises ConfigError naming it
    - omitted optional keys take their documented defaults
    """
    for key in ("experiment", "mode", "model", "master_seed", "n_disorder", "output"):
        data = create_config_data(tmp_path)
        del data[key]
        with pytest.raises(ConfigError, match=key):
            validate_run_config(data)

    config = validate_run_config(create_config_data(tmp_path))
    assert config.description == ""
    assert config.format == "csv"
    assert config.workers == 1
    assert config.schedule is None
