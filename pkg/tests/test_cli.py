import json

import numpy as np
import pytest

from utils.cli_utils import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, build_parser, main, run
from utils.input_data.config_utils import load_config


def invoke(config_path, out_dir, *args):
    return main([*args, "--config", str(config_path), "--out", str(out_dir), "--threads", "1"])


def json_lines(text: str):
    records = []
    for line in text.splitlines():
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            continue
    return records


def snapshot(folder):
    return {p.relative_to(folder): p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file()}


def write_config(tmp_path, tree) -> str:
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(tree), encoding="utf-8")
    return str(path)


def test_parser_knows_every_command():
    parser = build_parser()
    args = parser.parse_args(["theorem", "P2.3", "--config", "x.json", "--seed", "3"])
    assert (args.command, args.theorem, args.seed) == ("theorem", "P2.3", 3)
    with pytest.raises(SystemExit):
        parser.parse_args(["theorem", "9.9", "--config", "x.json"])


def test_invalid_json_exits_with_config_error(tmp_path, out_dir, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "schema_version": 1,,\n}', encoding="utf-8")
    assert invoke(path, out_dir, "analyze") == EXIT_CONFIG
    record = json_lines(capsys.readouterr().err)[-1]
    assert record["error"] == "ParseError"
    assert record["line"] == 2


def test_non_utf8_config_exits_with_config_error(tmp_path, out_dir, capsys):
    path = tmp_path / "latin1.json"
    path.write_bytes(b'{\n  "schema_version": 1,\n  "x": "\xe9"\n}')
    assert invoke(path, out_dir, "simulate") == EXIT_CONFIG
    records = json_lines(capsys.readouterr().err)
    assert len(records) == 1
    assert records[0]["error"] == "ParseError"
    assert (records[0]["line"], records[0]["column"]) == (3, 9)


def test_row_sum_exits_with_config_error(tmp_path, out_dir, config_factory, capsys):
    tree = config_factory()
    tree["environment"]["kernel"] = [[0.6, 0.5], [0.5, 0.5]]
    assert invoke(write_config(tmp_path, tree), out_dir, "analyze") == EXIT_CONFIG
    record = json_lines(capsys.readouterr().err)[-1]
    assert record["error"] == "ValidationError"
    assert record["field"] == "environment.kernel[0]"


def test_missing_config_file(tmp_path, out_dir):
    assert invoke(tmp_path / "nope.json", out_dir, "analyze") == EXIT_CONFIG


def test_theorem_needs_an_id(config_file, out_dir):
    assert invoke(config_file, out_dir, "theorem") == EXIT_CONFIG


def test_unknown_command(config_file):
    with pytest.raises(ValueError):
        run("plot", load_config(config_file))


def test_analyze_writes_artifacts(config_file, out_dir, capsys):
    assert invoke(config_file, out_dir, "analyze") == EXIT_OK
    stdout = json_lines(capsys.readouterr().out)[-1]
    key = stdout["config_hash"]
    assert stdout["classification"] == "critical"

    summary = json.loads((out_dir / f"analyze_{key}.json").read_text(encoding="utf-8"))
    assert summary["config_hash"] == key
    assert summary["schema_version"] == 1
    assert summary["seed"] == 7
    assert "runtime" not in summary
    for kind in ("states", "k_curve", "nonlattice", "mixing"):
        assert (out_dir / f"{kind}_{key}.csv").exists()


def test_out_dir_is_part_of_the_hash(config_file, tmp_path, capsys):
    invoke(config_file, tmp_path / "one", "analyze")
    first = json_lines(capsys.readouterr().out)[-1]["config_hash"]
    invoke(config_file, tmp_path / "two", "analyze")
    second = json_lines(capsys.readouterr().out)[-1]["config_hash"]
    assert first != second


def test_simulate_writes_trajectories(config_file, out_dir):
    assert invoke(config_file, out_dir, "simulate") == EXIT_OK
    folders = list(out_dir.glob("trajectories_*"))
    assert len(folders) == 1
    assert len(list(folders[0].glob("replicate_*.csv"))) == 3
    assert len(list(out_dir.glob("simulate_*.csv"))) == 1


def test_verify_identities(config_file, out_dir, capsys):
    assert invoke(config_file, out_dir, "verify-identities") == EXIT_OK
    assert json_lines(capsys.readouterr().out)[-1]["identities"] == "passed"
    summary = json.loads(next(out_dir.glob("identities_*.json")).read_text(encoding="utf-8"))
    assert summary["passed"] is True
    assert summary["failed"] == []


def test_theorem_rerun_is_byte_identical(config_file, out_dir):
    status = invoke(config_file, out_dir, "theorem", "1.3")
    assert status in (EXIT_OK, EXIT_FAILED)
    first = snapshot(out_dir)
    assert invoke(config_file, out_dir, "theorem", "1.3") == status
    assert snapshot(out_dir) == first
    names = {p.name for p in first}
    assert any(name.startswith("theorem_") and name.endswith("_1_3.json") for name in names)
    assert any(name.startswith("criteria_") for name in names)


def test_thread_count_does_not_change_results(config_file, tmp_path):
    main(["theorem", "1.1", "--config", str(config_file), "--out", str(tmp_path / "r"), "--threads", "1"])
    first = snapshot(tmp_path / "r")
    main(["theorem", "1.1", "--config", str(config_file), "--out", str(tmp_path / "r"), "--threads", "3"])
    assert snapshot(tmp_path / "r") == first


def test_seed_override_changes_outputs(config_file, tmp_path, capsys):
    main(["theorem", "1.1", "--config", str(config_file), "--out", str(tmp_path), "--seed", "1"])
    one = json_lines(capsys.readouterr().out)[-1]["config_hash"]
    main(["theorem", "1.1", "--config", str(config_file), "--out", str(tmp_path), "--seed", "2"])
    two = json_lines(capsys.readouterr().out)[-1]["config_hash"]
    assert one != two
    assert len(list(tmp_path.glob("theorem_*_1_1.csv"))) == 2


def test_calibrate(tmp_path, out_dir, config_factory, capsys):
    tree = config_factory()
    tree["environment"]["offspring"]["a"] = {"family": "geometric", "p": 0.8}
    assert invoke(write_config(tmp_path, tree), out_dir, "calibrate", "--state", "a") == EXIT_OK
    record = json_lines(capsys.readouterr().out)[-1]
    env = load_config(record["calibrated_config"]).environment
    assert abs(float(env.nu @ np.asarray(env.rho_vec))) < 1e-12
    assert env.laws[0].p == pytest.approx(2 / 3)


def test_calibrate_rejects_explicit_state(tmp_path, out_dir, config_factory, capsys):
    tree = config_factory()
    tree["environment"]["offspring"]["a"] = {"family": "explicit", "pmf": [0.2, 0.2, 0.6]}
    assert invoke(write_config(tmp_path, tree), out_dir, "calibrate", "--state", "a") == EXIT_FAILED
    assert json_lines(capsys.readouterr().err)[-1]["error"] == "ValueError"


def test_supercritical_survival_check_fails_cleanly(tmp_path, out_dir, config_factory, capsys):
    tree = config_factory()
    tree["environment"]["offspring"]["b"] = {"family": "poisson", "lam": 1.0}
    assert invoke(write_config(tmp_path, tree), out_dir, "harmonic") == EXIT_FAILED
    assert json_lines(capsys.readouterr().err)[-1]["error"] == "NotCritical"


@pytest.mark.slow
def test_harmonic_table_is_reused(config_file, out_dir):
    assert invoke(config_file, out_dir, "harmonic") in (EXIT_OK, EXIT_FAILED)
    tables = list(out_dir.glob("harmonic_????????????.csv"))
    assert len(tables) == 1
    before = tables[0].read_bytes()
    invoke(config_file, out_dir, "harmonic")
    assert tables[0].read_bytes() == before
