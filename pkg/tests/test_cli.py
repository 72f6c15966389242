# tests/test_cli.py
import pandas as pd

from app.cli import main
from app.services.export_service import DEVICE_COLUMNS

SMALL_TOML = """\
seed = 3
rounds = 2

[model]
num_layers = 4
dim = 8

[planner]
rank_budget = 12

[data]
train_samples = 120
test_samples = 40

[devices]
count = 4
modes = [1.0]
noise = 0.0
bandwidth_lo = 10.0
bandwidth_hi = 10.0
"""


def _plan_rows(output: str) -> pd.DataFrame:
    from io import StringIO

    table = "\n".join(line for line in output.splitlines() if not line.startswith("#"))
    return pd.read_csv(StringIO(table))


def test_plan_prints_the_example_depths(config_dir, capsys):
    assert main(["plan", str(config_dir / "profile_example.csv")]) == 0
    output = capsys.readouterr().out
    rows = _plan_rows(output)
    assert rows.set_index("device_id")["depth"].to_dict() == {0: 3, 1: 9, 2: 12}
    assert "# depth_gap: 9" in output
    assert "# rank_distribution: 2 3 4 5 6 7 8 9 10 11 12 13" in output


def test_plan_accepts_the_literal_depth_rule(config_dir, capsys):
    assert main(["plan", str(config_dir / "profile_example.csv"), "--depth-rule", "paper_literal"]) == 0
    rows = _plan_rows(capsys.readouterr().out)
    assert rows.set_index("device_id")["depth"].to_dict() == {0: 3, 1: 7, 2: 10}


def test_plan_with_a_single_device_keeps_full_depth(tmp_path, capsys):
    profile = tmp_path / "one.csv"
    profile.write_text("device_id,mu,beta\n0,3.0,0.1\n", encoding="utf-8")
    assert main(["plan", str(profile), "-L", "6", "--psi", "30"]) == 0
    assert _plan_rows(capsys.readouterr().out)["depth"].tolist() == [6]


def test_plan_infeasible_budget_exits_with_config_error(config_dir, capsys):
    assert main(["plan", str(config_dir / "profile_example.csv"), "--psi", "66"]) == 2
    assert "78" in capsys.readouterr().err


def test_missing_profile_is_a_config_error(tmp_path):
    assert main(["plan", str(tmp_path / "absent.csv")]) == 2


def test_usage_errors(capsys):
    assert main(["plan", "--no-such-flag"]) == 1
    assert main(["run"]) == 1
    assert main(["run", "x.toml", "--preset", "hetero10"]) == 1


def test_run_writes_results(tmp_path, capsys):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_TOML, encoding="utf-8")
    out = tmp_path / "out"
    assert main(["run", str(config), "-o", str(out), "--xlsx"]) == 0
    devices = pd.read_csv(out / "devices.csv")
    assert list(devices.columns) == DEVICE_COLUMNS
    assert len(devices) == 2 * 4
    assert (out / "summary.csv").is_file()
    assert (out / "config.resolved.toml").is_file()
    assert (out / "experiment.xlsx").is_file()
    assert "legend: 2 rounds" in capsys.readouterr().out


def test_run_rejects_invalid_config(tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[planner]\nrank_step = -1\n", encoding="utf-8")
    assert main(["run", str(config), "-o", str(tmp_path / "out")]) == 2


def test_overrides_are_validated(tmp_path):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_TOML, encoding="utf-8")
    assert main(["run", str(config), "-o", str(tmp_path / "out"), "--rounds", "-1"]) == 2


def test_compare_writes_one_directory_per_planner(tmp_path, capsys):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_TOML, encoding="utf-8")
    out = tmp_path / "cmp"
    assert main(["compare", str(config), "-o", str(out), "-p", "legend", "-p", "fedlora"]) == 0
    comparison = pd.read_csv(out / "comparison.csv")
    assert comparison["planner"].tolist() == ["legend", "fedlora"]
    assert (out / "legend" / "devices.csv").is_file()
    assert (out / "fedlora" / "summary.csv").is_file()
