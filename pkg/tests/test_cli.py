import csv
import json

import pytest

from elastowave import cli
from elastowave.analysis import CSV_COLUMNS


def _run(args, tmp_path, capsys):
    code = cli.main(args + ["--out", str(tmp_path / "out")])
    return code, capsys.readouterr()


def test_levels_extension():
    assert cli._levels([33, 65, 129], None) == [33, 65, 129]
    assert cli._levels([33, 65, 129], 2) == [33, 65]
    assert cli._levels([33, 65], 4) == [33, 65, 129, 257]
    with pytest.raises(cli.ConfigError):
        cli._levels([33, 65], 1)


def test_check_tensor_writes_artifacts(tmp_path, capsys):
    code, out = _run(["check-tensor", "--null", "--seed", "7"], tmp_path, capsys)
    assert code == 0
    assert "PASS null deficits" in out.out
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["pass"] is True and summary["seed"] == 7 and summary["command"] == "check-tensor"
    assert (tmp_path / "out" / "tensor.json").is_file()


def test_missing_config_exits_2(tmp_path, capsys):
    code, out = _run(["simulate", "--config", str(tmp_path / "nope.json")], tmp_path, capsys)
    assert code == 2 and "config error" in out.err


@pytest.mark.parametrize("payload", [{"schema_version": 5}, {"grid": {"points": 9}}])
def test_bad_config_exits_2(tmp_path, capsys, payload):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(payload))
    code, _ = _run(["check-tensor", "--config", str(p)], tmp_path, capsys)
    assert code == 2


def test_bad_k_rejected_by_parser(tmp_path, capsys):
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--k", "4"])


def test_simulate_small_linear(tmp_path, capsys):
    cfg = {"grid": {"half_width": 4.0, "points_per_axis": 17}, "data": {"radius": 1.0},
           "density": {"delta": 0.0}, "tensor": {"kind": "zero"},
           "run": {"horizon": 0.5, "report_stride": 1}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    code, out = _run(["simulate", "--config", str(p), "--k", "2"], tmp_path, capsys)
    assert code == 0, out.err
    rows = list(csv.DictReader(open(tmp_path / "out" / "report.csv")))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) >= 2
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["config"]["run"]["k"] == 2
    assert summary["results"]["aborted"] is False
    assert not (tmp_path / "out" / "tensor.json").exists()


def test_simulate_abort_exits_1(tmp_path, capsys):
    cfg = {"grid": {"points_per_axis": 33}, "density": {"delta": 0.0}, "tensor": {"kind": "zero"},
           "run": {"horizon": 2.5, "dt_factor": 5.0, "report_stride": 1, "k": 2}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    code, out = _run(["simulate", "--config", str(p)], tmp_path, capsys)
    assert code == 1 and "aborted" in out.err
