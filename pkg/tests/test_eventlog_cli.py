import json

import numpy as np
import pytest

from evocoal import cli, kingman, moran
from evocoal.errors import LogParseError
from evocoal.eventlog import (
    PATH_COLUMNS,
    emit_path_csv,
    replay,
    tree_from_record,
    tree_record,
    write_moran_log,
)
from evocoal.seeding import purpose_key, seed_sequence, stream


def test_streams_are_deterministic_and_distinct():
    a = stream(42, "x", 3).random(5)
    np.testing.assert_array_equal(a, stream(42, "x", 3).random(5))
    assert not np.array_equal(a, stream(42, "x", 4).random(5))
    assert not np.array_equal(a, stream(42, "y", 3).random(5))
    assert purpose_key("x") == purpose_key("x")
    with pytest.raises(ValueError):
        seed_sequence(1, "x", -1)


def test_tree_record_round_trip_is_exact():
    tree = kingman.sample_topology(9, stream(1, "rec"))
    back = tree_from_record(json.loads(json.dumps(tree_record(tree))))
    np.testing.assert_array_equal(back.age, tree.age)
    np.testing.assert_array_equal(back.parent, tree.parent)


def test_moran_log_replays(tmp_path):
    path = moran.simulate_path(15, 2.0, stream(2, "log"), moran.PathOptions(families=(2,)))
    log = tmp_path / "events.jsonl"
    with open(log, "w") as fh:
        write_moran_log(fh, path, {"n": 15})
    first = json.loads(log.read_text().splitlines()[0])
    assert first["v"] == 1 and first["kind"] == "snapshot"
    summary = replay(log)
    assert summary.matches and summary.max_jump_error == 0.0
    assert summary.events == len(path.event_times)


def test_truncated_and_corrupt_logs(tmp_path):
    path = moran.simulate_path(6, 1.0, stream(3, "log"))
    log = tmp_path / "events.jsonl"
    with open(log, "w") as fh:
        write_moran_log(fh, path, {})
    lines = log.read_text().splitlines(keepends=True)
    cut = tmp_path / "cut.jsonl"
    cut.write_text("".join(lines[:4]) + lines[4][:10])
    with pytest.raises(LogParseError) as err:
        replay(cut)
    assert err.value.line_number == 5
    bad = tmp_path / "bad.jsonl"
    bad.write_text("".join(lines[:2]) + "{oops\n" + "".join(lines[3:]))
    with pytest.raises(LogParseError) as err:
        replay(bad)
    assert err.value.line_number == 3
    short = tmp_path / "short.jsonl"
    short.write_text("".join(lines[:-1]))
    with pytest.raises(LogParseError):
        replay(short)


def test_path_csv_columns_and_mrca_flags(tmp_path):
    import csv
    import io

    path = moran.simulate_path(8, 10.0, stream(4, "csv"), moran.PathOptions(families=(2,)))
    buf = io.StringIO()
    emit_path_csv(buf, path)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == PATH_COLUMNS
    flagged = [float(r[0]) for r in rows[1:] if r[3] == "1"]
    assert flagged == path.extinctions[2]
    pre, post = float(rows[1][1]), float(rows[1][2])
    assert pre - post == pytest.approx(path.jump_sizes[0])


def test_path_csv_empty_window_is_header_only():
    import io

    path = moran.simulate_path(2, 1e-12, stream(5, "csv"))
    buf = io.StringIO()
    emit_path_csv(buf, path)
    assert buf.getvalue() == ",".join(PATH_COLUMNS) + "\n"


def test_cli_moran_is_byte_identical(tmp_path):
    args = ["moran", "--n", "100", "--t-end", "10", "--seed", "7", "--quiet"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["mean_jump_size"] == pytest.approx(0.02, rel=0.1)


def test_cli_replay_ignores_seed(tmp_path, capsys):
    cli.main(["moran", "--n", "20", "--t-end", "1", "--seed", "3", "--out", str(tmp_path),
              "--quiet"])
    log = str(tmp_path / "events.jsonl")
    assert cli.main(["replay", log, "--seed", "99", "--quiet"]) == 0
    assert cli.main(["replay", log]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["matches"] is True


def test_cli_lookdown_and_replay(tmp_path):
    out = tmp_path / "ld"
    assert cli.main(["lookdown", "--n-max", "30", "--n", "5", "30", "--t-end", "0.5",
                     "--seed", "1", "--out", str(out), "--format", "jsonl", "--quiet"]) == 0
    rows = (out / "paths.jsonl").read_text().splitlines()
    assert json.loads(rows[0])["n"] == 5
    summary = replay(out / "events.jsonl")
    assert summary.kind == "lookdown" and summary.matches
    assert set(summary.lengths) == {5, 30}


def test_cli_kingman_report(tmp_path):
    code = cli.main(["kingman", "--n", "200", "--reps", "500", "--seed", "1",
                     "--out", str(tmp_path), "--quiet"])
    reports = json.loads((tmp_path / "report.json").read_text())
    assert {r["name"] for r in reports} == {"mean_length", "gumbel_ks"}
    assert code == (0 if all(r["decision"] == "pass" for r in reports) else 1)


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["moran", "--n", "1", "--t-end", "1", "--out", str(tmp_path)]) == 2
    assert cli.main(["bogus"]) == 2
    assert cli.main(["verify", "--criteria", "99", "--out", str(tmp_path)]) == 2
    assert cli.main(["replay", str(tmp_path / "missing.jsonl")]) == 2


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["moran", "--n", "5", "--t-end", "1", "--out", str(blocker / "sub"),
                     "--quiet"]) == 2


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("EVOCOAL_OUT_DIR", str(tmp_path))
    monkeypatch.setenv("EVOCOAL_THREADS", "3")
    assert cli.main(["moran", "--n", "5", "--t-end", "0.5", "--quiet"]) == 0
    cfg = json.loads((tmp_path / "moran" / "config.json").read_text())
    assert cfg["threads"] == 3
    monkeypatch.setenv("EVOCOAL_THREADS", "many")
    assert cli.main(["moran", "--n", "5", "--t-end", "0.5", "--quiet"]) == 2


def test_cli_verify_single_criterion(tmp_path):
    assert cli.main(["verify", "--criteria", "1", "--seed", "5", "--out", str(tmp_path),
                     "--quiet"]) == 0
    result = json.loads((tmp_path / "verify.json").read_text())
    assert result[0]["number"] == 1 and result[0]["passed"]
