"""JSON-lines event logs, replay, and CSV emission of length paths.

A log starts with a ``snapshot`` record carrying ``"v": 1``, the run
configuration and the initial genealogy, so that replay needs nothing but
the file. Floats are written with ``repr`` (shortest exact round-trip).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from . import kingman
from .errors import LogParseError
from .lookdown import LevelSystem, LookdownWindow
from .moran import LengthPath, MoranState

SCHEMA_VERSION = 1


def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def tree_record(tree: kingman.CoalescentTree) -> dict:
    return {
        "n": tree.n,
        "age": [float(a) for a in tree.age[tree.n:]],
        "children": [[int(a), int(b)] for a, b in tree.children],
    }


def tree_from_record(rec: dict) -> kingman.CoalescentTree:
    n = int(rec["n"])
    children = np.array(rec["children"], dtype=np.int64).reshape(n - 1, 2)
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    for k, (a, b) in enumerate(children):
        parent[a] = parent[b] = n + k
    age = np.concatenate([np.zeros(n), np.array(rec["age"], dtype=float)])
    return kingman.CoalescentTree(n, parent, age, children)


def write_moran_log(out: IO[str], path: LengthPath, config: dict) -> None:
    out.write(_dumps({
        "v": SCHEMA_VERSION, "kind": "snapshot", "time": path.t0,
        "config": config, "tree": tree_record(path.initial_tree), "length": path.base,
    }) + "\n")
    ext_times = {
        f: iter(times) for f, times in sorted(path.extinctions.items())
    }
    pending = {f: next(it, None) for f, it in ext_times.items()}
    for t, d, r, size in zip(path.event_times.tolist(), path.diers.tolist(),
                             path.reproducers.tolist(), path.jump_sizes.tolist()):
        out.write(_dumps({"kind": "resample", "time": t, "dier": d, "reproducer": r}) + "\n")
        out.write(_dumps({"kind": "jump", "time": t, "size": size}) + "\n")
        for f in pending:
            if pending[f] == t:
                out.write(_dumps({"kind": "extinction", "time": t, "f": f}) + "\n")
                pending[f] = next(ext_times[f], None)
    out.write(_dumps({"kind": "snapshot", "time": path.t1, "length": path.final_length}) + "\n")


def write_lookdown_log(out: IO[str], window: LookdownWindow, config: dict,
                       final_lengths: dict[int, float]) -> None:
    out.write(_dumps({
        "v": SCHEMA_VERSION, "kind": "snapshot", "time": window.t_start,
        "config": config, "tree": tree_record(window.init_tree),
        "level_leaf": [int(v) for v in window.level_leaf], "t_end": window.t_end,
    }) + "\n")
    for t, i, j in window.events:
        out.write(_dumps({"kind": "lookdown", "time": t, "i": i, "j": j}) + "\n")
    out.write(_dumps({
        "kind": "snapshot", "time": window.t_end,
        "lengths": {str(n): v for n, v in sorted(final_lengths.items())},
    }) + "\n")


@dataclass
class ReplaySummary:
    kind: str
    n: int
    events: int
    final_length: float
    logged_length: float
    max_jump_error: float
    lengths: dict[int, float] | None = None

    @property
    def matches(self) -> bool:
        scale = max(1.0, abs(self.logged_length))
        return abs(self.final_length - self.logged_length) <= 1e-9 * scale


def _records(lines: Iterable[str]):
    for number, line in enumerate(lines, start=1):
        if not line.endswith("\n"):
            raise LogParseError(number, "record is not terminated (truncated log?)")
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogParseError(number, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict) or "kind" not in rec or "time" not in rec:
            raise LogParseError(number, "record lacks kind or time")
        yield number, rec


def replay(log_path: str | Path) -> ReplaySummary:
    """Re-run a logged simulation and compare with its final snapshot."""
    with open(log_path, encoding="utf-8") as fh:
        records = _records(fh)
        try:
            number, head = next(records)
        except StopIteration:
            raise LogParseError(1, "empty log") from None
        if head.get("v") != SCHEMA_VERSION or head["kind"] != "snapshot":
            raise LogParseError(number, "first record must be a v1 snapshot")
        try:
            tree = tree_from_record(head["tree"])
        except (KeyError, ValueError, TypeError) as exc:
            raise LogParseError(number, f"bad initial tree: {exc}") from None
        if "level_leaf" in head:
            return _replay_lookdown(records, head, tree)
        return _replay_moran(records, head, tree)


def _field(number: int, rec: dict, key: str):
    try:
        return rec[key]
    except KeyError:
        raise LogParseError(number, f"{rec['kind']} record lacks '{key}'") from None


def _replay_moran(records, head: dict, tree: kingman.CoalescentTree) -> ReplaySummary:
    state = MoranState(tree, float(head["time"]))
    events, worst, last_size = 0, 0.0, None
    number = 1
    for number, rec in records:
        kind = rec["kind"]
        if kind == "resample":
            try:
                jump = state.apply(float(rec["time"]), int(_field(number, rec, "dier")),
                                   int(_field(number, rec, "reproducer")))
            except (ValueError, IndexError) as exc:
                raise LogParseError(number, str(exc)) from None
            last_size = jump.size
            events += 1
        elif kind == "jump":
            if last_size is None:
                raise LogParseError(number, "jump without a preceding resample")
            worst = max(worst, abs(float(_field(number, rec, "size")) - last_size))
        elif kind == "extinction":
            continue
        elif kind == "snapshot":
            t = float(rec["time"])
            final = state.cached_length + state.n * (t - state.clock)
            return ReplaySummary("moran", state.n, events, final,
                                 float(_field(number, rec, "length")), worst)
        else:
            raise LogParseError(number, f"unknown record kind '{kind}'")
    raise LogParseError(number + 1, "log ends without a final snapshot")


def _replay_lookdown(records, head: dict, tree: kingman.CoalescentTree) -> ReplaySummary:
    level_leaf = np.array(head["level_leaf"], dtype=np.int64)
    t0, t1 = float(head["time"]), float(head["t_end"])
    times, lows, ups = [], [], []
    number = 1
    for number, rec in records:
        kind = rec["kind"]
        if kind == "lookdown":
            times.append(float(rec["time"]))
            lows.append(int(_field(number, rec, "i")))
            ups.append(int(_field(number, rec, "j")))
        elif kind == "snapshot":
            logged = {int(k): float(v) for k, v in _field(number, rec, "lengths").items()}
            window = LookdownWindow(tree.n, t0, t1, np.array(times), np.array(lows),
                                    np.array(ups), tree, level_leaf)
            lengths = {}
            for n in sorted(logged):
                system = LevelSystem(window, n)
                for t, i, j in zip(times, lows, ups):
                    if j <= n:
                        system.apply(t, i, j)
                lengths[n] = system.length_at(t1)
            top = max(logged)
            worst = max(abs(lengths[n] - logged[n]) for n in logged)
            return ReplaySummary("lookdown", top, len(times), lengths[top], logged[top],
                                 worst, lengths)
        else:
            raise LogParseError(number, f"unknown record kind '{kind}'")
    raise LogParseError(number + 1, "log ends without a final snapshot")


# ---------------------------------------------------------------------------
# CSV


PATH_COLUMNS = ["time", "value_pre_jump", "value_post_jump", "is_mrca_change"]


def emit_path_csv(out: IO[str], path: LengthPath) -> None:
    """One row per jump of the compensated length; MRCA changes from the f=2 overlay."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PATH_COLUMNS)
    t = path.event_times
    pre = path.left_limit(t, compensated=True)
    post = path.value_at(t, compensated=True)
    if 2 in path.extinctions:
        mrca = set(path.extinctions[2])
        flags = [time in mrca for time in t.tolist()]
    else:
        flags = path.root_changes.tolist()
    for row in zip(t.tolist(), pre.tolist(), post.tolist(), flags):
        writer.writerow([repr(row[0]), repr(row[1]), repr(row[2]), int(row[3])])


def write_rows_csv(out: IO[str], header: list[str], rows: Iterable[Iterable]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
