"""Command-line entry point: ``evocoal {kingman,moran,lookdown,verify,replay}``.

Exit codes: 0 when every check passes, 1 on a statistical failure, 2 on a
usage or I/O error. ``EVOCOAL_OUT_DIR`` sets the default output directory and
``EVOCOAL_THREADS`` is recorded in the run configuration; replicates run
sequentially, so outputs do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kingman, lookdown, moran, stats, verify
from .errors import LogParseError
from .eventlog import (
    emit_path_csv,
    replay,
    write_lookdown_log,
    write_moran_log,
    write_rows_csv,
)
from .seeding import stream

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = ""
    format: str = "csv"
    n: int = 0
    reps: int = 0
    t_start: float = 0.0
    t_end: float = 0.0
    families: list[int] = field(default_factory=list)
    i_max: int | None = None
    n_max: int = 0
    sizes: list[int] = field(default_factory=list)
    grid: float = 0.0
    slack: float = 0.02
    alpha: float = 0.01
    check_every: int = 0
    criteria: list[int] = field(default_factory=list)
    threads: int = 1

    def recorded(self) -> dict:
        """Configuration as written to outputs; the output location is left out."""
        d = asdict(self)
        d.pop("out")
        return d

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        if self.format not in ("csv", "jsonl"):
            raise UsageError("format must be csv or jsonl")
        if self.command == "kingman" and (self.n < 2 or self.reps < 1):
            raise UsageError("kingman needs --n >= 2 and --reps >= 1")
        if self.command == "moran":
            if self.n < 2 or not self.t_end > 0:
                raise UsageError("moran needs --n >= 2 and --t-end > 0")
            if any(not 2 <= f <= self.n for f in self.families):
                raise UsageError("family counts must lie in [2, n]")
        if self.command == "lookdown":
            if self.n_max < 2 or not self.t_end > self.t_start:
                raise UsageError("lookdown needs --n-max >= 2 and t_end > t_start")
            if any(not 2 <= s <= self.n_max for s in self.sizes):
                raise UsageError("every --n must lie in [2, n_max]")
            if not self.grid > 0:
                raise UsageError("--grid must be positive")
        if self.command == "verify":
            unknown = set(self.criteria) - set(verify.CRITERIA)
            if unknown:
                raise UsageError(f"unknown criteria {sorted(unknown)}")
        if not 0 < self.alpha < 1 or self.slack < 0:
            raise UsageError("need 0 < alpha < 1 and slack >= 0")


def _write_table(out_dir: Path, stem: str, fmt: str, header: list[str], rows) -> Path:
    if fmt == "csv":
        target = out_dir / f"{stem}.csv"
        with open(target, "w", encoding="utf-8", newline="") as fh:
            write_rows_csv(fh, header, rows)
    else:
        target = out_dir / f"{stem}.jsonl"
        with open(target, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(dict(zip(header, row)), separators=(",", ":")) + "\n")
    return target


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _print_reports(reports: Sequence[stats.StatReport], quiet: bool) -> None:
    if quiet:
        return
    print(f"{'check':<28} {'estimate':>12} {'statistic':>12} {'threshold':>12}  decision")
    for r in reports:
        print(f"{r.name:<28} {r.estimate:>12.6g} {r.test_statistic:>12.6g} "
              f"{r.threshold:>12.6g}  {r.decision}")


def run_kingman(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    rng = stream(cfg.seed, "cli-kingman")
    k = np.arange(2, cfg.n + 1)
    chunk = max(1, 2_000_000 // cfg.n)
    lengths = np.concatenate([
        kingman.sample_spans(cfg.n, min(chunk, cfg.reps - lo), rng) @ k
        for lo in range(0, cfg.reps, chunk)
    ])
    half = 0.5 * (lengths - 2.0 * math.log(cfg.n))
    _write_table(out_dir, "lengths", cfg.format, ["replicate", "length", "half_compensated"],
                 zip(range(cfg.reps), lengths.tolist(), half.tolist()))
    reports = [
        stats.mean_within(lengths, kingman.expected_length_exact(cfg.n), 4.0, name="mean_length"),
    ]
    if cfg.reps >= 50:
        reports.append(stats.ks_one_sample(half, stats.gumbel_cdf, cfg.slack, cfg.alpha,
                                           name="gumbel_ks"))
    _write_json(out_dir / "report.json", [r.to_dict() for r in reports])
    _print_reports(reports, quiet)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def run_moran(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    rng = stream(cfg.seed, "cli-moran")
    fam_rng = stream(cfg.seed, "cli-moran-families")
    opts = moran.PathOptions(families=tuple(cfg.families), track_ranks=True,
                             check_every=cfg.check_every)
    path = moran.simulate_path(cfg.n, cfg.t_end, rng, opts, family_rng=fam_rng)
    with open(out_dir / "events.jsonl", "w", encoding="utf-8") as fh:
        write_moran_log(fh, path, cfg.recorded())
    with open(out_dir / "path.csv", "w", encoding="utf-8", newline="") as fh:
        emit_path_csv(fh, path)
    jumps = path.jump_sizes
    summary = {
        "n": cfg.n,
        "t_end": cfg.t_end,
        "events": len(jumps),
        "initial_length": path.base,
        "final_length": path.final_length,
        "mean_jump_size": float(jumps.mean()) if len(jumps) else None,
        "mean_external_branch": float(path.external.mean()) if len(jumps) else None,
        "extinctions": {str(f): len(v) for f, v in sorted(path.extinctions.items())},
        "max_check_error": path.max_check_error,
    }
    _write_json(out_dir / "summary.json", summary)
    if not quiet:
        for key, value in summary.items():
            print(f"{key:<22} {value}")
    return EXIT_OK if path.max_check_error <= 1e-9 else EXIT_FAIL


def run_lookdown(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    window = lookdown.sample_window(cfg.n_max, cfg.t_start, cfg.t_end,
                                    stream(cfg.seed, "cli-lookdown"))
    sizes = sorted(set(cfg.sizes or [cfg.n_max]))
    steps = int(math.floor((cfg.t_end - cfg.t_start) / cfg.grid + 1e-9))
    grid = cfg.t_start + cfg.grid * np.arange(steps + 1)
    finals, rows = {}, []
    for n in sizes:
        path, values = lookdown.length_path_ld(window, n, grid)
        finals[n] = path.final_length
        rows.extend((float(t), n, float(v)) for t, v in zip(grid, values))
    with open(out_dir / "events.jsonl", "w", encoding="utf-8") as fh:
        write_lookdown_log(fh, window, cfg.recorded(), finals)
    _write_table(out_dir, "paths", cfg.format, ["time", "n", "compensated_length"], rows)
    summary = {
        "n_max": cfg.n_max,
        "events": len(window.times),
        "final_lengths": {str(n): v for n, v in finals.items()},
    }
    if len(sizes) > 1:
        summary["nested_distances"] = lookdown.nested_distances(window, sizes, cfg.grid)
    _write_json(out_dir / "summary.json", summary)
    if not quiet:
        for key, value in summary.items():
            print(f"{key:<18} {value}")
    return EXIT_OK


def run_verify(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    numbers = cfg.criteria or sorted(verify.CRITERIA)
    results = []
    for number in numbers:
        result = verify.run_criterion(number, cfg.seed)
        results.append(result)
        if not quiet:
            print(result.line(), flush=True)
    payload = []
    for r in results:
        d = r.to_dict()
        d.pop("seconds")
        payload.append(d)
    _write_json(out_dir / "verify.json", payload)
    failed = [r.number for r in results if not r.passed]
    if not quiet:
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
              + (f"; failed: {failed}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


RUNNERS = {
    "kingman": run_kingman,
    "moran": run_moran,
    "lookdown": run_lookdown,
    "verify": run_verify,
}


def run(cfg: RunConfig, quiet: bool = False) -> int:
    cfg.validate()
    out_dir = Path(cfg.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "config.json", cfg.recorded())
        return RUNNERS[cfg.command](cfg, out_dir, quiet)
    except OSError as exc:
        print(f"evocoal: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evocoal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("kingman", help="sample fixed-time coalescent lengths")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--slack", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=0.01)

    p = sub.add_parser("moran", help="simulate a stationary Moran genealogy")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--families", type=int, nargs="*", default=[2])
    p.add_argument("--check-every", type=int, default=0)

    p = sub.add_parser("lookdown", help="simulate nested lookdown systems")
    common(p)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--n", dest="sizes", type=int, nargs="*", default=[])
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--grid", type=float, default=0.01)

    p = sub.add_parser("verify", help="run the acceptance battery")
    common(p)
    p.add_argument("--criteria", type=int, nargs="*", default=[])

    p = sub.add_parser("replay", help="re-run an event log and compare its snapshot")
    p.add_argument("log")
    p.add_argument("--seed", type=int, default=None, help="ignored; the log is authoritative")
    p.add_argument("--quiet", action="store_true")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    fields.pop("out", None)
    cfg = RunConfig(**fields)
    base = os.environ.get("EVOCOAL_OUT_DIR", "evocoal-out")
    cfg.out = args.out if args.out is not None else str(Path(base) / args.command)
    threads = os.environ.get("EVOCOAL_THREADS")
    if threads is not None:
        try:
            cfg.threads = int(threads)
        except ValueError:
            raise UsageError("EVOCOAL_THREADS must be an integer") from None
    return cfg


def _run_replay(args: argparse.Namespace) -> int:
    try:
        summary = replay(args.log)
    except LogParseError as exc:
        print(f"evocoal: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"evocoal: cannot read log: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.quiet:
        print(json.dumps({
            "kind": summary.kind, "n": summary.n, "events": summary.events,
            "final_length": summary.final_length, "logged_length": summary.logged_length,
            "max_jump_error": summary.max_jump_error, "matches": summary.matches,
        }, indent=2))
    return EXIT_OK if summary.matches else EXIT_FAIL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay":
        return _run_replay(args)
    try:
        cfg = _config_from_args(args)
        return run(cfg, quiet=args.quiet)
    except UsageError as exc:
        print(f"evocoal: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
