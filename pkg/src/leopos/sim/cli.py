"""Command-line entry point: ``leopos <subcommand> [options]``.

Exit status is 0 on success, 2 for configuration errors and 3 for failures
during a run.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..linkbudget import make_link_profile, positioning_beam
from . import runner
from .results import (ESTIMATE_HEADER, MEASUREMENT_HEADER, PROFILE_HEADER, VISIBILITY_HEADER, ResultTable,
                      compare_runs, emit_cdf, measurement_rows, read_cdf, write_rows)
from .scenario import ConfigError, Scenario, load_scenario, scenario_from_dict

log = logging.getLogger("leopos")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SUBCOMMAND_METRICS = {
    "visibility": ("visible_count",),
    "pd-sweep": ("pd_vs_snr",),
    "toa-cdf": ("toa_error",),
    "latency-cdf": ("toa_latency", "pos_latency"),
    "position-cdf": ("pos_error", "pos_latency"),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--scenario", type=Path, help="TOML scenario file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides [sim] master_seed)")
    p.add_argument("--drops", type=int, help="number of UE drops (overrides [drops] count)")
    p.add_argument("--out-dir", type=Path, default=Path("results"), help="directory for CSV output")
    p.add_argument("--metric", action="append", help="restrict to these metrics (repeatable)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for trial-level parallelism")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one scenario key, e.g. link.ue_rx_ports=2")
    p.add_argument("--dump-profiles", action="store_true",
                   help="debug: write link profiles (t, delay_ns, doppler_hz, snr_db) of drop 0")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leopos", description="LEO PRS positioning simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("visibility", help="visible-satellite count CDFs")
    _common(p)
    p.add_argument("--elevations", default="15,30", help="minimum elevations in degrees")
    p.add_argument("--epochs", type=int, default=200)
    p = sub.add_parser("pd-sweep", help="detection probability versus SNR (AWGN)")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--snr", help="start:stop:step in dB")
    p = sub.add_parser("toa-cdf", help="TOA error CDFs at fixed elevations")
    _common(p)
    p.add_argument("--elevations", default="47,26")
    p.add_argument("--trials", type=int, default=200)
    p = sub.add_parser("latency-cdf", help="TOA and positioning latency CDFs")
    _common(p)
    p = sub.add_parser("position-cdf", help="positioning error CDFs")
    _common(p)
    p.add_argument("--combine", default="1,3,10", help="occasion counts to combine")
    p = sub.add_parser("compare", help="relative improvement of run B over run A")
    p.add_argument("table_a", type=Path)
    p.add_argument("table_b", type=Path)
    p.add_argument("--percentile", type=float, default=0.5)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _parse_value(text: str):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text.strip().strip('"')


def scenario_from_args(args) -> Scenario:
    scn = load_scenario(args.scenario)
    upd: dict[str, dict] = {}
    for item in args.set:
        m = re.fullmatch(r"\s*(\w+)\.(\w+)\s*=\s*(.+)", item)
        if not m:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        upd.setdefault(m.group(1), {})[m.group(2)] = _parse_value(m.group(3))
    if args.seed is not None:
        upd.setdefault("sim", {})["master_seed"] = args.seed
    if args.drops is not None:
        upd.setdefault("drops", {})["count"] = args.drops
    if upd:
        base = scn.to_dict()
        for sec, kv in upd.items():
            if sec not in base:
                raise ConfigError(f"[{sec}]: unknown section")
            base[sec].update(kv)
        scn = scenario_from_dict(base)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return scn


def _metrics(args) -> list[str]:
    allowed = SUBCOMMAND_METRICS[args.command]
    if not args.metric:
        return list(allowed)
    bad = [m for m in args.metric if m not in allowed]
    if bad:
        raise ConfigError(f"--metric {bad[0]!r} not available for {args.command} (choose from {', '.join(allowed)})")
    return list(dict.fromkeys(args.metric))


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers") from None


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _emit(tables: Sequence[ResultTable], out_dir: Path, tag: str) -> list[Path]:
    paths = []
    for t in tables:
        name = f"{t.metric}_{tag}_{_slug(t.label)}.csv" if t.label else f"{t.metric}_{tag}.csv"
        paths.append(emit_cdf(t, out_dir / name))
        if t.is_cdf:
            med = t.percentile(0.5)
            print(f"{t.metric:12s} {t.label:18s} median={med:.4g} {t.x_unit}  detected={t.detected_fraction:.3f}")
        else:
            print(f"{t.metric:12s} {t.label:18s} snr@pd0.9={runner.snr_at_pd(t.x, t.y):.2f} dB")
    return paths


def _tag(scn: Scenario) -> str:
    return f"{scn.link.bandwidth_hz / 1e6:g}MHz_{scn.link.ue_rx_ports}p_{scn.prs.n_symbols}sym"


def dump_profiles(scn: Scenario, out_dir: Path) -> None:
    world = runner.world_for(scn.constellation_spec())
    drop = runner.draw_drop(scn, 0)
    nav = runner.drop_nav(scn, world, drop.epoch_s, scn.prs_template())
    if nav is None:
        return
    beam = positioning_beam(altitude_m=scn.constellation.altitude_km * 1e3)
    span = (drop.epoch_s, drop.epoch_s + scn.engine.window_s)
    for sid in nav.schedule.sat_ids:
        prof = make_link_profile(world.by_id[sid], drop.ue, scn.link_params(), beam, span, runner.PROFILE_DT_S,
                                 aim_ecef_m=scn.center.pos_ecef_m)
        write_rows(out_dir / f"profile_{sid[0]}-{sid[1]}.csv", PROFILE_HEADER, prof.csv_rows())


def cmd_visibility(args, scn: Scenario) -> None:
    tables = runner.visibility_tables(scn, _floats(args.elevations, "--elevations"), args.epochs)
    _emit(tables, args.out_dir, "visibility")
    rows = [(t.metadata["min_elev_deg"], int(x), y) for t in tables for x, y in zip(t.x, t.y)]
    write_rows(args.out_dir / "visible_count.csv", VISIBILITY_HEADER, rows)


def cmd_pd_sweep(args, scn: Scenario) -> None:
    if args.snr:
        try:
            a, b, c = (float(x) for x in args.snr.split(":"))
        except ValueError:
            raise ConfigError("--snr: expected start:stop:step") from None
        if c <= 0 or b < a:
            raise ConfigError("--snr: empty range")
        grid = np.arange(a, b + 0.5 * c, c)
    else:
        grid = runner.default_snr_grid(scn)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    _emit(runner.pd_tables(scn, grid, args.trials), args.out_dir, _tag(scn))


def cmd_toa_cdf(args, scn: Scenario) -> None:
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    _emit(runner.toa_tables(scn, _floats(args.elevations, "--elevations"), args.trials), args.out_dir, _tag(scn))


def _drops_cmd(args, scn: Scenario, combine: Sequence[int]) -> None:
    metrics = _metrics(args)
    n_occ = runner.occasions_needed(metrics, scn, combine)

    def progress(i, n):
        if i == n or i % max(1, n // 10) == 0:
            log.info("drop %d/%d", i, n)

    results = runner.run_drops(scn, None, args.workers, n_occ, combine, progress)
    tag = _tag(scn)
    _emit(runner.tables_from_drops(scn, results, metrics, combine), args.out_dir, tag)
    rows = [r for res in results for row in res.rows for r in measurement_rows(res.trial, row)]
    write_rows(args.out_dir / f"measurements_{tag}.csv", MEASUREMENT_HEADER, rows)
    est = [(res.trial, *e[1:]) for res in results for e in res.estimates if e[0] == min(combine)]
    write_rows(args.out_dir / f"estimates_{tag}.csv", ESTIMATE_HEADER, est)
    if "pos_latency" in metrics:
        fa = float(np.mean([r.first_attempt for r in results]))
        print(f"first-attempt positioning rate {fa:.3f}")


def cmd_latency(args, scn: Scenario) -> None:
    _drops_cmd(args, scn, (1,))


def cmd_position(args, scn: Scenario) -> None:
    try:
        combine = sorted({int(x) for x in args.combine.split(",") if x.strip()})
    except ValueError:
        raise ConfigError("--combine: expected comma-separated integers") from None
    if not combine or combine[0] < 1 or combine[-1] > scn.n_occasions:
        raise ConfigError(f"--combine: values must lie in [1, {scn.n_occasions}]")
    _drops_cmd(args, scn, combine)


def cmd_compare(args) -> None:
    a, b = read_cdf(args.table_a), read_cdf(args.table_b)
    if not 0 < args.percentile <= 1:
        raise ConfigError("--percentile must lie in (0, 1]")
    imp = compare_runs(a, b, args.percentile)
    print(f"{a.metric} p{args.percentile * 100:g}: {a.percentile(args.percentile):.4g} -> "
          f"{b.percentile(args.percentile):.4g} {a.x_unit}, improvement {imp * 100:.2f}%")


COMMANDS = {
    "visibility": cmd_visibility,
    "pd-sweep": cmd_pd_sweep,
    "toa-cdf": cmd_toa_cdf,
    "latency-cdf": cmd_latency,
    "position-cdf": cmd_position,
}


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "compare":
            cmd_compare(args)
            return EXIT_OK
        scn = scenario_from_args(args)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command in ("latency-cdf", "position-cdf"):
            _metrics(args)  # validate before the long run
        if args.dump_profiles:
            dump_profiles(scn, args.out_dir)
        COMMANDS[args.command](args, scn)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to one exit code
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
