"""``simdmimo`` command line: sim, bench, compare-precision, tbs, caps, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import yaml

from .bench import BenchConfig, emit_breakdown, output_dir, run_bench
from .kernels import ExecPath, active_capabilities
from .phy.channel import ChannelProfile
from .phy.mcs import McsTableError, NrNumerology, compute_tbs, default_mcs_table_path, load_mcs_table, peak_rate
from .schema import validate_document
from .sim import (
    FULL_SCALE_TTIS,
    ConfigError,
    SimConfig,
    compare_precisions,
    read_config_file,
    resolve_mcs,
    resolve_profile,
    run_sim,
    write_sim_outputs,
)
from .tensor import PrecisionMode

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("simdmimo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for runtime failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _mimo(text: str) -> tuple[int, int]:
    try:
        nr, nt = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NRxNT such as 4x4, got {text!r}") from None
    return nr, nt


def _common(p: argparse.ArgumentParser, precision: bool = True) -> None:
    p.add_argument("--config", help="YAML config file (shared by sim and bench)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory (default: $SIMDMIMO_OUT or ./simdmimo_out)")
    p.add_argument("--path", choices=[e.value for e in ExecPath], help="execution path")
    if precision:
        p.add_argument("--precision", choices=[e.value for e in PrecisionMode], help="arithmetic precision")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simdmimo", description="Dual-path SIMD LMMSE MIMO detector, link simulator and benchmark.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    for name, text in (("sim", "run a seeded link-level simulation"),
                       ("compare-precision", "paired PS vs PD simulation")):  # fmt: skip
        p = sub.add_parser(name, help=text, description=text)
        _common(p, precision=name == "sim")
        p.add_argument("--mimo", type=_mimo, help="antenna configuration NRxNT")
        p.add_argument("--snr", type=float, nargs="+", metavar="DB", help="SNR points in dB")
        p.add_argument("--ttis", type=int, help="TTIs per SNR point")
        p.add_argument("--full-scale", action="store_true", help=f"use {FULL_SCALE_TTIS} TTIs per SNR point")
        p.add_argument("--mcs", type=int, help="MCS index")
        p.add_argument("--mcs-table", help="MCS table CSV file")
        p.add_argument("--profile", help="channel profile name or YAML file")
        p.add_argument("--rb", type=int, help="number of resource blocks")

    p = sub.add_parser("bench", help="per-stage timing across MIMO sizes, precisions and paths",
                       description="per-stage timing across MIMO sizes, precisions and paths")  # fmt: skip
    _common(p)
    p.add_argument("--mimo", type=_mimo, nargs="+", help="antenna configurations such as 2x2 4x4 8x8")
    p.add_argument("--ttis", type=int, help="timed TTIs per cell")
    p.add_argument("--full-scale", action="store_true", help=f"use {FULL_SCALE_TTIS} timed TTIs per cell")
    p.add_argument("--warmup", type=int, help="warm-up TTIs per cell (>= 1)")
    p.add_argument("--rb", type=int, help="number of resource blocks")
    p.add_argument("--format", choices=["all", "csv", "json", "plot-data"], default="all", help="files to emit")

    p = sub.add_parser("tbs", help="transport block size and peak rate", description="transport block size and peak rate")
    p.add_argument("--mcs", type=int, required=True, help="MCS index")
    p.add_argument("--rb", type=int, required=True, help="number of resource blocks")
    p.add_argument("--layers", type=int, required=True, help="MIMO layers (1..4)")
    p.add_argument("--table", help="MCS table CSV file (default: shipped 256QAM table)")
    p.add_argument("--overhead", type=int, default=12, help="overhead REs per PRB (default 12)")
    p.add_argument("--scs", type=int, default=15, help="subcarrier spacing in kHz (sets the TTI length)")
    p.add_argument("--json", action="store_true", help="print a JSON object instead of text")

    p = sub.add_parser("caps", help="report SIMD capabilities", description="report SIMD capabilities")
    p.add_argument("--json", action="store_true", help="print a JSON object")

    p = sub.add_parser("validate", help="lint config, MCS table, channel profile or report files",
                       description="lint config, MCS table, channel profile or report files")  # fmt: skip
    p.add_argument("files", nargs="*", help="files to check; with none, the shipped MCS table is checked")
    return parser


# --------------------------------------------------------------------------- config merging


def _sim_config(args) -> SimConfig:
    cfg = SimConfig.from_file(args.config) if args.config else SimConfig()
    changes: dict = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.path:
        changes["path"] = args.path
    if getattr(args, "precision", None):
        changes["precision"] = args.precision
    if args.mimo:
        changes["mimo"] = args.mimo
    if args.snr:
        changes["snr_db_points"] = tuple(args.snr)
    if args.full_scale:
        changes["n_ttis"] = FULL_SCALE_TTIS
    if args.ttis is not None:
        changes["n_ttis"] = args.ttis
    if args.mcs is not None:
        changes["mcs_index"] = args.mcs
    if args.mcs_table:
        changes["mcs_table"] = args.mcs_table
    if args.profile:
        changes["channel_profile"] = args.profile
    if args.rb is not None:
        changes["numerology"] = _with_rb(cfg.numerology, args.rb)
    return cfg.replace(**changes)


def _with_rb(num: NrNumerology, n_rb: int) -> NrNumerology:
    try:
        return NrNumerology(num.scs_khz, n_rb, num.symbols_per_slot)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _bench_config(args) -> BenchConfig:
    cfg = BenchConfig.from_file(args.config) if args.config else BenchConfig()
    changes: dict = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.path:
        changes["paths"] = (args.path,)
    if args.precision:
        changes["precisions"] = (args.precision,)
    if args.mimo:
        changes["mimo_sizes"] = tuple(args.mimo)
    if args.full_scale:
        changes["n_ttis"] = FULL_SCALE_TTIS
    if args.ttis is not None:
        changes["n_ttis"] = args.ttis
    if args.warmup is not None:
        changes["warmup_ttis"] = args.warmup
    if args.rb is not None:
        changes["numerology"] = _with_rb(cfg.numerology, args.rb)
    if args.out:
        changes["output_dir"] = args.out
    return cfg.replace(**changes)


# --------------------------------------------------------------------------- commands


def _cmd_sim(args) -> int:
    cfg = _sim_config(args)
    out = output_dir(args.out)
    if args.command == "sim":
        result = run_sim(cfg, progress=_progress(cfg) if args.verbose else None)
        for r in result.records:
            print(f"snr {r.snr_db:6.2f} dB  ser {r.ser:.6e}  ber {r.ber:.6e}  mse {r.mse:.6e}  skipped {r.skipped}")
    else:
        result = compare_precisions(cfg)
        for d in result.deltas:
            flag = "ok" if d.within_ci else "OUTSIDE CI"
            print(f"snr {d.snr_db:6.2f} dB  ser ps {d.ser_ps:.6e} pd {d.ser_pd:.6e}  |d| {abs(d.delta_ser):.2e}"
                  f" <= {d.ci_half_width:.2e} {flag}  mse ratio {d.mse_ratio:.5f}")  # fmt: skip
    for p in write_sim_outputs(result, out):
        print(f"wrote {p}")
    return EXIT_OK


def _progress(cfg: SimConfig):
    step = max(1, cfg.n_ttis // 10)

    def report(si: int, tti: int) -> None:
        if (tti + 1) % step == 0:
            log.info("snr %g dB: %d/%d TTIs", cfg.snr_db_points[si], tti + 1, cfg.n_ttis)

    return report


def _cmd_bench(args) -> int:
    cfg = _bench_config(args)
    report = run_bench(cfg, log=log.info if args.verbose else None)
    print(f"host: {report.host['cpu_name']} ({report.host['model']}), {report.host['width_bits']}-bit, "
          f"{'native' if report.host['native'] else 'fallback'}")  # fmt: skip
    for c in report.cells:
        speed = "" if c.speedup_vs_scalar is None else f"  speedup {c.speedup_vs_scalar:.2f}x ({c.time_reduction_pct:.1f}%)"
        print(f"{c.label:16s} mean {c.mean_us:9.1f} us  median {c.median_us:9.1f}  p95 {c.p95_us:9.1f}"
              f"  inversion {100 * c.shares()['inversion']:5.1f}%{speed}")  # fmt: skip
    for row in report.latency_rows():
        print(f"latency {row['cell']}: {row['mean_ms']:.4f} ms = {row['budget_share_pct']:.2f}% of TTI "
              f"[{'green' if row['green'] else 'red'}]")  # fmt: skip
    for row in report.dominance_rows():
        print(f"dominance {row['cell']}: inversion {100 * row['inversion_share']:.1f}% vs "
              f"{row['largest_other_stage']} {100 * row['largest_other_share']:.1f}% [{'pass' if row['pass'] else 'fail'}]")  # fmt: skip
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for p in emit_breakdown(report, args.format, cfg.output_dir):
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_tbs(args) -> int:
    table = args.table if args.table else default_mcs_table_path()
    entries = load_mcs_table(table)
    if not 0 <= args.mcs < len(entries):
        raise ConfigError(f"MCS index {args.mcs} not in {table} (0..{len(entries) - 1})")
    mcs = entries[args.mcs]
    try:
        num = NrNumerology(scs_khz=args.scs, n_rb=args.rb)
        bits = compute_tbs(mcs, args.rb, args.layers, args.overhead)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rate = peak_rate(bits, num.tti_ms)
    if args.json:
        print(json.dumps({"mcs": args.mcs, "qm": mcs.qm, "code_rate_x1024": mcs.code_rate_x1024, "n_rb": args.rb,
                          "layers": args.layers, "tbs_bits": bits, "tti_ms": num.tti_ms, "peak_rate_mbps": rate}))  # fmt: skip
    else:
        print(f"MCS {args.mcs} (Qm={mcs.qm}, R={mcs.code_rate_x1024}/1024), {args.rb} RB, {args.layers} layers")
        print(f"TBS: {bits} bits per slot")
        print(f"peak rate: {rate:.1f} Mbps ({num.tti_ms:g} ms TTI)")
    return EXIT_OK


def _cmd_caps(args) -> int:
    caps = active_capabilities()
    if args.json:
        print(json.dumps(caps.as_dict()))
    else:
        print(f"width: {caps.width_bits} bits")
        print(f"mode: {'native' if caps.native else 'fallback'}")
        print(f"fma: {'yes' if caps.fma else 'no'}")
        print(f"isa: {caps.cpu_name}")
        print(f"cpu: {caps.model}")
        print(f"lanes: ps={caps.lanes(PrecisionMode.PS)} pd={caps.lanes(PrecisionMode.PD)}")
    return EXIT_OK


def _check_default_table() -> str:
    entries = load_mcs_table(default_mcs_table_path())
    top = entries[-1]
    if top.index != 27 or top.qm != 8:
        raise McsTableError(f"shipped MCS table: expected index 27 with Qm=8, found index {top.index} Qm={top.qm}")
    return f"{default_mcs_table_path()}: ok ({len(entries)} entries, index 27 Qm=8)"


def validate_file(path: str | Path) -> str:
    """Lint one file by kind; returns a summary line or raises ``ConfigError``/``McsTableError``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    if path.suffix.lower() == ".csv":
        entries = load_mcs_table(path)
        return f"{path}: ok (MCS table, {len(entries)} entries)"
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        try:
            validate_document(doc)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"{path}: schema violation: {exc.message}") from None
        return f"{path}: ok ({doc['kind']} report, schema {doc['schema_version']})"
    data = read_config_file(path)
    if "taps" in data:
        try:
            prof = ChannelProfile.from_mapping(data, str(path))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return f"{path}: ok (channel profile {prof.name!r}, {len(prof.taps)} taps)"
    sim = SimConfig.from_mapping(data, str(path))
    bench = BenchConfig.from_mapping(data, str(path))
    resolve_mcs(sim.mcs_index, sim.mcs_table)
    resolve_profile(sim.channel_profile)
    return f"{path}: ok (config; sim {sim.nr}x{sim.nt}, bench {len(bench.mimo_sizes)} sizes)"


def _cmd_validate(args) -> int:
    print(_check_default_table())
    status = EXIT_OK
    for f in args.files:
        try:
            print(validate_file(f))
        except (ConfigError, McsTableError, ValueError, yaml.YAMLError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
    return status


COMMANDS = {
    "sim": _cmd_sim,
    "compare-precision": _cmd_sim,
    "bench": _cmd_bench,
    "tbs": _cmd_tbs,
    "caps": _cmd_caps,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, McsTableError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
