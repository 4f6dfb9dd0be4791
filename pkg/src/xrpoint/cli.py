"""Command-line entry point: plan, simulate, analyze, fit-lba, qc.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .calib import CalibrationError
from .config import ConfigError, RunConfig, dump_config, load_config
from .io import (
    LogFormatError,
    atomic_write_text,
    export_csv,
    load_csv,
    read_verification,
    write_actions,
    write_json,
    write_qc_ledger,
    write_table,
    write_verification,
)
from .lba import LbaData, LbaError, LbaFitError, bootstrap, fit_mle
from .metrics import MetricsError, export_verification, qc_filter, summarize, table_rows
from .policy import PolicyError
from .session import plan_seed, simulate_study
from .task import DesignError, plan_session

log = logging.getLogger("xrpoint")

PLAN_COLUMNS = (
    "participant_id", "williams_row", "block_idx", "trial_idx", "modality", "ui_mode", "pressure",
    "is_practice", "direction_idx", "target_angle_deg", "W_px", "D_px", "ID_bits",
)
DATA_ERRORS = (
    ConfigError, LogFormatError, LbaError, LbaFitError, MetricsError, DesignError, CalibrationError,
    PolicyError, FileNotFoundError, IsADirectoryError, ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration YAML (defaults built in)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--participants", type=int, help="participant count override")
    common.add_argument("--out", help="output directory (default: output_dir from the config)")
    common.add_argument("--faithful-bug", action="store_true", help="log width inflation without applying it")
    common.add_argument("--threads", type=int, default=1, help="worker processes for participant sessions")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="xrpoint", description="Headless gaze/hand pointing workbench.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("plan", parents=[common], help="write counterbalanced session plans")
    sub.add_parser("simulate", parents=[common], help="run synthetic sessions to a trial log")
    p = sub.add_parser("analyze", parents=[common], help="QC, metrics and Fitts regression on a trial log")
    p.add_argument("trials", help="trial log CSV")
    p = sub.add_parser("qc", parents=[common], help="write the QC exclusion ledger only")
    p.add_argument("trials", help="trial log CSV")
    p = sub.add_parser("fit-lba", parents=[common], help="fit the LBA to a verification export")
    p.add_argument("verification", help="verification RT CSV (from analyze) or a trial log CSV")
    p.add_argument("--starts", type=int, default=10, help="Nelder-Mead starts (default 10)")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (default 0)")
    return parser


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.participants is not None:
        if args.participants < 1:
            raise UsageError("--participants must be >= 1")
        changes["participants"] = args.participants
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.faithful_bug:
        changes["policy"] = dataclasses.replace(config.policy, faithful_bug=True)
    return config.with_overrides(**changes) if changes else config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: RunConfig, outputs: list[Path], argv, inputs=()) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "participants": config.participants,
        "faithful_bug": config.policy.faithful_bug,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
        "versions": {
            "xrpoint": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pyyaml": yaml.__version__,
        },
    }
    return write_json(out / f"manifest_{command}.json", manifest)


def cmd_plan(args, config: RunConfig, out: Path) -> list[Path]:
    rows = []
    for pid in range(config.participants):
        plan = plan_session(pid, config.design, plan_seed(config.master_seed, pid))
        for spec in plan.trials:
            rows.append(
                {
                    "participant_id": pid,
                    "williams_row": plan.williams_row_idx,
                    "block_idx": spec.block_idx,
                    "trial_idx": spec.trial_idx,
                    "modality": spec.modality,
                    "ui_mode": spec.ui_mode,
                    "pressure": spec.pressure,
                    "is_practice": spec.is_practice,
                    "direction_idx": spec.direction_idx,
                    "target_angle_deg": spec.target_angle_deg,
                    "W_px": spec.W_px,
                    "D_px": spec.D_px,
                    "ID_bits": spec.ID_bits,
                }
            )
    return [write_table(out / "plan.csv", PLAN_COLUMNS, rows)]


def cmd_simulate(args, config: RunConfig, out: Path) -> list[Path]:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    records, actions, errors = simulate_study(config, threads=args.threads)
    for e in errors:
        log.warning("trial excluded: %s", e)
    paths = [
        export_csv(records, out / "trials.csv"),
        write_actions(out / "actions.csv", actions),
        atomic_write_text(out / "config.yaml", dump_config(config)),
    ]
    if errors:
        paths.append(atomic_write_text(out / "trial_errors.txt", "\n".join(errors) + "\n"))
    return paths


def cmd_qc(args, config: RunConfig, out: Path) -> list[Path]:
    records = load_csv(args.trials)
    _, ledger = qc_filter(records)
    return [write_qc_ledger(out / "qc_ledger.csv", ledger)]


def cmd_analyze(args, config: RunConfig, out: Path) -> list[Path]:
    records = load_csv(args.trials)
    valid, ledger = qc_filter(records)
    summary = summarize(valid)
    report = summary.to_dict()
    report["qc"] = {"n_input": len(records), "n_valid": len(valid), "n_ledger_entries": len(ledger)}
    paths = [
        write_qc_ledger(out / "qc_ledger.csv", ledger),
        write_json(out / "metrics.json", report),
        write_verification(out / "verification.csv", export_verification(valid)),
    ]
    for name, rows in table_rows(summary).items():
        paths.append(write_table(out / f"{name}.csv", list(rows[0].keys()), rows))
    return paths


def cmd_fit_lba(args, config: RunConfig, out: Path) -> list[Path]:
    with open(args.verification, encoding="utf-8") as fh:
        header = fh.readline()
    if header.startswith("schema_version"):
        valid, _ = qc_filter(load_csv(args.verification))
        rows = export_verification(valid)
    else:
        rows = read_verification(args.verification)
    data = LbaData.from_verification_rows(rows)
    fit = fit_mle(data, n_starts=args.starts, seed=config.master_seed)
    if args.bootstrap > 0:
        bootstrap(data, fit, n_boot=args.bootstrap, seed=config.master_seed)
    return [write_json(out / "lba_fit.json", fit.report())]


COMMANDS = {
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "qc": cmd_qc,
    "fit-lba": cmd_fit_lba,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        out = Path(config.output_dir)
        paths = COMMANDS[args.command](args, config, out)
        inputs = [getattr(args, a) for a in ("trials", "verification") if getattr(args, a, None)]
        write_manifest(out, args.command, config, paths, argv, inputs)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"xrpoint: error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"xrpoint: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
