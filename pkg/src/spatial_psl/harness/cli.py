"""``spatial-psl`` command line.

Every command writes below one output root::

    <out>/data      gen: manifest.json, scenes.jsonl, questions.jsonl, images/
    <out>/masks     masks: <scene>_<q>.pgm, matching.csv
    <out>/runs      train: <variant>.ckpt, <variant>.csv; sweep: sweep/
    <out>/report    report: report.csv, report.png, curves.png; sweep: sweep.csv, sweep.png

``psl [solve]`` instead treats ``--out`` as the interpretation file (a path
without a suffix is a directory receiving ``interpretation.txt``).

Exit codes: 0 ok, 2 configuration error, 3 input error, 4 non-convergence in
strict mode.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from ..grounding import GroundingError
from ..rules import EvidenceError, ProgramError, PSLSyntaxError
from ..scenes import SceneGenerationError
from . import pipeline as P
from .config import VARIANTS, ConfigError, ExperimentConfig, load_config
from .plotting import plot_report, plot_sweep, plot_traces

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3, 4
LOCK_NAME = ".spatial-psl.lock"

log = logging.getLogger("spatial_psl")


@contextmanager
def output_lock(out: Path):
    """Exclusive lock on an output root; a second writer fails instead of interleaving files."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise P.InputError(f"{out} is locked by another run (remove {path} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dirs(out: Path) -> dict[str, Path]:
    return {k: out / k for k in ("data", "masks", "runs", "report")}


def cmd_gen(cfg: ExperimentConfig, out: Path, args) -> int:
    d = _dirs(out)
    manifest = P.generate_dataset(cfg, d["data"])
    (d["data"] / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    log.info("wrote %s", ", ".join(f"{k} {len(v)} scenes" for k, v in manifest["splits"].items()))
    return EXIT_OK


def cmd_masks(cfg: ExperimentConfig, out: Path, args) -> int:
    d = _dirs(out)
    files = P.load_dataset(d["data"])
    P.compute_masks(cfg, files, d["masks"])
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    d = _dirs(out)
    variant = args.variant or cfg.variant
    files = P.load_dataset(d["data"])
    P.run_variant(cfg, files, variant, d["runs"], d["masks"] if d["masks"].exists() else None)
    (d["runs"] / f"{variant}.ini").write_text(replace(cfg, variant=variant).to_ini(), encoding="utf-8")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, out: Path, args) -> int:
    d = _dirs(out)
    traces = P.collect_traces(d["runs"])
    table = P.build_report(traces)
    d["report"].mkdir(parents=True, exist_ok=True)
    table.write_csv(d["report"] / "report.csv")
    plot_report(table.rows(), d["report"] / "report.png")
    plot_traces(traces, d["report"] / "curves.png")
    for row, acc, delta in table.rows():
        print(f"{row:<20} {acc:.4f} {delta:+.4f}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    d = _dirs(out)
    files = P.load_dataset(d["data"])
    results = P.run_sweep(cfg, files, d["runs"], d["masks"])
    baseline_csv = d["runs"] / "baseline.csv"
    baseline = P.final_accuracy(P.read_trace(baseline_csv)) if baseline_csv.exists() else None
    d["report"].mkdir(parents=True, exist_ok=True)
    P.write_sweep_csv(d["report"] / "sweep.csv", results, baseline)
    plot_sweep([r[0] for r in results], [r[1] for r in results], d["report"] / "sweep.png", baseline)
    return EXIT_OK


def cmd_psl(cfg: ExperimentConfig, out: Path, args) -> int:
    if not args.program or not args.evidence:
        raise P.InputError("psl needs --program and --evidence")
    try:
        program_text = Path(args.program).read_text(encoding="utf-8")
        evidence_text = Path(args.evidence).read_text(encoding="utf-8")
    except OSError as exc:
        raise P.InputError(f"{exc.filename}: {exc.strerror}") from None
    potentials, y, report = P.solve_program(program_text, evidence_text, cfg.solver)
    if cfg.strict and not report.converged:
        raise P.NonConvergenceError(f"MAP inference did not converge after {report.iterations} iterations")
    path = _interpretation_path(out)
    path.write_text(P.format_interpretation(potentials, y), encoding="utf-8")
    log.info("objective %.6g, wrote %s", report.objective, path)
    return EXIT_OK


def _interpretation_path(out: Path) -> Path:
    return out / "interpretation.txt" if not out.suffix else out


COMMANDS = {
    "gen": cmd_gen,
    "masks": cmd_masks,
    "train": cmd_train,
    "report": cmd_report,
    "psl": cmd_psl,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatial-psl", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("action", nargs="?", choices=["solve"], help="psl: the only action, may be omitted")
    parser.add_argument("--config", help="INI experiment configuration (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the experiment and training seed")
    parser.add_argument("--out", default="out", help="output root (default: %(default)s)")
    parser.add_argument("--variant", choices=VARIANTS, help="train: variant to run instead of the configured one")
    parser.add_argument("--program", help="psl: rule program file")
    parser.add_argument("--evidence", help="psl: evidence file")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


_INPUT_ERRORS = (P.InputError, PSLSyntaxError, ProgramError, EvidenceError, GroundingError, SceneGenerationError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _config(args)
        if args.action and args.command != "psl":
            raise P.InputError(f"{args.command} takes no action argument")
        out = Path(args.out)
        lock_dir = _interpretation_path(out).parent if args.command == "psl" else out
        with output_lock(lock_dir):
            return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except _INPUT_ERRORS as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except P.NonConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
