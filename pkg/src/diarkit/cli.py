"""Command-line entry point: ``diarkit <stage> [options]``.

Exit codes: 0 success, 2 validation error, 3 missing or stale artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import CLUSTERERS, SCORERS, load_config
from .errors import DiarkitError, ValidationError
from .pipeline import STAGES, Pipeline

log = logging.getLogger("diarkit")

COMMANDS = STAGES + ("run-all",)
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diarkit", description="x-vector speaker diarization pipeline")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="stage to run (or run-all)")
    p.add_argument("--stage", choices=COMMANDS, help="same as the positional command")
    p.add_argument("--config", help="INI config file (default: bundled synthetic benchmark)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--scorer", choices=SCORERS)
    p.add_argument("--clusterer", choices=CLUSTERERS)
    p.add_argument("--embedding-dim", type=int, choices=(512, 128))
    p.add_argument("--window", type=float)
    p.add_argument("--period", type=float)
    p.add_argument("--collar", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--ref", help="evaluate: reference RTTM (scores a given hypothesis directly)")
    p.add_argument("--hyp", help="evaluate: hypothesis RTTM")
    return p


def apply_overrides(cfg, args) -> None:
    """Command-line flags win over config values."""
    pairs = [
        ("seed", ("run", "seed")),
        ("jobs", ("run", "jobs")),
        ("out", ("run", "out")),
        ("embedding_dim", ("extractor", "embedding_dim")),
        ("window", ("segmentation", "window")),
        ("period", ("segmentation", "period")),
        ("collar", ("evaluation", "collar")),
    ]
    for attr, (section, key) in pairs:
        value = getattr(args, attr)
        if value is not None:
            cfg.set(section, key, value)
    if args.scorer:
        cfg.set("clustering", "scorers", [args.scorer])
    if args.clusterer:
        cfg.set("clustering", "clusterers", [args.clusterer])


def _setup_logging() -> None:
    name = os.environ.get("DIARKIT_LOG", "info").lower()
    level = LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname).1s %(name)s: %(message)s", datefmt="%H:%M:%S")
    log.setLevel(level)
    if name not in LOG_LEVELS:
        log.warning("unknown DIARKIT_LOG=%r; using info", name)


def _evaluate_files(ref_path, hyp_path, collar: float) -> int:
    from .audio_io import DiarizationAnnotation, parse_rttm
    from .der import evaluate, format_der_csv, format_der_report

    refs = {a.recording_id: a for a in parse_rttm(ref_path)}
    hyps = {a.recording_id: a for a in parse_rttm(hyp_path)}
    reports, total = evaluate(refs, {r: hyps.get(r, DiarizationAnnotation(r, [])) for r in refs}, collar)
    sys.stdout.write(format_der_report(reports, total))
    sys.stdout.write("\n" + format_der_csv(reports, total))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        command = args.stage or args.command
        if args.stage and args.command and args.stage != args.command:
            raise ValidationError(f"conflicting stages: {args.command!r} and --stage {args.stage!r}")
        if command is None:
            raise ValidationError("no stage given; use one of: " + ", ".join(COMMANDS))
        cfg = load_config(args.config)
        apply_overrides(cfg, args)
        if command == "evaluate" and (args.ref or args.hyp):
            if not (args.ref and args.hyp):
                raise ValidationError("--ref and --hyp must be given together")
            return _evaluate_files(args.ref, args.hyp, cfg.get("evaluation", "collar"))
        pipe = Pipeline(cfg)
        pipe.out.mkdir(parents=True, exist_ok=True)
        if command == "run-all":
            rows = pipe.run_all()
        else:
            rows = pipe.run(command)
        if command in ("run-all", "evaluate") and rows:
            sys.stdout.write((pipe.stage_dir("evaluate") / "results.md").read_text())
        return 0
    except DiarkitError as e:
        log.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
