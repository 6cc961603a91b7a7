"""Command-line entry point: ``diracbohm <task> CONFIG [--output-dir D] [--seed N] [--threads N]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import TASKS, RunConfig, load_config
from .errors import DiracBohmError
from .serialization import write_json
from .tasks import RunReport, run_task

log = logging.getLogger("diracbohm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diracbohm", description=__doc__)
    parser.add_argument("--list-tasks", action="store_true", help="print the task catalog and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="task")
    for name, text in TASKS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--output-dir", help="overrides [run] output_dir")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--threads", type=int, help="overrides [run] threads")
    return parser


def _override(cfg: RunConfig, task: str, args) -> RunConfig:
    values = {sec: dict(keys) for sec, keys in cfg.values.items()}
    values["run"]["task"] = task
    if args.seed is not None:
        if args.seed < 0:
            raise DiracBohmError("--seed must be >= 0")
        values["run"]["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise DiracBohmError("--threads must be >= 1")
        values["run"]["threads"] = args.threads
    if args.output_dir is not None:
        values["run"]["output_dir"] = args.output_dir
    return RunConfig(values, cfg.source_lines, cfg.path)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_tasks:
        for name, text in TASKS.items():
            print(f"{name:14s} {text}")
        return 0
    if args.task is None:
        parser.print_usage(sys.stderr)
        return 2

    out = Path(args.output_dir or "out")
    report = RunReport(args.task, {})
    try:
        cfg = _override(load_config(args.config), args.task, args)
        out = Path(cfg.values["run"]["output_dir"])
        report = run_task(cfg, out)
    except (DiracBohmError, OSError) as exc:
        log.error("%s", exc)
        report.error = {"code": getattr(exc, "code", type(exc).__name__), "message": str(exc)}
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.as_dict())
    for name, m in report.metrics.items():
        if m["pass"] is not None:
            print(f"{'PASS' if m['pass'] else 'FAIL'} {name} = {m['value']:.6g} ({m['comparison']} {m['tolerance']})")
    if report.error:
        print(f"ERROR {report.error['code']}: {report.error['message']}", file=sys.stderr)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
