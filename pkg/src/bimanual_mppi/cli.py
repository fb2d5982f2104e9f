from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from .bench import (
    SUMMARY_COLUMNS,
    BenchError,
    ScenarioConfig,
    build_scene,
    build_task,
    load_config,
    parse_config,
    read_episode_rows,
    run_suite,
    summarize_rows,
    write_csv,
)
from .config import configure_logging, load_settings

logger = logging.getLogger(__name__)

console = Console()

EXIT_INVALID_INPUT = 2
EXIT_RUNTIME_ERROR = 1


class UsageError(ValueError):
    pass


class BenchArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as exceptions so ``main`` can print them as JSON."""

    def error(self, message: str):
        raise UsageError(message)


def _batch_sizes(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from e


def build_arg_parser() -> argparse.ArgumentParser:
    parser = BenchArgumentParser(prog="bimanual_mppi", description="Bimanual sampling-based planning benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run every (batch size, run) episode of a scenario")
    run.add_argument("config", type=Path, help="Scenario config (JSON)")
    run.add_argument("-o", "--output", type=Path, default=None, help="Output directory (default: BIMANUAL_OUTPUT_DIR)")
    run.add_argument("--batch-sizes", type=_batch_sizes, default=None, help="Override batch sizes, e.g. 256,512,1024")
    run.add_argument("--runs", type=int, default=None, help="Override runs per batch size")
    run.add_argument("--seed", type=int, default=None, help="Override the master seed")
    run.add_argument("--workers", type=int, default=None, help="Episode worker threads (default: BIMANUAL_WORKERS)")
    run.add_argument("--timing", choices=("wall", "off"), default=None, help="Record wall-clock cycle times or leave them blank")

    metrics = sub.add_parser("metrics", help="Recompute summaries from an episode CSV")
    metrics.add_argument("episodes", type=Path, help="episodes.csv written by 'run'")
    metrics.add_argument("-o", "--output", type=Path, default=None, help="Write the summary CSV here")

    validate = sub.add_parser("validate", help="Schema-check a scenario config")
    validate.add_argument("config", type=Path, help="Scenario config (JSON)")
    return parser


def _with_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    overrides = {
        "batch_sizes": args.batch_sizes,
        "n_runs": args.runs,
        "master_seed": args.seed,
        "timing": args.timing,
    }
    update = {k: v for k, v in overrides.items() if v is not None}
    if not update:
        return cfg
    return parse_config({**cfg.model_dump(), **update})


def _summary_table(title: str, rows: Sequence[dict[str, str]]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("Task")
    table.add_column("Batch", justify="right")
    table.add_column("Runs", justify="right")
    table.add_column("Success %", justify="right")
    table.add_column("t_task (s)", justify="right")
    table.add_column("t_comp (ms)", justify="right")
    table.add_column("Cycles", justify="right")
    for row in rows:
        if row["t_comp_pooled_mean_s"]:
            t_comp = f"{1e3 * float(row['t_comp_pooled_mean_s']):.1f} ± {1e3 * float(row['t_comp_pooled_std_s']):.1f}"
        else:
            t_comp = "-"
        table.add_row(
            row["task"],
            row["batch_size"],
            row["n_runs"],
            f"{float(row['success_rate_pct']):.1f}",
            f"{float(row['t_task_mean_s']):.2f} ± {float(row['t_task_std_s']):.2f}",
            t_comp,
            row["n_steps_total"],
        )
    return table


def cmd_run(args: argparse.Namespace) -> int:
    settings = load_settings()
    cfg = _with_overrides(load_config(args.config), args)
    if args.workers is not None and args.workers < 1:
        raise BenchError("--workers must be >= 1")
    result = run_suite(cfg, args.output, settings=settings, workers=args.workers)
    console.print(_summary_table(cfg.name, summarize_rows(result.rows)))
    console.print(f"[dim]episodes: {result.episodes_path}[/dim]")
    console.print(f"[dim]summary:  {result.summary_path}[/dim]")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    rows = summarize_rows(read_episode_rows(args.episodes))
    if args.output is not None:
        write_csv(rows, args.output, SUMMARY_COLUMNS)
    console.print(_summary_table(str(args.episodes), rows))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    scene = build_scene(cfg)
    build_task(cfg, scene)
    console.print(
        f"[green]OK[/green] {cfg.name}: {cfg.task.kind} on {scene.name}, "
        f"{cfg.n_runs} runs x batch sizes {cfg.batch_sizes}"
    )
    return 0


COMMANDS = {"run": cmd_run, "metrics": cmd_metrics, "validate": cmd_validate}


def _fail(e: BaseException, code: int) -> int:
    print(json.dumps({"error": str(e), "type": type(e).__name__}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    try:
        args = build_arg_parser().parse_args(argv)
    except UsageError as e:
        return _fail(e, EXIT_INVALID_INPUT)
    try:
        return COMMANDS[args.command](args)
    except ValueError as e:
        logger.debug("Invalid input", exc_info=True)
        return _fail(e, EXIT_INVALID_INPUT)
    except Exception as e:
        logger.exception("Command %s failed", args.command)
        return _fail(e, EXIT_RUNTIME_ERROR)
