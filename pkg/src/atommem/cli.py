"""Command line: ingest, query, answer, stats, eval, serve.

Every EngineConfig field is a flag and an ``ATOMMEM_<FIELD>`` environment
variable. Exit codes: 0 success, 2 input error, 3 provider error.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import click
from filelock import FileLock, Timeout

from atommem.engine import ENV_PREFIX, EngineConfig, MemoryEngine
from atommem.errors import AtomMemError, NotFoundError, ProviderError, StoreLocked
from atommem.ingestion import load_transcript

EXIT_INPUT = 2
EXIT_PROVIDER = 3

_HELP = {
    "store_path": "JSONL unit log; omitted means an in-memory store",
    "window_size": "turns per extraction window",
    "stride": "turns between window starts",
    "embedding_dim": "embedding dimension",
    "n_min": "lower bound on the per-view limit",
    "n_max": "upper bound on the per-view limit",
    "token_budget": "context token budget",
    "provider": "deterministic or remote",
    "chat_model": "chat model name for the remote provider",
    "temperature": "chat sampling temperature",
    "max_retries": "retries per chat call",
    "history_units": "recent units passed to the extractor as history",
    "compression": "extract atomic units (off stores raw windows)",
    "synthesis": "consolidate related units at write time",
    "planning": "plan retrieval per query (off uses a fixed depth)",
    "fixed_depth": "per-view limit when planning is off",
    "limit_override": "force this per-view limit on every query",
}


def _config_options(fn):
    for f in reversed(dataclasses.fields(EngineConfig)):
        flag = f.name.replace("_", "-")
        env = ENV_PREFIX + f.name.upper()
        kind = str(f.type)
        if kind.startswith("bool"):
            opt = click.option(f"--{flag}/--no-{flag}", f.name, default=None, envvar=env, help=_HELP[f.name])
        else:
            ptype = int if kind.startswith("int") else float if kind.startswith("float") else str
            opt = click.option(f"--{flag}", f.name, type=ptype, default=None, envvar=env,
                               show_envvar=True, help=_HELP[f.name])
        fn = opt(fn)
    return fn


def _config(options: dict[str, Any]) -> EngineConfig:
    names = {f.name for f in dataclasses.fields(EngineConfig)}
    picked = {k: v for k, v in options.items() if k in names and v is not None}
    return EngineConfig(**picked)


def _handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ProviderError as exc:
            click.echo(f"provider error: {exc}", err=True)
            sys.exit(EXIT_PROVIDER)
        except (AtomMemError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
    return wrapper


@contextmanager
def _store_lock(config: EngineConfig) -> Iterator[None]:
    """Exclusive process lock for writers of a persistent store."""
    if config.store_path is None:
        yield
        return
    lock = FileLock(str(config.store_path) + ".lock")
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StoreLocked(f"store {config.store_path} is locked by another process") from None
    try:
        yield
    finally:
        lock.release()


def _open(config: EngineConfig, must_exist: bool = False) -> MemoryEngine:
    if must_exist and config.store_path is not None and not Path(config.store_path).exists():
        raise NotFoundError(f"store {config.store_path} does not exist")
    return MemoryEngine(config)


def _exit_if_degraded(trace) -> None:
    if trace.degraded:
        click.echo("provider failure: result is degraded", err=True)
        sys.exit(EXIT_PROVIDER)


def _dump(data: Any) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--log-level", default="WARNING", envvar="ATOMMEM_LOG_LEVEL",
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """Agent memory engine."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("transcript", type=click.Path(dir_okay=False))
@_config_options
@_handled
def ingest(transcript: str, **options) -> None:
    """Ingest a transcript file into the store and print a summary."""
    config = _config(options)
    sessions = load_transcript(transcript)
    with _store_lock(config):
        engine = _open(config)
        summary = engine.ingest(sessions)
    _dump(summary.to_dict())
    if summary.skipped_windows:
        click.echo(f"{summary.skipped_windows} window(s) skipped after extraction failures", err=True)
        sys.exit(EXIT_PROVIDER)


@cli.command()
@click.argument("question")
@click.option("--limit", type=int, default=None, help="per-view limit for this query")
@click.option("--json", "as_json", is_flag=True, help="print the trace as JSON")
@_config_options
@_handled
def query(question: str, limit: int | None, as_json: bool, **options) -> None:
    """Print the plan, per-view hits, merged context and token count."""
    trace = _open(_config(options), must_exist=True).answer(question, limit)
    if as_json:
        _dump(trace.to_dict())
    else:
        click.echo(trace.render())
    _exit_if_degraded(trace)


@cli.command()
@click.argument("question")
@click.option("--limit", type=int, default=None)
@_config_options
@_handled
def answer(question: str, limit: int | None, **options) -> None:
    """Print only the final answer."""
    trace = _open(_config(options), must_exist=True).answer(question, limit)
    click.echo(trace.answer.text)
    _exit_if_degraded(trace)


@cli.command()
@_config_options
@_handled
def stats(**options) -> None:
    """Unit counts, live/tombstoned, per-layer sizes and the effective config."""
    _dump(_open(_config(options), must_exist=True).stats())


def _ks(value: str | None) -> list[int] | None:
    if value is None:
        return None
    try:
        ks = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers, e.g. 1,3,5,10,20") from None
    if not ks or any(k <= 0 for k in ks):
        raise click.BadParameter("k values must be positive")
    return ks


@cli.command(name="eval")
@click.argument("transcript", type=click.Path(dir_okay=False))
@click.argument("qa", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="eval-report", show_default=True)
@click.option("--sweep", default=None, help="comma-separated k values for the sensitivity sweep")
@click.option("--ablations", is_flag=True, help="also run the three single-stage ablations")
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--workers", type=int, default=4, show_default=True)
@_config_options
@_handled
def eval_cmd(transcript: str, qa: str, out_dir: str, sweep: str | None, ablations: bool,
             figures: bool, workers: int, **options) -> None:
    """Run the QA evaluation and write report files."""
    from atommem.eval.harness import ablation_table, load_qa, run_eval, sensitivity_sweep
    from atommem.eval.report import results_table, write_report

    config = _config(options)
    ks = _ks(sweep)
    sessions = load_transcript(transcript)
    items = load_qa(qa)
    report = run_eval(sessions, items, config, workers=workers)
    sweep_rows = sensitivity_sweep(sessions, items, ks, config, workers=workers) if ks else None
    ablation_rows = ablation_table(sessions, items, config, workers=workers, baseline=report) if ablations else None
    written = write_report(out_dir, report, sweep=sweep_rows, ablations=ablation_rows, figures=figures)
    click.echo(results_table(report), nl=False)
    click.echo(json.dumps({"config": report.config, "written": [str(p) for p in written]}, indent=2))


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@_config_options
@_handled
def serve(host: str, port: int, **options) -> None:
    """Run the HTTP service against one store."""
    import uvicorn

    from atommem.service import create_app

    config = _config(options)
    with _store_lock(config):
        engine = _open(config)
        click.echo(json.dumps({"config": config.to_dict()}), err=True)
        uvicorn.run(create_app(engine), host=host, port=port, timeout_graceful_shutdown=10)


def main() -> None:
    cli(prog_name="atommem")


if __name__ == "__main__":
    main()
