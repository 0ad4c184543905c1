"""Command line: ingest files, seed fixtures, build indexes, ask questions,
run evaluation batches and serve the HTTP API."""

from __future__ import annotations

import csv
import json
import os
import sys

import click

from finask.config import AppConfig, load_config
from finask.evalkit import run_eval_batch
from finask.pipeline import load_fewshots
from finask.schema import AccountMapping, MappingEntry, fixture_mapping
from finask.service import ConfigError, build_policy, build_state, create_app
from finask.vectors import build_index_from_warehouse
from finask.warehouse import DB_ENV_VAR, PROFILES, Warehouse

DEFAULT_DB = "finask.db"


def _resolve_db(config: AppConfig) -> str:
    return os.environ.get(DB_ENV_VAR) or config.db_path or DEFAULT_DB


def _load_app_config(ctx) -> AppConfig:
    params = ctx.obj
    config = load_config(params.get("config"))
    if params.get("provider"):
        config.provider.kind = params["provider"]
    if params.get("script"):
        config.provider.script_path = params["script"]
    return config


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              help="YAML config file.")
@click.option("--provider", type=click.Choice(["scripted", "http"]),
              help="Override the configured completion provider.")
@click.option("--script", type=click.Path(dir_okay=False),
              help="Scripted-provider rule file.")
@click.pass_context
def main(ctx, config, provider, script):
    """Natural-language querying over a financial-statement warehouse."""
    ctx.obj = {"config": config, "provider": provider, "script": script}


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "format_kind", required=True,
              type=click.Choice(["bank", "corporation", "securities"]))
@click.option("--mapping", "mapping_path", type=click.Path(exists=True, dir_okay=False),
              help="Mapping CSV (format_kind,raw_code,unified_code,label); "
                   "defaults to the built-in fixture mapping.")
@click.option("--delimiter", default=",", show_default=True)
@click.pass_context
def ingest(ctx, file, format_kind, mapping_path, delimiter):
    """Load a delimiter-separated statement file into the warehouse."""
    config = _load_app_config(ctx)
    mapping = _load_mapping(mapping_path) if mapping_path else fixture_mapping()
    warehouse = Warehouse(_resolve_db(config))
    report = warehouse.ingest_file(file, format_kind, mapping, delimiter=delimiter)
    click.echo(f"inserted={report.inserted} remapped={report.remapped} "
               f"rejected={len(report.rejected)}")
    for row, reason in report.rejected[:20]:
        click.echo(f"  rejected ({reason}): {row}", err=True)
    if report.rejected:
        sys.exit(1)


def _load_mapping(path: str) -> AccountMapping:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        entries = [MappingEntry(r["format_kind"], r["raw_code"], r["unified_code"], r["label"])
                   for r in reader]
    return AccountMapping(entries)


@main.group()
def fixtures():
    """Deterministic warehouse fixtures."""


@fixtures.command("seed")
@click.argument("profile", type=click.Choice(sorted(PROFILES)))
@click.pass_context
def fixtures_seed(ctx, profile):
    """Seed the warehouse with the train or test profile."""
    config = _load_app_config(ctx.parent.parent)
    db = _resolve_db(config)
    Warehouse(db).seed_fixture(profile)
    click.echo(f"seeded profile {profile!r} into {db}")


@fixtures.command("export")
@click.option("--out", type=click.Path(dir_okay=False), help="Write here instead of stdout.")
@click.pass_context
def fixtures_export(ctx, out):
    """Export company-level facts in the ingest file layout."""
    config = _load_app_config(ctx.parent.parent)
    text = Warehouse(_resolve_db(config)).export_facts()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--out", default="finask-index.jsonl", show_default=True,
              type=click.Path(dir_okay=False))
@click.pass_context
def index(ctx, out):
    """Build the vector namespaces from the warehouse and few-shot store."""
    config = _load_app_config(ctx)
    warehouse = Warehouse(_resolve_db(config))
    if not warehouse.is_seeded():
        raise click.ClickException("warehouse is empty; run `finask fixtures seed` or ingest first")
    fewshots = load_fewshots(config.fewshot_path, warehouse.catalog, build_policy(config))
    service = build_index_from_warehouse(warehouse, fewshots)
    service.index.dump(out)
    sizes = {ns: service.index.size(ns) for ns in service.index.namespaces()}
    click.echo(f"wrote {out}: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))


@main.command()
@click.argument("question")
@click.option("--multistep/--no-multistep", default=None,
              help="Override the configured exploration flag.")
@click.option("--show-trace", is_flag=True, help="Print the trace document too.")
@click.pass_context
def ask(ctx, question, multistep, show_trace):
    """Run one question through the pipeline and print the result table."""
    config = _load_app_config(ctx)
    try:
        state = build_state(config, warehouse=Warehouse(_resolve_db(config)))
    except ConfigError as exc:
        raise click.ClickException(f"missing configuration: {exc}")
    if not state.warehouse.is_seeded():
        raise click.ClickException("warehouse is empty; run `finask fixtures seed` or ingest first")
    outcome = state.pipeline.run(question, multistep=multistep)
    state.traces.put(outcome.trace.trace_id, outcome.trace.to_json())
    if show_trace:
        click.echo(json.dumps(outcome.trace.to_json(), indent=2, sort_keys=True))
    if outcome.status == "answered":
        click.echo(outcome.final_table.render_fixed_width(max_rows=50))
        click.echo(f"[{outcome.status}] trace={outcome.trace.trace_id}")
    else:
        click.echo(f"[{outcome.status}] trace={outcome.trace.trace_id}", err=True)
        sys.exit(1)


@main.command("eval")
@click.argument("batch", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              help="Also write the JSON report here.")
@click.pass_context
def eval_cmd(ctx, batch, report_path):
    """Score a JSON-lines benchmark batch."""
    config = _load_app_config(ctx)
    try:
        state = build_state(config, warehouse=Warehouse(_resolve_db(config)))
    except ConfigError as exc:
        raise click.ClickException(f"missing configuration: {exc}")
    if not state.warehouse.is_seeded():
        raise click.ClickException("warehouse is empty; run `finask fixtures seed` or ingest first")
    try:
        records, report = run_eval_batch(batch, state.pipeline, state.judge)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(report.render())
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        click.echo(f"wrote {report_path}")


@main.command()
@click.option("--host", default=None, help="Bind address (default from config).")
@click.option("--port", default=None, type=int, help="Port (default from config).")
@click.pass_context
def serve(ctx, host, port):
    """Serve the HTTP API (and the chat UI when built)."""
    import uvicorn

    config = _load_app_config(ctx)
    if config.service.static_dir is None and os.path.isfile(
            os.path.join("frontend", "index.html")):
        config.service.static_dir = "frontend"
    try:
        state = build_state(config, warehouse=Warehouse(_resolve_db(config)),
                            require_provider=False)
    except ConfigError as exc:
        raise click.ClickException(f"missing configuration: {exc}")
    app = create_app(state)
    uvicorn.run(app, host=host or config.service.host, port=port or config.service.port)


if __name__ == "__main__":
    main()
