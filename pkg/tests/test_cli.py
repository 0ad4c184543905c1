import json
import os

import pytest
import yaml
from click.testing import CliRunner

from finask.cli import main

from tests.conftest import (
    GOLDEN_QUESTION,
    always_no_script,
    golden_script,
)


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workdir(tmp_path, monkeypatch, golden_sql):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("FINASK_DB", str(tmp_path / "wh.db"))
    script = tmp_path / "golden.yaml"
    script.write_text(yaml.safe_dump(golden_script(golden_sql), sort_keys=False))
    return tmp_path


def seed(runner):
    result = runner.invoke(main, ["fixtures", "seed", "test"])
    assert result.exit_code == 0, result.output
    return result


def test_fixtures_seed_then_ask_golden(runner, workdir):
    seed(runner)
    result = runner.invoke(main, ["--script", "golden.yaml", "ask", GOLDEN_QUESTION])
    assert result.exit_code == 0, result.output
    lines = [l for l in result.output.splitlines() if l.strip()]
    header, first_data = lines[0], lines[2]
    assert header.startswith("stock_code")
    assert first_data.startswith("HDB")
    assert "0.64" in first_data


def test_ask_without_provider_names_missing_key(runner, workdir):
    seed(runner)
    result = runner.invoke(main, ["ask", "anything"])
    assert result.exit_code != 0
    assert "provider.script_path" in result.output


def test_ask_exhausted_exits_nonzero(runner, workdir):
    seed(runner)
    script = workdir / "no.yaml"
    script.write_text(yaml.safe_dump(always_no_script(), sort_keys=False))
    result = runner.invoke(main, ["--script", "no.yaml", "ask", "whatever"])
    assert result.exit_code == 1
    assert "[exhausted]" in result.output


def test_unknown_subcommand_fails_with_usage(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code != 0
    assert "Usage" in result.output or "No such command" in result.output


def test_eval_empty_batch_fails(runner, workdir):
    seed(runner)
    (workdir / "empty.jsonl").write_text("")
    result = runner.invoke(main, ["--script", "golden.yaml", "eval", "empty.jsonl"])
    assert result.exit_code != 0
    assert "empty batch" in result.output


def test_eval_golden_batch(runner, workdir, golden_sql):
    seed(runner)
    (workdir / "batch.jsonl").write_text(json.dumps({
        "question": GOLDEN_QUESTION, "gold_sql": golden_sql}) + "\n")
    result = runner.invoke(main, ["--script", "golden.yaml", "eval", "batch.jsonl",
                                  "--report", "report.json"])
    assert result.exit_code == 0, result.output
    assert "EX: 1.0000" in result.output
    report = json.loads((workdir / "report.json").read_text())
    assert report["metric_means"]["em"] == 1.0


def test_ingest_subcommand(runner, workdir):
    (workdir / "bank.csv").write_text(
        "stock_code,year,quarter,raw_code,data\nACB,2022,0,B.P.9,10.5\n")
    result = runner.invoke(main, ["ingest", "bank.csv", "--format", "bank"])
    assert result.exit_code == 0, result.output
    assert "inserted=1" in result.output


def test_ingest_reports_rejections(runner, workdir):
    (workdir / "bad.csv").write_text(
        "stock_code,year,quarter,raw_code,data\nACB,2022,9,B.P.9,10.5\n")
    result = runner.invoke(main, ["ingest", "bad.csv", "--format", "bank"])
    assert result.exit_code == 1
    assert "bad_quarter" in result.output


def test_index_subcommand(runner, workdir):
    seed(runner)
    result = runner.invoke(main, ["index", "--out", "index.jsonl"])
    assert result.exit_code == 0, result.output
    lines = (workdir / "index.jsonl").read_text().splitlines()
    assert len(lines) > 200
    first = json.loads(lines[0])
    assert {"namespace", "id", "text", "vector_b64", "metadata"} <= set(first)


def test_index_requires_seeded_warehouse(runner, workdir):
    result = runner.invoke(main, ["index"])
    assert result.exit_code != 0
    assert "empty" in result.output


def test_fixtures_export_deterministic(runner, workdir):
    seed(runner)
    first = runner.invoke(main, ["fixtures", "export"])
    second = runner.invoke(main, ["fixtures", "export"])
    assert first.exit_code == 0
    assert first.output == second.output
    assert first.output.startswith("stock_code,year,quarter,raw_code,data")


def test_show_trace_prints_document(runner, workdir):
    seed(runner)
    result = runner.invoke(main, ["--script", "golden.yaml", "ask", GOLDEN_QUESTION,
                                  "--show-trace"])
    assert result.exit_code == 0
    assert '"attempts"' in result.output
