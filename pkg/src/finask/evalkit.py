"""Benchmark metrics and the hybrid MCQ judging protocol.

Structural metrics (exact and component matching) compare normalized
parse trees; execution metrics (execution accuracy, valid efficiency
score) compare result tables and runtimes.  The hybrid protocol grades a
predicted table by asking a judge model multiple-choice questions about
it, with an optional "I don't know" escape that always scores as
incorrect.
"""

from __future__ import annotations

import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from finask.gateway import Gateway, PromptBundle
from finask.pipeline import Pipeline, PipelineOutcome
from finask.sqlguard import parse_sql, validate_sql
from finask.sqlguard.parser import (
    SelectStatement,
    SqlPrinter,
    SqlSyntaxError,
    Binary,
)
from finask.warehouse import ExecLimits, ResultTable, Warehouse

log = logging.getLogger(__name__)

REL_TOLERANCE = 1e-6
ABS_TOLERANCE = 1e-9

IDK_TEXT = "I don't know"

_METRIC_KEYS = ("em", "cm", "ex", "ves")


# ---------------------------------------------------------------------------
# Content matching
# ---------------------------------------------------------------------------

def _parse_single(sql: str) -> Optional[SelectStatement]:
    try:
        script = parse_sql(sql)
    except SqlSyntaxError as exc:
        log.warning("unparseable SQL in metric computation: %s", exc)
        return None
    if script.statement_count != 1 or not isinstance(script.statements[0], SelectStatement):
        log.warning("metric computation expects a single SELECT statement")
        return None
    return script.statements[0]


def normalize_sql(sql: str) -> Optional[str]:
    """Canonical print with case-folded keywords and identifiers."""
    stmt = _parse_single(sql)
    if stmt is None:
        return None
    return SqlPrinter(fold_identifiers=True).statement(stmt)


def exact_match(pred_sql: str, gold_sql: str) -> bool:
    pred = normalize_sql(pred_sql)
    gold = normalize_sql(gold_sql)
    if pred is None or gold is None:
        return False
    return pred == gold


def _split_and(expr) -> list:
    if isinstance(expr, Binary) and expr.op == "AND":
        return _split_and(expr.left) + _split_and(expr.right)
    return [expr]


def clause_sets(sql: str) -> Optional[dict[str, frozenset[str]]]:
    """Decompose a statement into named clause sets for component matching.

    CTE definitions count toward the FROM component; WHERE splits on
    top-level AND.
    """
    stmt = _parse_single(sql)
    if stmt is None:
        return None
    p = SqlPrinter(fold_identifiers=True)
    body = stmt.body
    sets: dict[str, frozenset[str]] = {
        "select": frozenset(p.select_item(i) for i in body.items),
    }
    from_parts = {p.table_ref(r) for r in body.from_refs}
    from_parts |= {p.join(j) for j in body.joins}
    from_parts |= {f"{c.name.lower()} AS ({p.select(c.query)})" for c in stmt.ctes}
    if from_parts:
        sets["from"] = frozenset(from_parts)
    if body.where is not None:
        sets["where"] = frozenset(p.expr(x) for x in _split_and(body.where))
    if body.group_by:
        sets["group_by"] = frozenset(p.expr(x) for x in body.group_by)
    if body.order_by:
        sets["order_by"] = frozenset(p.order_item(o) for o in body.order_by)
    if body.limit is not None:
        limit_text = p.expr(body.limit.count)
        if body.limit.offset is not None:
            limit_text += f" OFFSET {p.expr(body.limit.offset)}"
        sets["limit"] = frozenset([limit_text])
    return sets


def component_match(pred_sql: str, gold_sql: str) -> float:
    """Matched clause sets over the clause kinds present in the gold query."""
    pred = clause_sets(pred_sql)
    gold = clause_sets(gold_sql)
    if pred is None or gold is None:
        return 0.0
    matched = sum(1 for kind, gold_set in gold.items() if pred.get(kind) == gold_set)
    return matched / len(gold)


# ---------------------------------------------------------------------------
# Execution metrics
# ---------------------------------------------------------------------------

def _cells_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        return math.isclose(a, b, rel_tol=REL_TOLERANCE, abs_tol=ABS_TOLERANCE)
    return a == b


def _rows_equal(left: Sequence, right: Sequence) -> bool:
    return len(left) == len(right) and all(_cells_equal(a, b) for a, b in zip(left, right))


def _align_columns(pred: ResultTable, gold: ResultTable) -> Optional[list[tuple]]:
    """Pred rows with columns reordered to the gold layout. Name-based when
    the (deduplicated) column names align, positional otherwise."""
    if len(pred.columns) != len(gold.columns):
        return None
    pred_lower = [c.lower() for c in pred.columns]
    gold_lower = [c.lower() for c in gold.columns]
    if sorted(pred_lower) == sorted(gold_lower) and len(set(pred_lower)) == len(pred_lower):
        perm = [pred_lower.index(c) for c in gold_lower]
        return [tuple(row[i] for i in perm) for row in pred.rows]
    return [tuple(row) for row in pred.rows]


def execution_accuracy(pred: Optional[ResultTable], gold: ResultTable) -> bool:
    """Row multisets must agree (ordered comparison when the gold table is
    marked ordered); numerics compare under relative tolerance."""
    if pred is None:
        return False
    pred_rows = _align_columns(pred, gold)
    if pred_rows is None or len(pred_rows) != len(gold.rows):
        return False
    if gold.ordered:
        return all(_rows_equal(p, g) for p, g in zip(pred_rows, gold.rows))
    remaining = list(gold.rows)
    for row in pred_rows:
        for i, other in enumerate(remaining):
            if _rows_equal(row, other):
                del remaining[i]
                break
        else:
            return False
    return True


def valid_efficiency_score(ex_flag: bool, pred_time: float, gold_time: float) -> float:
    """0 when execution was wrong, else sqrt(gold_time / pred_time).

    The formula follows the metric's common benchmark definition; equal
    runtimes score exactly 1.
    """
    if pred_time <= 0 or gold_time <= 0:
        raise ValueError("execution times must be positive")
    if not ex_flag:
        return 0.0
    return math.sqrt(gold_time / pred_time)


# ---------------------------------------------------------------------------
# MCQ judging
# ---------------------------------------------------------------------------

@dataclass
class Mcq:
    stem: str
    options: list[str]
    correct_index: int
    allow_idk: bool = True

    def __post_init__(self):
        if not (2 <= len(self.options) <= 5):
            raise ValueError("an MCQ carries between 2 and 5 options")
        if not (0 <= self.correct_index < len(self.options)):
            raise ValueError("correct_index out of range")


@dataclass
class EvalRecord:
    question: str
    gold_sql: str
    gold_table: Optional[ResultTable] = None
    mcqs: list[Mcq] = field(default_factory=list)
    prediction: Optional[PipelineOutcome] = None
    scores: dict[str, float] = field(default_factory=dict)
    mcq_verdicts: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.mcqs and not (1 <= len(self.mcqs) <= 5):
            raise ValueError("a record carries between 1 and 5 MCQs")


_LETTERS = "ABCDEF"
_LETTER_RE = re.compile(r"\b([A-F])\b")


def render_judge_prompt(question: str, table: ResultTable, mcq: Mcq) -> PromptBundle:
    letters = list(_LETTERS[:len(mcq.options)])
    lines = [
        "You are grading the result of a financial data query.",
        "Using ONLY the result table below, answer the multiple-choice question.",
        f"<question>\n{question}\n</question>",
        f"<result>\n{table.render_fixed_width(max_rows=20)}\n</result>",
        f"### Multiple-choice question:\n{mcq.stem}",
        "### Options:",
    ]
    for letter, option in zip(letters, mcq.options):
        lines.append(f"{letter}. {option}")
    if mcq.allow_idk:
        idk_letter = _LETTERS[len(mcq.options)]
        lines.append(f"{idk_letter}. {IDK_TEXT}")
        lines.append(f"Answer with a single option letter; choose {idk_letter} "
                     f"({IDK_TEXT}) if unsure.")
    else:
        lines.append("Answer with a single option letter.")
    return PromptBundle(system_text="", user_turns=["\n".join(lines)])


def _parse_judge_reply(text: str, mcq: Mcq) -> Optional[int]:
    """Selected option index; the IDK letter (or phrase) maps to None."""
    if re.search(r"i\s+don'?t\s+know", text or "", re.I):
        return None
    m = _LETTER_RE.search((text or "").upper())
    if not m:
        return -1  # unparseable
    index = _LETTERS.index(m.group(1))
    if mcq.allow_idk and index == len(mcq.options):
        return None
    if index >= len(mcq.options):
        return -1
    return index


def mcq_judge(record: EvalRecord, judge: Gateway) -> tuple[list[str], float]:
    """Judge every MCQ of a record; returns per-question verdicts and the
    fraction answered correctly.  Unanswered predictions fail everything
    without a single judge call; IDK counts as incorrect."""
    if not record.mcqs:
        return [], 0.0
    if record.prediction is None or not record.prediction.answered \
            or record.prediction.final_table is None:
        return ["unanswered"] * len(record.mcqs), 0.0
    verdicts: list[str] = []
    correct = 0
    for mcq in record.mcqs:
        bundle = render_judge_prompt(record.question, record.prediction.final_table, mcq)
        reply = judge.complete(bundle)
        selected = _parse_judge_reply(reply.text, mcq)
        if selected is None:
            verdicts.append("idk")
        elif selected == -1:
            log.warning("unparseable judge reply: %r", reply.text[:80])
            verdicts.append("unparseable")
        elif selected == mcq.correct_index:
            verdicts.append("correct")
            correct += 1
        else:
            verdicts.append("incorrect")
    return verdicts, correct / len(record.mcqs)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    metric_means: dict[str, float]
    mcq_accuracy: Optional[float]
    status_counts: dict[str, int]
    latency_percentiles: dict[str, float]
    record_count: int

    def to_json(self) -> dict:
        return {
            "metric_means": dict(self.metric_means),
            "mcq_accuracy": self.mcq_accuracy,
            "status_counts": dict(self.status_counts),
            "latency_percentiles": dict(self.latency_percentiles),
            "record_count": self.record_count,
        }

    def render(self) -> str:
        lines = [f"records: {self.record_count}"]
        for key in _METRIC_KEYS:
            if key in self.metric_means:
                lines.append(f"{key.upper():>4}: {self.metric_means[key]:.4f}")
        if self.mcq_accuracy is not None:
            lines.append(f" MCQ: {self.mcq_accuracy:.4f}")
        lines.append("status: " + ", ".join(f"{k}={v}" for k, v in sorted(self.status_counts.items())))
        if self.latency_percentiles:
            lines.append("latency_ms: " + ", ".join(
                f"{k}={v:.1f}" for k, v in sorted(self.latency_percentiles.items())))
        return "\n".join(lines)


def _percentile(values: list[float], q: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, min(len(ordered) - 1, math.ceil(q * len(ordered)) - 1))
    return ordered[idx]


def aggregate(records: list[EvalRecord]) -> MetricsReport:
    """Unweighted per-record metric means; MCQ accuracy pools every MCQ
    across the batch rather than averaging per-record rates."""
    if not records:
        raise ValueError("empty batch")
    means: dict[str, float] = {}
    for key in _METRIC_KEYS:
        values = [float(r.scores[key]) for r in records if key in r.scores]
        if values:
            means[key] = sum(values) / len(values)
    total_mcqs = sum(len(r.mcqs) for r in records)
    mcq_accuracy = None
    if total_mcqs:
        correct = sum(v == "correct" for r in records for v in r.mcq_verdicts)
        mcq_accuracy = correct / total_mcqs
    status_counts: dict[str, int] = {}
    for r in records:
        status = r.prediction.status if r.prediction else "missing"
        status_counts[status] = status_counts.get(status, 0) + 1
    latencies = [r.scores["elapsed_ms"] for r in records if "elapsed_ms" in r.scores]
    percentiles = {"p50": _percentile(latencies, 0.50),
                   "p95": _percentile(latencies, 0.95)} if latencies else {}
    return MetricsReport(means, mcq_accuracy, status_counts, percentiles, len(records))


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------

def load_batch(path: str) -> list[EvalRecord]:
    """JSON-lines batch: one record per line (see docs/eval-batch.md)."""
    records: list[EvalRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON: {exc}") from exc
            mcqs = [Mcq(m["stem"], [str(o) for o in m["options"]],
                        int(m["correct_index"]), bool(m.get("allow_idk", True)))
                    for m in doc.get("mcqs", [])]
            records.append(EvalRecord(question=doc["question"], gold_sql=doc["gold_sql"],
                                      mcqs=mcqs))
    if not records:
        raise ValueError("empty batch")
    return records


def _timed_execution(warehouse: Warehouse, sql: str, limits: ExecLimits):
    started = time.perf_counter()
    result = warehouse.execute_readonly(sql, limits)
    elapsed = max(time.perf_counter() - started, 1e-9)
    return result, elapsed


def evaluate_record(record: EvalRecord, pipeline: Pipeline,
                    judge: Optional[Gateway] = None) -> EvalRecord:
    """Run the pipeline on the record's question and score every metric."""
    warehouse = pipeline.warehouse
    limits = ExecLimits(row_cap=pipeline.config.row_cap, timeout=pipeline.config.exec_timeout)

    gold_report = validate_sql(record.gold_sql, warehouse.catalog, pipeline.policy)
    if not gold_report.ok:
        raise ValueError(f"gold SQL fails validation: {gold_report.summary()}")
    gold_exec_sql = gold_report.rewritten_sql or record.gold_sql
    gold_result, gold_time = _timed_execution(warehouse, gold_exec_sql, limits)
    if not isinstance(gold_result, ResultTable):
        raise ValueError(f"gold SQL produced no table: {gold_result}")
    gold_stmt = _parse_single(record.gold_sql)
    gold_result.ordered = bool(gold_stmt and gold_stmt.body.order_by)
    record.gold_table = gold_result

    started = time.perf_counter()
    outcome = pipeline.run(record.question)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    record.prediction = outcome

    pred_sql = outcome.trace.attempts[-1].sql if outcome.trace.attempts else ""
    record.scores["em"] = float(exact_match(pred_sql, record.gold_sql)) if pred_sql else 0.0
    record.scores["cm"] = component_match(pred_sql, record.gold_sql) if pred_sql else 0.0

    ex_flag = False
    ves = 0.0
    if outcome.answered and outcome.trace.attempts[-1].executed_sql:
        pred_result, pred_time = _timed_execution(
            warehouse, outcome.trace.attempts[-1].executed_sql, limits)
        if isinstance(pred_result, ResultTable):
            ex_flag = execution_accuracy(pred_result, gold_result)
            ves = valid_efficiency_score(ex_flag, pred_time, gold_time)
    record.scores["ex"] = float(ex_flag)
    record.scores["ves"] = ves
    record.scores["elapsed_ms"] = elapsed_ms

    if record.mcqs and judge is not None:
        record.mcq_verdicts, mcq_acc = mcq_judge(record, judge)
        record.scores["mcq"] = mcq_acc
    return record


def run_eval_batch(path: str, pipeline: Pipeline,
                   judge: Optional[Gateway] = None) -> tuple[list[EvalRecord], MetricsReport]:
    records = load_batch(path)
    for record in records:
        evaluate_record(record, pipeline, judge)
    return records, aggregate(records)
