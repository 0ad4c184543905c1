"""Question-to-answer orchestration: few-shot retrieval, generation prompt
assembly, SQL extraction and the execute/inspect/self-correct loop.

One run is strictly sequential: extract entities, link them, optionally
explore the warehouse with probe queries, retrieve few-shots, generate
SQL, then loop guard -> execute -> correction model until the model
accepts the result (answered), the correction budget runs out
(exhausted) or the gateway fails hard (failed).  Every completion, probe
and guard report lands in the trace.
"""

from __future__ import annotations

import re
import time
import uuid
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Union

import yaml

from finask.config import PipelineConfig
from finask.entities import (
    EntityParseError,
    ExtractedEntities,
    LinkedCandidates,
    link_entities,
    parse_entity_reply,
    render_entity_prompt,
)
from finask.gateway import Gateway, GatewayError, ModelReply, PromptBundle
from finask.schema import SchemaCatalog
from finask.sqlguard import ValidationReport, validate_sql
from finask.vectors import SearchService
from finask.warehouse import ExecError, ExecLimits, ResultTable, Warehouse


class SqlExtractionError(ValueError):
    """The reply contained no extractable SQL."""


def _load_template(name: str) -> str:
    return (resources.files("finask") / "prompts" / name).read_text(encoding="utf-8")


GENERATION_SYSTEM_TEMPLATE = _load_template("schema_system.txt")
CORRECTION_TEMPLATE = _load_template("self_correction.txt")


# ---------------------------------------------------------------------------
# Few-shot store
# ---------------------------------------------------------------------------

@dataclass
class FewShotExample:
    question: str
    sql: str
    commentary: Optional[str] = None


def load_fewshots(path: Optional[str], catalog: SchemaCatalog, policy) -> list[FewShotExample]:
    """Load the few-shot store; every example's SQL must clear the guard."""
    if path is None:
        raw = (resources.files("finask") / "fixtures" / "fewshots.yaml").read_text(encoding="utf-8")
        doc = yaml.safe_load(raw)
    else:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    examples = []
    for i, item in enumerate(doc or []):
        example = FewShotExample(str(item["question"]), str(item["sql"]),
                                 item.get("commentary"))
        report = validate_sql(example.sql, catalog, policy)
        if not report.ok:
            raise ValueError(f"few-shot example {i} fails validation: {report.summary()}")
        examples.append(example)
    return examples


def retrieve_fewshots(question: str, search: SearchService, k: int) -> list[FewShotExample]:
    """Top-k stored examples by question similarity, deduplicated by SQL."""
    if search.index.size("fewshot") == 0:
        return []
    seen_sql: set[str] = set()
    out: list[FewShotExample] = []
    for cand in search.search_text("fewshot", question, k):
        sql = cand.metadata.get("sql", "")
        if sql in seen_sql:
            continue
        seen_sql.add(sql)
        out.append(FewShotExample(cand.metadata.get("question", cand.surface_text),
                                  sql, cand.metadata.get("commentary") or None))
    return out


# ---------------------------------------------------------------------------
# Prompt assembly and reply parsing
# ---------------------------------------------------------------------------

_FIELD_LABELS = ("industry", "company_name", "financial_statement_account", "financial_ratio")


def assemble_generation_prompt(question: str, catalog: SchemaCatalog,
                               candidates: Optional[LinkedCandidates],
                               fewshots: list[FewShotExample],
                               exploration_notes: Optional[str] = None) -> PromptBundle:
    """System text is the stored schema prompt; the user turn stacks the
    task, the candidate mapping block, few-shot examples and exploration
    notes in that fixed order, eliding empty sections."""
    parts = [f"<task>\n{question}\n</task>"]
    if candidates is not None and candidates.total() > 0:
        lines = ["### Mapping table:"]
        for field_name in _FIELD_LABELS:
            lcs = candidates.fields.get(field_name, [])
            if not lcs:
                continue
            lines.append(f"#### {field_name}")
            for lc in lcs:
                label = (catalog.category_codes.get(lc.resolved_code)
                         or catalog.ratio_codes.get(lc.resolved_code)
                         or lc.candidate.surface_text)
                lines.append(f"- `{lc.resolved_code}`: {label}")
        parts.append("\n".join(lines))
    if fewshots:
        lines = ["### Examples:"]
        for example in fewshots:
            lines.append(f"#### Question:\n{example.question}")
            lines.append(f"#### SQL:\n```sql\n{example.sql}\n```")
            if example.commentary:
                lines.append(f"#### Commentary:\n{example.commentary}")
        parts.append("\n".join(lines))
    if exploration_notes:
        parts.append(f"### Exploration:\n{exploration_notes}")
    return PromptBundle(system_text=GENERATION_SYSTEM_TEMPLATE,
                        user_turns=["\n\n".join(parts)])


_SQL_SECTION_RE = re.compile(r"###\s*SQL Query:?\s*\n(.*?)(?=\n###\s|\Z)", re.S)
_SQL_FENCE_RE = re.compile(r"```(?:sql)?\s*\n(.*?)```", re.S | re.I)


def _strip_fence(text: str) -> str:
    m = _SQL_FENCE_RE.search(text)
    return m.group(1).strip() if m else text.strip()


def extract_sql(reply_text: str) -> str:
    """The last '### SQL Query' section, else the first fenced block, else
    the whole reply trimmed. Empty extraction is an error."""
    sections = _SQL_SECTION_RE.findall(reply_text or "")
    if sections:
        sql = _strip_fence(sections[-1])
    else:
        fence = _SQL_FENCE_RE.search(reply_text or "")
        sql = fence.group(1).strip() if fence else (reply_text or "").strip()
    if not sql:
        raise SqlExtractionError("reply contained no SQL")
    return sql


def render_sql_result(result: Union[ResultTable, ExecError], max_rows: int = 20) -> str:
    """What the correction model sees inside <result>: a fixed-width table,
    nothing at all for an empty result, or the error line."""
    if isinstance(result, ResultTable):
        return result.render_fixed_width(max_rows=max_rows)
    if result.kind == "empty":
        return ""
    return f"ERROR ({result.kind}): {result.message}"


def render_correction_prompt(result: Union[ResultTable, ExecError],
                             context_turns: tuple[str, ...] = (),
                             max_rows: int = 20) -> PromptBundle:
    body = CORRECTION_TEMPLATE.format(sql_result=render_sql_result(result, max_rows))
    return PromptBundle(system_text=GENERATION_SYSTEM_TEMPLATE,
                        user_turns=[*context_turns, body])


@dataclass
class CorrectionDecision:
    verdict: str  # yes | no
    reasoning: str
    new_sql: Optional[str] = None
    warning: Optional[str] = None

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "reasoning": self.reasoning,
                "new_sql": self.new_sql, "warning": self.warning}


_DECISION_RE = re.compile(r"###\s*Decision:?\s*\n\s*\**([A-Za-z]+)\**", re.I)
_REASONING_RE = re.compile(r"###\s*Reasoning:?\s*\n(.*?)(?=\n###\s|\Z)", re.S | re.I)


def parse_correction_reply(text: str) -> CorrectionDecision:
    """Yes/No from the Decision heading; a missing heading conservatively
    counts as No with the full reply as reasoning."""
    m = _DECISION_RE.search(text or "")
    if m is None:
        return CorrectionDecision("no", (text or "").strip(),
                                  warning="no Decision section in reply")
    verdict = "yes" if m.group(1).lower().startswith("y") else "no"
    reasoning_match = _REASONING_RE.search(text)
    reasoning = reasoning_match.group(1).strip() if reasoning_match else ""
    new_sql = None
    if verdict == "no":
        sections = _SQL_SECTION_RE.findall(text)
        if sections:
            candidate = _strip_fence(sections[-1])
            new_sql = candidate or None
        else:
            fence = _SQL_FENCE_RE.search(text)
            if fence:
                new_sql = fence.group(1).strip() or None
    return CorrectionDecision(verdict, reasoning, new_sql)


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass
class SqlAttempt:
    iteration: int
    sql: str
    guard: ValidationReport
    executed_sql: Optional[str]
    execution: Union[ResultTable, ExecError, None]
    correction_decision: Optional[CorrectionDecision] = None

    def to_json(self) -> dict:
        execution: Optional[dict] = None
        if isinstance(self.execution, ResultTable):
            execution = {"kind": "table", "columns": self.execution.columns,
                         "rows": [list(r) for r in self.execution.rows]}
        elif isinstance(self.execution, ExecError):
            execution = {"kind": "error", "error_kind": self.execution.kind,
                         "message": self.execution.message}
        return {
            "iteration": self.iteration,
            "sql": self.sql,
            "guard": {
                "verdict": self.guard.verdict,
                "violations": [{"rule": v.rule, "location": v.location, "message": v.message}
                               for v in self.guard.violations],
                "rewritten_sql": self.guard.rewritten_sql,
                "notes": list(self.guard.notes),
            },
            "executed_sql": self.executed_sql,
            "execution": execution,
            "correction_decision": self.correction_decision.to_json()
            if self.correction_decision else None,
        }


@dataclass
class ProbeRecord:
    sql: str
    guard_verdict: str
    outcome: str

    def to_json(self) -> dict:
        return {"sql": self.sql, "guard_verdict": self.guard_verdict, "outcome": self.outcome}


@dataclass
class PipelineTrace:
    trace_id: str
    question: str
    entities: Optional[ExtractedEntities] = None
    entity_warnings: list[str] = field(default_factory=list)
    linked: Optional[LinkedCandidates] = None
    fewshots: list[FewShotExample] = field(default_factory=list)
    exploration_notes: Optional[str] = None
    probes: list[ProbeRecord] = field(default_factory=list)
    attempts: list[SqlAttempt] = field(default_factory=list)
    model_replies: list[ModelReply] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        linked = None
        if self.linked is not None:
            linked = {
                name: [{"term": lc.term, "resolved_code": lc.resolved_code,
                        "score": lc.candidate.score, "surface_text": lc.candidate.surface_text}
                       for lc in lcs]
                for name, lcs in self.linked.fields.items()
            }
        doc = {
            "trace_id": self.trace_id,
            "question": self.question,
            "entities": self.entities.as_dict() if self.entities else None,
            "entity_warnings": list(self.entity_warnings),
            "linked_candidates": linked,
            "fewshots": [{"question": f.question, "sql": f.sql, "commentary": f.commentary}
                         for f in self.fewshots],
            "probes": [p.to_json() for p in self.probes],
            "attempts": [a.to_json() for a in self.attempts],
            "model_replies": [r.to_json() for r in self.model_replies],
            "timings": dict(self.timings),
            "created_at": self.created_at,
        }
        if self.exploration_notes is not None:
            doc["exploration_notes"] = self.exploration_notes
        return doc


VOLATILE_TRACE_FIELDS = ("trace_id", "created_at", "timings", "latency", "elapsed_ms")


def stable_trace_view(doc) -> object:
    """Trace document with volatile fields (ids, clocks, latencies) removed;
    two runs of the same scripted question compare equal under this view."""
    if isinstance(doc, dict):
        return {k: stable_trace_view(v) for k, v in doc.items()
                if k not in VOLATILE_TRACE_FIELDS}
    if isinstance(doc, list):
        return [stable_trace_view(v) for v in doc]
    return doc


@dataclass
class PipelineOutcome:
    status: str  # answered | exhausted | failed
    final_table: Optional[ResultTable]
    trace: PipelineTrace

    @property
    def answered(self) -> bool:
        return self.status == "answered"


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------

class Pipeline:
    def __init__(self, warehouse: Warehouse, search: SearchService, gateway: Gateway,
                 policy, config: Optional[PipelineConfig] = None):
        self.warehouse = warehouse
        self.search = search
        self.gateway = gateway
        self.policy = policy
        self.config = config or PipelineConfig()

    @property
    def catalog(self) -> SchemaCatalog:
        return self.warehouse.catalog

    def run(self, question: str, multistep: Optional[bool] = None,
            trace_id: Optional[str] = None) -> PipelineOutcome:
        trace = PipelineTrace(trace_id=trace_id or uuid.uuid4().hex, question=question)
        record = trace.model_replies.append
        try:
            return self._run(question, trace, record, multistep)
        except GatewayError as exc:
            trace.entity_warnings.append(f"gateway failure: {exc}")
            return PipelineOutcome("failed", None, trace)

    def _run(self, question, trace, record, multistep) -> PipelineOutcome:
        cfg = self.config
        use_multistep = cfg.multistep if multistep is None else multistep

        with _timed(trace, "entity_extraction"):
            reply = self.gateway.complete(render_entity_prompt(question), on_reply=record)
            try:
                entities, warnings = parse_entity_reply(reply.text)
            except EntityParseError as exc:
                entities, warnings = ExtractedEntities(), [f"entity reply unparseable: {exc}"]
            trace.entities, trace.entity_warnings = entities, warnings

        with _timed(trace, "row_selection"):
            trace.linked = link_entities(entities, self.search, k=cfg.candidate_k)

        if use_multistep:
            with _timed(trace, "exploration"):
                trace.exploration_notes = self._explore(question, trace, record)

        with _timed(trace, "fewshot_retrieval"):
            trace.fewshots = retrieve_fewshots(question, self.search, cfg.fewshot_k)

        with _timed(trace, "generation"):
            bundle = assemble_generation_prompt(question, self.catalog, trace.linked,
                                                trace.fewshots, trace.exploration_notes)
            gen_user_text = bundle.user_turns[0]
            reply = self.gateway.complete(bundle, on_reply=record)
            try:
                sql = extract_sql(reply.text)
            except SqlExtractionError as exc:
                sql = ""
                trace.entity_warnings.append(str(exc))

        with _timed(trace, "correction_loop"):
            return self._correction_loop(sql, gen_user_text, trace, record)

    def _correction_loop(self, sql, gen_user_text, trace, record) -> PipelineOutcome:
        cfg = self.config
        limits = ExecLimits(row_cap=cfg.row_cap, timeout=cfg.exec_timeout)
        for iteration in range(cfg.max_iterations + 1):
            attempt = self._attempt(iteration, sql, limits)
            trace.attempts.append(attempt)
            if iteration == cfg.max_iterations:
                # budget exhausted: last attempt goes unjudged
                return PipelineOutcome("exhausted", None, trace)
            bundle = render_correction_prompt(
                attempt.execution, context_turns=(gen_user_text,),
                max_rows=cfg.correction_max_rows)
            reply = self.gateway.complete(bundle, on_reply=record)
            decision = parse_correction_reply(reply.text)
            attempt.correction_decision = decision
            if decision.verdict == "yes":
                if isinstance(attempt.execution, ResultTable):
                    return PipelineOutcome("answered", attempt.execution, trace)
                # accepting a failed execution answers nothing
                decision.warning = (decision.warning or "") + \
                    " [accepted a non-table result; treated as exhausted]"
                return PipelineOutcome("exhausted", None, trace)
            if not decision.new_sql:
                return PipelineOutcome("exhausted", None, trace)
            sql = decision.new_sql
        raise AssertionError("unreachable")

    def _attempt(self, iteration: int, sql: str, limits: ExecLimits) -> SqlAttempt:
        report = validate_sql(sql, self.catalog, self.policy)
        if report.ok:
            executed = report.rewritten_sql if report.rewritten_sql else sql
            execution: Union[ResultTable, ExecError] = \
                self.warehouse.execute_readonly(executed, limits)
        else:
            # a rejection feeds the correction loop like an execution error
            executed = None
            execution = ExecError("semantic", f"query rejected: {report.summary()}")
        return SqlAttempt(iteration=iteration, sql=sql, guard=report,
                          executed_sql=executed, execution=execution)

    # -- exploration -----------------------------------------------------------

    def _explore(self, question: str, trace: PipelineTrace, record) -> Optional[str]:
        cfg = self.config
        ask = PromptBundle(
            system_text=GENERATION_SYSTEM_TEMPLATE,
            user_turns=[
                f"<task>\n{question}\n</task>\n\n### Exploration:\n"
                f"Before writing the final query, propose up to {cfg.probe_budget} short "
                "read-only SQL probe queries (DISTINCT code lookups, row counts) that would "
                "help you understand the available data. Return each probe in its own "
                "```sql fenced block."],
        )
        reply = self.gateway.complete(ask, on_reply=record)
        probes = _SQL_FENCE_RE.findall(reply.text)[:cfg.probe_budget]
        notes: list[str] = []
        limits = ExecLimits(row_cap=10, timeout=cfg.exec_timeout)
        # probes are schema lookups (DISTINCT codes, counts); the quarter
        # rule stays off for them, read-only and LIMIT stay on
        probe_policy = replace(self.policy, require_quarter_condition=False)
        for probe_sql in (p.strip() for p in probes if p.strip()):
            report = validate_sql(probe_sql, self.catalog, probe_policy)
            if not report.ok:
                trace.probes.append(ProbeRecord(probe_sql, report.verdict,
                                                f"rejected: {report.summary()}"))
                continue
            executed = report.rewritten_sql if report.rewritten_sql else probe_sql
            result = self.warehouse.execute_readonly(executed, limits)
            rendered = render_sql_result(result, max_rows=10) or "(no rows)"
            trace.probes.append(ProbeRecord(probe_sql, report.verdict, rendered))
            notes.append(f"probe: {probe_sql}\n{rendered}")
        return "\n\n".join(notes) if notes else None


class _timed:
    def __init__(self, trace: PipelineTrace, stage: str):
        self.trace, self.stage = trace, stage

    def __enter__(self):
        self.started = time.monotonic()

    def __exit__(self, *exc):
        self.trace.timings[self.stage] = time.monotonic() - self.started
        return False
