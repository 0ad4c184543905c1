"""Acceptance suite: each test is one release criterion, checked at its
stated tolerance. The conftest hook prints one PASS/FAIL line per
criterion."""

import hashlib
import json
import time
from importlib import resources

import numpy as np
from fastapi.testclient import TestClient

from finask.config import AppConfig, PipelineConfig
from finask.entities import (
    ENTITY_TEMPLATE,
    parse_entity_reply,
    render_entity_prompt,
)
from finask.evalkit import (
    EvalRecord,
    Mcq,
    aggregate,
    component_match,
    exact_match,
    execution_accuracy,
    mcq_judge,
    valid_efficiency_score,
)
from finask.gateway import Gateway, ScriptedProvider
from finask.pipeline import (
    CORRECTION_TEMPLATE,
    GENERATION_SYSTEM_TEMPLATE,
    Pipeline,
    render_correction_prompt,
    stable_trace_view,
)
from finask.service import ServiceState, TraceStore, create_app
from finask.sqlguard import QueryPolicy, validate_sql
from finask.vectors import EmbeddedEntry, VectorIndex
from finask.warehouse import ExecError, ResultTable, Warehouse

from tests.conftest import (
    EXAMPLE_ENTITY_OBJECT,
    EXAMPLE_ENTITY_REPLY,
    EXAMPLE_TASK,
    GOLDEN_QUESTION,
    GOLDEN_ROWS,
    always_no_script,
    broken_then_fixed_script,
    golden_script,
    make_pipeline,
)
from tests.test_evalkit import crafted_records
from tests.test_sqlguard_validator import make_mutation_corpus
from tests.test_sqlguard_parser import make_select_corpus
from tests.test_vectors import brute_force_top_k

sha = lambda text: hashlib.sha256(text.encode("utf-8")).hexdigest()

# Pinned prompt hashes: raw stored templates and reference renderings.
TEMPLATE_HASHES = {
    "entity_extraction.txt": "64c157c50c62afe6b42ed12a26429a18100365924a580da10f35d0ad2c63c583",
    "schema_system.txt": "cf926aab0b5c0e232bca051a6961e92c2b89e43d5b0e6f2e9a13c4325af42f2d",
    "self_correction.txt": "2f57d2638a1e7295ae48f26ea15fc3ccf7cd1e518844426ff8664bcc1caa1144",
}
RENDERED_ENTITY_EXAMPLE_SHA = "2f55a1ddb45122e883cb43c11d9ee1f092691bf3c58e234ca32f3d05575a3675"
RENDERED_CORRECTION_EMPTY_SHA = "1679a55652ab938f5a72f0579ce210c83c5f19f7c19d9570e48bff1777fdcd1f"


def test_golden_query_fixture(test_warehouse, golden_sql, policy):
    report = validate_sql(golden_sql, test_warehouse.catalog, policy)
    assert report.verdict == "rewritten"
    started = time.perf_counter()
    result = test_warehouse.execute_readonly(report.rewritten_sql)
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    assert isinstance(result, ResultTable)
    assert tuple(result.rows[0]) == ("HDB", 2023, 3, 0.64, 0.24)
    growth = {row[0]: row[3] for row in result.rows}
    assert growth["VPB"] == 0.52
    assert growth["MSB"] == 0.35
    assert growth["KLB"] == 0.34
    values = [row[3] for row in result.rows]
    assert values == sorted(values, reverse=True)


def test_prompt_fidelity():
    stored = json.loads(
        (resources.files("finask") / "prompts" / "template_hashes.json").read_text())
    assert stored == TEMPLATE_HASHES
    assert sha(ENTITY_TEMPLATE) == TEMPLATE_HASHES["entity_extraction.txt"]
    assert sha(GENERATION_SYSTEM_TEMPLATE) == TEMPLATE_HASHES["schema_system.txt"]
    assert sha(CORRECTION_TEMPLATE) == TEMPLATE_HASHES["self_correction.txt"]

    bundle = render_entity_prompt(EXAMPLE_TASK)
    assert sha(bundle.user_turns[0]) == RENDERED_ENTITY_EXAMPLE_SHA
    empty = render_correction_prompt(ExecError("empty", "query returned no rows"))
    assert sha(empty.user_turns[-1]) == RENDERED_CORRECTION_EMPTY_SHA

    # the reference extraction exchange reproduces the reference object
    provider = ScriptedProvider.from_config(
        [{"match": EXAMPLE_TASK, "responses": [EXAMPLE_ENTITY_REPLY]}])
    reply = Gateway(provider).complete(bundle)
    entities, warnings = parse_entity_reply(reply.text)
    assert entities.as_dict() == EXAMPLE_ENTITY_OBJECT
    assert warnings == []


def _service_client(tmp_path, warehouse, search, script, policy) -> TestClient:
    config = AppConfig()
    config.service.trace_dir = str(tmp_path / "traces")
    gateway = Gateway(ScriptedProvider.from_config(script))
    pipeline = Pipeline(warehouse, search, gateway, policy, config.pipeline)
    traces = TraceStore(config.service.trace_dir, 1000)
    state = ServiceState(config, warehouse, search, pipeline, gateway, traces, None)
    return TestClient(create_app(state), raise_server_exceptions=False)


def test_end_to_end_scripted_runs(tmp_path, test_warehouse, search_service,
                                  policy, golden_sql):
    # golden script through the HTTP surface
    started = time.perf_counter()
    client = _service_client(tmp_path, test_warehouse, search_service,
                             golden_script(golden_sql), policy)
    body = client.post("/api/ask", json={"question": GOLDEN_QUESTION}).json()
    assert time.perf_counter() - started < 5.0
    assert body["status"] == "answered"
    assert [tuple(r) for r in body["rows"]] == GOLDEN_ROWS

    # broken first attempt, fixed on correction: exactly two attempts
    started = time.perf_counter()
    pipe = make_pipeline(test_warehouse, search_service,
                         broken_then_fixed_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert time.perf_counter() - started < 5.0
    assert outcome.status == "answered"
    assert len(outcome.trace.attempts) == 2

    # persistent refusal: exhausted after exactly 1 + max_iterations attempts
    started = time.perf_counter()
    config = PipelineConfig(max_iterations=3)
    pipe = make_pipeline(test_warehouse, search_service, always_no_script(),
                         policy, config)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert time.perf_counter() - started < 5.0
    assert outcome.status == "exhausted"
    assert len(outcome.trace.attempts) == 1 + config.max_iterations


def test_guard_suite(golden_sql, policy, test_warehouse):
    catalog = test_warehouse.catalog
    corpus = make_mutation_corpus()
    assert len(corpus) >= 200
    rejected = sum(validate_sql(sql, catalog, policy).verdict == "reject" for sql in corpus)
    assert rejected == len(corpus)  # 100% rejection

    report = validate_sql(golden_sql, catalog, policy)
    assert report.verdict == "rewritten"
    assert report.rewritten_sql.endswith("LIMIT 1000")

    # quarter rule: positive on the reference query, negative on a
    # constructed query without the predicate
    assert all(v.rule != "quarter_condition" for v in report.violations)
    negative = validate_sql("SELECT data FROM financial_ratio LIMIT 10", catalog, policy)
    assert negative.verdict == "reject"
    assert any(v.rule == "quarter_condition" for v in negative.violations)

    # rewrite idempotence across the generated SELECT corpus
    for sql in make_select_corpus():
        first = validate_sql(sql, catalog, policy)
        assert first.ok
        if first.verdict == "rewritten":
            assert validate_sql(first.rewritten_sql, catalog, policy).verdict == "pass"


def test_vector_oracle():
    rng = np.random.default_rng(424242)
    index = VectorIndex()
    entries = {}
    for i in range(1000):
        vec = rng.normal(size=24)
        eid = f"v{i:04d}"
        entries[eid] = vec
        index.upsert(EmbeddedEntry("company", eid, eid, vec))
    # a tied pair must come back in ascending id order
    tied = rng.normal(size=24)
    index.upsert(EmbeddedEntry("company", "tie_b", "tie_b", tied.copy()))
    index.upsert(EmbeddedEntry("company", "tie_a", "tie_a", tied.copy()))
    entries["tie_a"] = tied
    entries["tie_b"] = tied

    mismatches = 0
    for _ in range(100):
        query = rng.normal(size=24)
        k = int(rng.integers(1, 30))
        got = [c.id for c in index.search("company", query, k)]
        want = [eid for eid, _ in brute_force_top_k(entries, query, k)]
        if got != want:
            mismatches += 1
    assert mismatches == 0

    hits = index.search("company", tied, 2)
    assert [h.id for h in hits] == ["tie_a", "tie_b"]


def test_metric_correctness(golden_sql):
    # hand-derived unit values
    assert exact_match("select  1", "SELECT 1;") is True
    assert exact_match(golden_sql, golden_sql) is True
    assert exact_match(golden_sql, golden_sql.replace("DESC", "ASC")) is False

    full = ("SELECT a, b FROM t JOIN u ON t.id = u.id WHERE x = 1 AND quarter = 0 "
            "GROUP BY a ORDER BY b DESC LIMIT 10")
    assert component_match(full, full) == 1.0
    assert abs(component_match(full.replace("LIMIT 10", "LIMIT 99"), full) - 5 / 6) < 1e-9
    assert component_match("SELECT z FROM w", full) == 0.0

    gold = ResultTable(["s", "v"], [("HDB", 0.64), ("VPB", 0.52)])
    assert execution_accuracy(ResultTable(["s", "v"], [("VPB", 0.52), ("HDB", 0.64)]), gold)
    assert not execution_accuracy(ResultTable(["s", "v"], [("HDB", 0.63), ("VPB", 0.52)]), gold)
    assert not execution_accuracy(
        ResultTable(["s", "v"], [("HDB", 0.64), ("VPB", 0.52), ("X", 0.1)]), gold)

    assert valid_efficiency_score(True, 7.7, 7.7) == 1.0
    assert valid_efficiency_score(False, 1.0, 1.0) == 0.0
    assert abs(valid_efficiency_score(True, 4.0, 1.0) - 0.5) < 1e-12

    # aggregate over ten crafted records vs independent recomputation
    records = crafted_records()
    report = aggregate(records)
    for key in ("em", "cm", "ex", "ves"):
        expected = sum(r.scores[key] for r in records) / len(records)
        assert abs(report.metric_means[key] - expected) < 1e-9
    verdicts = [v for r in records for v in r.mcq_verdicts]
    assert abs(report.mcq_accuracy - sum(v == "correct" for v in verdicts) / len(verdicts)) < 1e-9

    # scripted judge: all-correct, all-IDK and unanswered protocols
    table = ResultTable(["stock_code"], [("HDB",)])
    from finask.pipeline import PipelineOutcome, PipelineTrace
    answered = PipelineOutcome("answered", table, PipelineTrace("t", "q"))
    record = EvalRecord("q", "SELECT 1", mcqs=[Mcq(f"s{i}", ["a", "b"], 0)
                                               for i in range(4)],
                        prediction=answered)
    judge = Gateway(ScriptedProvider.from_config(
        [{"match": "Multiple-choice", "responses": ["A"]}]))
    verdicts, accuracy = mcq_judge(record, judge)
    assert accuracy == 1.0
    idk_judge = Gateway(ScriptedProvider.from_config(
        [{"match": "Multiple-choice", "responses": ["I don't know"]}]))
    verdicts, accuracy = mcq_judge(record, idk_judge)
    assert verdicts == ["idk"] * 4 and accuracy == 0.0
    unanswered = EvalRecord("q", "SELECT 1",
                            mcqs=[Mcq(f"s{i}", ["a", "b"], 0) for i in range(3)],
                            prediction=None)
    verdicts, accuracy = mcq_judge(unanswered, idk_judge)
    assert verdicts == ["unanswered"] * 3 and accuracy == 0.0


def test_scripted_trace_determinism(test_warehouse, search_service, policy, golden_sql):
    def run(script_builder):
        pipe = make_pipeline(test_warehouse, search_service, script_builder(), policy)
        outcome = pipe.run(GOLDEN_QUESTION)
        return json.dumps(stable_trace_view(outcome.trace.to_json()), sort_keys=True)

    for builder in (lambda: golden_script(golden_sql),
                    lambda: broken_then_fixed_script(golden_sql),
                    always_no_script):
        assert run(builder) == run(builder)
