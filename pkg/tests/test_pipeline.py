import json

import pytest

from finask.config import PipelineConfig
from finask.gateway import Gateway, ScriptedProvider
from finask.pipeline import (
    FewShotExample,
    Pipeline,
    SqlExtractionError,
    assemble_generation_prompt,
    extract_sql,
    load_fewshots,
    parse_correction_reply,
    render_correction_prompt,
    retrieve_fewshots,
    stable_trace_view,
)
from finask.sqlguard import QueryPolicy
from finask.vectors import SearchService
from finask.warehouse import ExecError, ResultTable

from tests.conftest import (
    ALWAYS_NO_SQL,
    ENTITY_REPLY_BANKING,
    GOLDEN_QUESTION,
    GOLDEN_ROWS,
    always_no_script,
    broken_then_fixed_script,
    golden_script,
    make_pipeline,
)


# -- extract_sql -----------------------------------------------------------------

def test_extract_sql_from_decision_sections():
    reply = "### Decision:\nNo\n### Reasoning:\nr\n### SQL Query:\nSELECT 1"
    assert extract_sql(reply) == "SELECT 1"


def test_extract_sql_from_fence():
    assert extract_sql("```sql\nSELECT 2\n```") == "SELECT 2"


def test_extract_sql_empty_is_error():
    with pytest.raises(SqlExtractionError):
        extract_sql("")


def test_extract_sql_last_section_wins():
    reply = ("### SQL Query:\nSELECT 1\n### Reasoning:\nbetter idea\n"
             "### SQL Query:\n```sql\nSELECT 2\n```")
    assert extract_sql(reply) == "SELECT 2"


def test_extract_sql_whole_reply_fallback():
    assert extract_sql("  SELECT 3  ") == "SELECT 3"


# -- correction prompt ----------------------------------------------------------

def test_correction_prompt_empty_result_renders_empty_tag():
    bundle = render_correction_prompt(ExecError("empty", "query returned no rows"))
    assert "<result>\n\n</result>" in bundle.user_turns[-1]
    assert "return nothing, which is incorrect" in bundle.user_turns[-1].replace("preivous", "previous") \
        or "return nothing" in bundle.user_turns[-1]


def test_correction_prompt_contains_golden_rows(test_warehouse, golden_sql):
    table = test_warehouse.execute_readonly(golden_sql)
    bundle = render_correction_prompt(table)
    assert "HDB" in bundle.user_turns[-1]


def test_correction_prompt_byte_stable(test_warehouse, golden_sql):
    table = test_warehouse.execute_readonly(golden_sql)
    assert render_correction_prompt(table) == render_correction_prompt(table)


def test_correction_prompt_row_cap():
    table = ResultTable(["n"], [(i,) for i in range(50)])
    text = render_correction_prompt(table, max_rows=20).user_turns[-1]
    assert "(30 more rows)" in text


def test_correction_prompt_renders_error_kinds():
    text = render_correction_prompt(ExecError("syntax", "bad token")).user_turns[-1]
    assert "ERROR (syntax): bad token" in text


# -- parse_correction_reply -------------------------------------------------------

def test_parse_correction_yes():
    decision = parse_correction_reply("### Decision:\nYES")
    assert (decision.verdict, decision.new_sql) == ("yes", None)


def test_parse_correction_no_with_sql():
    decision = parse_correction_reply(
        "### Decision:\nNo\n### Reasoning:\nwrong year\n### SQL Query:\nSELECT 3")
    assert decision.verdict == "no"
    assert decision.reasoning == "wrong year"
    assert decision.new_sql == "SELECT 3"


def test_parse_correction_garbage_is_conservative_no():
    decision = parse_correction_reply("complete nonsense with no headings")
    assert decision.verdict == "no"
    assert decision.new_sql is None
    assert decision.warning is not None
    assert "nonsense" in decision.reasoning


def test_parse_correction_case_insensitive():
    assert parse_correction_reply("### decision:\nyes").verdict == "yes"
    assert parse_correction_reply("### DECISION:\nNO").verdict == "no"


# -- few-shot retrieval ------------------------------------------------------------

def test_fewshot_store_validates_sql(test_warehouse, policy, tmp_path):
    bad = tmp_path / "fewshots.yaml"
    bad.write_text("- question: q\n  sql: DELETE FROM financial_ratio\n")
    with pytest.raises(ValueError, match="fails validation"):
        load_fewshots(str(bad), test_warehouse.catalog, policy)


def test_fewshot_single_example_always_returned(search_service_factory=None):
    svc = SearchService()
    svc.add_text("fewshot", "f0", "ROE of HPG",
                 {"sql": "SELECT 1", "question": "ROE of HPG"})
    got = retrieve_fewshots("anything at all", svc, k=3)
    assert len(got) == 1
    assert got[0].sql == "SELECT 1"


def test_fewshot_identical_question_ranked_first(search_service):
    got = retrieve_fewshots("ROE of HPG in 2023", search_service, k=3)
    assert got[0].question == "ROE of HPG in 2023"


def test_fewshot_empty_store_returns_empty():
    assert retrieve_fewshots("q", SearchService(), k=3) == []


def test_fewshot_matches_brute_force_oracle():
    # oracle: rank the stored questions by cosine on the same embedder
    svc = SearchService()
    questions = [f"question about topic {i} and metric {i % 7}" for i in range(50)]
    for i, q in enumerate(questions):
        svc.add_text("fewshot", f"f{i:02d}", q, {"sql": f"SELECT {i}", "question": q})
    import numpy as np
    emb = svc.embedder
    query = "question about metric 3"
    qv = emb.embed(query)
    scored = sorted(
        ((float(qv @ emb.embed(q)), f"SELECT {i}") for i, q in enumerate(questions)),
        key=lambda t: -t[0])
    expected = [sql for _, sql in scored[:3]]
    got = [f.sql for f in retrieve_fewshots(query, svc, k=3)]
    assert got == expected


def test_fewshot_dedupes_by_sql():
    svc = SearchService()
    for i, q in enumerate(["ROE of HPG", "HPG return on equity"]):
        svc.add_text("fewshot", f"f{i}", q, {"sql": "SELECT 1", "question": q})
    got = retrieve_fewshots("ROE HPG", svc, k=5)
    assert len(got) == 1


# -- prompt assembly ---------------------------------------------------------------

def test_generation_prompt_contains_quarter_note(test_warehouse):
    bundle = assemble_generation_prompt("q", test_warehouse.catalog, None, [])
    assert "Always include a `quarter` condition" in bundle.system_text


def test_generation_prompt_wellformed_when_empty(test_warehouse):
    bundle = assemble_generation_prompt("bare question", test_warehouse.catalog, None, [])
    assert bundle.user_turns == ["<task>\nbare question\n</task>"]


def test_generation_prompt_deterministic(test_warehouse, search_service):
    from finask.entities import ExtractedEntities, link_entities
    linked = link_entities(ExtractedEntities(financial_ratio=["ROE"]), search_service)
    fewshots = [FewShotExample("q1", "SELECT 1", None)]
    a = assemble_generation_prompt("q", test_warehouse.catalog, linked, fewshots)
    b = assemble_generation_prompt("q", test_warehouse.catalog, linked, fewshots)
    assert a == b


def test_generation_prompt_section_order(test_warehouse, search_service):
    from finask.entities import ExtractedEntities, link_entities
    linked = link_entities(
        ExtractedEntities(company_name=["HDB"], financial_ratio=["credit growth"]),
        search_service, k=2)
    fewshots = [FewShotExample("sample q", "SELECT 1 FROM financial_ratio", "note")]
    text = assemble_generation_prompt(
        "the task", test_warehouse.catalog, linked, fewshots, "probe notes").user_turns[0]
    order = [text.index("<task>"), text.index("### Mapping table:"),
             text.index("### Examples:"), text.index("### Exploration:")]
    assert order == sorted(order)
    assert "- `CDGYoY`: Credit growth year over year" in text


# -- full runs ----------------------------------------------------------------------

def test_run_golden_script_answers(test_warehouse, search_service, policy, golden_sql):
    pipe = make_pipeline(test_warehouse, search_service, golden_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "answered"
    assert outcome.final_table.rows[0] == GOLDEN_ROWS[0]
    assert [tuple(r) for r in outcome.final_table.rows[:4]] == GOLDEN_ROWS
    assert len(outcome.trace.attempts) == 1
    assert outcome.trace.attempts[0].guard.verdict == "rewritten"


def test_run_broken_then_fixed(test_warehouse, search_service, policy, golden_sql):
    pipe = make_pipeline(test_warehouse, search_service,
                         broken_then_fixed_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "answered"
    assert len(outcome.trace.attempts) == 2
    first, second = outcome.trace.attempts
    assert first.guard.verdict == "reject"
    assert isinstance(first.execution, ExecError)
    assert first.correction_decision.verdict == "no"
    assert second.correction_decision.verdict == "yes"


def test_run_always_no_exhausts_budget(test_warehouse, search_service, policy):
    config = PipelineConfig(max_iterations=3)
    pipe = make_pipeline(test_warehouse, search_service, always_no_script(), policy, config)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "exhausted"
    assert len(outcome.trace.attempts) == 1 + config.max_iterations
    # budget exhaustion leaves the final attempt unjudged
    assert outcome.trace.attempts[-1].correction_decision is None
    assert all(a.correction_decision is not None for a in outcome.trace.attempts[:-1])


def test_loop_bound_various_budgets(test_warehouse, search_service, policy):
    for budget in (0, 1, 2, 5):
        config = PipelineConfig(max_iterations=budget)
        pipe = make_pipeline(test_warehouse, search_service, always_no_script(), policy, config)
        outcome = pipe.run(GOLDEN_QUESTION)
        assert len(outcome.trace.attempts) <= 1 + budget
        assert outcome.status == "exhausted"


def test_guard_supremacy(test_warehouse, search_service, policy, golden_sql):
    # nothing executes without a pass/rewritten verdict in the same attempt
    pipe = make_pipeline(test_warehouse, search_service,
                         broken_then_fixed_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    for attempt in outcome.trace.attempts:
        if attempt.executed_sql is not None:
            assert attempt.guard.verdict in ("pass", "rewritten")
        else:
            assert attempt.guard.verdict == "reject"


def test_trace_accounts_every_completion(test_warehouse, search_service, policy, golden_sql):
    pipe = make_pipeline(test_warehouse, search_service,
                         broken_then_fixed_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    # entity + generation + 2 corrections
    assert len(outcome.trace.model_replies) == 4


def test_answered_soundness(test_warehouse, search_service, policy, golden_sql):
    pipe = make_pipeline(test_warehouse, search_service, golden_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    last = outcome.trace.attempts[-1]
    replayed = test_warehouse.execute_readonly(last.executed_sql)
    assert replayed.rows == outcome.final_table.rows


def test_trace_determinism_under_scripted_provider(test_warehouse, search_service,
                                                   policy, golden_sql):
    def run_once():
        pipe = make_pipeline(test_warehouse, search_service,
                             broken_then_fixed_script(golden_sql), policy)
        return pipe.run(GOLDEN_QUESTION)

    doc1 = stable_trace_view(run_once().trace.to_json())
    doc2 = stable_trace_view(run_once().trace.to_json())
    assert json.dumps(doc1, sort_keys=True) == json.dumps(doc2, sort_keys=True)


def test_gateway_hard_error_yields_failed(test_warehouse, search_service, policy):
    # no rule matches the entity prompt: hard provider failure
    pipe = make_pipeline(test_warehouse, search_service,
                         [{"match": "never-match-zzz", "responses": ["x"]}], policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "failed"
    assert outcome.final_table is None
    assert outcome.trace.trace_id


def test_unparseable_entity_reply_proceeds(test_warehouse, search_service, policy, golden_sql):
    script = [
        {"match": "Based on given question, analyze", "responses": ["no json at all"]},
        {"match": "<correction>", "responses": ["### Decision:\nYES"]},
        {"match": "mapping table", "responses": [f"```sql\n{golden_sql}\n```"]},
    ]
    pipe = make_pipeline(test_warehouse, search_service, script, policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "answered"
    assert any("unparseable" in w for w in outcome.trace.entity_warnings)
    assert outcome.trace.entities.is_empty()


# -- exploration --------------------------------------------------------------------

def probe_script(golden_sql: str, probes: list[str]) -> list[dict]:
    fenced = "\n".join(f"```sql\n{p}\n```" for p in probes)
    return [
        {"match": "Based on given question, analyze", "responses": [ENTITY_REPLY_BANKING]},
        {"match": "propose up to", "responses": [fenced]},
        {"match": "<correction>", "responses": ["### Decision:\nYES"]},
        {"match": "mapping table", "responses": [f"```sql\n{golden_sql}\n```"]},
    ]


def test_multistep_off_by_default(test_warehouse, search_service, policy, golden_sql):
    pipe = make_pipeline(test_warehouse, search_service, golden_script(golden_sql), policy)
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.trace.exploration_notes is None
    assert "exploration_notes" not in outcome.trace.to_json()
    assert outcome.trace.probes == []


def test_multistep_probe_executes_against_fixture(test_warehouse, search_service,
                                                  policy, golden_sql):
    script = probe_script(golden_sql,
                          ["SELECT DISTINCT quarter FROM financial_ratio LIMIT 10"])
    pipe = make_pipeline(test_warehouse, search_service, script, policy,
                         PipelineConfig(multistep=True))
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "answered"
    notes = outcome.trace.exploration_notes
    assert notes is not None
    seen = {int(tok) for tok in notes.split() if tok.isdigit() and len(tok) == 1}
    assert seen and seen <= {0, 1, 2, 3, 4}
    assert len(outcome.trace.probes) == 1


def test_multistep_mutation_probe_rejected_not_fatal(test_warehouse, search_service,
                                                     policy, golden_sql):
    script = probe_script(golden_sql, ["DELETE FROM financial_ratio"])
    pipe = make_pipeline(test_warehouse, search_service, script, policy,
                         PipelineConfig(multistep=True))
    before = test_warehouse.table_row_counts()
    outcome = pipe.run(GOLDEN_QUESTION)
    assert outcome.status == "answered"
    assert outcome.trace.probes[0].guard_verdict == "reject"
    assert "rejected" in outcome.trace.probes[0].outcome
    assert test_warehouse.table_row_counts() == before


def test_multistep_flag_overrides_config(test_warehouse, search_service, policy, golden_sql):
    script = probe_script(golden_sql,
                          ["SELECT DISTINCT quarter FROM financial_ratio LIMIT 10"])
    pipe = make_pipeline(test_warehouse, search_service, script, policy)
    outcome = pipe.run(GOLDEN_QUESTION, multistep=True)
    assert outcome.trace.exploration_notes is not None
