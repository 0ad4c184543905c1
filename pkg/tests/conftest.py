"""Shared fixtures: seeded warehouses, vector indexes, scripted providers."""

from __future__ import annotations

import pytest

from finask.gateway import Gateway, ScriptedProvider
from finask.pipeline import Pipeline, load_fewshots
from finask.sqlguard import QueryPolicy
from finask.vectors import build_index_from_warehouse
from finask.warehouse import Warehouse

GOLDEN_QUESTION = "Banks with credit growth higher than average in Q3 2023"

# Reference result: banks above the Q3 2023 industry mean, best first.
GOLDEN_ROWS = [
    ("HDB", 2023, 3, 0.64, 0.24),
    ("VPB", 2023, 3, 0.52, 0.24),
    ("MSB", 2023, 3, 0.35, 0.24),
    ("KLB", 2023, 3, 0.34, 0.24),
]

ENTITY_REPLY_BANKING = """```json
{
 "industry": ["Banking"],
 "company_name": [],
 "financial_statement_account": [],
 "financial_ratio": ["Credit growth YoY"]
}
```"""

# The example extraction exchange shipped inside the prompt template.
EXAMPLE_TASK = "Net Income YoY and ROE 4 nearest quarter of HPG in 2023"
EXAMPLE_ENTITY_REPLY = """```json
 {
 "industry": [],
 "company_name": ["HPG"],
 "financial_statement_account": ["Net Income"],
 "financial_ratio": ["Net Income YoY", "ROE 4 nearest quarter"]
 }
```"""
EXAMPLE_ENTITY_OBJECT = {
    "industry": [],
    "company_name": ["HPG"],
    "financial_statement_account": ["Net Income"],
    "financial_ratio": ["Net Income YoY", "ROE 4 nearest quarter"],
}


@pytest.fixture(scope="session")
def golden_sql() -> str:
    from importlib import resources
    return (resources.files("finask") / "fixtures" / "golden_query.sql").read_text()


@pytest.fixture(scope="session")
def test_warehouse() -> Warehouse:
    return Warehouse(":memory:").seed_fixture("test")


@pytest.fixture(scope="session")
def train_warehouse() -> Warehouse:
    return Warehouse(":memory:").seed_fixture("train")


@pytest.fixture(scope="session")
def policy() -> QueryPolicy:
    return QueryPolicy()


@pytest.fixture(scope="session")
def fewshots(test_warehouse, policy):
    return load_fewshots(None, test_warehouse.catalog, policy)


@pytest.fixture(scope="session")
def search_service(test_warehouse, fewshots):
    return build_index_from_warehouse(test_warehouse, fewshots)


def golden_script(golden_sql: str) -> list[dict]:
    """Entity reply + golden SQL + immediate YES. Rule order matters: the
    correction prompt also carries the schema system text, so its rule
    must come before the generation rule."""
    return [
        {"match": "Based on given question, analyze", "responses": [ENTITY_REPLY_BANKING]},
        {"match": "<correction>", "responses": ["### Decision:\nYES"]},
        {"match": "mapping table", "responses": [f"```sql\n{golden_sql}\n```"]},
    ]


def broken_then_fixed_script(golden_sql: str) -> list[dict]:
    return [
        {"match": "Based on given question, analyze", "responses": [ENTITY_REPLY_BANKING]},
        {"match": "<correction>", "responses": [
            "### Decision:\nNo\n### Reasoning:\nThe query failed to parse."
            f"\n### SQL Query:\n```sql\n{golden_sql}\n```",
            "### Decision:\nYES",
        ]},
        {"match": "mapping table", "responses": ["```sql\nSELECT FROM WHERE\n```"]},
    ]


ALWAYS_NO_SQL = "SELECT data FROM financial_ratio WHERE quarter = 3 LIMIT 5"


def always_no_script() -> list[dict]:
    return [
        {"match": "Based on given question, analyze", "responses": [ENTITY_REPLY_BANKING]},
        {"match": "<correction>", "responses": [
            f"### Decision:\nNo\n### Reasoning:\nStill wrong.\n### SQL Query:\n{ALWAYS_NO_SQL}"]},
        {"match": "mapping table", "responses": [f"```sql\n{ALWAYS_NO_SQL}\n```"]},
    ]


def make_pipeline(warehouse, search, script, policy, config=None) -> Pipeline:
    gateway = Gateway(ScriptedProvider.from_config(script))
    return Pipeline(warehouse, search, gateway, policy, config)


def pytest_runtest_logreport(report):
    # one visible line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1].replace("test_", "", 1)
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}")
