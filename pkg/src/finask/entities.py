"""Entity extraction prompt rendering, reply parsing and warehouse linking.

The extraction prompt is a stored template rendered with the user's
question; the model replies with a four-field JSON object (industry,
company_name, financial_statement_account, financial_ratio).  Parsed
entities are normalized -- every field always present, growth-tagged
items get their base account added -- and then linked to warehouse rows
through the vector namespaces.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from finask.gateway import PromptBundle
from finask.vectors import Candidate, SearchService

ENTITY_FIELDS = ("industry", "company_name", "financial_statement_account", "financial_ratio")

# growth/window tags recognized on account and ratio mentions, longest first
_TAG_PATTERNS = [
    ("trailing twelve months", re.compile(r"\(?\btrailing twelve months\b\)?", re.I)),
    ("4 nearest quarter", re.compile(r"\(?\b4 nearest quarters?\b\)?", re.I)),
    ("TTM", re.compile(r"\(?\bTTM\b\)?", re.I)),
    ("YoY", re.compile(r"\(?\bYoY\b\)?", re.I)),
    ("QoQ", re.compile(r"\(?\bQoQ\b\)?", re.I)),
]

# only year/quarter growth tags force the base account into the account list
_BASE_RULE_TAGS = {"YoY", "QoQ"}

_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*\n?(.*?)```", re.S)


class EntityParseError(ValueError):
    """The reply carried no parseable JSON object."""


@dataclass
class ExtractedEntities:
    industry: list[str] = field(default_factory=list)
    company_name: list[str] = field(default_factory=list)
    financial_statement_account: list[str] = field(default_factory=list)
    financial_ratio: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[str]]:
        return {name: list(getattr(self, name)) for name in ENTITY_FIELDS}

    def is_empty(self) -> bool:
        return not any(getattr(self, name) for name in ENTITY_FIELDS)


@dataclass
class LinkedCandidate:
    term: str
    resolved_code: str
    candidate: Candidate


@dataclass
class LinkedCandidates:
    # field name -> ordered list of (term, resolved code, candidate)
    fields: dict[str, list[LinkedCandidate]] = field(default_factory=dict)

    def all_candidates(self) -> list[tuple[str, LinkedCandidate]]:
        return [(name, lc) for name, lcs in self.fields.items() for lc in lcs]

    def total(self) -> int:
        return sum(len(v) for v in self.fields.values())


def _load_template(name: str) -> str:
    return (resources.files("finask") / "prompts" / name).read_text(encoding="utf-8")


ENTITY_TEMPLATE = _load_template("entity_extraction.txt")


def render_entity_prompt(task: str) -> PromptBundle:
    """Template with the question substituted; braces in the question are
    kept literal (only the template's own placeholders are interpreted)."""
    if not task or not task.strip():
        raise ValueError("task must be nonempty")
    return PromptBundle(system_text="", user_turns=[ENTITY_TEMPLATE.format(task=task)])


def split_tag(term: str) -> tuple[str, str | None]:
    """'Net Income YoY' -> ('Net Income', 'YoY'); untagged terms pass through."""
    for tag, pattern in _TAG_PATTERNS:
        if pattern.search(term):
            base = pattern.sub(" ", term)
            base = re.sub(r"\s{2,}", " ", base).strip(" ,;:-")
            return base, tag
    return term.strip(), None


def parse_entity_reply(text: str) -> tuple[ExtractedEntities, list[str]]:
    """Parse the model's JSON reply into the four-field object.

    The first fenced code block wins; without fences the outermost brace
    span is used.  Missing keys become empty lists and are reported in
    the returned warnings.
    """
    payload = _extract_json_object(text)
    warnings: list[str] = []
    entities = ExtractedEntities()
    for name in ENTITY_FIELDS:
        if name not in payload:
            warnings.append(f"missing key {name!r}; defaulting to empty list")
            continue
        value = payload[name]
        if isinstance(value, str):
            warnings.append(f"key {name!r} was a string, not a list")
            value = [value] if value else []
        elif not isinstance(value, list):
            warnings.append(f"key {name!r} had unexpected type {type(value).__name__}")
            value = []
        setattr(entities, name, [str(item) for item in value])
    _apply_base_account_rule(entities)
    return entities, warnings


def _extract_json_object(text: str) -> dict:
    candidates = []
    fence = _FENCE_RE.search(text or "")
    if fence:
        candidates.append(fence.group(1))
    start, end = (text or "").find("{"), (text or "").rfind("}")
    if 0 <= start < end:
        candidates.append(text[start:end + 1])
    for raw in candidates:
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            continue
        if isinstance(payload, dict):
            return payload
    raise EntityParseError("no JSON object found in reply")


def _apply_base_account_rule(entities: ExtractedEntities) -> None:
    # a YoY/QoQ-tagged mention implies its base account belongs in the
    # statement-account list
    present = {a.lower() for a in entities.financial_statement_account}
    for term in list(entities.financial_ratio) + list(entities.financial_statement_account):
        base, tag = split_tag(term)
        if tag in _BASE_RULE_TAGS and base and base.lower() not in present:
            entities.financial_statement_account.append(base)
            present.add(base.lower())


_FIELD_NAMESPACE = {
    "industry": ("industry", "industry"),
    "company_name": ("company", "stock_code"),
    "financial_statement_account": ("account", "category_code"),
    "financial_ratio": ("ratio", "ratio_code"),
}


def link_entities(entities: ExtractedEntities, search: SearchService,
                  k: int = 5) -> LinkedCandidates:
    """Search each extracted term in its namespace; duplicate resolved codes
    within a field keep only their highest-scoring hit."""
    linked = LinkedCandidates()
    for field_name, (namespace, code_key) in _FIELD_NAMESPACE.items():
        terms = getattr(entities, field_name)
        raw: list[LinkedCandidate] = []
        for term in terms:
            if not term.strip():
                continue
            for cand in search.search_text(namespace, term, k):
                code = cand.metadata.get(code_key, cand.id)
                raw.append(LinkedCandidate(term, code, cand))
        best: dict[str, float] = {}
        for lc in raw:
            if lc.resolved_code not in best or lc.candidate.score > best[lc.resolved_code]:
                best[lc.resolved_code] = lc.candidate.score
        kept: list[LinkedCandidate] = []
        taken: set[str] = set()
        for lc in raw:
            if lc.resolved_code in taken:
                continue
            if lc.candidate.score >= best[lc.resolved_code]:
                kept.append(lc)
                taken.add(lc.resolved_code)
        linked.fields[field_name] = kept
    return linked
