"""Query policy enforcement over parsed SQL.

Checks run in a fixed order: statement count, statement class (SELECT
only), table/column resolution against the catalog, the mandatory quarter
predicate, and LIMIT presence.  A missing or oversized LIMIT is repaired
by rewriting rather than rejected; everything else that fails is a
violation and the query is refused.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Union

from finask.schema import SchemaCatalog
from finask.sqlguard import parser as P


@dataclass(frozen=True)
class QueryPolicy:
    require_limit: bool = True
    max_limit: int = 1000
    require_quarter_condition: bool = True
    allow_ctes: bool = True
    allowed_tables: Optional[frozenset[str]] = None  # None: every catalog table

    # Write access can never be granted, so this is not a field.
    @property
    def read_only(self) -> bool:
        return True

    def tables_for(self, catalog: SchemaCatalog) -> set[str]:
        if self.allowed_tables is None:
            return {t.lower() for t in catalog.table_names()}
        return {t.lower() for t in self.allowed_tables}


@dataclass
class Violation:
    rule: str
    location: str
    message: str


@dataclass
class ValidationReport:
    verdict: str  # pass | rewritten | reject
    violations: list[Violation] = field(default_factory=list)
    rewritten_sql: Optional[str] = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict in ("pass", "rewritten")

    def summary(self) -> str:
        if self.ok:
            return self.verdict
        return "; ".join(f"{v.rule}: {v.message}" for v in self.violations)


class _Scope:
    """Relations visible to one SELECT: (alias or name) -> column set or None."""

    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.relations: dict[str, Optional[set[str]]] = {}

    def add(self, name: str, columns: Optional[set[str]]) -> None:
        self.relations[name.lower()] = columns

    def find_qualified(self, table: str) -> tuple[bool, Optional[set[str]]]:
        scope: Optional[_Scope] = self
        while scope is not None:
            if table.lower() in scope.relations:
                return True, scope.relations[table.lower()]
            scope = scope.parent
        return False, None

    def resolves_bare(self, column: str) -> bool:
        scope: Optional[_Scope] = self
        while scope is not None:
            for cols in scope.relations.values():
                if cols is None or column.lower() in cols:
                    return True
            scope = scope.parent
        return False


class _Validator:
    def __init__(self, catalog: SchemaCatalog, policy: QueryPolicy):
        self.catalog = catalog
        self.policy = policy
        self.allowed = policy.tables_for(catalog)
        self.violations: list[Violation] = []

    def fail(self, rule: str, location: str, message: str) -> None:
        self.violations.append(Violation(rule, location, message))

    # -- resolution ---------------------------------------------------------

    def catalog_columns(self, table: str) -> Optional[set[str]]:
        t = self.catalog.table(table)
        return {c.lower() for c in t.column_names()} if t else None

    def select_scope(self, sel: P.Select, ctes: dict[str, Optional[set[str]]],
                     parent: Optional[_Scope]) -> _Scope:
        scope = _Scope(parent)
        for ref in list(sel.from_refs) + [j.table for j in sel.joins]:
            if isinstance(ref, P.TableName):
                lname = ref.name.lower()
                if lname in ctes:
                    scope.add(ref.alias or ref.name, ctes[lname])
                elif lname in self.allowed:
                    scope.add(ref.alias or ref.name, self.catalog_columns(ref.name))
                elif self.catalog.table(ref.name) is not None:
                    self.fail("table_not_allowed", f"byte {ref.pos}",
                              f"table {ref.name!r} is not allowed by policy")
                    scope.add(ref.alias or ref.name, self.catalog_columns(ref.name))
                else:
                    self.fail("unknown_table", f"byte {ref.pos}",
                              f"unknown table {ref.name!r}")
                    scope.add(ref.alias or ref.name, None)
            else:  # SubqueryRef
                cols = self.check_select(ref.query, ctes, parent)
                scope.add(ref.alias, cols)
        return scope

    def output_columns(self, sel: P.Select, scope: _Scope) -> set[str]:
        out: set[str] = set()
        for item in sel.items:
            if isinstance(item, P.Star):
                if item.table:
                    _, cols = scope.find_qualified(item.table)
                    out |= cols or set()
                else:
                    for cols in scope.relations.values():
                        out |= cols or set()
            elif item.alias:
                out.add(item.alias.lower())
            elif isinstance(item.expr, P.Column):
                out.add(item.expr.name.lower())
        return out

    def check_select(self, sel: P.Select, ctes: dict[str, Optional[set[str]]],
                     parent: Optional[_Scope]) -> set[str]:
        """Validate one SELECT; returns its output column names."""
        scope = self.select_scope(sel, ctes, parent)
        for item in sel.items:
            if isinstance(item, P.Star):
                if item.table:
                    found, _ = scope.find_qualified(item.table)
                    if not found:
                        self.fail("unknown_table", "select list",
                                  f"unknown table or alias {item.table!r} in {item.table}.*")
            else:
                self.check_expr(item.expr, scope, ctes)
        for join in sel.joins:
            if join.on is not None:
                self.check_expr(join.on, scope, ctes)
        for e in ([sel.where] if sel.where else []) + sel.group_by \
                + ([sel.having] if sel.having else []) \
                + [o.expr for o in sel.order_by]:
            self.check_expr(e, scope, ctes, allow_output_aliases=self.output_columns(sel, scope))
        return self.output_columns(sel, scope)

    def check_expr(self, e: P.Expr, scope: _Scope, ctes: dict,
                   allow_output_aliases: Optional[set[str]] = None) -> None:
        if isinstance(e, P.Column):
            if e.table:
                found, cols = scope.find_qualified(e.table)
                if not found:
                    self.fail("unknown_table", f"byte {e.pos}",
                              f"unknown table or alias {e.table!r}")
                elif cols is not None and e.name.lower() not in cols:
                    self.fail("unknown_column", f"byte {e.pos}",
                              f"column {e.name!r} does not exist on {e.table!r}")
            else:
                if not scope.resolves_bare(e.name) and \
                        e.name.lower() not in (allow_output_aliases or set()):
                    self.fail("unknown_column", f"byte {e.pos}",
                              f"column {e.name!r} does not resolve against any table in scope")
        elif isinstance(e, P.Literal):
            pass
        elif isinstance(e, P.Unary):
            self.check_expr(e.operand, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.Binary):
            self.check_expr(e.left, scope, ctes, allow_output_aliases)
            self.check_expr(e.right, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.Not):
            self.check_expr(e.operand, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.FuncCall):
            for a in e.args:
                self.check_expr(a, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.InList):
            self.check_expr(e.expr, scope, ctes, allow_output_aliases)
            for item in e.items:
                self.check_expr(item, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.InSubquery):
            self.check_expr(e.expr, scope, ctes, allow_output_aliases)
            self.check_select(e.query, ctes, scope)
        elif isinstance(e, P.Between):
            for sub in (e.expr, e.low, e.high):
                self.check_expr(sub, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.Like):
            self.check_expr(e.expr, scope, ctes, allow_output_aliases)
            self.check_expr(e.pattern, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.IsNull):
            self.check_expr(e.expr, scope, ctes, allow_output_aliases)
        elif isinstance(e, P.Exists):
            self.check_select(e.query, ctes, scope)
        elif isinstance(e, P.ScalarSubquery):
            self.check_select(e.query, ctes, scope)
        elif isinstance(e, P.Case):
            if e.operand is not None:
                self.check_expr(e.operand, scope, ctes, allow_output_aliases)
            for cond, result in e.whens:
                self.check_expr(cond, scope, ctes, allow_output_aliases)
                self.check_expr(result, scope, ctes, allow_output_aliases)
            if e.else_ is not None:
                self.check_expr(e.else_, scope, ctes, allow_output_aliases)


# -- quarter predicate detection ---------------------------------------------

def _is_quarter_column(e: P.Expr) -> bool:
    return isinstance(e, P.Column) and e.name.lower() == "quarter"


def _expr_has_quarter_predicate(e: Optional[P.Expr]) -> bool:
    if e is None:
        return False
    if isinstance(e, P.Binary):
        if e.op in ("=", "<>", "!=", "<", ">", "<=", ">=") and \
                (_is_quarter_column(e.left) or _is_quarter_column(e.right)):
            return True
        return _expr_has_quarter_predicate(e.left) or _expr_has_quarter_predicate(e.right)
    if isinstance(e, (P.InList, P.InSubquery)):
        if _is_quarter_column(e.expr):
            return True
        if isinstance(e, P.InSubquery):
            return _select_has_quarter_predicate(e.query)
        return False
    if isinstance(e, P.Between):
        return _is_quarter_column(e.expr)
    if isinstance(e, P.Not):
        return _expr_has_quarter_predicate(e.operand)
    if isinstance(e, (P.Exists, P.ScalarSubquery)):
        return _select_has_quarter_predicate(e.query)
    if isinstance(e, P.Case):
        parts = [e.operand, e.else_] + [x for pair in e.whens for x in pair]
        return any(_expr_has_quarter_predicate(p) for p in parts if p is not None)
    return False


def _select_has_quarter_predicate(sel: P.Select) -> bool:
    if _expr_has_quarter_predicate(sel.where) or _expr_has_quarter_predicate(sel.having):
        return True
    for join in sel.joins:
        if _expr_has_quarter_predicate(join.on):
            return True
    for ref in sel.from_refs + [j.table for j in sel.joins]:
        if isinstance(ref, P.SubqueryRef) and _select_has_quarter_predicate(ref.query):
            return True
    return False


def statement_has_quarter_predicate(stmt: P.SelectStatement) -> bool:
    """True when any comparison/IN/BETWEEN over a column named quarter exists
    anywhere in the statement, CTE bodies included."""
    return any(_select_has_quarter_predicate(c.query) for c in stmt.ctes) \
        or _select_has_quarter_predicate(stmt.body)


# -- entry points --------------------------------------------------------------

def validate(tree: Union[P.SqlScript, P.SelectStatement], catalog: SchemaCatalog,
             policy: QueryPolicy) -> ValidationReport:
    """Validate a parsed statement against catalog and policy."""
    if isinstance(tree, P.SqlScript):
        if tree.statement_count != 1:
            return ValidationReport("reject", [Violation(
                "single_statement", "script",
                f"exactly one statement is allowed, found {tree.statement_count}")])
        stmt = tree.statements[0]
    else:
        stmt = tree

    if isinstance(stmt, P.RawStatement):
        return ValidationReport("reject", [Violation(
            "read_only", f"byte {stmt.pos}",
            f"{stmt.head} statements are not permitted; only SELECT queries may run")])

    checker = _Validator(catalog, policy)

    if stmt.ctes and not policy.allow_ctes:
        checker.fail("ctes_disallowed", "statement", "WITH clauses are not allowed by policy")

    ctes: dict[str, Optional[set[str]]] = {}
    for cte in stmt.ctes:
        ctes[cte.name.lower()] = checker.check_select(cte.query, dict(ctes), None)
    checker.check_select(stmt.body, ctes, None)

    if policy.require_quarter_condition and not statement_has_quarter_predicate(stmt):
        checker.fail("quarter_condition", "statement",
                     "query must constrain the quarter column "
                     "(quarter = 0 selects annual reports)")

    if checker.violations:
        return ValidationReport("reject", checker.violations)

    # LIMIT repair happens only on otherwise-clean statements.
    notes: list[str] = []
    rewritten = None
    body = stmt.body
    if body.limit is None:
        if policy.require_limit:
            fixed = copy.deepcopy(stmt)
            fixed.body.limit = P.Limit(P.Literal("number", str(policy.max_limit)))
            rewritten = P.to_sql(fixed)
            notes.append(f"appended LIMIT {policy.max_limit}")
    else:
        count = body.limit.count
        if not (isinstance(count, P.Literal) and count.kind == "number"):
            return ValidationReport("reject", [Violation(
                "limit", "statement", "LIMIT must be a numeric literal")])
        if float(count.value) > policy.max_limit:
            fixed = copy.deepcopy(stmt)
            fixed.body.limit.count = P.Literal("number", str(policy.max_limit))
            rewritten = P.to_sql(fixed)
            notes.append(f"clamped LIMIT to {policy.max_limit}")

    if rewritten is not None:
        return ValidationReport("rewritten", [], rewritten, notes)
    return ValidationReport("pass")


def validate_sql(sql: str, catalog: SchemaCatalog, policy: QueryPolicy) -> ValidationReport:
    """Parse then validate; parse failures come back as a syntax rejection."""
    try:
        tree = P.parse_sql(sql)
    except P.SqlSyntaxError as exc:
        return ValidationReport("reject", [Violation("syntax", f"byte {exc.position}", exc.message)])
    return validate(tree, catalog, policy)


def executable_sql(sql: str, report: ValidationReport) -> str:
    """The SQL that should actually run: the rewrite when one was produced."""
    return report.rewritten_sql if report.rewritten_sql is not None else sql
