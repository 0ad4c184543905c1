"""Recursive-descent parser for the SQL SELECT subset accepted by the guard.

The grammar covers single and multi-statement scripts of:

    WITH name AS (select), ... SELECT [DISTINCT] items
    FROM refs [JOIN ... ON expr]* [WHERE expr] [GROUP BY ...]
    [HAVING expr] [ORDER BY ...] [LIMIT n [OFFSET m]]

with subqueries (FROM, IN, EXISTS, scalar), CASE expressions, aggregate
calls and the usual operators.  Anything outside the subset -- vendor
extensions, set operations, parameters -- is a deliberate syntax error.
Statements whose head keyword is not SELECT/WITH (INSERT, DROP, ...) are
kept as opaque ``RawStatement`` nodes so the validator can reject them
with a precise rule instead of a parse failure.

Printing is canonical: uppercase keywords, single spaces, explicit AS,
parentheses inserted from operator precedence.  ``parse(print(tree))``
yields a structurally equal tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union


class SqlSyntaxError(ValueError):
    """Malformed SQL. ``position`` is a byte offset into the source text."""

    def __init__(self, position: int, message: str):
        super().__init__(f"at byte {position}: {message}")
        self.position = position
        self.message = message


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "OFFSET", "AS", "ON", "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER",
    "CROSS", "AND", "OR", "NOT", "IN", "IS", "NULL", "LIKE", "BETWEEN",
    "DISTINCT", "ALL", "CASE", "WHEN", "THEN", "ELSE", "END", "WITH",
    "TRUE", "FALSE", "ASC", "DESC", "EXISTS", "UNION", "EXCEPT", "INTERSECT",
}

# Statement heads that the parser keeps as raw statements for the validator.
NON_SELECT_HEADS = {
    "INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "CREATE", "TRUNCATE",
    "GRANT", "REVOKE", "REPLACE", "MERGE", "PRAGMA", "ATTACH", "DETACH",
    "VACUUM", "BEGIN", "COMMIT", "ROLLBACK", "SET", "EXPLAIN", "ANALYZE",
    "COPY", "CALL", "EXECUTE", "EXEC", "USE", "SHOW", "DESCRIBE", "VALUES",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")


@dataclass
class Token:
    kind: str  # IDENT KEYWORD NUMBER STRING OP EOF
    text: str
    pos: int


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if sql.startswith("--", i):
            nl = sql.find("\n", i)
            i = n if nl < 0 else nl + 1
            continue
        if sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            if end < 0:
                raise SqlSyntaxError(i, "unterminated block comment")
            i = end + 2
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlSyntaxError(i, "unterminated string literal")
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(sql[j])
                j += 1
            tokens.append(Token("STRING", "".join(buf), i))
            i = j + 1
            continue
        if ch == '"':
            j = sql.find('"', i + 1)
            if j < 0:
                raise SqlSyntaxError(i, "unterminated quoted identifier")
            tokens.append(Token("IDENT", sql[i + 1:j], i))
            i = j + 1
            continue
        m = _NUMBER_RE.match(sql, i)
        if m and ch.isdigit() or (ch == "." and m):
            tokens.append(Token("NUMBER", m.group(0), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(sql, i)
        if m:
            word = m.group(0)
            kind = "KEYWORD" if word.upper() in KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, i))
            i = m.end()
            continue
        for op in ("<>", "!=", "<=", ">="):
            if sql.startswith(op, i):
                tokens.append(Token("OP", op, i))
                i += 2
                break
        else:
            if ch in "=<>+-*/%(),.;":
                tokens.append(Token("OP", ch, i))
                i += 1
            else:
                raise SqlSyntaxError(i, f"unexpected character {ch!r}")
    tokens.append(Token("EOF", "", n))
    return tokens


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass
class Column:
    table: Optional[str]
    name: str
    pos: int = field(default=0, compare=False)


@dataclass
class Literal:
    kind: str  # number string bool null
    value: str  # raw lexeme for numbers, decoded text for strings


@dataclass
class Unary:
    op: str
    operand: "Expr"


@dataclass
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass
class Not:
    operand: "Expr"


@dataclass
class FuncCall:
    name: str
    args: list["Expr"]
    star: bool = False
    distinct: bool = False


@dataclass
class InList:
    expr: "Expr"
    items: list["Expr"]
    negated: bool = False


@dataclass
class InSubquery:
    expr: "Expr"
    query: "Select"
    negated: bool = False


@dataclass
class Between:
    expr: "Expr"
    low: "Expr"
    high: "Expr"
    negated: bool = False


@dataclass
class Like:
    expr: "Expr"
    pattern: "Expr"
    negated: bool = False


@dataclass
class IsNull:
    expr: "Expr"
    negated: bool = False


@dataclass
class Exists:
    query: "Select"


@dataclass
class ScalarSubquery:
    query: "Select"


@dataclass
class Case:
    operand: Optional["Expr"]
    whens: list[tuple["Expr", "Expr"]]
    else_: Optional["Expr"]


Expr = Union[Column, Literal, Unary, Binary, Not, FuncCall, InList,
             InSubquery, Between, Like, IsNull, Exists, ScalarSubquery, Case]


@dataclass
class Star:
    table: Optional[str] = None


@dataclass
class ExprItem:
    expr: Expr
    alias: Optional[str] = None


SelectItem = Union[Star, ExprItem]


@dataclass
class TableName:
    name: str
    alias: Optional[str] = None
    pos: int = field(default=0, compare=False)


@dataclass
class SubqueryRef:
    query: "Select"
    alias: str


TableRef = Union[TableName, SubqueryRef]


@dataclass
class Join:
    kind: str  # INNER LEFT RIGHT FULL CROSS
    table: TableRef
    on: Optional[Expr]


@dataclass
class OrderItem:
    expr: Expr
    desc: bool = False


@dataclass
class Limit:
    count: Expr
    offset: Optional[Expr] = None


@dataclass
class Select:
    items: list[SelectItem]
    distinct: bool = False
    from_refs: list[TableRef] = field(default_factory=list)
    joins: list[Join] = field(default_factory=list)
    where: Optional[Expr] = None
    group_by: list[Expr] = field(default_factory=list)
    having: Optional[Expr] = None
    order_by: list[OrderItem] = field(default_factory=list)
    limit: Optional[Limit] = None


@dataclass
class Cte:
    name: str
    query: Select


@dataclass
class SelectStatement:
    ctes: list[Cte]
    body: Select


@dataclass
class RawStatement:
    head: str
    text: str
    pos: int = field(default=0, compare=False)


Statement = Union[SelectStatement, RawStatement]


@dataclass
class SqlScript:
    statements: list[Statement]

    @property
    def statement_count(self) -> int:
        return len(self.statements)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_COMPARE_OPS = {"=", "<>", "!=", "<", ">", "<=", ">="}


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.tokens = tokenize(sql)
        self.i = 0

    # -- token helpers -----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.text.upper() in words

    def accept_keyword(self, *words: str) -> Optional[Token]:
        if self.at_keyword(*words):
            return self.next()
        return None

    def expect_keyword(self, word: str) -> Token:
        tok = self.peek()
        if tok.kind == "KEYWORD" and tok.text.upper() == word:
            return self.next()
        raise SqlSyntaxError(tok.pos, f"expected {word}, found {tok.text or 'end of input'!r}")

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "OP" and tok.text in ops

    def accept_op(self, *ops: str) -> Optional[Token]:
        if self.at_op(*ops):
            return self.next()
        return None

    def expect_op(self, op: str) -> Token:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == op:
            return self.next()
        raise SqlSyntaxError(tok.pos, f"expected {op!r}, found {tok.text or 'end of input'!r}")

    def expect_ident(self, what: str = "identifier") -> Token:
        tok = self.peek()
        if tok.kind == "IDENT":
            return self.next()
        raise SqlSyntaxError(tok.pos, f"expected {what}, found {tok.text or 'end of input'!r}")

    # -- script ------------------------------------------------------------

    def parse_script(self) -> SqlScript:
        statements: list[Statement] = []
        while self.accept_op(";"):
            pass
        while self.peek().kind != "EOF":
            statements.append(self.parse_statement())
            tok = self.peek()
            if tok.kind == "EOF":
                break
            if tok.kind == "OP" and tok.text == ";":
                while self.accept_op(";"):
                    pass
            else:
                raise SqlSyntaxError(tok.pos, f"expected ';' or end of input, found {tok.text!r}")
        if not statements:
            raise SqlSyntaxError(0, "empty statement")
        return SqlScript(statements)

    def parse_statement(self) -> Statement:
        tok = self.peek()
        if self.at_keyword("SELECT", "WITH"):
            return self.parse_select_statement()
        head = tok.text.upper()
        if tok.kind in ("IDENT", "KEYWORD") and head in NON_SELECT_HEADS:
            return self.parse_raw_statement(head)
        raise SqlSyntaxError(tok.pos, f"expected a statement, found {tok.text!r}")

    def parse_raw_statement(self, head: str) -> RawStatement:
        start = self.peek().pos
        depth = 0
        end = start
        while True:
            tok = self.peek()
            if tok.kind == "EOF":
                break
            if tok.kind == "OP":
                if tok.text == "(":
                    depth += 1
                elif tok.text == ")":
                    depth -= 1
                elif tok.text == ";" and depth <= 0:
                    break
            end = tok.pos + len(tok.text)
            self.next()
        return RawStatement(head=head, text=self.sql[start:end].strip(), pos=start)

    def parse_select_statement(self) -> SelectStatement:
        ctes: list[Cte] = []
        if self.accept_keyword("WITH"):
            while True:
                name = self.expect_ident("CTE name").text
                self.expect_keyword("AS")
                self.expect_op("(")
                query = self.parse_select()
                self.expect_op(")")
                ctes.append(Cte(name, query))
                if not self.accept_op(","):
                    break
        body = self.parse_select()
        if self.at_keyword("UNION", "EXCEPT", "INTERSECT"):
            tok = self.peek()
            raise SqlSyntaxError(tok.pos, f"{tok.text.upper()} is outside the supported SELECT subset")
        return SelectStatement(ctes, body)

    def parse_select(self) -> Select:
        self.expect_keyword("SELECT")
        sel = Select(items=[])
        if self.accept_keyword("DISTINCT"):
            sel.distinct = True
        else:
            self.accept_keyword("ALL")
        sel.items.append(self.parse_select_item())
        while self.accept_op(","):
            sel.items.append(self.parse_select_item())
        if self.accept_keyword("FROM"):
            sel.from_refs.append(self.parse_table_ref())
            while True:
                if self.accept_op(","):
                    sel.from_refs.append(self.parse_table_ref())
                    continue
                join = self.parse_join_opt()
                if join is None:
                    break
                sel.joins.append(join)
        if self.accept_keyword("WHERE"):
            sel.where = self.parse_expr()
        if self.accept_keyword("GROUP"):
            self.expect_keyword("BY")
            sel.group_by.append(self.parse_expr())
            while self.accept_op(","):
                sel.group_by.append(self.parse_expr())
        if self.accept_keyword("HAVING"):
            sel.having = self.parse_expr()
        if self.accept_keyword("ORDER"):
            self.expect_keyword("BY")
            sel.order_by.append(self.parse_order_item())
            while self.accept_op(","):
                sel.order_by.append(self.parse_order_item())
        if self.accept_keyword("LIMIT"):
            count = self.parse_expr()
            offset = None
            if self.accept_keyword("OFFSET"):
                offset = self.parse_expr()
            elif self.accept_op(","):
                # LIMIT offset, count
                offset, count = count, self.parse_expr()
            sel.limit = Limit(count, offset)
        return sel

    def parse_select_item(self) -> SelectItem:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "*":
            self.next()
            return Star(None)
        if (tok.kind == "IDENT" and self.peek(1).kind == "OP" and self.peek(1).text == "."
                and self.peek(2).kind == "OP" and self.peek(2).text == "*"):
            self.next(); self.next(); self.next()
            return Star(tok.text)
        expr = self.parse_expr()
        alias = None
        if self.accept_keyword("AS"):
            alias = self.expect_ident("alias").text
        elif self.peek().kind == "IDENT":
            alias = self.next().text
        return ExprItem(expr, alias)

    def parse_table_ref(self) -> TableRef:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "(":
            self.next()
            query = self.parse_select()
            self.expect_op(")")
            self.accept_keyword("AS")
            alias = self.expect_ident("subquery alias").text
            return SubqueryRef(query, alias)
        name_tok = self.expect_ident("table name")
        alias = None
        if self.accept_keyword("AS"):
            alias = self.expect_ident("alias").text
        elif self.peek().kind == "IDENT":
            alias = self.next().text
        return TableName(name_tok.text, alias, pos=name_tok.pos)

    def parse_join_opt(self) -> Optional[Join]:
        kind = None
        if self.accept_keyword("JOIN"):
            kind = "INNER"
        elif self.at_keyword("INNER", "LEFT", "RIGHT", "FULL", "CROSS"):
            kind = self.next().text.upper()
            self.accept_keyword("OUTER")
            self.expect_keyword("JOIN")
        else:
            return None
        table = self.parse_table_ref()
        on = None
        if kind != "CROSS":
            self.expect_keyword("ON")
            on = self.parse_expr()
        return Join(kind, table, on)

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_expr()
        desc = False
        if self.accept_keyword("DESC"):
            desc = True
        else:
            self.accept_keyword("ASC")
        return OrderItem(expr, desc)

    # -- expressions ---------------------------------------------------------

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.accept_keyword("OR"):
            left = Binary("OR", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.accept_keyword("AND"):
            left = Binary("AND", left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        if self.accept_keyword("NOT"):
            return Not(self.parse_not())
        return self.parse_predicate()

    def parse_predicate(self) -> Expr:
        left = self.parse_additive()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in _COMPARE_OPS:
            self.next()
            return Binary(tok.text, left, self.parse_additive())
        negated = False
        if self.at_keyword("NOT") and self.peek(1).kind == "KEYWORD" \
                and self.peek(1).text.upper() in ("IN", "BETWEEN", "LIKE"):
            self.next()
            negated = True
        if self.accept_keyword("IN"):
            self.expect_op("(")
            if self.at_keyword("SELECT"):
                query = self.parse_select()
                self.expect_op(")")
                return InSubquery(left, query, negated)
            items = [self.parse_expr()]
            while self.accept_op(","):
                items.append(self.parse_expr())
            self.expect_op(")")
            return InList(left, items, negated)
        if self.accept_keyword("BETWEEN"):
            low = self.parse_additive()
            self.expect_keyword("AND")
            high = self.parse_additive()
            return Between(left, low, high, negated)
        if self.accept_keyword("LIKE"):
            return Like(left, self.parse_additive(), negated)
        if self.accept_keyword("IS"):
            is_negated = bool(self.accept_keyword("NOT"))
            self.expect_keyword("NULL")
            return IsNull(left, is_negated)
        if negated:
            raise SqlSyntaxError(self.peek().pos, "expected IN, BETWEEN or LIKE after NOT")
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.at_op("+", "-"):
            op = self.next().text
            left = Binary(op, left, self.parse_multiplicative())
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.at_op("*", "/", "%"):
            op = self.next().text
            left = Binary(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        if self.at_op("-", "+"):
            op = self.next().text
            return Unary(op, self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return Literal("number", tok.text)
        if tok.kind == "STRING":
            self.next()
            return Literal("string", tok.text)
        if self.at_keyword("TRUE", "FALSE"):
            self.next()
            return Literal("bool", tok.text.upper())
        if self.at_keyword("NULL"):
            self.next()
            return Literal("null", "NULL")
        if self.at_keyword("EXISTS"):
            self.next()
            self.expect_op("(")
            query = self.parse_select()
            self.expect_op(")")
            return Exists(query)
        if self.at_keyword("CASE"):
            return self.parse_case()
        if tok.kind == "OP" and tok.text == "(":
            self.next()
            if self.at_keyword("SELECT"):
                query = self.parse_select()
                self.expect_op(")")
                return ScalarSubquery(query)
            expr = self.parse_expr()
            self.expect_op(")")
            return expr
        if tok.kind == "IDENT":
            # function call, qualified column, or bare column
            if self.peek(1).kind == "OP" and self.peek(1).text == "(":
                return self.parse_func_call()
            self.next()
            if self.at_op(".") and self.peek(1).kind == "IDENT":
                self.next()
                col = self.next()
                return Column(tok.text, col.text, pos=tok.pos)
            return Column(None, tok.text, pos=tok.pos)
        raise SqlSyntaxError(tok.pos, f"expected an expression, found {tok.text or 'end of input'!r}")

    def parse_func_call(self) -> FuncCall:
        name = self.next().text
        self.expect_op("(")
        if self.accept_op("*"):
            self.expect_op(")")
            return FuncCall(name, [], star=True)
        distinct = bool(self.accept_keyword("DISTINCT"))
        args: list[Expr] = []
        if not self.at_op(")"):
            args.append(self.parse_expr())
            while self.accept_op(","):
                args.append(self.parse_expr())
        self.expect_op(")")
        return FuncCall(name, args, distinct=distinct)

    def parse_case(self) -> Case:
        self.expect_keyword("CASE")
        operand = None
        if not self.at_keyword("WHEN"):
            operand = self.parse_expr()
        whens: list[tuple[Expr, Expr]] = []
        while self.accept_keyword("WHEN"):
            cond = self.parse_expr()
            self.expect_keyword("THEN")
            whens.append((cond, self.parse_expr()))
        if not whens:
            raise SqlSyntaxError(self.peek().pos, "CASE requires at least one WHEN branch")
        else_ = None
        if self.accept_keyword("ELSE"):
            else_ = self.parse_expr()
        self.expect_keyword("END")
        return Case(operand, whens, else_)


def parse_sql(sql: str) -> SqlScript:
    """Parse a SQL script. Raises SqlSyntaxError with a byte offset on bad input."""
    if not sql or not sql.strip():
        raise SqlSyntaxError(0, "empty statement")
    return _Parser(sql).parse_script()


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------

_PRINT_PREC = {
    "OR": 1, "AND": 2,
    "=": 4, "<>": 4, "!=": 4, "<": 4, ">": 4, "<=": 4, ">=": 4,
    "+": 6, "-": 6,
    "*": 7, "/": 7, "%": 7,
}
_PREDICATE_PREC = 4  # IN / BETWEEN / LIKE / IS sit at comparison level


class SqlPrinter:
    """Renders an AST back to canonical SQL.

    ``fold_identifiers`` lowercases table/column/alias/function names (string
    literals untouched); used by the exact-match normalizer.
    """

    def __init__(self, fold_identifiers: bool = False):
        self.fold = fold_identifiers

    def _ident(self, name: str) -> str:
        name = name.lower() if self.fold else name
        if _IDENT_RE.fullmatch(name) and name.upper() not in KEYWORDS:
            return name
        return f'"{name}"'

    def script(self, script: SqlScript) -> str:
        return "; ".join(self.statement(s) for s in script.statements)

    def statement(self, stmt: Statement) -> str:
        if isinstance(stmt, RawStatement):
            return stmt.text
        parts = []
        if stmt.ctes:
            ctes = ", ".join(f"{self._ident(c.name)} AS ({self.select(c.query)})" for c in stmt.ctes)
            parts.append(f"WITH {ctes}")
        parts.append(self.select(stmt.body))
        return " ".join(parts)

    def select(self, sel: Select) -> str:
        parts = ["SELECT"]
        if sel.distinct:
            parts.append("DISTINCT")
        parts.append(", ".join(self.select_item(it) for it in sel.items))
        if sel.from_refs:
            refs = ", ".join(self.table_ref(r) for r in sel.from_refs)
            parts.append(f"FROM {refs}")
            for join in sel.joins:
                parts.append(self.join(join))
        if sel.where is not None:
            parts.append(f"WHERE {self.expr(sel.where)}")
        if sel.group_by:
            parts.append("GROUP BY " + ", ".join(self.expr(e) for e in sel.group_by))
        if sel.having is not None:
            parts.append(f"HAVING {self.expr(sel.having)}")
        if sel.order_by:
            parts.append("ORDER BY " + ", ".join(self.order_item(o) for o in sel.order_by))
        if sel.limit is not None:
            parts.append(f"LIMIT {self.expr(sel.limit.count)}")
            if sel.limit.offset is not None:
                parts.append(f"OFFSET {self.expr(sel.limit.offset)}")
        return " ".join(parts)

    def select_item(self, item: SelectItem) -> str:
        if isinstance(item, Star):
            return f"{self._ident(item.table)}.*" if item.table else "*"
        text = self.expr(item.expr)
        if item.alias:
            text += f" AS {self._ident(item.alias)}"
        return text

    def table_ref(self, ref: TableRef) -> str:
        if isinstance(ref, SubqueryRef):
            return f"({self.select(ref.query)}) AS {self._ident(ref.alias)}"
        text = self._ident(ref.name)
        if ref.alias:
            text += f" AS {self._ident(ref.alias)}"
        return text

    def join(self, join: Join) -> str:
        word = {"INNER": "JOIN", "CROSS": "CROSS JOIN"}.get(join.kind, f"{join.kind} JOIN")
        text = f"{word} {self.table_ref(join.table)}"
        if join.on is not None:
            text += f" ON {self.expr(join.on)}"
        return text

    def order_item(self, item: OrderItem) -> str:
        return self.expr(item.expr) + (" DESC" if item.desc else "")

    def expr(self, e: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
        prec, text = self._expr_prec(e)
        if prec < parent_prec or (right_side and prec == parent_prec):
            return f"({text})"
        return text

    def _expr_prec(self, e: Expr) -> tuple[int, str]:
        if isinstance(e, Column):
            if e.table:
                return 10, f"{self._ident(e.table)}.{self._ident(e.name)}"
            return 10, self._ident(e.name)
        if isinstance(e, Literal):
            if e.kind == "string":
                return 10, "'" + e.value.replace("'", "''") + "'"
            return 10, e.value
        if isinstance(e, Unary):
            # right_side forces parens around a nested sign so "--1" never
            # prints (it would lex as a comment)
            return 8, e.op + self.expr(e.operand, 8, right_side=True)
        if isinstance(e, Binary):
            p = _PRINT_PREC[e.op]
            left = self.expr(e.left, p)
            right = self.expr(e.right, p, right_side=True)
            return p, f"{left} {e.op} {right}"
        if isinstance(e, Not):
            return 3, "NOT " + self.expr(e.operand, 3, right_side=True)
        if isinstance(e, FuncCall):
            name = e.name.lower() if self.fold else e.name
            if e.star:
                return 10, f"{name}(*)"
            inner = ", ".join(self.expr(a) for a in e.args)
            if e.distinct:
                inner = "DISTINCT " + inner
            return 10, f"{name}({inner})"
        if isinstance(e, InList):
            items = ", ".join(self.expr(i) for i in e.items)
            word = "NOT IN" if e.negated else "IN"
            return _PREDICATE_PREC, f"{self.expr(e.expr, _PREDICATE_PREC + 1)} {word} ({items})"
        if isinstance(e, InSubquery):
            word = "NOT IN" if e.negated else "IN"
            return _PREDICATE_PREC, f"{self.expr(e.expr, _PREDICATE_PREC + 1)} {word} ({self.select(e.query)})"
        if isinstance(e, Between):
            word = "NOT BETWEEN" if e.negated else "BETWEEN"
            return _PREDICATE_PREC, (f"{self.expr(e.expr, _PREDICATE_PREC + 1)} {word} "
                                     f"{self.expr(e.low, 5)} AND {self.expr(e.high, 5)}")
        if isinstance(e, Like):
            word = "NOT LIKE" if e.negated else "LIKE"
            return _PREDICATE_PREC, f"{self.expr(e.expr, _PREDICATE_PREC + 1)} {word} {self.expr(e.pattern, 5)}"
        if isinstance(e, IsNull):
            word = "IS NOT NULL" if e.negated else "IS NULL"
            return _PREDICATE_PREC, f"{self.expr(e.expr, _PREDICATE_PREC + 1)} {word}"
        if isinstance(e, Exists):
            return 10, f"EXISTS ({self.select(e.query)})"
        if isinstance(e, ScalarSubquery):
            return 10, f"({self.select(e.query)})"
        if isinstance(e, Case):
            parts = ["CASE"]
            if e.operand is not None:
                parts.append(self.expr(e.operand))
            for cond, result in e.whens:
                parts.append(f"WHEN {self.expr(cond)} THEN {self.expr(result)}")
            if e.else_ is not None:
                parts.append(f"ELSE {self.expr(e.else_)}")
            parts.append("END")
            return 10, " ".join(parts)
        raise TypeError(f"unknown expression node: {e!r}")


def to_sql(node, fold_identifiers: bool = False) -> str:
    """Print a script, statement or select back to canonical SQL text."""
    printer = SqlPrinter(fold_identifiers=fold_identifiers)
    if isinstance(node, SqlScript):
        return printer.script(node)
    if isinstance(node, (SelectStatement, RawStatement)):
        return printer.statement(node)
    if isinstance(node, Select):
        return printer.select(node)
    raise TypeError(f"cannot print {type(node).__name__}")
