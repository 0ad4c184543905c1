"""SQL parsing and read-only query policy enforcement."""

from finask.sqlguard.parser import (
    SqlScript,
    SelectStatement,
    RawStatement,
    SqlSyntaxError,
    parse_sql,
    to_sql,
)
from finask.sqlguard.validator import (
    QueryPolicy,
    ValidationReport,
    Violation,
    executable_sql,
    validate,
    validate_sql,
)

__all__ = [
    "SqlScript", "SelectStatement", "RawStatement", "SqlSyntaxError",
    "parse_sql", "to_sql",
    "QueryPolicy", "ValidationReport", "Violation",
    "validate", "validate_sql", "executable_sql",
]
