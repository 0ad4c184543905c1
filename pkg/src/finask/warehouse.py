"""Star-schema financial warehouse over an embedded SQLite engine.

Monetary facts are stored as 64-bit scaled integers (hundredths) and
surfaced through views as decimals, so ad-hoc SQL sees plain ``data``
columns while ingest/export round-trip exact values.  Ratios are stored
as doubles.  All public access after seeding is read-only; the executing
connection carries an authorizer that denies every write opcode.

The ``test`` and ``train`` fixture profiles deterministically seed a
small warehouse whose banking rows reproduce the reference credit-growth
result (HDB 0.64 / VPB 0.52 / MSB 0.35 / KLB 0.34 against an industry
mean of 0.24 for Q3 2023).
"""

from __future__ import annotations

import csv
import io
import itertools
import os
import random
import re
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Optional, Union

from finask.schema import AccountMapping, SchemaCatalog, default_catalog, fixture_mapping

DB_ENV_VAR = "FINASK_DB"

VALID_QUARTERS = (0, 1, 2, 3, 4)  # 0 = annual report

_MONEY_SCALE = 100  # two decimal digits


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[tuple]
    ordered: bool = False

    def render_fixed_width(self, max_rows: int = 20) -> str:
        """Plain fixed-width rendering: header row, separator, data rows."""
        shown = self.rows[:max_rows]
        cells = [[_fmt_cell(v) for v in row] for row in shown]
        widths = [len(c) for c in self.columns]
        for row in cells:
            for i, text in enumerate(row):
                widths[i] = max(widths[i], len(text))
        def line(values):
            return " | ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
        out = [line(self.columns), "-+-".join("-" * w for w in widths)]
        out.extend(line(row) for row in cells)
        if len(self.rows) > max_rows:
            out.append(f"... ({len(self.rows) - max_rows} more rows)")
        return "\n".join(out)


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExecError:
    kind: str  # syntax | semantic | timeout | empty
    message: str


@dataclass
class ExecLimits:
    row_cap: int = 1000
    timeout: float = 10.0  # seconds


@dataclass(frozen=True)
class FixtureProfile:
    name: str
    company_count: int
    year_range: tuple[int, int]  # inclusive


TRAIN_PROFILE = FixtureProfile("train", 102, (2016, 2022))
TEST_PROFILE = FixtureProfile("test", 200, (2016, 2024))

PROFILES = {p.name: p for p in (TRAIN_PROFILE, TEST_PROFILE)}

# Credit growth for Q3 2023: the four banks above the industry mean, in
# the reference order, plus the pinned mean itself.
GOLDEN_CREDIT_GROWTH = [("HDB", 0.64), ("VPB", 0.52), ("MSB", 0.35), ("KLB", 0.34)]
GOLDEN_INDUSTRY_MEAN = 0.24

_FIXED_COMPANIES = [
    # (stock_code, industry, exchange, indices, is_bank, is_securities)
    ("HDB", "Banking", "HOSE", "VN30", 1, 0),
    ("VPB", "Banking", "HOSE", "VN30", 1, 0),
    ("MSB", "Banking", "HOSE", "VN30", 1, 0),
    ("KLB", "Banking", "HNX", "HNX30", 1, 0),
    ("HPG", "Steel", "HOSE", "VN30", 0, 0),
    ("SSI", "Securities", "HOSE", "VN30", 0, 1),
]

_INDUSTRY_CYCLE = [
    "Banking", "Steel", "Real Estate", "Technology",
    "Consumer Goods", "Energy", "Retail", "Securities",
]

_STATEMENT_CODES = ("NET_REVENUE", "PROFIT_AFTER_TAX", "TOTAL_ASSETS", "CASH_EQ")
_RATIO_CODES_COMMON = ("ROE", "ROA", "NPM")
_RATIO_CODES_BANK = ("CDGYoY", "NIM")


@dataclass
class IngestReport:
    inserted: int = 0
    remapped: int = 0
    rejected: list[tuple[dict, str]] = field(default_factory=list)


class Warehouse:
    """Embedded warehouse handle. Seeding/ingest are single-writer; reads
    serialize on an internal lock and are safe to share across threads."""

    def __init__(self, path: Optional[str] = None, catalog: Optional[SchemaCatalog] = None):
        self.path = path or os.environ.get(DB_ENV_VAR) or ":memory:"
        self.catalog = catalog or default_catalog()
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._create_schema()

    # -- schema ---------------------------------------------------------------

    def _create_schema(self) -> None:
        with self._lock:
            self._conn.executescript("""
            CREATE TABLE IF NOT EXISTS company_info (
                stock_code TEXT PRIMARY KEY,
                industry TEXT NOT NULL,
                exchange TEXT NOT NULL,
                stock_indices TEXT NOT NULL DEFAULT '',
                is_bank INTEGER NOT NULL DEFAULT 0,
                is_securities INTEGER NOT NULL DEFAULT 0
            );
            CREATE TABLE IF NOT EXISTS sub_and_shareholder (
                stock_code TEXT NOT NULL,
                invest_on TEXT NOT NULL,
                PRIMARY KEY (stock_code, invest_on)
            );
            CREATE TABLE IF NOT EXISTS financial_statement_facts (
                stock_code TEXT NOT NULL,
                year INTEGER NOT NULL,
                quarter INTEGER NOT NULL CHECK (quarter BETWEEN 0 AND 4),
                category_code TEXT NOT NULL,
                data_scaled INTEGER NOT NULL,
                date_added TEXT NOT NULL,
                PRIMARY KEY (stock_code, year, quarter, category_code)
            );
            CREATE VIEW IF NOT EXISTS financial_statement AS
                SELECT stock_code, year, quarter, category_code,
                       data_scaled / 100.0 AS data, date_added
                FROM financial_statement_facts;
            CREATE TABLE IF NOT EXISTS industry_financial_statement_facts (
                industry TEXT NOT NULL,
                year INTEGER NOT NULL,
                quarter INTEGER NOT NULL CHECK (quarter BETWEEN 0 AND 4),
                category_code TEXT NOT NULL,
                data_mean_scaled INTEGER NOT NULL,
                data_sum_scaled INTEGER NOT NULL,
                date_added TEXT NOT NULL,
                PRIMARY KEY (industry, year, quarter, category_code)
            );
            CREATE VIEW IF NOT EXISTS industry_financial_statement AS
                SELECT industry, year, quarter, category_code,
                       data_mean_scaled / 100.0 AS data_mean,
                       data_sum_scaled / 100.0 AS data_sum,
                       date_added
                FROM industry_financial_statement_facts;
            CREATE TABLE IF NOT EXISTS financial_ratio (
                ratio_code TEXT NOT NULL,
                stock_code TEXT NOT NULL,
                year INTEGER NOT NULL,
                quarter INTEGER NOT NULL CHECK (quarter BETWEEN 0 AND 4),
                data REAL NOT NULL,
                date_added TEXT NOT NULL,
                PRIMARY KEY (ratio_code, stock_code, year, quarter)
            );
            CREATE TABLE IF NOT EXISTS industry_financial_ratio (
                industry TEXT NOT NULL,
                ratio_code TEXT NOT NULL,
                year INTEGER NOT NULL,
                quarter INTEGER NOT NULL CHECK (quarter BETWEEN 0 AND 4),
                data_mean REAL NOT NULL,
                date_added TEXT NOT NULL,
                PRIMARY KEY (industry, ratio_code, year, quarter)
            );
            CREATE TABLE IF NOT EXISTS financial_statement_explaination_facts (
                category_code TEXT NOT NULL,
                stock_code TEXT NOT NULL,
                year INTEGER NOT NULL,
                quarter INTEGER NOT NULL CHECK (quarter BETWEEN 0 AND 4),
                data_scaled INTEGER NOT NULL,
                date_added TEXT NOT NULL,
                PRIMARY KEY (category_code, stock_code, year, quarter)
            );
            CREATE VIEW IF NOT EXISTS financial_statement_explaination AS
                SELECT category_code, stock_code, year, quarter,
                       data_scaled / 100.0 AS data, date_added
                FROM financial_statement_explaination_facts;
            """)
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- ingest -----------------------------------------------------------------

    def ingest_statements(self, rows: Iterable[dict], format_kind: str,
                          mapping: AccountMapping) -> IngestReport:
        """Load raw statement records, remapping raw codes to unified ones.

        Rows need keys: stock_code, year, quarter, raw_code, data.  Rows
        that cannot be mapped or stored are reported, never dropped.
        """
        if not mapping.covers(format_kind):
            raise ValueError(f"mapping has no entries for format {format_kind!r}")
        mapping.validate_against(self.catalog)
        report = IngestReport()
        with self._lock:
            cur = self._conn.cursor()
            for row in rows:
                try:
                    stock = str(row["stock_code"]).strip()
                    year = int(row["year"])
                    quarter = int(row["quarter"])
                    raw_code = str(row["raw_code"]).strip()
                except (KeyError, TypeError, ValueError):
                    report.rejected.append((dict(row), "bad_row"))
                    continue
                if quarter not in VALID_QUARTERS:
                    report.rejected.append((dict(row), "bad_quarter"))
                    continue
                entry = mapping.lookup(format_kind, raw_code)
                if entry is None:
                    report.rejected.append((dict(row), "unmapped_code"))
                    continue
                try:
                    scaled = _to_scaled(row["data"])
                except (InvalidOperation, KeyError, TypeError, ValueError):
                    report.rejected.append((dict(row), "bad_data"))
                    continue
                try:
                    cur.execute(
                        "INSERT INTO financial_statement_facts "
                        "(stock_code, year, quarter, category_code, data_scaled, date_added) "
                        "VALUES (?, ?, ?, ?, ?, ?)",
                        (stock, year, quarter, entry.unified_code, scaled,
                         _date_added(year, quarter)))
                except sqlite3.IntegrityError:
                    report.rejected.append((dict(row), "conflict"))
                    continue
                report.inserted += 1
                if raw_code != entry.unified_code:
                    report.remapped += 1
            self._conn.commit()
        return report

    def ingest_file(self, path: str, format_kind: str, mapping: Optional[AccountMapping] = None,
                    delimiter: str = ",") -> IngestReport:
        """Ingest a UTF-8 delimiter-separated file with a header row."""
        mapping = mapping or fixture_mapping()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            missing = {"stock_code", "year", "quarter", "raw_code", "data"} - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"ingest file is missing columns: {sorted(missing)}")
            return self.ingest_statements(reader, format_kind, mapping)

    # -- fixtures -----------------------------------------------------------------

    def seed_fixture(self, profile: Union[str, FixtureProfile]) -> "Warehouse":
        """Deterministically populate the warehouse for a profile. Existing
        fact rows are cleared first, so reseeding is idempotent."""
        if isinstance(profile, str):
            try:
                profile = PROFILES[profile]
            except KeyError:
                raise ValueError(f"unknown fixture profile {profile!r}; "
                                 f"expected one of {sorted(PROFILES)}") from None
        rng = random.Random(f"finask-fixture-{profile.name}")
        companies = _fixture_companies(profile)
        y0, y1 = profile.year_range

        stmt_rows: list[tuple] = []
        ratio_rows: list[tuple] = []
        for code, industry, *_rest in companies:
            is_bank = industry == "Banking"
            for year in range(y0, y1 + 1):
                for quarter in _quarters_for(year, profile):
                    date_added = _date_added(year, quarter)
                    for cat in _STATEMENT_CODES:
                        scaled = rng.randrange(10**9, 10**14)
                        stmt_rows.append((code, year, quarter, cat, scaled, date_added))
                    for rc in _RATIO_CODES_COMMON:
                        value = round(rng.uniform(0.01, 0.35), 4)
                        ratio_rows.append((rc, code, year, quarter, value, date_added))
                    if is_bank:
                        golden = _golden_credit_growth(code, year, quarter)
                        if golden is None:
                            # fillers stay strictly below the pinned industry mean
                            golden = round(rng.uniform(0.0, 0.20), 2)
                        ratio_rows.append(("CDGYoY", code, year, quarter, golden, date_added))
                        ratio_rows.append(("NIM", code, year, quarter,
                                           round(rng.uniform(0.01, 0.09), 4), date_added))

        shareholder_rows = [(companies[i][0], companies[i + 1][0])
                            for i in range(0, len(companies) - 1, 10)]
        expl_rows = []
        for code, industry, *_rest in companies[:6]:
            expl_cat = "CUST_LOANS" if industry == "Banking" else "REAL_ESTATE_HOLDINGS"
            for year in (y1 - 1, y1):
                for quarter in _quarters_for(year, profile):
                    expl_rows.append((expl_cat, code, year, quarter,
                                      rng.randrange(10**8, 10**13), _date_added(year, quarter)))

        with self._lock:
            cur = self._conn.cursor()
            for table in ("company_info", "sub_and_shareholder", "financial_statement_facts",
                          "industry_financial_statement_facts", "financial_ratio",
                          "industry_financial_ratio", "financial_statement_explaination_facts"):
                cur.execute(f"DELETE FROM {table}")
            cur.executemany(
                "INSERT INTO company_info VALUES (?, ?, ?, ?, ?, ?)", companies)
            cur.executemany(
                "INSERT INTO sub_and_shareholder VALUES (?, ?)", shareholder_rows)
            cur.executemany(
                "INSERT INTO financial_statement_facts VALUES (?, ?, ?, ?, ?, ?)", stmt_rows)
            cur.executemany(
                "INSERT INTO financial_ratio VALUES (?, ?, ?, ?, ?, ?)", ratio_rows)
            cur.executemany(
                "INSERT INTO financial_statement_explaination_facts VALUES (?, ?, ?, ?, ?, ?)",
                expl_rows)
            self._seed_industry_aggregates(cur)
            self._conn.commit()
        return self

    def _seed_industry_aggregates(self, cur: sqlite3.Cursor) -> None:
        # Means/sums computed from the seeded company facts; the banking
        # credit-growth mean for Q3 2023 is pinned to the reference value.
        cur.execute("""
            INSERT INTO industry_financial_statement_facts
            SELECT ci.industry, f.year, f.quarter, f.category_code,
                   CAST(AVG(f.data_scaled) AS INTEGER),
                   SUM(f.data_scaled),
                   MAX(f.date_added)
            FROM financial_statement_facts f
            JOIN company_info ci ON ci.stock_code = f.stock_code
            GROUP BY ci.industry, f.year, f.quarter, f.category_code
        """)
        cur.execute("""
            INSERT INTO industry_financial_ratio
            SELECT ci.industry, r.ratio_code, r.year, r.quarter,
                   ROUND(AVG(r.data), 6),
                   MAX(r.date_added)
            FROM financial_ratio r
            JOIN company_info ci ON ci.stock_code = r.stock_code
            GROUP BY ci.industry, r.ratio_code, r.year, r.quarter
        """)
        cur.execute("""
            UPDATE industry_financial_ratio SET data_mean = ?
            WHERE industry = 'Banking' AND ratio_code = 'CDGYoY'
              AND year = 2023 AND quarter = 3
        """, (GOLDEN_INDUSTRY_MEAN,))

    # -- queries ------------------------------------------------------------------

    def execute_readonly(self, sql: str,
                         limits: Optional[ExecLimits] = None) -> Union[ResultTable, ExecError]:
        """Run a SELECT under read-only authorization, a row cap and a
        wall-clock deadline.  Empty results are surfaced as ExecError('empty')
        so the correction loop can react to them."""
        limits = limits or ExecLimits()
        deadline = time.monotonic() + limits.timeout
        with self._lock:
            self._conn.set_authorizer(_readonly_authorizer)
            self._conn.set_progress_handler(lambda: time.monotonic() > deadline, 5000)
            try:
                cur = self._conn.execute(sql)
                rows = cur.fetchmany(limits.row_cap)
                columns = [d[0] for d in cur.description] if cur.description else []
            except sqlite3.Error as exc:
                return _classify_error(exc)
            finally:
                # Python 3.10 can't clear the hook with None (bpo-45858),
                # so restore an allow-everything authorizer instead.
                self._conn.set_authorizer(_allow_all_authorizer)
                self._conn.set_progress_handler(None, 0)
        if not rows:
            return ExecError("empty", "query returned no rows")
        return ResultTable(columns=columns, rows=[tuple(r) for r in rows])

    def table_row_counts(self) -> dict[str, int]:
        counts = {}
        with self._lock:
            for (name,) in self._conn.execute(
                    "SELECT name FROM sqlite_master WHERE type='table' ORDER BY name"):
                counts[name] = self._conn.execute(
                    f"SELECT COUNT(*) FROM {name}").fetchone()[0]
        return counts

    def company_count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM company_info").fetchone()[0]

    def is_seeded(self) -> bool:
        return self.company_count() > 0

    # -- export ---------------------------------------------------------------------

    def export_facts(self) -> str:
        """Company-level facts as delimiter-separated text (the ingest layout).
        Deterministic ordering; scaled integers rendered as exact decimals."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stock_code", "year", "quarter", "raw_code", "data"])
        with self._lock:
            for stock, year, quarter, code, scaled in self._conn.execute(
                    "SELECT stock_code, year, quarter, category_code, data_scaled "
                    "FROM financial_statement_facts "
                    "ORDER BY stock_code, year, quarter, category_code"):
                writer.writerow([stock, year, quarter, code, _from_scaled(scaled)])
            for code, stock, year, quarter, value in self._conn.execute(
                    "SELECT ratio_code, stock_code, year, quarter, data FROM financial_ratio "
                    "ORDER BY stock_code, year, quarter, ratio_code"):
                writer.writerow([stock, year, quarter, code, repr(value)])
            for code, stock, year, quarter, scaled in self._conn.execute(
                    "SELECT category_code, stock_code, year, quarter, data_scaled "
                    "FROM financial_statement_explaination_facts "
                    "ORDER BY stock_code, year, quarter, category_code"):
                writer.writerow([stock, year, quarter, code, _from_scaled(scaled)])
        return buf.getvalue()

    # -- vector-index feed ------------------------------------------------------------

    def list_companies(self) -> list[tuple[str, str]]:
        """(stock_code, industry) for every company."""
        with self._lock:
            return list(self._conn.execute(
                "SELECT stock_code, industry FROM company_info ORDER BY stock_code"))

    def list_industries(self) -> list[str]:
        with self._lock:
            return [r[0] for r in self._conn.execute(
                "SELECT DISTINCT industry FROM company_info ORDER BY industry")]


# -- helpers -----------------------------------------------------------------------

def _to_scaled(value) -> int:
    dec = Decimal(str(value))
    scaled = int((dec * _MONEY_SCALE).to_integral_value())
    if (Decimal(scaled) / _MONEY_SCALE) != dec:
        raise ValueError(f"more than 2 decimal digits: {value!r}")
    return scaled


def _from_scaled(scaled: int) -> str:
    dec = Decimal(scaled) / _MONEY_SCALE
    text = format(dec.normalize(), "f")
    return text


def _date_added(year: int, quarter: int) -> str:
    # deterministic publication date: ~45 days after period end
    if quarter == 0:
        return f"{year + 1}-02-14"
    month = quarter * 3 + 1
    if month > 12:
        return f"{year + 1}-01-14"
    return f"{year}-{month:02d}-14"


def _quarters_for(year: int, profile: FixtureProfile) -> tuple[int, ...]:
    # the final fixture year only runs through Q3 (no annual report yet)
    if profile.name == "test" and year == profile.year_range[1]:
        return (1, 2, 3)
    return VALID_QUARTERS


def _golden_credit_growth(code: str, year: int, quarter: int) -> Optional[float]:
    if year == 2023 and quarter == 3:
        for stock, value in GOLDEN_CREDIT_GROWTH:
            if stock == code:
                return value
    return None


def _fixture_companies(profile: FixtureProfile) -> list[tuple]:
    companies = list(_FIXED_COMPANIES)
    reserved = {c[0] for c in companies}
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    ticker_stream = ("".join(t) for t in itertools.product(letters, repeat=3))
    industries = itertools.cycle(_INDUSTRY_CYCLE)
    while len(companies) < profile.company_count:
        ticker = next(ticker_stream)
        if ticker in reserved:
            continue
        industry = next(industries)
        exchange = "HOSE" if len(companies) % 2 == 0 else "HNX"
        indices = "VN30" if len(companies) < 30 else ("HNX30" if len(companies) < 60 else "")
        companies.append((ticker, industry, exchange, indices,
                          1 if industry == "Banking" else 0,
                          1 if industry == "Securities" else 0))
    return companies


_SYNTAX_MARKERS = ("syntax error", "unrecognized token", "incomplete input")


def _classify_error(exc: sqlite3.Error) -> ExecError:
    message = str(exc)
    lowered = message.lower()
    if "interrupted" in lowered:
        return ExecError("timeout", message)
    if any(m in lowered for m in _SYNTAX_MARKERS):
        return ExecError("syntax", message)
    if isinstance(exc, sqlite3.OperationalError):
        return ExecError("semantic", message)
    return ExecError("semantic", message)


def _readonly_authorizer(action, arg1, arg2, dbname, source):
    if action in (sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ):
        return sqlite3.SQLITE_OK
    if action == getattr(sqlite3, "SQLITE_FUNCTION", 31):
        return sqlite3.SQLITE_OK
    return sqlite3.SQLITE_DENY


def _allow_all_authorizer(action, arg1, arg2, dbname, source):
    return sqlite3.SQLITE_OK
