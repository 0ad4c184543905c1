"""Warehouse schema catalog and the universal account-code mapping.

The catalog is the ground truth for query validation and for the schema
block rendered into generation prompts.  The account mapping unifies the
three Vietnamese statement formats (bank / corporation / securities) onto
one set of category codes so facts from different report layouts never
collide.
"""

from __future__ import annotations

from dataclasses import dataclass, field


FORMAT_KINDS = ("bank", "corporation", "securities")


@dataclass(frozen=True)
class ColumnDef:
    name: str
    kind: str  # text | integer | real | decimal | bool | date


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]

    def column_names(self) -> set[str]:
        return {c.name for c in self.columns}


@dataclass
class SchemaCatalog:
    tables: list[TableDef]
    category_codes: dict[str, str] = field(default_factory=dict)
    ratio_codes: dict[str, str] = field(default_factory=dict)

    def table(self, name: str) -> TableDef | None:
        lname = name.lower()
        for t in self.tables:
            if t.name.lower() == lname:
                return t
        return None

    def table_names(self) -> set[str]:
        return {t.name for t in self.tables}


def _cols(*pairs: tuple[str, str]) -> tuple[ColumnDef, ...]:
    return tuple(ColumnDef(n, k) for n, k in pairs)


def default_catalog() -> SchemaCatalog:
    """The seven-table star schema served by the warehouse."""
    tables = [
        TableDef("company_info", _cols(
            ("stock_code", "text"), ("industry", "text"), ("exchange", "text"),
            ("stock_indices", "text"), ("is_bank", "bool"), ("is_securities", "bool"),
        )),
        TableDef("sub_and_shareholder", _cols(
            ("stock_code", "text"), ("invest_on", "text"),
        )),
        TableDef("financial_statement", _cols(
            ("stock_code", "text"), ("year", "integer"), ("quarter", "integer"),
            ("category_code", "text"), ("data", "decimal"), ("date_added", "date"),
        )),
        TableDef("industry_financial_statement", _cols(
            ("industry", "text"), ("year", "integer"), ("quarter", "integer"),
            ("category_code", "text"), ("data_mean", "decimal"), ("data_sum", "decimal"),
            ("date_added", "date"),
        )),
        TableDef("financial_ratio", _cols(
            ("ratio_code", "text"), ("stock_code", "text"), ("year", "integer"),
            ("quarter", "integer"), ("data", "real"), ("date_added", "date"),
        )),
        TableDef("industry_financial_ratio", _cols(
            ("industry", "text"), ("ratio_code", "text"), ("year", "integer"),
            ("quarter", "integer"), ("data_mean", "real"), ("date_added", "date"),
        )),
        TableDef("financial_statement_explaination", _cols(
            ("category_code", "text"), ("stock_code", "text"), ("year", "integer"),
            ("quarter", "integer"), ("data", "decimal"), ("date_added", "date"),
        )),
    ]
    category_codes = {
        "CASH_EQ": "Cash and cash equivalents",
        "ST_INVEST": "Short-term investments",
        "RECEIVABLES": "Accounts receivable",
        "INVENTORY": "Inventory",
        "FIXED_ASSETS": "Fixed assets",
        "TOTAL_ASSETS": "Total assets",
        "TOTAL_LIABILITIES": "Total liabilities",
        "OWNER_EQUITY": "Owner's equity",
        "NET_REVENUE": "Net revenue from sales and services",
        "GROSS_PROFIT": "Gross profit",
        "FIN_INCOME": "Financial income",
        "OPERATING_EXPENSE": "Operating expenses",
        "PROFIT_BEFORE_TAX": "Profit before tax",
        "PROFIT_AFTER_TAX": "Profit after tax (net income)",
        "CUST_LOANS": "Loans to customers",
        "CUST_DEPOSITS": "Customer deposits",
        "INTEREST_INCOME": "Net interest income",
        "BROKERAGE_REVENUE": "Revenue from brokerage services",
        "REAL_ESTATE_HOLDINGS": "Investment real-estate holdings",
        "LOAN_LOSS_PROVISION": "Provision for credit losses",
    }
    ratio_codes = {
        "CDGYoY": "Credit growth year over year",
        "ROE": "Return on equity",
        "ROA": "Return on assets",
        "NPM": "Net profit margin",
        "EPS": "Earnings per share",
        "NIM": "Net interest margin",
        "NIYoY": "Net income growth year over year",
        "REVYoY": "Revenue growth year over year",
        "LDR": "Loan to deposit ratio",
        "NPL": "Non-performing loan ratio",
        "CIR": "Cost to income ratio",
        "DTE": "Debt to equity ratio",
    }
    return SchemaCatalog(tables, category_codes, ratio_codes)


@dataclass(frozen=True)
class MappingEntry:
    format_kind: str
    raw_code: str
    unified_code: str
    label: str


@dataclass
class AccountMapping:
    entries: list[MappingEntry]

    def __post_init__(self):
        seen: set[tuple[str, str]] = set()
        for e in self.entries:
            if e.format_kind not in FORMAT_KINDS:
                raise ValueError(f"unknown format kind: {e.format_kind}")
            key = (e.format_kind, e.raw_code)
            if key in seen:
                raise ValueError(f"duplicate mapping entry for {key}")
            seen.add(key)
        self._by_key = {(e.format_kind, e.raw_code): e for e in self.entries}

    def covers(self, format_kind: str) -> bool:
        return any(e.format_kind == format_kind for e in self.entries)

    def lookup(self, format_kind: str, raw_code: str) -> MappingEntry | None:
        return self._by_key.get((format_kind, raw_code))

    def validate_against(self, catalog: SchemaCatalog) -> None:
        unknown = {e.unified_code for e in self.entries} - set(catalog.category_codes)
        if unknown:
            raise ValueError(f"mapping targets unknown category codes: {sorted(unknown)}")


# Hand-written fixture mapping: raw codes as they appear in the three VAS
# report layouts, unified onto the catalog's category codes.
_FIXTURE_MAPPING_ROWS = [
    # bank format
    ("bank", "B.I.1", "CASH_EQ", "Cash, gold and gemstones"),
    ("bank", "B.I.4", "ST_INVEST", "Trading securities"),
    ("bank", "B.II.1", "CUST_LOANS", "Loans to customers"),
    ("bank", "B.II.2", "LOAN_LOSS_PROVISION", "Provision for customer loans"),
    ("bank", "B.III.1", "CUST_DEPOSITS", "Deposits from customers"),
    ("bank", "B.IV.1", "TOTAL_ASSETS", "Total assets"),
    ("bank", "B.IV.2", "TOTAL_LIABILITIES", "Total liabilities"),
    ("bank", "B.IV.3", "OWNER_EQUITY", "Shareholders' equity"),
    ("bank", "B.P.1", "INTEREST_INCOME", "Net interest income"),
    ("bank", "B.P.5", "OPERATING_EXPENSE", "Operating expenses"),
    ("bank", "B.P.8", "PROFIT_BEFORE_TAX", "Profit before tax"),
    ("bank", "B.P.9", "PROFIT_AFTER_TAX", "Profit after tax"),
    # corporation format
    ("corporation", "110", "CASH_EQ", "Cash and cash equivalents"),
    ("corporation", "120", "ST_INVEST", "Short-term financial investments"),
    ("corporation", "130", "RECEIVABLES", "Short-term receivables"),
    ("corporation", "140", "INVENTORY", "Inventories"),
    ("corporation", "220", "FIXED_ASSETS", "Fixed assets"),
    ("corporation", "270", "TOTAL_ASSETS", "Total assets"),
    ("corporation", "300", "TOTAL_LIABILITIES", "Liabilities"),
    ("corporation", "400", "OWNER_EQUITY", "Owner's equity"),
    ("corporation", "10", "NET_REVENUE", "Net revenue from sales and services"),
    ("corporation", "20", "GROSS_PROFIT", "Gross profit from sales and services"),
    ("corporation", "21", "FIN_INCOME", "Financial income"),
    ("corporation", "50", "PROFIT_BEFORE_TAX", "Total accounting profit before tax"),
    ("corporation", "60", "PROFIT_AFTER_TAX", "Profit after corporate income tax"),
    # securities format
    ("securities", "S.111", "CASH_EQ", "Cash and cash equivalents"),
    ("securities", "S.121", "ST_INVEST", "Financial assets at fair value"),
    ("securities", "S.270", "TOTAL_ASSETS", "Total assets"),
    ("securities", "S.300", "TOTAL_LIABILITIES", "Liabilities"),
    ("securities", "S.400", "OWNER_EQUITY", "Owner's equity"),
    ("securities", "S.01", "BROKERAGE_REVENUE", "Revenue from brokerage services"),
    ("securities", "S.50", "PROFIT_BEFORE_TAX", "Profit before tax"),
    ("securities", "S.60", "PROFIT_AFTER_TAX", "Profit after tax"),
    ("securities", "S.45", "REAL_ESTATE_HOLDINGS", "Investment real estate"),
]


def fixture_mapping() -> AccountMapping:
    """The shipped mapping fixture (~30 raw codes across the 3 formats)."""
    return AccountMapping([MappingEntry(*row) for row in _FIXTURE_MAPPING_ROWS])
