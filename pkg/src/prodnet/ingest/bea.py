"""BEA API client with an on-disk cache.

Raw JSON responses are cached per (table, year-range) via atomic rename, then
flattened into the package's CSV fixture schema inside <cache>/fixtures/ so
every downstream step runs off the same parser regardless of data origin.
Repeat runs are fully offline once the cache is warm.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import requests

from ..errors import DataError, TransportError
from .tables import SupplyUseTables, read_fixture_tables

log = logging.getLogger(__name__)

API_KEY_ENV = "BEA_API_KEY"
DEFAULT_BASE_URL = "https://apps.bea.gov/api/data"
# logical table -> (fixture file, row-code meaning, column-code meaning)
TABLE_LAYOUT = {
    "supply": ("supply.csv", "commodity", "industry"),
    "use": ("use.csv", "commodity", "industry"),
    "imports": ("imports.csv", "commodity", None),
    "prices": ("prices.csv", "industry", None),
}


@dataclass(frozen=True)
class BEARequest:
    """Dataset coordinates for one pull; all parameter names configurable."""

    years: tuple
    table_ids: dict = field(default_factory=lambda: {
        "supply": "Supply", "use": "Use_SUT", "imports": "ImportMatrices",
        "prices": "GrossOutputPrices"})
    base_url: str = DEFAULT_BASE_URL
    dataset: str = "InputOutput"
    method: str = "GetData"
    year_field: str = "Year"
    row_field: str = "RowCode"
    col_field: str = "ColCode"
    value_field: str = "DataValue"
    timeout: float = 120.0

    def params(self, table: str, api_key: str) -> dict:
        return {
            "UserID": api_key,
            "method": self.method,
            "DatasetName": self.dataset,
            "TableID": str(self.table_ids[table]),
            "Year": ",".join(str(y) for y in self.years),
            "ResultFormat": "JSON",
        }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fetch_raw(config: BEARequest, table: str, cache_file: Path) -> dict:
    if cache_file.exists():
        return json.loads(cache_file.read_text())
    api_key = os.environ.get(API_KEY_ENV)
    if not api_key:
        raise TransportError(
            f"no cached response at {cache_file} and {API_KEY_ENV} unset")
    try:
        response = requests.get(config.base_url,
                                params=config.params(table, api_key),
                                timeout=config.timeout)
        response.raise_for_status()
        payload = response.json()
    except (requests.RequestException, ValueError) as exc:
        raise TransportError(
            f"fetch of table {table!r} failed with no cache: {exc}") from exc
    _atomic_write(cache_file, json.dumps(payload, sort_keys=True))
    return payload


def _rows_of(payload: dict, table: str) -> list:
    node = payload
    for key in ("BEAAPI", "Results"):
        if not isinstance(node, dict) or key not in node:
            raise DataError(f"table {table!r}: response lacks field {key!r}")
        node = node[key]
    if isinstance(node, list):
        node = node[0] if node else {}
    if not isinstance(node, dict) or "Data" not in node:
        raise DataError(f"table {table!r}: response lacks field 'Data'")
    rows = node["Data"]
    if not isinstance(rows, list):
        raise DataError(f"table {table!r}: field 'Data' is not a list")
    return rows


def _cell_value(raw, table: str) -> float:
    if raw is None:
        return 0.0
    text = str(raw).replace(",", "").strip()
    if text in ("", "...", "....", ".....", "(D)", "NA"):
        return 0.0
    try:
        return float(text)
    except ValueError:
        raise DataError(f"table {table!r}: unparseable value {raw!r}")


def _flatten(config: BEARequest, table: str, payload: dict,
             out_path: Path) -> None:
    file_name, row_meaning, col_meaning = TABLE_LAYOUT[table]
    rows = _rows_of(payload, table)
    if table == "prices":
        header = ["year", "industry", "index"]
    elif col_meaning is None:
        header = ["year", row_meaning, "value"]
    else:
        # use.csv stores (year, industry, commodity, value)
        header = (["year", "industry", "commodity", "value"]
                  if table == "use" else
                  ["year", row_meaning, col_meaning, "value"])
    lines = [header]
    for row in rows:
        for name in (config.year_field, config.row_field, config.value_field):
            if name not in row:
                raise DataError(f"table {table!r}: row lacks field {name!r}")
        year = row[config.year_field]
        code = str(row[config.row_field]).strip()
        value = _cell_value(row[config.value_field], table)
        if col_meaning is None:
            lines.append([year, code, repr(value)])
            continue
        if config.col_field not in row:
            raise DataError(
                f"table {table!r}: row lacks field {config.col_field!r}")
        col = str(row[config.col_field]).strip()
        if table == "use":
            lines.append([year, col, code, repr(value)])
        else:
            lines.append([year, code, col, repr(value)])
    tmp = out_path.with_name(out_path.name + ".tmp")
    with tmp.open("w", newline="") as handle:
        csv.writer(handle).writerows(lines)
    os.replace(tmp, out_path)


def fetch_bea_tables(config: BEARequest, cache_dir) -> SupplyUseTables:
    """Fetch (or reload from cache) the four core tables and parse them."""
    cache_dir = Path(cache_dir)
    fixtures = cache_dir / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    for table in TABLE_LAYOUT:
        cache_file = cache_dir / f"{table}.json"
        payload = _fetch_raw(config, table, cache_file)
        _flatten(config, table, payload, fixtures / TABLE_LAYOUT[table][0])
    return read_fixture_tables(fixtures)
