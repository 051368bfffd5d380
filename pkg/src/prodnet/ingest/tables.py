"""Supply/Use table containers and CSV fixture parsing.

Fixture schema (bit-exact):
    supply.csv  = (year, commodity, industry, value)
    use.csv     = (year, industry, commodity, value)
    imports.csv = (year, commodity, value)
    prices.csv  = (year, industry, index)
    tfp.csv     = (year, industry, log_tfp)

use.csv carries three reserved code families in the standard accounting
convention: commodity "V001" is labor compensation paid by the industry,
pseudo-industry "F010" is household consumption of the commodity, and
pseudo-industry "F040" is exports of the commodity. Other V* commodity rows
(non-compensation value added) and F* purchaser rows (other final demand)
are accepted and ignored. Negative cells are clamped to zero with a
warning; they occur in published tables through redefinitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError

log = logging.getLogger(__name__)

COMPENSATION_CODE = "V001"
PCE_CODE = "F010"
EXPORTS_CODE = "F040"

REQUIRED_FILES = ("supply.csv", "use.csv", "imports.csv", "prices.csv")


@dataclass(frozen=True, eq=False)
class SupplyUseTables:
    """Parsed tables keyed by year; array layouts are fixed:

    S[t]: C x N supply of commodity c by industry j (currency units)
    U[t]: N x C use of commodity c by industry i
    Imp[t]: C imports per commodity
    V[t]: N labor compensation per industry
    pce[t]: C household consumption per commodity
    exports[t]: C exports per commodity
    price_index[t]: N gross-output price index per industry
    """

    years: tuple[int, ...]
    commodities: tuple[str, ...]
    industries: tuple[str, ...]
    S: dict
    U: dict
    Imp: dict
    V: dict
    pce: dict
    exports: dict
    price_index: dict

    @property
    def n_industries(self) -> int:
        return len(self.industries)

    @property
    def n_commodities(self) -> int:
        return len(self.commodities)

    def require_year(self, year: int) -> None:
        if year not in self.S:
            raise DataError(f"year {year} not present in tables "
                            f"(have {self.years[0]}..{self.years[-1]})")


@dataclass(frozen=True, eq=False)
class TFPPanel:
    """Log-TFP levels, years by industries."""

    years: tuple[int, ...]
    industries: tuple[str, ...]
    values: np.ndarray

    @property
    def n_years(self) -> int:
        return len(self.years)


def _read_csv(path: Path, columns: tuple[str, ...],
              string_cols: tuple[str, ...]) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing required file {path.name} in {path.parent}")
    frame = pd.read_csv(path, dtype={c: str for c in string_cols})
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path.name} lacks required columns {missing}")
    return frame


def _clamp_negatives(frame: pd.DataFrame, value_col: str, name: str) -> pd.DataFrame:
    negatives = int((frame[value_col] < 0).sum())
    if negatives:
        log.warning("%s: clamped %d negative cells to 0", name, negatives)
        frame = frame.copy()
        frame.loc[frame[value_col] < 0, value_col] = 0.0
    return frame


def _pivot(frame: pd.DataFrame, rows: str, cols: str, row_order, col_order,
           value_col: str = "value") -> np.ndarray:
    table = frame.pivot_table(index=rows, columns=cols, values=value_col,
                              aggfunc="sum", fill_value=0.0)
    table = table.reindex(index=row_order, columns=col_order, fill_value=0.0)
    return table.to_numpy(dtype=float)


def read_fixture_tables(directory) -> SupplyUseTables:
    """Parse the CSV fixture directory into SupplyUseTables."""
    directory = Path(directory)
    supply = _read_csv(directory / "supply.csv",
                       ("year", "commodity", "industry", "value"),
                       ("commodity", "industry"))
    use = _read_csv(directory / "use.csv",
                    ("year", "industry", "commodity", "value"),
                    ("commodity", "industry"))
    imports = _read_csv(directory / "imports.csv",
                        ("year", "commodity", "value"), ("commodity",))
    prices = _read_csv(directory / "prices.csv",
                       ("year", "industry", "index"), ("industry",))

    supply = _clamp_negatives(supply, "value", "supply.csv")
    use = _clamp_negatives(use, "value", "use.csv")
    imports = _clamp_negatives(imports, "value", "imports.csv")

    years = tuple(sorted(int(y) for y in supply["year"].unique()))
    if not years:
        raise DataError("supply.csv contains no years")
    # ordering: first appearance in supply.csv fixes the sector order
    industries = tuple(dict.fromkeys(supply["industry"]))
    commodities = tuple(dict.fromkeys(supply["commodity"]))

    va_mask = use["commodity"].str.startswith("V")
    fd_mask = use["industry"].str.startswith("F")
    compensation = use[use["commodity"] == COMPENSATION_CODE]
    pce = use[use["industry"] == PCE_CODE]
    exports = use[use["industry"] == EXPORTS_CODE]
    core_use = use[~va_mask & ~fd_mask]

    out = {"S": {}, "U": {}, "Imp": {}, "V": {}, "pce": {}, "exports": {},
           "price_index": {}}
    for year in years:
        sy = supply[supply["year"] == year]
        out["S"][year] = _pivot(sy, "commodity", "industry",
                                commodities, industries)
        uy = core_use[core_use["year"] == year]
        out["U"][year] = _pivot(uy, "industry", "commodity",
                                industries, commodities)
        for name, frame, key_col, order in (
                ("use.csv (V001 rows)", compensation, "industry", industries),
                ("use.csv (F010 rows)", pce, "commodity", commodities),
                ("use.csv (F040 rows)", exports, "commodity", commodities),
                ("imports.csv", imports, "commodity", commodities)):
            fy = frame[frame["year"] == year]
            vec = (fy.groupby(key_col)["value"].sum()
                   .reindex(order, fill_value=0.0).to_numpy(dtype=float))
            target = {"use.csv (V001 rows)": "V", "use.csv (F010 rows)": "pce",
                      "use.csv (F040 rows)": "exports",
                      "imports.csv": "Imp"}[name]
            out[target][year] = vec
        py = prices[prices["year"] == year]
        if py.empty:
            raise DataError(f"prices.csv has no rows for year {year}")
        out["price_index"][year] = (
            py.groupby("industry")["index"].mean()
            .reindex(industries).to_numpy(dtype=float))
        if np.isnan(out["price_index"][year]).any():
            gone = [industries[k] for k in
                    np.nonzero(np.isnan(out["price_index"][year]))[0]]
            raise DataError(
                f"prices.csv year {year} missing industries {gone}")
        uy_all = use[use["year"] == year]
        if uy_all.empty:
            raise DataError(f"use.csv has no rows for year {year}")
        iy = imports[imports["year"] == year]
        if iy.empty:
            raise DataError(f"imports.csv has no rows for year {year}")

    return SupplyUseTables(
        years=years, commodities=commodities, industries=industries,
        S=out["S"], U=out["U"], Imp=out["Imp"], V=out["V"], pce=out["pce"],
        exports=out["exports"], price_index=out["price_index"])


def read_tfp_panel(path) -> TFPPanel:
    """Parse tfp.csv (year, industry, log_tfp) into a complete panel."""
    path = Path(path)
    frame = _read_csv(path, ("year", "industry", "log_tfp"), ("industry",))
    years = tuple(sorted(int(y) for y in frame["year"].unique()))
    industries = tuple(dict.fromkeys(frame["industry"]))
    table = frame.pivot_table(index="year", columns="industry",
                              values="log_tfp", aggfunc="mean")
    table = table.reindex(index=list(years), columns=list(industries))
    values = table.to_numpy(dtype=float)
    if np.isnan(values).any():
        where = np.argwhere(np.isnan(values))
        y, c = where[0]
        raise DataError(
            f"tfp.csv incomplete: no value for year {years[y]}, "
            f"industry {industries[c]} ({len(where)} holes in total)")
    return TFPPanel(years=years, industries=industries, values=values)
