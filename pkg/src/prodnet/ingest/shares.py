"""Expenditure shares, import ratios, and base-year snapshot assembly.

The commodity/industry bridge uses the standard market-shares assumption:
commodity c's spending is attributed to producing industries in proportion
to their share of commodity supply. All downstream objects (omega, phi,
household shares, sales) live in industry space.
"""

from __future__ import annotations

import logging

import numpy as np

from ..economy import Economy, IOSnapshot, build_io_matrix
from ..errors import DataError
from .tables import SupplyUseTables

log = logging.getLogger(__name__)

DEFAULT_TRADEABLE_THRESHOLD = 0.25


def compute_expenditure_shares(tables: SupplyUseTables, year: int):
    """Return (omega, market_share) for the year.

    market_share[c, j] is industry j's share of commodity c supply;
    omega[i, j] is industry i's expenditure share on industry j inputs,
    rows normalized to sum to one over positive-spend rows.
    """
    tables.require_year(year)
    supply = tables.S[year]
    use = tables.U[year]
    totals = supply.sum(axis=1)
    spent = use.sum(axis=0)
    dead = (totals <= 0.0) & (spent > 0.0)
    if dead.any():
        names = [tables.commodities[k] for k in np.nonzero(dead)[0]]
        raise DataError(
            f"year {year}: commodities used but never supplied: {names}")
    market_share = np.divide(supply, totals[:, None],
                             out=np.zeros_like(supply),
                             where=totals[:, None] > 0.0)
    spend = use @ market_share
    row_totals = spend.sum(axis=1)
    omega = np.divide(spend, row_totals[:, None],
                      out=np.zeros_like(spend),
                      where=row_totals[:, None] > 0.0)
    return omega, market_share


def compute_import_ratios(tables: SupplyUseTables, year: int) -> np.ndarray:
    """Domestic share phi_j per input industry: 1 minus the supply-weighted
    imported share of the commodities j produces. Clipped to [0, 1]."""
    tables.require_year(year)
    supply = tables.S[year]
    use = tables.U[year]
    totals = supply.sum(axis=1)
    dead = (totals <= 0.0) & (use.sum(axis=0) > 0.0)
    if dead.any():
        names = [tables.commodities[k] for k in np.nonzero(dead)[0]]
        raise DataError(
            f"year {year}: commodities used but never supplied: {names}")
    ratios = np.divide(tables.Imp[year], totals,
                       out=np.zeros_like(totals), where=totals > 0.0)
    market_share = np.divide(supply, totals[:, None],
                             out=np.zeros_like(supply),
                             where=totals[:, None] > 0.0)
    return np.clip(1.0 - ratios @ market_share, 0.0, 1.0)


def phi_panel(tables: SupplyUseTables) -> np.ndarray:
    """Domestic shares stacked over years, T x N."""
    return np.stack([compute_import_ratios(tables, y) for y in tables.years])


def classify_tradeable(phi_panel: np.ndarray,
                       threshold: float = DEFAULT_TRADEABLE_THRESHOLD) -> np.ndarray:
    """Tradeable flag per industry: mean import share 1 - phi over years
    above threshold."""
    phi_panel = np.atleast_2d(np.asarray(phi_panel, dtype=float))
    return (1.0 - phi_panel).mean(axis=0) > threshold


def gross_output(tables: SupplyUseTables, year: int) -> np.ndarray:
    tables.require_year(year)
    return tables.S[year].sum(axis=0)


def make_economy(tables: SupplyUseTables,
                 threshold: float = DEFAULT_TRADEABLE_THRESHOLD) -> Economy:
    flags = classify_tradeable(phi_panel(tables), threshold)
    return Economy(codes=tables.industries, labels=tables.industries,
                   tradeable=tuple(bool(f) for f in flags))


def make_snapshot(tables: SupplyUseTables, year: int,
                  economy: Economy | None = None) -> IOSnapshot:
    """Assemble the base-year share snapshot.

    Units: lambda and nx are measured relative to total household spending,
    matching the aggregate-expenditure numeraire used downstream.
    """
    tables.require_year(year)
    if economy is None:
        economy = make_economy(tables)
    n = len(tables.industries)
    omega, market_share = compute_expenditure_shares(tables, year)
    phi_col = compute_import_ratios(tables, year)
    phi_col = np.where(np.asarray(economy.tradeable), phi_col, 1.0)
    phi = np.broadcast_to(phi_col, (n, n)).copy()

    go = gross_output(tables, year)
    if (go <= 0.0).any():
        names = [tables.industries[k] for k in np.nonzero(go <= 0.0)[0]]
        raise DataError(f"year {year}: industries with no output: {names}")
    gamma = tables.V[year] / go
    spend = (tables.U[year] @ market_share).sum(axis=1)
    over = gamma + spend / go
    bad = np.abs(over - 1.0) > 0.25
    if bad.any():
        names = [tables.industries[k] for k in np.nonzero(bad)[0]]
        log.warning("year %d: compensation + input cost far from output "
                    "for %s; shares renormalized downstream", year, names)
    gamma = np.clip(gamma / np.maximum(over, 1e-12), 1e-6, 1.0 - 1e-6)

    pce_total = tables.pce[year].sum()
    if pce_total <= 0.0:
        raise DataError(f"year {year}: household consumption is not positive")
    pce_ind = tables.pce[year] @ market_share
    a0 = pce_ind / pce_ind.sum()
    lam = go / pce_total
    nx = (tables.exports[year] @ market_share) / pce_total

    a = build_io_matrix(omega, phi, gamma)
    return IOSnapshot(year=year, omega=omega, phi=phi, gamma=gamma,
                      a=a, a0=a0, lam=lam, nx=nx)
