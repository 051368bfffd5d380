"""Log-change panels for elasticity estimation and the TFP shock covariance."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .shares import (compute_expenditure_shares, compute_import_ratios,
                     classify_tradeable, DEFAULT_TRADEABLE_THRESHOLD)
from .tables import SupplyUseTables, TFPPanel

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class PanelObservation:
    """One (purchaser i, input j, year t) record of log-changes."""

    i: int
    j: int
    t: int
    dlog_omega: float
    dlog_p: float
    dlog_phi: float


@dataclass(frozen=True)
class FilterReport:
    """Accounting of build_panel filtering; n_total counts all N*N pair
    transitions before any filter."""

    n_total: int
    n_kept: int
    n_pairs_dropped: int
    n_share_dropped: int
    n_nonfinite_dropped: int

    def __str__(self) -> str:
        return (f"{self.n_kept}/{self.n_total} observations kept "
                f"({self.n_pairs_dropped} pairs below share floor, "
                f"{self.n_share_dropped} share-filtered, "
                f"{self.n_nonfinite_dropped} non-finite)")


@dataclass(frozen=True)
class TFPCovariance:
    """Covariance of horizon-apart log-TFP differences, symmetrized and
    eigenvalue-clipped at zero."""

    cov: np.ndarray
    horizon_years: int
    n_windows: int
    industries: tuple[str, ...]


def _log_changes(levels: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.diff(np.log(levels), axis=0)


def build_panel(tables: SupplyUseTables, min_avg_share: float = 0.01,
                tradeable_threshold: float = DEFAULT_TRADEABLE_THRESHOLD):
    """Return (observations, FilterReport).

    Observations are year-over-year log differences of the expenditure
    share Omega_ijt, the supplying industry's price P_jt, and the domestic
    share Phi_jt (forced to 1 for non-tradeables, so their dlog_phi is
    exactly 0). Pairs whose average share across all years falls below
    min_avg_share are dropped, then any observation with a non-finite
    log-change is dropped and counted.
    """
    if len(tables.years) < 2:
        raise DataError("panel needs at least two years of tables")
    n = tables.n_industries
    omegas = np.stack([compute_expenditure_shares(tables, y)[0]
                       for y in tables.years])
    phis = np.stack([compute_import_ratios(tables, y) for y in tables.years])
    tradeable = classify_tradeable(phis, tradeable_threshold)
    phis = np.where(tradeable[None, :], phis, 1.0)
    prices = np.stack([tables.price_index[y] for y in tables.years])

    d_omega = _log_changes(omegas)
    d_p = _log_changes(prices)
    d_phi = _log_changes(phis)
    # non-tradeable columns must be exactly 0, not just log(1)-log(1)
    d_phi[:, ~tradeable] = 0.0

    n_transitions = len(tables.years) - 1
    n_total = n * n * n_transitions
    avg_share = omegas.mean(axis=0)
    pair_kept = avg_share >= min_avg_share
    n_pairs_dropped = int((~pair_kept).sum())
    n_share_dropped = n_pairs_dropped * n_transitions

    observations: list[PanelObservation] = []
    n_nonfinite = 0
    years = tables.years
    for k in range(n_transitions):
        do = d_omega[k]
        dp = d_p[k]
        df = d_phi[k]
        finite = (np.isfinite(do) & np.isfinite(dp)[None, :]
                  & np.isfinite(df)[None, :])
        keep = pair_kept & finite
        n_nonfinite += int((pair_kept & ~finite).sum())
        ii, jj = np.nonzero(keep)
        year = int(years[k + 1])
        observations.extend(
            PanelObservation(i=int(a), j=int(b), t=year,
                             dlog_omega=float(do[a, b]), dlog_p=float(dp[b]),
                             dlog_phi=float(df[b]))
            for a, b in zip(ii, jj))

    report = FilterReport(n_total=n_total, n_kept=len(observations),
                          n_pairs_dropped=n_pairs_dropped,
                          n_share_dropped=n_share_dropped,
                          n_nonfinite_dropped=n_nonfinite)
    return observations, report


def build_consumption_panel(tables: SupplyUseTables,
                            min_avg_share: float = 0.0):
    """Household expenditure-share panel: one purchaser (i = 0), year fixed
    effects, price moments only (dlog_phi = 0)."""
    if len(tables.years) < 2:
        raise DataError("panel needs at least two years of tables")
    shares = []
    for year in tables.years:
        supply = tables.S[year]
        totals = supply.sum(axis=1)
        market_share = np.divide(supply, totals[:, None],
                                 out=np.zeros_like(supply),
                                 where=totals[:, None] > 0.0)
        pce_ind = tables.pce[year] @ market_share
        total = pce_ind.sum()
        if total <= 0.0:
            raise DataError(f"year {year}: household consumption "
                            "is not positive")
        shares.append(pce_ind / total)
    shares = np.stack(shares)
    prices = np.stack([tables.price_index[y] for y in tables.years])

    d_s = _log_changes(shares)
    d_p = _log_changes(prices)
    avg_share = shares.mean(axis=0)
    pair_kept = avg_share >= min_avg_share

    observations: list[PanelObservation] = []
    n_nonfinite = 0
    n_transitions = len(tables.years) - 1
    for k in range(n_transitions):
        finite = np.isfinite(d_s[k]) & np.isfinite(d_p[k])
        keep = pair_kept & finite
        n_nonfinite += int((pair_kept & ~finite).sum())
        year = int(tables.years[k + 1])
        observations.extend(
            PanelObservation(i=0, j=int(b), t=year,
                             dlog_omega=float(d_s[k, b]),
                             dlog_p=float(d_p[k, b]), dlog_phi=0.0)
            for b in np.nonzero(keep)[0])

    n_total = tables.n_industries * n_transitions
    n_pairs_dropped = int((~pair_kept).sum())
    report = FilterReport(n_total=n_total, n_kept=len(observations),
                          n_pairs_dropped=n_pairs_dropped,
                          n_share_dropped=n_pairs_dropped * n_transitions,
                          n_nonfinite_dropped=n_nonfinite)
    return observations, report


def tfp_covariance(tfp_panel: TFPPanel, horizon_years: int = 4) -> TFPCovariance:
    """Covariance of overlapping horizon_years-apart log-TFP differences."""
    if horizon_years < 1:
        raise DataError("horizon_years must be at least 1")
    t = tfp_panel.n_years
    if t < horizon_years + 1:
        raise DataError(
            f"TFP panel covers {t} years; need at least {horizon_years + 1} "
            f"for {horizon_years}-year differences")
    values = tfp_panel.values
    diffs = values[horizon_years:] - values[:-horizon_years]
    n_windows = diffs.shape[0]
    n = values.shape[1]
    if n_windows < 2:
        log.warning("only one %d-year window available; covariance is "
                    "degenerate and reported as zero", horizon_years)
        cov = np.zeros((n, n))
    else:
        cov = np.cov(diffs, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if (eigvals < 0.0).any():
        eigvals = np.clip(eigvals, 0.0, None)
        cov = (eigvecs * eigvals) @ eigvecs.T
        cov = 0.5 * (cov + cov.T)
    return TFPCovariance(cov=cov, horizon_years=horizon_years,
                         n_windows=n_windows,
                         industries=tfp_panel.industries)


def export_panel_csv(observations, codes, path,
                     header_comment: str | None = None) -> None:
    """Write observations as (i_code, j_code, t, dlog_omega, dlog_p, dlog_phi)."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(["i_code", "j_code", "t", "dlog_omega", "dlog_p",
                         "dlog_phi"])
        for obs in observations:
            writer.writerow([codes[obs.i], codes[obs.j], obs.t,
                             repr(obs.dlog_omega), repr(obs.dlog_p),
                             repr(obs.dlog_phi)])
