"""Counterfactual experiments: import-price shocks, severe TFP shocks, and
sampled sectoral business cycles, run under interchangeable calibrations.

All calibrations in one experiment consume identical shock inputs, so the
reported differences isolate the elasticity assumptions. Price and GDP
responses are reported as 100 * log deviations from base.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibrium import CalibratedModel, Shock, solve_equilibrium
from .errors import DataError, EquilibriumError

log = logging.getLogger(__name__)

EIGENVALUE_TOL = 1e-10
DEFAULT_TOP_K = 5


@dataclass(frozen=True)
class ScenarioSet:
    """A named family of shock vectors fed identically to every calibration."""

    kind: str
    shocks: tuple
    labels: tuple
    seed: int | None = None
    n_draws: int = 0


@dataclass(frozen=True)
class ComparisonReport:
    """Cross-calibration results of one experiment.

    tables maps "<quantity>/<calibration>" to an array whose rows follow
    `scenarios` and whose columns (if any) follow `sectors`; failed
    scenarios carry NaN rows and are listed in `failures`.
    """

    kind: str
    calibrations: tuple
    sectors: tuple
    scenarios: tuple
    tables: dict
    summary: dict
    failures: tuple = ()
    metadata: dict = field(default_factory=dict)

    def rows(self):
        """Tidy (table, scenario, sector, value) tuples, deterministic order."""
        n_scen, n_sect = len(self.scenarios), len(self.sectors)
        for name in sorted(self.tables):
            array = np.asarray(self.tables[name], dtype=float)
            if array.ndim == 2 and array.shape == (n_scen, n_sect):
                for r in range(n_scen):
                    for c in range(n_sect):
                        yield name, self.scenarios[r], self.sectors[c], array[r, c]
            elif array.ndim == 1 and array.shape[0] == n_scen:
                for r in range(n_scen):
                    yield name, self.scenarios[r], "", array[r]
            elif array.ndim == 1 and array.shape[0] == n_sect:
                for c in range(n_sect):
                    yield name, "", self.sectors[c], array[c]
            else:
                flat = array.ravel()
                for k in range(flat.shape[0]):
                    yield name, str(k), "", flat[k]

    def write_csv(self, path, header_comment: str | None = None) -> None:
        path = Path(path)
        with path.open("w", newline="") as handle:
            if header_comment:
                handle.write(f"# {header_comment}\n")
            writer = csv.writer(handle)
            writer.writerow(["table", "scenario", "sector", "value"])
            for name, scenario, sector, value in self.rows():
                writer.writerow([name, scenario, sector, _fmt(value)])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "calibrations": list(self.calibrations),
            "sectors": list(self.sectors),
            "scenarios": list(self.scenarios),
            "summary": self.summary,
            "failures": list(self.failures),
            "metadata": self.metadata,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")


def _fmt(value: float) -> str:
    if np.isnan(value):
        return "nan"
    return format(value, ".12g")


def _json_float(value: float):
    value = float(value)
    return None if np.isnan(value) else value


def _check_same_economy(models: dict) -> tuple:
    if not models:
        raise DataError("no calibrations supplied")
    codes = None
    for name, model in models.items():
        if codes is None:
            codes = model.economy.codes
        elif model.economy.codes != codes:
            raise DataError(f"calibration {name!r} uses a different economy")
    return codes


def _solve_pct(model: CalibratedModel, shock: Shock):
    """(100*dlogP, 100*dlogGDP) for one scenario."""
    state = solve_equilibrium(model, shock)
    return 100.0 * np.log(state.P), 100.0 * np.log(state.gdp)


def foreign_price_experiment(models: dict, magnitude: float = 0.25,
                             top_k: int = DEFAULT_TOP_K) -> ComparisonReport:
    """Raise each tradeable sector's import price by `magnitude`, one at a
    time, and record exact domestic price responses per calibration."""
    codes = _check_same_economy(models)
    first = next(iter(models.values()))
    economy = first.economy
    n = len(codes)
    shocked = [k for k in range(n) if economy.tradeable[k]]
    if not any(m.open_economy for m in models.values()):
        log.warning("foreign_price_experiment on closed calibrations: "
                    "responses will be zero")

    scenarios = tuple(codes[k] for k in shocked)
    tables: dict = {}
    failures: list[str] = []
    for name, model in models.items():
        prices = np.full((len(shocked), n), np.nan)
        gdp = np.full(len(shocked), np.nan)
        for r, k in enumerate(shocked):
            ptilde = np.ones(n)
            ptilde[k] = 1.0 + magnitude
            shock = Shock(Z=np.ones(n), Ptilde=ptilde, E=1.0)
            try:
                prices[r], gdp[r] = _solve_pct(model, shock)
            except EquilibriumError as exc:
                label = f"{name}/{codes[k]}"
                failures.append(label)
                log.warning("scenario %s failed: %s", label, exc)
        tables[f"price_pct/{name}"] = prices
        tables[f"gdp_pct/{name}"] = gdp

    names = list(models)
    summary: dict = {"magnitude": magnitude, "shocked_sectors": list(scenarios)}
    top = {}
    for name in names:
        per_sector = {}
        for r, k in enumerate(shocked):
            row = tables[f"price_pct/{name}"][r]
            if np.isnan(row).all():
                per_sector[codes[k]] = []
                continue
            order = np.argsort(-np.abs(np.nan_to_num(row)))[:top_k]
            per_sector[codes[k]] = [
                {"sector": codes[int(c)], "price_pct": _json_float(row[int(c)])}
                for c in order]
        top[name] = per_sector
    summary["top_responders"] = top
    if len(names) >= 2:
        base_name = names[0]
        diffs = {}
        for other in names[1:]:
            delta = (tables[f"price_pct/{base_name}"]
                     - tables[f"price_pct/{other}"])
            diffs[other] = {
                codes[k]: (None if np.isnan(delta[r]).all()
                           else _json_float(np.nanmax(np.abs(delta[r]))))
                for r, k in enumerate(shocked)}
        summary[f"max_abs_price_diff_vs_{base_name}"] = diffs
    return ComparisonReport(
        kind="foreign_price", calibrations=tuple(names), sectors=codes,
        scenarios=scenarios, tables=tables, summary=summary,
        failures=tuple(failures),
        metadata={"units": "100*dlog", "top_k": top_k})


def severe_tfp_experiment(models: dict,
                          magnitude: float = -0.25) -> ComparisonReport:
    """Scale each sector's TFP by (1 + magnitude), one at a time; record the
    exact GDP response per calibration and rank sectors by the gap between
    the first two calibrations."""
    codes = _check_same_economy(models)
    n = len(codes)
    if 1.0 + magnitude <= 0.0:
        raise DataError("magnitude must exceed -1")

    tables: dict = {}
    failures: list[str] = []
    for name, model in models.items():
        gdp = np.full(n, np.nan)
        prices = np.full((n, n), np.nan)
        for k in range(n):
            z = np.ones(n)
            z[k] = 1.0 + magnitude
            shock = Shock(Z=z, Ptilde=np.ones(n), E=1.0)
            try:
                prices[k], gdp[k] = _solve_pct(model, shock)
            except EquilibriumError as exc:
                label = f"{name}/{codes[k]}"
                failures.append(label)
                log.warning("scenario %s failed: %s", label, exc)
        tables[f"gdp_pct/{name}"] = gdp
        tables[f"price_pct/{name}"] = prices

    names = list(models)
    summary: dict = {
        "magnitude": magnitude,
        "gdp_pct": {name: [_json_float(v) for v in tables[f"gdp_pct/{name}"]]
                    for name in names},
    }
    if len(names) >= 2:
        delta = tables[f"gdp_pct/{names[0]}"] - tables[f"gdp_pct/{names[1]}"]
        order = np.argsort(-np.abs(np.nan_to_num(delta)))
        summary["ranked_differences"] = [
            {"sector": codes[int(k)], "gap_pct": _json_float(delta[int(k)])}
            for k in order]
    return ComparisonReport(
        kind="severe_tfp", calibrations=tuple(names), sectors=codes,
        scenarios=codes, tables=tables, summary=summary,
        failures=tuple(failures), metadata={"units": "100*dlog"})


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor F with F F' = cov after symmetrizing and zeroing eigenvalues
    inside the tolerance band. Indefinite input is an error.

    Full-rank input gets a Cholesky factor; rank-deficient input falls back
    to a scaled-eigenvector factor whose dead directions are exactly zero,
    so degenerate covariances (zero matrix, rank one) sample exactly on
    their support instead of picking up jitter noise.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DataError("covariance must be square")
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if eigvals.min(initial=0.0) < -EIGENVALUE_TOL * scale:
        raise DataError(
            f"covariance is indefinite (min eigenvalue {eigvals.min():.3e})")
    clipped = np.where(eigvals < EIGENVALUE_TOL * scale, 0.0, eigvals)
    if (clipped == 0.0).any():
        return eigvecs * np.sqrt(clipped)
    repaired = (eigvecs * clipped) @ eigvecs.T
    repaired = 0.5 * (repaired + repaired.T)
    jitter = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(repaired + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, EIGENVALUE_TOL * scale)
    return eigvecs * np.sqrt(clipped)


def mvn_sample(cov: np.ndarray, n: int, seed: int) -> np.ndarray:
    """n mean-zero draws with covariance cov, one row per draw.

    Draw k is generated from its own generator keyed by (seed, k), so any
    scheduling of draws reproduces the same sequence.
    """
    factor = psd_factor(cov)
    dim = factor.shape[0]
    out = np.empty((n, dim))
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        out[k] = factor @ rng.standard_normal(dim)
    return out


def _skewness(values: np.ndarray) -> float:
    center = values - values.mean()
    m2 = float((center ** 2).mean())
    if m2 <= 0.0:
        return 0.0
    m3 = float((center ** 3).mean())
    return m3 / m2 ** 1.5


def business_cycle_experiment(models: dict, cov, n_draws: int = 1000,
                              seed: int = 0,
                              n_workers: int = 1) -> ComparisonReport:
    """Draw joint sectoral log-TFP shocks and solve every calibration on
    each identical draw.

    A draw that fails in any calibration is dropped from all of them, so the
    reported distributions stay comparable. Results are byte-identical
    across worker counts: draw k's shock comes from a generator keyed by
    (seed, k) and outputs are combined in draw order.
    """
    codes = _check_same_economy(models)
    n = len(codes)
    cov_matrix = cov.cov if hasattr(cov, "cov") else np.asarray(cov, float)
    if cov_matrix.shape != (n, n):
        raise DataError(f"covariance shape {cov_matrix.shape} does not match "
                        f"{n} sectors")
    draws = mvn_sample(cov_matrix, n_draws, seed)
    names = list(models)

    def run_draw(k: int):
        shock = Shock(Z=np.exp(draws[k]), Ptilde=np.ones(n), E=1.0)
        result = {}
        for name in names:
            try:
                result[name] = _solve_pct(models[name], shock)
            except EquilibriumError:
                return k, None
        return k, result

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(run_draw, range(n_draws)))
    else:
        outcomes = [run_draw(k) for k in range(n_draws)]
    outcomes.sort(key=lambda pair: pair[0])

    kept = [k for k, result in outcomes if result is not None]
    dropped = [k for k, result in outcomes if result is None]
    if dropped:
        log.warning("dropped %d/%d draws after solver failures", len(dropped),
                    n_draws)
    by_name = {name: {"gdp": np.empty(len(kept)),
                      "price": np.empty((len(kept), n))} for name in names}
    for row, k in enumerate(kept):
        result = outcomes[k][1]
        for name in names:
            prices, gdp = result[name]
            by_name[name]["gdp"][row] = gdp
            by_name[name]["price"][row, :] = prices

    tables: dict = {}
    summary: dict = {"n_draws": n_draws, "n_dropped": len(dropped),
                     "seed": seed, "gdp_stats": {}}
    for name in names:
        gdp = by_name[name]["gdp"]
        prices = by_name[name]["price"]
        tables[f"gdp_pct/{name}"] = gdp
        tables[f"price_mean_pct/{name}"] = prices.mean(axis=0) if len(kept) else np.full(n, np.nan)
        tables[f"price_mean_abs_pct/{name}"] = (np.abs(prices).mean(axis=0)
                                                if len(kept) else np.full(n, np.nan))
        if len(kept):
            stats = {"mean": _json_float(gdp.mean()),
                     "sd": _json_float(gdp.std(ddof=1) if len(kept) > 1 else 0.0),
                     "skewness": _json_float(_skewness(gdp))}
        else:
            stats = {"mean": None, "sd": None, "skewness": None}
        summary["gdp_stats"][name] = stats

    scenarios = tuple(f"draw{k:05d}" for k in kept)
    return ComparisonReport(
        kind="business_cycle", calibrations=tuple(names), sectors=codes,
        scenarios=scenarios, tables=tables, summary=summary,
        failures=tuple(f"draw{k:05d}" for k in dropped),
        metadata={"units": "100*dlog", "n_workers_independent": True})


def histogram_export(values: np.ndarray, n_bins: int = 40) -> dict:
    """Bin edges + counts for plotting elsewhere; pure data, no rendering."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"bin_edges": [], "counts": []}
    counts, edges = np.histogram(values, bins=n_bins)
    return {"bin_edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts]}
