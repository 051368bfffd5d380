"""Command-line pipeline: ingest -> estimate -> calibrate -> simulate -> report.

Stages communicate only through files in the output directory, so any stage
can be rerun in isolation and every artifact carries a provenance header
(package version, config hash, seed).

Exit codes: 0 success, 2 data error, 3 estimation failure, 4 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, config_hash, load_config
from .economy import Economy, Elasticities, IOSnapshot
from .equilibrium import CalibratedModel, calibrate
from .errors import (CalibrationError, DataError, EquilibriumError,
                     EstimationError, InvertibilityError, ProdnetError,
                     TransportError)
from .estimation import (estimate, estimate_household_nu, export_table,
                         residualize)
from .ingest import (BEARequest, build_consumption_panel, build_panel,
                     export_panel_csv, fetch_bea_tables, make_economy,
                     make_snapshot, read_fixture_tables, read_tfp_panel,
                     tfp_covariance)
from .ingest.panel import PanelObservation
from .shocks import (business_cycle_experiment, foreign_price_experiment,
                     histogram_export, severe_tfp_experiment)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_ESTIMATION = 3
EXIT_SOLVER = 4


def _provenance(config: RunConfig) -> dict:
    return {"version": __version__, "config_hash": config_hash(config),
            "seed": config.seed}


def _provenance_line(config: RunConfig) -> str:
    p = _provenance(config)
    return f"prodnet {p['version']} config={p['config_hash']} seed={p['seed']}"


def _write_json(path: Path, payload: dict, config: RunConfig) -> None:
    document = {"provenance": _provenance(config)}
    document.update(payload)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise DataError(f"required file {path} does not exist; "
                        "run the earlier pipeline stages first")
    return json.loads(path.read_text())


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_tables(config: RunConfig):
    if config.source == "fixtures":
        if not config.fixtures:
            raise DataError("source is 'fixtures' but no fixtures path given "
                            "(--fixtures or config key 'fixtures')")
        return read_fixture_tables(config.fixtures)
    if not config.bea_years:
        raise DataError("source is 'api' but config key 'bea_years' is empty")
    request = BEARequest(years=config.bea_years)
    if config.bea_table_ids:
        request = dataclasses.replace(request, table_ids=config.bea_table_ids)
    cache = Path(config.cache_dir or Path(config.out_dir) / "bea_cache")
    return fetch_bea_tables(request, cache)


def _aligned_tfp_covariance(config: RunConfig, codes) -> dict | None:
    """Covariance JSON payload with columns reordered to the economy, or
    None when no tfp.csv accompanies the fixtures."""
    if config.source != "fixtures" or not config.fixtures:
        return None
    tfp_path = Path(config.fixtures) / "tfp.csv"
    if not tfp_path.exists():
        return None
    panel = read_tfp_panel(tfp_path)
    missing = [c for c in codes if c not in panel.industries]
    if missing:
        raise DataError(f"tfp.csv lacks industries {missing}")
    order = [panel.industries.index(c) for c in codes]
    cov = tfp_covariance(panel, config.tfp_horizon_years)
    matrix = cov.cov[np.ix_(order, order)]
    return {"cov": matrix.tolist(), "horizon_years": cov.horizon_years,
            "n_windows": cov.n_windows, "industries": list(codes)}


def cmd_ingest(config: RunConfig, args) -> int:
    out = _out_dir(config)
    tables = _load_tables(config)
    economy = make_economy(tables, config.tradeable_threshold)
    base_year = (config.base_year if config.base_year is not None
                 else tables.years[-1])
    snapshot = make_snapshot(tables, base_year, economy)
    panel, report = build_panel(tables, config.min_avg_share,
                                config.tradeable_threshold)
    cpanel, creport = build_consumption_panel(tables)

    line = _provenance_line(config)
    export_panel_csv(panel, economy.codes, out / "panel.csv", line)
    export_panel_csv(cpanel, economy.codes, out / "consumption_panel.csv",
                     line)
    _write_json(out / "economy.json", {"economy": economy.to_dict()}, config)
    _write_json(out / "snapshot.json", {"snapshot": snapshot.to_dict()},
                config)
    _write_json(out / "filter_report.json",
                {"panel": dataclasses.asdict(report),
                 "consumption_panel": dataclasses.asdict(creport)}, config)
    cov_payload = _aligned_tfp_covariance(config, economy.codes)
    if cov_payload is not None:
        _write_json(out / "tfp_covariance.json", cov_payload, config)
    print(f"ingest: {len(economy.codes)} sectors, base year {base_year}, "
          f"panel {report}")
    return EXIT_OK


def _read_panel_csv(path: Path, codes, force_i: int | None = None):
    if not path.exists():
        raise DataError(f"required file {path} does not exist; "
                        "run 'ingest' first")
    frame = pd.read_csv(path, comment="#", float_precision="round_trip",
                        dtype={"i_code": str, "j_code": str})
    index = {code: k for k, code in enumerate(codes)}
    observations = []
    for row in frame.itertuples(index=False):
        if row.j_code not in index or (force_i is None
                                       and row.i_code not in index):
            raise DataError(f"{path.name}: unknown sector code in row "
                            f"({row.i_code}, {row.j_code})")
        i = force_i if force_i is not None else index[row.i_code]
        observations.append(PanelObservation(
            i=i, j=index[row.j_code], t=int(row.t),
            dlog_omega=float(row.dlog_omega), dlog_p=float(row.dlog_p),
            dlog_phi=float(row.dlog_phi)))
    return observations


def cmd_estimate(config: RunConfig, args) -> int:
    out = _out_dir(config)
    economy = Economy.from_dict(_read_json(out / "economy.json")["economy"])
    panel = _read_panel_csv(out / "panel.csv", economy.codes)
    rpanel = residualize(panel, n_sectors=economy.n_sectors)

    results = {}
    for mode in config.modes:
        results[mode] = estimate(rpanel, mode)
        r = results[mode]
        theta_display = (f"theta_bar={r.theta_hat[0]:.3f}"
                         if mode == "uniform"
                         else f"mean theta={np.mean(r.theta_hat):.3f}")
        xi_display = ("" if r.xi_hat is None
                      else f", xi={r.xi_hat:.3f}")
        print(f"estimate[{mode}]: {theta_display}{xi_display}, "
              f"objective={r.objective_value:.3e}, "
              f"converged={r.converged}")

    cpanel = _read_panel_csv(out / "consumption_panel.csv", economy.codes,
                             force_i=0)
    household = estimate_household_nu(cpanel)
    print(f"estimate[household]: nu={household.nu_hat:.3f}, "
          f"degenerate={household.degenerate}")

    _write_json(out / "estimates.json",
                {"results": {m: r.to_dict() for m, r in results.items()},
                 "household": dataclasses.asdict(household)}, config)
    export_table(results, economy.codes, out / "estimates.csv",
                 _provenance_line(config))

    bad = [m for m, r in results.items() if not r.converged]
    if not household.converged:
        bad.append("household")
    if bad and not getattr(args, "allow_nonconverged", False):
        print(f"error: estimation did not converge for {bad} "
              "(rerun with --allow-nonconverged to keep results)",
              file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def _resolve_elasticities(config: RunConfig, estimates: dict | None,
                          n: int) -> dict:
    """Per-calibration Elasticities, merging config overrides over the
    estimates file."""
    results = (estimates or {}).get("results", {})
    household = (estimates or {}).get("household", {})

    def result_field(mode, field):
        entry = results.get(mode)
        return None if entry is None else entry.get(field)

    xi = config.xi
    if xi is None:
        xi = result_field("sector_specific", "xi_hat")
    if xi is None:
        xi = result_field("uniform", "xi_hat")
    if xi is None:
        raise DataError("no Armington elasticity available: provide config "
                        "key 'xi' or run 'estimate' first")
    nu = config.nu
    if nu is None:
        nu = household.get("nu_hat")
    if nu is None:
        raise DataError("no household elasticity available: provide config "
                        "key 'nu' or run 'estimate' first")
    theta_bar = config.theta_uniform
    if theta_bar is None:
        uniform_theta = result_field("uniform", "theta_hat")
        theta_bar = uniform_theta[0] if uniform_theta else None
    theta_sector = result_field("sector_specific", "theta_hat")

    out = {}
    for name in config.calibrations:
        if name == "main":
            if theta_sector is None:
                raise DataError("calibration 'main' needs sector-specific "
                                "estimates; run 'estimate' with mode "
                                "sector_specific")
            theta = np.asarray(theta_sector, dtype=float)
        elif name == "uniform":
            if theta_bar is None:
                raise DataError("calibration 'uniform' needs a pooled theta; "
                                "provide config key 'theta_uniform' or run "
                                "'estimate' with mode uniform")
            theta = np.full(n, float(theta_bar))
        else:
            theta = np.ones(n)
        try:
            out[name] = Elasticities(sigma=config.sigma, theta=theta,
                                     xi=float(xi), nu=float(nu),
                                     xi_export=float(xi))
        except ValueError as exc:
            raise DataError(
                f"calibration {name!r}: estimated elasticities are not "
                f"usable ({exc}); override via config keys 'nu', 'xi', or "
                f"'theta_uniform'")
    return out


def _closure_tag(config: RunConfig) -> str:
    return "open" if config.open_economy else "closed"


def cmd_calibrate(config: RunConfig, args) -> int:
    out = _out_dir(config)
    economy = Economy.from_dict(_read_json(out / "economy.json")["economy"])
    snapshot = IOSnapshot.from_dict(
        _read_json(out / "snapshot.json")["snapshot"])
    estimates_path = out / "estimates.json"
    estimates = _read_json(estimates_path) if estimates_path.exists() else None
    elasticities = _resolve_elasticities(config, estimates,
                                         economy.n_sectors)

    tag = _closure_tag(config)
    files = {}
    for name, e in elasticities.items():
        model = calibrate(snapshot, e, open_economy=config.open_economy,
                          economy=economy)
        path = out / f"model_{name}_{tag}.json"
        model.save(path)
        files[name] = path.name
        print(f"calibrate[{name}/{tag}]: base year {model.base_year}, "
              f"xi={e.xi:.3f}, nu={e.nu:.3f}")
    _write_json(out / f"calibrations_{tag}.json", {"models": files}, config)
    return EXIT_OK


def _load_models(config: RunConfig, out: Path) -> dict:
    tag = _closure_tag(config)
    manifest = _read_json(out / f"calibrations_{tag}.json")["models"]
    models = {}
    for name in config.calibrations:
        if name not in manifest:
            raise DataError(f"calibration {name!r} missing from manifest; "
                            "rerun 'calibrate'")
        models[name] = CalibratedModel.load(out / manifest[name])
    return models


def cmd_simulate(config: RunConfig, args) -> int:
    out = _out_dir(config)
    models = _load_models(config, out)
    line = _provenance_line(config)

    succeeded, failed, scenario_failures = [], {}, {}
    for scenario in config.scenarios:
        kind = scenario.kind
        try:
            if kind == "foreign_price":
                magnitude = (0.25 if scenario.magnitude is None
                             else scenario.magnitude)
                report = foreign_price_experiment(models, magnitude,
                                                  scenario.top_k)
            elif kind == "severe_tfp":
                magnitude = (-0.25 if scenario.magnitude is None
                             else scenario.magnitude)
                report = severe_tfp_experiment(models, magnitude)
            else:
                cov_payload = _read_json(out / "tfp_covariance.json")
                cov = np.asarray(cov_payload["cov"], dtype=float)
                report = business_cycle_experiment(
                    models, cov, n_draws=scenario.n_draws, seed=config.seed,
                    n_workers=config.n_workers)
            payload = {"report": report.to_dict()}
            if kind == "business_cycle":
                payload["histograms"] = {
                    name: histogram_export(report.tables[f"gdp_pct/{name}"])
                    for name in report.calibrations}
            report.write_csv(out / f"{kind}.csv", line)
            _write_json(out / f"{kind}.json", payload, config)
            succeeded.append(kind)
            scenario_failures[kind] = list(report.failures)
            print(f"simulate[{kind}]: ok "
                  f"({len(report.failures)} scenario failures)")
        except ProdnetError as exc:
            failed[kind] = str(exc)
            print(f"simulate[{kind}]: failed: {exc}", file=sys.stderr)

    _write_json(out / "simulate_summary.json",
                {"succeeded": succeeded, "failed": failed,
                 "scenario_failures": scenario_failures}, config)
    if not succeeded and failed:
        return EXIT_SOLVER
    return EXIT_OK


def _report_estimates_section(out: Path) -> list:
    payload = _read_json(out / "estimates.json")
    lines = ["## Elasticity estimates", ""]
    for mode, result in sorted(payload["results"].items()):
        theta = np.asarray(result["theta_hat"], dtype=float)
        xi = result.get("xi_hat")
        xi_text = "none" if xi is None else f"{xi:.3f}"
        lines.append(f"- {mode}: mean theta {theta.mean():.3f}, "
                     f"xi {xi_text}, objective "
                     f"{result['objective_value']:.3e}, "
                     f"converged {result['converged']}")
    household = payload.get("household")
    if household:
        lines.append(f"- household: nu {household['nu_hat']:.3f} "
                     f"(degenerate: {household['degenerate']})")
    lines.append("")
    return lines


def _report_simulation_section(out: Path) -> list:
    lines = []
    for kind in ("foreign_price", "severe_tfp", "business_cycle"):
        path = out / f"{kind}.json"
        if not path.exists():
            continue
        report = _read_json(path)["report"]
        lines += [f"## {kind} experiment", ""]
        summary = report["summary"]
        if kind == "business_cycle":
            for name, stats in sorted(summary["gdp_stats"].items()):
                mean = stats["mean"]
                sd = stats["sd"]
                skew = stats["skewness"]
                if mean is None:
                    lines.append(f"- {name}: no surviving draws")
                else:
                    lines.append(f"- {name}: mean GDP {mean:.2f}%, "
                                 f"sd {sd:.2f}%, skewness {skew:.2f}")
            lines.append(f"- draws: {summary['n_draws']} "
                         f"({summary['n_dropped']} dropped)")
        elif kind == "severe_tfp":
            ranked = summary.get("ranked_differences", [])[:5]
            for entry in ranked:
                lines.append(f"- largest calibration gaps: {entry['sector']} "
                             f"{entry['gap_pct']:.2f} p.p."
                             if entry is ranked[0] else
                             f"  {entry['sector']} {entry['gap_pct']:.2f} p.p.")
        else:
            lines.append(f"- shocked sectors: "
                         f"{', '.join(summary['shocked_sectors']) or 'none'}")
        if report["failures"]:
            lines.append(f"- failures: {', '.join(report['failures'])}")
        lines.append("")
    return lines


def cmd_report(config: RunConfig, args) -> int:
    out = _out_dir(config)
    sections = ["# Run report", "", f"`{_provenance_line(config)}`", ""]
    found = False
    if (out / "filter_report.json").exists():
        payload = _read_json(out / "filter_report.json")
        p = payload["panel"]
        sections += ["## Panel", "",
                     f"- {p['n_kept']}/{p['n_total']} observations kept "
                     f"({p['n_pairs_dropped']} pairs below the share floor, "
                     f"{p['n_nonfinite_dropped']} non-finite)", ""]
        found = True
    if (out / "estimates.json").exists():
        sections += _report_estimates_section(out)
        found = True
    simulation = _report_simulation_section(out)
    if simulation:
        sections += simulation
        found = True
    if not found:
        raise DataError(f"nothing to report in {out}; run the pipeline first")
    (out / "report.md").write_text("\n".join(sections).rstrip() + "\n")
    print(f"report: wrote {out / 'report.md'}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prodnet",
        description="Input-output elasticity estimation and shock "
                    "propagation pipeline")
    parser.add_argument("--version", action="version",
                        version=f"prodnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("ingest", "parse tables into panel and snapshot files"),
            ("estimate", "run GMM elasticity estimation on the panel"),
            ("calibrate", "build calibrated model files"),
            ("simulate", "run the configured shock experiments"),
            ("report", "summarize pipeline outputs as markdown")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--fixtures", type=str, default=None,
                       help="CSV fixture directory (forces source=fixtures)")
        p.add_argument("--mode", type=str, default=None,
                       help="restrict estimation to one mode")
        p.add_argument("--closed", action="store_true",
                       help="closed-economy calibration and simulation")
        p.add_argument("--out", type=str, default=None,
                       help="output directory")
        if name == "estimate":
            p.add_argument("--allow-nonconverged", action="store_true",
                           help="exit 0 even if an estimator hit its "
                                "evaluation budget")
    return parser


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    raw = config.to_dict()
    if args.fixtures is not None:
        raw["source"] = "fixtures"
        raw["fixtures"] = args.fixtures
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    if args.mode is not None:
        raw["modes"] = [args.mode]
    if args.closed:
        raw["open_economy"] = False
    return RunConfig.from_dict(raw)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config, args)
    except (DataError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (EquilibriumError, CalibrationError, InvertibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
