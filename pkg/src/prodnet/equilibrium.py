"""Calibration and exact solution of the nested-CES multi-sector economy.

Production in sector i combines fixed sector-specific labor and a CES bundle
of composite inputs (elasticity sigma); the bundle aggregates composites with
sector-specific elasticity theta_i; each composite mixes the domestic good
with its import twin at the Armington elasticity xi. The household buys
domestic goods through a CES aggregator (elasticity nu) and foreign demand
for each good is isoelastic (elasticity xi_export).

Numeraire: aggregate household expenditure equals 1, so sales shares lambda_i
coincide with P_i Y_i. The exchange rate E is exogenous and fixed at 1 in all
shipped experiments; with isoelastic export demand the trade balance may move
off base year, and the household budget then includes the trade deficit as a
transfer (Walras consistency is checked in exactly that form).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .economy import Economy, Elasticities, IOSnapshot, validate_snapshot
from .errors import CalibrationError, EquilibriumError

SOLVER_TOL = 1e-12
SOLVER_MAX_ITER = 10_000
DAMPING_DEFAULT = 0.5
DAMPING_FLOOR = 1.0 / 64.0

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Shock:
    """One scenario: sectoral TFP levels, import prices, exchange rate."""

    Z: np.ndarray
    Ptilde: np.ndarray
    E: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "Z", np.asarray(self.Z, dtype=float))
        object.__setattr__(self, "Ptilde", np.asarray(self.Ptilde, dtype=float))
        object.__setattr__(self, "E", float(self.E))
        if self.Z.shape != self.Ptilde.shape or self.Z.ndim != 1:
            raise ValueError("Z and Ptilde must be N-vectors")
        if not ((self.Z > 0).all() and (self.Ptilde > 0).all() and self.E > 0):
            raise ValueError("shock levels must be strictly positive")

    @classmethod
    def none(cls, n: int) -> "Shock":
        return cls(Z=np.ones(n), Ptilde=np.ones(n), E=1.0)


@dataclass(frozen=True, eq=False)
class CalibratedModel:
    """Share parameters, endowments, and shifters pinned to a base year."""

    economy: Economy
    elasticities: Elasticities
    gamma: np.ndarray
    omega: np.ndarray
    phi: np.ndarray
    beta: np.ndarray
    labor: np.ndarray
    phi_f: np.ndarray
    base_output: np.ndarray
    base_year: int
    open_economy: bool

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def base_lambda(self) -> np.ndarray:
        """Base-year sales shares; equal to base gross output at unit prices."""
        return self.base_output

    def to_dict(self) -> dict:
        e = self.elasticities
        return {
            "schema_version": SCHEMA_VERSION,
            "base_year": self.base_year,
            "open_economy": self.open_economy,
            "codes": list(self.economy.codes),
            "labels": list(self.economy.labels),
            "tradeable": self.economy.tradeable.astype(bool).tolist(),
            "sigma": e.sigma, "theta": e.theta.tolist(), "xi": e.xi,
            "nu": e.nu, "xi_export": e.xi_export,
            "gamma": self.gamma.tolist(), "omega": self.omega.tolist(),
            "phi": self.phi.tolist(), "beta": self.beta.tolist(),
            "labor": self.labor.tolist(), "phi_f": self.phi_f.tolist(),
            "base_output": self.base_output.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported model schema {d.get('schema_version')!r}")
        econ = Economy(codes=tuple(d["codes"]), labels=tuple(d["labels"]),
                       tradeable=np.array(d["tradeable"], dtype=bool))
        elas = Elasticities(sigma=d["sigma"], theta=np.array(d["theta"]),
                            xi=d["xi"], nu=d["nu"], xi_export=d["xi_export"])
        return cls(economy=econ, elasticities=elas,
                   gamma=np.array(d["gamma"]), omega=np.array(d["omega"]),
                   phi=np.array(d["phi"]), beta=np.array(d["beta"]),
                   labor=np.array(d["labor"]), phi_f=np.array(d["phi_f"]),
                   base_output=np.array(d["base_output"]),
                   base_year=int(d["base_year"]),
                   open_economy=bool(d["open_economy"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "CalibratedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(snapshot: IOSnapshot, elasticities: Elasticities,
              open_economy: bool = True,
              economy: Economy | None = None) -> CalibratedModel:
    """Read share parameters off a base-year snapshot.

    Labor endowments come from the closed-economy output system
    Y = (I - (1-gamma) Omega)^{-1} beta with L_i = gamma_i Y_i; export
    shifters absorb base-year import spending good by good so that markets
    clear exactly at unit prices.
    """
    problems = validate_snapshot(snapshot)
    if problems:
        raise CalibrationError("snapshot fails validation: " + "; ".join(problems))
    n = snapshot.n_sectors
    if elasticities.n_sectors != n:
        raise CalibrationError("elasticities and snapshot disagree on N")
    gamma = snapshot.gamma.copy()
    if (gamma <= 0).any():
        bad = np.nonzero(gamma <= 0)[0]
        raise CalibrationError(
            f"sectors {bad.tolist()} have no labor share; wages are undefined")
    omega = snapshot.omega.copy()
    phi = snapshot.phi.copy() if open_economy else np.ones((n, n))
    beta = snapshot.a0.copy()

    b = (1.0 - gamma)[:, None] * omega
    try:
        output = np.linalg.solve(np.eye(n) - b.T, beta)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError(f"labor back-out system is singular: {exc}")
    if (output <= 0).any():
        bad = np.nonzero(output <= 0)[0]
        raise CalibrationError(
            f"implied base output nonpositive for sectors {bad.tolist()}")
    labor = gamma * output

    if open_economy:
        import_spend = (1.0 - gamma)[:, None] * omega * (1.0 - phi)
        phi_f = import_spend.T @ output
    else:
        phi_f = np.zeros(n)

    if economy is None:
        economy = Economy(
            codes=tuple(f"s{k}" for k in range(n)),
            labels=tuple(f"sector {k}" for k in range(n)),
            tradeable=(phi < 1.0 - 1e-12).any(axis=0))

    return CalibratedModel(
        economy=economy, elasticities=elasticities, gamma=gamma, omega=omega,
        phi=phi, beta=beta, labor=labor, phi_f=phi_f, base_output=output,
        base_year=snapshot.year, open_economy=open_economy)


def _ces_price(weights: np.ndarray, prices: np.ndarray,
               elasticity: float) -> float | np.ndarray:
    """Share-form CES price index along the last axis.

    Elasticity 1 uses the geometric-mean log form; 0 falls out of the
    generic formula as the weighted arithmetic mean (fixed proportions).
    Rows with no weight return 1 (neutral: they multiply a zero share).
    """
    total = weights.sum(axis=-1)
    if abs(elasticity - 1.0) < 1e-14:
        logs = np.where(weights > 0.0, np.log(prices), 0.0)
        out = np.exp((weights * logs).sum(axis=-1))
    else:
        e = 1.0 - elasticity
        out = ((weights * prices ** e).sum(axis=-1)) ** (1.0 / e)
    return np.where(total > 0.0, out, 1.0)


def unit_cost_indices(P: np.ndarray, W: np.ndarray, Ptilde: np.ndarray,
                      E: float, model: CalibratedModel,
                      Z: np.ndarray | None = None):
    """Cost duals of the three nests at the given prices.

    Args:
        P, W: domestic goods prices and wages.
        Ptilde, E: import prices in foreign currency and the exchange rate.
        model: calibrated share parameters and elasticities.
        Z: TFP levels dividing marginal cost (default 1).

    Returns:
        (implied_P, Q, Pbar): zero-profit domestic prices, input-bundle
        indices, and the N x N domestic/import composite indices.
    """
    P = np.asarray(P, dtype=float)
    W = np.asarray(W, dtype=float)
    Ptilde = np.asarray(Ptilde, dtype=float)
    if (P <= 0).any() or (W <= 0).any() or (Ptilde <= 0).any() or E <= 0:
        raise ValueError("prices, wages, and the exchange rate must be positive")
    e = model.elasticities
    Z = np.ones(model.n) if Z is None else np.asarray(Z, dtype=float)

    imported = E * Ptilde
    ex = 1.0 - e.xi
    pbar = (model.phi * P[None, :] ** ex
            + (1.0 - model.phi) * imported[None, :] ** ex) ** (1.0 / ex)
    # exact endpoints: fully domestic and fully imported composites
    pbar = np.where(model.phi >= 1.0, np.broadcast_to(P, pbar.shape), pbar)
    pbar = np.where(model.phi <= 0.0, np.broadcast_to(imported, pbar.shape), pbar)

    theta = e.theta
    spend = model.omega.sum(axis=1)
    q = np.empty(model.n)
    unit = np.abs(theta - 1.0) < 1e-14
    if unit.any():
        logs = np.where(model.omega[unit] > 0.0, np.log(pbar[unit]), 0.0)
        q[unit] = np.exp((model.omega[unit] * logs).sum(axis=1))
    if (~unit).any():
        et = (1.0 - theta[~unit])[:, None]
        sums = (model.omega[~unit] * pbar[~unit] ** et).sum(axis=1)
        q[~unit] = sums ** (1.0 / et[:, 0])
    q = np.where(spend > 0.0, q, 1.0)

    if abs(e.sigma - 1.0) < 1e-14:
        cost = W ** model.gamma * q ** (1.0 - model.gamma)
    else:
        es = 1.0 - e.sigma
        cost = (model.gamma * W ** es
                + (1.0 - model.gamma) * q ** es) ** (1.0 / es)
    return cost / Z, q, pbar


@dataclass(frozen=True, eq=False)
class SharePosition:
    """All expenditure shares implied by one price system."""

    Gamma: np.ndarray
    Omega: np.ndarray
    Phi: np.ndarray
    A: np.ndarray
    a0: np.ndarray
    P0: float
    NX: np.ndarray


def compute_shares(model: CalibratedModel, P: np.ndarray, W: np.ndarray,
                   Q: np.ndarray, Pbar: np.ndarray, E: float) -> SharePosition:
    """Expenditure shares at the given prices (no solving involved)."""
    e = model.elasticities
    if abs(e.sigma - 1.0) < 1e-14:
        big_gamma = model.gamma.copy()
    else:
        es = 1.0 - e.sigma
        wc = model.gamma * W ** es
        qc = (1.0 - model.gamma) * Q ** es
        big_gamma = wc / (wc + qc)

    theta = e.theta
    unit = np.abs(theta - 1.0) < 1e-14
    big_omega = np.where(
        unit[:, None], model.omega,
        model.omega * (Pbar / Q[:, None]) ** (1.0 - theta)[:, None])

    big_phi = model.phi * (P[None, :] / Pbar) ** (1.0 - e.xi)
    big_phi = np.where(model.phi >= 1.0, 1.0, big_phi)
    big_phi = np.where(model.phi <= 0.0, 0.0, big_phi)

    a = (1.0 - big_gamma)[:, None] * big_omega * big_phi

    p0 = float(_ces_price(model.beta[None, :], P[None, :], e.nu)[0])
    if abs(e.nu - 1.0) < 1e-14:
        a0 = model.beta.copy()
    else:
        a0 = model.beta * (P / p0) ** (1.0 - e.nu)

    nx = model.phi_f * P ** (1.0 - e.xi_export) * E ** e.xi_export
    return SharePosition(Gamma=big_gamma, Omega=big_omega, Phi=big_phi,
                         A=a, a0=a0, P0=p0, NX=nx)


@dataclass(frozen=True, eq=False)
class EquilibriumState:
    """One solved scenario."""

    P: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    Pbar: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    lam: np.ndarray
    gdp: float
    residuals: float
    shock: Shock
    n_iter: int
    shares: SharePosition


def _consumption_aggregate(C: np.ndarray, beta: np.ndarray, nu: float) -> float:
    mask = beta > 0.0
    c, b = C[mask], beta[mask]
    if abs(nu - 1.0) < 1e-14:
        return float(np.exp((b * np.log(c / b)).sum()))
    r = (nu - 1.0) / nu
    return float(((b ** (1.0 / nu) * c ** r).sum()) ** (1.0 / r))


def _solve_sales(shares: SharePosition, n: int) -> np.ndarray:
    rhs = shares.a0 + shares.NX
    return np.linalg.solve(np.eye(n) - shares.A.T, rhs)


def solve_equilibrium(model: CalibratedModel, shock: Shock | None = None,
                      damping: float = DAMPING_DEFAULT,
                      tol: float = SOLVER_TOL,
                      max_iter: int = SOLVER_MAX_ITER) -> EquilibriumState:
    """Damped fixed point on (log P, log W).

    Each pass recomputes cost indices and shares, solves the linear
    market-clearing system for sales shares, and maps wages through the
    labor first-order condition W_i = P_i Z_i^(1-1/sigma) (gamma_i Y_i /
    L_i)^(1/sigma) with Y_i = lambda_i / P_i. Convergence is measured on the
    undamped residual; the step halves geometrically whenever the residual
    rises and relaxes back toward the configured damping on success.
    """
    n = model.n
    shock = Shock.none(n) if shock is None else shock
    if shock.Z.shape != (n,):
        raise ValueError("shock dimension does not match the model")
    e = model.elasticities
    lp = np.zeros(n)
    lw = np.zeros(n)
    log_z = np.log(shock.Z)
    step = damping
    prev_resid = np.inf
    shares = None

    for iteration in range(1, max_iter + 1):
        P, W = np.exp(lp), np.exp(lw)
        implied_p, q, pbar = unit_cost_indices(P, W, shock.Ptilde, shock.E,
                                               model, Z=shock.Z)
        shares = compute_shares(model, P, W, q, pbar, shock.E)
        lam = _solve_sales(shares, n)
        if (lam <= 0).any():
            bad = np.nonzero(lam <= 0)[0]
            raise EquilibriumError(
                f"market-clearing gave nonpositive sales for sectors "
                f"{bad.tolist()}; shock outside the admissible region")
        output = lam / P
        lw_implied = (lp + (1.0 - 1.0 / e.sigma) * log_z
                      + np.log(model.gamma * output / model.labor) / e.sigma)
        lp_implied = np.log(implied_p)
        resid = max(np.abs(lp_implied - lp).max(),
                    np.abs(lw_implied - lw).max())
        if resid < tol:
            c = shares.a0 / P
            gdp = _consumption_aggregate(c, model.beta, e.nu)
            state = EquilibriumState(
                P=P, W=W, Q=q, Pbar=pbar, Y=output, C=c, lam=lam, gdp=gdp,
                residuals=0.0, shock=shock, n_iter=iteration, shares=shares)
            checks = check_equilibrium(model, state)
            object.__setattr__(state, "residuals", max(checks.values()))
            return state
        if resid > prev_resid:
            step = max(step * 0.5, DAMPING_FLOOR)
        else:
            step = min(damping, step * 1.25)
        prev_resid = resid
        lp = lp + step * (lp_implied - lp)
        lw = lw + step * (lw_implied - lw)

    raise EquilibriumError(
        f"no convergence after {max_iter} iterations; last residual "
        f"{prev_resid:.3e}", residual=prev_resid)


def real_gdp(state: EquilibriumState, model: CalibratedModel) -> float:
    """Log deviation of the consumption aggregate from the base year.

    Recomputed from consumed quantities; base-year consumption is 1 under
    the calibration normalization (all base prices are 1 and expenditure is
    the numeraire), so the deviation is just the log of the aggregate.
    """
    agg = _consumption_aggregate(state.C, model.beta, model.elasticities.nu)
    return float(np.log(agg))


def check_equilibrium(model: CalibratedModel,
                      state: EquilibriumState) -> dict[str, float]:
    """Recompute every equilibrium condition from primitives.

    Independent of the solver's own bookkeeping: quantities are rebuilt from
    cost-minimizing demand chains and market clearing is verified in values.
    Returns named maximum absolute residuals.
    """
    e = model.elasticities
    shock = state.shock
    P, W, lam = state.P, state.W, state.lam
    n = model.n

    implied_p, q, pbar = unit_cost_indices(P, W, shock.Ptilde, shock.E,
                                           model, Z=shock.Z)
    price_gap = np.abs(np.log(implied_p) - np.log(P)).max()

    cost = implied_p * shock.Z  # marginal cost of the labor/bundle composite
    output = lam / P
    f_units = output / shock.Z

    # labor demand from cost minimization vs the fixed endowment
    if abs(e.sigma - 1.0) < 1e-14:
        labor_demand = model.gamma * cost * f_units / W
    else:
        labor_demand = model.gamma * (W / cost) ** (-e.sigma) * f_units
    labor_gap = np.abs(labor_demand - model.labor).max()

    # composite demand chain down to domestic and imported varieties
    if abs(e.sigma - 1.0) < 1e-14:
        bundle = (1.0 - model.gamma) * cost * f_units / q
    else:
        bundle = (1.0 - model.gamma) * (q / cost) ** (-e.sigma) * f_units
    theta = e.theta
    unit = np.abs(theta - 1.0) < 1e-14
    ratio = np.where(unit[:, None], q[:, None] / pbar,
                     (pbar / q[:, None]) ** (-theta)[:, None])
    composite = model.omega * ratio * bundle[:, None]
    dom_ratio = model.phi * (P[None, :] / pbar) ** (-e.xi)
    dom_ratio = np.where(model.phi >= 1.0, 1.0, dom_ratio)
    x_domestic = dom_ratio * composite
    imp_ratio = (1.0 - model.phi) * ((shock.E * shock.Ptilde)[None, :] / pbar) ** (-e.xi)
    imp_ratio = np.where(model.phi >= 1.0, 0.0, imp_ratio)
    x_imported = imp_ratio * composite

    p0 = float(_ces_price(model.beta[None, :], P[None, :], e.nu)[0])
    if abs(e.nu - 1.0) < 1e-14:
        a0 = model.beta
    else:
        a0 = model.beta * (P / p0) ** (1.0 - e.nu)
    household = a0 / P
    exports = model.phi_f * (P / shock.E) ** (-e.xi_export)
    demand = x_domestic.sum(axis=0) + household + exports
    goods_gap = np.abs(P * (demand - output)).max()

    import_bill = float((x_imported * (shock.E * shock.Ptilde)[None, :]).sum())
    export_rev = float((P * exports).sum())
    budget_gap = abs(float(W @ model.labor) + import_bill - export_rev - 1.0)

    export_gap = np.abs(P * exports - state.shares.NX).max()

    return {
        "price_unit_cost": float(price_gap),
        "labor_market": float(labor_gap),
        "goods_market": float(goods_gap),
        "household_budget": float(budget_gap),
        "export_value": float(export_gap),
    }
