"""GMM estimation of the substitution elasticities from share log-changes.

The moment model regresses within-(purchaser, year) demeaned share changes on
demeaned price and import-ratio changes; the structural mapping sends the two
regression coefficients back to (theta_i, xi). Three modes share the
machinery:

    sector_specific  theta per purchaser + one xi, 2N moments
    uniform          one pooled theta + one xi, 2 moments
    biased_closed    theta per purchaser, import-ratio term dropped, N moments

Weighting is the identity, so the objective is the plain sum of squared
moments, and standard errors come from the heteroskedasticity-robust sandwich
with an analytic Jacobian. All moment averages divide by the total
observation count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EstimationError
from .optimize import PowellResult, powell_minimize

log = logging.getLogger(__name__)

MODES = ("sector_specific", "uniform", "biased_closed")

THETA_LOWER = 0.0
XI_LOWER = 1.0 + 1e-3
XI_UPPER = 50.0
# (theta start, xi start) pairs; constant theta vectors. The objective is
# non-convex, so the best of five deterministic launches wins.
MULTISTARTS = ((0.3, 1.5), (0.9, 1.5), (0.05, 1.5), (0.3, 3.0), (0.9, 3.0))


def structural_coefficients(theta, xi: float):
    """Map (theta_i, xi) to the two reduced-form slopes.

    beta1 = 1 - theta_i multiplies the price change; beta2 =
    (xi - theta_i)/(xi - 1) multiplies the import-ratio change.
    """
    if abs(xi - 1.0) < 1e-9:
        raise EstimationError("xi = 1 makes the import-ratio slope singular")
    theta = np.asarray(theta, dtype=float)
    beta1 = 1.0 - theta
    beta2 = (xi - theta) / (xi - 1.0)
    return beta1, beta2


@dataclass
class ResidualizedPanel:
    """Observation arrays demeaned within (purchaser, year) cells.

    Sufficient statistics for every cross-moment the estimator needs are
    precomputed per purchaser, so objective evaluations cost O(N) instead of
    a pass over the panel.
    """

    i: np.ndarray
    j: np.ndarray
    t: np.ndarray
    group: np.ndarray
    dlog_omega: np.ndarray
    dlog_p: np.ndarray
    dlog_phi: np.ndarray
    n_sectors: int
    n_groups: int

    # per-purchaser sums filled in __post_init__
    obs_per_sector: np.ndarray = field(init=False, repr=False)
    s_pp: np.ndarray = field(init=False, repr=False)
    s_pf: np.ndarray = field(init=False, repr=False)
    s_ff: np.ndarray = field(init=False, repr=False)
    s_po: np.ndarray = field(init=False, repr=False)
    s_fo: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_sectors
        i, p, f, o = self.i, self.dlog_p, self.dlog_phi, self.dlog_omega
        self.obs_per_sector = np.bincount(i, minlength=n)
        self.s_pp = np.bincount(i, weights=p * p, minlength=n)
        self.s_pf = np.bincount(i, weights=p * f, minlength=n)
        self.s_ff = np.bincount(i, weights=f * f, minlength=n)
        self.s_po = np.bincount(i, weights=p * o, minlength=n)
        self.s_fo = np.bincount(i, weights=f * o, minlength=n)

    @property
    def n_obs(self) -> int:
        return self.i.size

    @property
    def sectors_without_obs(self) -> np.ndarray:
        return np.nonzero(self.obs_per_sector == 0)[0]

    def residuals(self, theta, xi: float, drop_phi_term: bool = False) -> np.ndarray:
        beta1, beta2 = structural_coefficients(theta, xi)
        eps = self.dlog_omega - beta1[self.i] * self.dlog_p
        if not drop_phi_term:
            eps = eps - beta2[self.i] * self.dlog_phi
        return eps


def residualize(panel: Iterable, n_sectors: int | None = None) -> ResidualizedPanel:
    """Demean dlog_omega, dlog_p, dlog_phi within each (purchaser, year) cell.

    Accepts any iterable of records with attributes i, j, t, dlog_omega,
    dlog_p, dlog_phi. Demeaning absorbs the unobserved bundle-price term
    (theta_i - 1) dlogQ_it, which is constant within a cell. Idempotent.
    """
    obs = list(panel)
    if not obs:
        raise EstimationError("cannot residualize an empty panel")
    i = np.array([o.i for o in obs], dtype=int)
    j = np.array([o.j for o in obs], dtype=int)
    t = np.array([o.t for o in obs], dtype=int)
    dlo = np.array([o.dlog_omega for o in obs], dtype=float)
    dlp = np.array([o.dlog_p for o in obs], dtype=float)
    dlf = np.array([o.dlog_phi for o in obs], dtype=float)
    if n_sectors is None:
        n_sectors = int(max(i.max(), j.max())) + 1

    keys = i.astype(np.int64) * (t.max() + 1) + t
    _, group = np.unique(keys, return_inverse=True)
    n_groups = int(group.max()) + 1
    counts = np.bincount(group, minlength=n_groups)

    def demean(v: np.ndarray) -> np.ndarray:
        means = np.bincount(group, weights=v, minlength=n_groups) / counts
        return v - means[group]

    return ResidualizedPanel(
        i=i, j=j, t=t, group=group,
        dlog_omega=demean(dlo), dlog_p=demean(dlp), dlog_phi=demean(dlf),
        n_sectors=int(n_sectors), n_groups=n_groups)


def _moments_sector(rp: ResidualizedPanel, theta, xi: float) -> np.ndarray:
    beta1, beta2 = structural_coefficients(theta, xi)
    g_p = rp.s_po - beta1 * rp.s_pp - beta2 * rp.s_pf
    g_f = rp.s_fo - beta1 * rp.s_pf - beta2 * rp.s_ff
    return np.concatenate([g_p, g_f]) / rp.n_obs


def _moments_uniform(rp: ResidualizedPanel, theta_bar: float, xi: float) -> np.ndarray:
    beta1, beta2 = structural_coefficients(theta_bar, xi)
    g_p = rp.s_po.sum() - beta1 * rp.s_pp.sum() - beta2 * rp.s_pf.sum()
    g_f = rp.s_fo.sum() - beta1 * rp.s_pf.sum() - beta2 * rp.s_ff.sum()
    return np.array([float(g_p), float(g_f)]) / rp.n_obs


def _moments_biased(rp: ResidualizedPanel, theta) -> np.ndarray:
    beta1 = 1.0 - np.asarray(theta, dtype=float)
    return (rp.s_po - beta1 * rp.s_pp) / rp.n_obs


def _moments_uniform_closed(rp: ResidualizedPanel, theta_bar: float) -> np.ndarray:
    beta1 = 1.0 - float(theta_bar)
    return np.array([float(rp.s_po.sum() - beta1 * rp.s_pp.sum())]) / rp.n_obs


def moment_conditions(theta, xi: float, rpanel: ResidualizedPanel) -> np.ndarray:
    """Stacked sample moments [price block; import-ratio block], length 2N.

    Sectors with no observations contribute structurally zero moments; they
    are listed in rpanel.sectors_without_obs.
    """
    if rpanel.n_obs == 0:
        raise EstimationError("empty residualized panel")
    missing = rpanel.sectors_without_obs
    if missing.size:
        log.warning("sectors with no observations, moments forced to 0: %s",
                    missing.tolist())
    return _moments_sector(rpanel, theta, xi)


def gmm_objective(theta, xi: float, rpanel: ResidualizedPanel) -> float:
    """Sum of squared moments (identity weighting)."""
    g = moment_conditions(theta, xi, rpanel)
    return float(g @ g)


def _pack_objective(rp: ResidualizedPanel, mode: str):
    if mode == "sector_specific":
        n = rp.n_sectors

        def f(x):
            g = _moments_sector(rp, x[:n], x[n])
            return float(g @ g)
        return f
    if mode == "uniform":
        def f(x):
            g = _moments_uniform(rp, x[0], x[1])
            return float(g @ g)
        return f
    if mode == "biased_closed":
        def f(x):
            g = _moments_biased(rp, x)
            return float(g @ g)
        return f
    if mode == "uniform_closed":
        def f(x):
            g = _moments_uniform_closed(rp, x[0])
            return float(g @ g)
        return f
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def _jacobian(rp: ResidualizedPanel, theta, xi: float, mode: str) -> np.ndarray:
    """Analytic d moments / d params; moments are linear in (beta1, beta2)."""
    nbar = rp.n_obs
    if mode == "biased_closed":
        return np.diag(rp.s_pp / nbar)
    if mode == "uniform_closed":
        return np.array([[rp.s_pp.sum() / nbar]])
    if mode == "uniform":
        dbeta2_dxi = (theta - 1.0) / (xi - 1.0) ** 2
        spp, spf, sff = rp.s_pp.sum(), rp.s_pf.sum(), rp.s_ff.sum()
        return np.array([
            [spp + spf / (xi - 1.0), -spf * dbeta2_dxi],
            [spf + sff / (xi - 1.0), -sff * dbeta2_dxi],
        ]) / nbar
    n = rp.n_sectors
    theta = np.asarray(theta, dtype=float)
    dbeta2_dxi = (theta - 1.0) / (xi - 1.0) ** 2
    g = np.zeros((2 * n, n + 1))
    rows = np.arange(n)
    # d beta1/d theta_I = -1 and d beta2/d theta_I = -1/(xi-1), so each theta
    # column touches only its own sector's two moments
    g[rows, rows] = (rp.s_pp + rp.s_pf / (xi - 1.0)) / nbar
    g[n + rows, rows] = (rp.s_pf + rp.s_ff / (xi - 1.0)) / nbar
    g[rows, n] = -rp.s_pf * dbeta2_dxi / nbar
    g[n + rows, n] = -rp.s_ff * dbeta2_dxi / nbar
    return g


def _moment_outer(rp: ResidualizedPanel, eps: np.ndarray, mode: str) -> np.ndarray:
    """Outer-product covariance of per-observation moment contributions."""
    nbar = rp.n_obs
    e2 = eps * eps
    p, f, i = rp.dlog_p, rp.dlog_phi, rp.i
    if mode == "uniform":
        m = np.stack([p * eps, f * eps])
        return (m @ m.T) / nbar
    if mode == "uniform_closed":
        m = p * eps
        return np.array([[float(m @ m) / nbar]])
    n = rp.n_sectors
    w_pp = np.bincount(i, weights=p * p * e2, minlength=n)
    if mode == "biased_closed":
        return np.diag(w_pp / nbar)
    w_pf = np.bincount(i, weights=p * f * e2, minlength=n)
    w_ff = np.bincount(i, weights=f * f * e2, minlength=n)
    omega = np.zeros((2 * n, 2 * n))
    rows = np.arange(n)
    omega[rows, rows] = w_pp
    omega[rows, n + rows] = w_pf
    omega[n + rows, rows] = w_pf
    omega[n + rows, n + rows] = w_ff
    return omega / nbar


def sandwich_variance(theta_hat, xi_hat: float | None,
                      rpanel: ResidualizedPanel,
                      mode: str = "sector_specific"):
    """Robust GMM covariance (G'G)^{-1} G' Omega G (G'G)^{-1} / n_obs.

    Returns (covariance matrix, standard errors) over the parameter vector in
    estimation order (thetas first, xi last where applicable).
    """
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if mode == "biased_closed":
        eps = rpanel.residuals(theta, xi=2.0, drop_phi_term=True)
        g = _jacobian(rpanel, theta, xi=2.0, mode=mode)
    elif mode == "uniform_closed":
        eps = rpanel.residuals(np.full(rpanel.n_sectors, theta[0]), xi=2.0,
                               drop_phi_term=True)
        g = _jacobian(rpanel, float(theta[0]), xi=2.0, mode=mode)
    elif mode == "uniform":
        eps = rpanel.residuals(np.full(rpanel.n_sectors, theta[0]), xi_hat)
        g = _jacobian(rpanel, float(theta[0]), xi_hat, mode=mode)
    else:
        eps = rpanel.residuals(theta, xi_hat)
        g = _jacobian(rpanel, theta, xi_hat, mode=mode)

    col_norms = np.linalg.norm(g, axis=0)
    dead = np.nonzero(col_norms < 1e-300)[0]
    if dead.size:
        has_xi = mode not in ("biased_closed", "uniform_closed")
        names = [f"theta[{k}]" if k < g.shape[1] - has_xi else "xi"
                 for k in dead]
        raise EstimationError(
            f"Jacobian has zero columns for {names}; no identifying "
            "variation (e.g. a sector with no price variation)")
    gtg = g.T @ g
    if np.linalg.matrix_rank(gtg) < gtg.shape[0]:
        raise EstimationError("moment Jacobian is rank deficient")
    bread = np.linalg.inv(gtg) @ g.T
    omega = _moment_outer(rpanel, eps, mode)
    cov = bread @ omega @ bread.T / rpanel.n_obs
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return cov, se


@dataclass
class EstimationResult:
    mode: str
    theta_hat: np.ndarray
    xi_hat: float | None
    se_theta: np.ndarray
    se_xi: float | None
    objective_value: float
    n_obs: int
    converged: bool
    n_evals: int
    start_index: int
    at_lower_bound: np.ndarray
    xi_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "theta_hat": self.theta_hat.tolist(),
            "xi_hat": self.xi_hat,
            "se_theta": self.se_theta.tolist(),
            "se_xi": self.se_xi,
            "objective_value": self.objective_value,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "start_index": self.start_index,
            "at_lower_bound": self.at_lower_bound.tolist(),
            "xi_degenerate": self.xi_degenerate,
        }


def _run_multistart(objective, starts, lower, upper,
                    max_evals: int | None) -> tuple[PowellResult, int]:
    best: PowellResult | None = None
    best_idx = -1
    for idx, x0 in enumerate(starts):
        res = powell_minimize(objective, x0, lower_bounds=lower,
                              upper_bounds=upper, max_evals=max_evals)
        if best is None or (res.fun, idx) < (best.fun, best_idx):
            best = res
            best_idx = idx
    return best, best_idx


def estimate(rpanel: ResidualizedPanel, mode: str = "sector_specific",
             max_evals: int | None = None) -> EstimationResult:
    """Minimize the GMM objective and attach sandwich standard errors.

    sector_specific requires every sector to have observations (otherwise
    its theta is unidentified). A panel whose import-ratio changes are
    identically zero cannot identify xi; in that case the xi block is
    dropped, xi is reported as degenerate, and the theta problem is solved
    from the price moments alone (per sector or pooled, matching the mode).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    n = rpanel.n_sectors

    if mode != "uniform" and rpanel.sectors_without_obs.size:
        raise EstimationError(
            f"mode {mode} needs observations for every sector; missing "
            f"{rpanel.sectors_without_obs.tolist()}")

    no_phi_variation = float(np.abs(rpanel.dlog_phi).max(initial=0.0)) == 0.0
    effective_mode = mode
    xi_degenerate = False
    if no_phi_variation and mode in ("sector_specific", "uniform"):
        effective_mode = ("biased_closed" if mode == "sector_specific"
                          else "uniform_closed")
        xi_degenerate = True
        log.warning("no import-ratio variation: xi unidentified, "
                    "estimating thetas from price moments only")

    objective = _pack_objective(rpanel, effective_mode)
    if effective_mode == "biased_closed":
        starts = [np.full(n, s) for s in (0.3, 0.9, 0.05)]
        lower = np.zeros(n)
        upper = np.full(n, np.inf)
    elif effective_mode == "uniform_closed":
        starts = [np.array([s]) for s in (0.3, 0.9, 0.05)]
        lower = np.zeros(1)
        upper = np.array([np.inf])
    elif effective_mode == "uniform":
        starts = [np.array([th, xi]) for th, xi in MULTISTARTS]
        lower = np.array([THETA_LOWER, XI_LOWER])
        upper = np.array([np.inf, XI_UPPER])
    else:
        starts = [np.concatenate([np.full(n, th), [xi]])
                  for th, xi in MULTISTARTS]
        lower = np.concatenate([np.full(n, THETA_LOWER), [XI_LOWER]])
        upper = np.concatenate([np.full(n, np.inf), [XI_UPPER]])

    best, best_idx = _run_multistart(objective, starts, lower, upper, max_evals)
    if not best.converged:
        log.warning("optimizer hit the evaluation budget (mode %s)", mode)

    if effective_mode in ("biased_closed", "uniform_closed"):
        theta_hat = best.x.copy()
        xi_hat = None
    elif effective_mode == "uniform":
        theta_hat = best.x[:1].copy()
        xi_hat = float(best.x[1])
    else:
        theta_hat = best.x[:n].copy()
        xi_hat = float(best.x[n])

    cov, se = sandwich_variance(theta_hat, xi_hat, rpanel, mode=effective_mode)
    if effective_mode in ("biased_closed", "uniform_closed"):
        se_theta, se_xi = se, None
    elif effective_mode == "uniform":
        se_theta, se_xi = se[:1], float(se[1])
    else:
        se_theta, se_xi = se[:n], float(se[n])

    return EstimationResult(
        mode=mode,
        theta_hat=theta_hat,
        xi_hat=xi_hat,
        se_theta=se_theta,
        se_xi=se_xi,
        objective_value=best.fun,
        n_obs=rpanel.n_obs,
        converged=best.converged,
        n_evals=best.n_evals,
        start_index=best_idx,
        at_lower_bound=theta_hat <= THETA_LOWER + 1e-12,
        xi_degenerate=xi_degenerate,
    )


@dataclass
class HouseholdNuResult:
    nu_hat: float
    se: float
    objective_value: float
    n_obs: int
    degenerate: bool
    converged: bool


def estimate_household_nu(consumption_panel: Iterable) -> HouseholdNuResult:
    """Estimate the household elasticity from consumption-share changes.

    The household is a single purchaser, so the (purchaser, year) cells
    reduce to year fixed effects; only the price moment exists (households
    buy domestic goods), making the problem just identified.
    """
    rp = residualize(consumption_panel, n_sectors=1) if not isinstance(
        consumption_panel, ResidualizedPanel) else consumption_panel
    # collapse purchaser index: every observation belongs to the household
    i_saved = rp.i
    if (i_saved != 0).any():
        raise EstimationError("household panel must have purchaser index 0")

    if float(np.abs(rp.dlog_omega).max(initial=0.0)) == 0.0:
        return HouseholdNuResult(nu_hat=1.0, se=float("nan"),
                                 objective_value=0.0, n_obs=rp.n_obs,
                                 degenerate=True, converged=True)

    def objective(x):
        beta1 = 1.0 - x[0]
        g = (rp.s_po[0] - beta1 * rp.s_pp[0]) / rp.n_obs
        return float(g * g)

    best, _ = _run_multistart(objective, [np.array([s]) for s in (0.3, 0.9, 0.05)],
                              lower=np.array([0.0]), upper=np.array([np.inf]),
                              max_evals=None)
    nu_hat = float(best.x[0])
    eps = rp.dlog_omega - (1.0 - nu_hat) * rp.dlog_p
    g = rp.s_pp[0] / rp.n_obs
    if g < 1e-300:
        raise EstimationError("household prices have no variation")
    omega_hat = float(np.sum((rp.dlog_p * eps) ** 2)) / rp.n_obs
    var = omega_hat / (g * g) / rp.n_obs
    return HouseholdNuResult(nu_hat=nu_hat, se=float(np.sqrt(var)),
                             objective_value=best.fun, n_obs=rp.n_obs,
                             degenerate=False, converged=best.converged)


def export_table(results: dict[str, EstimationResult], codes: Sequence[str],
                 path, header_comment: str | None = None) -> None:
    """Write per-sector estimates as CSV: code, estimate, SE, biased, biased SE."""
    main = results.get("sector_specific")
    biased = results.get("biased_closed")
    uniform = results.get("uniform")
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("code,estimate,se,biased_estimate,biased_se")
    for k, code in enumerate(codes):
        est = f"{main.theta_hat[k]:.3f},{main.se_theta[k]:.3f}" if main else ","
        bia = (f"{biased.theta_hat[k]:.3f},{biased.se_theta[k]:.3f}"
               if biased else ",")
        lines.append(f"{code},{est},{bia}")
    if uniform:
        lines.append(f"uniform,{uniform.theta_hat[0]:.3f},"
                     f"{uniform.se_theta[0]:.3f},,")
    if main and main.xi_hat is not None:
        lines.append(f"armington,{main.xi_hat:.3f},{main.se_xi:.3f},,")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
