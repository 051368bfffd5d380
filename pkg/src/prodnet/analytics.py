"""First- and second-order propagation, linearized at a solved state.

Everything here differentiates the exact equilibrium map once (or twice, for
the GDP approximation) and is validated against finite differences of the
exact solver. The three blocks (prices, wages, sales shares) are stacked
into a single dense 3N linear system and solved directly: these responses
serve as oracles elsewhere, so exactness beats iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import CalibratedModel, EquilibriumState
from .errors import InvertibilityError

LAMBDA_FLOOR = 1e-12
SYSTEM_RESIDUAL_TOL = 1e-10


def composite_price_derivatives(model: CalibratedModel, state: EquilibriumState,
                                dlogP: np.ndarray, dlogPtilde: np.ndarray,
                                dlogE: float):
    """Log-derivatives of the composite and bundle price indices.

    dlogPbar_ij = Phi_ij dlogP_j + (1 - Phi_ij)(dlogPtilde_j + dlogE);
    dlogQ_i = sum_j Omega_ij dlogPbar_ij. Shares are the state's.
    """
    phi = state.shares.Phi
    foreign = (np.asarray(dlogPtilde, dtype=float) + dlogE)[None, :]
    dlog_pbar = phi * np.asarray(dlogP, dtype=float)[None, :] + (1.0 - phi) * foreign
    dlog_q = (state.shares.Omega * dlog_pbar).sum(axis=1)
    return dlog_pbar, dlog_q


def io_matrix_derivative(model: CalibratedModel, state: EquilibriumState,
                         dlogP: np.ndarray, dlogPbar: np.ndarray,
                         dlogQ: np.ndarray):
    """Log-derivatives of the IO matrix entries and household shares.

    dlog a_ij = (sigma-1) dlogP_i + (theta_i-sigma) dlogQ_i
                + (xi-theta_i) dlogPbar_ij + (1-xi) dlogP_j;
    dlog a_0j = (1-nu)(dlogP_j - sum_k a_0k dlogP_k).

    Holds productivity fixed; when differentiating along a TFP shock the
    caller must add (sigma-1) dlogZ_i to every row i (zero-profit pricing
    ties the labor share to P_i Z_i, not P_i alone).
    """
    e = model.elasticities
    dlogP = np.asarray(dlogP, dtype=float)
    theta = e.theta[:, None]
    dlog_a = ((e.sigma - 1.0) * dlogP[:, None]
              + (theta - e.sigma) * np.asarray(dlogQ, dtype=float)[:, None]
              + (e.xi - theta) * np.asarray(dlogPbar, dtype=float)
              + (1.0 - e.xi) * dlogP[None, :])
    a0 = state.shares.a0
    mean_dlp = float(a0 @ dlogP)
    dlog_a0 = (1.0 - e.nu) * (dlogP - mean_dlp)
    return dlog_a, dlog_a0


@dataclass(frozen=True)
class FirstOrderResponse:
    """Solution of the stacked linear system in (dlogP, dlogW, dlambda).

    dlogGDP_first_order is the sales-share-weighted TFP term sum(lambda *
    dlogZ) -- the leading term of the GDP expansion -- not the full GDP
    differential, which under the expenditure numeraire also moves with the
    consumption price index when import prices or the exchange rate shift.
    """

    dlogP: np.ndarray
    dlogW: np.ndarray
    dlambda: np.ndarray
    dlogGDP_first_order: float
    residual: float


def first_order_response(model: CalibratedModel, state: EquilibriumState,
                         dlogZ: np.ndarray, dlogPtilde: np.ndarray | None = None,
                         dlogE: float = 0.0) -> FirstOrderResponse:
    """Joint linear response of (log P, log W, lambda) to small shocks.

    Solves the stacked system of the three differentiated equilibrium
    blocks: zero-profit pricing, the labor first-order condition, and
    market clearing. Evaluated at the shares and sales of the given state.
    """
    n = model.n
    e = model.elasticities
    dz = np.asarray(dlogZ, dtype=float)
    dpt = np.zeros(n) if dlogPtilde is None else np.asarray(dlogPtilde, float)
    if dz.shape != (n,) or dpt.shape != (n,):
        raise ValueError("shock derivatives must be N-vectors")
    lam = state.lam
    if (lam < LAMBDA_FLOOR).any():
        bad = np.nonzero(lam < LAMBDA_FLOOR)[0]
        raise ValueError(f"sales shares too small to linearize: {bad.tolist()}")

    sh = state.shares
    gamma_s, omega_s, phi_s = sh.Gamma, sh.Omega, sh.Phi
    a, a0, nx = sh.A, sh.a0, sh.NX
    theta = e.theta

    m1 = omega_s * phi_s
    k = (omega_s * (1.0 - phi_s) * (dpt + dlogE)[None, :]).sum(axis=1)

    # price block: dlp_i = Gamma_i dlw_i + (1-Gamma_i) dlogQ_i - dz_i
    block_pp = np.eye(n) - (1.0 - gamma_s)[:, None] * m1
    block_pw = -np.diag(gamma_s)
    rhs_p = (1.0 - gamma_s) * k - dz

    # wage block: dlw_i = (1-1/s)(dlp_i + dz_i) + dlambda_i/(s lam_i)
    coef = 1.0 - 1.0 / e.sigma
    block_wp = -coef * np.eye(n)
    block_wl = -np.diag(1.0 / (e.sigma * lam))
    rhs_w = coef * dz

    # sales block: (I - A') dlambda = T dlp + s
    w = lam[:, None] * a
    col_w = w.sum(axis=0)
    t = (e.sigma - 1.0) * w.T
    t += w.T @ ((theta - e.sigma)[:, None] * m1)
    diag_extra = (w * (e.xi - theta)[:, None] * phi_s).sum(axis=0)
    diag_extra += (1.0 - e.xi) * col_w
    diag_extra += nx * (1.0 - e.xi_export)
    t[np.arange(n), np.arange(n)] += diag_extra
    t += (1.0 - e.nu) * (a0[:, None] * (np.eye(n) - a0[None, :]))

    s_const = w.T @ ((e.sigma - 1.0) * dz)
    s_const += w.T @ ((theta - e.sigma) * k)
    s_const += (w * (e.xi - theta)[:, None] * (1.0 - phi_s)).sum(axis=0) \
        * (dpt + dlogE)
    s_const += nx * e.xi_export * dlogE

    system = np.zeros((3 * n, 3 * n))
    rhs = np.zeros(3 * n)
    system[:n, :n] = block_pp
    system[:n, n:2 * n] = block_pw
    rhs[:n] = rhs_p
    system[n:2 * n, :n] = block_wp
    system[n:2 * n, n:2 * n] = np.eye(n)
    system[n:2 * n, 2 * n:] = block_wl
    rhs[n:2 * n] = rhs_w
    system[2 * n:, :n] = -t
    system[2 * n:, 2 * n:] = np.eye(n) - a.T
    rhs[2 * n:] = s_const

    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise InvertibilityError(
            f"first-order system singular (spectral radius at 1?): {exc}")
    residual = float(np.abs(system @ solution - rhs).max())

    return FirstOrderResponse(
        dlogP=solution[:n], dlogW=solution[n:2 * n], dlambda=solution[2 * n:],
        dlogGDP_first_order=float(lam @ dz), residual=residual)


def gdp_second_order(model: CalibratedModel, state: EquilibriumState,
                     sector: int, dlogZ_i: float) -> float:
    """Second-order GDP approximation for a single-sector TFP shock.

    lambda_i dz + 0.5 (d lambda_i / d logZ_i) dz^2, the sales-share
    derivative taken from the linearized system at the unit shock.
    """
    if dlogZ_i == 0.0:
        return 0.0
    n = model.n
    unit = np.zeros(n)
    unit[sector] = 1.0
    fo = first_order_response(model, state, unit)
    lam_i = float(state.lam[sector])
    return lam_i * dlogZ_i + 0.5 * float(fo.dlambda[sector]) * dlogZ_i ** 2


def reduced_form_check(model: CalibratedModel, state: EquilibriumState,
                       dlogP: np.ndarray, dlogPhi: np.ndarray) -> np.ndarray:
    """Predicted log-changes of measured input expenditure shares.

    dlogOmega_ij = (1-theta_i) dlogP_j + ((xi-theta_i)/(xi-1)) dlogPhi_ij
                   + eta_i,  eta_i = (theta_i-1) dlogQ_i,

    with dlogQ recovered from the same two observables through
    dlogPbar_ij = dlogP_j + dlogPhi_ij/(xi-1). The measured share here is
    the domestic-input share of total intermediate spending, the object the
    estimation panel carries; eta is the term the fixed effects absorb.
    """
    e = model.elasticities
    if abs(e.xi - 1.0) < 1e-9:
        raise ValueError("xi = 1 is singular in the reduced form")
    dlogP = np.asarray(dlogP, dtype=float)
    dlogPhi = np.asarray(dlogPhi, dtype=float)
    theta = e.theta[:, None]
    dlog_pbar = dlogP[None, :] + dlogPhi / (e.xi - 1.0)
    dlog_q = (state.shares.Omega * dlog_pbar).sum(axis=1)
    return ((1.0 - theta) * dlogP[None, :]
            + ((e.xi - theta) / (e.xi - 1.0)) * dlogPhi
            + (theta - 1.0) * dlog_q[:, None])


def response_table(model: CalibratedModel, fo: FirstOrderResponse) -> str:
    """CSV rows (code, dlogP, dlogW, dlambda) for one shock."""
    lines = ["code,dlogP,dlogW,dlambda"]
    for k, code in enumerate(model.economy.codes):
        lines.append(f"{code},{fo.dlogP[k]:.10e},{fo.dlogW[k]:.10e},"
                     f"{fo.dlambda[k]:.10e}")
    return "\n".join(lines) + "\n"
