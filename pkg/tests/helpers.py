"""Shared builders for the test suite: random economies, calibrated models,
reduced-form synthetic panels, and a solve wrapper that enforces the
market-clearing residual bound on every scenario the suite touches."""

from pathlib import Path

import numpy as np

from prodnet.economy import Elasticities, IOSnapshot, build_io_matrix
from prodnet.equilibrium import (CalibratedModel, Shock, calibrate,
                                 check_equilibrium, solve_equilibrium)
from prodnet.analytics import reduced_form_check
from prodnet.ingest.panel import PanelObservation

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "small"
RESIDUAL_BOUND = 1e-8


def random_snapshot(rng, n, open_economy=True, year=2017):
    """Random valid share snapshot; closed economies get phi = 1."""
    omega = rng.uniform(0.2, 1.0, (n, n))
    omega /= omega.sum(axis=1, keepdims=True)
    phi = rng.uniform(0.55, 0.95, (n, n)) if open_economy else np.ones((n, n))
    gamma = rng.uniform(0.3, 0.6, n)
    a0 = rng.uniform(0.5, 1.0, n)
    a0 /= a0.sum()
    a = build_io_matrix(omega, phi, gamma)
    lam = np.linalg.solve(np.eye(n) - a.T, a0)
    nx = np.zeros(n)
    return IOSnapshot(year=year, omega=omega, phi=phi, gamma=gamma, a=a,
                      a0=a0, lam=lam, nx=nx)


def toy_elasticities(n, theta=None, sigma=0.6, xi=1.4, nu=0.8,
                     xi_export=None):
    if theta is None:
        theta = np.linspace(0.2, 2.0, n)
    theta = np.asarray(theta, dtype=float) * np.ones(n)
    return Elasticities(sigma=sigma, theta=theta, xi=xi, nu=nu,
                        xi_export=xi if xi_export is None else xi_export)


def toy_model(seed=0, n=4, open_economy=True, **kwargs) -> CalibratedModel:
    rng = np.random.default_rng(seed)
    snapshot = random_snapshot(rng, n, open_economy=open_economy)
    elasticities = toy_elasticities(n, **kwargs)
    return calibrate(snapshot, elasticities, open_economy=open_economy)


def solve_checked(model, shock=None, bound=RESIDUAL_BOUND):
    """Solve and assert all market-clearing checks hold; returns the state."""
    state = solve_equilibrium(model, shock)
    checks = check_equilibrium(model, state)
    worst = max(checks.values())
    assert worst < bound, f"residuals above {bound}: {checks}"
    return state


def reduced_form_panel(model, state, n_years, noise_sd, rng,
                       price_sd=0.05, phi_sd=0.05, phi_price_coupling=0.0):
    """Synthetic estimation panel generated from the reduced-form share
    derivative at the given state, plus iid noise on the share changes.

    phi_price_coupling tilts the domestic-share changes toward the price
    changes of the same input, which is what makes dropping the phi
    regressor produce a systematic omitted-variable bias."""
    n = model.n
    observations = []
    for t in range(n_years):
        dlog_p = rng.normal(0.0, price_sd, n)
        dlog_phi = (rng.normal(0.0, phi_sd, (n, n))
                    + phi_price_coupling * dlog_p[None, :])
        dlog_omega = reduced_form_check(model, state, dlog_p, dlog_phi)
        if noise_sd > 0.0:
            dlog_omega = dlog_omega + rng.normal(0.0, noise_sd, (n, n))
        for i in range(n):
            for j in range(n):
                observations.append(PanelObservation(
                    i=i, j=j, t=t, dlog_omega=float(dlog_omega[i, j]),
                    dlog_p=float(dlog_p[j]), dlog_phi=float(dlog_phi[i, j])))
    return observations


def household_panel(nu, n_goods, n_years, noise_sd, rng, price_sd=0.05):
    """Synthetic household share panel with year effects."""
    observations = []
    for t in range(n_years):
        dlog_p = rng.normal(0.0, price_sd, n_goods)
        year_effect = -(1.0 - nu) * float(np.mean(dlog_p)) + rng.normal(0, 0.02)
        for j in range(n_goods):
            ds = (1.0 - nu) * dlog_p[j] + year_effect
            if noise_sd > 0.0:
                ds += rng.normal(0.0, noise_sd)
            observations.append(PanelObservation(
                i=0, j=j, t=t, dlog_omega=float(ds), dlog_p=float(dlog_p[j]),
                dlog_phi=0.0))
    return observations


def tfp_shock(n, sector=None, dlog=0.0, dlog_vector=None) -> Shock:
    z = np.zeros(n)
    if dlog_vector is not None:
        z = np.asarray(dlog_vector, dtype=float)
    elif sector is not None:
        z[sector] = dlog
    return Shock(Z=np.exp(z), Ptilde=np.ones(n), E=1.0)
