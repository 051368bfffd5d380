import numpy as np
import pytest

from prodnet.errors import EstimationError
from prodnet.estimation import (estimate, estimate_household_nu,
                                export_table, gmm_objective,
                                moment_conditions, residualize,
                                sandwich_variance, structural_coefficients)
from prodnet.ingest.panel import PanelObservation

from helpers import (household_panel, reduced_form_panel, solve_checked,
                     toy_model)


def _obs(i, j, t, o, p, f):
    return PanelObservation(i=i, j=j, t=t, dlog_omega=o, dlog_p=p, dlog_phi=f)


def test_structural_coefficients_hand_values():
    beta1, beta2 = structural_coefficients(np.array([0.29]), 1.448)
    assert beta1[0] == pytest.approx(0.710, abs=1e-9)
    assert beta2[0] == pytest.approx((1.448 - 0.29) / 0.448, abs=1e-9)
    with pytest.raises(EstimationError, match="xi = 1"):
        structural_coefficients(np.array([0.5]), 1.0)


def test_residualize_within_cell_means_are_zero():
    rng = np.random.default_rng(21)
    panel = [_obs(i, j, t, rng.normal(), rng.normal(), rng.normal())
             for i in range(3) for j in range(3) for t in range(4)]
    rp = residualize(panel, 3)
    for arr in (rp.dlog_omega, rp.dlog_p, rp.dlog_phi):
        sums = np.bincount(rp.group, weights=arr)
        np.testing.assert_allclose(sums, 0.0, atol=1e-10)


def test_residualize_is_idempotent():
    rng = np.random.default_rng(22)
    panel = [_obs(i, j, t, rng.normal(), rng.normal(), rng.normal())
             for i in range(2) for j in range(4) for t in range(3)]
    rp1 = residualize(panel, 4)
    panel2 = [_obs(int(rp1.i[k]), int(rp1.j[k]), int(rp1.t[k]),
                   float(rp1.dlog_omega[k]), float(rp1.dlog_p[k]),
                   float(rp1.dlog_phi[k])) for k in range(rp1.n_obs)]
    rp2 = residualize(panel2, 4)
    np.testing.assert_allclose(rp2.dlog_omega, rp1.dlog_omega, atol=1e-14)
    np.testing.assert_allclose(rp2.dlog_p, rp1.dlog_p, atol=1e-14)


def test_residualize_absorbs_cell_constants():
    # Adding any (i, t)-constant to a variable must not change the result.
    rng = np.random.default_rng(23)
    base = [_obs(i, j, t, rng.normal(), rng.normal(), rng.normal())
            for i in range(3) for j in range(3) for t in range(3)]
    shift = {(o.i, o.t): rng.normal() for o in base}
    shifted = [_obs(o.i, o.j, o.t, o.dlog_omega + shift[(o.i, o.t)],
                    o.dlog_p, o.dlog_phi) for o in base]
    rp_a = residualize(base, 3)
    rp_b = residualize(shifted, 3)
    np.testing.assert_allclose(rp_b.dlog_omega, rp_a.dlog_omega, atol=1e-12)


def test_residualize_rejects_empty_panel():
    with pytest.raises(EstimationError, match="empty"):
        residualize([])


def test_sufficient_statistics_match_brute_force():
    rng = np.random.default_rng(24)
    panel = [_obs(i, j, t, rng.normal(), rng.normal(), rng.normal())
             for i in range(3) for j in range(3) for t in range(5)]
    rp = residualize(panel, 3)
    for s in range(3):
        mask = rp.i == s
        assert rp.s_pp[s] == pytest.approx(
            np.sum(rp.dlog_p[mask] ** 2), abs=1e-12)
        assert rp.s_fo[s] == pytest.approx(
            np.sum(rp.dlog_phi[mask] * rp.dlog_omega[mask]), abs=1e-12)


def test_moment_conditions_zero_at_generating_parameters():
    # Shares built exactly from the structural slopes leave zero residuals,
    # and demeaned regressors are orthogonal to a zero vector.
    rng = np.random.default_rng(25)
    theta = np.array([0.2, 0.8, 1.5])
    xi = 1.5
    beta1, beta2 = structural_coefficients(theta, xi)
    panel = []
    for t in range(6):
        for i in range(3):
            q_term = rng.normal()  # absorbed by the (i, t) cell mean
            for j in range(3):
                p = rng.normal(0, 0.05)
                f = rng.normal(0, 0.05)
                o = beta1[i] * p + beta2[i] * f + q_term
                panel.append(_obs(i, j, t, o, p, f))
    rp = residualize(panel, 3)
    g = moment_conditions(theta, xi, rp)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)
    assert gmm_objective(theta, xi, rp) < 1e-25


def test_moment_conditions_single_sector_hand_oracle():
    panel = [
        _obs(0, 0, 0, 0.02, 0.05, 0.01),
        _obs(0, 1, 0, -0.01, -0.03, 0.02),
        _obs(0, 0, 1, 0.00, 0.01, -0.01),
        _obs(0, 1, 1, 0.03, 0.02, 0.00),
    ]
    rp = residualize(panel, 1)
    theta = np.array([0.5])
    xi = 2.0
    beta1, beta2 = 0.5, 1.5
    eps = rp.dlog_omega - beta1 * rp.dlog_p - beta2 * rp.dlog_phi
    want = np.array([np.sum(rp.dlog_p * eps), np.sum(rp.dlog_phi * eps)]) / 4
    np.testing.assert_allclose(moment_conditions(theta, xi, rp), want,
                               atol=1e-14)


def test_objective_quadratic_in_moment_scale():
    rng = np.random.default_rng(26)
    panel = [_obs(i, j, t, rng.normal(), rng.normal(), rng.normal())
             for i in range(2) for j in range(2) for t in range(4)]
    rp = residualize(panel, 2)
    theta = np.array([0.4, 0.9])
    g = moment_conditions(theta, 1.6, rp)
    assert gmm_objective(theta, 1.6, rp) == pytest.approx(g @ g, rel=1e-12)


def test_exact_recovery_from_noiseless_panel():
    theta_true = np.array([0.0, 0.3, 1.2, 2.0])
    m = toy_model(seed=2, n=4, open_economy=True, theta=theta_true, xi=1.5)
    state = solve_checked(m)
    rng = np.random.default_rng(9)
    panel = reduced_form_panel(m, state, 25, 0.0, rng)
    res = estimate(residualize(panel, 4), mode="sector_specific")
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, theta_true, atol=1e-5)
    assert res.xi_hat == pytest.approx(1.5, abs=1e-5)
    assert res.objective_value < 1e-14
    # noiseless moments imply (numerically) zero standard errors
    assert res.se_theta.max() < 1e-4


def test_noisy_recovery_within_sampling_error():
    theta_true = np.array([0.3, 0.8, 1.4])
    m = toy_model(seed=4, n=3, open_economy=True, theta=theta_true, xi=1.5)
    state = solve_checked(m)
    rng = np.random.default_rng(30)
    panel = reduced_form_panel(m, state, 40, 0.01, rng)
    res = estimate(residualize(panel, 3), mode="sector_specific")
    assert res.converged
    z_theta = np.abs(res.theta_hat - theta_true) / res.se_theta
    assert z_theta.max() < 3.0
    assert abs(res.xi_hat - 1.5) / res.se_xi < 3.0


def test_uniform_mode_pools_thetas():
    theta_true = np.full(3, 0.7)
    m = toy_model(seed=6, n=3, open_economy=True, theta=theta_true, xi=1.4)
    state = solve_checked(m)
    rng = np.random.default_rng(31)
    panel = reduced_form_panel(m, state, 30, 0.0, rng)
    res = estimate(residualize(panel, 3), mode="uniform")
    assert res.theta_hat.shape == (1,)
    assert res.theta_hat[0] == pytest.approx(0.7, abs=1e-5)
    assert res.xi_hat == pytest.approx(1.4, abs=1e-4)


def test_biased_mode_equals_sector_mode_on_closed_panel():
    # With no import-ratio variation the xi block drops out and the
    # sector-specific estimator must coincide with the biased one.
    m = toy_model(seed=8, n=3, open_economy=False, theta=[0.2, 0.6, 1.1])
    state = solve_checked(m)
    rng = np.random.default_rng(32)
    panel = reduced_form_panel(m, state, 20, 0.005, rng, phi_sd=0.0)
    rp = residualize(panel, 3)
    res_sector = estimate(rp, mode="sector_specific")
    res_biased = estimate(rp, mode="biased_closed")
    assert res_sector.xi_degenerate
    assert res_sector.xi_hat is None
    np.testing.assert_allclose(res_sector.theta_hat, res_biased.theta_hat,
                               atol=1e-10)


def test_uniform_mode_degenerates_to_pooled_price_moment_when_closed():
    # Pooled counterpart of the closed fallback; the 1-D problem has the
    # closed form theta_bar = 1 - sum(s_po)/sum(s_pp).
    m = toy_model(seed=9, n=3, open_economy=False, theta=[0.5, 0.5, 0.5])
    state = solve_checked(m)
    rng = np.random.default_rng(44)
    panel = reduced_form_panel(m, state, 25, 0.01, rng, phi_sd=0.0)
    rp = residualize(panel, 3)
    res = estimate(rp, mode="uniform")
    assert res.xi_degenerate
    assert res.xi_hat is None and res.se_xi is None
    assert res.theta_hat.shape == (1,)
    closed_form = 1.0 - rp.s_po.sum() / rp.s_pp.sum()
    assert res.theta_hat[0] == pytest.approx(closed_form, abs=1e-7)
    assert np.isfinite(res.se_theta[0]) and res.se_theta[0] > 0


def test_biased_mode_diverges_from_truth_on_open_panel():
    # When domestic-share changes co-move with input prices, omitting the
    # import-ratio regressor biases theta by roughly beta2 * coupling.
    theta_true = np.array([0.45, 0.45, 0.45])
    m = toy_model(seed=10, n=3, open_economy=True, theta=theta_true, xi=1.5)
    state = solve_checked(m)
    rng = np.random.default_rng(33)
    panel = reduced_form_panel(m, state, 60, 0.0, rng,
                               phi_price_coupling=-0.2)
    rp = residualize(panel, 3)
    res_sector = estimate(rp, mode="sector_specific")
    res_biased = estimate(rp, mode="biased_closed")
    np.testing.assert_allclose(res_sector.theta_hat, theta_true, atol=1e-5)
    beta2 = (1.5 - 0.45) / 0.5
    predicted = theta_true + beta2 * 0.2
    np.testing.assert_allclose(res_biased.theta_hat, predicted, atol=0.15)
    assert np.abs(res_biased.theta_hat - theta_true).min() > 0.25


def test_estimate_requires_observations_for_every_sector():
    rng = np.random.default_rng(34)
    panel = [_obs(0, j, t, rng.normal(), rng.normal(), rng.normal())
             for j in range(3) for t in range(4)]
    rp = residualize(panel, 3)
    with pytest.raises(EstimationError, match="missing"):
        estimate(rp, mode="sector_specific")


def test_estimate_is_deterministic():
    m = toy_model(seed=12, n=3, open_economy=True)
    state = solve_checked(m)
    rng = np.random.default_rng(35)
    panel = reduced_form_panel(m, state, 15, 0.02, rng)
    rp = residualize(panel, 3)
    r1 = estimate(rp, mode="sector_specific")
    r2 = estimate(rp, mode="sector_specific")
    np.testing.assert_array_equal(r1.theta_hat, r2.theta_hat)
    assert r1.xi_hat == r2.xi_hat and r1.start_index == r2.start_index


def test_theta_lower_bound_reported():
    m = toy_model(seed=14, n=3, open_economy=True, theta=[0.0, 0.5, 1.0],
                  xi=1.5)
    state = solve_checked(m)
    rng = np.random.default_rng(36)
    panel = reduced_form_panel(m, state, 30, 0.0, rng)
    res = estimate(residualize(panel, 3), mode="sector_specific")
    assert res.at_lower_bound[0]
    assert not res.at_lower_bound[1:].any()


def test_sandwich_variance_matches_scalar_robust_ols():
    # One sector, no phi term: the estimator is OLS of o on p through the
    # origin, and the sandwich reduces to the classic HC0 formula.
    rng = np.random.default_rng(37)
    n_obs = 400
    panel = []
    for t in range(n_obs // 4):
        for j in range(4):
            p = rng.normal(0, 0.05)
            o = 0.6 * p + rng.normal(0, 0.01)
            panel.append(_obs(0, j, t, o, p, 0.0))
    rp = residualize(panel, 1)
    theta_hat = estimate(rp, mode="biased_closed").theta_hat
    cov, se = sandwich_variance(theta_hat, None, rp, mode="biased_closed")
    beta1 = 1.0 - theta_hat[0]
    eps = rp.dlog_omega - beta1 * rp.dlog_p
    sxx = np.sum(rp.dlog_p ** 2)
    want = np.sqrt(np.sum(rp.dlog_p ** 2 * eps ** 2)) / sxx
    assert se[0] == pytest.approx(want, rel=1e-10)


def test_sandwich_jacobian_matches_finite_differences():
    rng = np.random.default_rng(38)
    panel = [_obs(i, j, t, rng.normal(0, 0.05), rng.normal(0, 0.05),
                  rng.normal(0, 0.05))
             for i in range(3) for j in range(3) for t in range(6)]
    rp = residualize(panel, 3)
    theta = np.array([0.3, 0.8, 1.4])
    xi = 1.6
    from prodnet.estimation import _jacobian

    g0 = moment_conditions(theta, xi, rp)
    jac = _jacobian(rp, theta, xi, mode="sector_specific")
    h = 1e-7
    for col in range(4):
        th = theta.copy()
        x = xi
        if col < 3:
            th[col] += h
        else:
            x += h
        fd = (moment_conditions(th, x, rp) - g0) / h
        np.testing.assert_allclose(jac[:, col], fd, atol=1e-6)


def test_sandwich_rejects_degenerate_variation():
    panel = [_obs(0, j, t, 0.01 * j, 0.0, 0.02)
             for j in range(3) for t in range(4)]
    rp = residualize(panel, 1)
    with pytest.raises(EstimationError, match="variation|rank"):
        sandwich_variance(np.array([0.5]), 1.5, rp, mode="sector_specific")


def test_household_nu_recovery():
    rng = np.random.default_rng(39)
    panel = household_panel(0.5, 6, 60, 0.002, rng)
    res = estimate_household_nu(panel)
    assert not res.degenerate
    assert res.nu_hat == pytest.approx(0.5, abs=0.05)
    assert abs(res.nu_hat - 0.5) < 3 * res.se


def test_household_nu_degenerate_on_constant_shares():
    panel = [_obs(0, j, t, 0.0, 0.01 * (j + t), 0.0)
             for j in range(3) for t in range(4)]
    res = estimate_household_nu(panel)
    assert res.degenerate
    assert res.nu_hat == 1.0


def test_household_panel_rejects_other_purchasers():
    panel = [_obs(1, 0, 0, 0.1, 0.1, 0.0)]
    with pytest.raises(EstimationError, match="purchaser index 0"):
        estimate_household_nu(panel)


def test_export_table_layout(tmp_path):
    m = toy_model(seed=16, n=2, open_economy=True, theta=[0.3, 0.9], xi=1.5)
    state = solve_checked(m)
    rng = np.random.default_rng(40)
    panel = reduced_form_panel(m, state, 20, 0.0, rng)
    rp = residualize(panel, 2)
    results = {"sector_specific": estimate(rp, mode="sector_specific"),
               "biased_closed": estimate(rp, mode="biased_closed"),
               "uniform": estimate(rp, mode="uniform")}
    out = tmp_path / "estimates.csv"
    export_table(results, ["111", "325"], out, header_comment="run abc")
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "# run abc"
    assert lines[1] == "code,estimate,se,biased_estimate,biased_se"
    assert lines[2].startswith("111,") and lines[3].startswith("325,")
    assert lines[4].startswith("uniform,")
    assert lines[5].startswith("armington,")
