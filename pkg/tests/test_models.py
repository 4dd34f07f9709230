import math

import numpy as np
import pytest
from scipy.stats import norm

import tailrisk as tk
from tailrisk.models import ModelError, ar_coef_index

from conftest import random_region_theta

SPEC_M1 = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025)


class TestInitState:
    def test_point_mass_tail(self):
        # 26 copies keep the type-7 interpolation inside the -2 block
        r = np.array([-2.0] * 26 + [1.0] * 974)
        q0, om0 = tk.init_state(r, 0.025)
        assert q0 == -2.0
        assert om0 == 0.0

    def test_point_mass_on_interpolation_boundary_rejected(self):
        # with exactly 25 copies the type-7 quantile interpolates to +0.925,
        # which the degenerate-sample guard must reject
        r = np.array([-2.0] * 25 + [1.0] * 975)
        with pytest.raises(ModelError, match="demean"):
            tk.init_state(r, 0.025)

    def test_symmetric_sample(self):
        # type-7 interpolated 2.5% quantile of {-3,-1,1,3}x250 sits inside the -3 block
        r = np.array([-3.0, -1.0, 1.0, 3.0] * 250)
        q0, om0 = tk.init_state(r, 0.025)
        assert q0 == -3.0
        assert om0 == 0.0

    def test_standard_normal_monte_carlo(self):
        # oracle: closed-form Gaussian tail constants
        rng = np.random.default_rng(0)
        r = rng.standard_normal(100_000)
        q0, om0 = tk.init_state(r, 0.025)
        a = norm.ppf(0.025)
        b = -norm.pdf(a) / 0.025
        assert q0 == pytest.approx(a, abs=0.05)
        assert om0 == pytest.approx(a - b, abs=0.05)  # 0.3778

    def test_quantile_matches_numpy_type7(self):
        rng = np.random.default_rng(5)
        r = rng.standard_normal(501)
        q0, _ = tk.init_state(r, 0.025)
        assert q0 == float(np.quantile(r, 0.025))

    def test_degenerate_sample_rejected(self):
        with pytest.raises(ModelError, match="demean"):
            tk.init_state(np.full(100, 1.0), 0.025)

    def test_too_short(self):
        with pytest.raises(ModelError):
            tk.init_state(np.zeros(49), 0.025)


class TestRegionA:
    def test_paper_beta_accepted(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"beta": 0.9717, "nu1": 0.1})
        assert tk.check_region_a(SPEC_M1, theta)

    def test_negative_nu_rejected(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"nu1": -0.01})
        assert not tk.check_region_a(SPEC_M1, theta)

    def test_xi_beyond_box_rejected(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"xi1": 3.5})
        assert not tk.check_region_a(SPEC_M1, theta)

    def test_beta_boundary_open(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"beta": 1.0})
        assert not tk.check_region_a(SPEC_M1, theta)

    def test_zero_gap_coefficients_allowed(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {})
        assert tk.check_region_a(SPEC_M1, theta)

    @pytest.mark.parametrize("family,K", [
        (tk.ModelFamily.RES_CAVIAR_M, 2),
        (tk.ModelFamily.LOG_RES_CAVIAR, 1),
        (tk.ModelFamily.ES_X_CAVIAR_X, 1),
        (tk.ModelFamily.ES_CAVIAR_ADD, 0),
    ])
    def test_ar_coefficient_unit_bound(self, family, K):
        spec = tk.ModelSpec(family, K, 0.025)
        names = tk.param_names(family, K)
        theta = {names[ar_coef_index(family)]: 1.5}
        assert not tk.check_region_a(spec, tk.ParamVector.from_dict(family, K, theta))
        # 1.5 would be fine for any non-AR slot
        theta_ok = {"tau1" if family == tk.ModelFamily.RES_CAVIAR_M else "b1": 1.5}
        assert tk.check_region_a(spec, tk.ParamVector.from_dict(family, K, theta_ok))


class TestParamVector:
    def test_sizes(self):
        for k, n in ((1, 12), (2, 18), (3, 24)):
            assert len(tk.param_names(tk.ModelFamily.RES_CAVIAR_M, k)) == n
        assert len(tk.param_names(tk.ModelFamily.LOG_RES_CAVIAR, 1)) == 10
        assert len(tk.param_names(tk.ModelFamily.ES_X_CAVIAR_X, 1)) == 6
        assert len(tk.param_names(tk.ModelFamily.ES_CAVIAR_ADD, 0)) == 5

    def test_wrong_shape_rejected(self):
        with pytest.raises(ModelError):
            tk.ParamVector(tk.ModelFamily.RES_CAVIAR_M, 1, np.zeros(11))

    def test_unknown_name_rejected(self):
        with pytest.raises(ModelError):
            tk.ParamVector.from_dict(tk.ModelFamily.RES_CAVIAR_M, 1, {"zeta": 1.0})


class TestFilterPath:
    def test_fixed_point(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"beta": 1.0 - 1e-15})
        r = np.full(50, 0.3)
        x = np.full((50, 1), 2.0)
        path = tk.filter_path(SPEC_M1, theta, r, x, init=tk.FilterInit(-2.0, 0.0))
        np.testing.assert_allclose(path.Q, -2.0, rtol=1e-12)
        np.testing.assert_allclose(path.omega, 0.0)
        np.testing.assert_allclose(path.ES, path.Q)
        assert path.finite

    def test_hand_iteration(self):
        # log(-Q1) = 0.05 + 0.85*log(-Q0) with log(-Q0)=0
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"omega": 0.05, "beta": 0.85})
        r = np.zeros(3)
        x = np.ones((3, 1))
        path = tk.filter_path(SPEC_M1, theta, r, x, init=tk.FilterInit(-1.0, 0.0))
        assert path.Q[0] == pytest.approx(-math.exp(0.05), abs=1e-15)
        assert path.Q[1] == pytest.approx(-math.exp(0.05 + 0.85 * 0.05), abs=1e-15)

    def test_straight_line_oracle_with_leverage_and_residuals(self):
        # independent scalar re-implementation of the K=1 recursion
        spec = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025, centered_leverage=True)
        vals = dict(omega=0.02, beta=0.9, tau1=0.05, tau2=0.03, gamma1=0.1,
                    xi1=-0.4, phi1=0.9, delta11=-0.03, delta12=0.05,
                    nu0=0.02, nu1=0.8, psi1=0.07)
        theta = tk.ParamVector.from_dict(spec.family, 1, vals)
        rng = np.random.default_rng(11)
        r = rng.standard_normal(40)
        x = np.exp(0.2 * rng.standard_normal(40)).reshape(-1, 1)
        q0, om0 = -1.5, 0.3
        path = tk.filter_path(spec, theta, r, x, init=tk.FilterInit(q0, om0))

        lq, eps, u, om = math.log(1.5), 0.0, 0.0, om0
        e2_hist = []
        for t in range(40):
            e2 = sum(e2_hist) / len(e2_hist) if e2_hist else 0.0
            lq = (vals["omega"] + vals["beta"] * lq + vals["tau1"] * eps
                  + vals["tau2"] * (eps * eps - e2) + vals["gamma1"] * u)
            q = -math.exp(lq)
            om = vals["nu0"] + vals["nu1"] * om + vals["psi1"] * abs(u)
            eps = r[t] / q
            u = (math.log(x[t, 0]) - vals["xi1"] - vals["phi1"] * lq
                 - vals["delta11"] * eps - vals["delta12"] * (eps * eps - e2))
            e2_hist.append(eps * eps)
            assert path.Q[t] == pytest.approx(q, rel=1e-13)
            assert path.omega[t] == pytest.approx(om, rel=1e-13)
            assert path.U[t, 0] == pytest.approx(u, rel=1e-12)
            assert path.ES[t] == pytest.approx(q - om, rel=1e-13)

    def test_regarch_identity_machine_precision(self, paper_sim, vol_series, mapped_25):
        dgp, sim = paper_sim
        c = mapped_25.constants
        spec = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025, centered_leverage=True)
        init = tk.FilterInit(q0=c.a * sim.state0.sigma, omega0=c.g * sim.state0.sigma,
                             eps0=sim.state0.z / c.a, u0=sim.state0.u)
        path = tk.filter_path(spec, mapped_25.theta, vol_series.returns,
                              vol_series.rm_panel, fixed_e2=1.0 / c.a ** 2, init=init)
        q_true = c.a * sim.sigma
        rel = np.max(np.abs(path.Q - q_true) / np.abs(q_true))
        assert path.finite
        assert rel < 1e-10

    def test_regarch_identity_residuals_match_dgp_noise(self, paper_sim, vol_series, mapped_25):
        # the filtered residuals must reproduce the generator's measurement noise:
        # u = log(x) - xi_dgp - phi_dgp*log(sigma) - d1*z - d2*(z^2-1)
        dgp, sim = paper_sim
        c = mapped_25.constants
        spec = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025, centered_leverage=True)
        init = tk.FilterInit(q0=c.a * sim.state0.sigma, omega0=c.g * sim.state0.sigma,
                             eps0=sim.state0.z / c.a, u0=sim.state0.u)
        path = tk.filter_path(spec, mapped_25.theta, vol_series.returns,
                              vol_series.rm_panel, fixed_e2=1.0 / c.a ** 2, init=init)
        z = vol_series.returns / sim.sigma
        u_dgp = (np.log(vol_series.rm_panel[:, 0]) - dgp.xi[0]
                 - dgp.phi[0] * np.log(sim.sigma) - dgp.delta1[0] * z
                 - dgp.delta2[0] * (z ** 2 - 1.0))
        np.testing.assert_allclose(path.U[:, 0], u_dgp, rtol=1e-10, atol=1e-12)

    def test_nesting_log_family(self):
        # with zero leverage, the K=1 multi-measure model collapses onto the
        # log single-measure model under b0=omega-gamma*xi, b1=gamma, b2=beta-gamma*phi
        omega, beta, gamma, xi, phi = 0.03, 0.92, 0.15, -0.3, 0.95
        nu0, nu1 = 0.02, 0.7
        m_theta = tk.ParamVector.from_dict(
            tk.ModelFamily.RES_CAVIAR_M, 1,
            {"omega": omega, "beta": beta, "gamma1": gamma, "xi1": xi, "phi1": phi,
             "nu0": nu0, "nu1": nu1})
        log_theta = tk.ParamVector.from_dict(
            tk.ModelFamily.LOG_RES_CAVIAR, 1,
            {"b0": omega - gamma * xi, "b1": gamma, "b2": beta - gamma * phi,
             "g0": nu0, "g2": nu1, "xi": xi, "phi": phi})
        rng = np.random.default_rng(2)
        r = rng.standard_normal(60)
        x = np.exp(0.3 * rng.standard_normal(60)).reshape(-1, 1)
        init = tk.FilterInit(-1.8, 0.25)
        spec_m = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025)
        spec_log = tk.ModelSpec(tk.ModelFamily.LOG_RES_CAVIAR, 1, 0.025)
        p_m = tk.filter_path(spec_m, m_theta, r, x, init=init)
        p_log = tk.filter_path(spec_log, log_theta, r, x, init=init)
        np.testing.assert_allclose(p_log.Q, p_m.Q, rtol=1e-12)
        np.testing.assert_allclose(p_log.omega, p_m.omega, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(p_log.U[:, 0], p_m.U[:, 0], rtol=1e-11, atol=1e-13)

    def test_non_crossing_sweep_all_families(self):
        rng = np.random.default_rng(99)
        cases = [(tk.ModelFamily.RES_CAVIAR_M, k) for k in (1, 2, 3)]
        cases += [(tk.ModelFamily.LOG_RES_CAVIAR, 1), (tk.ModelFamily.RES_CAVIAR, 1),
                  (tk.ModelFamily.ES_X_CAVIAR_X, 1), (tk.ModelFamily.ES_CAVIAR_ADD, 0)]
        checked = 0
        for family, k in cases:
            spec = tk.ModelSpec(family, k, 0.025)
            for _ in range(100):
                vals = random_region_theta(rng, family, k, moderate=False)
                r = 2.0 * rng.standard_normal(150)
                x = np.exp(0.5 * rng.standard_normal((150, max(k, 1))))[:, :k]
                path = tk.filter_path(spec, vals, r, x if k else None)
                if path.finite:
                    assert np.all(path.Q < 0.0)
                    assert np.all(path.ES <= path.Q)
                    assert np.all(path.omega >= 0.0)
                    checked += 1
        assert checked > 100  # plenty of finite paths actually exercised

    def test_determinism(self, vol_series, mapped_25):
        spec = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025, centered_leverage=True)
        p1 = tk.filter_path(spec, mapped_25.theta, vol_series.returns, vol_series.rm_panel)
        p2 = tk.filter_path(spec, mapped_25.theta, vol_series.returns, vol_series.rm_panel)
        assert p1.Q.tolist() == p2.Q.tolist()
        assert p1.U.tolist() == p2.U.tolist()

    def test_explosion_guard(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"omega": 2.9, "beta": 0.99})
        r = np.zeros(300)
        x = np.ones((300, 1))
        path = tk.filter_path(SPEC_M1, theta, r, x, init=tk.FilterInit(-1.0, 0.0))
        assert not path.finite
        assert np.isnan(path.Q[-1])

    def test_level_family_positive_q_flagged(self):
        spec = tk.ModelSpec(tk.ModelFamily.ES_CAVIAR_ADD, 0, 0.025)
        theta = tk.ParamVector.from_dict(spec.family, 0, {"b0": 1.0, "b2": 0.5})
        r = np.concatenate([-np.ones(60), np.ones(60)])
        path = tk.filter_path(spec, theta, r, init=tk.FilterInit(-0.5, 0.1))
        assert not path.finite

    def test_shape_mismatch(self):
        theta = tk.ParamVector.from_dict(SPEC_M1.family, 1, {"beta": 0.5})
        with pytest.raises(ModelError):
            tk.filter_path(SPEC_M1, theta, np.zeros(100), np.ones((50, 1)),
                           init=tk.FilterInit(-1.0, 0.0))

    def test_outside_region_rejected(self):
        theta = np.zeros(12)
        theta[1] = 1.5
        with pytest.raises(ModelError, match="region"):
            tk.filter_path(SPEC_M1, theta, np.zeros(100), np.ones((100, 1)),
                           init=tk.FilterInit(-1.0, 0.0))


class TestStationarityDiagnostic:
    def test_hand_values(self):
        spec = SPEC_M1
        t1 = tk.ParamVector.from_dict(spec.family, 1, {"beta": 0.85, "gamma1": 0.2, "phi1": 0.9})
        assert tk.stationarity_diagnostic(spec, t1) == pytest.approx(0.67, abs=1e-12)
        t2 = tk.ParamVector.from_dict(spec.family, 1, {"beta": 0.97, "gamma1": 0.0, "phi1": 0.4})
        assert tk.stationarity_diagnostic(spec, t2) == pytest.approx(0.97, abs=1e-12)
        t3 = tk.ParamVector.from_dict(spec.family, 1, {"beta": 0.99, "gamma1": -0.1, "phi1": 1.0})
        assert tk.stationarity_diagnostic(spec, t3) == pytest.approx(1.09, abs=1e-12)

    def test_wrong_family(self):
        spec = tk.ModelSpec(tk.ModelFamily.ES_CAVIAR_ADD, 0, 0.025)
        with pytest.raises(ModelError):
            tk.stationarity_diagnostic(spec, np.zeros(5))


class TestRiskPathCsv:
    def test_columns(self, tmp_path, vol_series, mapped_25):
        spec = tk.ModelSpec(tk.ModelFamily.RES_CAVIAR_M, 1, 0.025, centered_leverage=True)
        path = tk.filter_path(spec, mapped_25.theta, vol_series.returns[:100],
                              vol_series.rm_panel[:100])
        f = tmp_path / "risk.csv"
        tk.write_risk_path(f, path, dates=vol_series.dates[:100])
        lines = [l for l in f.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "date,Q,omega,ES,eps,u_1"
        assert len(lines) == 101
