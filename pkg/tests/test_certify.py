"""Certificate formulas against independent hand recomputations.

The frozen reference numbers below were derived by hand from the
closed forms before the module was written; they pin the benchmark
design (cart model, L = 1.4, rho = 3.1e-4, T = 2, alpha = 0.8,
beta = 0.6, M = 10, delta = 8.1e-5, epsilon = 0.03).
"""

import json

import numpy as np
import pytest

from etmpc.certify import (
    certify,
    check_feasibility,
    check_stability,
    error_sup_bound,
    find_n_min,
    sup_derivative_check,
    max_disturbance,
    ultimate_bound,
)
from etmpc.model import cart_damper_spring
from etmpc.trigger import design_delta

from conftest import make_bench_params


def sup_factor(lips, beta, horizon):
    lbt = lips * beta * horizon
    return lips**2 * beta * horizon * np.exp(
        lips * (1.0 - beta) * horizon) / (lbt - 1.0)


class TestErrorSupBound:
    def test_hand_formula(self):
        lips, beta, horizon = 1.4, 0.6, 2.0
        delta = 8.1e-5
        want = sup_factor(lips, beta, horizon) * delta
        assert np.isclose(error_sup_bound(delta, lips, beta, horizon),
                          want, rtol=1e-14)

    def test_requires_lbt_above_one(self):
        with pytest.raises(ValueError):
            error_sup_bound(1e-4, 1.4, 0.3, 2.0)  # L*beta*T = 0.84


class TestMaxDisturbance:
    def test_frozen_benchmark_value(self):
        params = make_bench_params()
        assert np.isclose(max_disturbance(params), 5.167218e-4, rtol=1e-5)

    def test_hand_composition(self):
        params = make_bench_params()
        unit = design_delta(1.0, params.lips, params.beta, params.T, params.P)
        want = (1.0 - params.alpha) * params.epsilon / (
            sup_factor(params.lips, params.beta, params.T) * unit)
        assert np.isclose(max_disturbance(params), want, rtol=1e-14)

    def test_tight_at_the_boundary(self):
        params = make_bench_params()
        rho_max = max_disturbance(params)
        at_edge = make_bench_params(
            model=cart_damper_spring(disturbance_bound=rho_max))
        rec = {c.name: c for c in check_feasibility(at_edge)}
        assert abs(rec["error-margin"].margin) < 1e-12


class TestFeasibility:
    def test_benchmark_satisfies_all_three(self):
        recs = {c.name: c for c in check_feasibility(make_bench_params())}
        assert set(recs) == {"horizon-length", "error-margin",
                             "tightening-slope"}
        assert all(c.satisfied for c in recs.values())

    def test_horizon_condition_hand_value(self):
        params = make_bench_params()
        lam_max_p = float(np.max(np.linalg.eigvalsh(params.P)))
        lam_min_qs = float(np.min(np.linalg.eigvalsh(params.qstar)))
        decay_floor = -2.0 * lam_max_p / (lam_min_qs * params.beta) * np.log(
            params.alpha)
        lhs = max(decay_floor, 1.0 / (params.lips * params.beta))
        rec = {c.name: c for c in check_feasibility(params)}["horizon-length"]
        assert np.isclose(rec.lhs, lhs, rtol=1e-12)
        assert np.isclose(rec.lhs, 1.58653, rtol=1e-4)

    def test_short_horizon_fails(self):
        recs = check_feasibility(make_bench_params(T=1.5))
        rec = {c.name: c for c in recs}["horizon-length"]
        assert not rec.satisfied and rec.margin < 0

    def test_small_lbt_marks_conditions_unsatisfiable(self):
        recs = check_feasibility(make_bench_params(beta=0.3))
        by_name = {c.name: c for c in recs}
        for name in ("error-margin", "tightening-slope"):
            assert not by_name[name].satisfied
            assert "L*beta*T > 1" in by_name[name].note

    def test_slope_condition_covers_window_geometry(self):
        # with delta -> 0 the M condition reduces to the pure geometry
        # floor 1 - 1/beta + 1/(alpha beta)
        params = make_bench_params(delta=1e-12)
        rec = {c.name: c for c in check_feasibility(params)}[
            "tightening-slope"]
        geo = 1.0 - 1.0 / params.beta + 1.0 / (params.alpha * params.beta)
        assert np.isclose(rec.lhs, geo, rtol=1e-6)


class TestStability:
    def test_fails_at_n1_passes_at_n2(self):
        params = make_bench_params()
        assert not check_stability(params, 1).satisfied
        rec = check_stability(params, 2)
        assert rec.satisfied
        assert np.isclose(rec.lhs, 1.34175e-4, rtol=1e-4)
        assert np.isclose(rec.rhs, 1.75852e-4, rtol=1e-4)

    def test_find_n_min(self):
        assert find_n_min(make_bench_params()) == 2

    def test_rhs_grows_with_n(self):
        params = make_bench_params()
        for n in (2, 3, 7, 20):
            assert check_stability(params, n).satisfied

    def test_unattainable_returns_none(self):
        assert find_n_min(make_bench_params(delta=5e-3)) is None


class TestUltimateBound:
    def test_frozen_value(self):
        assert np.isclose(ultimate_bound(make_bench_params()),
                          1.24757e-4, rtol=1e-4)

    def test_below_terminal_level(self):
        params = make_bench_params()
        assert 0.0 < ultimate_bound(params) < params.epsilon

    def test_shrinks_with_delta(self):
        big = ultimate_bound(make_bench_params())
        small = ultimate_bound(make_bench_params(delta=4e-5))
        assert small < big


class TestCertify:
    def test_benchmark_certificate(self):
        cert = certify(make_bench_params())
        assert cert.passed
        assert cert.n_min == 2
        assert np.isclose(cert.beta_eff, 0.37091, rtol=1e-4)
        assert np.isclose(cert.rho_max, 5.167218e-4, rtol=1e-5)
        assert np.isclose(cert.eps_bar, 1.24757e-4, rtol=1e-4)

    def test_as_dict_is_json_serializable(self):
        cert = certify(make_bench_params())
        payload = json.loads(json.dumps(cert.as_dict()))
        names = [c["name"] for c in payload["conditions"]]
        assert "horizon-length" in names
        assert any(n.startswith("stability") for n in names)

    def test_failed_certificate_reports_why(self):
        cert = certify(make_bench_params(T=1.5))
        assert not cert.passed
        bad = [c for c in cert.conditions if not c.satisfied]
        assert any(c.name == "horizon-length" for c in bad)


class TestSupDerivativeCheck:
    def test_smooth_signal_satisfies_bound(self):
        t = np.linspace(0.0, np.pi, 2001)
        out = sup_derivative_check(t, np.sin(t))
        assert out["holds"]
        assert np.isclose(out["sup"], 1.0, atol=1e-6)

    def test_vector_signal(self):
        t = np.linspace(0.0, 2.0, 1001)
        g = np.stack([np.exp(-t) * np.cos(3 * t),
                      np.exp(-t) * np.sin(3 * t)], axis=1)
        assert sup_derivative_check(t, g)["holds"]

    def test_input_validation(self):
        with pytest.raises(ValueError):
            sup_derivative_check(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
