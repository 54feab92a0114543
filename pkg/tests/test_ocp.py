import numpy as np
import pytest

from etmpc.model import cart_damper_spring, rk4_step
from etmpc.ocp import (
    OcpSpec,
    _Transcription,
    audit_solution,
    cost,
    dual_mode_candidate,
    robustness_bound,
    solve,
)
from etmpc.synthesis import pnorm

from conftest import BENCH_K, BENCH_P, BENCH_X0


def bench_spec(x0=None, t0=0.0, N=4, substeps=50, step=0.01):
    return OcpSpec(
        model=cart_damper_spring(),
        x0=BENCH_X0.copy() if x0 is None else np.asarray(x0, float),
        t0=t0,
        N=N,
        substeps=substeps,
        step=step,
        Q=0.1 * np.eye(2),
        R=np.array([[0.1]]),
        P=BENCH_P.copy(),
        alpha=0.8,
        epsilon=0.03,
        M=10.0,
    )


class TestRobustnessBound:
    def test_endpoints_and_linearity(self):
        spec = bench_spec()
        T = spec.horizon
        assert np.isclose(robustness_bound(spec, spec.t0),
                          spec.M * spec.alpha * spec.epsilon)
        assert np.isclose(robustness_bound(spec, spec.t0 + T),
                          spec.alpha * spec.epsilon)
        mid = robustness_bound(spec, spec.t0 + 0.5 * T)
        assert np.isclose(mid, 0.5 * (spec.M + 1.0) * spec.alpha * spec.epsilon)

    def test_outside_window_rejected(self):
        spec = bench_spec(t0=3.0)
        with pytest.raises(ValueError):
            robustness_bound(spec, 2.9)
        with pytest.raises(ValueError):
            robustness_bound(spec, 3.0 + spec.horizon + 1e-6)


def test_cost_hand_example():
    spec = bench_spec(N=1, substeps=1, step=0.25)
    x0 = spec.x0
    x1 = np.array([0.2, -0.1])
    u0 = np.array([0.3])
    states = np.stack([x0, x1])
    inputs = u0[None, :]
    h = 0.25
    want = (0.5 * h * (x0 @ spec.Q @ x0 + x1 @ spec.Q @ x1)
            + h * (u0 @ spec.R @ u0)
            + x1 @ spec.P @ x1)
    assert np.isclose(cost(spec, states, inputs), want, rtol=1e-14)


def test_augmented_lagrangian_gradient_matches_finite_differences():
    spec = bench_spec(N=2, substeps=10, step=0.02)
    tr = _Transcription(spec)
    rng = np.random.default_rng(11)
    z = rng.normal(scale=0.3, size=tr.nvar)
    lam = rng.normal(size=(spec.N, spec.model.n))
    nu = np.abs(rng.normal(size=spec.N))
    mu = 7.0
    _, grad = tr.al_value_grad(z, lam, nu, mu)
    fd = np.zeros_like(z)
    h = 1e-6
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        vp, _ = tr.al_value_grad(z + e, lam, nu, mu)
        vm, _ = tr.al_value_grad(z - e, lam, nu, mu)
        fd[i] = (vp - vm) / (2 * h)
    scale = np.maximum(np.abs(fd), 1.0)
    assert np.max(np.abs(grad - fd) / scale) < 1e-6


class TestSolve:
    def test_benchmark_anchor_is_optimal(self):
        spec = bench_spec()
        sol = solve(spec, terminal_gain=BENCH_K)
        assert sol.status == "optimal"
        assert sol.kkt_residual <= spec.kkt_tol
        assert sol.max_violation <= spec.feas_tol
        # closing pass re-rolls the fine grid from the nodes, so node
        # states are exactly the subsampled fine trajectory
        assert np.array_equal(sol.states, sol.fine_states[::spec.substeps])
        # terminal node inside the alpha-contracted terminal set
        assert pnorm(sol.states[-1], spec.P) <= spec.alpha * spec.epsilon \
            + spec.feas_tol
        assert sol.cost > 0.0

    def test_node_bounds_hold_between_nodes(self):
        spec = bench_spec()
        sol = solve(spec, terminal_gain=BENCH_K)
        audit = audit_solution(spec, sol)
        assert audit["max_bound_violation"] <= 1e-4
        assert audit["max_defect"] <= 1e-8

    def test_infeasible_anchor_detected_immediately(self):
        spec = bench_spec(x0=[3.0, 3.0])
        sol = solve(spec)
        assert sol.status == "infeasible"
        assert "violates" in sol.message

    def test_warm_restart_never_degrades_cost(self):
        spec = bench_spec()
        cold = solve(spec, terminal_gain=BENCH_K)
        warm = solve(spec, warm_start=cold, terminal_gain=BENCH_K)
        assert warm.status == "optimal"
        assert warm.cost <= cold.cost + 1e-8


class TestDualModeCandidate:
    def _solved(self):
        spec = bench_spec()
        return spec, solve(spec, terminal_gain=BENCH_K)

    def test_mid_window_shift_is_defect_free(self):
        spec, sol = self._solved()
        k_shift = 100  # half the window
        x_new = sol.fine_states[k_shift]
        spec2 = bench_spec(x0=x_new, t0=spec.t0 + k_shift * spec.step)
        cand, overlap = dual_mode_candidate(spec2, sol, BENCH_K)
        assert cand.status == "candidate"
        # anchored exactly on the nominal trajectory, no disturbance:
        # the overlap error is identically zero
        assert overlap == 0.0
        tr = _Transcription(spec2)
        states, fine = tr.rollout(cand.inputs)
        assert np.array_equal(states, cand.states)
        assert np.array_equal(fine, cand.fine_states)

    def test_full_window_shift_uses_feedback_extension(self):
        spec, sol = self._solved()
        W = spec.N * spec.substeps
        x_new = sol.fine_states[W]
        spec2 = bench_spec(x0=x_new, t0=spec.t0 + spec.horizon)
        cand, _ = dual_mode_candidate(spec2, sol, BENCH_K)
        # whole candidate is the feedback tail; inputs must respect box
        assert np.all(cand.inputs >= spec.model.input_lower - 1e-12)
        assert np.all(cand.inputs <= spec.model.input_upper + 1e-12)
        warm = solve(spec2, warm_start=sol, terminal_gain=BENCH_K)
        assert warm.status == "optimal"
        assert warm.cost <= cand.cost + 1e-8

    def test_off_grid_anchor_rejected(self):
        spec, sol = self._solved()
        spec2 = bench_spec(x0=sol.fine_states[50], t0=spec.t0 + 0.5037)
        with pytest.raises(ValueError):
            dual_mode_candidate(spec2, sol, BENCH_K)


def test_prediction_matches_plant_integration():
    # the returned fine grid must be reproducible step by step with the
    # same integrator the closed loop uses
    spec = bench_spec()
    sol = solve(spec, terminal_gain=BENCH_K)
    x = spec.x0.copy()
    for k in range(spec.N * spec.substeps):
        u = sol.inputs[k // spec.substeps]
        x = rk4_step(spec.model.f, x, u, 0.0, spec.step)
        assert np.array_equal(x, sol.fine_states[k + 1])
