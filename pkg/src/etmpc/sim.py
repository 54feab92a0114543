"""Closed-loop simulation of the event-triggered receding-horizon controller.

The plant, the stored predictions, and the optimizer transcription all
advance with the same RK4 step on the same grid, with the input and the
disturbance held over each step.  Under zero disturbance the plant
therefore reproduces the prediction bitwise and the measured error is
exactly zero until the deadline.

Two triggering mechanisms are supported on identical disturbance
realizations: the integral rule (accumulated weighted error reaching
delta) and a pointwise rule (instantaneous weighted error reaching a
threshold sigma calibrated to guarantee the same minimum inter-event
time).  Both are cut off by the horizon deadline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .certify import DesignParams, error_sup_bound
from .model import DISTURBANCE_KINDS, DisturbanceGenerator, rk4_step
from .ocp import OcpSpec, dual_mode_candidate, solve
from .synthesis import pnorm
from .trigger import (
    PointwiseTrigger,
    TriggerState,
    calibrate_sigma,
    effective_beta,
    step_integral,
    step_pointwise,
)

__all__ = [
    "SimOptions",
    "EventRecord",
    "SimResult",
    "initial_solution",
    "run_simulation",
    "run_monte_carlo",
    "trial_seed",
]

TRIGGER_KINDS = ("integral", "pointwise")


@dataclass(frozen=True)
class SimOptions:
    """Everything a single closed-loop run needs beyond the design itself."""

    x0: np.ndarray
    duration: float
    step: float
    n_intervals: int
    seed: int = 0
    disturbance_kind: str = "piecewise-random-hold"
    disturbance_magnitude: Optional[float] = None
    hold_interval: Optional[float] = None
    trigger_kind: str = "integral"
    sigma: Optional[float] = None
    exploratory: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.duration <= 0.0 or self.step <= 0.0 or self.n_intervals < 1:
            raise ValueError("need duration > 0, step > 0, n_intervals >= 1")
        if self.trigger_kind not in TRIGGER_KINDS:
            raise ValueError(f"trigger_kind must be one of {TRIGGER_KINDS}")
        if self.disturbance_kind not in DISTURBANCE_KINDS:
            raise ValueError(f"disturbance_kind must be one of {DISTURBANCE_KINDS}")


@dataclass(frozen=True)
class EventRecord:
    index: int
    step: int
    time: float
    reason: str  # initial | integral | threshold | deadline
    interval: Optional[float]
    accum_before: Optional[float]
    window_sup_error: Optional[float]
    overlap_sup_error: Optional[float]
    warm_cost: Optional[float]
    cost: float
    status: str
    kkt_residual: float
    outer_iterations: int
    inner_iterations: int

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "step": self.step,
            "time": self.time,
            "reason": self.reason,
            "interval": self.interval,
            "accum_before": self.accum_before,
            "window_sup_error": self.window_sup_error,
            "overlap_sup_error": self.overlap_sup_error,
            "warm_cost": self.warm_cost,
            "cost": self.cost,
            "status": self.status,
            "kkt_residual": self.kkt_residual,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
        }


@dataclass(frozen=True)
class SimResult:
    options: SimOptions
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    err_p: np.ndarray
    accum: np.ndarray
    event_flags: np.ndarray
    events: list
    violations: list
    metrics: dict
    status: str = "ok"
    reason: str = ""


def _splitmix64(v: int) -> int:
    mask = (1 << 64) - 1
    z = (v + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


def trial_seed(base: int, index: int) -> int:
    """Decorrelated per-trial seed; stable across platforms and runs."""
    mask = (1 << 64) - 1
    return _splitmix64((base & mask) + 0x9E3779B97F4A7C15 * (index + 1) & mask)


def _failed(opts, steps_done, times, states, inputs, dists, err, acc, flags,
            events, violations, reason):
    k = steps_done
    return SimResult(
        options=opts,
        times=times[: k + 1],
        states=states[: k + 1],
        inputs=inputs[:k],
        disturbances=dists[:k],
        err_p=err[: k + 1],
        accum=acc[: k + 1],
        event_flags=flags[: k + 1],
        events=events,
        violations=violations,
        metrics={},
        status="failed",
        reason=reason,
    )


def _grid(params: DesignParams, opts: SimOptions):
    h = opts.step
    steps_total = int(round(opts.duration / h))
    if abs(steps_total * h - opts.duration) > 1e-9:
        raise ValueError("duration must be an integer number of steps")
    substeps = int(round(params.T / (opts.n_intervals * h)))
    if substeps < 1 or abs(opts.n_intervals * substeps * h - params.T) > 1e-9:
        raise ValueError(
            "horizon T must equal n_intervals * substeps * step on the grid"
        )
    return steps_total, substeps


def initial_solution(params: DesignParams, opts: SimOptions):
    """Solve the t = 0 problem once; it does not depend on the seed.

    Monte-Carlo sweeps and trigger comparisons replay many runs from the
    same initial state, so they compute this solution once and hand it
    to :func:`run_simulation`.
    """
    _, substeps = _grid(params, opts)
    spec = OcpSpec(
        model=params.model, x0=opts.x0, t0=0.0, N=opts.n_intervals,
        substeps=substeps, step=opts.step, Q=params.Q, R=params.R, P=params.P,
        alpha=params.alpha, epsilon=params.epsilon, M=params.M,
    )
    return solve(spec, terminal_gain=params.K)


def run_simulation(
    params: DesignParams,
    opts: SimOptions,
    initial: Optional[object] = None,
) -> SimResult:
    model = params.model
    if opts.x0.shape != (model.n,):
        raise ValueError("x0 must be (n,)")
    h = opts.step
    steps_total, substeps = _grid(params, opts)
    window_steps = opts.n_intervals * substeps

    magnitude = params.rho if opts.disturbance_magnitude is None else float(
        opts.disturbance_magnitude
    )
    hold = h if opts.hold_interval is None else float(opts.hold_interval)
    gen = DisturbanceGenerator(
        opts.disturbance_kind, model.n, magnitude, hold_interval=hold,
        seed=opts.seed,
    )

    beta_eff = effective_beta(params.delta, params.rho, params.lips, params.T,
                              params.P)
    guaranteed_min = beta_eff * params.T
    sigma = opts.sigma
    calibrated = sigma is None
    if sigma is None:
        sigma = calibrate_sigma(params.delta, params.rho, params.lips, params.T,
                                params.P)
    if sigma <= 0.0:
        sigma = np.inf  # rho = 0: nothing to measure, deadline only
    sup_bound = None
    if params.lips * beta_eff * params.T > 1.0:
        sup_bound = error_sup_bound(params.delta, params.lips, beta_eff,
                                    params.T)
    cap = params.M * params.alpha * params.epsilon

    n, m = model.n, model.m
    times = h * np.arange(steps_total + 1)
    states = np.empty((steps_total + 1, n))
    inputs = np.empty((steps_total, m))
    dists = np.empty((steps_total, n))
    err = np.zeros(steps_total + 1)
    acc = np.zeros(steps_total + 1)
    flags = np.zeros(steps_total + 1, dtype=int)
    events: list = []
    violations: list = []

    def make_spec(t0, x):
        return OcpSpec(
            model=model, x0=x, t0=t0, N=opts.n_intervals, substeps=substeps,
            step=h, Q=params.Q, R=params.R, P=params.P, alpha=params.alpha,
            epsilon=params.epsilon, M=params.M,
        )

    x = opts.x0.copy()
    states[0] = x
    flags[0] = 1
    diverge_cap = 1e6 * (1.0 + float(np.linalg.norm(x)))

    if initial is not None and abs(initial.t0) <= 1e-12 and np.array_equal(
        np.asarray(initial.states[0]), x
    ):
        sol = initial
    else:
        sol = solve(make_spec(0.0, x), terminal_gain=params.K)
    events.append(EventRecord(
        index=0, step=0, time=0.0, reason="initial", interval=None,
        accum_before=None, window_sup_error=None, overlap_sup_error=None,
        warm_cost=None, cost=sol.cost, status=sol.status,
        kkt_residual=sol.kkt_residual, outer_iterations=sol.iterations,
        inner_iterations=sol.inner_iterations,
    ))
    if sol.status == "infeasible":
        return _failed(opts, 0, times, states, inputs, dists, err, acc, flags,
                       events, violations,
                       f"initial problem infeasible: {sol.message}")
    if sol.status != "optimal":
        violations.append({
            "type": "solver", "time": 0.0, "value": sol.max_violation,
            "bound": 0.0, "note": f"initial solve ended {sol.status}",
        })

    integral = opts.trigger_kind == "integral"
    trig_i = TriggerState(delta=params.delta, horizon=params.T)
    trig_p = PointwiseTrigger(sigma=sigma, horizon=params.T)
    window_sup = 0.0
    last_event_k = 0
    k = 0
    while k < steps_total:
        j = k - last_event_k
        u = sol.inputs[j // substeps]
        w = gen.value(k * h)
        inputs[k] = u
        dists[k] = w
        if integral:
            trig_i, fired = step_integral(trig_i, x, sol.fine_states[j],
                                          params.P, h)
        x = rk4_step(model.f, x, u, w, h)
        k += 1
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > diverge_cap:
            return _failed(opts, k - 1, times, states, inputs, dists, err, acc,
                           flags, events, violations,
                           f"integration diverged at t = {k * h:.6g}")
        states[k] = x
        e_next = float(pnorm(x - sol.fine_states[j + 1], params.P))
        window_sup = max(window_sup, e_next)
        if not integral:
            trig_p, fired = step_pointwise(trig_p, x, sol.fine_states[j + 1],
                                           params.P, h)
        if j + 1 >= window_steps:
            fired = True
        nrm = float(pnorm(x, params.P))
        if nrm > cap + 1e-9:
            violations.append({
                "type": "state-level", "time": k * h, "value": nrm,
                "bound": cap, "note": "||x||_P above M*alpha*eps",
            })
        if fired and k < steps_total:
            if integral:
                reason = "integral" if trig_i.accumulator >= params.delta \
                    else "deadline"
                accum_before = trig_i.accumulator
            else:
                reason = "threshold" if e_next >= sigma else "deadline"
                accum_before = 0.0
            interval = (k - last_event_k) * h
            if (integral or calibrated) and interval < guaranteed_min - 1e-9:
                violations.append({
                    "type": "min-interval", "time": k * h, "value": interval,
                    "bound": guaranteed_min,
                    "note": "inter-event time below the certified minimum",
                })
            if sup_bound is not None and window_sup > sup_bound + 1e-9:
                violations.append({
                    "type": "error-sup", "time": k * h, "value": window_sup,
                    "bound": sup_bound,
                    "note": "measured error above the certified sup bound",
                })
            spec = make_spec(k * h, x)
            candidate, overlap_sup = dual_mode_candidate(spec, sol, params.K)
            new_sol = solve(spec, warm_start=candidate,
                            terminal_gain=params.K)
            if new_sol.status == "infeasible":
                events.append(EventRecord(
                    index=len(events), step=k, time=k * h, reason=reason,
                    interval=interval, accum_before=accum_before,
                    window_sup_error=window_sup,
                    overlap_sup_error=overlap_sup, warm_cost=candidate.cost,
                    cost=new_sol.cost, status=new_sol.status,
                    kkt_residual=new_sol.kkt_residual,
                    outer_iterations=new_sol.iterations,
                    inner_iterations=new_sol.inner_iterations,
                ))
                return _failed(opts, k, times, states, inputs, dists, err, acc,
                               flags, events, violations,
                               f"problem infeasible at t = {k * h:.6g}: "
                               f"{new_sol.message}")
            if new_sol.status != "optimal":
                violations.append({
                    "type": "solver", "time": k * h,
                    "value": new_sol.max_violation, "bound": 0.0,
                    "note": f"solve at t = {k * h:.6g} ended "
                            f"{new_sol.status}",
                })
            events.append(EventRecord(
                index=len(events), step=k, time=k * h, reason=reason,
                interval=interval, accum_before=accum_before,
                window_sup_error=window_sup, overlap_sup_error=overlap_sup,
                warm_cost=candidate.cost, cost=new_sol.cost,
                status=new_sol.status, kkt_residual=new_sol.kkt_residual,
                outer_iterations=new_sol.iterations,
                inner_iterations=new_sol.inner_iterations,
            ))
            sol = new_sol
            last_event_k = k
            trig_i = TriggerState(delta=params.delta, horizon=params.T)
            trig_p = PointwiseTrigger(sigma=sigma, horizon=params.T)
            window_sup = 0.0
            err[k] = 0.0
            acc[k] = 0.0
            flags[k] = 1
        else:
            err[k] = e_next
            acc[k] = trig_i.accumulator if integral else 0.0
            flags[k] = 0

    norms = pnorm(states, params.P)
    event_times = [ev.time for ev in events]
    diffs = np.diff(event_times) if len(event_times) > 1 else np.array([])
    tail = norms[times >= 0.8 * opts.duration - 1e-9]
    metrics = {
        "duration": float(opts.duration),
        "event_count": len(events),
        "mean_interval": float(opts.duration) / len(events),
        "min_interval": float(np.min(diffs)) if diffs.size else None,
        "max_interval": float(np.max(diffs)) if diffs.size else None,
        "guaranteed_min_interval": float(guaranteed_min),
        "final_norm_p": float(norms[-1]),
        "sup_norm_p": float(np.max(norms)),
        "tail_sup_norm_p": float(np.max(tail)) if tail.size else None,
        "sup_error_p": float(np.max(err)),
        "violation_count": len(violations),
        "sigma": float(sigma) if np.isfinite(sigma) else None,
        "beta_effective": float(beta_eff),
    }
    return SimResult(
        options=opts, times=times, states=states, inputs=inputs,
        disturbances=dists, err_p=err, accum=acc, event_flags=flags,
        events=events, violations=violations, metrics=metrics,
    )


def _kind_summary(records: list) -> dict:
    counts = np.array([r["event_count"] for r in records], dtype=float)
    means = np.array([r["mean_interval"] for r in records], dtype=float)
    mins = np.array(
        [r["min_interval"] for r in records if r["min_interval"] is not None],
        dtype=float,
    )
    out = {
        "trials": len(records),
        "event_count_mean": float(np.mean(counts)),
        "event_count_std": float(np.std(counts)),
        "event_count_min": float(np.min(counts)),
        "event_count_max": float(np.max(counts)),
        "mean_interval_mean": float(np.mean(means)),
        "mean_interval_std": float(np.std(means)),
        "min_interval_overall": float(np.min(mins)) if mins.size else None,
        "violation_total": int(sum(r["violations"] for r in records)),
    }
    return out


def run_monte_carlo(
    params: DesignParams,
    opts: SimOptions,
    trials: int,
    kinds=TRIGGER_KINDS,
) -> dict:
    """Matched-pair sweep: each trial replays one disturbance seed per kind."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    trial_rows = []
    per_kind = {kind: [] for kind in kinds}
    failures = []
    init = initial_solution(params, opts)
    for i in range(trials):
        seed_i = trial_seed(opts.seed, i)
        row = {"trial": i, "seed": seed_i}
        for kind in kinds:
            res = run_simulation(
                params, replace(opts, seed=seed_i, trigger_kind=kind),
                initial=init,
            )
            if res.status != "ok":
                failures.append({"trial": i, "kind": kind,
                                 "reason": res.reason})
                row[kind] = {"status": res.status, "reason": res.reason}
                continue
            rec = {
                "status": "ok",
                "event_count": res.metrics["event_count"],
                "mean_interval": res.metrics["mean_interval"],
                "min_interval": res.metrics["min_interval"],
                "max_interval": res.metrics["max_interval"],
                "sup_norm_p": res.metrics["sup_norm_p"],
                "final_norm_p": res.metrics["final_norm_p"],
                "violations": res.metrics["violation_count"],
            }
            row[kind] = rec
            per_kind[kind].append(rec)
        trial_rows.append(row)
    summary = {kind: _kind_summary(recs) for kind, recs in per_kind.items()
               if recs}
    if all(kind in summary for kind in ("integral", "pointwise")) and not \
            failures:
        paired = [
            row["integral"]["event_count"] - row["pointwise"]["event_count"]
            for row in trial_rows
        ]
        summary["paired_event_count_diff_mean"] = float(np.mean(paired))
    return {
        "trials": trial_rows,
        "summary": summary,
        "failures": failures,
        "seed": opts.seed,
        "trial_count": trials,
    }
