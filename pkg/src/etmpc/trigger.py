"""Event-triggering mechanisms and the triggering-level design rule.

Two mechanisms over the same prediction error e(s) = x(s) - xhat*(s):

* integral: fire when the running integral of ||e||_P reaches delta,
  or at the window deadline T, whichever comes first;
* pointwise baseline: fire when ||e||_P itself reaches a level sigma,
  or at the deadline.

The design rule ties delta to the disturbance bound so that the
integral mechanism cannot fire before beta*T:

    delta(beta) = rho * lam_max(sqrt(P)) *
                  (exp(L*beta*T) * (beta*T/L - 1/L^2) + 1/L^2)

which is the closed form of int_0^{beta T} rho*lam_max(sqrt(P))*s*e^(L s) ds.
``effective_beta`` inverts the rule for a configured delta, and
``calibrate_sigma`` places the pointwise level on the same worst-case
error envelope so both mechanisms guarantee the same minimum
inter-event time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .synthesis import pnorm

__all__ = [
    "TriggerState",
    "PointwiseTrigger",
    "design_delta",
    "effective_beta",
    "calibrate_sigma",
    "step_integral",
    "step_pointwise",
]


def _lam_sqrt_p(p: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(0.5 * (np.asarray(p, float) + np.asarray(p, float).T))
    if vals[-1] <= 0.0:
        raise ValueError("P must have a positive largest eigenvalue")
    return float(np.sqrt(vals[-1]))


def design_delta(rho: float, lips: float, beta: float, horizon: float, p) -> float:
    """Triggering level guaranteeing inter-event times of at least beta*T."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if lips <= 0.0 or horizon <= 0.0 or rho < 0.0:
        raise ValueError("need lips > 0, horizon > 0, rho >= 0")
    bt = beta * horizon
    bracket = np.exp(lips * bt) * (bt / lips - 1.0 / lips**2) + 1.0 / lips**2
    return rho * _lam_sqrt_p(p) * float(bracket)


def effective_beta(delta: float, rho: float, lips: float, horizon: float, p) -> float:
    """Invert the design rule: the beta whose designed level equals delta.

    Monotone bisection to 1e-10; clamps to 1.0 when delta exceeds the
    full-horizon level (the trigger then cannot fire before the
    deadline).  With rho = 0 the error is identically zero and any
    positive delta is unreachable, so 1.0 is returned.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if rho == 0.0:
        return 1.0
    if delta >= design_delta(rho, lips, 1.0, horizon, p):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if design_delta(rho, lips, mid, horizon, p) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_sigma(delta: float, rho: float, lips: float, horizon: float, p) -> float:
    """Pointwise level on the worst-case envelope at the effective beta.

    sigma = rho * lam_max(sqrt(P)) * (beta_eff*T) * exp(L*beta_eff*T):
    the pointwise error bound cannot cross sigma before beta_eff*T, so
    the calibrated baseline guarantees the same minimum interval as the
    integral mechanism with the configured delta.
    """
    beta_eff = effective_beta(delta, rho, lips, horizon, p)
    bt = beta_eff * horizon
    return float(rho * _lam_sqrt_p(p) * bt * np.exp(lips * bt))


@dataclass(frozen=True)
class TriggerState:
    """Integral-trigger bookkeeping for one inter-event window."""

    delta: float
    horizon: float
    elapsed: float = 0.0
    accumulator: float = 0.0

    def __post_init__(self):
        if self.delta <= 0.0 or self.horizon <= 0.0:
            raise ValueError("delta and horizon must be positive")
        if self.accumulator < 0.0:
            raise ValueError("accumulator must be non-negative")


@dataclass(frozen=True)
class PointwiseTrigger:
    """Pointwise-trigger bookkeeping for one inter-event window."""

    sigma: float
    horizon: float
    elapsed: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0.0 or self.horizon <= 0.0:
            raise ValueError("sigma and horizon must be positive")


def step_integral(state: TriggerState, x, xhat, p, h: float):
    """Advance the integral trigger across one step of length ``h``.

    The error norm at the step start (left endpoint) is accumulated, so
    after the call ``state.accumulator`` approximates the integral up
    to the step end.  Fires when the accumulator reaches delta or the
    step end reaches the deadline, making the reported event time the
    first grid time at which the condition holds.

    Returns (updated_state, fired).
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    err = float(pnorm(np.asarray(x, float) - np.asarray(xhat, float), p))
    acc = state.accumulator + err * h
    elapsed = state.elapsed + h
    fired = acc >= state.delta or elapsed >= state.horizon - 1e-12
    return replace(state, elapsed=elapsed, accumulator=acc), bool(fired)


def step_pointwise(state: PointwiseTrigger, x, xhat, p, h: float):
    """Advance the pointwise trigger; error evaluated at the step end.

    Returns (updated_state, fired).
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    err = float(pnorm(np.asarray(x, float) - np.asarray(xhat, float), p))
    elapsed = state.elapsed + h
    fired = err >= state.sigma or elapsed >= state.horizon - 1e-12
    return replace(state, elapsed=elapsed), bool(fired)
