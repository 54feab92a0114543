"""Closed-form certificates for the event-triggered receding-horizon loop.

Given the design tuple (Q, R, K, P, T, alpha, beta, M, delta, epsilon)
and the model's Lipschitz constant L and disturbance bound rho, this
module evaluates the three recursive-feasibility conditions, the
quadratic stability condition with its sample-count parameter n, the
largest certifiable disturbance bound rho_max, and the ultimate bound
eps_bar, all with explicit margins.  A certificate is a pure function
of its inputs; nothing here touches the simulator.

The error envelope behind everything: with ||w|| <= rho the deviation
between the real state and the prediction obeys

    ||x(s) - xhat*(s)||_P <= rho * lam_max(sqrt(P)) * s * e^(L s),

whose integral over [0, beta*T] is the designed triggering level, and
whose supremum over a window, after bounding inter-event times from
below by beta*T, is error_sup_bound = L^2 beta T e^(L(1-beta)T)
/ (L beta T - 1) * delta (valid when L*beta*T > 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import SystemModel
from .synthesis import _check_sym_pd, _sym
from .trigger import design_delta, effective_beta

# numpy renamed trapz in 2.0; support both ends of the declared range
_trapezoid = getattr(np, "trapezoid", np.trapz)

__all__ = [
    "DesignParams",
    "ConditionRecord",
    "Certificate",
    "error_sup_bound",
    "max_disturbance",
    "check_feasibility",
    "check_stability",
    "find_n_min",
    "ultimate_bound",
    "sup_derivative_check",
    "certify",
]

_N_MAX = 10**6


@dataclass(frozen=True)
class DesignParams:
    """Everything the certificates constrain, in one immutable bundle."""

    model: SystemModel
    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray
    P: np.ndarray
    T: float
    alpha: float
    beta: float
    M: float
    delta: float
    epsilon: float
    kappa: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_sym_pd(self.Q, "Q", semidefinite=True))
        object.__setattr__(self, "R", _check_sym_pd(self.R, "R"))
        object.__setattr__(self, "P", _check_sym_pd(self.P, "P"))
        k = np.asarray(self.K, dtype=float)
        if k.shape != (self.model.m, self.model.n):
            raise ValueError("K must be (m, n)")
        object.__setattr__(self, "K", k)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not self.M > 1.0:
            raise ValueError("M must exceed 1")
        if self.T <= 0.0 or self.delta <= 0.0 or self.epsilon <= 0.0:
            raise ValueError("T, delta, epsilon must be positive")

    @property
    def qstar(self) -> np.ndarray:
        return _sym(self.Q + self.K.T @ self.R @ self.K)

    @property
    def rho(self) -> float:
        return self.model.disturbance_bound

    @property
    def lips(self) -> float:
        return self.model.lipschitz


@dataclass(frozen=True)
class ConditionRecord:
    """One inequality of a certificate: lhs <= rhs with its margin."""

    name: str
    lhs: float
    rhs: float
    satisfied: bool
    margin: float
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "satisfied": self.satisfied,
            "margin": self.margin,
            "note": self.note,
        }


def _lam_extremes(a: np.ndarray):
    vals = np.linalg.eigvalsh(_sym(np.asarray(a, dtype=float)))
    return float(vals[0]), float(vals[-1])


def _sup_factor(lips: float, beta: float, horizon: float) -> float:
    lbt = lips * beta * horizon
    if lbt <= 1.0:
        raise ValueError("error_sup_bound requires L*beta*T > 1")
    return (
        lips**2 * beta * horizon * np.exp(lips * (1.0 - beta) * horizon) / (lbt - 1.0)
    )


def error_sup_bound(delta: float, lips: float, beta: float, horizon: float) -> float:
    """Worst-case sup of ||x - xhat*||_P over a window, given the level delta."""
    if delta < 0.0:
        raise ValueError("delta must be non-negative")
    return _sup_factor(lips, beta, horizon) * delta


def max_disturbance(params: DesignParams) -> float:
    """Largest rho for which feasibility condition (i) still holds.

    Tight by construction: plugging the result back into the condition
    gives a margin of zero up to rounding.
    """
    factor = _sup_factor(params.lips, params.beta, params.T)
    unit_delta = design_delta(1.0, params.lips, params.beta, params.T, params.P)
    return (1.0 - params.alpha) * params.epsilon / (factor * unit_delta)


def check_feasibility(params: DesignParams) -> list[ConditionRecord]:
    """The three receding-horizon feasibility conditions with margins.

    (i)   worst-case prediction error (at the designed level for the
          configured rho) fits in the (1-alpha)*epsilon contraction gap;
    (ii)  the horizon is long enough for the terminal set to absorb the
          alpha contraction, and exceeds 1/(L*beta);
    (iii) the constraint-tightening slope M covers both the error
          envelope and the window geometry.
    """
    lam_min_p, lam_max_p = _lam_extremes(params.P)
    lam_min_qs, _ = _lam_extremes(params.qstar)
    records = []

    horizon_floor = 1.0 / (params.lips * params.beta)
    decay_floor = (
        -2.0 * lam_max_p / (lam_min_qs * params.beta) * np.log(params.alpha)
        if lam_min_qs > 0.0
        else np.inf
    )
    lhs_ii = float(max(decay_floor, horizon_floor))
    records.append(
        ConditionRecord(
            name="horizon-length",
            lhs=lhs_ii,
            rhs=params.T,
            satisfied=bool(params.T >= lhs_ii),
            margin=float(params.T - lhs_ii),
            note="T >= max(-2*lam_max(P)/(lam_min(Q*)*beta)*ln(alpha), 1/(L*beta))",
        )
    )

    lbt_ok = params.lips * params.beta * params.T > 1.0
    if lbt_ok:
        factor = _sup_factor(params.lips, params.beta, params.T)
        delta_design = design_delta(
            params.rho, params.lips, params.beta, params.T, params.P
        )
        lhs_i = factor * delta_design
        rhs_i = (1.0 - params.alpha) * params.epsilon
        records.append(
            ConditionRecord(
                name="error-margin",
                lhs=float(lhs_i),
                rhs=float(rhs_i),
                satisfied=bool(lhs_i <= rhs_i),
                margin=float(rhs_i - lhs_i),
                note="sup error at designed level fits (1-alpha)*epsilon",
            )
        )
        lhs_iii = float(
            max(
                factor * params.delta / (params.alpha * params.epsilon) + 1.0,
                1.0 - 1.0 / params.beta + 1.0 / (params.alpha * params.beta),
            )
        )
        records.append(
            ConditionRecord(
                name="tightening-slope",
                lhs=lhs_iii,
                rhs=float(params.M),
                satisfied=bool(params.M >= lhs_iii),
                margin=float(params.M - lhs_iii),
                note="M covers the error envelope and window geometry",
            )
        )
    else:
        for name in ("error-margin", "tightening-slope"):
            records.append(
                ConditionRecord(
                    name=name,
                    lhs=np.inf,
                    rhs=0.0,
                    satisfied=False,
                    margin=-np.inf,
                    note="requires L*beta*T > 1",
                )
            )
    return records


def _stability_sides(params: DesignParams, n: int):
    lam_min_p, lam_max_p = _lam_extremes(params.P)
    lam_min_q, lam_max_q = _lam_extremes(params.Q)
    lips, beta, horizon, delta = params.lips, params.beta, params.T, params.delta
    lbt = lips * beta * horizon
    if lbt <= 1.0:
        raise ValueError("stability condition requires L*beta*T > 1")
    grow = np.exp(lips * (1.0 - beta) * horizon)
    sup_term = lips**2 * beta * horizon / (lbt - 1.0) * grow * delta
    lhs = (
        lam_max_q
        / lam_min_p
        * (lips**2 * (1.0 - beta) * horizon / (lbt - 1.0))
        * grow
        * delta
        * (
            sup_term
            + 2.0
            * ((1.0 - beta) * params.M + beta)
            * params.alpha
            * params.epsilon
        )
        + lips**4 * beta * horizon / (lbt - 1.0) ** 2 * grow**2 * delta**2
    )
    gap = (
        params.alpha * params.epsilon
        - lips**2 * beta * horizon / (lbt - 1.0) * delta
    )
    rhs = lam_min_q * n / (lam_max_p * (n + 1.0)) * gap**2
    return float(lhs), float(rhs), float(gap)


def check_stability(params: DesignParams, n: int) -> ConditionRecord:
    """Quadratic decrease condition at sample-count parameter ``n``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lhs, rhs, gap = _stability_sides(params, n)
    note = "decrease gap alpha*eps - sup-factor*delta = %.6g" % gap
    if gap <= 0.0:
        note += " (non-positive: delta too large for alpha*epsilon)"
    return ConditionRecord(
        name=f"stability(n={n})",
        lhs=lhs,
        rhs=rhs,
        satisfied=bool(lhs <= rhs),
        margin=float(rhs - lhs),
        note=note,
    )


def find_n_min(params: DesignParams, n_max: int = _N_MAX) -> Optional[int]:
    """Smallest n satisfying the stability condition, None if n_max fails.

    The right-hand side grows monotonically in n (factor n/(n+1)), so a
    failure at n_max settles infinity and bisection finds the smallest
    satisfied n otherwise.
    """
    if not check_stability(params, n_max).satisfied:
        return None
    lo, hi = 1, n_max
    if check_stability(params, lo).satisfied:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if check_stability(params, mid).satisfied:
            hi = mid
        else:
            lo = mid
    return hi


def ultimate_bound(params: DesignParams) -> float:
    """Asymptotic level eps_bar the closed loop contracts into."""
    lam_min_p, lam_max_p = _lam_extremes(params.P)
    lam_min_q, lam_max_q = _lam_extremes(params.Q)
    lips, beta, horizon, delta = params.lips, params.beta, params.T, params.delta
    lbt = lips * beta * horizon
    if lbt <= 1.0:
        raise ValueError("ultimate bound requires L*beta*T > 1")
    if lam_min_q <= 0.0:
        raise ValueError("ultimate bound requires positive-definite Q")
    grow = np.exp(lips * (1.0 - beta) * horizon)
    quad = lips**4 * beta * horizon / (lbt - 1.0) ** 2 * delta**2
    term1 = (1.0 + lam_max_p / lam_min_q * grow**2) * quad
    term2 = (
        lam_max_p
        / lam_min_q
        * lam_max_q
        / lam_min_p
        * 4.0
        * params.alpha
        * params.epsilon
        * lips**2
        * (1.0 - beta)
        * horizon
        / (lbt - 1.0)
        * grow
        * delta
    )
    return float(term1 + term2)


def sup_derivative_check(times: np.ndarray, values: np.ndarray, tol: Optional[float] = None):
    """Sup-vs-derivative diagnostic on a sampled vector signal g.

    Checks sup ||g|| <= 0.5 * int ||g'|| + 0.5 * ||g(a) + g(b)|| within
    a quadrature tolerance (finite differences for g', trapezoid for
    the integral).  Returns a dict with the two sides and the verdict.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if times.ndim != 1 or values.shape[0] != times.shape[0] or times.shape[0] < 3:
        raise ValueError("need aligned times (k,) and values (k, d), k >= 3")
    norms = np.linalg.norm(values, axis=1)
    sup = float(np.max(norms))
    deriv = np.gradient(values, times, axis=0)
    integral = float(_trapezoid(np.linalg.norm(deriv, axis=1), times))
    endpoint = 0.5 * float(np.linalg.norm(values[0] + values[-1]))
    bound = 0.5 * integral + endpoint
    if tol is None:
        tol = 1e-6 * (1.0 + sup)
    return {
        "sup": sup,
        "bound": bound,
        "tol": float(tol),
        "holds": bool(sup <= bound + tol),
    }


@dataclass(frozen=True)
class Certificate:
    """Evaluated conditions plus the derived design quantities."""

    conditions: tuple
    rho_max: Optional[float]
    eps_bar: Optional[float]
    n_min: Optional[int]
    beta_eff: float
    inputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.satisfied for c in self.conditions) and self.n_min is not None

    def as_dict(self) -> dict:
        return {
            "conditions": [c.as_dict() for c in self.conditions],
            "rho_max": self.rho_max,
            "eps_bar": self.eps_bar,
            "n_min": self.n_min,
            "beta_eff": self.beta_eff,
            "inputs": self.inputs,
            "passed": self.passed,
        }


def certify(params: DesignParams) -> Certificate:
    """Evaluate every condition and derived quantity for one design."""
    records = check_feasibility(params)
    feas_ok = all(r.satisfied for r in records)
    lbt_ok = params.lips * params.beta * params.T > 1.0
    rho_max = max_disturbance(params) if lbt_ok else None
    n_min = None
    eps_bar = None
    if lbt_ok:
        n_min = find_n_min(params)
        stab = check_stability(params, n_min if n_min is not None else _N_MAX)
        records.append(stab)
        if feas_ok and stab.satisfied:
            eps_bar = ultimate_bound(params)
    else:
        records.append(
            ConditionRecord(
                name="stability",
                lhs=np.inf,
                rhs=0.0,
                satisfied=False,
                margin=-np.inf,
                note="requires L*beta*T > 1",
            )
        )
    beta_eff = (
        effective_beta(params.delta, params.rho, params.lips, params.T, params.P)
        if params.delta > 0.0
        else 1.0
    )
    inputs = {
        "model": params.model.name,
        "n": params.model.n,
        "m": params.model.m,
        "lipschitz": params.lips,
        "rho": params.rho,
        "Q": params.Q.tolist(),
        "R": params.R.tolist(),
        "K": params.K.tolist(),
        "P": params.P.tolist(),
        "kappa": params.kappa,
        "T": params.T,
        "alpha": params.alpha,
        "beta": params.beta,
        "M": params.M,
        "delta": params.delta,
        "epsilon": params.epsilon,
    }
    return Certificate(
        conditions=tuple(records),
        rho_max=rho_max,
        eps_bar=eps_bar,
        n_min=n_min,
        beta_eff=beta_eff,
        inputs=inputs,
    )
