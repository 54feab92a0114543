"""Continuous-time nonlinear plants with box inputs and bounded disturbance.

A model is the nominal vector field ``xdot = f(x, u)`` together with the
input box, a Lipschitz constant for ``f`` in its first argument, and the
norm bound ``rho`` on the additive disturbance ``w`` entering the real
plant ``xdot = f(x, u) + w``.  Everything downstream (controller
synthesis, certification, closed-loop simulation) consumes this type.

The vector field and its Jacobians must be vectorised: they accept
arrays of shape ``(..., n)`` / ``(..., m)`` and broadcast over leading
axes.  The optimal-control transcription batches all shooting intervals
through a single call, so this is a hard requirement, not a nicety.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SystemModel",
    "Trajectory",
    "DisturbanceGenerator",
    "IntegrationDivergedError",
    "cart_damper_spring",
    "model_from_terms",
    "eval_nominal",
    "linearize",
    "integrate",
    "rk4_step",
    "estimate_lipschitz",
    "DISTURBANCE_KINDS",
]


class IntegrationDivergedError(RuntimeError):
    """State left the representable range during integration.

    Attributes
    ----------
    t_last : float
        Last time at which the state was still finite.
    """

    def __init__(self, t_last: float):
        super().__init__(
            "integration diverged (non-finite state); "
            f"last finite state at t={t_last:.6g}"
        )
        self.t_last = t_last


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SystemModel:
    """Nominal dynamics with input box and disturbance bound.

    Parameters
    ----------
    f : callable
        Vector field ``f(x, u) -> xdot`` with ``f(0, 0) = 0``.  Must
        broadcast over leading axes (see module docstring).
    n, m : int
        State and input dimensions.
    input_lower, input_upper : array, shape (m,)
        Component-wise input box; must contain 0.
    lipschitz : float
        Lipschitz constant of ``f`` in ``x``, understood in the
        P-weighted sense used by the inter-event-time analysis and
        therefore supplied as configuration rather than estimated.
    disturbance_bound : float
        Bound ``rho`` on the Euclidean norm of the additive disturbance.
    jac_x, jac_u : callable, optional
        Analytic Jacobians ``(..., n, n)`` / ``(..., n, m)``.  When
        absent, consumers fall back to central finite differences.
    """

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n: int
    m: int
    input_lower: np.ndarray
    input_upper: np.ndarray
    lipschitz: float
    disturbance_bound: float
    jac_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    jac_u: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "model"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and input dimensions must be positive")
        lo = _readonly(self.input_lower).reshape(self.m)
        up = _readonly(self.input_upper).reshape(self.m)
        object.__setattr__(self, "input_lower", _readonly(lo))
        object.__setattr__(self, "input_upper", _readonly(up))
        if not np.all(lo < up):
            raise ValueError("input_lower must be < input_upper component-wise")
        if not (np.all(lo <= 0.0) and np.all(up >= 0.0)):
            raise ValueError("input box must contain u = 0")
        if not self.lipschitz > 0.0:
            raise ValueError("lipschitz must be positive")
        if self.disturbance_bound < 0.0:
            raise ValueError("disturbance_bound must be non-negative")
        f0 = np.asarray(self.f(np.zeros(self.n), np.zeros(self.m)), dtype=float)
        if f0.shape != (self.n,):
            raise ValueError(
                f"f must map (n,),(m,) -> (n,); got output shape {f0.shape}"
            )
        if np.max(np.abs(f0)) > 1e-12:
            raise ValueError("the origin must be an equilibrium: |f(0,0)| <= 1e-12")

    def clip_input(self, u: np.ndarray) -> np.ndarray:
        """Project ``u`` onto the input box (broadcasts over leading axes)."""
        return np.clip(u, self.input_lower, self.input_upper)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state (and optionally input) history."""

    times: np.ndarray
    states: np.ndarray
    inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        t = _readonly(self.times)
        x = _readonly(self.states)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        if t.ndim != 1 or x.ndim != 2 or x.shape[0] != t.shape[0]:
            raise ValueError("times (k+1,) and states (k+1, n) must align")
        if t.shape[0] >= 2:
            dt = np.diff(t)
            if np.max(np.abs(dt - dt[0])) > 1e-12 * (1.0 + abs(dt[0])):
                raise ValueError("trajectory grid must be uniform to 1e-12")
        if self.inputs is not None:
            u = _readonly(self.inputs)
            object.__setattr__(self, "inputs", u)
            if u.shape[0] not in (t.shape[0], t.shape[0] - 1):
                raise ValueError("inputs must hold k or k+1 samples")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])


# ---------------------------------------------------------------------------
# built-in benchmark plant
# ---------------------------------------------------------------------------

_CART_MASS = 1.25
_CART_TAU = 0.9
_CART_HD = 0.42


def _cart_f(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    acc = (
        -_CART_TAU * np.exp(-x1) * x1 - _CART_HD * x2 + u[..., 0]
    ) / _CART_MASS
    return np.stack([x2, acc], axis=-1)


def _cart_jac_x(x, u):
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 1] = 1.0
    # d/dx1 of -tau*exp(-x1)*x1 is tau*exp(-x1)*(x1 - 1)
    out[..., 1, 0] = _CART_TAU * np.exp(-x1) * (x1 - 1.0) / _CART_MASS
    out[..., 1, 1] = -_CART_HD / _CART_MASS
    return out


def _cart_jac_u(x, u):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (2, 1))
    out[..., 1, 0] = 1.0 / _CART_MASS
    return out


def cart_damper_spring(
    lipschitz: float = 1.4, disturbance_bound: float = 0.00031
) -> SystemModel:
    """Cart with exponentially hardening spring and linear damper.

    ``x1`` is the cart position, ``x2`` its velocity, and the input is
    the force, saturated to [-1, 1].  Mass 1.25, spring constant 0.9,
    damping 0.42.  This is the plant used by the shipped benchmark
    configurations.
    """
    return SystemModel(
        f=_cart_f,
        n=2,
        m=1,
        input_lower=np.array([-1.0]),
        input_upper=np.array([1.0]),
        lipschitz=lipschitz,
        disturbance_bound=disturbance_bound,
        jac_x=_cart_jac_x,
        jac_u=_cart_jac_u,
        name="cart_damper_spring",
    )


# ---------------------------------------------------------------------------
# term-list models (config-supplied dynamics)
# ---------------------------------------------------------------------------
#
# Each state derivative is a sum of terms
#     coeff * prod_j x_j^p_j * prod_l u_l^q_l * exp(scale * x_e)
# which covers polynomial and exponential-spring style plants and stays
# analytically differentiable (the Jacobian of a term list is again a
# term list, so no finite differencing is needed).

def _term_tuple(spec: dict, n: int, m: int):
    coeff = float(spec["coeff"])
    xp = np.array(spec.get("state_powers", [0] * n), dtype=int)
    up = np.array(spec.get("input_powers", [0] * m), dtype=int)
    if xp.shape != (n,) or up.shape != (m,):
        raise ValueError("term powers must match state/input dimensions")
    if np.any(xp < 0) or np.any(up < 0):
        raise ValueError("term powers must be non-negative")
    exp_idx, exp_scale = -1, 0.0
    if "exp" in spec:
        exp_idx = int(spec["exp"]["state"])
        exp_scale = float(spec["exp"]["scale"])
        if not 0 <= exp_idx < n:
            raise ValueError("exp state index out of range")
    return (coeff, xp, up, exp_idx, exp_scale)


def _eval_terms(terms, x, u):
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    out = np.zeros(batch)
    for coeff, xp, up, ei, es in terms:
        val = np.full(batch, coeff)
        for j, p in enumerate(xp):
            if p:
                val = val * x[..., j] ** p
        for l, q in enumerate(up):
            if q:
                val = val * u[..., l] ** q
        if ei >= 0:
            val = val * np.exp(es * x[..., ei])
        out = out + val
    return out


def _diff_terms_x(terms, j):
    out = []
    for coeff, xp, up, ei, es in terms:
        if xp[j] > 0:
            xp2 = xp.copy()
            xp2[j] -= 1
            out.append((coeff * xp[j], xp2, up, ei, es))
        if ei == j and es != 0.0:
            out.append((coeff * es, xp, up, ei, es))
    return out


def _diff_terms_u(terms, l):
    out = []
    for coeff, xp, up, ei, es in terms:
        if up[l] > 0:
            up2 = up.copy()
            up2[l] -= 1
            out.append((coeff * up[l], xp, up2, ei, es))
    return out


def model_from_terms(spec: dict) -> SystemModel:
    """Build a :class:`SystemModel` from a term-list description.

    Expected keys: ``state_dim``, ``input_dim``, ``terms`` (list of term
    lists, one per state), ``input_lower``, ``input_upper``,
    ``lipschitz``, ``disturbance_bound``, optional ``name``.
    """
    n = int(spec["state_dim"])
    m = int(spec["input_dim"])
    rows = spec["terms"]
    if len(rows) != n:
        raise ValueError("terms must list one term list per state")
    term_rows = [[_term_tuple(t, n, m) for t in row] for row in rows]
    jx_rows = [[_diff_terms_x(row, j) for j in range(n)] for row in term_rows]
    ju_rows = [[_diff_terms_u(row, l) for l in range(m)] for row in term_rows]

    def f(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        cols = [_eval_terms(row, x, u) for row in term_rows]
        return np.stack(cols, axis=-1)

    def jac_x(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        out = np.zeros(batch + (n, n))
        for i in range(n):
            for j in range(n):
                if jx_rows[i][j]:
                    out[..., i, j] = _eval_terms(jx_rows[i][j], x, u)
        return out

    def jac_u(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        out = np.zeros(batch + (n, m))
        for i in range(n):
            for l in range(m):
                if ju_rows[i][l]:
                    out[..., i, l] = _eval_terms(ju_rows[i][l], x, u)
        return out

    return SystemModel(
        f=f,
        n=n,
        m=m,
        input_lower=np.asarray(spec["input_lower"], dtype=float),
        input_upper=np.asarray(spec["input_upper"], dtype=float),
        lipschitz=float(spec["lipschitz"]),
        disturbance_bound=float(spec["disturbance_bound"]),
        jac_x=jac_x,
        jac_u=jac_u,
        name=str(spec.get("name", "custom")),
    )


# ---------------------------------------------------------------------------
# evaluation, linearisation, integration
# ---------------------------------------------------------------------------

def eval_nominal(model: SystemModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate the nominal vector field with shape checking."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != model.n or u.shape[-1] != model.m:
        raise ValueError(
            f"dimension mismatch: expected (..., {model.n}) and (..., {model.m}), "
            f"got {x.shape} and {u.shape}"
        )
    return np.asarray(model.f(x, u), dtype=float)


def _fd_jacobians(model: SystemModel, x0: np.ndarray, u0: np.ndarray):
    """Central finite-difference Jacobians with step 1e-6*(1+||x||)."""
    hx = 1e-6 * (1.0 + float(np.linalg.norm(x0)))
    hu = 1e-6 * (1.0 + float(np.linalg.norm(u0)))
    a = np.zeros((model.n, model.n))
    b = np.zeros((model.n, model.m))
    for j in range(model.n):
        e = np.zeros(model.n)
        e[j] = hx
        a[:, j] = (model.f(x0 + e, u0) - model.f(x0 - e, u0)) / (2.0 * hx)
    for j in range(model.m):
        e = np.zeros(model.m)
        e[j] = hu
        b[:, j] = (model.f(x0, u0 + e) - model.f(x0, u0 - e)) / (2.0 * hu)
    return a, b


def linearize(
    model: SystemModel,
    x0: Optional[np.ndarray] = None,
    u0: Optional[np.ndarray] = None,
    use_analytic: bool = True,
):
    """Jacobian pair ``(A, B)`` of ``f`` at ``(x0, u0)``, origin by default.

    Analytic Jacobians are used when the model supplies them; otherwise
    central finite differences with step ``1e-6 * (1 + ||x||)``.
    """
    x0 = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    u0 = np.zeros(model.m) if u0 is None else np.asarray(u0, dtype=float)
    if x0.shape != (model.n,) or u0.shape != (model.m,):
        raise ValueError("dimension mismatch in linearization point")
    if use_analytic and model.jac_x is not None and model.jac_u is not None:
        return (
            np.asarray(model.jac_x(x0, u0), dtype=float),
            np.asarray(model.jac_u(x0, u0), dtype=float),
        )
    return _fd_jacobians(model, x0, u0)


def rk4_step(f, x, u, w, h: float):
    """One classical Runge-Kutta step of ``xdot = f(x, u) + w``.

    ``u`` and ``w`` are held constant across the step (zero-order hold
    sampled at the step start).  Broadcasts over leading axes.  The
    closed-loop simulator, the shooting transcription, and the stored
    prediction re-integration all funnel through this function so their
    floating-point arithmetic is identical.
    """
    k1 = f(x, u) + w
    k2 = f(x + 0.5 * h * k1, u) + w
    k3 = f(x + 0.5 * h * k2, u) + w
    k4 = f(x + h * k3, u) + w
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    model: SystemModel,
    x0: np.ndarray,
    t0: float,
    t1: float,
    h: float,
    control=None,
    disturbance=None,
) -> Trajectory:
    """Fixed-step RK4 integration of ``xdot = f(x, u(t)) + w(t)``.

    Parameters
    ----------
    control : callable, optional
        ``u(t) -> (m,)``; defaults to zero input.  Sampled zero-order
        hold at each step start.
    disturbance : callable, optional
        ``w(t) -> (n,)``; defaults to zero.  Sampled the same way.

    Returns
    -------
    Trajectory
        States on the uniform grid ``t0, t0+h, ..., t1`` and the held
        inputs (one per step).

    Raises
    ------
    ValueError
        If the span is not an integral number of steps (to 1e-9) or
        inputs leave the input box.
    IntegrationDivergedError
        If the state becomes non-finite; carries the last finite time.
    """
    if not (t1 > t0 and h > 0.0):
        raise ValueError("need t1 > t0 and h > 0")
    span = t1 - t0
    steps = int(round(span / h))
    if steps < 1 or abs(steps * h - span) > 1e-9:
        raise ValueError("(t1 - t0) / h must be integral to 1e-9")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError("dimension mismatch in x0")
    zero_u = np.zeros(model.m)
    zero_w = np.zeros(model.n)
    states = np.empty((steps + 1, model.n))
    inputs = np.empty((steps, model.m))
    states[0] = x0
    x = x0
    for k in range(steps):
        t = t0 + k * h
        u = zero_u if control is None else np.asarray(control(t), dtype=float)
        if np.any(u < model.input_lower - 1e-12) or np.any(
            u > model.input_upper + 1e-12
        ):
            raise ValueError(f"control at t={t:.6g} leaves the input box")
        w = zero_w if disturbance is None else np.asarray(disturbance(t), dtype=float)
        x = rk4_step(model.f, x, u, w, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(t)
        states[k + 1] = x
        inputs[k] = u
    times = t0 + h * np.arange(steps + 1)
    return Trajectory(times=times, states=states, inputs=inputs)


# ---------------------------------------------------------------------------
# disturbance generation
# ---------------------------------------------------------------------------

DISTURBANCE_KINDS = (
    "zero",
    "constant-direction",
    "piecewise-random-hold",
    "sinusoidal",
)


def _clip_norm(w: np.ndarray, bound: float) -> np.ndarray:
    # enforce ||w|| <= bound exactly, not just up to rounding
    nrm = float(np.linalg.norm(w))
    while nrm > bound:
        w = w * (bound / nrm) if nrm > 0.0 else w
        new = float(np.linalg.norm(w))
        if new >= nrm:  # no progress; bail out hard
            w = w * (1.0 - 1e-15)
            new = float(np.linalg.norm(w))
        nrm = new
    return w


class DisturbanceGenerator:
    """Seed-reproducible disturbance sample paths with ``||w|| <= magnitude``.

    Kinds
    -----
    ``zero``
        Identically zero; the seed is ignored.
    ``constant-direction``
        A fixed random unit direction scaled by ``magnitude``.
    ``piecewise-random-hold``
        On each hold interval: direction uniform on the sphere,
        magnitude uniform in ``[0, magnitude]``, held constant.
    ``sinusoidal``
        ``magnitude * sin(2*pi*t/hold_interval + phase)`` along a fixed
        random direction.

    The same ``(kind, seed)`` pair always yields the same sample path
    regardless of query order: held values are generated sequentially
    into an internal buffer that only ever grows.
    """

    def __init__(
        self,
        kind: str,
        dim: int,
        magnitude: float,
        hold_interval: float = 0.01,
        seed: int = 0,
    ):
        if kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {kind!r}")
        if magnitude < 0.0:
            raise ValueError("magnitude must be non-negative")
        if hold_interval <= 0.0:
            raise ValueError("hold_interval must be positive")
        self.kind = kind
        self.dim = int(dim)
        self.magnitude = float(magnitude)
        self.hold_interval = float(hold_interval)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._held = np.empty((0, self.dim))
        if kind in ("constant-direction", "sinusoidal"):
            self._direction = self._unit(self._rng.standard_normal(self.dim))
            self._phase = float(self._rng.uniform(0.0, 2.0 * np.pi))

    @staticmethod
    def _unit(v: np.ndarray) -> np.ndarray:
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            out = np.zeros_like(v)
            out[0] = 1.0
            return out
        return v / nrm

    def _hold_index(self, t: float) -> int:
        return max(0, int(np.floor(t / self.hold_interval + 1e-9)))

    def _ensure_held(self, j: int):
        while self._held.shape[0] <= j:
            d = self._unit(self._rng.standard_normal(self.dim))
            mag = float(self._rng.uniform(0.0, self.magnitude))
            w = _clip_norm(mag * d, self.magnitude)
            self._held = np.vstack([self._held, w[None, :]])

    def value(self, t: float) -> np.ndarray:
        """Disturbance at time ``t`` (norm never exceeds ``magnitude``)."""
        if self.kind == "zero" or self.magnitude == 0.0:
            return np.zeros(self.dim)
        if self.kind == "constant-direction":
            return _clip_norm(self.magnitude * self._direction, self.magnitude)
        if self.kind == "sinusoidal":
            s = np.sin(2.0 * np.pi * t / self.hold_interval + self._phase)
            return _clip_norm(self.magnitude * s * self._direction, self.magnitude)
        j = self._hold_index(t)
        self._ensure_held(j)
        return self._held[j].copy()

    def path(self, times: np.ndarray) -> np.ndarray:
        """Sample path on a time grid, shape ``(len(times), dim)``."""
        times = np.asarray(times, dtype=float)
        out = np.empty((times.shape[0], self.dim))
        for i, t in enumerate(times):
            out[i] = self.value(float(t))
        return out


def estimate_lipschitz(
    model: SystemModel,
    box_lower: np.ndarray,
    box_upper: np.ndarray,
    weight: Optional[np.ndarray] = None,
    samples: int = 2048,
    seed: int = 0,
) -> float:
    """Advisory Lipschitz estimate: max Jacobian norm over a sample box.

    Samples states uniformly in the box and inputs uniformly in the
    input box, and reports ``max ||sqrt(P) A(x,u) sqrt(P)^-1||_2`` (the
    P-weighted operator norm; Euclidean when ``weight`` is None).  The
    result is a report for the configuration author, never a value that
    overrides configured ``lipschitz``.
    """
    lo = np.asarray(box_lower, dtype=float).reshape(model.n)
    up = np.asarray(box_upper, dtype=float).reshape(model.n)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo, up, size=(samples, model.n))
    us = rng.uniform(model.input_lower, model.input_upper, size=(samples, model.m))
    if model.jac_x is not None:
        jacs = np.asarray(model.jac_x(xs, us), dtype=float)
    else:
        jacs = np.stack(
            [_fd_jacobians(model, x, u)[0] for x, u in zip(xs, us)], axis=0
        )
    if weight is not None:
        p = np.asarray(weight, dtype=float)
        vals, vecs = np.linalg.eigh(0.5 * (p + p.T))
        if np.min(vals) <= 0.0:
            raise ValueError("weight matrix must be positive definite")
        sq = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
        sqinv = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        jacs = np.einsum("ij,kjl,lm->kim", sq, jacs, sqinv)
    return float(np.max(np.linalg.norm(jacs, ord=2, axis=(1, 2))))
