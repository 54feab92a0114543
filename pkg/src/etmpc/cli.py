"""Command-line front end: certify, simulate, compare, montecarlo.

Configurations are JSON documents (conventionally ``.cfg``) with the
sections ``model``, ``weights``, ``design``, ``ocp``, ``trigger``,
``disturbance``, ``sim``, ``output``.  Validation is strict: unknown
sections or keys are rejected so typos cannot silently fall back to
defaults.  All machine output is deterministic for a fixed config and
seed: JSON is emitted with sorted keys, floats use shortest round-trip
formatting, and no timestamps or environment details are embedded.

Exit codes: 0 success, 1 certificate failed (or simulation refused
because the certificate failed), 2 configuration error, 3 simulation
failure (infeasible initial problem, divergence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .certify import DesignParams, certify
from .model import (
    DISTURBANCE_KINDS,
    SystemModel,
    cart_damper_spring,
    model_from_terms,
)
from .sim import (
    TRIGGER_KINDS,
    SimOptions,
    initial_solution,
    run_monte_carlo,
    run_simulation,
)
from .synthesis import SynthesisError, synthesize
from .trigger import calibrate_sigma, design_delta

SCHEMA_VERSION = 1

_MODEL_BUILTIN_KEYS = {"name", "lipschitz", "disturbance_bound"}
_MODEL_CUSTOM_KEYS = _MODEL_BUILTIN_KEYS | {
    "state_dim", "input_dim", "terms", "input_lower", "input_upper",
}
_WEIGHT_KEYS = {"Q", "R"}
_DESIGN_KEYS = {"horizon", "alpha", "beta", "M", "epsilon", "K", "P",
                "kappa", "delta"}
_OCP_KEYS = {"intervals"}
_TRIGGER_KEYS = {"kind", "delta", "sigma"}
_DIST_KEYS = {"kind", "magnitude", "hold", "seed"}
_SIM_KEYS = {"x0", "duration", "step"}
_OUTPUT_KEYS = {"trace", "events", "plot_dir"}
_SECTIONS = {"model", "weights", "design", "ocp", "trigger", "disturbance",
             "sim", "output"}


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


def _check_keys(section: dict, allowed: set, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _num(section: dict, key: str, path: str, required=True, default=None):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: must be a number")
    return float(v)


def _matrix(section: dict, key: str, path: str, shape=None, required=True):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return None
    try:
        a = np.array(section[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: must be a numeric matrix")
    if a.ndim != 2:
        raise ConfigError(f"{path}.{key}: must be a matrix (list of rows)")
    if shape is not None and a.shape != shape:
        raise ConfigError(
            f"{path}.{key}: expected shape {shape}, got {a.shape}"
        )
    return a


def _vector(section: dict, key: str, path: str, length=None, required=True):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return None
    try:
        a = np.array(section[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: must be a numeric vector")
    if a.ndim != 1:
        raise ConfigError(f"{path}.{key}: must be a flat list of numbers")
    if length is not None and a.shape[0] != length:
        raise ConfigError(f"{path}.{key}: expected {length} entries")
    return a


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror or e}")
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: "
            f"{e.msg}"
        )
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(raw) - _SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {', '.join(unknown)}")
    return raw


def _build_model(raw: dict) -> SystemModel:
    sect = raw.get("model")
    if sect is None:
        raise ConfigError("model: section required")
    name = sect.get("name", "cart-damper-spring")
    if name == "cart-damper-spring":
        _check_keys(sect, _MODEL_BUILTIN_KEYS, "model")
        lips = _num(sect, "lipschitz", "model", required=False, default=1.4)
        rho = _num(sect, "disturbance_bound", "model", required=False,
                   default=0.00031)
        if lips <= 0.0:
            raise ConfigError("model.lipschitz: must be positive")
        if rho < 0.0:
            raise ConfigError("model.disturbance_bound: must be >= 0")
        return cart_damper_spring(lipschitz=lips, disturbance_bound=rho)
    _check_keys(sect, _MODEL_CUSTOM_KEYS, "model")
    for key in ("state_dim", "input_dim", "terms", "input_lower",
                "input_upper", "lipschitz", "disturbance_bound"):
        if key not in sect:
            raise ConfigError(f"model.{key}: required for a custom model")
    try:
        return model_from_terms(sect)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"model: {e}")


def _build_design(raw: dict):
    """Resolve the full design; returns (DesignParams, effective dict)."""
    model = _build_model(raw)
    wsect = raw.get("weights")
    if wsect is None:
        raise ConfigError("weights: section required")
    _check_keys(wsect, _WEIGHT_KEYS, "weights")
    q = _matrix(wsect, "Q", "weights", shape=(model.n, model.n))
    r = _matrix(wsect, "R", "weights", shape=(model.m, model.m))

    dsect = raw.get("design")
    if dsect is None:
        raise ConfigError("design: section required")
    _check_keys(dsect, _DESIGN_KEYS, "design")
    horizon = _num(dsect, "horizon", "design")
    alpha = _num(dsect, "alpha", "design")
    beta = _num(dsect, "beta", "design")
    big_m = _num(dsect, "M", "design")
    k_mat = _matrix(dsect, "K", "design", shape=(model.m, model.n),
                    required=False)
    p_mat = _matrix(dsect, "P", "design", shape=(model.n, model.n),
                    required=False)
    kappa = _num(dsect, "kappa", "design", required=False)
    eps_cfg = _num(dsect, "epsilon", "design", required=False)

    if (k_mat is None) != (p_mat is None):
        raise ConfigError("design: provide both K and P, or neither "
                          "(omitting them triggers synthesis)")
    if k_mat is None:
        try:
            ing = synthesize(model, q, r)
        except SynthesisError as e:
            raise ConfigError(f"design: synthesis failed: {e}")
        k_mat, p_mat, kappa = ing.K, ing.P, ing.kappa
        if eps_cfg is None:
            epsilon = ing.epsilon
        elif eps_cfg > ing.epsilon:
            raise ConfigError(
                f"design.epsilon: {eps_cfg:g} exceeds the certified "
                f"terminal level {ing.epsilon:g}"
            )
        else:
            epsilon = eps_cfg
    else:
        if eps_cfg is None:
            raise ConfigError("design.epsilon: required when K and P are "
                              "supplied")
        epsilon = eps_cfg

    tsect = raw.get("trigger", {})
    _check_keys(tsect, _TRIGGER_KEYS, "trigger")
    kind = tsect.get("kind", "integral")
    if kind not in TRIGGER_KINDS:
        raise ConfigError(f"trigger.kind: must be one of {TRIGGER_KINDS}")
    sigma = _num(tsect, "sigma", "trigger", required=False)
    delta_cfg = _num(tsect, "delta", "trigger", required=False)
    if delta_cfg is None:
        delta_cfg = _num(dsect, "delta", "design", required=False)

    try:
        rho = model.disturbance_bound
        if delta_cfg is None:
            delta_eff = design_delta(rho, model.lipschitz, beta, horizon,
                                     p_mat)
            if delta_eff <= 0.0:
                raise ConfigError(
                    "trigger.delta: required when the disturbance bound is 0"
                )
        else:
            delta_eff = float(delta_cfg)
        params = DesignParams(
            model=model, Q=q, R=r, K=k_mat, P=p_mat, T=horizon, alpha=alpha,
            beta=beta, M=big_m, delta=delta_eff, epsilon=epsilon, kappa=kappa,
        )
    except ValueError as e:
        raise ConfigError(f"design: {e}")

    model_echo = dict(raw["model"])
    model_echo.setdefault("name", model.name)
    model_echo["lipschitz"] = model.lipschitz
    model_echo["disturbance_bound"] = model.disturbance_bound
    effective = {
        "model": model_echo,
        "weights": {"Q": q.tolist(), "R": r.tolist()},
        "design": {
            "horizon": horizon,
            "alpha": alpha,
            "beta": beta,
            "M": big_m,
            "epsilon": epsilon,
            "K": k_mat.tolist(),
            "P": p_mat.tolist(),
            "kappa": kappa,
            "delta_design": design_delta(rho, model.lipschitz, beta, horizon,
                                         p_mat),
        },
        "trigger": {"kind": kind, "delta": delta_eff, "sigma": sigma},
    }
    return params, effective


def _build_sim_options(raw: dict, args, params: DesignParams, effective):
    osect = raw.get("ocp")
    if osect is None:
        raise ConfigError("ocp: section required")
    _check_keys(osect, _OCP_KEYS, "ocp")
    if "intervals" not in osect:
        raise ConfigError("ocp.intervals: required")
    intervals = osect["intervals"]
    if not isinstance(intervals, int) or isinstance(intervals, bool) \
            or intervals < 1:
        raise ConfigError("ocp.intervals: must be a positive integer")

    ssect = raw.get("sim")
    if ssect is None:
        raise ConfigError("sim: section required")
    _check_keys(ssect, _SIM_KEYS, "sim")
    x0 = _vector(ssect, "x0", "sim", length=params.model.n)
    duration = _num(ssect, "duration", "sim")
    step = _num(ssect, "step", "sim")

    dsect = raw.get("disturbance", {})
    _check_keys(dsect, _DIST_KEYS, "disturbance")
    kind = dsect.get("kind", "piecewise-random-hold")
    if kind not in DISTURBANCE_KINDS:
        raise ConfigError(
            f"disturbance.kind: must be one of {DISTURBANCE_KINDS}"
        )
    magnitude = _num(dsect, "magnitude", "disturbance", required=False)
    hold = _num(dsect, "hold", "disturbance", required=False)
    seed = dsect.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("disturbance.seed: must be a non-negative integer")

    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if getattr(args, "duration", None) is not None:
        duration = args.duration
    trigger_kind = effective["trigger"]["kind"]
    if getattr(args, "trigger", None) is not None:
        trigger_kind = args.trigger
    sigma = effective["trigger"]["sigma"]

    try:
        opts = SimOptions(
            x0=x0, duration=duration, step=step, n_intervals=intervals,
            seed=seed, disturbance_kind=kind,
            disturbance_magnitude=magnitude, hold_interval=hold,
            trigger_kind=trigger_kind, sigma=sigma,
            exploratory=bool(getattr(args, "exploratory", False)),
        )
    except ValueError as e:
        raise ConfigError(f"sim: {e}")

    sigma_echo = sigma
    if sigma_echo is None and params.rho > 0.0:
        sigma_echo = calibrate_sigma(params.delta, params.rho, params.lips,
                                     params.T, params.P)
    effective["trigger"]["kind"] = trigger_kind
    effective["trigger"]["sigma"] = sigma_echo
    effective["ocp"] = {"intervals": intervals}
    effective["disturbance"] = {
        "kind": kind, "magnitude": magnitude, "hold": hold, "seed": seed,
    }
    effective["sim"] = {
        "x0": x0.tolist(), "duration": duration, "step": step,
    }
    return opts


def _fmt(v) -> str:
    return repr(float(v))


def _emit_json(payload: dict, out_path):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_trace(path: str, res):
    n = res.states.shape[1]
    m = res.inputs.shape[1] if res.inputs.size else 1
    cols = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"w{i + 1}" for i in range(n)]
        + ["err_P", "accum", "event"]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        last = len(res.times) - 1
        for k in range(last + 1):
            ku = min(k, res.inputs.shape[0] - 1)
            row = (
                [_fmt(res.times[k])]
                + [_fmt(v) for v in res.states[k]]
                + [_fmt(v) for v in res.inputs[ku]]
                + [_fmt(v) for v in res.disturbances[ku]]
                + [_fmt(res.err_p[k]), _fmt(res.accum[k]),
                   str(int(res.event_flags[k]))]
            )
            fh.write(",".join(row) + "\n")


def _write_events(path: str, res):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "events": [ev.as_dict() for ev in res.events],
        "violations": res.violations,
    }
    _emit_json(payload, path)


def _write_plots(plot_dir: str, res):
    """Two-column whitespace data files, one signal per file."""
    os.makedirs(plot_dir, exist_ok=True)
    from .synthesis import pnorm  # local import avoids a cycle at module load

    norms = None
    series = {
        "error.dat": res.err_p,
        "accum.dat": res.accum,
    }
    with open(os.path.join(plot_dir, "norm.dat"), "w", encoding="utf-8") as fh:
        import numpy as _np

        norms = _np.linalg.norm(res.states, axis=1)
        for t, v in zip(res.times, norms):
            fh.write(f"{_fmt(t)} {_fmt(v)}\n")
    for fname, values in series.items():
        with open(os.path.join(plot_dir, fname), "w", encoding="utf-8") as fh:
            for t, v in zip(res.times, values):
                fh.write(f"{_fmt(t)} {_fmt(v)}\n")
    with open(os.path.join(plot_dir, "input.dat"), "w", encoding="utf-8") as fh:
        for k in range(res.inputs.shape[0]):
            fh.write(f"{_fmt(res.times[k])} "
                     + " ".join(_fmt(v) for v in res.inputs[k]) + "\n")


def _summary_lines(cert) -> list:
    lines = []
    for c in cert.conditions:
        tag = "PASS" if c.satisfied else "FAIL"
        lines.append(
            f"[{tag}] {c.name}: lhs={c.lhs:.6g} rhs={c.rhs:.6g} "
            f"margin={c.margin:.6g}"
        )
    lines.append(f"certificate: {'PASSED' if cert.passed else 'FAILED'}")
    return lines


def _gate(cert, exploratory: bool) -> bool:
    """True when simulation may proceed."""
    if cert.passed or exploratory:
        return True
    failing = [c.name for c in cert.conditions if not c.satisfied]
    if cert.n_min is None and "stability" not in " ".join(failing):
        failing.append("stability")
    print(
        "certificate failed (" + ", ".join(failing) + "); "
        "rerun with --exploratory to simulate anyway",
        file=sys.stderr,
    )
    return False


def _sim_payload(effective, cert, res) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "effective_config": effective,
        "certificate_passed": cert.passed,
        "status": res.status,
        "reason": res.reason,
        "metrics": res.metrics,
        "events": [ev.as_dict() for ev in res.events],
        "violations": res.violations,
    }


def _cmd_certify(args) -> int:
    raw = load_config(args.config)
    params, effective = _build_design(raw)
    cert = certify(params)
    _emit_json(
        {
            "schema_version": SCHEMA_VERSION,
            "effective_config": effective,
            "certificate": cert.as_dict(),
        },
        args.out,
    )
    for line in _summary_lines(cert):
        print(line, file=sys.stderr)
    return 0 if cert.passed else 1


def _output_paths(raw: dict, args):
    sect = raw.get("output", {})
    _check_keys(sect, _OUTPUT_KEYS, "output")
    trace = getattr(args, "trace", None) or sect.get("trace")
    events = getattr(args, "events", None) or sect.get("events")
    plot_dir = getattr(args, "plot_dir", None) or sect.get("plot_dir")
    return trace, events, plot_dir


def _cmd_simulate(args) -> int:
    raw = load_config(args.config)
    params, effective = _build_design(raw)
    opts = _build_sim_options(raw, args, params, effective)
    trace, events_path, plot_dir = _output_paths(raw, args)
    cert = certify(params)
    if not _gate(cert, opts.exploratory):
        return 1
    res = run_simulation(params, opts)
    _emit_json(_sim_payload(effective, cert, res), args.out)
    if res.status != "ok":
        print(f"simulation failed: {res.reason}", file=sys.stderr)
        return 3
    if trace:
        _write_trace(trace, res)
    if events_path:
        _write_events(events_path, res)
    if plot_dir:
        _write_plots(plot_dir, res)
    print(
        f"events: {res.metrics['event_count']}  "
        f"mean interval: {res.metrics['mean_interval']:.6g}  "
        f"violations: {res.metrics['violation_count']}",
        file=sys.stderr,
    )
    return 0


def _cmd_compare(args) -> int:
    raw = load_config(args.config)
    params, effective = _build_design(raw)
    opts = _build_sim_options(raw, args, params, effective)
    cert = certify(params)
    if not _gate(cert, opts.exploratory):
        return 1
    from dataclasses import replace as _replace

    init = initial_solution(params, opts)
    results = {}
    for kind in TRIGGER_KINDS:
        results[kind] = run_simulation(
            params, _replace(opts, trigger_kind=kind), initial=init
        )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "effective_config": effective,
        "certificate_passed": cert.passed,
    }
    failed = None
    for kind, res in results.items():
        payload[kind] = {
            "status": res.status,
            "reason": res.reason,
            "metrics": res.metrics,
            "events": [ev.as_dict() for ev in res.events],
            "violations": res.violations,
        }
        if res.status != "ok":
            failed = res.reason
    if failed is None:
        mi = results["integral"].metrics
        mp = results["pointwise"].metrics
        payload["paired"] = {
            "event_count_diff": mi["event_count"] - mp["event_count"],
            "mean_interval_diff": mi["mean_interval"] - mp["mean_interval"],
        }
    _emit_json(payload, args.out)
    if failed is not None:
        print(f"simulation failed: {failed}", file=sys.stderr)
        return 3
    return 0


def _cmd_montecarlo(args) -> int:
    raw = load_config(args.config)
    params, effective = _build_design(raw)
    opts = _build_sim_options(raw, args, params, effective)
    cert = certify(params)
    if not _gate(cert, opts.exploratory):
        return 1
    mc = run_monte_carlo(params, opts, args.trials)
    _emit_json(
        {
            "schema_version": SCHEMA_VERSION,
            "effective_config": effective,
            "certificate_passed": cert.passed,
            "montecarlo": mc,
        },
        args.out,
    )
    if mc["failures"]:
        print(f"{len(mc['failures'])} trial run(s) failed", file=sys.stderr)
        return 3
    return 0


def _add_common(sp, sim_flags: bool):
    sp.add_argument("--config", required=True, help="path to a .cfg file")
    sp.add_argument("--out", default=None,
                    help="write the JSON report here instead of stdout")
    if sim_flags:
        sp.add_argument("--seed", type=int, default=None,
                        help="override disturbance.seed")
        sp.add_argument("--duration", type=float, default=None,
                        help="override sim.duration")
        sp.add_argument("--exploratory", action="store_true",
                        help="simulate even when the certificate fails")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="etmpc",
        description="design, certify, and simulate integral event-triggered "
                    "receding-horizon control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cert = sub.add_parser("certify",
                            help="evaluate the design certificate")
    _add_common(p_cert, sim_flags=False)
    p_cert.set_defaults(func=_cmd_certify)

    p_sim = sub.add_parser("simulate", help="run one closed-loop simulation")
    _add_common(p_sim, sim_flags=True)
    p_sim.add_argument("--trigger", choices=list(TRIGGER_KINDS), default=None,
                       help="override trigger.kind")
    p_sim.add_argument("--trace", default=None,
                       help="write the step-by-step CSV trace here")
    p_sim.add_argument("--events", default=None,
                       help="write the event/violation JSON here")
    p_sim.add_argument("--plot-dir", dest="plot_dir", default=None,
                       help="write two-column plot data files here")
    p_sim.set_defaults(func=_cmd_simulate)

    p_cmp = sub.add_parser(
        "compare",
        help="run both triggering mechanisms on one disturbance realization",
    )
    _add_common(p_cmp, sim_flags=True)
    p_cmp.set_defaults(func=_cmd_compare)

    p_mc = sub.add_parser(
        "montecarlo",
        help="matched-pair seed sweep over both triggering mechanisms",
    )
    _add_common(p_mc, sim_flags=True)
    p_mc.add_argument("--trials", type=int, default=20,
                      help="number of disturbance realizations")
    p_mc.set_defaults(func=_cmd_montecarlo)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SynthesisError as e:
        print(f"config error: synthesis failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
