"""Command line front end.

Every subcommand reads an optional flat ``key = value`` config file; command
line options override it.  Exit codes: 0 pass, 1 numerical failure, 2 config
error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .normal_form import _jsonable

DEFAULTS = {
    "N": 16, "a": 0.0, "b": 0.0, "r": 1, "R": 0.12, "rho": None,
    "eps": None, "delta": None, "T": None, "dt": 0.05, "samples": 8, "rng_seed": 0,
    "order": 8, "stride": None, "C_T": 1.0, "kind": "kg-breather", "min_periods": 0.0,
    "n_R": 4, "n_dirs": 4, "strict": True, "kg": False, "perturbation": 0.0, "out": "out",
}
TYPES = {
    "N": int, "r": int, "samples": int, "rng_seed": int, "order": int, "stride": int,
    "n_R": int, "n_dirs": int, "kind": str, "out": str, "R": str,
}


class ConfigError(ValueError):
    pass


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def resolve_config(file_values: dict, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for k, v in merged.items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}")
        if k in ("strict", "kg"):
            cfg[k] = _bool(v)
            continue
        typ = TYPES.get(k, float)
        try:
            cfg[k] = typ(v)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    return cfg


def parse_R(text: str, n: int):
    """'0.12' -> [0.12]; '0.06:0.12' -> n evenly spaced values."""
    if ":" in text:
        lo, hi = (float(s) for s in text.split(":"))
        return [float(v) for v in np.linspace(lo, hi, n)]
    return [float(text)]


def _params(cfg):
    from .model import ChainParams

    try:
        return ChainParams(cfg["N"], cfg["a"], cfg["b"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_admissible(consts, cfg):
    if cfg["strict"] and not consts.admissible:
        raise ConfigError(
            f"condition r < r_*(mu) violated: r={consts.r}, r_*={consts.r_star:.4g}; set strict = 0 to override")


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# --- subcommands ---------------------------------------------------------------------


def cmd_params(cfg) -> int:
    from .normal_form import constants, f_mu
    from .quad_normal_form import build_A, split_H0, transform_H1

    p = _params(cfg)
    rates = p.rates
    A = build_A(p.a, p.N)
    quad = split_H0(A, sigma0=rates.sigma0)
    quart = transform_H1(A, p.b, sigma1=rates.sigma1)
    C_h1 = max(p.h1_constant, quart.decay_constant)
    consts = constants(cfg["r"], p.mu, quad.C_zeta0, C_h1, quad.omega, rates.sigma1, rates.sigma_star, strict=False)
    ledger = {
        "N": p.N, "a": p.a, "b": p.b, "c": p.c, "mu": p.mu, "f_mu": f_mu(p.mu), "Omega": quad.omega,
        "rates": rates.__dict__, "C_zeta0": quad.C_zeta0, "C_h1": C_h1, "constants": json.loads(consts.to_json()),
    }
    _write(os.path.join(cfg["out"], "params.json"), _dump(ledger))
    return 0


def cmd_normal_form(cfg) -> int:
    from .normal_form import build_normal_form
    from .quad_normal_form import build_A, decay_report

    p = _params(cfg)
    bundle = build_normal_form(p, cfg["r"])
    _check_admissible(bundle.consts, cfg)
    bundle.save(os.path.join(cfg["out"], "bundle"))
    rep = json.loads(decay_report(build_A(p.a, p.N)))
    rep["decay_ratios"] = bundle.decay_ratios()
    _write(os.path.join(cfg["out"], "decay_report.json"), _dump(rep))
    return 0


def _rho(cfg) -> float:
    return cfg["rho"] if cfg["rho"] is not None else float(cfg["R"]) / 6.0


def cmd_breather(cfg) -> int:
    from .breathers import continue_gdnls_breather, continue_kg_breather

    p = _params(cfg)
    R = float(cfg["R"])
    gb = continue_gdnls_breather(_rho(cfg), p.a, p.b, cfg["r"], p.N)
    _check_admissible(gb.bundle.consts, cfg)
    _write(os.path.join(cfg["out"], "gdnls_profile.csv"), gb.profile_csv())
    _write(os.path.join(cfg["out"], "gdnls_path.jsonl"), gb.log_jsonl())
    summary = {"rho": gb.rho, "lambda": gb.lam, "frequency": gb.frequency, "period": gb.period,
               "residual": gb.residual, "bifurcations": gb.bifurcations}
    if cfg["kg"]:
        kb = continue_kg_breather(R, p.a, p.b, cfg["r"], p.N, gdnls=gb)
        _write(os.path.join(cfg["out"], "kg_profile.csv"), kb.profile_csv())
        summary["kg"] = {"period": kb.period, "residual": kb.residual, "flags": kb.flags,
                         "monodromy_abs": np.abs(kb.monodromy_eigs).tolist()}
    _write(os.path.join(cfg["out"], "breather.json"), _dump(summary))
    return 0


def cmd_evolve(cfg) -> int:
    from .breathers import continue_gdnls_breather, kg_anchor
    from .diagnostics import drift_monitor
    from .dynamics import integrate_full

    p = _params(cfg)
    R = float(cfg["R"])
    gb = continue_gdnls_breather(_rho(cfg), p.a, p.b, cfg["r"], p.N)
    _check_admissible(gb.bundle.consts, cfg)
    z0 = kg_anchor(gb)
    if cfg["perturbation"] > 0:
        rng = np.random.default_rng(cfg["rng_seed"])
        d = rng.normal(size=z0.size)
        z0 = z0 + cfg["perturbation"] * d / np.linalg.norm(d)
    T = 100.0 if cfg["T"] is None else cfg["T"]
    traj = integrate_full(z0, p, T, cfg["dt"], stride=cfg["stride"] or 20, order=cfg["order"])
    _write(os.path.join(cfg["out"], "trajectory.csv"), traj.to_csv())
    rep = drift_monitor(traj, gb.bundle, R)
    _write(os.path.join(cfg["out"], "drift.dat"), rep.to_dat())
    _write(os.path.join(cfg["out"], "evolve.json"), _dump({
        "rng_seed": cfg["rng_seed"], "max_energy_error": float(traj.invariants["max_energy_error"]),
        "drift_rate": rep.rate, "bound_ratio": rep.ratio, "escape_time": rep.escape_time}))
    return 0


def cmd_stability(cfg) -> int:
    from .diagnostics import check_stability_preconditions, stability_experiment

    R = float(cfg["R"])
    eps = cfg["eps"] if cfg["eps"] is not None else R * R / 20
    delta = cfg["delta"] if cfg["delta"] is not None else eps / 10
    try:
        check_stability_preconditions(R, eps, delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    p = _params(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = stability_experiment(cfg["kind"], cfg["r"], R, eps, delta, p.a, cfg["samples"], cfg["rng_seed"],
                                   p.N, p.b, C_T=cfg["C_T"], order=cfg["order"], min_periods=cfg["min_periods"])
    _write(os.path.join(cfg["out"], "stability.json"), rep.to_json())
    return 0 if rep.all_passed else 1


def cmd_scaling(cfg) -> int:
    from .diagnostics import drift_scaling
    from .normal_form import build_normal_form

    p = _params(cfg)
    Rs = parse_R(cfg["R"], cfg["n_R"])
    if len(Rs) < 2:
        raise ConfigError("scaling needs an R range lo:hi")
    bundle = build_normal_form(p, cfg["r"])
    _check_admissible(bundle.consts, cfg)
    T = 1000.0 if cfg["T"] is None else cfg["T"]
    rep = drift_scaling(cfg["r"], Rs, p.a, p.N, T, cfg["dt"], cfg["n_dirs"], cfg["rng_seed"],
                        cfg["order"], cfg["stride"] or 40, bundle=bundle)
    _write(os.path.join(cfg["out"], "scaling.csv"), rep.to_csv())
    return 0


COMMANDS = {
    "params": cmd_params, "normal-form": cmd_normal_form, "breather": cmd_breather,
    "evolve": cmd_evolve, "stability": cmd_stability, "scaling": cmd_scaling,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpukg", description="Resonant normal forms and breathers of the FPU-KG chain")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file")
        for key in DEFAULTS:
            sp.add_argument(f"--{key}", dest=key, default=None)
    return ap


def run(argv=None) -> int:
    from .breathers import ContinuationThresholdError, ShootingError
    from .dynamics import BlowUpError, StepSizeError
    from .normal_form import ConsistencyError, FlowToleranceError, OrderTooHighError
    from .quad_normal_form import ConstructionError, DefinitenessError, TailBoundError

    args = build_parser().parse_args(argv)
    over = {k: getattr(args, k) for k in DEFAULTS}
    try:
        fvals = read_config(args.config) if args.config else {}
        cfg = resolve_config(fvals, over)
        return COMMANDS[args.command](cfg)
    except (ConfigError, OrderTooHighError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ContinuationThresholdError, ShootingError, BlowUpError, StepSizeError, ConsistencyError,
            FlowToleranceError, ConstructionError, DefinitenessError, TailBoundError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
