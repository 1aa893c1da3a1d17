"""
Command-line front end.

Usage::

    hybridsim simulate --preset example2-violation --out traj.csv
    hybridsim taylor --config scenario.json
    hybridsim sweep --config sweep.json --out rows.csv

Every subcommand reads a JSON scenario (``--config``) and/or a named preset
(``--preset``); keys given in the config replace the preset's sections.
The machine-readable result goes to stdout as one JSON object; errors go
to stderr as one JSON line and set the exit code:

    0 success, 1 configuration error, 2 invalid initial state,
    3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dynamics import (
    CLOSURES,
    IntegrationError,
    IntegratorConfig,
    InvalidStateError,
    detect_zero_crossing,
    integrate,
)
from .expansions import (
    ConvergenceError,
    CorrelatedInitialData,
    ExpansionCoefficients,
    ExpansionError,
    closed_form_expansion,
    expansion_general_linear,
    expansion_single_dof,
    max_relative_error,
    numeric_taylor,
    t_star_bound_general,
    t_star_bound_quadratic,
)
from .koopman import (
    KoopmanCoupling,
    KoopmanError,
    KoopmanState,
    backreaction_deviation,
    constrained_coupling,
    growth_exponent,
    koopman_integrate,
)
from .oracle import OracleError, compare_with_hierarchy, default_threads, oracle_supported
from .potentials import PRESETS, PolynomialPotential, PotentialError, ScenarioParams, preset
from .states import GaussianStateSpec, StateError, hur_from_covariance, symplectic_check

MODES = ("simulate", "taylor", "koopman", "oracle", "check-state", "sweep")
SHORTHAND_KEYS = ("z1", "z2", "y1", "y2", "qp0", "qx0")
MEAN_KEYS = ("q0", "p0", "x0", "k0")
TOP_KEYS = {"preset", "mode", "potential", "initial", "integrator", "output_path",
            "allow_invalid_state", "taylor", "koopman", "oracle", "sweep"}

EXIT_OK, EXIT_CONFIG, EXIT_INVALID_STATE, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _strict(data, allowed, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return data


# ---------------------------------------------------------------------------
# Scenario presets
# ---------------------------------------------------------------------------

SCENARIO_PRESETS = {
    "vacuum-decoupled": {
        "potential": {"preset": "quadratic", "params": {"alpha": 1.0, "classical_quadratic": 1.0}},
        "initial": {"means": {"q": 0.0, "p": 0.0, "x": 0.0, "k": 0.0},
                    "cov": [[0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 0.5, 0], [0, 0, 0, 0.5]]},
        "integrator": {"dt": 1e-3, "steps": 10000, "order_cap": 4, "record_every": 10},
    },
    "example1": {
        "potential": {"preset": "example1",
                      "params": {"alpha": 1.0, "beta1": 0.5, "beta2": 0.3, "gamma1": 0.4, "gamma2": 0.2}},
        "initial": {"z1": 0.1, "z2": 0.1, "y1": 0.1, "y2": 0.1,
                    "means": {"q": 0.5, "p": -0.5, "x": 0.5, "k": -0.5}},
        "integrator": {"dt": 1e-3, "steps": 2000, "order_cap": 10, "record_every": 10},
    },
    "example2": {
        "potential": {"preset": "example2", "params": {"alpha": 1.0, "beta1": -1.0, "beta2": 2.0}},
        "initial": {"z1": 0.1, "z2": 0.1, "y1": 0.1, "y2": 0.1,
                    "means": {"q": -1.0, "p": -3.0, "x": 1.0, "k": -1.0}},
        "integrator": {"dt": 1e-3, "steps": 1000, "order_cap": 8, "record_every": 10},
    },
    # Pinned violation scenario: q0, p0, k0 < 0 and beta1 < 0 with positive
    # initial QQ and QC correlations.
    "example2-violation": {
        "potential": {"preset": "example2",
                      "params": {"alpha": 1.0, "classical_quadratic": 1.0, "beta1": -1.0, "beta2": 2.0}},
        "initial": {"z1": 0.1, "z2": 0.1, "y1": 0.1, "y2": 0.1, "qp0": 0.1, "qx0": 0.1,
                    "means": {"q": -1.0, "p": -3.0, "x": 1.0, "k": -1.0}},
        "integrator": {"dt": 1e-4, "steps": 11000, "order_cap": 8, "record_every": 10},
    },
    # Bilinear coupling with a strongly squeezed classical position; the
    # quadratic-case radicand is positive.  No valid state can violate under
    # a quadratic Hamiltonian, so this state is deliberately outside the
    # symplectic bound.
    "quadratic-violation": {
        "potential": {"preset": "quadratic",
                      "params": {"alpha": 1.0, "classical_quadratic": 1.0, "beta1": -0.5, "gamma1": 1.0}},
        "initial": {"z1": 0.1, "z2": 0.1, "y1": -0.49, "y2": 1.0, "qp0": 0.1, "qx0": 0.09,
                    "means": {"q": 0.0, "p": 0.0, "x": 0.0, "k": 0.0}},
        "integrator": {"dt": 1e-3, "steps": 6000, "order_cap": 2, "record_every": 10},
        "allow_invalid_state": True,
    },
}

TAYLOR_DEFAULTS = {"order": None, "h": 1e-2, "dt": 1e-4}
KOOPMAN_DEFAULTS = {"state": {"xbar": 1.0, "omega_q": 1.0, "omega_c": 1.0}, "coupling": {"a1x": 0.1},
                    "constrained": True, "dt": 1e-3, "steps": 100_000, "record_every": 100}
ORACLE_DEFAULTS = {"count": 100_000, "times": [0.1, 0.5, 1.0], "seed": 0}
SWEEP_KEYS = {"grid"}


# ---------------------------------------------------------------------------
# Parsed configuration
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    potential: PolynomialPotential
    initial: GaussianStateSpec
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    mode: str = "simulate"
    output_path: str | None = None
    potential_preset: str = "custom"
    params: ScenarioParams | None = None
    init_data: CorrelatedInitialData | None = None
    allow_invalid_state: bool = False
    taylor: dict = field(default_factory=lambda: dict(TAYLOR_DEFAULTS))
    koopman: dict = field(default_factory=lambda: copy.deepcopy(KOOPMAN_DEFAULTS))
    oracle: dict = field(default_factory=lambda: dict(ORACLE_DEFAULTS))
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = _strict(data, TOP_KEYS, "config")
        name = data.get("preset")
        if name is not None:
            if name not in SCENARIO_PRESETS:
                raise ConfigError(f"unknown scenario preset {name!r}; choose from {sorted(SCENARIO_PRESETS)}")
            merged = copy.deepcopy(SCENARIO_PRESETS[name])
            merged.update({k: v for k, v in data.items() if k != "preset"})
            data = merged
        for key in ("potential", "initial"):
            if key not in data:
                raise ConfigError(f"config needs a '{key}' section (or a preset)")

        pot_name, params, pot = _parse_potential(data["potential"])
        spec, init = _parse_initial(data["initial"])
        integ = _parse_integrator(data.get("integrator", {}))
        mode = data.get("mode", "simulate")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        allow = data.get("allow_invalid_state", False)
        if not isinstance(allow, bool):
            raise ConfigError("allow_invalid_state must be true or false")
        out = data.get("output_path")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_path must be a string")
        taylor = dict(TAYLOR_DEFAULTS, **_strict(data.get("taylor", {}), TAYLOR_DEFAULTS, "taylor"))
        koop = copy.deepcopy(KOOPMAN_DEFAULTS)
        koop.update(_strict(data.get("koopman", {}), KOOPMAN_DEFAULTS, "koopman"))
        orc = dict(ORACLE_DEFAULTS, **_strict(data.get("oracle", {}), ORACLE_DEFAULTS, "oracle"))
        sweep = _strict(data.get("sweep", {}), SWEEP_KEYS, "sweep")
        return cls(pot, spec, integ, mode, out, pot_name, params, init, allow, taylor, koop, orc, sweep)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        if self.potential_preset == "custom":
            pot = self.potential.to_dict()
        else:
            pot = {"preset": self.potential_preset, "params": self.params.to_dict()}
        if self.init_data is not None:
            d = self.init_data
            initial = {k: getattr(d, k) for k in SHORTHAND_KEYS}
            initial["means"] = {"q": d.q0, "p": d.p0, "x": d.x0, "k": d.k0}
        else:
            initial = self.initial.to_dict()
        integ = {f.name: getattr(self.integrator, f.name) for f in fields(self.integrator)}
        out = {"mode": self.mode, "potential": pot, "initial": initial, "integrator": integ,
               "allow_invalid_state": self.allow_invalid_state, "taylor": dict(self.taylor),
               "koopman": copy.deepcopy(self.koopman), "oracle": dict(self.oracle)}
        if self.output_path is not None:
            out["output_path"] = self.output_path
        if self.sweep:
            out["sweep"] = copy.deepcopy(self.sweep)
        return out


def _parse_potential(data):
    if not isinstance(data, dict):
        raise ConfigError("potential must be a JSON object")
    name = data.get("preset", "custom")
    if name == "custom":
        _strict(data, {"preset", "coeffs"}, "potential")
        if "coeffs" not in data:
            raise ConfigError("custom potential needs 'coeffs'")
        return "custom", None, PolynomialPotential.from_dict({"coeffs": data["coeffs"]})
    if name not in PRESETS:
        raise ConfigError(f"unknown potential preset {name!r}; choose from {sorted(PRESETS) + ['custom']}")
    _strict(data, {"preset", "params"}, "potential")
    raw = _strict(data.get("params", {}), {f.name for f in fields(ScenarioParams)}, "potential.params")
    params = ScenarioParams(**raw)
    return name, params, preset(name, params)


def _parse_initial(data):
    if not isinstance(data, dict):
        raise ConfigError("initial must be a JSON object")
    shorthand = [k for k in SHORTHAND_KEYS if k in data]
    if "cov" in data:
        if shorthand:
            raise ConfigError(f"initial mixes explicit 'cov' with shorthand keys {shorthand}")
        return GaussianStateSpec.from_dict(data), None
    _strict(data, set(SHORTHAND_KEYS) | {"means"}, "initial")
    means = _strict(data.get("means", {}), {"q", "p", "x", "k"}, "initial.means")
    values = {k: float(data.get(k, 0.0)) for k in SHORTHAND_KEYS}
    init = CorrelatedInitialData(**values, **{m + "0": float(means.get(m, 0.0)) for m in "qpxk"})
    return init.to_spec(), init


def _parse_integrator(data):
    data = _strict(data, {f.name for f in fields(IntegratorConfig)}, "integrator")
    if "closure" in data and data["closure"] not in CLOSURES:
        raise ConfigError(f"closure must be one of {CLOSURES}")
    return IntegratorConfig(**data)


# ---------------------------------------------------------------------------
# Mode runners; each returns the summary dict
# ---------------------------------------------------------------------------


def _closed_form(cfg: ScenarioConfig) -> ExpansionCoefficients | None:
    init = cfg.init_data
    if init is None:
        return None
    if cfg.potential_preset in ("example1", "example2", "quadratic"):
        return closed_form_expansion(cfg.potential_preset, cfg.params, init)
    if not cfg.potential.depends_on_x() and init.uncorrelated:
        return expansion_single_dof(cfg.potential, init)
    return expansion_general_linear(cfg.potential, init)


def _t_star_bound(cfg: ScenarioConfig) -> float | None:
    init = cfg.init_data
    if init is None or cfg.params is None:
        return None
    if cfg.potential_preset == "example2":
        return t_star_bound_general(init, cfg.params)
    if cfg.potential_preset == "quadratic":
        return t_star_bound_quadratic(init, cfg.params.beta1 * cfg.params.gamma1)
    return None


def _ensure_valid(cfg: ScenarioConfig):
    if not cfg.allow_invalid_state and not symplectic_check(cfg.initial.cov).valid:
        raise InvalidStateError("initial covariance fails the symplectic positivity check")


def run_simulate(cfg: ScenarioConfig) -> dict:
    _ensure_valid(cfg)
    traj = integrate(cfg.initial, cfg.potential, cfg.integrator, allow_invalid_state=True)
    if cfg.output_path:
        traj.to_csv(cfg.output_path)
    t_star = detect_zero_crossing(traj)
    bound = _t_star_bound(cfg)
    return {
        "mode": "simulate",
        "t_star": t_star,
        "t_star_bound": bound,
        "t_star_within_bound": (None if t_star is None or bound is None else bool(t_star <= bound)),
        "f0": float(traj.f[0]),
        "f_min": float(np.min(traj.f)),
        "all_valid": bool(np.all(traj.valid)),
        "samples": len(traj),
        "csv": cfg.output_path,
        "scenario": cfg.to_dict(),
    }


def run_taylor(cfg: ScenarioConfig) -> dict:
    closed = _closed_form(cfg)
    order = cfg.taylor["order"]
    if order is None:
        order = 3 if closed is None else max(closed.order, 2)
    est = numeric_taylor(cfg.initial, cfg.potential, order=int(order), h=float(cfg.taylor["h"]),
                         dt=float(cfg.taylor["dt"]), closure=cfg.integrator.closure)
    err = None
    if closed is not None:
        n = min(len(closed), len(est.coefficients))
        err = max_relative_error(ExpansionCoefficients(closed.c[:n]), est.coefficients)
    return {
        "mode": "taylor",
        "closed_form": None if closed is None else list(closed.c),
        "numeric": list(est.coefficients.c),
        "max_rel_err": err,
        "converged": est.converged,
        "scenario": cfg.to_dict(),
    }


def _koopman_inputs(k: dict):
    state = KoopmanState(**_strict(k["state"], {f.name for f in fields(KoopmanState)}, "koopman.state"))
    raw = _strict(k["coupling"], {f.name for f in fields(KoopmanCoupling)}, "koopman.coupling")
    if k["constrained"] and not any(key.startswith("b") for key in raw):
        coupling = constrained_coupling(**raw)
    else:
        coupling = KoopmanCoupling(**raw)
    return state, coupling


def run_koopman(cfg: ScenarioConfig) -> dict:
    k = cfg.koopman
    state, coupling = _koopman_inputs(k)
    constrained = bool(k["constrained"])
    traj = koopman_integrate(state, coupling, float(k["dt"]), int(k["steps"]), constrained=constrained,
                             record_every=int(k["record_every"]))
    if cfg.output_path:
        traj.to_csv(cfg.output_path)
    exponent = None
    if traj.t[-1] >= 100.0:
        exponent = growth_exponent(traj)
    deviation = backreaction_deviation(state, coupling, float(k["dt"]), int(k["steps"]), constrained=constrained)
    return {
        "mode": "koopman",
        "E_q_final": float(traj.E_q[-1]),
        "E_q_max": float(np.max(traj.E_q)),
        "E_c_final": float(traj.E_c[-1]),
        "growth_exponent": exponent,
        "backreaction_deviation": deviation,
        "csv": cfg.output_path,
        "scenario": cfg.to_dict(),
    }


def run_oracle(cfg: ScenarioConfig) -> dict:
    if not oracle_supported(cfg.potential):
        raise ConfigError("oracle mode needs a potential at most quadratic in q")
    _ensure_valid(cfg)
    o = cfg.oracle
    cmp = compare_with_hierarchy(cfg.initial, cfg.potential, o["times"], count=int(o["count"]),
                                 seed=int(o["seed"]), dt=cfg.integrator.dt, order_cap=cfg.integrator.order_cap,
                                 closure=cfg.integrator.closure, allow_invalid_state=True)
    if cfg.output_path:
        cmp.to_csv(cfg.output_path)
    dev = cmp.deviations_in_se()
    return {
        "mode": "oracle",
        "t": cmp.t.tolist(),
        "deviation_in_se": [None if not math.isfinite(v) else float(v) for v in dev],
        "csv": cfg.output_path,
        "scenario": cfg.to_dict(),
    }


def run_check_state(cfg: ScenarioConfig) -> dict:
    rep = symplectic_check(cfg.initial.cov)
    return {
        "mode": "check-state",
        "valid": rep.valid,
        "symplectic_eigenvalues": list(rep.symplectic_eigenvalues),
        "min_principal_minor": rep.min_principal_minor,
        "f0": hur_from_covariance(cfg.initial.cov),
        "scenario": cfg.to_dict(),
    }


SWEEP_COLUMNS_TAIL = ("f0", "c1", "c2", "t_star_measured", "t_star_bound")
_INIT_FIELDS = set(SHORTHAND_KEYS) | set(MEAN_KEYS)
_PARAM_FIELDS = {f.name for f in fields(ScenarioParams)}


def _sweep_point(cfg: ScenarioConfig, assignment: dict) -> dict:
    init = replace(cfg.init_data, **{k: v for k, v in assignment.items() if k in _INIT_FIELDS})
    params = replace(cfg.params, **{k: v for k, v in assignment.items() if k in _PARAM_FIELDS})
    point = replace(cfg, init_data=init, params=params, initial=init.to_spec(),
                    potential=preset(cfg.potential_preset, params))
    closed = _closed_form(point)
    if closed is None or len(closed) < 3:
        est = numeric_taylor(point.initial, point.potential, order=2, closure=cfg.integrator.closure)
        c = est.coefficients
    else:
        c = closed
    t_star = None
    if cfg.allow_invalid_state or symplectic_check(point.initial.cov).valid:
        traj = integrate(point.initial, point.potential, cfg.integrator, allow_invalid_state=True,
                         truncate_on_failure=True)
        t_star = detect_zero_crossing(traj)
    return {**assignment, "f0": c[0], "c1": c[1], "c2": c[2],
            "t_star_measured": t_star, "t_star_bound": _t_star_bound(point)}


def run_sweep(cfg: ScenarioConfig) -> tuple[dict, str]:
    grid = cfg.sweep.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep needs a non-empty 'grid' object")
    if len(grid) > 2:
        raise ConfigError("sweep grid may name at most two parameters")
    if cfg.init_data is None or cfg.potential_preset == "custom":
        raise ConfigError("sweep needs a named potential preset and shorthand initial data")
    names = list(grid)
    for n in names:
        if n not in _INIT_FIELDS | _PARAM_FIELDS:
            raise ConfigError(f"cannot sweep unknown parameter {n!r}")
        if not isinstance(grid[n], list) or not grid[n]:
            raise ConfigError(f"grid values for {n!r} must be a non-empty list")
    try:
        points = [dict(zip(names, (float(v) for v in combo))) for combo in itertools.product(*grid.values())]
    except (TypeError, ValueError):
        raise ConfigError("grid values must be numbers") from None
    with ThreadPoolExecutor(default_threads()) as pool:
        rows = list(pool.map(lambda a: _sweep_point(cfg, a), points))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names + list(SWEEP_COLUMNS_TAIL))
    for r in rows:
        writer.writerow(["" if r[c] is None else format(float(r[c]), ".17g") for c in names + list(SWEEP_COLUMNS_TAIL)])
    text = buf.getvalue()
    if cfg.output_path:
        with open(cfg.output_path, "w", newline="") as fh:
            fh.write(text)
    return {"mode": "sweep", "rows": rows, "csv": cfg.output_path, "scenario": cfg.to_dict()}, text


RUNNERS = {
    "simulate": run_simulate,
    "taylor": run_taylor,
    "koopman": run_koopman,
    "oracle": run_oracle,
    "check-state": run_check_state,
}


def run(cfg: ScenarioConfig) -> dict:
    """Execute ``cfg.mode`` and return its summary (exceptions propagate)."""
    if cfg.mode == "sweep":
        return run_sweep(cfg)[0]
    return RUNNERS[cfg.mode](cfg)


# ---------------------------------------------------------------------------
# argparse entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridsim", description="Hybrid classical-quantum moment simulator")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", metavar="PATH", help="JSON scenario file")
        p.add_argument("--preset", choices=sorted(SCENARIO_PRESETS), help="named scenario")
        p.add_argument("--out", metavar="PATH", help="CSV output path")
        p.add_argument("--seed", type=int, help="Monte Carlo seed")
        p.add_argument("--allow-invalid-state", action="store_true")
        p.add_argument("--order-cap", type=int, metavar="M")
        p.add_argument("--dt", type=float, metavar="X")
        p.add_argument("--steps", type=int, metavar="N")
    return parser


def _load_config(args) -> ScenarioConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if args.preset:
        if data.get("preset") not in (None, args.preset):
            raise ConfigError("--preset conflicts with the config's preset")
        data["preset"] = args.preset
    if not data:
        raise ConfigError("give --config or --preset")
    if data.get("mode", args.mode) != args.mode:
        raise ConfigError(f"config mode {data['mode']!r} does not match subcommand {args.mode!r}")
    data["mode"] = args.mode
    cfg = ScenarioConfig.from_dict(data)
    overrides = {k: v for k, v in (("dt", args.dt), ("steps", args.steps), ("order_cap", args.order_cap))
                 if v is not None}
    if overrides:
        cfg.integrator = replace(cfg.integrator, **overrides)
    if args.out:
        cfg.output_path = args.out
    if args.seed is not None:
        cfg.oracle["seed"] = args.seed
    if args.allow_invalid_state:
        cfg.allow_invalid_state = True
    return cfg


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    sys.stderr.write(json.dumps({"error": kind, "reason": msg, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        summary = run(cfg)
    except InvalidStateError as exc:
        return _fail("invalid_state", exc, EXIT_INVALID_STATE)
    except (IntegrationError, OracleError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("numerical_failure", exc, EXIT_NUMERICAL)
    except (ConfigError, StateError, PotentialError, ExpansionError, KoopmanError,
            ValueError, TypeError, KeyError) as exc:
        return _fail("config_error", exc, EXIT_CONFIG)
    sys.stdout.write(json.dumps(summary, default=_json_default) + "\n")
    if summary.get("mode") == "check-state" and not summary["valid"] and not cfg.allow_invalid_state:
        return EXIT_INVALID_STATE
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
