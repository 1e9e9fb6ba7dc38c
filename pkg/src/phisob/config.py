"""Strict TOML configuration for batch verification runs.

The format is sectioned key-value text with typed scalars and inline
tables (TOML).  Parsing is total: syntax errors surface with the
parser's line diagnostics, and any key outside the documented schema is
rejected with its table path.  All randomness downstream flows from the
single ``seed`` key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

from .phi_core import PhiFunction, builtin_phi
from .measures import (
    Atoms, Gaussian, Measure, Plan, PointMap, PoissonLaw, ScalarField,
    exponential_field, linear_field, tabulated_field, trig_field,
)


class ConfigError(ValueError):
    """Malformed configuration: carries the offending location."""


def _check_keys(table: dict, allowed: set, required: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(table)
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {sorted(missing)}")


def parse_phi(spec: dict, where: str = "phi") -> PhiFunction:
    _check_keys(spec, {"kind", "p", "a", "b", "c"}, {"kind"}, where)
    try:
        return builtin_phi(spec["kind"], p=spec.get("p"), a=spec.get("a"),
                           b=spec.get("b", 0.0), c=spec.get("c", 0.0))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_measure(spec: dict, where: str = "measure") -> Measure:
    _check_keys(spec, {"kind", "mean", "cov", "rate", "points", "weights"},
                {"kind"}, where)
    kind = spec["kind"]
    if kind == "gaussian":
        _check_keys(spec, {"kind", "mean", "cov"}, {"kind", "mean", "cov"}, where)
        return Gaussian(spec["mean"], spec["cov"])
    if kind == "poisson":
        _check_keys(spec, {"kind", "rate"}, {"kind", "rate"}, where)
        return PoissonLaw(spec["rate"])
    if kind == "atoms":
        _check_keys(spec, {"kind", "points", "weights"},
                    {"kind", "points", "weights"}, where)
        return Atoms(spec["points"], spec["weights"])
    raise ConfigError(f"{where}: unknown measure kind {kind!r}")


def parse_field(spec: dict, where: str = "f") -> ScalarField:
    _check_keys(spec, {"kind", "a", "b", "amp", "phase", "offset", "xs", "ys"},
                {"kind"}, where)
    kind = spec["kind"]
    if kind == "linear":
        return linear_field(spec.get("a", [1.0]), spec.get("b", 0.0))
    if kind == "exponential":
        return exponential_field(spec.get("a", [1.0]), spec.get("b", 0.0))
    if kind == "trigonometric":
        return trig_field(spec.get("a", [1.0]), amp=spec.get("amp", 1.0),
                          phase=spec.get("phase", 0.0), offset=spec.get("offset", 0.0))
    if kind == "tabulated":
        _check_keys(spec, {"kind", "xs", "ys"}, {"kind", "xs", "ys"}, where)
        return tabulated_field(spec["xs"], spec["ys"])
    raise ConfigError(f"{where}: unknown function kind {kind!r}")


def parse_map(spec: dict, where: str = "theta") -> PointMap:
    _check_keys(spec, {"kind", "factor", "amp"}, {"kind"}, where)
    kind = spec["kind"]
    if kind == "identity":
        return PointMap(1, 1, lambda x: x, name="identity")
    if kind == "scale":
        factor = float(spec.get("factor", 1.0))
        return PointMap(1, 1, lambda x: factor * x, name=f"scale({factor:g})")
    if kind == "sine":
        amp = float(spec.get("amp", 1.0))
        return PointMap(1, 1, lambda x: amp * np.sin(x), name=f"sine({amp:g})")
    raise ConfigError(f"{where}: unknown map kind {kind!r}")


def parse_plan(spec: dict, seed: int, where: str = "plan") -> Plan:
    _check_keys(spec, {"method", "order", "tail_tol", "n", "seed", "quad_tol"},
                {"method"}, where)
    method = spec["method"]
    if method not in ("auto", "exact_atoms", "gauss_hermite", "poisson_sum",
                      "monte_carlo", "adaptive"):
        raise ConfigError(f"{where}: unknown plan method {method!r}")
    return Plan(method=method, order=int(spec.get("order", 40)),
                tail_tol=float(spec.get("tail_tol", 1e-12)),
                n=int(spec.get("n", 200_000)), seed=int(spec.get("seed", seed)),
                quad_tol=float(spec.get("quad_tol", 1e-11)))


_INEQUALITY_KEYS = {
    "gaussian": {"phi", "mean", "cov", "f", "plan"},
    "poisson": {"phi", "rate", "f", "plan"},
    "levy": {"phi", "rate", "jumps", "jump_weights", "t", "f", "plan"},
    "brownian_multitime": {"phi", "times", "f", "plan"},
    "levy_multitime": {"phi", "rate", "jumps", "jump_weights", "times", "f", "plan"},
    "tensorisation": {"phi", "factors", "f", "plan"},
    "convolution": {"phi", "factors", "constants", "f", "plan"},
    "pushforward": {"phi", "base", "c", "theta", "sqrt_alpha", "f", "plan"},
    "perturbation": {"phi", "base", "c", "B", "f", "plan"},
    "beckner": {"base", "rho", "f", "plan"},
    "poisson_l1": {"rate", "t", "f", "plan"},
}


@dataclass
class InequalityEntry:
    name: str
    kind: str
    spec: dict
    plan: Plan


@dataclass
class RunConfig:
    seed: int = 0
    tol_abs: float = 1e-7
    tol_rel: float = 1e-6
    inequalities: list = field(default_factory=list)


def load_config(path) -> RunConfig:
    """Parse and validate a batch-verification configuration file."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    _check_keys(raw, {"seed", "tolerances", "inequality"}, set(), str(path))
    cfg = RunConfig(seed=int(raw.get("seed", 0)))
    tols = raw.get("tolerances", {})
    _check_keys(tols, {"abs", "rel"}, set(), f"{path}:tolerances")
    cfg.tol_abs = float(tols.get("abs", 1e-7))
    cfg.tol_rel = float(tols.get("rel", 1e-6))
    for i, entry in enumerate(raw.get("inequality", [])):
        where = f"{path}:inequality[{i}]"
        _check_keys(entry, {"name", "kind"} | set().union(*_INEQUALITY_KEYS.values()),
                    {"name", "kind"}, where)
        kind = entry["kind"]
        if kind not in _INEQUALITY_KEYS:
            raise ConfigError(f"{where}: unknown inequality kind {kind!r}")
        allowed = _INEQUALITY_KEYS[kind] | {"name", "kind"}
        _check_keys(entry, allowed, {"name", "kind"}, where)
        plan = parse_plan(entry.get("plan", {"method": "auto"}), cfg.seed,
                          f"{where}.plan")
        cfg.inequalities.append(InequalityEntry(entry["name"], kind, entry, plan))
    return cfg


def run_entry(entry: InequalityEntry, seed: int):
    """Dispatch one configured inequality to its verifier."""
    from . import verify as V

    spec = entry.spec
    where = f"inequality {entry.name!r}"
    kind = entry.kind
    plan = entry.plan
    f = parse_field(spec["f"], f"{where}.f") if "f" in spec else None
    if kind == "gaussian":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        return V.verify_gaussian(phi, spec["mean"], spec["cov"], f, plan)
    if kind == "poisson":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        return V.verify_poisson(phi, float(spec["rate"]), f, plan)
    if kind == "levy":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        nu = Atoms(spec["jumps"], spec["jump_weights"])
        return V.verify_levy(phi, float(spec["rate"]), nu, float(spec["t"]), f, plan)
    if kind == "brownian_multitime":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        return V.verify_brownian_multitime(phi, spec["times"], f, plan)
    if kind == "levy_multitime":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        nu = Atoms(spec["jumps"], spec["jump_weights"])
        return V.verify_levy_multitime(phi, float(spec["rate"]), nu,
                                       spec["times"], f, plan)
    if kind == "tensorisation":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        factors = [parse_measure(m, f"{where}.factors[{j}]")
                   for j, m in enumerate(spec["factors"])]
        return V.verify_tensorisation(phi, factors, f, plan)
    if kind == "convolution":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        factors = [parse_measure(m, f"{where}.factors[{j}]")
                   for j, m in enumerate(spec["factors"])]
        constants = [float(c) for c in spec["constants"]]
        if len(constants) != len(factors):
            raise ConfigError(f"{where}: factors/constants length mismatch")
        return V.verify_convolution(phi, list(zip(factors, constants)), f, plan,
                                    seed=seed)
    if kind == "pushforward":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        base = parse_measure(spec["base"], f"{where}.base")
        theta = parse_map(spec["theta"], f"{where}.theta")
        return V.verify_pushforward(phi, base, float(spec["c"]), theta,
                                    float(spec["sqrt_alpha"]), f, plan, seed=seed)
    if kind == "perturbation":
        phi = parse_phi(spec["phi"], f"{where}.phi")
        base = parse_measure(spec["base"], f"{where}.base")
        B = parse_field(spec["B"], f"{where}.B")
        return V.verify_perturbation(phi, base, float(spec["c"]), B, f, plan)
    if kind == "beckner":
        base = parse_measure(spec["base"], f"{where}.base")
        return V.verify_beckner(base, float(spec["rho"]), f, plan)
    if kind == "poisson_l1":
        return V.poisson_l1_lsi(float(spec["rate"]), float(spec["t"]), f, plan)
    raise ConfigError(f"{where}: unhandled kind {kind!r}")
