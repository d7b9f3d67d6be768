"""Run configuration: TOML parsing and validation.

Grammar (all keys other than those listed are rejected)::

    dimension = 2                 # required
    solver = "grid"               # grid | ssa | both
    seed = 0
    out = "runs/example"          # output directory (``--out`` overrides)

    [kernel]                      # required
    type = "brownian"             # constant | brownian | product_envelope | multiplicative | table
    # constant: value, c_u; brownian: c_u, theta1, theta2;
    # product_envelope: theta1, theta2, c_u; table: table, c_u, theta1, theta2

    [grid]                        # required (the particle solver bins onto it)
    N = 64
    truncation = "closed"         # closed | open
    dt = 0.01
    output_every = 10

    [time]                        # required
    t_end = 1.0

    [ssa]
    volume = 1e5
    replicas = 32

    [[init]]                      # at least one atom
    point = [1, 0]
    weight = 1.0

    [[source]]                    # optional
    point = [1, 0]
    weight = 0.1

    [[diagnostics]]               # optional, see DIAGNOSTICS for types and params
    type = "mass_conservation"
    tol = 1e-8
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field

from . import kernels
from .errors import ConfigError
from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure, to_lattice
from .solver_grid import GridSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOP_KEYS = {"dimension", "solver", "seed", "out", "kernel", "grid", "time", "ssa",
            "init", "source", "diagnostics"}
GRID_KEYS = {"N", "truncation", "dt", "output_every"}
SSA_KEYS = {"volume", "replicas"}
SOLVERS = ("grid", "ssa", "both")

KERNEL_KEYS = {
    "constant": {"value", "c_u"},
    "brownian": {"c_u", "theta1", "theta2"},
    "product_envelope": {"theta1", "theta2", "c_u"},
    "multiplicative": set(),
    "table": {"table", "c_u", "theta1", "theta2"},
}

# diagnostic type -> default parameters (None marks a required parameter)
DIAGNOSTICS = {
    "mass_conservation": {"tol": 1e-8},
    "sublinear_moment": {"alpha": None, "beta": None, "tol": 1e-8},
    "phi_moment": {"alpha": None, "power": 2.0, "tol": 1e-8},
    "time_lipschitz": {"ratio_tol": 2.0},
    "weak_residual": {"cap": 2.0, "C": 1.0},
    "localisation": {"delta": 0.5, "gamma": None, "t_ref": 1.0, "tol": 1e-10},
    "uniqueness": {"nsigma": 3.0},
    "higher_moments": {"exponents": [2.0, 3.0]},
}
OPTIONAL_NONE = {("localisation", "gamma")}
POSITIVE_PARAMS = {"tol", "ratio_tol", "C", "nsigma", "cap", "delta", "t_ref"}


@dataclass(frozen=True)
class SSAConfig:
    volume: float = 1e4
    replicas: int = 8


@dataclass(frozen=True)
class DiagnosticSpec:
    type: str
    params: dict


@dataclass
class RunConfig:
    dimension: int
    kernel: KernelSpec
    kernel_block: dict
    grid: GridSpec
    solver: str
    init: SignedDiscreteMeasure
    source: SignedDiscreteMeasure
    t_end: float
    ssa: SSAConfig
    diagnostics: list[DiagnosticSpec]
    seed: int = 0
    out: str | None = None
    text: str = field(default="", repr=False)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def has_diagnostic(self, name: str) -> bool:
        return any(d.type == name for d in self.diagnostics)


def _unknown(block: dict, allowed: set, where: str) -> None:
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return block[key]


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"'{name}' must be finite")
    return float(value)


def _integer(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{name}' must be an integer, got {value!r}")
    return value


def build_kernel(block: dict) -> KernelSpec:
    block = dict(block)
    kind = _require(block, "type", "[kernel]")
    if kind not in KERNEL_KEYS:
        raise ConfigError(f"unknown kernel type '{kind}' (expected one of {sorted(KERNEL_KEYS)})")
    params = {k: v for k, v in block.items() if k != "type"}
    _unknown(params, KERNEL_KEYS[kind], f"[kernel] of type {kind}")
    num = {k: _number(v, f"kernel.{k}") for k, v in params.items() if k != "table"}
    try:
        if kind == "constant":
            return kernels.constant(num.get("value", 2.0), c_u=num.get("c_u"))
        if kind == "brownian":
            return kernels.brownian(num.get("c_u", 4.0), num.get("theta1", 1.0 / 3.0),
                                    num.get("theta2", 1.0 / 3.0))
        if kind == "product_envelope":
            return kernels.product_envelope(_require(num, "theta1", "[kernel]"),
                                            _require(num, "theta2", "[kernel]"),
                                            num.get("c_u", 2.0))
        if kind == "multiplicative":
            return kernels.multiplicative()
        return kernels.user_table(_require(params, "table", "[kernel]"),
                                  _require(num, "c_u", "[kernel]"),
                                  _require(num, "theta1", "[kernel]"),
                                  _require(num, "theta2", "[kernel]"))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid kernel: {exc}") from exc


def _measure(records, d: int, where: str, *, allow_empty: bool) -> SignedDiscreteMeasure:
    if records is None:
        records = []
    if not isinstance(records, list):
        raise ConfigError(f"{where} must be an array of tables")
    if not records and not allow_empty:
        raise ConfigError(f"{where} needs at least one atom")
    for rec in records:
        _unknown(rec, {"point", "weight"}, where)
        point = _require(rec, "point", where)
        _require(rec, "weight", where)
        if not isinstance(point, list) or len(point) != d:
            raise ConfigError(f"dimension mismatch in {where}: point {point!r} vs dimension {d}")
        _number(rec["weight"], f"{where}.weight")
        if rec["weight"] < 0:
            raise ConfigError(f"negative weight {rec['weight']} in {where}")
    try:
        return SignedDiscreteMeasure.from_records(records, d=d)
    except ValueError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _diagnostic(entry: dict, kernel: KernelSpec) -> DiagnosticSpec:
    kind = _require(entry, "type", "[[diagnostics]]")
    if kind not in DIAGNOSTICS:
        raise ConfigError(f"unknown diagnostic type '{kind}' (expected one of {sorted(DIAGNOSTICS)})")
    defaults = DIAGNOSTICS[kind]
    params = {k: v for k, v in entry.items() if k != "type"}
    _unknown(params, set(defaults), f"diagnostic '{kind}'")
    merged = {**defaults, **params}
    for name, value in merged.items():
        if value is None and (kind, name) not in OPTIONAL_NONE:
            raise ConfigError(f"diagnostic '{kind}' needs parameter '{name}'")
        if value is None or name == "exponents":
            continue
        merged[name] = _number(value, f"{kind}.{name}")
        if name in POSITIVE_PARAMS and not merged[name] > 0:
            raise ConfigError(f"diagnostic '{kind}': '{name}' must be positive")
    if kind == "higher_moments":
        merged["exponents"] = [_number(v, "higher_moments.exponents") for v in merged["exponents"]]
    if kind == "localisation" and merged["gamma"] is None:
        merged["gamma"] = kernel.gamma
    if kind == "localisation" and not 0 < merged["delta"] < 1:
        raise ConfigError("localisation delta must lie in (0, 1)")
    if kind == "sublinear_moment" and (merged["alpha"] > 1 or merged["beta"] > 1):
        raise ConfigError("sublinear_moment needs alpha, beta <= 1")
    if kind == "phi_moment" and not merged["alpha"] > 0:
        raise ConfigError("phi_moment needs alpha > 0")
    return DiagnosticSpec(kind, merged)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Raises :class:`ConfigError` for syntax errors, unknown or missing keys,
    dimension mismatches, invalid kernels and out-of-class kernels requested
    for the uniqueness harness.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    _unknown(raw, TOP_KEYS, "top level")

    d = _integer(_require(raw, "dimension", "top level"), "dimension")
    if d < 1:
        raise ConfigError("dimension must be positive")
    solver = raw.get("solver", "grid")
    if solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    seed = _integer(raw.get("seed", 0), "seed")
    out = raw.get("out")

    kblock = _require(raw, "kernel", "top level")
    if not isinstance(kblock, dict):
        raise ConfigError("[kernel] must be a table")
    kernel = build_kernel(kblock)

    tblock = _require(raw, "time", "top level")
    _unknown(tblock, {"t_end"}, "[time]")
    t_end = _number(_require(tblock, "t_end", "[time]"), "t_end")

    gblock = _require(raw, "grid", "top level")
    _unknown(gblock, GRID_KEYS, "[grid]")
    try:
        grid = GridSpec(
            d=d,
            N=_integer(_require(gblock, "N", "[grid]"), "N"),
            dt=_number(_require(gblock, "dt", "[grid]"), "dt"),
            t_end=t_end,
            truncation=gblock.get("truncation", "closed"),
            output_every=_integer(gblock.get("output_every", 1), "output_every"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [grid]: {exc}") from exc

    sblock = raw.get("ssa", {})
    _unknown(sblock, SSA_KEYS, "[ssa]")
    ssa = SSAConfig(
        volume=_number(sblock.get("volume", SSAConfig.volume), "ssa.volume"),
        replicas=_integer(sblock.get("replicas", SSAConfig.replicas), "ssa.replicas"),
    )
    if not ssa.volume > 0 or ssa.replicas < 1:
        raise ConfigError("[ssa] needs volume > 0 and replicas >= 1")

    init = _measure(_require(raw, "init", "top level"), d, "[[init]]", allow_empty=False)
    source = _measure(raw.get("source"), d, "[[source]]", allow_empty=True)
    for name, m in (("[[init]]", init), ("[[source]]", source)):
        try:
            to_lattice(m, grid.N)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    diags = raw.get("diagnostics", [])
    if not isinstance(diags, list):
        raise ConfigError("[[diagnostics]] must be an array of tables")
    diagnostics = [_diagnostic(e, kernel) for e in diags]

    cfg = RunConfig(d, kernel, dict(kblock), grid, solver, init, source, t_end, ssa,
                    diagnostics, seed, out, text)
    if kernel.outside_class and (solver == "both" or cfg.has_diagnostic("uniqueness")):
        raise ConfigError(
            f"kernel '{kernel.name}' is outside the uniqueness class and cannot be used "
            "with the solver comparison")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
