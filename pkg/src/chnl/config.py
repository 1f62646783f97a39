"""Run configuration: strict YAML parsing, validation and model construction.

Every key is checked against a fixed schema; unknown keys, wrong types and
missing physics-critical values (theta, eps, alpha, a, dt) are all collected
and reported together.  Pre-flight admissibility checks run only once the
structure is valid.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .grid import TorusGrid
from .kernels import (
    PROFILES,
    MollifierProfile,
    build_adhesion_kernel,
    build_kernel,
    estimate_adhesion_constant,
    moments,
)
from .physics import MOBILITIES, POTENTIALS, MobilitySpec, PotentialSpec
from .nonlocal_ops import LocalLimit
from .solvers import FACE_RULES, SYSTEMS, Model, SolverConfig
from .sweep import INITS, InitialData, SweepPlan, local_coefficient

REQUIRED = "<required>"

# section -> key -> (type, default); a default of None means "optional, unset"
SCHEMA = {
    "grid": {"d": (int, REQUIRED), "n": (int, REQUIRED), "L": (float, None)},
    "kernel": {
        "profile": (str, "compact_bump"),
        "eps": (float, None),
        "alpha": (float, REQUIRED),
        "trunc_radius": (float, 6.0),
    },
    "potential": {"kind": (str, "flory_huggins"), "theta": (float, None), "delta_cut": (float, 1e-8)},
    "mobility": {"kind": (str, "degenerate"), "k": (int, 1), "l": (int, 1), "value": (float, 1.0)},
    "adhesion": {"a": (float, None), "c_K": (float, None), "safety": (float, 1.1)},
    "solver": {
        "system": (str, REQUIRED),
        "dt": (float, REQUIRED),
        "t_final": (float, REQUIRED),
        "face_average": (str, "arithmetic"),
        "snapshot_every": (int, 0),
        "diag_every": (int, 1),
        "allow_unstable": (bool, False),
        "bound_tol": (float, 1e-6),
        "c_B": (float, None),
    },
    "initial": {
        "kind": (str, "random_uniform"),
        "low": (float, 0.4),
        "high": (float, 0.6),
        "mean": (float, 0.5),
        "amplitude": (float, 0.2),
        "mode": (int, 1),
    },
    "sweep": {"eps": (list, None), "times": (list, None)},
}
TOP_LEVEL = {"seed": (int, 0), "output": (str, "out")}
REQUIRED_SECTIONS = ("grid", "kernel", "solver")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _coerce(value, typ, name, problems):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                pass
    elif typ is list:
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return [float(v) for v in value]
    elif isinstance(value, typ):
        return value
    problems.append(f"{name}: expected {typ.__name__}, got {value!r}")
    return None


def _normalise(raw: dict, problems: list) -> dict:
    out = {}
    for key, val in raw.items():
        if key in TOP_LEVEL or key in SCHEMA:
            continue
        if isinstance(val, dict):
            problems.extend(f"unknown key '{key}.{k}'" for k in val)
        else:
            problems.append(f"unknown key '{key}'")
    for key, (typ, default) in TOP_LEVEL.items():
        out[key] = _coerce(raw.get(key, default), typ, key, problems)
    for sec, fields in SCHEMA.items():
        given = raw.get(sec)
        if given is None:
            given = {}
            if sec in REQUIRED_SECTIONS:
                problems.append(f"missing section '{sec}'")
        if not isinstance(given, dict):
            problems.append(f"section '{sec}' must be a mapping")
            given = {}
        for k in given:
            if k not in fields:
                problems.append(f"unknown key '{sec}.{k}'")
        vals = {}
        for k, (typ, default) in fields.items():
            if k in given:
                vals[k] = _coerce(given[k], typ, f"{sec}.{k}", problems)
            elif default == REQUIRED:
                if sec in raw or sec in REQUIRED_SECTIONS:
                    problems.append(f"missing required key '{sec}.{k}'")
                vals[k] = None
            else:
                vals[k] = default
        out[sec] = vals
    return out


def _semantic(c: dict, problems: list, sweep_mode: bool):
    s, k, p, m, ad = c["solver"], c["kernel"], c["potential"], c["mobility"], c["adhesion"]
    system = s["system"]
    if system is not None and system not in SYSTEMS:
        problems.append(f"solver.system must be one of {SYSTEMS}, got {system!r}")
        return
    if k["profile"] not in PROFILES:
        problems.append(f"kernel.profile must be one of {PROFILES}")
    if p["kind"] not in POTENTIALS:
        problems.append(f"potential.kind must be one of {POTENTIALS}")
    if m["kind"] not in MOBILITIES:
        problems.append(f"mobility.kind must be one of {MOBILITIES}")
    if s["face_average"] not in FACE_RULES:
        problems.append(f"solver.face_average must be one of {FACE_RULES}")
    if c["initial"]["kind"] not in INITS:
        problems.append(f"initial.kind must be one of {INITS}")
    if system is None:
        return
    is_ch = system.startswith("ch")
    if is_ch and p["kind"] == "flory_huggins" and p["theta"] is None:
        problems.append("missing required key 'potential.theta' (Flory-Huggins potential)")
    if not is_ch and ad["a"] is None:
        problems.append(f"missing required key 'adhesion.a' (system {system})")
    if sweep_mode:
        for key in ("eps", "times"):
            if not c["sweep"][key]:
                problems.append(f"missing required key 'sweep.{key}' for a sweep")
    elif system.endswith("nonlocal") or not is_ch:
        if k["eps"] is None:
            problems.append(f"missing required key 'kernel.eps' (system {system})")
    for name, val in (("solver.dt", s["dt"]), ("solver.t_final", s["t_final"])):
        if val is not None and not (val > 0 if name == "solver.dt" else val >= 0):
            problems.append(f"{name} out of range: {val}")
    if k["alpha"] is not None and not 0 <= k["alpha"] < 1:
        problems.append(f"kernel.alpha must lie in [0, 1), got {k['alpha']}")
    if k["eps"] is not None and not k["eps"] > 0:
        problems.append(f"kernel.eps must be positive, got {k['eps']}")


@dataclass
class RunConfig:
    """Validated configuration tree (plain dicts per section, all defaults filled)."""

    data: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def system(self) -> str:
        return self.data["solver"]["system"]

    @property
    def is_ch(self) -> bool:
        return self.system.startswith("ch")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=False)

    # builders

    def grid(self) -> TorusGrid:
        g = self.data["grid"]
        if g["L"] is None:
            return TorusGrid.default(g["d"], g["n"])
        return TorusGrid(g["d"], g["n"], g["L"])

    def profile(self) -> MollifierProfile:
        k = self.data["kernel"]
        return MollifierProfile(k["profile"], k["trunc_radius"])

    def potential(self) -> PotentialSpec:
        p = self.data["potential"]
        theta = p["theta"] if p["theta"] is not None else 2.0  # unused by the smooth well
        return PotentialSpec(p["kind"], theta, p["delta_cut"])

    def mobility(self) -> MobilitySpec:
        m = self.data["mobility"]
        return MobilitySpec(m["kind"], m["k"], m["l"], m["value"])

    def initial(self) -> InitialData:
        i = self.data["initial"]
        return InitialData(i["kind"], self.seed, i["low"], i["high"], i["mean"], i["amplitude"], i["mode"])

    def solver_config(self) -> SolverConfig:
        s = self.data["solver"]
        return SolverConfig(self.system, s["dt"], s["t_final"], s["face_average"], s["snapshot_every"],
                            s["allow_unstable"], s["bound_tol"])

    def c_B(self) -> float:
        given = self.data["solver"]["c_B"]
        if given is not None:
            return given
        return local_coefficient("B", self.profile(), self.data["kernel"]["alpha"], self.data["grid"]["d"])

    def c_K(self) -> float:
        given = self.data["adhesion"]["c_K"]
        if given is not None:
            return given
        return local_coefficient("K", self.profile(), 0.0, self.data["grid"]["d"])

    def model(self) -> Model:
        g, prof, eps = self.grid(), self.profile(), self.data["kernel"]["eps"]
        alpha, a = self.data["kernel"]["alpha"], self.data["adhesion"]["a"]
        sysname = self.system
        if sysname == "ch_nonlocal":
            return Model(sysname, g, build_kernel(prof, eps, alpha, g), self.potential(), self.mobility())
        if sysname == "ch_local":
            return Model(sysname, g, LocalLimit(self.c_B(), g), self.potential(), self.mobility())
        if sysname == "adhesion_nonlocal":
            return Model(sysname, g, None, None, self.mobility(), build_adhesion_kernel(prof, eps, g), None, a)
        return Model(sysname, g, None, None, self.mobility(), None, self.c_K(), a)

    def sweep_plan(self, name: str = "config") -> SweepPlan:
        s = self.data["solver"]
        family = "ch" if self.is_ch else "adhesion"
        return SweepPlan(
            name=name, family=family, grid=self.grid(), profile=self.profile(),
            eps=tuple(self.data["sweep"]["eps"]), times=tuple(self.data["sweep"]["times"]), dt=s["dt"],
            alpha=self.data["kernel"]["alpha"], potential=self.potential() if self.is_ch else None,
            mobility=self.mobility(), a=self.data["adhesion"]["a"] or 0.0, init=self.initial(),
            face_average=s["face_average"],
            c_local=s["c_B"] if self.is_ch else self.data["adhesion"]["c_K"],
            snapshot_every=s["snapshot_every"], allow_unstable=s["allow_unstable"],
        )


def preflight(cfg: RunConfig, sweep_mode: bool = False) -> list[str]:
    """Admissibility checks that need the kernel moments; returns the violations."""
    problems = []
    d = cfg["grid"]["d"]
    prof, alpha = cfg.profile(), cfg["kernel"]["alpha"]
    eps_list = list(cfg["sweep"]["eps"]) if sweep_mode else [cfg["kernel"]["eps"]]
    eps_list = [e for e in eps_list if e is not None]
    pot = cfg["potential"]
    nonlocal_ch = cfg.system == "ch_nonlocal" or (sweep_mode and cfg.is_ch)
    if nonlocal_ch and pot["kind"] == "flory_huggins":
        theta = pot["theta"]
        for eps in eps_list:
            j1 = moments(prof, alpha, d, eps).J_conv_1
            if not 2 * theta < j1:
                problems.append(
                    f"theta-constraint violated: 2*theta = {2 * theta:g} >= J_eps*1 = {j1:g} "
                    f"(eps = {eps:g}, alpha = {alpha:g})"
                )
    a = cfg["adhesion"]["a"]
    if not cfg.is_ch and a and eps_list:
        g = cfg.grid()
        eps_max = max(eps_list)
        est = estimate_adhesion_constant(prof, eps_max, g, safety=cfg["adhesion"]["safety"], seed=cfg.seed)
        lhs = abs(a) * math.sqrt(est.C_est)
        if not lhs < 1:
            problems.append(
                f"adhesion constraint violated: |a|*sqrt(C_est) = {abs(a):g}*sqrt({est.C_est:.6g}) = {lhs:.6g} >= 1 "
                f"(eps_max = {eps_max:g})"
            )
    return problems


def parse_config_dict(raw, source=None, sweep_mode: bool = False, check_admissible: bool = True) -> RunConfig:
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    data = _normalise(copy.deepcopy(raw), problems)
    _semantic(data, problems, sweep_mode)
    if not problems:
        try:
            cfg = RunConfig(data, source)
            cfg.grid()
            cfg.profile()
            cfg.potential()
            cfg.mobility()
            cfg.initial()
            cfg.solver_config()
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    if check_admissible:
        pre = preflight(cfg, sweep_mode)
        if pre:
            raise ConfigError(pre)
    return cfg


def parse_config(path, sweep_mode: bool = False, check_admissible: bool = True) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    return parse_config_dict(raw or {}, str(path), sweep_mode, check_admissible)
