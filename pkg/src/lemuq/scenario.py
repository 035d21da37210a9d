"""Scenario files, bundled cases, synthetic grids, and the run pipeline.

A scenario is a single YAML document describing the grid, the stochastic
germ, uncertain injections, flexible generators, storage agents, and
sampling settings.  ``load_scenario`` parses and cross-validates it,
``run`` executes the full pipeline (clear the market, extract prices,
simulate agents, AC-validate) and emits CSVs plus a JSON run report.

Schema (all fields shown; defaults in parentheses):

.. code-block:: yaml

    name: case1
    description: free text ("")
    horizon: 24                 # market periods (24)
    epsilon: 0.05               # per-constraint risk level (0.05)
    gamma_mode: gaussian        # or dist_robust (gaussian)
    network:
      v0: 1.0                   # slack squared voltage (1.0)
      buses:
        - {id: 0}               # v_min/v_max magnitudes (0.95/1.05),
        - {id: 1, v_min: 0.95}  # or exact v_min_sq/v_max_sq
      branches:
        - {from: 0, to: 1, r: 0.005, x: 0.004, f_max: 2.0}  # f_max (inf)
    germ:
      degree: 2
      components:
        - {distribution: gaussian}
        - {distribution: beta, alpha: 5.0, beta: 2.0}
    profiles:                   # named 24-value shapes, referenced below
      load_a: [0.55, 0.5, ...]
    injections:
      - bus: 3
        kind: load              # or pv
        germ_index: 0
        mean: {profile: load_a, factor: 0.2}   # or list, or constant
        scale: {profile: load_a, factor: 0.03} # (0.0)
        power_factor: 0.95      # (load 0.95, pv 1.0)
    flexgens:
      - {bus: 0, c: 50.0, c1: 15.0, c2: 200.0}  # bounds optional (inf)
    agents:
      - {bus: 5, e_cap: 1.0, p_cap: 0.25, e_init: 0.5, e_end: 0.5,
         policies: [rule, dp, hindsight], levels: 101}
    sampling: {n_samples: 1000, n_paths: 500, seed: 0}
    outputs: {directory: out/case1}

Quantities are per-unit; the bundled cases use S_base = 5 MVA,
V_base = 20 kV (grid data approximates a 14-bus European MV benchmark
feeder; impedances are representative, not measured).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import acflow, agents as agents_mod, ccopf, market as market_mod, pce
from .errors import ParseError, ValidationError
from .netmodel import SLACK_ID, Branch, Bus, RadialNetwork, build_network

logger = logging.getLogger(__name__)

POLICIES = (agents_mod.RULE, agents_mod.DP, agents_mod.HINDSIGHT)

# Representative daily shapes (fraction of peak), used by synthetic grids.
DEFAULT_LOAD_SHAPE = (
    0.55, 0.50, 0.47, 0.45, 0.45, 0.50, 0.65, 0.80, 0.85, 0.80, 0.75, 0.72,
    0.70, 0.68, 0.67, 0.70, 0.80, 0.95, 1.00, 0.98, 0.90, 0.80, 0.70, 0.60,
)
DEFAULT_PV_SHAPE = (
    0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.10, 0.25, 0.45, 0.65, 0.82, 0.94,
    1.00, 0.97, 0.88, 0.72, 0.52, 0.30, 0.12, 0.03, 0.0, 0.0, 0.0, 0.0,
)


@dataclass(frozen=True)
class AgentConfig:
    """One storage agent: where it sits and how it is simulated."""

    bus: int
    storage: agents_mod.StorageSpec
    policies: tuple[str, ...] = POLICIES
    levels: int = 101


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    germ: pce.GermSpec
    injections: tuple[ccopf.UncertainInjection, ...]
    flexgens: tuple[ccopf.FlexGen, ...]
    agents: tuple[AgentConfig, ...] = ()
    description: str = ""
    v0: float = 1.0
    horizon: int = 24
    epsilon: float = 0.05
    gamma_mode: str = "gaussian"
    n_samples: int = 1000
    n_paths: int = 500
    seed: int = 0
    out_dir: str = ""

    def network(self) -> RadialNetwork:
        return build_network(list(self.buses), list(self.branches), v0=self.v0)


@dataclass
class RunReport:
    """Timings, solver outcomes, and the list of files a run produced."""

    scenario: str
    out_dir: str
    stage_seconds: dict[str, float]
    solver_status: list[str]
    solver_seconds: float
    total_seconds: float
    objective: float
    manifest: list[str]
    ac_max_violation_rate: float | None = None
    ac_max_violation_rate_with_agents: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# ---------------------------------------------------------------------------
# parsing

_MISSING = object()


def _fail(where: str, msg: str):
    raise ValidationError(f"{where}: {msg}")


def _section(data, key, where, default=_MISSING):
    if key not in data:
        if default is _MISSING:
            _fail(where, f"missing required field '{key}'")
        return default
    return data[key]


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        _fail(where, f"expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            _fail(where, f"unknown field '{key}' (allowed: {', '.join(sorted(allowed))})")


def _float(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(where, f"expected a number, got {value!r}")
    return float(value)


def _int(value, where) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(where, f"expected an integer, got {value!r}")
    return value


def _str(value, where) -> str:
    if not isinstance(value, str):
        _fail(where, f"expected a string, got {value!r}")
    return value


def _resolve_profile(value, profiles, horizon, where) -> tuple[float, ...]:
    """A profile is a constant, a named shape, an inline list, or a
    {profile, factor} reference; always resolved to `horizon` floats."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),) * horizon
    if isinstance(value, str):
        value = {"profile": value}
    if isinstance(value, dict):
        _check_keys(value, {"profile", "factor"}, where)
        name = _str(_section(value, "profile", where), f"{where}.profile")
        if name not in profiles:
            _fail(where, f"unknown profile '{name}'")
        factor = _float(value.get("factor", 1.0), f"{where}.factor")
        value = [factor * v for v in profiles[name]]
    if not isinstance(value, list):
        _fail(where, f"expected number, list, or profile reference, got {value!r}")
    if len(value) != horizon:
        _fail(where, f"profile has {len(value)} entries, horizon is {horizon}")
    return tuple(_float(v, f"{where}[{i}]") for i, v in enumerate(value))


def _parse_bus(raw, where) -> Bus:
    _check_keys(raw, {"id", "v_min", "v_max", "v_min_sq", "v_max_sq"}, where)
    bus_id = _int(_section(raw, "id", where), f"{where}.id")
    if "v_min_sq" in raw:
        v_min_sq = _float(raw["v_min_sq"], f"{where}.v_min_sq")
    else:
        v_min_sq = _float(raw.get("v_min", 0.95), f"{where}.v_min") ** 2
    if "v_max_sq" in raw:
        v_max_sq = _float(raw["v_max_sq"], f"{where}.v_max_sq")
    else:
        v_max_sq = _float(raw.get("v_max", 1.05), f"{where}.v_max") ** 2
    try:
        return Bus(bus_id, v_min_sq=v_min_sq, v_max_sq=v_max_sq)
    except ValueError as exc:
        _fail(where, str(exc))


def _parse_branch(raw, where) -> Branch:
    _check_keys(raw, {"from", "to", "r", "x", "f_max"}, where)
    try:
        return Branch(
            from_bus=_int(_section(raw, "from", where), f"{where}.from"),
            to_bus=_int(_section(raw, "to", where), f"{where}.to"),
            r=_float(_section(raw, "r", where), f"{where}.r"),
            x=_float(_section(raw, "x", where), f"{where}.x"),
            f_max=_float(raw.get("f_max", math.inf), f"{where}.f_max"),
        )
    except ValueError as exc:
        _fail(where, str(exc))


def _parse_germ(raw, where) -> pce.GermSpec:
    _check_keys(raw, {"degree", "components"}, where)
    degree = _int(_section(raw, "degree", where, 2), f"{where}.degree")
    comps = _section(raw, "components", where)
    if not isinstance(comps, list) or not comps:
        _fail(where, "components must be a non-empty list")
    parsed = []
    for i, comp in enumerate(comps):
        cw = f"{where}.components[{i}]"
        _check_keys(comp, {"distribution", "alpha", "beta"}, cw)
        dist = _str(_section(comp, "distribution", cw), f"{cw}.distribution")
        try:
            if dist == "gaussian":
                parsed.append(pce.gaussian_component())
            elif dist == "beta":
                parsed.append(pce.beta_component(
                    _float(_section(comp, "alpha", cw), f"{cw}.alpha"),
                    _float(_section(comp, "beta", cw), f"{cw}.beta"),
                ))
            else:
                _fail(cw, f"unknown distribution '{dist}'")
        except ValueError as exc:
            _fail(cw, str(exc))
    try:
        return pce.GermSpec(tuple(parsed), degree=degree)
    except ValueError as exc:
        _fail(where, str(exc))


def _parse_injection(raw, where, profiles, horizon, d) -> ccopf.UncertainInjection:
    _check_keys(raw, {"bus", "kind", "germ_index", "mean", "scale", "power_factor"}, where)
    germ_index = _int(_section(raw, "germ_index", where), f"{where}.germ_index")
    if not 0 <= germ_index < d:
        _fail(where, f"germ_index {germ_index} out of range for a germ of dimension {d}")
    pf = raw.get("power_factor")
    try:
        return ccopf.UncertainInjection(
            bus=_int(_section(raw, "bus", where), f"{where}.bus"),
            kind=_str(_section(raw, "kind", where), f"{where}.kind"),
            mean=_resolve_profile(_section(raw, "mean", where), profiles, horizon, f"{where}.mean"),
            germ_index=germ_index,
            scale=_resolve_profile(raw.get("scale", 0.0), profiles, horizon, f"{where}.scale"),
            power_factor=None if pf is None else _float(pf, f"{where}.power_factor"),
        )
    except ValueError as exc:
        _fail(where, str(exc))


def _parse_flexgen(raw, where) -> ccopf.FlexGen:
    _check_keys(raw, {"bus", "c", "c1", "c2", "p_min", "p_max", "q_min", "q_max"}, where)
    qmin, qmax = raw.get("q_min"), raw.get("q_max")
    try:
        return ccopf.FlexGen(
            bus=_int(_section(raw, "bus", where), f"{where}.bus"),
            c=_float(_section(raw, "c", where), f"{where}.c"),
            c1=_float(raw.get("c1", 0.0), f"{where}.c1"),
            c2=_float(raw.get("c2", 0.0), f"{where}.c2"),
            p_min=_float(raw.get("p_min", -math.inf), f"{where}.p_min"),
            p_max=_float(raw.get("p_max", math.inf), f"{where}.p_max"),
            q_min=None if qmin is None else _float(qmin, f"{where}.q_min"),
            q_max=None if qmax is None else _float(qmax, f"{where}.q_max"),
        )
    except ValueError as exc:
        _fail(where, str(exc))


def _parse_agent(raw, where) -> AgentConfig:
    _check_keys(raw, {"bus", "e_cap", "p_cap", "e_init", "e_end", "dt",
                      "policies", "levels"}, where)
    policies = raw.get("policies", list(POLICIES))
    if not isinstance(policies, list) or not policies:
        _fail(where, "policies must be a non-empty list")
    for pol in policies:
        if pol not in POLICIES:
            _fail(f"{where}.policies", f"unknown policy '{pol}' (allowed: {', '.join(POLICIES)})")
    opt = {k: _float(raw[k], f"{where}.{k}") for k in ("p_cap", "e_init", "e_end") if raw.get(k) is not None}
    try:
        storage = agents_mod.StorageSpec(
            e_cap=_float(_section(raw, "e_cap", where), f"{where}.e_cap"),
            dt=_float(raw.get("dt", 1.0), f"{where}.dt"),
            **opt,
        )
    except ValueError as exc:
        _fail(where, str(exc))
    return AgentConfig(
        bus=_int(_section(raw, "bus", where), f"{where}.bus"),
        storage=storage,
        policies=tuple(dict.fromkeys(policies)),
        levels=_int(raw.get("levels", 101), f"{where}.levels"),
    )


_TOP_KEYS = {"name", "description", "horizon", "epsilon", "gamma_mode",
             "network", "germ", "profiles", "injections", "flexgens",
             "agents", "sampling", "outputs"}


def config_from_dict(data: dict, origin: str = "scenario") -> ScenarioConfig:
    """Validate a parsed scenario document; errors name the exact field."""
    _check_keys(data, _TOP_KEYS, origin)
    name = _str(_section(data, "name", origin), f"{origin}.name")
    horizon = _int(_section(data, "horizon", origin, 24), f"{origin}.horizon")
    if horizon < 1:
        _fail(f"{origin}.horizon", "must be at least 1")
    epsilon = _float(_section(data, "epsilon", origin, 0.05), f"{origin}.epsilon")
    gamma_mode = _str(_section(data, "gamma_mode", origin, "gaussian"), f"{origin}.gamma_mode")
    try:
        pce.gamma(epsilon, gamma_mode)
    except Exception as exc:
        _fail(f"{origin}.epsilon/gamma_mode", str(exc))

    netsec = _section(data, "network", origin)
    _check_keys(netsec, {"v0", "buses", "branches"}, f"{origin}.network")
    v0 = _float(netsec.get("v0", 1.0), f"{origin}.network.v0")
    raw_buses = _section(netsec, "buses", f"{origin}.network")
    raw_branches = _section(netsec, "branches", f"{origin}.network")
    if not isinstance(raw_buses, list) or not raw_buses:
        _fail(f"{origin}.network.buses", "must be a non-empty list")
    if not isinstance(raw_branches, list):
        _fail(f"{origin}.network.branches", "must be a list")
    buses = tuple(_parse_bus(b, f"{origin}.network.buses[{i}]") for i, b in enumerate(raw_buses))
    branches = tuple(_parse_branch(b, f"{origin}.network.branches[{i}]")
                     for i, b in enumerate(raw_branches))
    bus_ids = {b.id for b in buses}
    if len(bus_ids) != len(buses):
        _fail(f"{origin}.network.buses", "duplicate bus ids")
    if SLACK_ID not in bus_ids:
        _fail(f"{origin}.network.buses", f"slack bus {SLACK_ID} missing")
    for i, br in enumerate(branches):
        for end in (br.from_bus, br.to_bus):
            if end not in bus_ids:
                _fail(f"{origin}.network.branches[{i}]", f"unknown bus {end}")

    germ = _parse_germ(_section(data, "germ", origin), f"{origin}.germ")

    profiles = {}
    for pname, vals in _section(data, "profiles", origin, {}).items():
        pw = f"{origin}.profiles.{pname}"
        if not isinstance(vals, list):
            _fail(pw, "must be a list of numbers")
        profiles[pname] = [_float(v, f"{pw}[{i}]") for i, v in enumerate(vals)]

    injections = tuple(
        _parse_injection(raw, f"{origin}.injections[{i}]", profiles, horizon, germ.d)
        for i, raw in enumerate(_section(data, "injections", origin, []))
    )
    for i, inj in enumerate(injections):
        if inj.bus not in bus_ids or inj.bus == SLACK_ID:
            _fail(f"{origin}.injections[{i}].bus", f"bus {inj.bus} is not a non-slack bus")

    flexgens = tuple(
        _parse_flexgen(raw, f"{origin}.flexgens[{i}]")
        for i, raw in enumerate(_section(data, "flexgens", origin))
    )
    gen_buses = [g.bus for g in flexgens]
    if gen_buses.count(SLACK_ID) != 1:
        _fail(f"{origin}.flexgens", f"exactly one generator must sit at slack bus {SLACK_ID}")
    for i, g in enumerate(flexgens):
        if g.bus not in bus_ids:
            _fail(f"{origin}.flexgens[{i}].bus", f"unknown bus {g.bus}")
    if len(set(gen_buses)) != len(gen_buses):
        _fail(f"{origin}.flexgens", "one generator per bus")

    agent_cfgs = tuple(
        _parse_agent(raw, f"{origin}.agents[{i}]")
        for i, raw in enumerate(_section(data, "agents", origin, []))
    )
    for i, ag in enumerate(agent_cfgs):
        if ag.bus not in bus_ids or ag.bus == SLACK_ID:
            _fail(f"{origin}.agents[{i}].bus", f"bus {ag.bus} is not a non-slack bus")

    sampling = _section(data, "sampling", origin, {})
    _check_keys(sampling, {"n_samples", "n_paths", "seed"}, f"{origin}.sampling")
    n_samples = _int(sampling.get("n_samples", 1000), f"{origin}.sampling.n_samples")
    n_paths = _int(sampling.get("n_paths", 500), f"{origin}.sampling.n_paths")
    seed = _int(sampling.get("seed", 0), f"{origin}.sampling.seed")
    if n_samples < 1 or n_paths < 1:
        _fail(f"{origin}.sampling", "n_samples and n_paths must be positive")

    outputs = _section(data, "outputs", origin, {})
    _check_keys(outputs, {"directory"}, f"{origin}.outputs")
    out_dir = _str(outputs.get("directory", f"out/{name}"), f"{origin}.outputs.directory")

    return ScenarioConfig(
        name=name,
        description=_str(data.get("description", ""), f"{origin}.description"),
        v0=v0, buses=buses, branches=branches, germ=germ,
        injections=injections, flexgens=flexgens, agents=agent_cfgs,
        horizon=horizon, epsilon=epsilon, gamma_mode=gamma_mode,
        n_samples=n_samples, n_paths=n_paths, seed=seed, out_dir=out_dir,
    )


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"{path}{loc}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return config_from_dict(data, origin=path.name)


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled case file, e.g. 'case1'."""
    return Path(resources.files("lemuq") / "data" / f"{name}.yaml")


def load_bundled(name: str) -> ScenarioConfig:
    return load_scenario(bundled_path(name))


# ---------------------------------------------------------------------------
# emission

def _bus_dict(bus: Bus) -> dict:
    out = {"id": bus.id}
    if (bus.v_min_sq, bus.v_max_sq) != (0.95**2, 1.05**2):
        out["v_min_sq"] = bus.v_min_sq
        out["v_max_sq"] = bus.v_max_sq
    return out


def _branch_dict(br: Branch) -> dict:
    out = {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x}
    if math.isfinite(br.f_max):
        out["f_max"] = br.f_max
    return out


def _germ_dict(germ: pce.GermSpec) -> dict:
    comps = []
    for c in germ.components:
        if c.distribution == "gaussian":
            comps.append({"distribution": "gaussian"})
        else:
            comps.append({"distribution": c.distribution, "alpha": c.alpha, "beta": c.beta})
    return {"degree": germ.degree, "components": comps}


def _injection_dict(inj: ccopf.UncertainInjection) -> dict:
    out = {"bus": inj.bus, "kind": inj.kind, "germ_index": inj.germ_index,
           "mean": list(inj.mean), "scale": list(inj.scale)}
    if inj.power_factor is not None:
        out["power_factor"] = inj.power_factor
    return out


def _flexgen_dict(g: ccopf.FlexGen) -> dict:
    out = {"bus": g.bus, "c": g.c, "c1": g.c1, "c2": g.c2}
    if math.isfinite(g.p_min):
        out["p_min"] = g.p_min
    if math.isfinite(g.p_max):
        out["p_max"] = g.p_max
    if g.q_min is not None:
        out["q_min"] = g.q_min
    if g.q_max is not None:
        out["q_max"] = g.q_max
    return out


def _agent_dict(ag: AgentConfig) -> dict:
    s = ag.storage
    return {"bus": ag.bus, "e_cap": s.e_cap, "p_cap": s.p_cap,
            "e_init": s.e_init, "e_end": s.e_end, "dt": s.dt,
            "policies": list(ag.policies), "levels": ag.levels}


def emit_scenario(config: ScenarioConfig, path=None) -> str:
    """Serialize a config to canonical YAML (profiles fully resolved).

    Loading the emitted text reproduces the config exactly.
    """
    doc = {
        "name": config.name,
        "description": config.description,
        "horizon": config.horizon,
        "epsilon": config.epsilon,
        "gamma_mode": config.gamma_mode,
        "network": {
            "v0": config.v0,
            "buses": [_bus_dict(b) for b in config.buses],
            "branches": [_branch_dict(b) for b in config.branches],
        },
        "germ": _germ_dict(config.germ),
        "injections": [_injection_dict(i) for i in config.injections],
        "flexgens": [_flexgen_dict(g) for g in config.flexgens],
        "agents": [_agent_dict(a) for a in config.agents],
        "sampling": {"n_samples": config.n_samples, "n_paths": config.n_paths,
                     "seed": config.seed},
        "outputs": {"directory": config.out_dir},
    }
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# synthetic grids

def generate_synthetic_grid(n_buses: int, seed: int, load_density: float = 0.7,
                            pv_density: float = 0.4,
                            ) -> tuple[RadialNetwork, tuple[ccopf.UncertainInjection, ...]]:
    """Random radial feeder with loads and PV for scaling studies.

    The tree prefers chain growth (probability 0.6 of extending the
    previous bus) so depth, and with it voltage spread, resembles a real
    feeder rather than a star.  Impedances are then rescaled so the worst
    lindistflow voltage deviation at peak stays inside two thirds of the
    band, mimicking conductor sizing: deeper feeders get proportionally
    stiffer lines, and the clearing stays feasible at any size.
    Reproducible by seed.
    """
    if n_buses < 5:
        raise ValueError("n_buses must be at least 5")
    rng = np.random.default_rng(seed)
    buses = [Bus(i) for i in range(n_buses)]
    branches = []
    for i in range(1, n_buses):
        parent = i - 1 if (i == 1 or rng.random() < 0.6) else int(rng.integers(0, i))
        r = float(rng.uniform(0.002, 0.010))
        x = r * float(rng.uniform(0.8, 1.2))
        branches.append(Branch(parent, i, r=r, x=x))

    injections = []
    for i in range(1, n_buses):
        if rng.random() < load_density:
            peak = float(rng.uniform(0.05, 0.30))
            germ_index = int(rng.integers(0, 2))
            injections.append(ccopf.UncertainInjection(
                bus=i, kind="load",
                mean=tuple(peak * v for v in DEFAULT_LOAD_SHAPE),
                germ_index=germ_index,
                scale=tuple(0.15 * peak * v for v in DEFAULT_LOAD_SHAPE),
            ))
        if rng.random() < pv_density:
            cap = float(rng.uniform(0.10, 0.50))
            injections.append(ccopf.UncertainInjection(
                bus=i, kind="pv",
                mean=tuple(cap * v for v in DEFAULT_PV_SHAPE),
                germ_index=2,
                scale=tuple(0.30 * cap * v for v in DEFAULT_PV_SHAPE),
            ))

    net = build_network(buses, branches)
    worst = _worst_voltage_deviation(net, injections)
    band = min(net.v_max_sq.min() - net.v0, net.v0 - net.v_min_sq.max())
    if worst > 0.0:
        sizing = min(1.0, (2.0 / 3.0) * band / worst)
        if sizing < 1.0:
            branches = [Branch(b.from_bus, b.to_bus, r=b.r * sizing,
                               x=b.x * sizing, f_max=b.f_max, id=b.id)
                        for b in branches]
            net = build_network(buses, branches)
    return net, tuple(injections)


def _worst_voltage_deviation(net: RadialNetwork,
                             injections) -> float:
    """Max |V - v0| of the mean squared-voltage profile over all hours."""
    T = len(DEFAULT_LOAD_SHAPE)
    p = np.zeros((T, net.n))
    q = np.zeros((T, net.n))
    for inj in injections:
        n = net.bus_index[inj.bus]
        sign = 1.0 if inj.kind == ccopf.PV else -1.0
        p[:, n] += sign * np.asarray(inj.mean)
        q[:, n] += sign * inj.tan_phi * np.asarray(inj.mean)
    dev = 2.0 * (p @ net.R.T + q @ net.X.T)
    return float(np.abs(dev).max())


def synthetic_scenario(n_buses: int, seed: int, load_density: float = 0.7,
                       pv_density: float = 0.4) -> ScenarioConfig:
    """Wrap a synthetic grid in a full runnable config (slack-only costs)."""
    net, injections = generate_synthetic_grid(n_buses, seed, load_density, pv_density)
    return ScenarioConfig(
        name=f"synthetic{n_buses}",
        description=f"random radial feeder, {n_buses} buses, seed {seed}",
        buses=tuple(net.buses),
        # strip the row ids build_network stamped on; configs hold branches
        # as authored and emitted files carry no id field
        branches=tuple(dataclasses.replace(b, id=None) for b in net.branches),
        germ=pce.default_germ(),
        injections=injections,
        flexgens=(ccopf.FlexGen(bus=SLACK_ID, c=30.0, c1=10.0, c2=100.0),),
        seed=seed,
        out_dir=f"out/synthetic{n_buses}",
    )


# ---------------------------------------------------------------------------
# pipeline

class _StageTimer:
    def __init__(self):
        self.seconds: dict[str, float] = {}
        self._t0 = time.perf_counter()
        self._name = None

    def start(self, name: str):
        self.stop()
        self._name = name
        self._t0 = time.perf_counter()
        logger.info("stage %s", name)

    def stop(self):
        if self._name is not None:
            self.seconds[self._name] = time.perf_counter() - self._t0
            self._name = None


def run(config: ScenarioConfig, out_dir=None) -> RunReport:
    """Execute the full pipeline and write all outputs.

    Stages: build the network and conic template, clear the market,
    extract prices and their distributions, simulate the configured
    agents on shared germ trajectories, validate with AC load flow
    (with and without agent setpoints), and write the run report.
    All randomness derives from config.seed, so CSV outputs are
    byte-identical across runs.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: list[str] = []
    timer = _StageTimer()
    wall0 = time.perf_counter()

    def emit(name: str, writer, *args, **kwargs):
        writer(out / name, *args, **kwargs)
        manifest.append(name)

    # independent, reproducible streams per sampling purpose
    ss = np.random.SeedSequence(config.seed)
    seed_paths, seed_quantiles, seed_validate = ss.spawn(3)

    timer.start("build")
    net = config.network()
    basis = pce.build_basis(config.germ)
    problem = ccopf.CcOpfProblem(
        network=net, basis=basis,
        flexgens=list(config.flexgens), injections=list(config.injections),
        epsilon=config.epsilon, gamma_mode=config.gamma_mode,
        horizon=config.horizon,
    )

    timer.start("clear")
    solution = ccopf.solve(problem)

    timer.start("prices")
    market = market_mod.extract_plmps(solution)
    emit("prices_da.csv", lambda p: market_mod.write_prices_da(market, p))
    emit("price_quantiles.csv", lambda p: market_mod.write_price_quantiles(
        market, p, config.n_samples, np.random.default_rng(seed_quantiles)))
    # same seed as the agent paths below: rows are the same trajectories
    emit("rt_samples.csv", lambda p: market_mod.write_rt_samples(
        market, p, config.n_paths, np.random.default_rng(seed_paths)))

    timer.start("agents")
    overlays: dict[int, np.ndarray] = {}
    germ_paths = market_mod.sample_germ_paths(
        market, config.n_paths, np.random.default_rng(seed_paths))
    for agent in config.agents:
        delta = market_mod.delta_price_paths(market, agent.bus, germ_paths)
        runs_by_policy: dict[str, list] = {}
        tables = None
        if agents_mod.DP in agent.policies:
            tables = agents_mod.build_dp_tables(agent.storage, delta, levels=agent.levels)
        for policy in agent.policies:
            runs = []
            for i in range(config.n_paths):
                path = agents_mod.PricePath(tuple(delta[i]), path_id=i)
                if policy == agents_mod.RULE:
                    runs.append(agents_mod.rule_based_policy(agent.storage, path))
                elif policy == agents_mod.DP:
                    runs.append(agents_mod.dp_policy(agent.storage, tables, path))
                else:
                    runs.append(agents_mod.hindsight_policy(agent.storage, path, levels=agent.levels))
            runs_by_policy[policy] = runs
        all_runs = [r for runs in runs_by_policy.values() for r in runs]
        emit(f"agent_runs_bus{agent.bus}.csv",
             lambda p, rs=all_runs: agents_mod.write_agent_runs(rs, p))
        if agents_mod.HINDSIGHT in runs_by_policy and len(runs_by_policy) > 1:
            curves = agents_mod.regret_curves(runs_by_policy)
            emit(f"regret_bus{agent.bus}.csv",
                 lambda p, cs=curves: agents_mod.write_regret(cs, p))
        # physical feedback: prefer the anticipatory policy if it ran
        chosen = agents_mod.DP if agents_mod.DP in runs_by_policy else agent.policies[0]
        overlays[agent.bus] = np.array(
            [r.setpoints for r in runs_by_policy[chosen]])

    timer.start("validate")
    base_stats = acflow.validate_solution(
        market, config.n_samples, seed=np.random.default_rng(seed_validate))
    emit("ac_validation.csv", lambda p: acflow.write_ac_validation(base_stats, p))
    overlay_stats = None
    if overlays:
        overlay_stats = acflow.validate_solution(
            market, config.n_paths, overlays=overlays, germ_paths=germ_paths)
        emit("ac_validation_agents.csv",
             lambda p: acflow.write_ac_validation(overlay_stats, p))

    timer.start("report")
    manifest.append("run_report.json")
    timer.stop()
    report = RunReport(
        scenario=config.name,
        out_dir=str(out),
        stage_seconds=timer.seconds,
        solver_status=list(solution.status),
        solver_seconds=solution.total_solve_time,
        total_seconds=time.perf_counter() - wall0,
        objective=solution.objective,
        manifest=manifest,
        ac_max_violation_rate=base_stats.max_rate(),
        ac_max_violation_rate_with_agents=(
            None if overlay_stats is None else overlay_stats.max_rate()),
    )
    report.save(out / "run_report.json")
    logger.info("wrote %d files to %s", len(manifest), out)
    return report
