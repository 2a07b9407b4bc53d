"""Configuration schemas, strict JSON ingestion, and the synthetic network generator.

Environment and run configurations load from JSON documents. Every mapping is
checked against an explicit key set so unknown keys are rejected rather than
silently ignored.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

SCENARIOS = ("calm", "swell", "storm")
LANE_CLASSES = ("coastal", "open_sea")
SPEED_GRID = (0.0, 0.4, 0.6, 0.8, 1.0)

BASELINE_MODES = (
    "full",
    "no-constraints",
    "no-fairness",
    "flat-decentralised",
    "centralised",
    "hier-only",
)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


def _require(mapping: dict, allowed: dict, context: str) -> dict:
    """Check keys of `mapping` against `allowed` (name -> required flag)."""
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    missing = [k for k, req in allowed.items() if req and k not in mapping]
    if missing:
        raise ConfigError(f"{context}: missing keys {missing}")
    return mapping


@dataclass(frozen=True)
class PortSpec:
    id: str
    berth_capacity: int
    crane_capacity: int
    service_hours_per_call: int = 1


@dataclass(frozen=True)
class LaneSpec:
    origin: str
    dest: str
    nm: float
    lane_class: str = "coastal"


@dataclass(frozen=True)
class VesselSpec:
    id: str
    hull_coefficient: float
    v_ref: float
    v_max: float
    start: str
    initial_fuel: float = 1e6


@dataclass(frozen=True)
class WeatherConfig:
    scenarios: tuple[str, ...] = SCENARIOS
    # row i -> distribution over next scenario given scenarios[i]
    transition: tuple[tuple[float, ...], ...] = (
        (0.90, 0.08, 0.02),
        (0.25, 0.60, 0.15),
        (0.10, 0.30, 0.60),
    )
    speed_multiplier: tuple[float, ...] = (1.0, 0.8, 0.55)
    fuel_multiplier: tuple[float, ...] = (1.0, 1.25, 1.6)
    initial: str = "calm"

    def index(self, scenario: str) -> int:
        return self.scenarios.index(scenario)


@dataclass(frozen=True)
class FailureConfig:
    p_fail: float = 0.01
    duration_hours: int = 6
    v_max_factor: float = 0.5


@dataclass(frozen=True)
class PriceConfig:
    fuel_price: float = 1.0
    time_price: float = 0.05
    wait_price: float = 0.5


@dataclass(frozen=True)
class EnvConfig:
    ports: tuple[PortSpec, ...]
    lanes: tuple[LaneSpec, ...]
    vessels: tuple[VesselSpec, ...]
    weather: WeatherConfig = WeatherConfig()
    failures: FailureConfig = FailureConfig()
    prices: PriceConfig = PriceConfig()
    carbon_factor: float = 3.114  # kg CO2e per unit fuel
    idle_burn_fraction: float = 0.02
    detour_distance_factor: float = 1.15
    emission_bound: float | None = None  # per-step cap on e_t; derived when absent
    job_model: str = "random"  # random | rotation | hub | neighbor | regional
    regional_radius_nm: float = 350.0  # job radius for the regional model

    def port(self, port_id: str) -> PortSpec:
        for p in self.ports:
            if p.id == port_id:
                return p
        raise KeyError(port_id)

    def max_step_emissions(self) -> float:
        """Worst-case e_t: every vessel at v_max under the worst fuel multiplier."""
        if self.emission_bound is not None:
            return self.emission_bound
        worst = max(self.weather.fuel_multiplier)
        burn = sum(
            v.hull_coefficient * (v.v_max / v.v_ref) ** 3 * worst for v in self.vessels
        )
        return self.carbon_factor * burn


def validate_env_config(cfg: EnvConfig) -> EnvConfig:
    if len(cfg.ports) < 2:
        raise ConfigError("network needs at least 2 ports")
    ids = [p.id for p in cfg.ports]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate port ids")
    for p in cfg.ports:
        if p.berth_capacity < 1 or p.crane_capacity < 1:
            raise ConfigError(f"port {p.id}: capacities must be >= 1")
        if p.service_hours_per_call < 1:
            raise ConfigError(f"port {p.id}: service_hours_per_call must be >= 1")
    known = set(ids)
    adjacency: dict[str, set[str]] = {i: set() for i in known}
    for lane in cfg.lanes:
        if lane.origin not in known or lane.dest not in known:
            raise ConfigError(f"lane {lane.origin}->{lane.dest}: unknown port")
        if lane.nm <= 0:
            raise ConfigError(f"lane {lane.origin}->{lane.dest}: distance must be > 0")
        if lane.lane_class not in LANE_CLASSES:
            raise ConfigError(f"lane {lane.origin}->{lane.dest}: bad lane_class")
        adjacency[lane.origin].add(lane.dest)
        adjacency[lane.dest].add(lane.origin)
    # connectivity as an undirected graph
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        nxt = frontier.pop()
        for nb in adjacency[nxt]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    if seen != known:
        raise ConfigError(f"network is disconnected: unreachable {sorted(known - seen)}")
    if not cfg.vessels:
        raise ConfigError("fleet is empty")
    vids = [v.id for v in cfg.vessels]
    if len(set(vids)) != len(vids):
        raise ConfigError("duplicate vessel ids")
    for v in cfg.vessels:
        if v.start not in known:
            raise ConfigError(f"vessel {v.id}: unknown start port {v.start}")
        if not (0 < v.v_ref <= v.v_max):
            raise ConfigError(f"vessel {v.id}: need 0 < v_ref <= v_max")
        if v.hull_coefficient <= 0:
            raise ConfigError(f"vessel {v.id}: hull_coefficient must be > 0")
    w = cfg.weather
    n = len(w.scenarios)
    if len(w.transition) != n or any(len(r) != n for r in w.transition):
        raise ConfigError("weather transition matrix shape mismatch")
    for row in w.transition:
        if any(x < 0 for x in row) or abs(sum(row) - 1.0) > 1e-9:
            raise ConfigError(f"weather transition row {row} does not sum to 1")
    if len(w.speed_multiplier) != n or len(w.fuel_multiplier) != n:
        raise ConfigError("weather multiplier length mismatch")
    if any(not (0 < m <= 1.0) for m in w.speed_multiplier):
        raise ConfigError("speed multipliers must lie in (0, 1]")
    if any(m < 1.0 for m in w.fuel_multiplier):
        raise ConfigError("fuel multipliers must be >= 1")
    if w.initial not in w.scenarios:
        raise ConfigError(f"unknown initial weather scenario {w.initial!r}")
    if not (0.0 <= cfg.failures.p_fail <= 1.0):
        raise ConfigError("p_fail must lie in [0, 1]")
    if cfg.job_model not in ("random", "rotation", "hub", "neighbor", "regional"):
        raise ConfigError(f"unknown job model {cfg.job_model!r}")
    return cfg


def env_config_from_dict(doc: dict) -> EnvConfig:
    _require(
        doc,
        {
            "ports": True,
            "lanes": True,
            "vessels": True,
            "weather": False,
            "failures": False,
            "prices": False,
            "carbon_factor": False,
            "idle_burn_fraction": False,
            "detour_distance_factor": False,
            "emission_bound": False,
            "job_model": False,
            "regional_radius_nm": False,
        },
        "env config",
    )
    ports = tuple(
        PortSpec(**_require(
            p,
            {"id": True, "berth_capacity": True, "crane_capacity": True,
             "service_hours_per_call": False},
            "port",
        ))
        for p in doc["ports"]
    )
    lanes = tuple(
        LaneSpec(
            origin=l["from"], dest=l["to"], nm=float(l["nm"]),
            lane_class=l.get("lane_class", "coastal"),
        )
        for l in (
            _require(l, {"from": True, "to": True, "nm": True, "lane_class": False}, "lane")
            for l in doc["lanes"]
        )
    )
    vessels = tuple(
        VesselSpec(**_require(
            v,
            {"id": True, "hull_coefficient": True, "v_ref": True, "v_max": True,
             "start": True, "initial_fuel": False},
            "vessel",
        ))
        for v in doc["vessels"]
    )
    weather = WeatherConfig()
    if "weather" in doc:
        w = _require(
            doc["weather"],
            {"scenarios": False, "transition": False, "speed_multiplier": False,
             "fuel_multiplier": False, "initial": False},
            "weather",
        )
        weather = WeatherConfig(
            scenarios=tuple(w.get("scenarios", SCENARIOS)),
            transition=tuple(tuple(float(x) for x in row)
                             for row in w.get("transition", WeatherConfig.transition)),
            speed_multiplier=tuple(w.get("speed_multiplier", WeatherConfig.speed_multiplier)),
            fuel_multiplier=tuple(w.get("fuel_multiplier", WeatherConfig.fuel_multiplier)),
            initial=w.get("initial", "calm"),
        )
    failures = FailureConfig(**_require(
        doc.get("failures", {}),
        {"p_fail": False, "duration_hours": False, "v_max_factor": False},
        "failures",
    ))
    prices = PriceConfig(**_require(
        doc.get("prices", {}),
        {"fuel_price": False, "time_price": False, "wait_price": False},
        "prices",
    ))
    cfg = EnvConfig(
        ports=ports,
        lanes=lanes,
        vessels=vessels,
        weather=weather,
        failures=failures,
        prices=prices,
        carbon_factor=float(doc.get("carbon_factor", 3.114)),
        idle_burn_fraction=float(doc.get("idle_burn_fraction", 0.02)),
        detour_distance_factor=float(doc.get("detour_distance_factor", 1.15)),
        emission_bound=(None if doc.get("emission_bound") is None
                        else float(doc["emission_bound"])),
        job_model=doc.get("job_model", "random"),
        regional_radius_nm=float(doc.get("regional_radius_nm", 350.0)),
    )
    return validate_env_config(cfg)


def load_env_config(path: str) -> EnvConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return env_config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintParams:
    budget: float | None = None  # episode emission budget B; None -> calibrated
    window: int | None = None    # rolling window T_w; None -> whole horizon
    eta_base: float = 0.05
    dual_cap: float = 1e3
    episode_mode: str = "persist"  # persist | reset


@dataclass(frozen=True)
class FairnessParams:
    kind: str = "gini"            # gini | minmax
    zeta: float = 0.25
    rho: float = 0.4
    beta_max: float = 50.0
    s_beta: float | None = None   # None -> beta_max at 60% of training steps
    eta_beta: float = 0.1
    schedule: str = "tracking"    # linear | tracking


@dataclass(frozen=True)
class HierarchyParams:
    tau_h: int = 10
    route_candidates: int = 3
    window_offsets: tuple[int, ...] = (-2, 0, 2, 4)
    window_slack: int = 2
    cap_adapt: bool = False
    cap_adapt_delta: float = 0.02


@dataclass(frozen=True)
class LearnerParams:
    learning_rate: float = 5e-4
    gamma: float = 0.99
    temperature: float = 1.0
    entropy_coef: float = 0.01
    max_grad_norm: float = 100.0
    cost_rate_scale: float = 0.2
    lr_decay_episodes: int | None = None  # alpha_ep = alpha/sqrt(1 + ep/this)


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    episodes: int = 400
    horizon: int = 50
    seeds: tuple[int, ...] = (1, 2, 3)
    mode: str = "full"
    constraints: ConstraintParams = ConstraintParams()
    fairness: FairnessParams = FairnessParams()
    hierarchy: HierarchyParams = HierarchyParams()
    learner: LearnerParams = LearnerParams()
    out_dir: str = "runs/out"

    def resolved_s_beta(self) -> float:
        if self.fairness.s_beta is not None:
            return self.fairness.s_beta
        steps = 0.6 * self.episodes * self.horizon
        return self.fairness.beta_max / max(steps, 1.0)


def run_config_from_dict(doc: dict, base_dir: str = ".") -> RunConfig:
    _require(
        doc,
        {"env": True, "episodes": False, "horizon": False, "seeds": False,
         "mode": False, "constraints": False, "fairness": False,
         "hierarchy": False, "learner": False, "out_dir": False},
        "run config",
    )
    env_doc = doc["env"]
    if isinstance(env_doc, str):
        env = load_env_config(os.path.join(base_dir, env_doc))
    else:
        env = env_config_from_dict(env_doc)
    cparams = ConstraintParams(**_require(
        doc.get("constraints", {}),
        {"budget": False, "window": False, "eta_base": False, "dual_cap": False,
         "episode_mode": False},
        "constraints",
    ))
    f = _require(
        doc.get("fairness", {}),
        {"kind": False, "zeta": False, "rho": False, "beta_max": False,
         "s_beta": False, "eta_beta": False, "schedule": False},
        "fairness",
    )
    fparams = FairnessParams(**f)
    h = _require(
        doc.get("hierarchy", {}),
        {"tau_h": False, "route_candidates": False, "window_offsets": False,
         "window_slack": False, "cap_adapt": False, "cap_adapt_delta": False},
        "hierarchy",
    )
    if "window_offsets" in h:
        h = dict(h, window_offsets=tuple(int(x) for x in h["window_offsets"]))
    hparams = HierarchyParams(**h)
    lparams = LearnerParams(**_require(
        doc.get("learner", {}),
        {"learning_rate": False, "gamma": False, "temperature": False,
         "entropy_coef": False, "max_grad_norm": False, "cost_rate_scale": False,
         "lr_decay_episodes": False},
        "learner",
    ))
    cfg = RunConfig(
        env=env,
        episodes=int(doc.get("episodes", 400)),
        horizon=int(doc.get("horizon", 50)),
        seeds=tuple(int(s) for s in doc.get("seeds", (1, 2, 3))),
        mode=doc.get("mode", "full"),
        constraints=cparams,
        fairness=fparams,
        hierarchy=hparams,
        learner=lparams,
        out_dir=doc.get("out_dir", "runs/out"),
    )
    return validate_run_config(cfg)


def validate_run_config(cfg: RunConfig) -> RunConfig:
    if cfg.mode not in BASELINE_MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {BASELINE_MODES}")
    if cfg.episodes < 1:
        raise ConfigError("episodes must be >= 1")
    if not cfg.seeds:
        raise ConfigError("seeds must be nonempty")
    if not (1 <= cfg.hierarchy.tau_h <= cfg.horizon):
        raise ConfigError("need 1 <= tau_h <= horizon")
    if cfg.fairness.kind not in ("gini", "minmax"):
        raise ConfigError(f"unknown fairness kind {cfg.fairness.kind!r}")
    if cfg.fairness.schedule not in ("linear", "tracking"):
        raise ConfigError(f"unknown fairness schedule {cfg.fairness.schedule!r}")
    if cfg.constraints.episode_mode not in ("persist", "reset"):
        raise ConfigError("episode_mode must be persist or reset")
    if cfg.constraints.window is not None and cfg.constraints.window < 1:
        raise ConfigError("window must be >= 1")
    return cfg


def load_run_config(path: str, *, seeds: tuple[int, ...] | None = None,
                    mode: str | None = None, out_dir: str | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = run_config_from_dict(json.load(fh), base_dir=os.path.dirname(path) or ".")
    if seeds:
        cfg = replace(cfg, seeds=tuple(seeds))
    if mode:
        cfg = replace(cfg, mode=mode)
    if out_dir:
        cfg = replace(cfg, out_dir=out_dir)
    return validate_run_config(cfg)


# ---------------------------------------------------------------------------
# Synthetic network generator
# ---------------------------------------------------------------------------

def generate_env_config(seed: int, n_ports: int = 16, n_vessels: int = 50,
                        nm_range: tuple[float, float] = (100.0, 2000.0)) -> dict:
    """Seeded random geometric port network as a JSON-ready document.

    Ports are scattered in the unit square, wired to their nearest neighbours
    until every port has degree >= 2, then patched into a single component.
    Lane distances map the euclidean span onto `nm_range`; the shorter half of
    the lanes is classed coastal, the longer half open sea.
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n_ports, 2))
    edges: set[tuple[int, int]] = set()

    def add_edge(i: int, j: int) -> None:
        if i != j:
            edges.add((min(i, j), max(i, j)))

    dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    order = np.argsort(dists, axis=1)
    for i in range(n_ports):
        for j in order[i, 1:3]:
            add_edge(i, int(j))
    # stitch components together via closest cross-component pairs
    while True:
        comp = {0}
        frontier = [0]
        adj: dict[int, set[int]] = {k: set() for k in range(n_ports)}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        while frontier:
            x = frontier.pop()
            for nb in adj[x]:
                if nb not in comp:
                    comp.add(nb)
                    frontier.append(nb)
        if len(comp) == n_ports:
            break
        outside = [k for k in range(n_ports) if k not in comp]
        best = min(((dists[i, j], i, j) for i in comp for j in outside))
        add_edge(best[1], best[2])

    scale_lo, scale_hi = nm_range
    span = dists.max() or 1.0
    lane_nm = {e: scale_lo + (scale_hi - scale_lo) * dists[e] / span for e in edges}
    median_nm = float(np.median(list(lane_nm.values())))
    lanes = [
        {
            "from": f"P{a:02d}", "to": f"P{b:02d}",
            "nm": round(lane_nm[(a, b)], 1),
            "lane_class": "coastal" if lane_nm[(a, b)] <= median_nm else "open_sea",
        }
        for a, b in sorted(edges)
    ]
    ports = [
        {
            "id": f"P{i:02d}",
            "berth_capacity": int(rng.integers(2, 5)),
            "crane_capacity": int(rng.integers(1, 4)),
            "service_hours_per_call": 1,
        }
        for i in range(n_ports)
    ]
    vessels = []
    for v in range(n_vessels):
        v_ref = float(rng.uniform(10.0, 14.0))
        vessels.append({
            "id": f"V{v:02d}",
            "hull_coefficient": round(float(rng.uniform(0.8, 3.0)), 3),
            "v_ref": round(v_ref, 2),
            "v_max": round(v_ref * float(rng.uniform(1.3, 1.7)), 2),
            "start": f"P{v % n_ports:02d}",
        })
    return {"ports": ports, "lanes": lanes, "vessels": vessels}
