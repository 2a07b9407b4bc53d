"""Discrete-time maritime digital twin.

One step is one simulated hour. Vessels sail a port network under Markov
weather, burn fuel on a cubic speed curve, queue for finite berth and crane
slots, and emit CO2e in proportion to fuel burned. All stochasticity flows
through generators seeded at reset, so a (config, seed, action sequence)
triple fully determines the trajectory.

Step pipeline: weather transition, failure sampling, movement and fuel burn,
queue resolution, then cost/emission accounting. Queue overflow is measured
on pre-resolution demand as [q - C]+; post-resolution occupancy never exceeds
capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EnvConfig, PortSpec, SPEED_GRID, validate_env_config


class TwinError(ValueError):
    """Raised on contract violations at the environment boundary."""


@dataclass(frozen=True)
class MicroAction:
    """Per-vessel hourly control: speed setting plus service/detour flags."""
    speed_index: int
    berth_request: bool = False
    crane_request: bool = False
    detour: bool = False

    def __post_init__(self):
        if not (0 <= self.speed_index < len(SPEED_GRID)):
            raise TwinError(f"speed index {self.speed_index} outside grid")

    @staticmethod
    def from_index(index: int) -> "MicroAction":
        """Decode a flat action index: speed*8 + berth*4 + crane*2 + detour."""
        if not (0 <= index < MicroAction.space_size()):
            raise TwinError(f"action index {index} out of range")
        return MicroAction(
            speed_index=index // 8,
            berth_request=bool((index // 4) % 2),
            crane_request=bool((index // 2) % 2),
            detour=bool(index % 2),
        )

    def to_index(self) -> int:
        return (self.speed_index * 8 + int(self.berth_request) * 4
                + int(self.crane_request) * 2 + int(self.detour))

    @staticmethod
    def space_size() -> int:
        return len(SPEED_GRID) * 8


@dataclass
class Leg:
    """A vessel's transit in progress along one lane."""
    origin: str
    target: str
    nm: float
    lane_class: str
    progress_nm: float = 0.0
    detoured: bool = False


@dataclass
class Vessel:
    id: str
    hull_coefficient: float
    v_ref: float
    v_max: float
    initial_fuel: float
    fuel_level: float
    port: str | None          # current port when docked, None mid-transit
    leg: Leg | None = None
    healthy: bool = True
    failure_remaining: int = 0
    speed: float = 0.0        # knots chosen last step
    destination: str = ""     # current cargo job
    awaiting_service: bool = False
    service_progress: int = 0
    envelope_used: float = 0.0
    # arrival window adopted from the first directive covering this job;
    # re-planning must not forgive lateness
    window_dest: str | None = None
    window_target: int = 0
    window_slack: int = 0

    def effective_v_max(self, failure_factor: float) -> float:
        return self.v_max if self.healthy else self.v_max * failure_factor


@dataclass
class Port:
    spec: PortSpec
    berth_queue: list[str] = field(default_factory=list)
    crane_queue: list[str] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.spec.id


@dataclass
class WeatherState:
    """Current scenario per lane class region."""
    scenario_by_class: dict[str, str]


@dataclass
class FleetState:
    t: int
    vessels: dict[str, Vessel]
    ports: dict[str, Port]
    weather: WeatherState
    cumulative_emissions: float = 0.0
    costs: dict[str, float] = field(default_factory=dict)   # c_i, nondecreasing
    throughput: int = 0
    waiting_hours: int = 0


@dataclass(frozen=True)
class StepMetrics:
    e_t: float
    berth_overflow: dict[str, int]
    crane_overflow: dict[str, int]
    costs: dict[str, float]        # instantaneous cost per vessel this step
    raw_rewards: dict[str, float]
    voyages_completed: int
    waiting_hours: int


@dataclass(frozen=True)
class Observation:
    """The local slice one vessel sees; no other vessel's private fields."""
    vessel_id: str
    t: int
    in_port: bool
    port_id: str | None
    leg_fraction: float
    speed_knots: float
    v_max: float
    hull_coefficient: float
    effective_v_max: float
    fuel_level: float
    initial_fuel: float
    healthy: bool
    failure_remaining: int
    local_berth_queue: int
    local_crane_queue: int
    local_berth_capacity: int
    local_crane_capacity: int
    weather_scenario: str
    route_remaining_nm: float
    window_target: int
    window_slack: int
    envelope: float
    envelope_used: float
    own_cumulative_cost: float


# ---------------------------------------------------------------------------
# Pure helpers (the operation contracts)
# ---------------------------------------------------------------------------

def fuel_rate(vessel: Vessel, speed: float, fuel_multiplier: float,
              idle_burn_fraction: float, failure_factor: float) -> float:
    """Fuel burn in units/hour at `speed` knots.

    Cubic law k * (speed / v_ref)^3 scaled by the weather fuel multiplier; a
    docked vessel at zero speed burns the idle fraction of its reference rate
    instead (no weather scaling in harbour).
    """
    cap = vessel.effective_v_max(failure_factor)
    if speed < 0 or speed > cap + 1e-9:
        raise TwinError(f"speed {speed} exceeds current maximum {cap}")
    if speed == 0.0:
        if vessel.port is not None:
            return idle_burn_fraction * vessel.hull_coefficient
        return 0.0
    return vessel.hull_coefficient * (speed / vessel.v_ref) ** 3 * fuel_multiplier


def sample_scenario(current: str, scenarios: tuple[str, ...],
                    transition: tuple[tuple[float, ...], ...],
                    rng: np.random.Generator) -> str:
    """One Markov-chain transition; rows must sum to 1 within 1e-9."""
    row = transition[scenarios.index(current)]
    if abs(sum(row) - 1.0) > 1e-9 or any(x < 0 for x in row):
        raise TwinError(f"malformed transition row {row}")
    u = rng.random()
    acc = 0.0
    for scenario, p in zip(scenarios, row):
        acc += p
        if u < acc:
            return scenario
    return scenarios[-1]


def sample_weather(current: WeatherState, scenarios: tuple[str, ...],
                   transition: tuple[tuple[float, ...], ...],
                   rng: np.random.Generator) -> WeatherState:
    """Advance every region's scenario by one step of the configured chain."""
    return WeatherState({
        region: sample_scenario(scen, scenarios, transition, rng)
        for region, scen in sorted(current.scenario_by_class.items())
    })


def queue_step(port: Port, arrivals: list[str]) -> tuple[list[str], list[str]]:
    """Append arrivals FIFO, then split the berth queue at capacity.

    Returns (served, waiting). Members stay queued until the caller removes
    them (service completion or departure), so occupancy persists across
    hours. Total function: no errors.
    """
    for vid in arrivals:
        if vid not in port.berth_queue:
            port.berth_queue.append(vid)
    cap = port.spec.berth_capacity
    return port.berth_queue[:cap], port.berth_queue[cap:]


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

class MaritimeTwin:
    """Single-writer simulator instance. Mutation only via reset/step."""

    def __init__(self, config: EnvConfig):
        self.config = validate_env_config(config)
        self.vessel_ids = [v.id for v in config.vessels]
        self.port_ids = [p.id for p in config.ports]
        self._lanes: dict[tuple[str, str], tuple[float, str]] = {}
        for lane in config.lanes:
            self._lanes[(lane.origin, lane.dest)] = (lane.nm, lane.lane_class)
            self._lanes[(lane.dest, lane.origin)] = (lane.nm, lane.lane_class)
        self._lane_classes = sorted({l.lane_class for l in config.lanes})
        self._e_max = config.max_step_emissions()
        self._regional_pools = (self._build_regional_pools()
                                if config.job_model == "regional" else {})
        self.state: FleetState | None = None
        self._rng_weather: np.random.Generator | None = None
        self._rng_failure: np.random.Generator | None = None
        self._rng_job: np.random.Generator | None = None
        self._last_macro_epoch: int | None = None
        self._emission_log: list[float] = []

    def _build_regional_pools(self) -> dict[str, list[str]]:
        """Ports reachable within the regional radius via lane shortest paths."""
        import heapq
        radius = self.config.regional_radius_nm
        pools: dict[str, list[str]] = {}
        for origin in self.port_ids:
            dist = {origin: 0.0}
            heap = [(0.0, origin)]
            done: set[str] = set()
            while heap:
                d, node = heapq.heappop(heap)
                if node in done:
                    continue
                done.add(node)
                for (a, b), (nm, _) in self._lanes.items():
                    if a != node:
                        continue
                    nd = d + nm
                    if nd < dist.get(b, float("inf")):
                        dist[b] = nd
                        heapq.heappush(heap, (nd, b))
            pool = sorted(p for p, d in dist.items() if 0.0 < d <= radius)
            if not pool:
                nearest = min((d, p) for p, d in dist.items() if p != origin)
                pool = [nearest[1]]
            pools[origin] = pool
        return pools

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed) -> FleetState:
        """Place the fleet at start ports with zero counters; seeds all streams."""
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        kids = ss.spawn(3)
        self._rng_weather = np.random.default_rng(kids[0])
        self._rng_failure = np.random.default_rng(kids[1])
        self._rng_job = np.random.default_rng(kids[2])
        vessels = {
            spec.id: Vessel(
                id=spec.id,
                hull_coefficient=spec.hull_coefficient,
                v_ref=spec.v_ref,
                v_max=spec.v_max,
                initial_fuel=spec.initial_fuel,
                fuel_level=spec.initial_fuel,
                port=spec.start,
            )
            for spec in self.config.vessels
        }
        ports = {p.id: Port(spec=p) for p in self.config.ports}
        weather = WeatherState({
            region: self.config.weather.initial for region in self._lane_classes
        })
        self.state = FleetState(
            t=0, vessels=vessels, ports=ports, weather=weather,
            costs={vid: 0.0 for vid in self.vessel_ids},
        )
        for vid in self.vessel_ids:
            vessels[vid].destination = self._draw_job(vessels[vid].port)
        self._last_macro_epoch = None
        self._emission_log = []
        return self.state

    def _draw_job(self, at_port: str) -> str:
        if self.config.job_model == "rotation":
            i = self.port_ids.index(at_port)
            return self.port_ids[(i + 1) % len(self.port_ids)]
        if self.config.job_model == "hub":
            # first port is the hub; traffic alternates hub <-> spokes
            hub = self.port_ids[0]
            if at_port != hub:
                return hub
            spokes = self.port_ids[1:]
            return spokes[int(self._rng_job.integers(len(spokes)))]
        if self.config.job_model == "neighbor":
            # short-sea demand: next call at a directly connected port
            nbs = self.neighbours(at_port)
            return nbs[int(self._rng_job.integers(len(nbs)))]
        if self.config.job_model == "regional":
            # ergodic short-sea demand: any port within sailing radius
            pool = self._regional_pools[at_port]
            return pool[int(self._rng_job.integers(len(pool)))]
        others = [p for p in self.port_ids if p != at_port]
        return others[int(self._rng_job.integers(len(others)))]

    # -- observation --------------------------------------------------------

    def observe(self, vessel_id: str, macro) -> Observation:
        """Pure local view for one agent plus its active macro directive."""
        if self.state is None:
            raise TwinError("environment not reset")
        if vessel_id not in self.state.vessels:
            raise TwinError(f"unknown agent id {vessel_id!r}")
        v = self.state.vessels[vessel_id]
        local_port = v.port if v.port is not None else v.destination
        port = self.state.ports[local_port]
        if v.leg is not None:
            scenario = self.state.weather.scenario_by_class[v.leg.lane_class]
            fraction = min(1.0, v.leg.progress_nm / v.leg.nm)
        else:
            scenario = self.state.weather.scenario_by_class[self._lane_classes[0]]
            fraction = 0.0
        directive = None
        if macro is not None:
            directive = macro.directives.get(vessel_id)
        remaining = self._route_remaining_nm(v, directive.route if directive else None)
        if v.window_dest == v.destination:
            window_target, window_slack = v.window_target, v.window_slack
        elif directive is not None:
            window_target, window_slack = directive.target_step, directive.slack
        else:
            window_target, window_slack = 0, 0
        return Observation(
            vessel_id=vessel_id,
            t=self.state.t,
            in_port=v.port is not None,
            port_id=v.port,
            leg_fraction=fraction,
            speed_knots=v.speed,
            v_max=v.v_max,
            hull_coefficient=v.hull_coefficient,
            effective_v_max=v.effective_v_max(self.config.failures.v_max_factor),
            fuel_level=v.fuel_level,
            initial_fuel=v.initial_fuel,
            healthy=v.healthy,
            failure_remaining=v.failure_remaining,
            local_berth_queue=len(port.berth_queue),
            local_crane_queue=len(port.crane_queue),
            local_berth_capacity=port.spec.berth_capacity,
            local_crane_capacity=port.spec.crane_capacity,
            weather_scenario=scenario,
            route_remaining_nm=remaining,
            window_target=window_target,
            window_slack=window_slack,
            envelope=directive.envelope if directive else 0.0,
            envelope_used=v.envelope_used,
            own_cumulative_cost=self.state.costs[vessel_id],
        )

    def _route_remaining_nm(self, v: Vessel, route: tuple[str, ...] | None) -> float:
        total = 0.0
        if v.leg is not None:
            total += max(0.0, v.leg.nm - v.leg.progress_nm)
            here = v.leg.target
        else:
            here = v.port
        if route and here in route:
            i = route.index(here)
            for a, b in zip(route[i:], route[i + 1:]):
                total += self._lanes[(a, b)][0]
        return total

    # -- dynamics -----------------------------------------------------------

    def step(self, actions: dict[str, MicroAction], macro) -> tuple[FleetState, dict[str, float], StepMetrics]:
        """Advance one hour under per-vessel actions and the active macro."""
        s = self.state
        if s is None:
            raise TwinError("environment not reset")
        if set(actions) != set(self.vessel_ids):
            raise TwinError(
                f"action set mismatch: got {len(actions)} actions for "
                f"{len(self.vessel_ids)} vessels")
        cfg = self.config
        if macro is not None and macro.k != self._last_macro_epoch:
            # new macro window: envelope accounting starts over
            for v in s.vessels.values():
                v.envelope_used = 0.0
            self._last_macro_epoch = macro.k

        s.weather = sample_weather(
            s.weather, cfg.weather.scenarios, cfg.weather.transition, self._rng_weather)

        for vid in self.vessel_ids:
            v = s.vessels[vid]
            if v.healthy:
                if self._rng_failure.random() < cfg.failures.p_fail:
                    v.healthy = False
                    v.failure_remaining = cfg.failures.duration_hours
            else:
                v.failure_remaining -= 1
                if v.failure_remaining <= 0:
                    v.healthy = True
                    v.failure_remaining = 0

        fuels: dict[str, float] = {}
        overdue: dict[str, int] = {vid: 0 for vid in self.vessel_ids}
        arrivals_by_port: dict[str, list[str]] = {pid: [] for pid in self.port_ids}

        for vid in self.vessel_ids:
            v = s.vessels[vid]
            a = actions[vid]
            directive = macro.directives.get(vid) if macro is not None else None
            route = directive.route if directive else None
            cap = v.effective_v_max(cfg.failures.v_max_factor)
            speed = min(SPEED_GRID[a.speed_index] * v.v_max, cap)

            if v.leg is None and speed > 0.0:
                nxt = self._next_leg_target(v, route)
                if nxt is None:
                    speed = 0.0  # no route onward: stay docked
                else:
                    nm, lane_class = self._lanes[(v.port, nxt)]
                    self._leave_queues(v)
                    v.awaiting_service = False
                    v.service_progress = 0
                    v.leg = Leg(origin=v.port, target=nxt, nm=nm, lane_class=lane_class)
                    v.port = None

            if v.leg is not None:
                if a.detour and not v.leg.detoured:
                    v.leg.nm *= cfg.detour_distance_factor
                    v.leg.detoured = True
                    k = self._lane_classes.index(v.leg.lane_class)
                    v.leg.lane_class = self._lane_classes[max(0, k - 1)]
                scen = s.weather.scenario_by_class[v.leg.lane_class]
                idx = cfg.weather.index(scen)
                burn = fuel_rate(v, speed, cfg.weather.fuel_multiplier[idx],
                                 cfg.idle_burn_fraction, cfg.failures.v_max_factor)
                v.leg.progress_nm += speed * cfg.weather.speed_multiplier[idx]
                if v.leg.progress_nm >= v.leg.nm - 1e-9:
                    v.port = v.leg.target
                    v.leg = None
                    if v.port == v.destination:
                        v.awaiting_service = True
            else:
                burn = fuel_rate(v, 0.0, 1.0, cfg.idle_burn_fraction,
                                 cfg.failures.v_max_factor)

            v.speed = speed
            v.fuel_level = max(0.0, v.fuel_level - burn)
            fuels[vid] = burn
            v.envelope_used += cfg.carbon_factor * burn

            # adopt the window once per job; the miss penalty runs until the
            # call is completed, so re-planning cannot forgive lateness
            if (directive is not None and directive.route
                    and directive.route[-1] == v.destination
                    and v.window_dest != v.destination):
                v.window_dest = v.destination
                v.window_target = directive.target_step
                v.window_slack = directive.slack
            if (v.window_dest == v.destination
                    and s.t > v.window_target + v.window_slack):
                overdue[vid] = 1

            if (v.port is not None and v.port == v.destination
                    and a.berth_request and vid not in s.ports[v.port].berth_queue):
                arrivals_by_port[v.port].append(vid)

        # queue resolution, fixed port order for determinism
        berth_overflow: dict[str, int] = {}
        crane_overflow: dict[str, int] = {}
        queue_waits: dict[str, int] = {vid: 0 for vid in self.vessel_ids}
        service_delays: dict[str, int] = {vid: 0 for vid in self.vessel_ids}
        voyages = 0
        for pid in self.port_ids:
            port = s.ports[pid]
            served, waiting = queue_step(port, arrivals_by_port[pid])
            berth_overflow[pid] = max(0, len(port.berth_queue) - port.spec.berth_capacity)
            assert len(served) <= port.spec.berth_capacity, "berth occupancy over capacity"
            port.crane_queue = [vid for vid in served if actions[vid].crane_request]
            crane_overflow[pid] = max(0, len(port.crane_queue) - port.spec.crane_capacity)
            crane_served = port.crane_queue[:port.spec.crane_capacity]
            assert len(crane_served) <= port.spec.crane_capacity, "crane occupancy over capacity"
            overflowed = set(waiting) | set(port.crane_queue[port.spec.crane_capacity:])
            for vid in overflowed:
                queue_waits[vid] += 1
            progressed: set[str] = set()
            for vid in crane_served:
                v = s.vessels[vid]
                v.service_progress += 1
                progressed.add(vid)
                if v.service_progress >= port.spec.service_hours_per_call:
                    port.berth_queue.remove(vid)
                    port.crane_queue.remove(vid)
                    v.awaiting_service = False
                    v.service_progress = 0
                    v.fuel_level = v.initial_fuel  # bunkering with every call
                    v.destination = self._draw_job(pid)
                    voyages += 1
            # every other open call idles at anchorage or alongside without
            # service; the hour is priced like waiting but is not queue
            # overflow, so it stays out of the waiting-hours KPI
            for vid in self.vessel_ids:
                v = s.vessels[vid]
                if (v.port == pid and v.awaiting_service
                        and vid not in progressed and vid not in overflowed):
                    service_delays[vid] += 1

        e_t = cfg.carbon_factor * sum(fuels[vid] for vid in self.vessel_ids)
        assert -1e-12 <= e_t <= self._e_max + 1e-9, f"e_t {e_t} outside [0, {self._e_max}]"

        prices = cfg.prices
        costs: dict[str, float] = {}
        rewards: dict[str, float] = {}
        wait_hours_step = 0
        for vid in self.vessel_ids:
            wait_hours_step += queue_waits[vid]
            priced_wait = queue_waits[vid] + service_delays[vid] + overdue[vid]
            cost = (prices.fuel_price * fuels[vid]
                    + prices.time_price
                    + prices.wait_price * priced_wait)
            costs[vid] = cost
            rewards[vid] = -cost
            s.costs[vid] += cost

        s.cumulative_emissions += e_t
        self._emission_log.append(e_t)
        s.throughput += voyages
        s.waiting_hours += wait_hours_step
        s.t += 1

        metrics = StepMetrics(
            e_t=e_t,
            berth_overflow=berth_overflow,
            crane_overflow=crane_overflow,
            costs=costs,
            raw_rewards=rewards,
            voyages_completed=voyages,
            waiting_hours=wait_hours_step,
        )
        return s, rewards, metrics

    def _next_leg_target(self, v: Vessel, route: tuple[str, ...] | None) -> str | None:
        if not route or v.port not in route:
            return None
        i = route.index(v.port)
        if i + 1 >= len(route):
            return None
        nxt = route[i + 1]
        return nxt if (v.port, nxt) in self._lanes else None

    def _leave_queues(self, v: Vessel) -> None:
        if v.port is None:
            return
        port = self.state.ports[v.port]
        if v.id in port.berth_queue:
            port.berth_queue.remove(v.id)
        if v.id in port.crane_queue:
            port.crane_queue.remove(v.id)

    # -- accessors ----------------------------------------------------------

    @property
    def emission_log(self) -> list[float]:
        return list(self._emission_log)

    @property
    def e_max(self) -> float:
        return self._e_max

    def cost_vector(self) -> np.ndarray:
        return np.array([self.state.costs[vid] for vid in self.vessel_ids])

    def lane_distance(self, origin: str, dest: str) -> float:
        return self._lanes[(origin, dest)][0]

    def neighbours(self, port_id: str) -> list[str]:
        return sorted(b for (a, b) in self._lanes if a == port_id)
