"""Two-time-scale control: macro directives every tau_H hours, micro actions hourly.

The macro tier picks, per vessel, a route from a k-shortest-path candidate
set, an arrival-window offset, and an emission envelope allocated from the
window's budget share. Directives stay fixed for the whole macro window; the
micro tier conditions hourly actions on the local observation plus the active
directive only.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import learner
from .twin import MaritimeTwin, MicroAction, Observation


@dataclass(frozen=True)
class MacroDirective:
    route: tuple[str, ...]       # path in the port network, first entry = origin
    route_id: int                # index into the candidate set
    target_step: int             # arrival window centre
    slack: int                   # window half-width in steps
    envelope: float              # kg CO2e for this macro window


@dataclass(frozen=True)
class MacroAction:
    k: int
    directives: dict[str, MacroDirective]


@dataclass(frozen=True)
class MacroClock:
    tau_h: int
    horizon: int

    def __post_init__(self):
        if not (1 <= self.tau_h <= self.horizon):
            raise ValueError("need 1 <= tau_h <= horizon")

    def epoch(self, t: int) -> int:
        return macro_index(t, self.tau_h)

    @property
    def n_epochs(self) -> int:
        return math.ceil(self.horizon / self.tau_h)


@dataclass(frozen=True)
class HighLevelContext:
    """Aggregates only; no per-vessel micro detail."""
    epoch: int
    n_epochs: int
    emissions_so_far: float
    budget: float
    mean_berth_load: float
    max_berth_load: float
    mean_crane_load: float
    swell_fraction: float
    storm_fraction: float
    phi_value: float


def macro_index(t: int, tau_h: int) -> int:
    """Epoch k(t) = floor(t / tau_h)."""
    if t < 0 or tau_h < 1:
        raise ValueError("need t >= 0 and tau_h >= 1")
    return t // tau_h


def allocate_budget(budget: float, distances) -> list[float]:
    """Split a window budget across vessels proportionally to forecast distance.

    Zero total distance falls back to an equal split. The last envelope
    absorbs float rounding so the envelopes sum to the budget exactly.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    d = [max(0.0, float(x)) for x in distances]
    n = len(d)
    if n == 0:
        return []
    total = sum(d)
    if total == 0.0:
        shares = [budget / n] * n
    else:
        shares = [budget * x / total for x in d]
    shares[-1] = budget - sum(shares[:-1])
    return shares


def shortest_path(adj: dict[str, dict[str, float]], origin: str, dest: str,
                  banned: frozenset[tuple[str, str]] = frozenset()) -> tuple[float, list[str]] | None:
    """Dijkstra over the lane graph, skipping banned directed edges."""
    dist = {origin: 0.0}
    prev: dict[str, str] = {}
    heap = [(0.0, origin)]
    done: set[str] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == dest:
            path = [dest]
            while path[-1] != origin:
                path.append(prev[path[-1]])
            return d, path[::-1]
        for nb, w in adj[node].items():
            if (node, nb) in banned or nb in done:
                continue
            nd = d + w
            if nd < dist.get(nb, float("inf")):
                dist[nb] = nd
                prev[nb] = node
                heapq.heappush(heap, (nd, nb))
    return None


def k_shortest_paths(adj: dict[str, dict[str, float]], origin: str, dest: str,
                     k: int) -> list[tuple[float, tuple[str, ...]]]:
    """Up to k loop-free routes by repeated Dijkstra with edge removal.

    Each probe bans one edge from every route found so far (so a genuinely
    new route must appear), trying every such combination. Not Yen-complete,
    but deterministic and exhaustive enough for small port networks.
    """
    if origin == dest:
        return [(0.0, (origin,))]
    first = shortest_path(adj, origin, dest)
    if first is None:
        raise ValueError(f"no route from {origin} to {dest}")
    found = [(first[0], tuple(first[1]))]
    seen = {tuple(first[1])}
    while len(found) < k:
        edge_choices = [
            [frozenset({(a, b), (b, a)}) for a, b in zip(path, path[1:])]
            for _, path in found
        ]
        best: tuple[float, tuple[str, ...]] | None = None
        for combo in itertools.product(*edge_choices):
            banned = frozenset().union(*combo)
            alt = shortest_path(adj, origin, dest, banned)
            if alt is None or tuple(alt[1]) in seen:
                continue
            cand = (alt[0], tuple(alt[1]))
            if best is None or cand < best:
                best = cand
        if best is None:
            break
        seen.add(best[1])
        found.append(best)
    found.sort(key=lambda item: (item[0], item[1]))
    return found[:k]


def adapt_cap(budget: float, episode_gini: float, zeta: float, feasible: bool,
              delta: float = 0.02, enabled: bool = True) -> float:
    """Cap feedback rule: tighten when fair and feasible, relax when infeasible."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not enabled:
        return budget
    if not feasible:
        return budget * (1.0 + delta)
    if episode_gini <= zeta:
        return budget * (1.0 - delta)
    return budget


def micro_decide(policy, obs: Observation, macro: MacroAction,
                 rng: np.random.Generator) -> MicroAction:
    """Sample one vessel's hourly action from the low-level policy.

    Decentralised by construction: the distribution depends only on the
    vessel's own observation, the shared directive, and shared parameters.
    """
    directive = macro.directives.get(obs.vessel_id) if macro else None
    x = learner.featurize(obs, directive)
    action, _ = learner.act(policy, x, rng)
    return MicroAction.from_index(action)


def build_context(env: MaritimeTwin, budget: float, phi_value: float,
                  clock: MacroClock, t: int) -> HighLevelContext:
    state = env.state
    berth_loads = []
    crane_loads = []
    for pid in env.port_ids:
        port = state.ports[pid]
        berth_loads.append(len(port.berth_queue) / port.spec.berth_capacity)
        crane_loads.append(len(port.crane_queue) / port.spec.crane_capacity)
    scens = list(state.weather.scenario_by_class.values())
    return HighLevelContext(
        epoch=clock.epoch(t),
        n_epochs=clock.n_epochs,
        emissions_so_far=state.cumulative_emissions,
        budget=budget,
        mean_berth_load=float(np.mean(berth_loads)),
        max_berth_load=float(np.max(berth_loads)),
        mean_crane_load=float(np.mean(crane_loads)),
        swell_fraction=scens.count("swell") / len(scens),
        storm_fraction=scens.count("storm") / len(scens),
        phi_value=phi_value,
    )


def featurize_context(ctx: HighLevelContext) -> np.ndarray:
    """High-level feature vector; ordering is part of the checkpoint contract.

    0 bias, 1 epoch progress, 2 emissions/budget, 3 remaining budget fraction,
    4 mean berth load, 5 max berth load, 6 mean crane load, 7 swell fraction,
    8 storm fraction, 9 current phi.
    """
    used = ctx.emissions_so_far / ctx.budget if ctx.budget > 0 else 0.0
    return np.array([
        1.0,
        ctx.epoch / max(1, ctx.n_epochs),
        min(2.0, used),
        max(0.0, 1.0 - used),
        ctx.mean_berth_load,
        ctx.max_berth_load,
        ctx.mean_crane_load,
        ctx.swell_fraction,
        ctx.storm_fraction,
        ctx.phi_value,
    ])


CONTEXT_DIM = 10


@dataclass
class MacroPlanner:
    """Samples macro directives; owns the candidate-route machinery."""
    env: MaritimeTwin
    clock: MacroClock
    n_candidates: int = 3
    window_offsets: tuple[int, ...] = (-2, 0, 2, 4)
    window_slack: int = 2
    _adj: dict[str, dict[str, float]] = field(init=False)

    def __post_init__(self):
        adj: dict[str, dict[str, float]] = {pid: {} for pid in self.env.port_ids}
        for lane in self.env.config.lanes:
            adj[lane.origin][lane.dest] = lane.nm
            adj[lane.dest][lane.origin] = lane.nm
        self._adj = adj
        self._route_cache: dict[tuple[str, str], list] = {}

    @property
    def n_actions(self) -> int:
        return self.n_candidates * len(self.window_offsets)

    def candidate_routes(self, vessel_id: str) -> list[tuple[float, tuple[str, ...]]]:
        v = self.env.state.vessels[vessel_id]
        origin = v.leg.target if v.leg is not None else v.port
        key = (origin, v.destination)
        if key not in self._route_cache:  # static network, compute once
            self._route_cache[key] = k_shortest_paths(
                self._adj, origin, v.destination, self.n_candidates)
        return self._route_cache[key]

    def decide(self, policy_high, context: HighLevelContext, k: int,
               rng: np.random.Generator, remaining_budget: float,
               t: int) -> tuple[MacroAction, list[dict]]:
        """Sample per-vessel (route, window) choices and allocate envelopes.

        Returns the MacroAction plus one high-level transition row per vessel
        (features, action index, mask) for the learner.
        """
        x = featurize_context(context)
        n_off = len(self.window_offsets)
        picks: list[tuple[str, tuple[str, ...], int, int, float]] = []
        transitions: list[dict] = []
        for vid in self.env.vessel_ids:
            cands = self.candidate_routes(vid)
            mask = np.zeros(self.n_actions, dtype=bool)
            for ci in range(len(cands)):
                mask[ci * n_off:(ci + 1) * n_off] = True
            action, _ = learner.act(policy_high, x, rng, mask=mask)
            route_idx, offset_idx = divmod(action, n_off)
            dist, route = cands[route_idx]
            v = self.env.state.vessels[vid]
            if v.leg is not None:
                dist += max(0.0, v.leg.nm - v.leg.progress_nm)
            picks.append((vid, route, route_idx, offset_idx, dist))
            transitions.append({"vessel": vid, "features": x, "action": action,
                                "mask": mask})
        envelopes = allocate_budget(max(0.0, remaining_budget),
                                    [p[4] for p in picks])
        directives: dict[str, MacroDirective] = {}
        for (vid, route, route_idx, offset_idx, dist), env_share in zip(picks, envelopes):
            v = self.env.state.vessels[vid]
            cruise = 0.8 * v.v_max
            eta = t + max(1, math.ceil(dist / cruise)) if dist > 0 else t
            # targets may extend past the horizon; lateness then simply never
            # binds within this episode
            target = max(t, eta + self.window_offsets[offset_idx])
            directives[vid] = MacroDirective(
                route=route,
                route_id=route_idx,
                target_step=target,
                slack=self.window_slack,
                envelope=env_share,
            )
        return MacroAction(k=k, directives=directives), transitions
