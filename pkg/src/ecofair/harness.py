"""Experiment orchestration: the per-step control loop, seeded multi-run
execution, KPI records, aggregation, and the scaling probe.

Within every step the ordering is fixed: macro guard, micro actions, env
step, dual updates, fairness schedule, reward shaping, storage. Seeds run as
independent workers (ECOFAIR_THREADS bounds the pool); within a seed,
execution is strictly sequential and fully determined by (config, seed).
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import EnvConfig, RunConfig
from .constraints import (ConstraintLedger, price_reward, reset_episode,
                          update_dual_capacity, update_dual_emission)
from .fairness import FairnessState, apply_fairness_penalty, gini, minmax, phi
from .hierarchy import CONTEXT_DIM, MacroClock, MacroPlanner, build_context
from .learner import (MICRO_ACTIONS, MICRO_FEATURES, ShapingFlags, Trajectory,
                      act_batch, configure_baseline, featurize,
                      featurize_central, make_policy, save_policy, update)
from .twin import MaritimeTwin, MicroAction

RECORD_FIELDS = (
    "episode", "seed", "total_return", "emissions_total", "cap",
    "violation_excess", "gini", "minmax", "throughput", "waiting_hours",
    "lambda_final", "beta_final", "max_mu", "max_nu",
)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    seed: int
    total_return: float
    emissions_total: float
    cap: float
    violation_excess: float
    gini: float
    minmax: float
    throughput: int
    waiting_hours: int
    lambda_final: float
    beta_final: float
    max_mu: float
    max_nu: float

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in RECORD_FIELDS)


class Experiment:
    """All mutable run state for one (config, seed) worker."""

    def __init__(self, cfg: RunConfig, seed: int, budget: float):
        self.cfg = cfg
        self.seed = seed
        self.flags: ShapingFlags = configure_baseline(cfg.mode)
        tau_h = cfg.horizon if self.flags.flat_macro else cfg.hierarchy.tau_h
        self.env = MaritimeTwin(cfg.env)
        self.clock = MacroClock(tau_h=tau_h, horizon=cfg.horizon)
        self.planner = MacroPlanner(
            env=self.env, clock=self.clock,
            n_candidates=cfg.hierarchy.route_candidates,
            window_offsets=cfg.hierarchy.window_offsets,
            window_slack=cfg.hierarchy.window_slack,
        )
        self.budget = budget
        self.ledger = ConstraintLedger(
            budget=budget, horizon=cfg.horizon,
            port_ids=tuple(self.env.port_ids),
            window=cfg.constraints.window,
            eta_base=cfg.constraints.eta_base,
            dual_cap=cfg.constraints.dual_cap,
        )
        self.fairness = FairnessState(
            kind=cfg.fairness.kind, schedule=cfg.fairness.schedule,
            beta_max=cfg.fairness.beta_max, s_beta=cfg.resolved_s_beta(),
            eta_beta=cfg.fairness.eta_beta, zeta=cfg.fairness.zeta,
            rho=cfg.fairness.rho,
        )
        n = len(self.env.vessel_ids)
        micro_dim = MICRO_FEATURES * n if self.flags.centralised else MICRO_FEATURES
        lp = cfg.learner
        self.policy_low = make_policy(
            micro_dim, MICRO_ACTIONS, temperature=lp.temperature,
            learning_rate=lp.learning_rate, gamma=lp.gamma,
            entropy_coef=lp.entropy_coef, max_grad_norm=lp.max_grad_norm)
        self.policy_high = make_policy(
            CONTEXT_DIM, self.planner.n_actions, temperature=lp.temperature,
            learning_rate=lp.learning_rate, gamma=lp.gamma,
            entropy_coef=lp.entropy_coef, max_grad_norm=lp.max_grad_norm)
        root = np.random.SeedSequence([seed, 1])
        micro_ss, macro_ss = root.spawn(2)
        self.rng_micro = np.random.default_rng(micro_ss)
        self.rng_macro = np.random.default_rng(macro_ss)
        self.macro_log: list[tuple] = []

    # -- single episode ------------------------------------------------------

    def run_episode(self, ep: int, trace: list | None = None
                    ) -> tuple[EpisodeRecord, dict]:
        cfg = self.cfg
        env = self.env
        n = len(env.vessel_ids)
        if cfg.learner.lr_decay_episodes:
            scale = 1.0 / np.sqrt(1.0 + ep / cfg.learner.lr_decay_episodes)
            self.policy_low.learning_rate = cfg.learner.learning_rate * scale
            self.policy_high.learning_rate = cfg.learner.learning_rate * scale
        state = env.reset(np.random.SeedSequence([self.seed, 1000 + ep]))
        if ep > 0:
            reset_episode(self.ledger, cfg.constraints.episode_mode)
        gamma_high = self.policy_high.gamma ** self.clock.tau_h

        low_trajs = {vid: Trajectory() for vid in env.vessel_ids}
        high_traj = Trajectory()
        open_epoch: list[dict] | None = None
        epoch_rewards: dict[str, float] = {}
        raw_total = 0.0
        shaped_total = 0.0
        n_macro = 0
        macro = None

        def close_epoch():
            if open_epoch is None:
                return
            for row in open_epoch:
                high_traj.append(row["features"], row["action"],
                                 epoch_rewards[row["vessel"]], row["mask"],
                                 row.get("context"))

        def training_context(t: int) -> np.ndarray:
            # global signals fixed before the step's actions (CTDE baseline)
            rem = (cfg.horizon - t) / cfg.horizon
            e_frac = state.cumulative_emissions / self.budget if self.budget else 0.0
            bphi = self.fairness.beta * self.fairness.last_phi
            return np.array([rem, rem * bphi, rem * rem * bphi,
                             rem * self.ledger.lam, rem * e_frac])

        for t in range(cfg.horizon):
            if t % self.clock.tau_h == 0:
                close_epoch()
                k = self.clock.epoch(t)
                phi_now = phi(env.cost_vector(), self.fairness.kind) \
                    if state.t > 0 else 0.0
                context = build_context(env, self.budget, phi_now, self.clock, t)
                remaining = max(0.0, self.budget - state.cumulative_emissions)
                window_budget = remaining / max(1, self.clock.n_epochs - k)
                macro, transitions = self.planner.decide(
                    self.policy_high, context, k, self.rng_macro,
                    window_budget, t)
                z_epoch = training_context(t)
                for row in transitions:
                    row["context"] = z_epoch
                open_epoch = transitions
                epoch_rewards = {vid: 0.0 for vid in env.vessel_ids}
                n_macro += 1
                for vid in env.vessel_ids:
                    d = macro.directives[vid]
                    self.macro_log.append((
                        ep, k, vid, d.route_id, d.target_step, d.slack,
                        d.envelope))
                if trace is not None:
                    trace.append(("macro", t))

            z_step = training_context(t)
            per_agent = [
                featurize(env.observe(vid, macro), macro.directives[vid],
                          cost_rate_scale=cfg.learner.cost_rate_scale)
                for vid in env.vessel_ids
            ]
            if self.flags.centralised:
                X = np.stack([featurize_central(per_agent, i) for i in range(n)])
            else:
                X = np.stack(per_agent)
            actions_idx, _ = act_batch(self.policy_low, X, self.rng_micro)
            micro = {vid: MicroAction.from_index(int(a))
                     for vid, a in zip(env.vessel_ids, actions_idx)}
            # other agents' contemporaneous action statistics: valid baseline
            # inputs for agent i (independent of its own action given state)
            speed_fracs = np.array([m.speed_index for m in micro.values()]) / 4.0
            req_fracs = np.array([float(m.berth_request) for m in micro.values()])
            if n > 1:
                others_speed = (speed_fracs.sum() - speed_fracs) / (n - 1)
                others_req = (req_fracs.sum() - req_fracs) / (n - 1)
            else:
                others_speed = np.zeros(1)
                others_req = np.zeros(1)
            if trace is not None:
                trace.append(("micro", t))

            state, raw_rewards, metrics = env.step(micro, macro)
            if trace is not None:
                trace.append(("env", t))

            self.ledger.episode_emissions += metrics.e_t
            if self.flags.constraints_on:
                update_dual_emission(self.ledger, metrics.e_t,
                                     self.ledger.step_count)
                update_dual_capacity(self.ledger, metrics.berth_overflow,
                                     metrics.crane_overflow,
                                     self.ledger.step_count)
                self.ledger.step_count += 1
            if trace is not None:
                trace.append(("dual", t))

            if self.flags.fairness_on:
                phi_val = self.fairness.update(env.cost_vector())
            else:
                phi_val = 0.0
            if trace is not None:
                trace.append(("beta", t))

            raw_vec = np.array([raw_rewards[vid] for vid in env.vessel_ids])
            if self.flags.constraints_on:
                shaped = price_reward(raw_vec, self.ledger, metrics.e_t,
                                      metrics.berth_overflow,
                                      metrics.crane_overflow)
            else:
                shaped = raw_vec
            if self.flags.fairness_on:
                shaped = apply_fairness_penalty(shaped, self.fairness.beta,
                                                phi_val)
            if trace is not None:
                trace.append(("shape", t))

            for i, vid in enumerate(env.vessel_ids):
                z_i = np.concatenate([z_step, per_agent[i],
                                      [others_speed[i], others_req[i]]])
                low_trajs[vid].append(X[i], int(actions_idx[i]), float(shaped[i]),
                                      context=z_i)
                epoch_rewards[vid] += float(shaped[i])
            raw_total += float(raw_vec.sum())
            shaped_total += float(shaped.sum())
            if trace is not None:
                trace.append(("store", t))

        close_epoch()
        update(self.policy_low, list(low_trajs.values()))
        update(self.policy_high, [high_traj], gamma=gamma_high)

        emissions_total = state.cumulative_emissions
        ledger_sum = self.ledger.episode_emissions
        if abs(emissions_total - ledger_sum) > 1e-9:
            raise RuntimeError(
                f"ledger emission sum {ledger_sum} != twin total {emissions_total}")
        costs = env.cost_vector()
        record = EpisodeRecord(
            episode=ep,
            seed=self.seed,
            total_return=raw_total,
            emissions_total=emissions_total,
            cap=self.budget,
            violation_excess=max(0.0, emissions_total - self.budget),
            gini=gini(costs),
            minmax=minmax(costs),
            throughput=state.throughput,
            waiting_hours=state.waiting_hours,
            lambda_final=self.ledger.lam,
            beta_final=self.fairness.beta,
            max_mu=max(self.ledger.mu.values()),
            max_nu=max(self.ledger.nu.values()),
        )
        extras = {
            "shaped_return": shaped_total,
            "n_macro_decisions": n_macro,
            "ledger_episode_emissions": ledger_sum,
        }
        if cfg.hierarchy.cap_adapt:
            from .hierarchy import adapt_cap
            self.budget = adapt_cap(
                self.budget, record.gini, cfg.fairness.zeta,
                feasible=emissions_total <= self.budget,
                delta=cfg.hierarchy.cap_adapt_delta)
            self.ledger.budget = self.budget
        return record, extras

    def run(self) -> list[EpisodeRecord]:
        return [self.run_episode(ep)[0] for ep in range(self.cfg.episodes)]


# ---------------------------------------------------------------------------
# Budget calibration and seed workers
# ---------------------------------------------------------------------------

PROBE_EPISODES = 50
PROBE_WARMUP = 150
PROBE_FRACTION = 0.85


def calibrate_budget(cfg: RunConfig) -> float:
    """B as 85% of the unconstrained baseline's mean episode emissions over a
    50-episode probe on the first seed. The probe follows a warmup so it
    measures trained rather than random-policy behaviour.
    """
    if cfg.constraints.budget is not None:
        return cfg.constraints.budget
    warmup = min(PROBE_WARMUP, max(0, cfg.episodes - PROBE_EPISODES))
    probe_cfg = replace(cfg, mode="no-constraints",
                        episodes=min(warmup + PROBE_EPISODES, cfg.episodes))
    never_binding = cfg.env.max_step_emissions() * cfg.horizon
    probe = Experiment(probe_cfg, cfg.seeds[0], budget=never_binding)
    totals = [probe.run_episode(ep)[0].emissions_total
              for ep in range(probe_cfg.episodes)]
    return PROBE_FRACTION * float(np.mean(totals[-PROBE_EPISODES:]))


def run_seed(cfg: RunConfig, seed: int, budget: float) -> list[EpisodeRecord]:
    """One worker: all episodes for one seed, CSVs written to the out dir."""
    from .reporting import write_macro_csv, write_records_csv
    exp = Experiment(cfg, seed, budget)
    records = exp.run()
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_records_csv(os.path.join(cfg.out_dir, f"seed_{seed}.csv"), records)
    write_macro_csv(os.path.join(cfg.out_dir, f"macro_seed_{seed}.csv"),
                    exp.macro_log)
    save_policy(exp.policy_low,
                os.path.join(cfg.out_dir, f"policy_low_seed_{seed}.txt"))
    save_policy(exp.policy_high,
                os.path.join(cfg.out_dir, f"policy_high_seed_{seed}.txt"))
    return records


def run_experiment(cfg: RunConfig) -> dict[int, list[EpisodeRecord]]:
    """Run every seed, then write the cross-seed aggregate CSV."""
    from .reporting import write_aggregate_csv
    os.makedirs(cfg.out_dir, exist_ok=True)
    if not os.access(cfg.out_dir, os.W_OK):
        raise OSError(f"output directory {cfg.out_dir} is not writable")
    budget = calibrate_budget(cfg)
    workers = int(os.environ.get("ECOFAIR_THREADS", "1"))
    by_seed: dict[int, list[EpisodeRecord]] = {}
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {seed: pool.submit(run_seed, cfg, seed, budget)
                    for seed in cfg.seeds}
            for seed, fut in futs.items():
                by_seed[seed] = fut.result()
    else:
        for seed in cfg.seeds:
            by_seed[seed] = run_seed(cfg, seed, budget)
    summary = aggregate(by_seed)
    write_aggregate_csv(os.path.join(cfg.out_dir, "aggregate.csv"), summary)
    return by_seed


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

METRIC_FIELDS = RECORD_FIELDS[2:]


def aggregate(by_seed: dict[int, list[EpisodeRecord]]) -> list[dict]:
    """Mean and population std across seeds of each metric, in two views:
    mean over episodes and final episode."""
    lengths = {len(records) for records in by_seed.values()}
    if len(lengths) != 1:
        raise ValueError(f"ragged episode counts across seeds: {sorted(lengths)}")
    rows = []
    for metric in METRIC_FIELDS:
        per_seed_mean = []
        per_seed_final = []
        for records in by_seed.values():
            vals = [getattr(r, metric) for r in records]
            per_seed_mean.append(float(np.mean(vals)))
            per_seed_final.append(float(vals[-1]))
        rows.append({
            "metric": metric,
            "mean_over_episodes_mean": float(np.mean(per_seed_mean)),
            "mean_over_episodes_std": float(np.std(per_seed_mean)),
            "final_episode_mean": float(np.mean(per_seed_final)),
            "final_episode_std": float(np.std(per_seed_final)),
        })
    return rows


# ---------------------------------------------------------------------------
# Scaling probe
# ---------------------------------------------------------------------------

def _resize_fleet(env: EnvConfig, n_vessels: int) -> EnvConfig:
    base = env.vessels
    ports = [p.id for p in env.ports]
    vessels = tuple(
        dataclasses.replace(base[i % len(base)], id=f"V{i:03d}",
                            start=ports[i % len(ports)])
        for i in range(n_vessels)
    )
    return dataclasses.replace(env, vessels=vessels)


def scaling_probe(cfg: RunConfig, agent_counts: list[int],
                  episodes: int = 3) -> dict:
    """Wall-clock seconds per episode at each fleet size, plus the fitted
    log-log growth exponent of time versus N."""
    if sorted(agent_counts) != list(agent_counts):
        raise ValueError("agent counts must be sorted ascending")
    timings = []
    for n in agent_counts:
        sized = replace(cfg, env=_resize_fleet(cfg.env, n), episodes=episodes,
                        constraints=replace(cfg.constraints, budget=None))
        budget = sized.env.max_step_emissions() * sized.horizon * 0.5
        exp = Experiment(sized, cfg.seeds[0], budget=budget)
        start = time.perf_counter()
        for ep in range(episodes):
            exp.run_episode(ep)
        elapsed = (time.perf_counter() - start) / episodes
        timings.append((n, elapsed))
    logs_n = np.log([t[0] for t in timings])
    logs_t = np.log([max(t[1], 1e-9) for t in timings])
    exponent = float(np.polyfit(logs_n, logs_t, 1)[0])
    return {"timings": timings, "exponent": exponent}
