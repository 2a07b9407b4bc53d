"""Parameter-shared linear-softmax policies with analytic gradients.

One PolicySpec serves every agent at a tier, so policy memory is O(1) in the
fleet size. Updates are episodic REINFORCE with a running-mean baseline over
returns-to-go; advantages are additionally divided by the running return
standard deviation so the default learning rate works across reward scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .twin import MicroAction, Observation

MICRO_ACTIONS = MicroAction.space_size()
WEATHER_ONE_HOT = ("calm", "swell", "storm")
MICRO_FEATURES = 15 + len(WEATHER_ONE_HOT)  # see featurize() ordering
BASELINE_WINDOW = 400  # samples per timestep kept in the running moments


class LearnerError(RuntimeError):
    """Raised when an update produces non-finite parameters or gradients."""


@dataclass
class PolicySpec:
    weights: np.ndarray          # (n_actions, feature_dim)
    temperature: float = 1.0
    learning_rate: float = 5e-4
    gamma: float = 0.99
    entropy_coef: float = 0.01
    max_grad_norm: float = 100.0
    # per-timestep running moments of returns-to-go; the time-indexed mean is
    # the baseline and the pooled std rescales advantages
    baseline_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    baseline_m2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    baseline_count: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def _grow_baseline(self, horizon: int) -> None:
        if self.baseline_mean.size < horizon:
            pad = horizon - self.baseline_mean.size
            self.baseline_mean = np.concatenate([self.baseline_mean, np.zeros(pad)])
            self.baseline_m2 = np.concatenate([self.baseline_m2, np.zeros(pad)])
            self.baseline_count = np.concatenate(
                [self.baseline_count, np.zeros(pad, dtype=int)])

    def baseline_std(self) -> float:
        total = int(self.baseline_count.sum())
        if total < 2:
            return 1.0
        return max(1e-6, float(np.sqrt(self.baseline_m2.sum() / total)))

    def baseline_std_at(self, t: np.ndarray) -> np.ndarray:
        """Per-timestep return std with a pooled fallback while counts are low.

        Return variance is strongly horizon-dependent (early steps see the
        whole shaped future), so whitening per timestep keeps every step's
        signal at comparable scale in the gradient.
        """
        pooled = self.baseline_std()
        counts = self.baseline_count[t]
        var = np.where(counts > 0, self.baseline_m2[t] / np.maximum(counts, 1), 0.0)
        std = np.sqrt(np.maximum(var, 0.0))
        return np.where(counts >= 8, np.maximum(std, 1e-2 * pooled), pooled)


def make_policy(feature_dim: int, n_actions: int, *, temperature: float = 1.0,
                learning_rate: float = 5e-4, gamma: float = 0.99,
                entropy_coef: float = 0.01,
                max_grad_norm: float = 100.0) -> PolicySpec:
    """Zero-initialised policy: uniform over actions at every state."""
    return PolicySpec(
        weights=np.zeros((n_actions, feature_dim)),
        temperature=temperature,
        learning_rate=learning_rate,
        gamma=gamma,
        entropy_coef=entropy_coef,
        max_grad_norm=max_grad_norm,
    )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def action_probabilities(policy: PolicySpec, x: np.ndarray,
                         mask: np.ndarray | None = None) -> np.ndarray:
    if x.shape[-1] != policy.feature_dim:
        raise ValueError(
            f"feature length {x.shape[-1]} != policy dim {policy.feature_dim}")
    z = policy.weights @ x / policy.temperature
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    return softmax_rows(z)


def act(policy: PolicySpec, x: np.ndarray, rng: np.random.Generator,
        mask: np.ndarray | None = None) -> tuple[int, float]:
    """Sample an action index; returns (index, log-probability of that index)."""
    p = action_probabilities(policy, x, mask)
    a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    a = min(a, p.size - 1)
    return a, float(np.log(p[a]))


def act_batch(policy: PolicySpec, X: np.ndarray,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised act() over rows of X (one row per agent, shared parameters)."""
    if X.shape[1] != policy.feature_dim:
        raise ValueError(f"feature length {X.shape[1]} != policy dim {policy.feature_dim}")
    P = softmax_rows(X @ policy.weights.T / policy.temperature)
    u = rng.random(X.shape[0])
    cdf = np.cumsum(P, axis=1)
    actions = (cdf < u[:, None]).sum(axis=1)
    np.clip(actions, 0, P.shape[1] - 1, out=actions)
    logps = np.log(P[np.arange(X.shape[0]), actions])
    return actions, logps


def grad_log_prob(policy: PolicySpec, x: np.ndarray, action: int,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Analytic gradient of log pi(action | x) in the weights:
    (onehot(action) - p) outer x, divided by the temperature.
    """
    p = action_probabilities(policy, x, mask)
    coeff = -p.copy()
    coeff[action] += 1.0
    if mask is not None:
        coeff = np.where(mask, coeff, 0.0)
    return np.outer(coeff, x) / policy.temperature


@dataclass
class Trajectory:
    """One agent-episode of transitions consumed by update().

    `contexts` optionally carries a global training-time context vector per
    step (shared across agents); execution never sees it (CTDE).
    """
    features: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    contexts: list[np.ndarray | None] = field(default_factory=list)

    def append(self, x: np.ndarray, action: int, reward: float,
               mask: np.ndarray | None = None,
               context: np.ndarray | None = None) -> None:
        self.features.append(x)
        self.actions.append(action)
        self.rewards.append(reward)
        self.masks.append(mask)
        self.contexts.append(context)

    def __len__(self) -> int:
        return len(self.actions)


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def update(policy: PolicySpec, trajectories: list[Trajectory],
           gamma: float | None = None) -> PolicySpec:
    """One batched policy-gradient step over the episode's trajectories.

    W += alpha * sum_t advantage_t * grad log pi(a_t | x_t) plus the entropy
    bonus gradient. The baseline is the running mean of returns-to-go; the
    running std rescales advantages.
    """
    if gamma is None:
        gamma = policy.gamma
    rows_x, rows_a, rows_g, rows_t, rows_m, rows_z = [], [], [], [], [], []
    any_mask = False
    any_ctx = False
    for traj in trajectories:
        if len(traj) == 0:
            continue
        g = returns_to_go(traj.rewards, gamma)
        rows_x.extend(traj.features)
        rows_a.extend(traj.actions)
        rows_g.extend(g)
        rows_t.extend(range(len(traj)))
        rows_m.extend(traj.masks)
        rows_z.extend(traj.contexts)
        any_mask = any_mask or any(m is not None for m in traj.masks)
        any_ctx = any_ctx or any(z is not None for z in traj.contexts)
    if not rows_a:
        return policy
    X = np.asarray(rows_x)
    A = np.asarray(rows_a)
    G = np.asarray(rows_g)
    T = np.asarray(rows_t)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(G))):
        raise LearnerError(
            f"non-finite batch: features finite={np.all(np.isfinite(X))}, "
            f"returns finite={np.all(np.isfinite(G))}, batch {A.size}")

    # fold the batch into the running moments first so the very first update
    # already sees standardised advantages; capping the effective count keeps
    # the baseline tracking the reward scale as prices ramp over training
    policy._grow_baseline(int(T.max()) + 1)
    cap = BASELINE_WINDOW
    for t, g in zip(T, G):
        if policy.baseline_count[t] >= cap:
            policy.baseline_m2[t] *= cap / policy.baseline_count[t]
            policy.baseline_count[t] = cap - 1
        policy.baseline_count[t] += 1
        delta = g - policy.baseline_mean[t]
        policy.baseline_mean[t] += delta / policy.baseline_count[t]
        policy.baseline_m2[t] += delta * (g - policy.baseline_mean[t])
    adv = G - policy.baseline_mean[T]
    if any_ctx:
        # centralised-training value baseline: regress the centred returns on
        # the shared global context and subtract the fit; the context is fixed
        # before the step's actions, so the estimator stays unbiased
        Z = np.asarray([z if z is not None else np.zeros_like(rows_z[0])
                        for z in rows_z])
        coef, *_ = np.linalg.lstsq(Z, adv, rcond=None)
        adv = adv - Z @ coef
    # standardise by the residual spread that is actually left after the
    # baselines, not by the raw return spread they removed
    adv = adv / max(float(np.std(adv)), 1e-8)
    Z = X @ policy.weights.T / policy.temperature
    if any_mask:
        M = np.array([m if m is not None else np.ones(policy.n_actions, bool)
                      for m in rows_m])
        Z = np.where(M, Z, -np.inf)
    P = softmax_rows(Z)
    coeff = -P
    coeff[np.arange(A.size), A] += 1.0
    if any_mask:
        coeff = np.where(M, coeff, 0.0)
    grad = (coeff * adv[:, None]).T @ X / policy.temperature

    if policy.entropy_coef:
        logP = np.log(np.clip(P, 1e-300, None))
        H = -(P * logP).sum(axis=1)
        ent_coeff = -P * (logP + H[:, None])
        if any_mask:
            ent_coeff = np.where(M, ent_coeff, 0.0)
        grad = grad + policy.entropy_coef * (ent_coeff.T @ X) / policy.temperature

    if not np.all(np.isfinite(grad)):
        raise LearnerError(
            f"non-finite gradient: |adv| max {np.abs(adv).max():.3g}, "
            f"|W| max {np.abs(policy.weights).max():.3g}, batch {A.size}")
    norm = float(np.linalg.norm(grad))
    if policy.max_grad_norm and norm > policy.max_grad_norm:
        grad = grad * (policy.max_grad_norm / norm)
    policy.weights += policy.learning_rate * grad
    return policy


# ---------------------------------------------------------------------------
# Feature construction
# ---------------------------------------------------------------------------

def featurize(obs: Observation, directive=None, *,
              cost_rate_scale: float = 0.2) -> np.ndarray:
    """Fixed-length micro feature vector. Ordering:

    0 bias (always 1), 1 speed/v_max, 2 effective v_max/v_max,
    3 fuel fraction, 4 docked flag, 5 leg fraction, 6 healthy flag,
    7 failure hours/10, 8 berth queue/capacity, 9 crane queue/capacity,
    10..12 weather one-hot (calm, swell, storm), 13 hull coefficient/3,
    14 own cost rate, 15 route remaining nm/1000, 16 window position,
    17 envelope remaining.
    """
    w = np.zeros(len(WEATHER_ONE_HOT))
    if obs.weather_scenario in WEATHER_ONE_HOT:
        w[WEATHER_ONE_HOT.index(obs.weather_scenario)] = 1.0
    if directive is not None and directive.envelope > 0:
        env_left = max(0.0, 1.0 - obs.envelope_used / directive.envelope)
    else:
        env_left = 0.0
    target = obs.window_target if obs.window_target else obs.t
    horizon_scale = 50.0
    return np.array([
        1.0,
        obs.speed_knots / obs.v_max,
        obs.effective_v_max / obs.v_max,
        obs.fuel_level / obs.initial_fuel,
        1.0 if obs.in_port else 0.0,
        obs.leg_fraction,
        1.0 if obs.healthy else 0.0,
        obs.failure_remaining / 10.0,
        obs.local_berth_queue / obs.local_berth_capacity,
        obs.local_crane_queue / obs.local_crane_capacity,
        *w,
        obs.hull_coefficient / 3.0,
        cost_rate_scale * obs.own_cumulative_cost / (1.0 + obs.t),
        obs.route_remaining_nm / 1000.0,
        float(np.clip((target - obs.t) / horizon_scale, -1.0, 1.0)),
        env_left,
    ])


def featurize_central(per_agent: list[np.ndarray], own_index: int) -> np.ndarray:
    """Centralised view: own feature block first, the others in wrap-around
    order. Length is N times the per-agent length; each block keeps its bias
    entry, which together act as one shared intercept.
    """
    n = len(per_agent)
    order = [(own_index + j) % n for j in range(n)]
    return np.concatenate([per_agent[j] for j in order])


# ---------------------------------------------------------------------------
# Baseline (ablation) configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapingFlags:
    """What the episode loop turns on for a given baseline mode."""
    mode: str
    constraints_on: bool
    fairness_on: bool
    flat_macro: bool      # tau_H = T, one trivial macro window
    centralised: bool


def configure_baseline(mode: str) -> ShapingFlags:
    """Resolve an ablation mode name into layer switches.

    full: everything on. no-constraints: all shaping frozen at zero (raw and
    shaped returns coincide). no-fairness: beta frozen, prices live.
    flat-decentralised: one macro window, shaping off. centralised: full
    shaping over concatenated observations. hier-only: hierarchy with all
    shaping off.
    """
    table = {
        "full": ShapingFlags(mode, True, True, False, False),
        "no-constraints": ShapingFlags(mode, False, False, False, False),
        "no-fairness": ShapingFlags(mode, True, False, False, False),
        "flat-decentralised": ShapingFlags(mode, False, False, True, False),
        "centralised": ShapingFlags(mode, True, True, False, True),
        "hier-only": ShapingFlags(mode, False, False, False, False),
    }
    if mode not in table:
        raise ValueError(f"unknown baseline mode {mode!r}")
    return table[mode]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_policy(policy: PolicySpec, path: str) -> None:
    """Text checkpoint: 'n_actions feature_dim' header, then one row of
    row-major weights per line at full precision.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{policy.n_actions} {policy.feature_dim}\n")
        for row in policy.weights:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_policy(path: str, **kwargs) -> PolicySpec:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        n_actions, dim = int(header[0]), int(header[1])
        weights = np.array([
            [float(x) for x in fh.readline().split()] for _ in range(n_actions)
        ])
    if weights.shape != (n_actions, dim):
        raise ValueError(f"checkpoint shape mismatch in {path}")
    return PolicySpec(weights=weights, **kwargs)
