"""Equity metrics over per-vessel cumulative costs and the scheduled penalty weight.

Both functionals map a nonnegative cost vector to [0, 1] with lower meaning
fairer: the Gini coefficient directly, and 1 - min/max for the ratio view.
The penalty weight beta_t follows either a linear ramp or a target-tracking
rule that only moves while the functional exceeds its target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("gini", "minmax")


def _check_costs(c) -> np.ndarray:
    arr = np.asarray(c, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("cost vector needs at least 2 entries")
    if np.any(arr < 0):
        raise ValueError("cost entries must be nonnegative")
    return arr


def gini(c) -> float:
    """Gini coefficient: 2 sum_i i*c_(i) / (N sum c) - (N+1)/N, in [0, 1-1/N].

    An all-zero vector is perfect equality by definition (returns 0).
    """
    arr = _check_costs(c)
    total = arr.sum()
    if total == 0.0:
        return 0.0
    srt = np.sort(arr)
    n = arr.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.dot(ranks, srt) / (n * total) - (n + 1) / n)


def minmax(c) -> float:
    """Min-max ratio min c / max c in [0, 1]; all-zero counts as equal (1)."""
    arr = _check_costs(c)
    top = arr.max()
    if top == 0.0:
        return 1.0
    return float(arr.min() / top)


def phi(c, kind: str) -> float:
    """Unified unfairness value: gini, or 1 - minmax; lower is fairer."""
    if kind == "gini":
        return gini(c)
    if kind == "minmax":
        return 1.0 - minmax(c)
    raise ValueError(f"unknown fairness kind {kind!r}")


def schedule_beta_linear(t: int, s_beta: float, beta_max: float) -> float:
    """Linear ramp min(beta_max, s_beta * t)."""
    if s_beta < 0 or beta_max < 0:
        raise ValueError("schedule parameters must be nonnegative")
    return min(beta_max, s_beta * t)


def schedule_beta_tracking(beta: float, phi_val: float, zeta: float,
                           eta_beta: float, beta_max: float) -> float:
    """Target tracking min(beta_max, beta + eta_beta * (phi - zeta)+); nondecreasing."""
    return min(beta_max, beta + eta_beta * max(0.0, phi_val - zeta))


def apply_fairness_penalty(rewards, beta: float, phi_val: float):
    """Subtract the same beta * phi term from every agent's priced reward."""
    return rewards - beta * phi_val


@dataclass
class FairnessState:
    """Penalty-weight schedule state plus the running fairness regret ledger."""
    kind: str = "gini"
    schedule: str = "tracking"   # linear | tracking
    beta: float = 0.0
    beta_max: float = 50.0
    s_beta: float = 0.0
    eta_beta: float = 0.1
    zeta: float = 0.25
    rho: float = 0.4
    step_count: int = 0
    cumulative_regret: float = 0.0
    last_phi: float = 0.0
    regret_history: list[float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fairness kind {self.kind!r}")
        if self.regret_history is None:
            self.regret_history = []

    def update(self, costs) -> float:
        """Evaluate phi on episode-to-date costs, advance beta, log the regret."""
        val = phi(costs, self.kind)
        self.last_phi = val
        hinge = max(0.0, val - self.zeta)
        self.cumulative_regret += hinge
        self.regret_history.append(hinge)
        self.step_count += 1
        if self.schedule == "linear":
            self.beta = schedule_beta_linear(self.step_count, self.s_beta, self.beta_max)
        else:
            self.beta = schedule_beta_tracking(
                self.beta, val, self.zeta, self.eta_beta, self.beta_max)
        return val
