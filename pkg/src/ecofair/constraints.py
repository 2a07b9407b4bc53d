"""Online primal-dual pricing of the emission budget and port capacities.

The ledger holds one nonnegative dual per constraint: lam prices each kg of
CO2e against the per-window budget share, mu_p and nu_p price berth and crane
overflow demand at each port. Duals move by projected subgradient steps with
step size eta_base / sqrt(t + 1) and are clipped at dual_cap so shaped
rewards stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def step_size(t: int, eta_base: float) -> float:
    """Diminishing step size eta_base / sqrt(t + 1)."""
    if t < 0 or eta_base <= 0:
        raise ValueError("need t >= 0 and eta_base > 0")
    return eta_base / np.sqrt(t + 1.0)


@dataclass
class ConstraintLedger:
    budget: float                      # episode budget B, kg CO2e
    horizon: int                       # episode length T
    port_ids: tuple[str, ...]
    window: int | None = None          # rolling window T_w; None -> T
    eta_base: float = 0.05
    dual_cap: float = 1e3
    lam: float = 0.0
    mu: dict[str, float] = field(default_factory=dict)
    nu: dict[str, float] = field(default_factory=dict)
    step_count: int = 0                # global update index, drives eta_t
    violation_history: list[float] = field(default_factory=list)
    cumulative_violation: float = 0.0
    episode_emissions: float = 0.0
    archived_histories: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        for pid in self.port_ids:
            self.mu.setdefault(pid, 0.0)
            self.nu.setdefault(pid, 0.0)

    @property
    def window_len(self) -> int:
        return self.window if self.window is not None else self.horizon

    @property
    def budget_rate(self) -> float:
        """Per-step budget share B / T_w."""
        return self.budget / self.window_len

    def snapshot(self) -> dict:
        """Read-only view for logging."""
        return {
            "lam": self.lam,
            "max_mu": max(self.mu.values()) if self.mu else 0.0,
            "max_nu": max(self.nu.values()) if self.nu else 0.0,
            "cumulative_violation": self.cumulative_violation,
        }


def update_dual_emission(ledger: ConstraintLedger, e_t: float, t: int) -> ConstraintLedger:
    """lam <- clip([lam + eta_t (e_t - B/T_w)]+) and record the hinge excess."""
    if e_t < 0:
        raise ValueError("emissions must be nonnegative")
    eta = step_size(t, ledger.eta_base)
    excess = e_t - ledger.budget_rate
    ledger.lam = min(ledger.dual_cap, max(0.0, ledger.lam + eta * excess))
    hinge = max(0.0, excess)
    ledger.violation_history.append(hinge)
    ledger.cumulative_violation += hinge
    return ledger


def update_dual_capacity(ledger: ConstraintLedger, berth_overflow: dict[str, int],
                         crane_overflow: dict[str, int], t: int) -> ConstraintLedger:
    """mu_p <- clip([mu_p + eta_t [q - C]+]+), same for nu_p on crane demand."""
    eta = step_size(t, ledger.eta_base)
    for pid, over in berth_overflow.items():
        if over < 0:
            raise ValueError("overflow must be nonnegative")
        if over:
            ledger.mu[pid] = min(ledger.dual_cap, ledger.mu[pid] + eta * over)
    for pid, over in crane_overflow.items():
        if over < 0:
            raise ValueError("overflow must be nonnegative")
        if over:
            ledger.nu[pid] = min(ledger.dual_cap, ledger.nu[pid] + eta * over)
    return ledger


def price_reward(raw, ledger: ConstraintLedger, e_t: float,
                 berth_overflow: dict[str, int] | None = None,
                 crane_overflow: dict[str, int] | None = None):
    """Shaped reward r - lam*e_t - sum_p mu_p*[q-C]+ - sum_p nu_p*[q-C]+.

    The penalty is the same additive amount for every agent; `raw` may be a
    scalar or an array of per-agent rewards.
    """
    penalty = ledger.lam * e_t
    for pid, over in (berth_overflow or {}).items():
        if over:
            penalty += ledger.mu[pid] * over
    for pid, over in (crane_overflow or {}).items():
        if over:
            penalty += ledger.nu[pid] * over
    return raw - penalty


def reset_episode(ledger: ConstraintLedger, mode: str = "persist") -> ConstraintLedger:
    """Episode boundary: archive the violation history, keep or zero the duals."""
    if mode not in ("persist", "reset"):
        raise ValueError(f"unknown episode mode {mode!r}")
    ledger.archived_histories.append(ledger.violation_history)
    ledger.violation_history = []
    ledger.episode_emissions = 0.0
    if mode == "reset":
        ledger.lam = 0.0
        for pid in ledger.mu:
            ledger.mu[pid] = 0.0
            ledger.nu[pid] = 0.0
        ledger.step_count = 0
    return ledger


def lagrangian_value(ledger: ConstraintLedger, total_return: float,
                     total_emissions: float) -> float:
    """Diagnostic: return - lam * (E - B). Capacity terms use hinge demand and
    are already folded into the pricing path, so only the budget term appears.
    """
    return total_return - ledger.lam * (total_emissions - ledger.budget)
