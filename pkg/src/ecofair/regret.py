"""Empirical regret checks for the pricing and fairness loops.

Each fixture closes the loop between a price signal and a synthetic actor
whose constraint signal decreases in that price, then fits the log-log slope
of the cumulative hinge excess against time. Sublinear growth (slope well
below 1) is the empirical counterpart of the square-root regret claims.

The emission fixture's dual update consumes the realised noisy signal, while
the violation ledger accumulates the hinge of the actor's conditional mean
response: with zero-mean demand noise the realised hinge has a positive floor
at the equilibrium and can only grow linearly, so the mean response is the
quantity whose excess is informative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import step_size
from .fairness import gini, phi, schedule_beta_tracking

SLOPE_THRESHOLD = 0.6
FIT_RANGE = (1_000, 100_000)


@dataclass(frozen=True)
class SlopeReport:
    kind: str
    steps: int
    slope: float | None        # None when no hinge mass in the fit window
    threshold: float
    passed: bool
    tail_mean: float | None    # emissions fixture: realised mean, last 20%
    tail_target: float | None
    detail: str

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        slope = "n/a (no violations)" if self.slope is None else f"{self.slope:.4f}"
        out = [f"kind={self.kind} steps={self.steps} slope={slope} "
               f"threshold<={self.threshold} [{status}]"]
        if self.tail_mean is not None:
            out.append(f"tail mean signal {self.tail_mean:.4f} "
                       f"(target <= {self.tail_target:.4f})")
        if self.detail:
            out.append(self.detail)
        return out


def fit_loglog_slope(cumulative: np.ndarray, lo: int, hi: int) -> float | None:
    """Least-squares slope of log cum(t) vs log t over steps [lo, hi] (1-based).

    Returns None when the cumulative hinge is zero throughout the window.
    """
    hi = min(hi, cumulative.size)
    if hi <= lo:
        raise ValueError("fit window is empty")
    t = np.arange(lo, hi + 1)
    seg = cumulative[lo - 1:hi]
    keep = seg > 0
    if not np.any(keep):
        return None
    return float(np.polyfit(np.log(t[keep]), np.log(seg[keep]), 1)[0])


def emissions_fixture(steps: int, seed: int = 0, *, budget_rate: float = 1.0,
                      high_rate: float = 2.0, response_slope: float = 0.5,
                      noise_scale: float = 0.5, eta_base: float = 0.2) -> dict:
    """Primal-dual loop against an actor with mean emission rate
    max(0, high_rate - response_slope * lam), demand noise fed to the dual.
    """
    rng = np.random.default_rng(seed)
    lam = 0.0
    cum = np.empty(steps)
    realised = np.empty(steps)
    running = 0.0
    noise = noise_scale * (rng.uniform(0.0, 2.0 * budget_rate, steps) - budget_rate)
    for t in range(steps):
        mean_rate = max(0.0, high_rate - response_slope * lam)
        e_t = max(0.0, mean_rate + noise[t])
        running += max(0.0, mean_rate - budget_rate)
        cum[t] = running
        realised[t] = e_t
        lam = max(0.0, lam + step_size(t, eta_base) * (e_t - budget_rate))
    tail = realised[int(0.8 * steps):]
    return {
        "cumulative_hinge": cum,
        "realised": realised,
        "tail_mean": float(tail.mean()),
        "budget_rate": budget_rate,
        "final_lambda": lam,
    }


def fairness_fixture(steps: int, seed: int = 0, *, n_agents: int = 8,
                     zeta: float = 0.15, eta_beta: float = 0.05,
                     beta_max: float = 25.0, contraction: float = 0.5,
                     noise_scale: float = 0.05) -> dict:
    """Tracking-beta loop against agents whose cost-rate dispersion contracts
    exponentially in beta; the hinge is on realised phi of cumulative costs.
    """
    rng = np.random.default_rng(seed)
    base = np.linspace(0.2, 1.8, n_agents)
    mean_rate = base.mean()
    beta = 0.0
    costs = np.zeros(n_agents)
    cum = np.empty(steps)
    running = 0.0
    phis = np.empty(steps)
    for t in range(steps):
        shrink = np.exp(-contraction * beta)
        rates = mean_rate + (base - mean_rate) * shrink
        costs = costs + rates + noise_scale * rng.random(n_agents)
        val = gini(costs)
        running += max(0.0, val - zeta)
        cum[t] = running
        phis[t] = val
        beta = schedule_beta_tracking(beta, val, zeta, eta_beta, beta_max)
    return {
        "cumulative_hinge": cum,
        "phi_trace": phis,
        "final_beta": beta,
        "zeta": zeta,
    }


def verify_regret(kind: str, steps: int, seed: int = 0,
                  fit_range: tuple[int, int] = FIT_RANGE,
                  threshold: float = SLOPE_THRESHOLD) -> SlopeReport:
    """Run the requested fixture and judge its cumulative-hinge slope."""
    if steps < 10_000:
        raise ValueError("need at least 10^4 steps for a stable fit")
    lo = min(fit_range[0], steps // 10)
    hi = min(fit_range[1], steps)
    if kind == "emissions":
        out = emissions_fixture(steps, seed)
        slope = fit_loglog_slope(out["cumulative_hinge"], lo, hi)
        tail_target = out["budget_rate"] * 1.05
        tail_ok = out["tail_mean"] <= tail_target
        passed = (slope is None or slope <= threshold) and tail_ok
        return SlopeReport(
            kind=kind, steps=steps, slope=slope, threshold=threshold,
            passed=passed, tail_mean=out["tail_mean"], tail_target=tail_target,
            detail=f"final price {out['final_lambda']:.4f}")
    if kind == "fairness":
        out = fairness_fixture(steps, seed)
        slope = fit_loglog_slope(out["cumulative_hinge"], lo, hi)
        passed = slope is None or slope <= threshold
        return SlopeReport(
            kind=kind, steps=steps, slope=slope, threshold=threshold,
            passed=passed, tail_mean=None, tail_target=None,
            detail=(f"final weight {out['final_beta']:.4f}, "
                    f"final phi {out['phi_trace'][-1]:.4f}"))
    raise ValueError(f"unknown regret kind {kind!r}")
