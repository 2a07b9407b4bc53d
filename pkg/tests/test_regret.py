import numpy as np
import pytest

from ecofair.regret import (emissions_fixture, fairness_fixture,
                            fit_loglog_slope, verify_regret)


def test_constant_hinge_stream_is_linear():
    cum = np.cumsum(np.full(20_000, 0.5))
    slope = fit_loglog_slope(cum, 1_000, 20_000)
    assert slope == pytest.approx(1.0, abs=0.01)


def test_all_feasible_stream_not_applicable():
    assert fit_loglog_slope(np.zeros(20_000), 1_000, 20_000) is None


def test_sqrt_like_stream_has_half_slope():
    t = np.arange(1, 20_001)
    slope = fit_loglog_slope(np.sqrt(t), 1_000, 20_000)
    assert slope == pytest.approx(0.5, abs=0.01)


def test_emissions_fixture_closed_loop():
    out = emissions_fixture(30_000, seed=1)
    slope = fit_loglog_slope(out["cumulative_hinge"], 1_000, 30_000)
    assert slope is not None and slope <= 0.6
    assert out["tail_mean"] <= out["budget_rate"] * 1.05
    # price settles near the responsive actor's equilibrium (2.0)
    assert out["final_lambda"] == pytest.approx(2.0, abs=0.3)


def test_fairness_fixture_closed_loop():
    out = fairness_fixture(30_000, seed=1)
    slope = fit_loglog_slope(out["cumulative_hinge"], 1_000, 30_000)
    assert slope is None or slope <= 0.6
    assert out["phi_trace"][-1] <= out["zeta"] + 0.05


def test_verify_regret_reports():
    rep = verify_regret("emissions", 20_000, seed=0)
    assert rep.passed
    assert any("PASS" in line for line in rep.lines())
    rep = verify_regret("fairness", 20_000, seed=0)
    assert rep.passed
    with pytest.raises(ValueError, match="unknown regret kind"):
        verify_regret("queueing", 20_000)
    with pytest.raises(ValueError, match="10\\^4"):
        verify_regret("emissions", 500)


def test_fixture_determinism():
    a = emissions_fixture(5_000 * 4, seed=9)
    b = emissions_fixture(5_000 * 4, seed=9)
    assert np.array_equal(a["cumulative_hinge"], b["cumulative_hinge"])
