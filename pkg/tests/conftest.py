import numpy as np
import pytest

from ecofair.config import env_config_from_dict, run_config_from_dict


def tiny_env_doc(**overrides):
    doc = {
        "ports": [
            {"id": "A", "berth_capacity": 2, "crane_capacity": 1},
            {"id": "B", "berth_capacity": 1, "crane_capacity": 1},
            {"id": "C", "berth_capacity": 1, "crane_capacity": 1},
        ],
        "lanes": [
            {"from": "A", "to": "B", "nm": 30, "lane_class": "coastal"},
            {"from": "B", "to": "C", "nm": 40, "lane_class": "coastal"},
            {"from": "C", "to": "A", "nm": 36, "lane_class": "open_sea"},
        ],
        "vessels": [
            {"id": "v0", "hull_coefficient": 1.0, "v_ref": 12.0, "v_max": 18.0, "start": "A"},
            {"id": "v1", "hull_coefficient": 2.0, "v_ref": 12.0, "v_max": 18.0, "start": "B"},
            {"id": "v2", "hull_coefficient": 3.0, "v_ref": 12.0, "v_max": 18.0, "start": "C"},
        ],
        "prices": {"fuel_price": 0.3, "time_price": 0.05, "wait_price": 2.0},
        "job_model": "rotation",
    }
    doc.update(overrides)
    return doc


def tiny_run_doc(**overrides):
    doc = {
        "env": tiny_env_doc(),
        "episodes": 3,
        "horizon": 12,
        "seeds": [1],
        "mode": "full",
        "constraints": {"budget": 400.0, "eta_base": 0.02, "dual_cap": 5.0},
        "fairness": {"zeta": 0.1, "beta_max": 50.0, "eta_beta": 0.2},
        "hierarchy": {"tau_h": 4},
        "learner": {"learning_rate": 2e-3, "gamma": 0.99},
        "out_dir": "unused",
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def tiny_env():
    return env_config_from_dict(tiny_env_doc())


@pytest.fixture
def tiny_run():
    return run_config_from_dict(tiny_run_doc())


def gini_pairwise_oracle(c) -> float:
    """Mean-absolute-difference form: sum |ci - cj| / (2 N^2 mean)."""
    arr = np.asarray(c, dtype=float)
    n = arr.size
    mean = arr.mean()
    if mean == 0:
        return 0.0
    diffs = np.abs(arr[:, None] - arr[None, :]).sum()
    return float(diffs / (2.0 * n * n * mean))
