import pytest

from ecofair.config import (ConfigError, env_config_from_dict,
                            generate_env_config, run_config_from_dict)
from conftest import tiny_env_doc, tiny_run_doc


def test_unknown_keys_rejected():
    doc = tiny_env_doc()
    doc["mystery"] = 1
    with pytest.raises(ConfigError, match="mystery"):
        env_config_from_dict(doc)


def test_unknown_nested_key_rejected():
    doc = tiny_env_doc()
    doc["prices"] = {"fuel_price": 1.0, "bribe_price": 2.0}
    with pytest.raises(ConfigError, match="bribe_price"):
        env_config_from_dict(doc)


def test_zero_capacity_rejected():
    doc = tiny_env_doc()
    doc["ports"][0]["berth_capacity"] = 0
    with pytest.raises(ConfigError, match="capacities"):
        env_config_from_dict(doc)


def test_disconnected_network_rejected():
    doc = tiny_env_doc()
    doc["ports"].append({"id": "D", "berth_capacity": 1, "crane_capacity": 1})
    with pytest.raises(ConfigError, match="disconnected"):
        env_config_from_dict(doc)


def test_bad_weather_row_rejected():
    doc = tiny_env_doc()
    doc["weather"] = {"transition": [[0.5, 0.4, 0.0], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]]}
    with pytest.raises(ConfigError, match="sum to 1"):
        env_config_from_dict(doc)


def test_run_config_validates_modes_and_shapes():
    doc = tiny_run_doc(mode="supercharged")
    with pytest.raises(ConfigError, match="unknown mode"):
        run_config_from_dict(doc)
    doc = tiny_run_doc()
    doc["hierarchy"] = {"tau_h": 99}
    with pytest.raises(ConfigError, match="tau_h"):
        run_config_from_dict(doc)


def test_resolved_s_beta_reaches_cap_at_60_percent():
    cfg = run_config_from_dict(tiny_run_doc())
    s = cfg.resolved_s_beta()
    steps_to_cap = cfg.fairness.beta_max / s
    assert steps_to_cap == pytest.approx(0.6 * cfg.episodes * cfg.horizon)


def test_generator_produces_valid_connected_network():
    for seed in (0, 7, 42):
        doc = generate_env_config(seed, n_ports=16, n_vessels=50)
        cfg = env_config_from_dict(doc)  # runs full validation
        assert len(cfg.ports) == 16
        assert len(cfg.vessels) == 50
        degree = {p.id: 0 for p in cfg.ports}
        for lane in cfg.lanes:
            degree[lane.origin] += 1
            degree[lane.dest] += 1
            assert 100.0 <= lane.nm <= 2000.0
        assert min(degree.values()) >= 2


def test_generator_is_seed_deterministic():
    assert generate_env_config(3) == generate_env_config(3)
    assert generate_env_config(3) != generate_env_config(4)
