from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from gridmarl.core.powerflow import BusRecord, FeederModel
from gridmarl.envs.base import MultiComponentEnv
from gridmarl.envs.building import BuildingEnv, BuildingParams
from gridmarl.envs.multi_agent import MultiAgentEnv, SystemReward
from gridmarl.envs.pv import PVEnv
from gridmarl.envs.storage import StorageEnv
from gridmarl.services.profiles import write_profile

HORIZON = 6
DT_HOURS = 5 / 60


def chain_feeder(n_buses: int = 3, r: float = 0.01, x: float = 0.02) -> FeederModel:
    buses = [BusRecord(id="0")]
    buses += [BusRecord(id=str(k), parent=str(k - 1), r=r, x=x) for k in range(1, n_buses)]
    return FeederModel(buses=tuple(buses))


def small_env(system_reward: SystemReward | None = None, horizon: int = HORIZON) -> MultiAgentEnv:
    """Two agents on bus 2 of a 3-bus chain: a building+storage agent and a PV agent."""
    building = BuildingEnv("building", np.full(horizon + 2, 30.0), horizon, DT_HOURS, BuildingParams(n_zones=2))
    storage = StorageEnv("storage", horizon, DT_HOURS)
    pv = PVEnv("pv", np.linspace(0.0, 40.0, horizon + 2), horizon, DT_HOURS, rated_kw=40.0)
    return MultiAgentEnv(
        agents={"a": MultiComponentEnv("a", [building, storage]), "b": pv},
        feeder=chain_feeder(),
        agent_buses={"a": "2", "b": "2"},
        base_load_kw={"1": np.full(horizon, 300.0), "2": np.full(horizon, 400.0)},
        grid_masks={"a": {"v_comm": True}, "b": {"v_min": True, "v_max": True}},
        system_reward=system_reward,
        v_lower=0.99,
        v_upper=1.05,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def env() -> MultiAgentEnv:
    return small_env(SystemReward(weight=100.0, agents=("a", "b")))


def scenario_dict(horizon: int = HORIZON) -> dict:
    """A tiny but complete scenario; profile paths are relative to the YAML file."""
    return {
        "name": "tiny",
        "seed": 3,
        "horizon": horizon,
        "dt_minutes": 5,
        "feeder": {
            "buses": [
                {"id": "0"},
                {"id": "1", "parent": "0", "r": 0.01, "x": 0.02, "base_load": "profiles/load.csv", "load_scale": 40.0},
                {"id": "2", "parent": "1", "r": 0.01, "x": 0.02, "base_load": "profiles/load.csv", "load_scale": 60.0},
            ]
        },
        "agents": [
            {
                "id": "house",
                "type": "multi-component",
                "bus": "2",
                "grid_observation": {"v_comm": True},
                "components": [
                    {"type": "building", "name": "building", "ambient_profile": "profiles/ambient.csv", "n_zones": 2},
                    {"type": "pv", "name": "pv", "availability_profile": "profiles/pv.csv", "rated_kw": 30.0},
                    {"type": "storage", "name": "storage"},
                ],
            },
            {
                "id": "station",
                "type": "single-component",
                "bus": "2",
                "components": [{"type": "ev_station", "name": "ev", "n_chargers": 2, "mean_gap_hours": 0.1,
                                "dwell_min_hours": 0.1, "dwell_max_hours": 0.2}],
            },
        ],
        "system_reward": {"signal": "v_comm", "apportion": "even"},
        "trainer": {
            "algorithm": "maddpg",
            "maddpg": {
                "iterations": 2,
                "episodes_per_iteration": 2,
                "updates_per_iteration": 2,
                "buffer_size": 100,
                "batch_size": 4,
                "warmup_steps": 0,
                "hidden_sizes": [8],
                "checkpoint_every": 1,
            },
        },
    }


def write_scenario(directory: Path, data: dict | None = None, horizon: int = HORIZON) -> Path:
    """Write profiles and a scenario YAML under ``directory``; returns the YAML path."""
    profiles = directory / "profiles"
    write_profile(profiles / "load.csv", np.linspace(0.6, 1.0, horizon + 2))
    write_profile(profiles / "ambient.csv", np.full(horizon + 2, 29.0))
    write_profile(profiles / "pv.csv", np.linspace(5.0, 25.0, horizon + 2))
    path = directory / "scenario.yaml"
    path.write_text(yaml.safe_dump(data if data is not None else scenario_dict(horizon), sort_keys=False))
    return path


@pytest.fixture
def scenario_path(tmp_path: Path) -> Path:
    return write_scenario(tmp_path)
