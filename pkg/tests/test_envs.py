from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from gridmarl.core.errors import ConfigurationError, ContractViolation, PowerFlowError
from gridmarl.core.powerflow import (
    InjectionSet,
    PowerFlowSolver,
    SweepSolver,
    max_voltage,
    min_voltage,
    solve,
    voltage_violation,
)
from gridmarl.core.spaces import space_dim
from gridmarl.envs.base import GridSignal, MultiComponentEnv, compose_multi_component, grid_mask, observation_with_grid
from gridmarl.envs.building import BuildingEnv, BuildingParams
from gridmarl.envs.ev_station import EVStationEnv, EVStationParams
from gridmarl.envs.multi_agent import ALL_DONE, MultiAgentEnv, SystemReward
from gridmarl.envs.pv import PVEnv
from gridmarl.envs.storage import StorageEnv
from gridmarl.utils.seeding import derive_seed
from tests.conftest import DT_HOURS, HORIZON, chain_feeder, small_env


def _random_component(kind: int, name: str, horizon: int, rng: np.random.Generator):
    if kind == 0:
        params = BuildingParams(n_zones=int(rng.integers(1, 4)), per_zone_control=bool(rng.integers(0, 2)))
        return BuildingEnv(name, rng.uniform(20.0, 35.0, horizon + 1), horizon, DT_HOURS, params)
    if kind == 1:
        return PVEnv(name, rng.uniform(0.0, 30.0, horizon + 1), horizon, DT_HOURS)
    if kind == 2:
        return StorageEnv(name, horizon, DT_HOURS, initial_soc=float(rng.uniform()))
    return EVStationEnv(name, horizon, DT_HOURS, EVStationParams(n_chargers=int(rng.integers(1, 4)), mean_gap_hours=0.2))


def test_multi_component_composition_properties(rng: np.random.Generator) -> None:
    horizon = 3
    for case in range(200):
        kinds = rng.integers(0, 4, size=int(rng.integers(1, 5)))
        components = [_random_component(int(k), f"c{i}", horizon, rng) for i, k in enumerate(kinds)]
        agent = compose_multi_component("agent", components)
        assert space_dim(agent.observation_space) == sum(space_dim(c.observation_space) for c in components)
        assert space_dim(agent.action_space) == sum(space_dim(c.action_space) for c in components)

        obs = agent.reset(case)
        assert obs.size == space_dim(agent.observation_space)
        while not agent.done:
            action = rng.uniform(agent.action_space.low, agent.action_space.high)
            result = agent.step(action)
            rewards = [result.meta[f"{c.name}.reward"] for c in components]
            assert result.reward == pytest.approx(sum(rewards))
            assert agent.real_power_kw == pytest.approx(sum(c.real_power_kw for c in components))


def test_component_seeds_are_derived_per_name() -> None:
    def make():
        return MultiComponentEnv(
            "agent",
            [EVStationEnv("ev1", 288, DT_HOURS), EVStationEnv("ev2", 288, DT_HOURS)],
        )

    first, second = make(), make()
    first.reset(9)
    second.reset(9)
    assert first.components[0].state.vehicles == second.components[0].state.vehicles
    assert first.components[0].state.vehicles != first.components[1].state.vehicles


def test_component_contract_violations() -> None:
    env = StorageEnv("s", 2, DT_HOURS)
    with pytest.raises(ContractViolation):
        env.step([0.0])
    env.reset(0)
    with pytest.raises(ContractViolation):
        env.step([2.0])
    env.step([0.5])
    env.step([0.5])
    assert env.done
    with pytest.raises(ContractViolation):
        env.step([0.0])


def test_duplicate_or_missing_components_rejected() -> None:
    with pytest.raises(ConfigurationError):
        compose_multi_component("a", [StorageEnv("s", 2, DT_HOURS), StorageEnv("s", 2, DT_HOURS)])
    with pytest.raises(ConfigurationError):
        compose_multi_component("a", [])


def test_composed_agent_matches_standalone_components(rng: np.random.Generator) -> None:
    horizon = 100

    def parts():
        return [
            BuildingEnv("building", np.full(horizon + 1, 31.0), horizon, DT_HOURS, BuildingParams(n_zones=3)),
            PVEnv("pv", np.linspace(0.0, 30.0, horizon + 1), horizon, DT_HOURS),
            StorageEnv("storage", horizon, DT_HOURS),
        ]

    agent = compose_multi_component("house", parts())
    standalone = parts()
    assert space_dim(agent.observation_space) == (3 + 2) + 2 + 1
    assert space_dim(agent.action_space) == 3

    agent.reset(11)
    for component in standalone:
        component.reset(derive_seed(11, component.name))
    while not agent.done:
        action = rng.uniform(agent.action_space.low, agent.action_space.high)
        result = agent.step(action)
        results = [c.step(action[k : k + 1]) for k, c in enumerate(standalone)]
        assert result.reward == pytest.approx(sum(r.reward for r in results), rel=1e-12)
        assert results[1].reward == 0.0 and results[2].reward == 0.0
        assert agent.real_power_kw == pytest.approx(sum(c.real_power_kw for c in standalone), rel=1e-12)


def test_observation_with_grid_appends_masked_fields() -> None:
    signal = GridSignal(v_comm=0.97, v_min=0.95, v_max=1.01)
    out = observation_with_grid(np.array([0.1, 0.2]), signal, grid_mask({"v_comm": True, "v_max": True}))
    np.testing.assert_allclose(out, [0.1, 0.2, 0.97, 1.01])
    with pytest.raises(ConfigurationError):
        grid_mask({"v_avg": True})
    with pytest.raises(ContractViolation):
        GridSignal(v_comm=1.0, v_min=1.02, v_max=1.0)


def test_multi_agent_spaces_include_grid_fields(env: MultiAgentEnv) -> None:
    obs = env.reset(0)
    assert env.agent_ids == ("a", "b")
    assert space_dim(env.observation_spaces["a"]) == (2 + 2) + 1 + 1
    assert space_dim(env.observation_spaces["b"]) == 2 + 2
    for aid in env.agent_ids:
        assert obs[aid].size == space_dim(env.observation_spaces[aid])


def test_reward_decomposes_into_agent_and_system_parts(env: MultiAgentEnv, rng: np.random.Generator) -> None:
    env.reset(1)
    done = False
    saw_violation = False
    while not done:
        actions = {aid: rng.uniform(env.action_spaces[aid].low, env.action_spaces[aid].high) for aid in env.agent_ids}
        step = env.step(actions)
        metas = step.metas
        for aid in env.agent_ids:
            assert step.rewards[aid] - metas[aid]["reward_sys"] == metas[aid]["reward_agent"]
            assert metas[aid]["v_min"] <= metas[aid]["v_comm"] <= metas[aid]["v_max"]
        assert metas["a"]["reward_sys"] == metas["b"]["reward_sys"]
        violation = voltage_violation(metas["a"]["v_comm"], 0.99, 1.05)
        assert metas["a"]["reward_sys"] == pytest.approx(-100.0 * violation / 2)
        assert metas["a"]["v_vio"] == pytest.approx(violation)
        saw_violation = saw_violation or violation > 0
        done = step.dones[ALL_DONE]
    assert saw_violation
    assert env.step_index == HORIZON


def test_actions_are_clamped_before_devices_see_them(env: MultiAgentEnv) -> None:
    env.reset(0)
    step = env.step({"a": np.array([5.0, -5.0]), "b": np.array([3.0])})
    assert step.metas["a"]["building.power_kw"] == pytest.approx(2 * 10.0)
    assert step.metas["b"]["pv.injected_kw"] == pytest.approx(step.metas["b"]["pv.available_kw"])


def test_reset_is_deterministic(env: MultiAgentEnv) -> None:
    first = env.reset(4)
    second = env.reset(4)
    for aid in env.agent_ids:
        np.testing.assert_array_equal(first[aid], second[aid])


def test_net_load_share_apportions_by_positive_load() -> None:
    reward = SystemReward(weight=10.0, agents=("a", "b", "c"), apportion="net_load_share")
    assert reward.shares({"a": 30.0, "b": 10.0, "c": -20.0}) == pytest.approx({"a": 0.75, "b": 0.25, "c": 0.0})
    assert reward.shares({"a": -1.0, "b": -1.0, "c": 0.0}) == pytest.approx({"a": 1 / 3, "b": 1 / 3, "c": 1 / 3})


class _FailAfterReset(PowerFlowSolver):
    def __init__(self):
        self.inner = SweepSolver()
        self.calls = 0

    def solve(self, feeder, injections):
        self.calls += 1
        result = self.inner.solve(feeder, injections)
        if self.calls > 1:
            return replace(result, converged=False)
        return result


def test_power_flow_divergence_ends_episode_with_penalty() -> None:
    env = small_env(SystemReward(weight=100.0, agents=("a", "b")))
    env.solver = _FailAfterReset()
    before = env.reset(0)
    step = env.step({"a": np.array([0.0, 0.0]), "b": np.array([1.0])})
    assert step.dones[ALL_DONE]
    for aid in env.agent_ids:
        assert step.metas[aid]["pf_diverged"] == 1.0
        assert step.metas[aid]["reward_sys"] == -env.divergence_penalty
    # Grid fields stay at the last converged values.
    assert step.observations["a"][-1] == before["a"][-1]
    with pytest.raises(ContractViolation):
        env.step({"a": np.array([0.0, 0.0]), "b": np.array([1.0])})


def test_initial_non_convergence_raises() -> None:
    env = small_env()
    env.solver = SweepSolver(max_iterations=1)
    with pytest.raises(PowerFlowError):
        env.reset(0)


def test_agents_must_not_sit_on_slack_or_unknown_bus() -> None:
    pv = PVEnv("pv", np.ones(4), 4, DT_HOURS)
    with pytest.raises(ConfigurationError):
        MultiAgentEnv({"p": pv}, chain_feeder(), {"p": "0"})
    with pytest.raises(ConfigurationError):
        MultiAgentEnv({"p": pv}, chain_feeder(), {"p": "9"})


def test_v_comm_needs_a_common_bus() -> None:
    pv1 = PVEnv("pv", np.ones(4), 4, DT_HOURS)
    pv2 = PVEnv("pv", np.ones(4), 4, DT_HOURS)
    with pytest.raises(ConfigurationError):
        MultiAgentEnv(
            {"p": pv1, "q": pv2},
            chain_feeder(),
            {"p": "1", "q": "2"},
            system_reward=SystemReward(weight=1.0, agents=("p", "q"), signal="v_comm"),
        )


def test_initial_grid_signals_match_standalone_solve() -> None:
    env = small_env()
    obs = env.reset(5)
    tan_phi = np.tan(np.arccos(0.95))
    agents = env.agents.values()
    p = {"1": 300.0, "2": 400.0 + sum(a.real_power_kw for a in agents)}
    q = {"1": 300.0 * tan_phi, "2": 400.0 * tan_phi + sum(a.reactive_power_kvar for a in agents)}
    oracle = solve(chain_feeder(), InjectionSet(p_kw=p, q_kvar=q))
    np.testing.assert_allclose(obs["b"][-2:], [min_voltage(oracle), max_voltage(oracle)], atol=1e-12)
    assert obs["a"][-1] == pytest.approx(oracle.voltage("2"), abs=1e-12)


def test_no_load_gives_flat_voltages() -> None:
    horizon = 4
    pv = PVEnv("pv", np.zeros(horizon), horizon, DT_HOURS, rated_kw=10.0)
    env = MultiAgentEnv({"p": pv}, chain_feeder(), {"p": "2"}, grid_masks={"p": {"v_comm": True, "v_min": True}})
    obs = env.reset(0)
    np.testing.assert_allclose(obs["p"][-2:], 1.0)
    step = env.step({"p": np.array([1.0])})
    assert step.metas["p"]["v_min"] == pytest.approx(1.0)
    assert step.metas["p"]["reward_sys"] == 0.0


@pytest.mark.parametrize("apportion", ["even", "net_load_share"])
def test_system_penalty_sums_to_weighted_violation(apportion: str) -> None:
    horizon = 3
    agents = {aid: StorageEnv("storage", horizon, DT_HOURS) for aid in ("agent_1", "agent_2", "agent_3")}
    env = MultiAgentEnv(
        agents=agents,
        feeder=chain_feeder(),
        agent_buses={aid: "2" for aid in agents},
        base_load_kw={"2": np.full(horizon, 2000.0)},
        system_reward=SystemReward(weight=1000.0, agents=tuple(agents), apportion=apportion),
        v_lower=0.95,
        v_upper=1.05,
    )
    env.reset(0)
    step = env.step({"agent_1": np.array([1.0]), "agent_2": np.array([0.5]), "agent_3": np.array([-0.5])})

    tan_phi = np.tan(np.arccos(0.95))
    p = {"2": 2000.0 + sum(a.real_power_kw for a in agents.values())}
    q = {"2": 2000.0 * tan_phi + sum(a.reactive_power_kvar for a in agents.values())}
    oracle = solve(chain_feeder(), InjectionSet(p_kw=p, q_kvar=q))
    violation = 0.95 - oracle.voltage("2")
    assert violation > 0

    penalties = {aid: step.metas[aid]["reward_sys"] for aid in agents}
    assert sum(penalties.values()) == pytest.approx(-1000.0 * violation, rel=1e-9)
    if apportion == "even":
        assert len(set(penalties.values())) == 1
    else:
        loads = {aid: max(a.real_power_kw, 0.0) for aid, a in agents.items()}
        for aid in agents:
            assert penalties[aid] == pytest.approx(-1000.0 * violation * loads[aid] / sum(loads.values()), rel=1e-9)
        assert penalties["agent_3"] == 0.0
