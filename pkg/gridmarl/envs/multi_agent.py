"""
N-agent environment coupled through a feeder power flow.

Step order (fixed):
    1. clamp every action into its agent's action space
    2. step each agent's devices, serially in sorted agent-id order
    3. add agent powers to the base load of their buses
    4. solve the power flow
    5. compute grid-coupled rewards and append grid fields to observations
    6. return a MultiAgentStep
"""
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gridmarl.core.errors import ConfigurationError, ContractViolation, PowerFlowError
from gridmarl.core.powerflow import (
    FeederModel,
    InjectionSet,
    PowerFlowResult,
    PowerFlowSolver,
    SweepSolver,
    max_voltage,
    min_voltage,
    voltage_violation,
)
from gridmarl.core.spaces import Space, clamp_action, concat_spaces
from gridmarl.envs.base import (
    ComponentEnv,
    GridSignal,
    MultiComponentEnv,
    grid_mask,
    grid_space,
    observation_with_grid,
)
from gridmarl.utils.logging_config import app_logger
from gridmarl.utils.seeding import derive_seed

ALL_DONE = "__all__"
APPORTION_MODES = ("even", "net_load_share")
SIGNALS = ("v_comm", "v_min")


@dataclass(frozen=True)
class SystemReward:
    """
    Voltage penalty shared among a group of agents.

    ``weight`` times the violation of the signal voltage is split among
    ``agents`` according to ``apportion`` and subtracted from their rewards.
    """

    weight: float
    agents: tuple[str, ...]
    signal: str = "v_comm"
    apportion: str = "even"

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigurationError("system reward weight must be >= 0", "system_reward.weight")
        if self.signal not in SIGNALS:
            raise ConfigurationError(f"unknown signal '{self.signal}'", "system_reward.signal")
        if self.apportion not in APPORTION_MODES:
            raise ConfigurationError(f"unknown apportion mode '{self.apportion}'", "system_reward.apportion")
        if not self.agents:
            raise ConfigurationError("system reward needs at least one agent", "system_reward.agents")

    def shares(self, net_power: Mapping[str, float]) -> dict[str, float]:
        """Fraction of the penalty each listed agent carries; sums to 1."""
        n = len(self.agents)
        if self.apportion == "net_load_share":
            loads = {a: max(net_power[a], 0.0) for a in self.agents}
            total = sum(loads.values())
            if total > 0.0:
                return {a: loads[a] / total for a in self.agents}
        return {a: 1.0 / n for a in self.agents}


@dataclass
class MultiAgentStep:
    observations: dict[str, np.ndarray]
    rewards: dict[str, float]
    dones: dict[str, bool]
    metas: dict[str, dict[str, float]] = field(default_factory=dict)


class MultiAgentEnv:
    """
    Agents, feeder and base load stepped together.

    Args:
        agents: Agent id to component (or multi-component) environment
        feeder: Radial feeder
        agent_buses: Agent id to feeder bus id (non-slack)
        base_load_kw: Bus id to base real load series
        grid_masks: Agent id to grid-observation mask (v_comm, v_min, v_max)
        system_reward: Optional shared voltage penalty
        v_lower: Lower voltage limit (p.u.)
        v_upper: Upper voltage limit (p.u.)
        load_power_factor: Lagging power factor of the base load
        divergence_penalty: Added (negated) to every reward when the power flow fails
        solver: Power flow solver, sweep by default
    """

    def __init__(
        self,
        agents: Mapping[str, ComponentEnv],
        feeder: FeederModel,
        agent_buses: Mapping[str, str],
        base_load_kw: Mapping[str, np.ndarray] | None = None,
        grid_masks: Mapping[str, Sequence[bool]] | None = None,
        system_reward: SystemReward | None = None,
        v_lower: float = 0.95,
        v_upper: float = 1.05,
        load_power_factor: float = 0.95,
        divergence_penalty: float = 1000.0,
        solver: PowerFlowSolver | None = None,
    ):
        if not agents:
            raise ConfigurationError("environment needs at least one agent", "agents")
        if not v_lower < v_upper:
            raise ConfigurationError("v_lower must be below v_upper", "rewards")
        self.agent_ids = tuple(sorted(agents))
        self.agents = dict(agents)
        self.feeder = feeder
        self.solver = solver or SweepSolver()
        self.v_lower = v_lower
        self.v_upper = v_upper
        self.load_tan_phi = math.tan(math.acos(load_power_factor))
        self.divergence_penalty = divergence_penalty

        horizons = {env.horizon for env in self.agents.values()}
        if len(horizons) != 1:
            raise ConfigurationError(f"agents disagree on horizon: {sorted(horizons)}", "agents")
        self.horizon = horizons.pop()

        self.agent_buses = {}
        for aid in self.agent_ids:
            bus = agent_buses.get(aid)
            if bus not in feeder.bus_ids:
                raise ConfigurationError(f"agent is assigned to unknown bus '{bus}'", f"agents.{aid}.bus")
            if bus == feeder.slack_id:
                raise ConfigurationError("agents cannot sit on the slack bus", f"agents.{aid}.bus")
            self.agent_buses[aid] = bus

        self.base_load_kw = {}
        for bus, series in (base_load_kw or {}).items():
            if bus not in feeder.bus_ids:
                raise ConfigurationError(f"base load on unknown bus '{bus}'", f"feeder.base_load.{bus}")
            arr = np.asarray(series, dtype=np.float64).reshape(-1)
            if arr.size < self.horizon:
                raise ConfigurationError(
                    f"base load profile has {arr.size} entries, horizon needs {self.horizon}", f"feeder.base_load.{bus}"
                )
            self.base_load_kw[bus] = arr

        masks = grid_masks or {}
        self.grid_masks = {aid: grid_mask(masks.get(aid)) for aid in self.agent_ids}

        self.system_reward = system_reward
        if system_reward is not None:
            unknown = set(system_reward.agents) - set(self.agent_ids)
            if unknown:
                raise ConfigurationError(f"unknown agents {sorted(unknown)}", "system_reward.agents")
            if system_reward.signal == "v_comm":
                buses = {self.agent_buses[a] for a in system_reward.agents}
                if len(buses) != 1:
                    raise ConfigurationError(
                        f"v_comm signal needs agents on one common bus, found {sorted(buses)}", "system_reward.agents"
                    )

        self.observation_spaces: dict[str, Space] = {}
        self.action_spaces: dict[str, Space] = {}
        for aid in self.agent_ids:
            env = self.agents[aid]
            extra = grid_space(self.grid_masks[aid])
            self.observation_spaces[aid] = (
                concat_spaces([env.observation_space, extra]) if extra is not None else env.observation_space
            )
            self.action_spaces[aid] = env.action_space

        self.step_index = 0
        self.last_result: PowerFlowResult | None = None
        self._signals: dict[str, GridSignal] = {}
        self._done = True

    # --- helpers -------------------------------------------------------

    def base_load_at(self, step: int) -> dict[str, float]:
        return {bus: float(series[min(step, series.size - 1)]) for bus, series in self.base_load_kw.items()}

    def injections(self, step: int) -> InjectionSet:
        """Base load at ``step`` plus every agent's current power, mapped to buses."""
        p = self.base_load_at(step)
        q = {bus: value * self.load_tan_phi if value > 0 else 0.0 for bus, value in p.items()}
        for aid in self.agent_ids:
            bus = self.agent_buses[aid]
            env = self.agents[aid]
            p[bus] = p.get(bus, 0.0) + env.real_power_kw
            q[bus] = q.get(bus, 0.0) + env.reactive_power_kvar
        return InjectionSet(p_kw=p, q_kvar=q)

    def _grid_signals(self, result: PowerFlowResult) -> dict[str, GridSignal]:
        v_min = min_voltage(result)
        v_max = max_voltage(result)
        return {
            aid: GridSignal(v_comm=result.voltage(self.agent_buses[aid]), v_min=v_min, v_max=v_max)
            for aid in self.agent_ids
        }

    def _signal_voltage(self, signals: Mapping[str, GridSignal]) -> float:
        any_signal = signals[self.agent_ids[0]]
        if self.system_reward is not None and self.system_reward.signal == "v_comm":
            return signals[self.system_reward.agents[0]].v_comm
        return any_signal.v_min

    def _observe(self, raw: Mapping[str, np.ndarray], signals: Mapping[str, GridSignal]) -> dict[str, np.ndarray]:
        return {
            aid: observation_with_grid(raw[aid], signals[aid], self.grid_masks[aid], self.observation_spaces[aid])
            for aid in self.agent_ids
        }

    # --- API -----------------------------------------------------------

    def reset(self, seed: int) -> dict[str, np.ndarray]:
        """Reset every agent with derive_seed(seed, agent_id) and solve the initial power flow."""
        raw = {aid: self.agents[aid].reset(derive_seed(seed, aid)) for aid in self.agent_ids}
        result = self.solver.solve(self.feeder, self.injections(0))
        if not result.converged:
            raise PowerFlowError(f"initial power flow did not converge after {result.iterations} iterations")
        self.last_result = result
        self._signals = self._grid_signals(result)
        self.step_index = 0
        self._done = False
        return self._observe(raw, self._signals)

    def step(self, actions: Mapping[str, Sequence[float]]) -> MultiAgentStep:
        if self._done:
            raise ContractViolation("multi-agent environment stepped after the episode finished")
        missing = set(self.agent_ids) - set(actions)
        extra = set(actions) - set(self.agent_ids)
        if missing or extra:
            raise ContractViolation(f"action keys mismatch: missing={sorted(missing)}, extra={sorted(extra)}")

        # 1-2
        clamped = {aid: clamp_action(actions[aid], self.action_spaces[aid]) for aid in self.agent_ids}
        results = {aid: self.agents[aid].step(clamped[aid], self._signals[aid]) for aid in self.agent_ids}
        # 3-4
        injections = self.injections(self.step_index)
        result = self.solver.solve(self.feeder, injections)
        self.step_index += 1
        net_power = {aid: self.agents[aid].real_power_kw for aid in self.agent_ids}
        feeder_load = float(sum(injections.p_kw.values()))

        # 5
        diverged = not result.converged
        if diverged:
            app_logger.warning(
                f"Power flow diverged at step {self.step_index} (max delta {result.max_delta:.3e}); ending episode"
            )
            signals = self._signals
            r_sys = {aid: -self.divergence_penalty for aid in self.agent_ids}
            v_vio = 0.0
        else:
            self.last_result = result
            signals = self._grid_signals(result)
            violation = voltage_violation(self._signal_voltage(signals), self.v_lower, self.v_upper)
            v_vio = violation
            r_sys = {aid: 0.0 for aid in self.agent_ids}
            if self.system_reward is not None:
                penalty = self.system_reward.weight * violation
                for aid, share in self.system_reward.shares(net_power).items():
                    r_sys[aid] = -penalty * share
        self._signals = signals

        # 6
        observations = self._observe({aid: results[aid].observation for aid in self.agent_ids}, signals)
        rewards, dones, metas = {}, {}, {}
        for aid in self.agent_ids:
            step_result = results[aid]
            rewards[aid] = step_result.reward + r_sys[aid]
            # recovered from the total so reward - reward_sys == reward_agent holds exactly
            r_agent = rewards[aid] - r_sys[aid]
            dones[aid] = step_result.done or diverged
            signal = signals[aid]
            meta = self._component_meta(aid, step_result.meta)
            meta.update(
                {
                    "v_comm": signal.v_comm,
                    "v_min": signal.v_min,
                    "v_max": signal.v_max,
                    "net_power_kw": net_power[aid],
                    "pf_iterations": float(result.iterations),
                    "pf_diverged": float(diverged),
                    "reward_agent": r_agent,
                    "reward_sys": r_sys[aid],
                    "v_vio": v_vio,
                    "feeder_load_kw": feeder_load,
                }
            )
            metas[aid] = meta
        dones[ALL_DONE] = all(dones[aid] for aid in self.agent_ids) or self.step_index >= self.horizon
        self._done = dones[ALL_DONE]
        return MultiAgentStep(observations=observations, rewards=rewards, dones=dones, metas=metas)

    def _component_meta(self, aid: str, meta: Mapping[str, float]) -> dict[str, float]:
        env = self.agents[aid]
        if isinstance(env, MultiComponentEnv):
            return {k: v for k, v in meta.items() if "." in k}
        return {f"{env.name}.{k}": v for k, v in meta.items()}
