"""
Multi-zone building thermal model with HVAC cooling.

Each zone is a first-order RC node coupled to ambient air and to a shared core
node (the mean zone temperature). HVAC removes heat at COP times its electrical
power.
"""
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from gridmarl.core.spaces import make_space
from gridmarl.envs.base import ComponentEnv, GridSignal

# Observation scaling: (T - center) / span
_TEMP_CENTER = 22.0
_TEMP_SPAN = 10.0


@dataclass(frozen=True)
class BuildingParams:
    n_zones: int = 5
    r_ambient: float = 2.0  # °C/kW
    r_internal: float = 1.0  # °C/kW
    capacitance: float = 3.0  # kWh/°C
    cop: float = 3.0
    hvac_max_kw: float = 10.0  # per zone
    per_zone_control: bool = False
    comfort_low: float = 20.0
    comfort_high: float = 24.0
    comfort_weight: float = 1.0
    energy_weight: float = 0.1  # per kWh
    initial_temp_low: float = 21.0
    initial_temp_high: float = 23.0
    power_factor: float = 0.95


@dataclass(frozen=True)
class BuildingState:
    zone_temps: np.ndarray
    ambient: float
    hvac_kw: float
    step: int


def comfort_penalty(zone_temps: np.ndarray, low: float, high: float) -> float:
    """Sum over zones of the squared distance outside [low, high]."""
    below = np.maximum(0.0, low - zone_temps)
    above = np.maximum(0.0, zone_temps - high)
    return float(np.sum((below + above) ** 2))


def zone_powers(action: np.ndarray, params: BuildingParams) -> np.ndarray:
    """Electrical HVAC power per zone; a scalar action drives every zone alike."""
    duty = np.broadcast_to(np.asarray(action, dtype=np.float64).reshape(-1), (params.n_zones,))
    return duty * params.hvac_max_kw


def building_step(
    state: BuildingState,
    action: np.ndarray,
    ambient: float,
    params: BuildingParams,
    dt_hours: float,
) -> tuple[BuildingState, float]:
    """
    Advance the zone temperatures by one step.

    Args:
        state: Current state
        action: HVAC duty fraction(s) in [0, 1], scalar or one per zone
        ambient: Outdoor temperature during this step (°C)
        params: Thermal and reward parameters
        dt_hours: Step length

    Returns:
        (new state, reward) where reward penalizes discomfort of the new
        temperatures and HVAC energy used during the step
    """
    temps = state.zone_temps
    power = zone_powers(action, params)
    core = float(np.mean(temps))
    heat_flow = (ambient - temps) / params.r_ambient + (core - temps) / params.r_internal - params.cop * power
    new_temps = temps + (dt_hours / params.capacitance) * heat_flow

    hvac_kw = float(np.sum(power))
    reward = -params.comfort_weight * comfort_penalty(new_temps, params.comfort_low, params.comfort_high)
    reward -= params.energy_weight * hvac_kw * dt_hours
    return replace(state, zone_temps=new_temps, ambient=ambient, hvac_kw=hvac_kw, step=state.step + 1), reward


class BuildingEnv(ComponentEnv):
    """
    Building component.

    Observation: scaled zone temperatures, scaled ambient temperature, time of
    day fraction. Action: one duty fraction, or one per zone when
    ``per_zone_control`` is set.
    """

    def __init__(
        self,
        name: str,
        ambient_profile: np.ndarray,
        horizon: int,
        dt_hours: float,
        params: BuildingParams | None = None,
    ):
        self.params = params or BuildingParams()
        super().__init__(name, horizon, dt_hours, power_factor=self.params.power_factor)
        self.ambient_profile = self.require_profile(ambient_profile, "ambient")
        n_obs = self.params.n_zones + 2
        self.observation_space = make_space([-5.0] * (n_obs - 1) + [0.0], [5.0] * (n_obs - 1) + [1.0])
        n_act = self.params.n_zones if self.params.per_zone_control else 1
        self.action_space = make_space([0.0] * n_act, [1.0] * n_act)
        self.state: BuildingState | None = None

    def _reset(self, seed: int) -> None:
        temps = self.rng.uniform(self.params.initial_temp_low, self.params.initial_temp_high, self.params.n_zones)
        self.state = BuildingState(
            zone_temps=temps,
            ambient=self.profile_value(self.ambient_profile, 0),
            hvac_kw=0.0,
            step=0,
        )
        self.real_power_kw = 0.0

    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        ambient = self.profile_value(self.ambient_profile, self.step_index)
        self.state, reward = building_step(self.state, action, ambient, self.params, self.dt_hours)
        self.real_power_kw = self.state.hvac_kw
        meta = {f"zone{k}_temp": float(t) for k, t in enumerate(self.state.zone_temps)}
        meta["comfort_penalty"] = comfort_penalty(self.state.zone_temps, self.params.comfort_low, self.params.comfort_high)
        return reward, meta

    def _observe(self) -> np.ndarray:
        ambient = self.profile_value(self.ambient_profile, self.step_index)
        temps = (self.state.zone_temps - _TEMP_CENTER) / _TEMP_SPAN
        return np.concatenate([temps, [(ambient - _TEMP_CENTER) / _TEMP_SPAN, self.step_index / self.horizon]])
