"""
Battery energy storage.
"""
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from gridmarl.core.errors import ConfigurationError
from gridmarl.core.spaces import make_space
from gridmarl.envs.base import ComponentEnv, GridSignal


@dataclass(frozen=True)
class StorageState:
    soc_kwh: float
    capacity_kwh: float
    power_kw: float  # charge positive
    rated_kw: float
    eta_charge: float
    eta_discharge: float


def storage_step(state: StorageState, action: float, dt_hours: float) -> tuple[StorageState, float]:
    """
    Charge (action > 0) or discharge (action < 0) at ``action`` times rated power.

    Delivered power is reduced so the state of charge stays in [0, capacity].
    The component reward is zero.
    """
    requested = float(action) * state.rated_kw
    if requested >= 0.0:
        headroom = (state.capacity_kwh - state.soc_kwh) / (state.eta_charge * dt_hours)
        power = min(requested, max(headroom, 0.0))
        soc = state.soc_kwh + state.eta_charge * power * dt_hours
    else:
        available = state.soc_kwh * state.eta_discharge / dt_hours
        power = -min(-requested, max(available, 0.0))
        soc = state.soc_kwh + power * dt_hours / state.eta_discharge
    soc = min(max(soc, 0.0), state.capacity_kwh)
    return replace(state, soc_kwh=soc, power_kw=power), 0.0


class StorageEnv(ComponentEnv):
    """Battery component. Observation: SoC fraction. Action: signed power fraction."""

    def __init__(
        self,
        name: str,
        horizon: int,
        dt_hours: float,
        capacity_kwh: float = 40.0,
        rated_kw: float = 10.0,
        eta_charge: float = 0.95,
        eta_discharge: float = 0.95,
        initial_soc: float = 0.5,
    ):
        super().__init__(name, horizon, dt_hours, power_factor=1.0)
        if capacity_kwh <= 0 or rated_kw <= 0:
            raise ConfigurationError("capacity and rated power must be positive", name)
        if not (0 < eta_charge <= 1 and 0 < eta_discharge <= 1):
            raise ConfigurationError("efficiencies must be in (0, 1]", name)
        if not 0.0 <= initial_soc <= 1.0:
            raise ConfigurationError("initial_soc is a fraction in [0, 1]", f"{name}.initial_soc")
        self.capacity_kwh = capacity_kwh
        self.rated_kw = rated_kw
        self.eta_charge = eta_charge
        self.eta_discharge = eta_discharge
        self.initial_soc = initial_soc
        self.observation_space = make_space([0.0], [1.0])
        self.action_space = make_space([-1.0], [1.0])
        self.state: StorageState | None = None

    def _reset(self, seed: int) -> None:
        self.state = StorageState(
            soc_kwh=self.initial_soc * self.capacity_kwh,
            capacity_kwh=self.capacity_kwh,
            power_kw=0.0,
            rated_kw=self.rated_kw,
            eta_charge=self.eta_charge,
            eta_discharge=self.eta_discharge,
        )
        self.real_power_kw = 0.0

    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        self.state, reward = storage_step(self.state, float(action[0]), self.dt_hours)
        self.real_power_kw = self.state.power_kw
        return reward, {"soc_kwh": self.state.soc_kwh}

    def _observe(self) -> np.ndarray:
        return np.array([self.state.soc_kwh / self.capacity_kwh])
