"""
Curtailable PV array.
"""
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from gridmarl.core.errors import ConfigurationError
from gridmarl.core.spaces import make_space
from gridmarl.envs.base import ComponentEnv, GridSignal


@dataclass(frozen=True)
class GenerationDrop:
    """Multiply availability by ``factor`` for steps in [start, end)."""

    start: int
    end: int
    factor: float

    def apply(self, series: np.ndarray) -> np.ndarray:
        out = np.array(series, dtype=np.float64)
        out[self.start:self.end] *= self.factor
        return out


@dataclass(frozen=True)
class PVState:
    available_kw: float
    setpoint: float
    injected_kw: float


def pv_step(state: PVState, action: float, available_kw: float) -> tuple[PVState, float]:
    """Inject ``action`` times the available power. The component reward is zero."""
    setpoint = float(action)
    return replace(state, available_kw=available_kw, setpoint=setpoint, injected_kw=setpoint * available_kw), 0.0


class PVEnv(ComponentEnv):
    """
    PV component. Observation: available power over rating, time of day
    fraction. Action: curtailment setpoint in [0, 1].
    """

    def __init__(
        self,
        name: str,
        availability_profile: np.ndarray,
        horizon: int,
        dt_hours: float,
        rated_kw: float | None = None,
        drop: GenerationDrop | None = None,
    ):
        super().__init__(name, horizon, dt_hours, power_factor=1.0)
        series = self.require_profile(availability_profile, "availability")
        if np.any(series < 0):
            raise ConfigurationError("PV availability must be non-negative", f"{name}.availability")
        self.availability = drop.apply(series) if drop else series
        self.rated_kw = float(rated_kw or max(float(np.max(series)), 1e-9))
        self.observation_space = make_space([0.0, 0.0], [1.0, 1.0])
        self.action_space = make_space([0.0], [1.0])
        self.state: PVState | None = None

    def _reset(self, seed: int) -> None:
        available = self.profile_value(self.availability, 0)
        self.state = PVState(available_kw=available, setpoint=1.0, injected_kw=available)
        self.real_power_kw = -available

    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        available = self.profile_value(self.availability, self.step_index)
        self.state, reward = pv_step(self.state, float(action[0]), available)
        self.real_power_kw = -self.state.injected_kw
        return reward, {"available_kw": available, "injected_kw": self.state.injected_kw}

    def _observe(self) -> np.ndarray:
        available = self.profile_value(self.availability, self.step_index)
        return np.array([available / self.rated_kw, self.step_index / self.horizon])
