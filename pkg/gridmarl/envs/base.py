"""
Component environment contract and composition into multi-component agents.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gridmarl.core.errors import ConfigurationError, ContractViolation, NonFiniteError
from gridmarl.core.spaces import Space, concat_spaces, make_space, space_dim, within
from gridmarl.utils.seeding import derive_seed, make_rng

GRID_FIELDS = ("v_comm", "v_min", "v_max")
GRID_VOLTAGE_BOUNDS = (0.0, 2.0)


@dataclass(frozen=True)
class GridSignal:
    """Voltages (p.u.) an agent may observe after the power flow solve."""

    v_comm: float = 1.0
    v_min: float = 1.0
    v_max: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.v_min <= self.v_max):
            raise ContractViolation(f"invalid grid signal: v_min={self.v_min}, v_max={self.v_max}")

    def values(self) -> tuple[float, float, float]:
        return (self.v_comm, self.v_min, self.v_max)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    meta: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise NonFiniteError(f"non-finite reward: {self.reward}")
        if not np.all(np.isfinite(self.observation)):
            raise NonFiniteError("non-finite entry in observation")
        for key, value in self.meta.items():
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite meta value '{key}': {value}")


class ComponentEnv(ABC):
    """
    A single device or subsystem with an episodic reset/step API.

    Subclasses set ``observation_space`` and ``action_space`` in their
    constructor and implement ``_reset``, ``_step`` and ``_observe``. Real
    power is signed: positive consumption, negative injection.

    Args:
        name: Identifier, unique within the owning agent
        horizon: Control steps per episode
        dt_hours: Control step length
        power_factor: Lagging power factor applied to positive real power
    """

    observation_space: Space
    action_space: Space

    def __init__(self, name: str, horizon: int, dt_hours: float, power_factor: float = 1.0):
        if horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {horizon}", f"{name}.horizon")
        if not 0.0 < power_factor <= 1.0:
            raise ConfigurationError(f"power factor must be in (0, 1], got {power_factor}", f"{name}.power_factor")
        self.name = name
        self.horizon = horizon
        self.dt_hours = dt_hours
        self.power_factor = power_factor
        self.step_index = 0
        self.real_power_kw = 0.0
        self.rng = make_rng(0)
        self._done = True

    @property
    def done(self) -> bool:
        return self._done

    @property
    def reactive_power_kvar(self) -> float:
        if self.real_power_kw <= 0.0 or self.power_factor >= 1.0:
            return 0.0
        return self.real_power_kw * math.tan(math.acos(self.power_factor))

    def require_profile(self, series: np.ndarray, label: str) -> np.ndarray:
        """Validate an exogenous series covers the horizon."""
        arr = np.asarray(series, dtype=np.float64).reshape(-1)
        if arr.size < self.horizon:
            raise ConfigurationError(
                f"profile has {arr.size} entries, horizon needs {self.horizon}", f"{self.name}.{label}"
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("profile contains non-finite values", f"{self.name}.{label}")
        return arr

    def profile_value(self, series: np.ndarray, index: int) -> float:
        # The observation after the final step looks one entry past the horizon.
        return float(series[min(index, series.size - 1)])

    def reset(self, seed: int) -> np.ndarray:
        """Start an episode; identical seeds give identical initial observations."""
        if seed < 0:
            raise ContractViolation(f"seed must be non-negative, got {seed}")
        self.step_index = 0
        self.real_power_kw = 0.0
        self.rng = make_rng(seed)
        self._reset(seed)
        self._done = False
        return self._checked_observation()

    def step(self, action: Sequence[float], signal: GridSignal | None = None) -> StepResult:
        """
        Advance one control step.

        Args:
            action: Action inside ``action_space`` (callers clamp first)
            signal: Grid voltages from the latest power flow, if any

        Returns:
            StepResult with the new observation, component reward and meta
        """
        if self._done:
            raise ContractViolation(f"'{self.name}' stepped after the episode finished")
        arr = np.asarray(action, dtype=np.float64).reshape(-1)
        if not within(arr, self.action_space):
            raise ContractViolation(f"action {arr.tolist()} outside action space of '{self.name}'")

        reward, meta = self._step(arr, signal or GridSignal())
        self.step_index += 1
        self._done = self.step_index >= self.horizon
        if not math.isfinite(self.real_power_kw):
            raise NonFiniteError(f"non-finite real power from '{self.name}'")

        meta = dict(meta)
        meta.setdefault("power_kw", self.real_power_kw)
        meta.setdefault("reward", float(reward))
        return StepResult(self._checked_observation(), float(reward), self._done, meta)

    def _checked_observation(self) -> np.ndarray:
        obs = np.asarray(self._observe(), dtype=np.float64).reshape(-1)
        if obs.size != space_dim(self.observation_space):
            raise ContractViolation(
                f"'{self.name}' produced {obs.size} observations, space declares {space_dim(self.observation_space)}"
            )
        if not np.all(np.isfinite(obs)):
            raise NonFiniteError(f"non-finite observation from '{self.name}'")
        return np.clip(obs, self.observation_space.low, self.observation_space.high)

    @abstractmethod
    def _reset(self, seed: int) -> None:
        ...

    @abstractmethod
    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        ...

    @abstractmethod
    def _observe(self) -> np.ndarray:
        ...


class MultiComponentEnv(ComponentEnv):
    """
    An agent made of several component environments.

    Spaces are the concatenation of component spaces, real power the sum of
    component powers and reward the sum of component rewards. Each component
    is reset with ``derive_seed(seed, component.name)``.
    """

    def __init__(self, name: str, components: Sequence[ComponentEnv]):
        if not components:
            raise ConfigurationError("a multi-component agent needs at least one component", name)
        names = [c.name for c in components]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ConfigurationError(f"duplicate component names: {duplicates}", name)
        horizons = {c.horizon for c in components}
        steps = {c.dt_hours for c in components}
        if len(horizons) != 1 or len(steps) != 1:
            raise ConfigurationError("components must share horizon and step length", name)

        super().__init__(name, components[0].horizon, components[0].dt_hours)
        self.components = list(components)
        self.observation_space = concat_spaces([c.observation_space for c in self.components])
        self.action_space = concat_spaces([c.action_space for c in self.components])
        self._action_slices = _slices([space_dim(c.action_space) for c in self.components])
        self._observations: list[np.ndarray] = []

    @property
    def reactive_power_kvar(self) -> float:
        return sum(c.reactive_power_kvar for c in self.components)

    def _reset(self, seed: int) -> None:
        self._observations = [c.reset(derive_seed(seed, c.name)) for c in self.components]
        self.real_power_kw = sum(c.real_power_kw for c in self.components)

    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        reward = 0.0
        meta: dict[str, float] = {}
        self._observations = []
        for component, part in zip(self.components, self._action_slices):
            result = component.step(action[part], signal)
            self._observations.append(result.observation)
            reward += result.reward
            meta.update({f"{component.name}.{k}": v for k, v in result.meta.items()})
        self.real_power_kw = sum(c.real_power_kw for c in self.components)
        return reward, meta

    def _observe(self) -> np.ndarray:
        return np.concatenate(self._observations)


def compose_multi_component(name: str, components: Sequence[ComponentEnv]) -> MultiComponentEnv:
    """
    Compose ``components`` into one agent named ``name``.

    Raises:
        ConfigurationError: empty list or duplicate component names
    """
    return MultiComponentEnv(name, components)


def _slices(dims: Sequence[int]) -> list[slice]:
    out, start = [], 0
    for d in dims:
        out.append(slice(start, start + d))
        start += d
    return out


def grid_mask(mapping: Mapping[str, bool] | Sequence[bool] | None) -> tuple[bool, ...]:
    """Normalize a grid-observation mask to a tuple aligned with GRID_FIELDS."""
    if mapping is None:
        return (False,) * len(GRID_FIELDS)
    if isinstance(mapping, Mapping):
        unknown = set(mapping) - set(GRID_FIELDS)
        if unknown:
            raise ConfigurationError(f"unknown grid observation fields: {sorted(unknown)}")
        return tuple(bool(mapping.get(f, False)) for f in GRID_FIELDS)
    mask = tuple(bool(m) for m in mapping)
    if len(mask) != len(GRID_FIELDS):
        raise ContractViolation(f"grid mask needs {len(GRID_FIELDS)} entries, got {len(mask)}")
    return mask


def grid_space(mask: Sequence[bool]) -> Space | None:
    count = sum(bool(m) for m in mask)
    if count == 0:
        return None
    low, high = GRID_VOLTAGE_BOUNDS
    return make_space([low] * count, [high] * count)


def observation_with_grid(
    raw_obs: np.ndarray,
    signal: GridSignal,
    mask: Sequence[bool],
    declared_space: Space | None = None,
) -> np.ndarray:
    """
    Append the masked grid fields (v_comm, v_min, v_max order) to an observation.

    Args:
        raw_obs: Component observation
        signal: Grid voltages
        mask: One flag per grid field
        declared_space: If given, the result length must match it

    Returns:
        The extended observation
    """
    if len(mask) != len(GRID_FIELDS):
        raise ContractViolation(f"grid mask needs {len(GRID_FIELDS)} entries, got {len(mask)}")
    extra = [value for value, keep in zip(signal.values(), mask) if keep]
    out = np.concatenate([np.asarray(raw_obs, dtype=np.float64).reshape(-1), np.asarray(extra, dtype=np.float64)])
    if declared_space is not None and out.size != space_dim(declared_space):
        raise ContractViolation(
            f"observation length {out.size} does not match declared space length {space_dim(declared_space)}"
        )
    return out
