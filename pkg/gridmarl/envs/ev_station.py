"""
EV charging station with an aggregate charge-rate control.

Sessions are sampled per charger: an exponential gap before each arrival, a
uniform dwell and a uniform energy demand. A session is only kept if it
departs by the end of the horizon, so occupancy never exceeds the charger
count and every vehicle's energy is accounted for by the end of the episode.
"""
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from gridmarl.core.errors import ConfigurationError
from gridmarl.core.spaces import make_space
from gridmarl.envs.base import ComponentEnv, GridSignal


@dataclass(frozen=True)
class EVStationParams:
    n_chargers: int = 5
    max_rate_kw: float = 7.0
    mean_gap_hours: float = 2.0
    dwell_min_hours: float = 2.0
    dwell_max_hours: float = 8.0
    demand_min_kwh: float = 5.0
    demand_max_kwh: float = 25.0
    peak_threshold_kw: float = 20.0
    unmet_weight: float = 1.0  # per kWh
    peak_weight: float = 0.1  # per kW
    power_factor: float = 0.95


@dataclass(frozen=True)
class Vehicle:
    charger: int
    arrival: int
    departure: int
    demand_kwh: float
    max_rate_kw: float
    remaining_kwh: float
    delivered_kwh: float = 0.0
    unmet_kwh: float = 0.0
    departed: bool = False

    def present_at(self, step: int) -> bool:
        return not self.departed and self.arrival <= step < self.departure


@dataclass(frozen=True)
class EVStationState:
    vehicles: tuple[Vehicle, ...]
    step: int
    aggregate_power_kw: float
    action: float

    def present(self) -> list[Vehicle]:
        return [v for v in self.vehicles if v.present_at(self.step)]

    @property
    def occupancy(self) -> int:
        return len(self.present())


def sample_sessions(
    rng: np.random.Generator, params: EVStationParams, horizon: int, dt_hours: float
) -> tuple[Vehicle, ...]:
    """
    Draw the day's charging sessions.

    Args:
        rng: Seeded generator (consumed charger by charger)
        params: Station parameters
        horizon: Episode length in steps
        dt_hours: Step length

    Returns:
        Vehicles sorted by (arrival, charger)
    """
    mean_gap = params.mean_gap_hours / dt_hours
    vehicles = []
    for charger in range(params.n_chargers):
        arrival = int(math.floor(rng.exponential(mean_gap)))
        while True:
            dwell_hours = rng.uniform(params.dwell_min_hours, params.dwell_max_hours)
            dwell = max(1, int(round(dwell_hours / dt_hours)))
            demand = float(rng.uniform(params.demand_min_kwh, params.demand_max_kwh))
            departure = arrival + dwell
            if departure > horizon:
                break
            vehicles.append(
                Vehicle(
                    charger=charger,
                    arrival=arrival,
                    departure=departure,
                    demand_kwh=demand,
                    max_rate_kw=params.max_rate_kw,
                    remaining_kwh=demand,
                )
            )
            arrival = departure + int(math.floor(rng.exponential(mean_gap)))
    return tuple(sorted(vehicles, key=lambda v: (v.arrival, v.charger)))


def ev_station_step(
    state: EVStationState, action: float, params: EVStationParams, dt_hours: float
) -> tuple[EVStationState, float, float]:
    """
    Charge every present vehicle at ``action`` times its max rate for one step.

    Vehicles that finish depart immediately; vehicles reaching their scheduled
    departure leave with whatever demand is left, counted as unmet.

    Returns:
        (new state, reward, unmet kWh departing this step)
    """
    t = state.step
    next_t = t + 1
    aggregate = 0.0
    unmet_total = 0.0
    updated = []
    for vehicle in state.vehicles:
        if not vehicle.present_at(t):
            updated.append(vehicle)
            continue
        energy = min(action * vehicle.max_rate_kw * dt_hours, vehicle.remaining_kwh)
        aggregate += energy / dt_hours
        remaining = vehicle.remaining_kwh - energy
        delivered = vehicle.delivered_kwh + energy
        if remaining <= 0.0:
            vehicle = replace(vehicle, remaining_kwh=0.0, delivered_kwh=delivered, departed=True)
        elif vehicle.departure <= next_t:
            unmet_total += remaining
            vehicle = replace(vehicle, remaining_kwh=remaining, delivered_kwh=delivered, unmet_kwh=remaining, departed=True)
        else:
            vehicle = replace(vehicle, remaining_kwh=remaining, delivered_kwh=delivered)
        updated.append(vehicle)

    reward = -params.unmet_weight * unmet_total - params.peak_weight * max(0.0, aggregate - params.peak_threshold_kw)
    new_state = replace(state, vehicles=tuple(updated), step=next_t, aggregate_power_kw=aggregate, action=float(action))
    return new_state, reward, unmet_total


def ev_observation(state: EVStationState, params: EVStationParams) -> np.ndarray:
    """
    [occupancy, aggregate power, remaining demand, time to departure], each
    normalized by its station-level maximum and clipped to [0, 1].
    """
    present = state.present()
    if not present:
        occupancy_frac, remaining_frac, departure_frac = 0.0, 0.0, 0.0
    else:
        occupancy_frac = len(present) / params.n_chargers
        remaining_frac = sum(v.remaining_kwh for v in present) / (params.n_chargers * params.demand_max_kwh)
        max_dwell = max(v.departure - v.arrival for v in present)
        departure_frac = float(np.mean([(v.departure - state.step) / max_dwell for v in present]))
    power_frac = state.aggregate_power_kw / (params.n_chargers * params.max_rate_kw)
    return np.clip(np.array([occupancy_frac, power_frac, remaining_frac, departure_frac]), 0.0, 1.0)


class EVStationEnv(ComponentEnv):
    """EV station component. Action a3 in [0, 1] is the common charge-rate fraction."""

    def __init__(self, name: str, horizon: int, dt_hours: float, params: EVStationParams | None = None):
        self.params = params or EVStationParams()
        super().__init__(name, horizon, dt_hours, power_factor=self.params.power_factor)
        p = self.params
        if p.n_chargers < 1 or p.max_rate_kw <= 0:
            raise ConfigurationError("station needs at least one charger and a positive rate", name)
        if not (0 < p.dwell_min_hours <= p.dwell_max_hours and 0 <= p.demand_min_kwh <= p.demand_max_kwh):
            raise ConfigurationError("dwell and demand ranges must be ordered and positive", name)
        self.observation_space = make_space([0.0] * 4, [1.0] * 4)
        self.action_space = make_space([0.0], [1.0])
        self.state: EVStationState | None = None

    def _reset(self, seed: int) -> None:
        vehicles = sample_sessions(self.rng, self.params, self.horizon, self.dt_hours)
        self.state = EVStationState(vehicles=vehicles, step=0, aggregate_power_kw=0.0, action=0.0)
        self.real_power_kw = 0.0

    def _step(self, action: np.ndarray, signal: GridSignal) -> tuple[float, Mapping[str, float]]:
        self.state, reward, unmet = ev_station_step(self.state, float(action[0]), self.params, self.dt_hours)
        self.real_power_kw = self.state.aggregate_power_kw
        return reward, {"unmet_kwh": unmet, "occupancy": float(self.state.occupancy)}

    def _observe(self) -> np.ndarray:
        return ev_observation(self.state, self.params)
