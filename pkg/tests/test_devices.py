from __future__ import annotations

import numpy as np
import pytest

from gridmarl.core.errors import ConfigurationError
from gridmarl.envs.building import BuildingEnv, BuildingParams, BuildingState, building_step, comfort_penalty
from gridmarl.envs.ev_station import (
    EVStationEnv,
    EVStationParams,
    EVStationState,
    Vehicle,
    ev_observation,
    ev_station_step,
    sample_sessions,
)
from gridmarl.envs.pv import GenerationDrop, PVEnv
from gridmarl.envs.storage import StorageEnv, StorageState, storage_step

DT = 5 / 60


# --- building -----------------------------------------------------------------

def test_comfort_penalty_is_zero_inside_band() -> None:
    assert comfort_penalty(np.array([20.0, 22.0, 24.0]), 20.0, 24.0) == 0.0
    assert comfort_penalty(np.array([19.0, 26.0]), 20.0, 24.0) == pytest.approx(1.0 + 4.0)


def test_building_at_equilibrium_stays_put() -> None:
    params = BuildingParams(n_zones=3, energy_weight=0.0)
    state = BuildingState(zone_temps=np.full(3, 22.0), ambient=22.0, hvac_kw=0.0, step=0)
    new_state, reward = building_step(state, np.array([0.0]), 22.0, params, DT)
    np.testing.assert_allclose(new_state.zone_temps, 22.0)
    assert reward == 0.0
    assert new_state.step == 1


def test_hvac_cools_and_costs_energy() -> None:
    params = BuildingParams(n_zones=2, hvac_max_kw=5.0, energy_weight=0.1)
    state = BuildingState(zone_temps=np.full(2, 25.0), ambient=30.0, hvac_kw=0.0, step=0)
    idle, idle_reward = building_step(state, np.array([0.0]), 30.0, params, DT)
    cooled, cooled_reward = building_step(state, np.array([1.0]), 30.0, params, DT)
    assert np.all(cooled.zone_temps < idle.zone_temps)
    assert cooled.hvac_kw == pytest.approx(10.0)
    # Explicit Euler step of the RC node.
    expected = 25.0 + DT / params.capacitance * ((30.0 - 25.0) / params.r_ambient - params.cop * 5.0)
    np.testing.assert_allclose(cooled.zone_temps, expected)
    assert idle_reward <= 0.0
    assert cooled_reward == pytest.approx(-comfort_penalty(cooled.zone_temps, 20.0, 24.0) - 0.1 * 10.0 * DT)


def test_per_zone_control_changes_action_space() -> None:
    ambient = np.full(10, 28.0)
    single = BuildingEnv("b", ambient, 10, DT, BuildingParams(n_zones=4))
    per_zone = BuildingEnv("b", ambient, 10, DT, BuildingParams(n_zones=4, per_zone_control=True))
    assert single.action_space.shape == (1,)
    assert per_zone.action_space.shape == (4,)
    assert per_zone.observation_space.shape == (6,)


def test_short_ambient_profile_is_rejected() -> None:
    with pytest.raises(ConfigurationError):
        BuildingEnv("b", np.full(3, 28.0), 10, DT)


# --- storage -----------------------------------------------------------------

def _battery(soc: float = 20.0) -> StorageState:
    return StorageState(soc_kwh=soc, capacity_kwh=40.0, power_kw=0.0, rated_kw=10.0, eta_charge=0.9, eta_discharge=0.8)


def test_storage_round_trip_loses_energy() -> None:
    state = _battery()
    charged, _ = storage_step(state, 1.0, 1.0)
    assert charged.soc_kwh == pytest.approx(20.0 + 0.9 * 10.0)
    # Discharge exactly what was stored; the grid sees eta_c * eta_d of the input.
    discharged, _ = storage_step(charged, -(0.9 * 10.0 * 0.8) / 10.0, 1.0)
    assert discharged.soc_kwh == pytest.approx(20.0)
    assert -discharged.power_kw == pytest.approx(0.9 * 0.8 * 10.0)


def test_storage_respects_capacity_limits() -> None:
    full, _ = storage_step(_battery(39.5), 1.0, 1.0)
    assert full.soc_kwh == pytest.approx(40.0)
    assert full.power_kw == pytest.approx(0.5 / 0.9)
    empty, _ = storage_step(_battery(1.0), -1.0, 1.0)
    assert empty.soc_kwh == pytest.approx(0.0)
    assert empty.power_kw == pytest.approx(-0.8)


def test_storage_soc_bounded_under_random_actions(rng: np.random.Generator) -> None:
    env = StorageEnv("s", 10_000, DT, capacity_kwh=5.0, rated_kw=10.0)
    env.reset(0)
    for _ in range(10_000):
        result = env.step([rng.uniform(-1.0, 1.0)])
        assert 0.0 <= env.state.soc_kwh <= 5.0
        assert 0.0 <= result.observation[0] <= 1.0


# --- pv ------------------------------------------------------------------------

def test_pv_never_injects_more_than_available(rng: np.random.Generator) -> None:
    availability = rng.uniform(0.0, 50.0, size=20)
    env = PVEnv("pv", availability, 20, DT, rated_kw=50.0)
    env.reset(0)
    assert env.real_power_kw == pytest.approx(-availability[0])
    for k in range(20):
        result = env.step([rng.uniform(0.0, 1.0)])
        assert result.meta["injected_kw"] <= availability[k] + 1e-12
        assert env.real_power_kw <= 0.0


def test_generation_drop_window() -> None:
    series = np.full(10, 10.0)
    dropped = GenerationDrop(start=3, end=6, factor=0.2).apply(series)
    np.testing.assert_allclose(dropped, [10, 10, 10, 2, 2, 2, 10, 10, 10, 10])
    np.testing.assert_allclose(series, 10.0)


def test_pv_rejects_negative_availability() -> None:
    with pytest.raises(ConfigurationError):
        PVEnv("pv", np.array([1.0, -1.0, 1.0]), 3, DT)


# --- ev station ------------------------------------------------------------------

def test_sessions_are_reproducible_and_fit_the_horizon() -> None:
    params = EVStationParams(n_chargers=3)
    first = sample_sessions(np.random.default_rng(5), params, 288, DT)
    second = sample_sessions(np.random.default_rng(5), params, 288, DT)
    assert first == second
    assert first
    for v in first:
        assert 0 <= v.arrival < v.departure <= 288
        assert params.demand_min_kwh <= v.demand_kwh <= params.demand_max_kwh
    for charger in range(3):
        mine = [v for v in first if v.charger == charger]
        assert all(a.departure <= b.arrival for a, b in zip(mine, mine[1:]))


def test_ev_energy_accounting_closes(rng: np.random.Generator) -> None:
    env = EVStationEnv("ev", 288, DT, EVStationParams(n_chargers=4))
    env.reset(11)
    while not env.done:
        env.step([rng.uniform(0.0, 1.0)])
        assert env.state.occupancy <= 4
    for v in env.state.vehicles:
        assert v.departed
        assert v.delivered_kwh + v.unmet_kwh == pytest.approx(v.demand_kwh, abs=1e-9)


def test_ev_step_counts_unmet_at_departure() -> None:
    params = EVStationParams(n_chargers=1, max_rate_kw=6.0, peak_threshold_kw=0.0, peak_weight=0.5)
    vehicle = Vehicle(charger=0, arrival=0, departure=1, demand_kwh=10.0, max_rate_kw=6.0, remaining_kwh=10.0)
    state = EVStationState(vehicles=(vehicle,), step=0, aggregate_power_kw=0.0, action=0.0)
    new_state, reward, unmet = ev_station_step(state, 1.0, params, 1.0)
    assert new_state.aggregate_power_kw == pytest.approx(6.0)
    assert unmet == pytest.approx(4.0)
    assert reward == pytest.approx(-1.0 * 4.0 - 0.5 * 6.0)
    assert new_state.vehicles[0].departed


def test_full_rate_finishes_small_demand_early() -> None:
    params = EVStationParams(n_chargers=1, max_rate_kw=6.0)
    vehicle = Vehicle(charger=0, arrival=0, departure=5, demand_kwh=3.0, max_rate_kw=6.0, remaining_kwh=3.0)
    state = EVStationState(vehicles=(vehicle,), step=0, aggregate_power_kw=0.0, action=0.0)
    new_state, _, unmet = ev_station_step(state, 1.0, params, 1.0)
    assert unmet == 0.0
    assert new_state.vehicles[0].delivered_kwh == pytest.approx(3.0)
    assert new_state.aggregate_power_kw == pytest.approx(3.0)
    assert new_state.occupancy == 0


def test_single_zone_decays_geometrically_toward_ambient() -> None:
    params = BuildingParams(n_zones=1, energy_weight=0.0)
    state = BuildingState(zone_temps=np.array([20.0]), ambient=30.0, hvac_kw=0.0, step=0)
    factor = 1.0 - DT / (params.r_ambient * params.capacitance)
    for k in range(1, 50):
        state, _ = building_step(state, np.array([0.0]), 30.0, params, DT)
        assert state.zone_temps[0] == pytest.approx(30.0 - 10.0 * factor ** k, rel=1e-12)


def test_quarter_rate_charging_of_four_vehicles() -> None:
    params = EVStationParams(n_chargers=4, max_rate_kw=7.0)
    vehicles = tuple(
        Vehicle(charger=k, arrival=0, departure=100, demand_kwh=20.0, max_rate_kw=7.0, remaining_kwh=20.0)
        for k in range(4)
    )
    state = EVStationState(vehicles=vehicles, step=0, aggregate_power_kw=0.0, action=0.0)
    new_state, _, _ = ev_station_step(state, 0.25, params, DT)
    assert new_state.aggregate_power_kw == pytest.approx(7.0)
    idle, _, _ = ev_station_step(state, 0.0, params, DT)
    assert idle.aggregate_power_kw == 0.0
    assert all(v.remaining_kwh == 20.0 for v in idle.vehicles)


def test_ev_observation_bounds(rng: np.random.Generator) -> None:
    params = EVStationParams(n_chargers=3)
    empty = EVStationState(vehicles=(), step=0, aggregate_power_kw=0.0, action=0.0)
    np.testing.assert_array_equal(ev_observation(empty, params), np.zeros(4))
    for seed in range(10):
        env = EVStationEnv("ev", 288, DT, params)
        obs = env.reset(seed)
        while not env.done:
            assert np.all((obs >= 0.0) & (obs <= 1.0))
            obs = env.step([rng.uniform(0.0, 1.0)]).observation


def test_ev_reset_occupancy_matches_replayed_sessions() -> None:
    params = EVStationParams(n_chargers=4, mean_gap_hours=0.05)
    env = EVStationEnv("ev", 288, DT, params)
    obs = env.reset(3)
    replayed = sample_sessions(np.random.default_rng(3), params, 288, DT)
    assert obs[0] == pytest.approx(sum(v.arrival == 0 for v in replayed) / 4)
