"""
Scenario loading, validation, normalized dumping and environment construction.
"""
from pathlib import Path

import yaml
from pydantic import ValidationError

from gridmarl.config import settings
from gridmarl.core.errors import ConfigurationError
from gridmarl.core.powerflow import BusRecord, FeederModel
from gridmarl.envs.base import ComponentEnv, compose_multi_component
from gridmarl.envs.building import BuildingEnv, BuildingParams
from gridmarl.envs.ev_station import EVStationEnv, EVStationParams
from gridmarl.envs.multi_agent import MultiAgentEnv, SystemReward
from gridmarl.envs.pv import GenerationDrop, PVEnv
from gridmarl.envs.storage import StorageEnv
from gridmarl.models.schemas import (
    AgentConfig,
    BuildingComponentConfig,
    EVStationComponentConfig,
    PVComponentConfig,
    ScenarioConfig,
    StorageComponentConfig,
)
from gridmarl.services.profiles import read_profile
from gridmarl.utils.logging_config import app_logger, error_logger


def _format_loc(loc: tuple) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out or "<root>"


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    """Accept a file path or the name of a bundled scenario (e.g. ``case_a``)."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = Path(settings.scenarios_folder) / f"{name_or_path}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigurationError(f"scenario not found: {name_or_path}")


def load_scenario(name_or_path: str | Path, seed: int | None = None) -> ScenarioConfig:
    """
    Load and fully validate a scenario file.

    Args:
        name_or_path: YAML file or bundled scenario name
        seed: Optional seed override

    Returns:
        Validated config with defaults filled and profile paths made absolute
    """
    path = resolve_scenario_path(name_or_path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        error_logger.error(f"Failed to parse scenario {path}: {e}")
        raise ConfigurationError(f"parse error: {e}", str(path)) from e
    if not isinstance(data, dict):
        raise ConfigurationError("scenario file must contain a mapping", str(path))
    if seed is not None:
        data["seed"] = seed
    data.setdefault("seed", settings.default_seed)

    try:
        config = ScenarioConfig.model_validate(data, context={"base_dir": str(path.parent.resolve())})
    except ValidationError as e:
        first = e.errors()[0]
        error_logger.error(f"Invalid scenario {path}: {e.error_count()} error(s)")
        raise ConfigurationError(first["msg"], _format_loc(first["loc"])) from e

    check_references(config)
    app_logger.info(f"Loaded scenario '{config.name}' from {path} ({len(config.agents)} agents, seed={config.seed})")
    return config


def check_references(config: ScenarioConfig) -> None:
    """Cross-reference checks pydantic cannot express on a single model."""
    feeder = build_feeder(config)
    ids = [a.id for a in config.agents]
    for i, agent_id in enumerate(ids):
        if ids.count(agent_id) > 1:
            raise ConfigurationError(f"duplicate agent id '{agent_id}'", f"agents[{i}].id")

    for i, agent in enumerate(config.agents):
        if agent.bus not in feeder.bus_ids:
            raise ConfigurationError(f"unknown bus '{agent.bus}'", f"agents[{i}].bus")
        if agent.bus == feeder.slack_id:
            raise ConfigurationError(f"agents cannot sit on the slack bus '{agent.bus}'", f"agents[{i}].bus")

    if config.system_reward is not None:
        rewarded = config.system_reward.agents if config.system_reward.agents is not None else ids
        for j, agent_id in enumerate(rewarded):
            if agent_id not in ids:
                raise ConfigurationError(f"unknown agent '{agent_id}'", f"system_reward.agents[{j}]")
        if config.system_reward.signal == "v_comm":
            buses = {config.agent(a).bus for a in rewarded}
            if len(buses) != 1:
                raise ConfigurationError(f"v_comm needs one common bus, found {sorted(buses)}", "system_reward.agents")

    for k, bus in enumerate(config.feeder.buses):
        if bus.base_load is not None:
            _check_length(bus.base_load, config.horizon, f"feeder.buses[{k}].base_load")
    for i, agent in enumerate(config.agents):
        for j, component in enumerate(agent.components):
            where = f"agents[{i}].components[{j}]"
            if isinstance(component, BuildingComponentConfig):
                _check_length(component.ambient_profile, config.horizon, f"{where}.ambient_profile")
            elif isinstance(component, PVComponentConfig):
                _check_length(component.availability_profile, config.horizon, f"{where}.availability_profile")


def _check_length(profile_path: str, horizon: int, where: str) -> None:
    try:
        values = read_profile(profile_path)
    except ConfigurationError as e:
        raise ConfigurationError(str(e), where) from e
    if values.size < horizon:
        raise ConfigurationError(f"profile {profile_path} has {values.size} entries, horizon is {horizon}", where)


def dump_scenario(config: ScenarioConfig) -> str:
    """Canonical YAML dump; loading it back yields an identical config."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False, default_flow_style=False)


def save_scenario(config: ScenarioConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_scenario(config))
    return path


def build_feeder(config: ScenarioConfig) -> FeederModel:
    feeder_cfg = config.feeder
    return FeederModel(
        buses=tuple(BusRecord(id=b.id, parent=b.parent, r=b.r, x=b.x) for b in feeder_cfg.buses),
        slack_voltage=feeder_cfg.slack_voltage,
        base_kva=feeder_cfg.base_kva,
        base_kv=feeder_cfg.base_kv,
    )


def build_component(component, config: ScenarioConfig) -> ComponentEnv:
    rewards = config.rewards
    horizon, dt = config.horizon, config.dt_hours
    if isinstance(component, BuildingComponentConfig):
        params = BuildingParams(
            n_zones=component.n_zones,
            r_ambient=component.r_ambient,
            r_internal=component.r_internal,
            capacitance=component.capacitance,
            cop=component.cop,
            hvac_max_kw=component.hvac_max_kw,
            per_zone_control=component.per_zone_control,
            comfort_low=rewards.comfort_low,
            comfort_high=rewards.comfort_high,
            comfort_weight=rewards.comfort_weight,
            energy_weight=rewards.energy_weight,
            initial_temp_low=component.initial_temp_low,
            initial_temp_high=component.initial_temp_high,
            power_factor=component.power_factor,
        )
        return BuildingEnv(component.name, read_profile(component.ambient_profile), horizon, dt, params)
    if isinstance(component, PVComponentConfig):
        drop = GenerationDrop(**component.drop.model_dump()) if component.drop else None
        series = read_profile(component.availability_profile) * component.profile_scale
        return PVEnv(component.name, series, horizon, dt, rated_kw=component.rated_kw, drop=drop)
    if isinstance(component, StorageComponentConfig):
        return StorageEnv(
            component.name,
            horizon,
            dt,
            capacity_kwh=component.capacity_kwh,
            rated_kw=component.rated_kw,
            eta_charge=component.eta_charge,
            eta_discharge=component.eta_discharge,
            initial_soc=component.initial_soc,
        )
    if isinstance(component, EVStationComponentConfig):
        params = EVStationParams(
            n_chargers=component.n_chargers,
            max_rate_kw=component.max_rate_kw,
            mean_gap_hours=component.mean_gap_hours,
            dwell_min_hours=component.dwell_min_hours,
            dwell_max_hours=component.dwell_max_hours,
            demand_min_kwh=component.demand_min_kwh,
            demand_max_kwh=component.demand_max_kwh,
            peak_threshold_kw=rewards.peak_threshold_kw,
            unmet_weight=rewards.unmet_weight,
            peak_weight=rewards.peak_weight,
            power_factor=component.power_factor,
        )
        return EVStationEnv(component.name, horizon, dt, params)
    raise ConfigurationError(f"unknown component type '{getattr(component, 'type', component)}'")


def build_agent(agent: AgentConfig, config: ScenarioConfig) -> ComponentEnv:
    components = [build_component(c, config) for c in agent.components]
    if agent.type == "single-component":
        return components[0]
    return compose_multi_component(agent.id, components)


def build_environment(config: ScenarioConfig) -> MultiAgentEnv:
    """Instantiate the multi-agent environment a scenario describes."""
    base_load = {
        bus.id: read_profile(bus.base_load) * bus.load_scale
        for bus in config.feeder.buses
        if bus.base_load is not None
    }
    system_reward = None
    if config.system_reward is not None:
        sr = config.system_reward
        system_reward = SystemReward(
            weight=config.rewards.lam if sr.weight is None else sr.weight,
            agents=tuple(sr.agents if sr.agents is not None else sorted(a.id for a in config.agents)),
            signal=sr.signal,
            apportion=sr.apportion,
        )
    env = MultiAgentEnv(
        agents={a.id: build_agent(a, config) for a in config.agents},
        feeder=build_feeder(config),
        agent_buses={a.id: a.bus for a in config.agents},
        base_load_kw=base_load,
        grid_masks={a.id: a.grid_observation.model_dump() for a in config.agents},
        system_reward=system_reward,
        v_lower=config.rewards.v_lower,
        v_upper=config.rewards.v_upper,
        load_power_factor=config.feeder.load_power_factor,
        divergence_penalty=config.rewards.divergence_penalty,
    )
    app_logger.debug(f"Built environment for scenario '{config.name}' with agents {env.agent_ids}")
    return env
