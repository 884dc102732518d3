"""
Pydantic schemas for scenario files, training metrics and run summaries.
"""
import math
from pathlib import Path
from typing import Annotated, Literal, Optional, List, Dict, Union

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationInfo, model_validator


def _resolve_path(value: Optional[str], info: ValidationInfo) -> Optional[str]:
    """Resolve a profile path against the directory of the scenario file."""
    if value is None:
        return None
    base_dir = (info.context or {}).get("base_dir")
    path = Path(value).expanduser()
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return str(path.resolve()) if base_dir is not None else str(path)


# Relative paths are resolved against the scenario file directory passed as validation context.
ProfilePath = Annotated[str, AfterValidator(_resolve_path)]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- feeder -----------------------------------------------------------------

class BusConfig(StrictModel):
    """A feeder bus and the line to its parent."""
    id: str = Field(..., min_length=1, description="Bus identifier")
    parent: Optional[str] = Field(None, description="Parent bus id; omitted for the slack bus")
    r: float = Field(0.0, ge=0, description="Line resistance (p.u.)")
    x: float = Field(0.0, ge=0, description="Line reactance (p.u.)")
    base_load: Optional[ProfilePath] = Field(None, description="CSV profile (step,value) of the base load shape")
    load_scale: float = Field(1.0, ge=0, description="Multiplier turning profile values into kW")


class FeederConfig(StrictModel):
    slack_voltage: float = Field(1.0, gt=0)
    base_kva: float = Field(1000.0, gt=0)
    base_kv: float = Field(4.16, gt=0)
    load_power_factor: float = Field(0.95, gt=0, le=1)
    buses: List[BusConfig] = Field(..., min_length=1)


# --- components ---------------------------------------------------------------

class BuildingComponentConfig(StrictModel):
    type: Literal["building"]
    name: str = "building"
    ambient_profile: ProfilePath = Field(..., description="CSV profile of ambient temperature (°C)")
    n_zones: int = Field(5, ge=1)
    r_ambient: float = Field(2.0, gt=0)
    r_internal: float = Field(1.0, gt=0)
    capacitance: float = Field(3.0, gt=0)
    cop: float = Field(3.0, gt=0)
    hvac_max_kw: float = Field(10.0, ge=0)
    per_zone_control: bool = False
    initial_temp_low: float = 21.0
    initial_temp_high: float = 23.0
    power_factor: float = Field(0.95, gt=0, le=1)


class DropConfig(StrictModel):
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)
    factor: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.end < self.start:
            raise ValueError("drop end must not precede start")
        return self


class PVComponentConfig(StrictModel):
    type: Literal["pv"]
    name: str = "pv"
    availability_profile: ProfilePath = Field(..., description="CSV profile of available PV power (kW)")
    profile_scale: float = Field(1.0, ge=0)
    rated_kw: Optional[float] = Field(None, gt=0)
    drop: Optional[DropConfig] = None


class StorageComponentConfig(StrictModel):
    type: Literal["storage"]
    name: str = "storage"
    capacity_kwh: float = Field(40.0, gt=0)
    rated_kw: float = Field(10.0, gt=0)
    eta_charge: float = Field(0.95, gt=0, le=1)
    eta_discharge: float = Field(0.95, gt=0, le=1)
    initial_soc: float = Field(0.5, ge=0, le=1)


class EVStationComponentConfig(StrictModel):
    type: Literal["ev_station"]
    name: str = "ev_station"
    n_chargers: int = Field(5, ge=1)
    max_rate_kw: float = Field(7.0, gt=0)
    mean_gap_hours: float = Field(2.0, gt=0)
    dwell_min_hours: float = Field(2.0, gt=0)
    dwell_max_hours: float = Field(8.0, gt=0)
    demand_min_kwh: float = Field(5.0, ge=0)
    demand_max_kwh: float = Field(25.0, ge=0)
    power_factor: float = Field(0.95, gt=0, le=1)


ComponentConfig = Annotated[
    Union[BuildingComponentConfig, PVComponentConfig, StorageComponentConfig, EVStationComponentConfig],
    Field(discriminator="type"),
]


# --- agents and rewards ---------------------------------------------------------

class GridObservationConfig(StrictModel):
    v_comm: bool = False
    v_min: bool = False
    v_max: bool = False


class AgentConfig(StrictModel):
    id: str = Field(..., min_length=1)
    type: Literal["single-component", "multi-component"]
    bus: str
    components: List[ComponentConfig] = Field(..., min_length=1)
    grid_observation: GridObservationConfig = Field(default_factory=GridObservationConfig)

    @model_validator(mode="after")
    def _component_count(self):
        if self.type == "single-component" and len(self.components) != 1:
            raise ValueError("single-component agents have exactly one component")
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names {names}")
        return self


class RewardWeights(StrictModel):
    """Weights shared by all devices of a scenario."""
    comfort_weight: float = Field(1.0, ge=0)
    energy_weight: float = Field(0.1, ge=0, description="Per kWh of HVAC energy")
    comfort_low: float = 20.0
    comfort_high: float = 24.0
    lam: float = Field(1000.0, ge=0, description="System voltage penalty scale")
    peak_threshold_kw: float = Field(20.0, ge=0)
    unmet_weight: float = Field(1.0, ge=0, description="Per kWh of unmet EV demand")
    peak_weight: float = Field(0.1, ge=0, description="Per kW above the peak threshold")
    v_lower: float = 0.95
    v_upper: float = 1.05
    divergence_penalty: float = Field(1000.0, ge=0)

    @model_validator(mode="after")
    def _bands(self):
        if not self.comfort_low < self.comfort_high:
            raise ValueError("comfort_low must be below comfort_high")
        if not 0 < self.v_lower < self.v_upper:
            raise ValueError("need 0 < v_lower < v_upper")
        return self


class SystemRewardConfig(StrictModel):
    signal: Literal["v_comm", "v_min"] = "v_comm"
    apportion: Literal["even", "net_load_share"] = "even"
    weight: Optional[float] = Field(None, ge=0, description="Defaults to rewards.lam")
    agents: Optional[List[str]] = Field(None, description="Defaults to every agent")


# --- trainers -----------------------------------------------------------------

class MaddpgConfig(StrictModel):
    iterations: int = Field(350, ge=1)
    episodes_per_iteration: int = Field(10, ge=1)
    updates_per_iteration: int = Field(100, ge=0)
    buffer_size: int = Field(100_000, ge=1)
    batch_size: int = Field(256, ge=1)
    warmup_steps: int = Field(1000, ge=0)
    gamma: float = Field(0.99, ge=0, le=1)
    tau: float = Field(0.01, gt=0, le=1)
    actor_lr: float = Field(1e-4, ge=0)
    critic_lr: float = Field(1e-3, ge=0)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    noise_start: float = Field(0.3, ge=0)
    noise_end: float = Field(0.05, ge=0)
    noise_decay_iterations: int = Field(200, ge=1)
    reward_scale: float = Field(1.0, gt=0)
    checkpoint_every: int = Field(25, ge=1)


class PpoConfig(StrictModel):
    iterations: int = Field(200, ge=1)
    episodes_per_iteration: int = Field(8, ge=1)
    epochs: int = Field(4, ge=1)
    minibatch_size: int = Field(256, ge=1)
    gamma: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    clip_epsilon: float = Field(0.2, ge=0, lt=1)
    policy_lr: float = Field(3e-4, ge=0)
    value_lr: float = Field(1e-3, ge=0)
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.01, ge=0)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    initial_log_std: float = -0.5
    reward_scale: float = Field(1.0, gt=0)
    checkpoint_every: int = Field(25, ge=1)


class TrainerConfig(StrictModel):
    algorithm: Literal["maddpg", "ppo"]
    maddpg: Optional[MaddpgConfig] = None
    ppo: Optional[PpoConfig] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        other = "ppo" if self.algorithm == "maddpg" else "maddpg"
        if getattr(self, other) is not None:
            raise ValueError(f"trainer selects '{self.algorithm}' but also configures '{other}'")
        if self.algorithm == "maddpg" and self.maddpg is None:
            self.maddpg = MaddpgConfig()
        if self.algorithm == "ppo" and self.ppo is None:
            self.ppo = PpoConfig()
        return self


# --- scenario -----------------------------------------------------------------

class ScenarioConfig(StrictModel):
    """A complete, validated scenario."""
    name: str = Field(..., min_length=1)
    description: str = ""
    seed: int = Field(0, ge=0)
    horizon: int = Field(288, ge=1)
    dt_minutes: float = Field(5.0, gt=0)
    feeder: FeederConfig
    agents: List[AgentConfig] = Field(..., min_length=1)
    rewards: RewardWeights = Field(default_factory=RewardWeights)
    system_reward: Optional[SystemRewardConfig] = None
    trainer: TrainerConfig

    @property
    def dt_hours(self) -> float:
        return self.dt_minutes / 60.0

    def agent(self, agent_id: str) -> AgentConfig:
        for agent in self.agents:
            if agent.id == agent_id:
                return agent
        raise KeyError(agent_id)


# --- run artifacts ------------------------------------------------------------

def _finite(values) -> bool:
    return all(v is None or math.isfinite(v) for v in values)


class TrainMetrics(BaseModel):
    """One line of metrics.jsonl."""
    iteration: int = Field(..., ge=0)
    agent_returns: Dict[str, float] = Field(..., description="Mean episode return per agent")
    total_return: float
    critic_loss: Optional[float] = Field(None, description="MADDPG critic loss averaged over agents")
    actor_loss: Optional[float] = Field(None, description="MADDPG actor loss averaged over agents")
    ppo_loss: Optional[Dict[str, float]] = Field(None, description="PPO loss per agent")
    v_vio: float = Field(..., ge=0, description="Mean episodic voltage violation sum")
    skipped_samples: int = Field(0, ge=0)
    noise_scale: Optional[float] = None

    @model_validator(mode="after")
    def _all_finite(self):
        values = [self.total_return, self.critic_loss, self.actor_loss, self.v_vio, self.noise_scale]
        values += list(self.agent_returns.values()) + list((self.ppo_loss or {}).values())
        if not _finite(values):
            raise ValueError("training metrics contain non-finite values")
        return self


class EpisodeSummary(BaseModel):
    seed: int
    steps: int
    agent_returns: Dict[str, float]
    total_return: float
    v_vio: float
    peak_station_kw: float
    unmet_ev_kwh: float
    pf_diverged: bool = False
    csv_path: Optional[str] = None


class EvaluationReport(BaseModel):
    episodes: int
    seeds: List[int]
    return_mean: Dict[str, float]
    return_std: Dict[str, float]
    total_return_mean: float
    total_return_std: float
    v_vio_mean: float
    v_vio_std: float
    peak_station_kw_mean: float
    peak_station_kw_std: float
    unmet_ev_kwh_mean: float
    unmet_ev_kwh_std: float


class EvaluationSummary(BaseModel):
    """Contents of an evaluation directory's ``summary.json``."""

    report: EvaluationReport
    episodes: List[EpisodeSummary]
