"""
Run, train and evaluate orchestration on top of scenarios and trainers.

Every artifact directory gets a normalized ``config.yaml`` carrying the
seed that produced it.
"""
from pathlib import Path

import numpy as np
import pandas as pd

from gridmarl.config import settings
from gridmarl.core.errors import ConfigurationError
from gridmarl.envs.base import MultiComponentEnv
from gridmarl.envs.ev_station import EVStationEnv
from gridmarl.envs.multi_agent import ALL_DONE, MultiAgentEnv
from gridmarl.models.schemas import EpisodeSummary, EvaluationReport, EvaluationSummary, ScenarioConfig
from gridmarl.services.maddpg import MaddpgTrainer
from gridmarl.services.policies import Policy, RandomPolicy, load_actor_policy
from gridmarl.services.ppo import PpoTrainer
from gridmarl.services.scenarios import build_environment, save_scenario
from gridmarl.utils.logging_config import app_logger

GRID_COLUMNS = ("v_min", "v_max", "v_vio", "feeder_load_kw", "pf_iterations", "pf_diverged")


def default_out_dir(config: ScenarioConfig, verb: str) -> Path:
    return Path(settings.runs_folder) / f"{config.name}_{verb}_seed{config.seed}"


def ev_station_names(env: MultiAgentEnv) -> dict[str, list[str]]:
    """Agent id to the names of its EV-station components."""
    found = {}
    for aid in env.agent_ids:
        agent_env = env.agents[aid]
        components = agent_env.components if isinstance(agent_env, MultiComponentEnv) else [agent_env]
        names = [c.name for c in components if isinstance(c, EVStationEnv)]
        if names:
            found[aid] = names
    return found


def _step_row(env: MultiAgentEnv, step: int, obs, actions, result) -> dict[str, float]:
    first = env.agent_ids[0]
    row: dict[str, float] = {"step": step}
    for aid in env.agent_ids:
        for k, value in enumerate(np.asarray(obs[aid]).reshape(-1)):
            row[f"{aid}.obs.{k}"] = float(value)
        for k, value in enumerate(np.asarray(actions[aid]).reshape(-1)):
            row[f"{aid}.action.{k}"] = float(value)
        meta = result.metas[aid]
        row[f"{aid}.reward"] = result.rewards[aid]
        row[f"{aid}.reward_agent"] = meta["reward_agent"]
        row[f"{aid}.reward_sys"] = meta["reward_sys"]
        row[f"{aid}.v_comm"] = meta["v_comm"]
        row[f"{aid}.net_power_kw"] = meta["net_power_kw"]
        for key, value in meta.items():
            if "." in key:
                row[f"{aid}.{key}"] = float(value)
    for key in GRID_COLUMNS:
        row[key] = float(result.metas[first][key])
    return row


def run_episode(env: MultiAgentEnv, policy: Policy, seed: int, csv_path: str | Path | None = None) -> EpisodeSummary:
    """
    Execute one seeded episode, optionally logging every step to CSV.

    CSV columns: ``step``, per agent ``<agent>.obs.<k>``, ``<agent>.action.<k>``,
    ``<agent>.reward`` (= reward_agent + reward_sys), ``<agent>.reward_agent``,
    ``<agent>.reward_sys``, ``<agent>.v_comm``, ``<agent>.net_power_kw``,
    ``<agent>.<component>.<field>`` for device meta, then grid-wide columns.

    Returns:
        EpisodeSummary with returns, v_vio, peak station power and unmet EV energy
    """
    policy.reset(seed)
    obs = env.reset(seed)
    stations = ev_station_names(env)
    rows = []
    returns = {aid: 0.0 for aid in env.agent_ids}
    v_vio, peak_station, unmet, diverged = 0.0, 0.0, 0.0, False
    while True:
        actions = policy.act(obs)
        result = env.step(actions)
        rows.append(_step_row(env, len(rows), obs, actions, result))
        for aid in env.agent_ids:
            returns[aid] += result.rewards[aid]
        meta = result.metas[env.agent_ids[0]]
        v_vio += meta["v_vio"]
        diverged = diverged or bool(meta["pf_diverged"])
        station_kw = 0.0
        for aid, names in stations.items():
            for name in names:
                station_kw += result.metas[aid][f"{name}.power_kw"]
                unmet += result.metas[aid][f"{name}.unmet_kwh"]
        peak_station = max(peak_station, station_kw)
        obs = result.observations
        if result.dones[ALL_DONE]:
            break

    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(csv_path, index=False)

    summary = EpisodeSummary(
        seed=seed,
        steps=len(rows),
        agent_returns=returns,
        total_return=float(sum(returns.values())),
        v_vio=v_vio,
        peak_station_kw=peak_station,
        unmet_ev_kwh=unmet,
        pf_diverged=diverged,
        csv_path=str(csv_path) if csv_path is not None else None,
    )
    app_logger.info(
        f"Episode seed={seed} finished after {summary.steps} steps: "
        f"total_return={summary.total_return:.3f}, v_vio={summary.v_vio:.4f}"
    )
    return summary


def make_policy(env: MultiAgentEnv, checkpoint: str | Path | None) -> Policy:
    """A checkpoint directory's actors, or uniform random actions when none is given."""
    if checkpoint is None or str(checkpoint) == "random":
        return RandomPolicy(env.action_spaces)
    return load_actor_policy(checkpoint, env)


def run(config: ScenarioConfig, checkpoint: str | Path | None = None, out_dir: str | Path | None = None) -> EpisodeSummary:
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir(config, "run")
    env = build_environment(config)
    save_scenario(config, out_dir / "config.yaml")
    summary = run_episode(env, make_policy(env, checkpoint), config.seed, out_dir / "episode.csv")
    (out_dir / "summary.json").write_text(summary.model_dump_json(indent=2))
    return summary


def with_iterations(config: ScenarioConfig, iterations: int) -> ScenarioConfig:
    """Copy of ``config`` whose selected trainer section runs ``iterations`` iterations."""
    algorithm = config.trainer.algorithm
    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}", f"trainer.{algorithm}.iterations")
    section = getattr(config.trainer, algorithm).model_copy(update={"iterations": iterations})
    trainer = config.trainer.model_copy(update={algorithm: section})
    return config.model_copy(update={"trainer": trainer})


def train(config: ScenarioConfig, out_dir: str | Path | None = None, iterations: int | None = None) -> Path:
    """
    Train with the scenario's selected algorithm.

    Writes ``metrics.jsonl`` (one TrainMetrics object per line), checkpoints
    under ``checkpoints/iter_NNNN`` every ``checkpoint_every`` iterations,
    ``checkpoints/final`` and the normalized ``config.yaml``. An ``iterations``
    override is written into that config so the directory reproduces its
    own metrics.

    Returns:
        The artifact directory
    """
    if iterations is not None:
        config = with_iterations(config, iterations)
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir(config, "train")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_scenario(config, out_dir / "config.yaml")
    env = build_environment(config)

    algorithm = config.trainer.algorithm
    if algorithm == "maddpg":
        trainer, section = MaddpgTrainer(env, config.trainer.maddpg, config.seed), config.trainer.maddpg
    elif algorithm == "ppo":
        trainer, section = PpoTrainer(env, config.trainer.ppo, config.seed), config.trainer.ppo
    else:
        raise ConfigurationError(f"unknown algorithm '{algorithm}'", "trainer.algorithm")

    app_logger.info(f"Training '{config.name}' with {algorithm} (seed={config.seed}) into {out_dir}")
    metrics_path = out_dir / "metrics.jsonl"
    checkpoints = out_dir / "checkpoints"
    with metrics_path.open("w") as handle:
        for metrics in trainer.run():
            handle.write(metrics.model_dump_json() + "\n")
            handle.flush()
            if (metrics.iteration + 1) % section.checkpoint_every == 0:
                trainer.save_checkpoint(checkpoints / f"iter_{metrics.iteration + 1:04d}")
                app_logger.info(f"Checkpoint written at iteration {metrics.iteration + 1}")
    trainer.save_checkpoint(checkpoints / "final")
    app_logger.info(f"Training finished; final checkpoint in {checkpoints / 'final'}")
    return out_dir


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def evaluate(
    config: ScenarioConfig,
    checkpoint: str | Path | None,
    n_episodes: int = 10,
    out_dir: str | Path | None = None,
) -> EvaluationReport:
    """
    Noise-free episodes on seeds ``seed, seed+1, ...``; population std (ddof=0).

    Writes ``episode_<k>.csv`` per episode and ``summary.json``.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1", "episodes")
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir(config, "evaluate")
    env = build_environment(config)
    policy = make_policy(env, checkpoint)
    save_scenario(config, out_dir / "config.yaml")

    seeds = [config.seed + k for k in range(n_episodes)]
    episodes = [run_episode(env, policy, seed, out_dir / f"episode_{k}.csv") for k, seed in enumerate(seeds)]

    return_mean, return_std = {}, {}
    for aid in env.agent_ids:
        return_mean[aid], return_std[aid] = _mean_std([e.agent_returns[aid] for e in episodes])
    total_mean, total_std = _mean_std([e.total_return for e in episodes])
    vio_mean, vio_std = _mean_std([e.v_vio for e in episodes])
    peak_mean, peak_std = _mean_std([e.peak_station_kw for e in episodes])
    unmet_mean, unmet_std = _mean_std([e.unmet_ev_kwh for e in episodes])
    report = EvaluationReport(
        episodes=n_episodes,
        seeds=seeds,
        return_mean=return_mean,
        return_std=return_std,
        total_return_mean=total_mean,
        total_return_std=total_std,
        v_vio_mean=vio_mean,
        v_vio_std=vio_std,
        peak_station_kw_mean=peak_mean,
        peak_station_kw_std=peak_std,
        unmet_ev_kwh_mean=unmet_mean,
        unmet_ev_kwh_std=unmet_std,
    )
    summary = EvaluationSummary(report=report, episodes=episodes)
    (out_dir / "summary.json").write_text(summary.model_dump_json(indent=2))
    app_logger.info(f"Evaluation over {n_episodes} episodes: v_vio_mean={vio_mean:.4f}, total_return_mean={total_mean:.3f}")
    return report
