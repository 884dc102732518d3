"""
Multi-agent DDPG: centralized critics over the joint observation/action,
decentralized deterministic actors, target networks and a shared replay buffer.

Actions inside the learner are in [-1, 1]; they are mapped onto each agent's
action space only when handed to the environment.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from gridmarl.core.errors import ContractViolation, TrainingDivergence
from gridmarl.core.neural import AdamState, Gradient, Mlp, adam_update, save_mlp, soft_update
from gridmarl.core.spaces import scale_action, space_dim
from gridmarl.envs.multi_agent import ALL_DONE, MultiAgentEnv
from gridmarl.models.schemas import MaddpgConfig, TrainMetrics
from gridmarl.services.replay import ReplayBuffer, Transition, stack_agents
from gridmarl.utils.logging_config import app_logger, error_logger
from gridmarl.utils.seeding import derive_seed, make_rng


@dataclass
class MaddpgAgent:
    agent_id: str
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState

    @classmethod
    def create(
        cls,
        agent_id: str,
        obs_dim: int,
        act_dim: int,
        critic_input_dim: int,
        hidden_sizes: Sequence[int],
        actor_lr: float,
        critic_lr: float,
        rng: np.random.Generator,
    ) -> "MaddpgAgent":
        actor = Mlp.initialize([obs_dim, *hidden_sizes, act_dim], rng, output_activation="tanh")
        critic = Mlp.initialize([critic_input_dim, *hidden_sizes, 1], rng, output_activation="identity")
        return cls(
            agent_id=agent_id,
            actor=actor,
            critic=critic,
            target_actor=actor.copy(),
            target_critic=critic.copy(),
            actor_opt=AdamState.create(actor.n_params, actor_lr),
            critic_opt=AdamState.create(critic.n_params, critic_lr),
        )

    @property
    def obs_dim(self) -> int:
        return self.actor.input_dim

    @property
    def act_dim(self) -> int:
        return self.actor.output_dim

    def act(self, obs: np.ndarray, noise_scale: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
        action = self.actor.forward(obs)
        if noise_scale > 0.0:
            action = action + rng.normal(0.0, noise_scale, size=action.shape)
        return np.clip(action, -1.0, 1.0)


def _order(agents: Mapping[str, MaddpgAgent]) -> list[str]:
    return sorted(agents)


def _critic_input(obs: Mapping[str, np.ndarray], actions: Mapping[str, np.ndarray], order: Sequence[str]) -> np.ndarray:
    return np.concatenate([stack_agents(obs, order), stack_agents(actions, order)], axis=1)


def bellman_targets(
    agents: Mapping[str, MaddpgAgent], agent_id: str, batch: Transition, gamma: float, reward_scale: float = 1.0
) -> np.ndarray:
    """r + gamma * (1 - done) * Q_target(s', mu_target(s')), treated as constants."""
    order = _order(agents)
    next_actions = {j: agents[j].target_actor.forward(np.atleast_2d(batch.next_obs[j])) for j in order}
    q_next = agents[agent_id].target_critic.forward(_critic_input(batch.next_obs, next_actions, order))[:, 0]
    done = np.asarray(batch.done, dtype=np.float64).reshape(-1)
    reward = np.asarray(batch.rewards[agent_id], dtype=np.float64).reshape(-1) * reward_scale
    return reward + gamma * (1.0 - done) * q_next


def maddpg_critic_loss(
    agents: Mapping[str, MaddpgAgent], agent_id: str, batch: Transition, gamma: float, reward_scale: float = 1.0
) -> tuple[float, Gradient]:
    """
    Mean squared Bellman error of agent ``agent_id``'s critic.

    Returns:
        (loss, gradient w.r.t. the online critic parameters)
    """
    if len(batch) == 0:
        raise ContractViolation("critic loss needs a non-empty batch")
    order = _order(agents)
    critic = agents[agent_id].critic
    x = _critic_input(batch.obs, batch.actions, order)
    target = bellman_targets(agents, agent_id, batch, gamma, reward_scale)
    diff = critic.forward(x)[:, 0] - target
    loss = float(np.mean(diff ** 2))
    grad = critic.backward(x, (2.0 * diff / diff.size)[:, None])
    return loss, grad


def maddpg_actor_loss(agents: Mapping[str, MaddpgAgent], agent_id: str, batch: Transition) -> tuple[float, Gradient]:
    """
    Negative mean critic value with agent ``agent_id``'s batch action replaced
    by its current policy output; the gradient flows through the critic input
    into the actor only.

    Returns:
        (loss, gradient w.r.t. the actor parameters)
    """
    if len(batch) == 0:
        raise ContractViolation("actor loss needs a non-empty batch")
    order = _order(agents)
    agent = agents[agent_id]
    own_obs = np.atleast_2d(batch.obs[agent_id])
    actions = dict(batch.actions)
    actions[agent_id] = agent.actor.forward(own_obs)
    x = _critic_input(batch.obs, actions, order)
    q = agent.critic.forward(x)[:, 0]
    loss = -float(np.mean(q))

    upstream = np.full((q.size, 1), -1.0 / q.size)
    dx = agent.critic.backward(x, upstream).inputs
    offset = sum(agents[j].obs_dim for j in order) + sum(agents[j].act_dim for j in order[: order.index(agent_id)])
    d_action = dx[:, offset:offset + agent.act_dim]
    return loss, agent.actor.backward(own_obs, d_action)


class MaddpgTrainer:
    """
    MADDPG over a MultiAgentEnv.

    Args:
        env: Environment to train on
        config: Hyperparameters
        seed: Seeds network initialization, exploration, sampling and episodes
    """

    def __init__(self, env: MultiAgentEnv, config: MaddpgConfig, seed: int):
        self.env = env
        self.config = config
        self.seed = seed
        self.agent_ids = env.agent_ids
        obs_dims = {a: space_dim(env.observation_spaces[a]) for a in self.agent_ids}
        act_dims = {a: space_dim(env.action_spaces[a]) for a in self.agent_ids}
        critic_input = sum(obs_dims.values()) + sum(act_dims.values())
        self.agents = {
            a: MaddpgAgent.create(
                a,
                obs_dims[a],
                act_dims[a],
                critic_input,
                config.hidden_sizes,
                config.actor_lr,
                config.critic_lr,
                make_rng(derive_seed(seed, f"{a}.init")),
            )
            for a in self.agent_ids
        }
        self.buffer = ReplayBuffer(config.buffer_size, obs_dims, act_dims, seed=derive_seed(seed, "replay"))
        self.noise_rng = make_rng(derive_seed(seed, "noise"))
        self.episodes_run = 0
        app_logger.info(
            f"Initialized MADDPG with agents={list(self.agent_ids)}, critic input={critic_input}, "
            f"buffer={config.buffer_size}, batch={config.batch_size}"
        )

    def noise_scale(self, iteration: int) -> float:
        c = self.config
        frac = min(1.0, iteration / c.noise_decay_iterations)
        return c.noise_start + (c.noise_end - c.noise_start) * frac

    def collect_episode(self, noise_scale: float) -> tuple[dict[str, float], float]:
        """Run one exploratory episode into the replay buffer; returns (returns, v_vio)."""
        env = self.env
        obs = env.reset(derive_seed(self.seed, f"episode{self.episodes_run}"))
        self.episodes_run += 1
        returns = {a: 0.0 for a in self.agent_ids}
        v_vio = 0.0
        while True:
            unit = {a: self.agents[a].act(obs[a], noise_scale, self.noise_rng) for a in self.agent_ids}
            step = env.step({a: scale_action(unit[a], env.action_spaces[a]) for a in self.agent_ids})
            done = step.dones[ALL_DONE]
            self.buffer.add(Transition(obs=obs, actions=unit, rewards=step.rewards, next_obs=step.observations, done=done))
            for a in self.agent_ids:
                returns[a] += step.rewards[a]
            v_vio += step.metas[self.agent_ids[0]]["v_vio"]
            obs = step.observations
            if done:
                return returns, v_vio

    def update(self, batch: Transition) -> tuple[float, float]:
        """Critic then actor step for every agent, then soft target updates."""
        c = self.config
        critic_losses, actor_losses = [], []
        for a in self.agent_ids:
            agent = self.agents[a]
            loss, grad = maddpg_critic_loss(self.agents, a, batch, c.gamma, c.reward_scale)
            agent.critic.params, agent.critic_opt = adam_update(agent.critic.params, grad, agent.critic_opt)
            critic_losses.append(loss)

            loss, grad = maddpg_actor_loss(self.agents, a, batch)
            agent.actor.params, agent.actor_opt = adam_update(agent.actor.params, grad, agent.actor_opt)
            actor_losses.append(loss)

        for agent in self.agents.values():
            agent.target_critic.params = soft_update(agent.target_critic.params, agent.critic.params, c.tau)
            agent.target_actor.params = soft_update(agent.target_actor.params, agent.actor.params, c.tau)
        return float(np.mean(critic_losses)), float(np.mean(actor_losses))

    def run(self, iterations: int | None = None) -> Iterator[TrainMetrics]:
        c = self.config
        for iteration in range(iterations or c.iterations):
            sigma = self.noise_scale(iteration)
            episode_returns, episode_vio = [], []
            for _ in range(c.episodes_per_iteration):
                returns, v_vio = self.collect_episode(sigma)
                episode_returns.append(returns)
                episode_vio.append(v_vio)

            critic_losses, actor_losses = [], []
            if len(self.buffer) >= max(c.batch_size, c.warmup_steps):
                for _ in range(c.updates_per_iteration):
                    critic_loss, actor_loss = self.update(self.buffer.sample(c.batch_size))
                    if not (math.isfinite(critic_loss) and math.isfinite(actor_loss)):
                        error_logger.error(
                            f"MADDPG diverged at iteration {iteration}: critic={critic_loss}, actor={actor_loss}"
                        )
                        raise TrainingDivergence(f"non-finite loss at iteration {iteration}")
                    critic_losses.append(critic_loss)
                    actor_losses.append(actor_loss)

            agent_returns = {a: float(np.mean([r[a] for r in episode_returns])) for a in self.agent_ids}
            metrics = TrainMetrics(
                iteration=iteration,
                agent_returns=agent_returns,
                total_return=float(sum(agent_returns.values())),
                critic_loss=float(np.mean(critic_losses)) if critic_losses else None,
                actor_loss=float(np.mean(actor_losses)) if actor_losses else None,
                v_vio=float(np.mean(episode_vio)),
                noise_scale=sigma,
            )
            app_logger.info(
                f"MADDPG iteration {iteration}: total_return={metrics.total_return:.3f}, "
                f"critic_loss={metrics.critic_loss}, v_vio={metrics.v_vio:.4f}"
            )
            yield metrics

    def save_checkpoint(self, directory: str | Path) -> Path:
        directory = Path(directory)
        for a, agent in self.agents.items():
            save_mlp(directory / f"{a}.actor.bin", agent.actor)
            save_mlp(directory / f"{a}.critic.bin", agent.critic)
        return directory


def maddpg_train(env: MultiAgentEnv, config: MaddpgConfig, seed: int) -> Iterator[TrainMetrics]:
    """Stream TrainMetrics from a fresh MADDPG run."""
    return MaddpgTrainer(env, config, seed).run()
