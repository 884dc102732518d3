"""
Independent PPO: one clipped-surrogate learner per agent, each with its own
Gaussian policy, value network, optimizer and random stream.

The policy is a diagonal Gaussian over an unsquashed action ``u`` with a
state-independent log standard deviation; ``u`` is mapped onto the agent's
action space with scale_action and clamped by the environment.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from gridmarl.core.errors import ContractViolation, TrainingDivergence
from gridmarl.core.neural import AdamState, Mlp, adam_update, save_mlp
from gridmarl.core.spaces import scale_action, space_dim
from gridmarl.envs.multi_agent import ALL_DONE, MultiAgentEnv
from gridmarl.models.schemas import PpoConfig, TrainMetrics
from gridmarl.utils.logging_config import app_logger, error_logger
from gridmarl.utils.seeding import derive_seed, make_rng

_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, one value per row."""
    z = (np.atleast_2d(u) - np.atleast_2d(mean)) / np.exp(log_std)
    return -0.5 * np.sum(z ** 2, axis=1) - np.sum(log_std) - 0.5 * log_std.size * _LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + _LOG_2PI))


def gae_advantages(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation over a (possibly multi-episode) trajectory.

    A terminal step masks both the bootstrap value and the carried advantage.

    Returns:
        (advantages, returns) where returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ContractViolation("rewards, values and dones must have the same length")
    advantages = np.zeros_like(rewards)
    carry = 0.0
    for t in range(rewards.size - 1, -1, -1):
        next_value = last_value if t == rewards.size - 1 else values[t + 1]
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        carry = delta + gamma * lam * alive * carry
        advantages[t] = carry
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64)
    centered = advantages - advantages.mean()
    if advantages.size < 2:
        return centered
    return centered / (advantages.std() + 1e-8)


@dataclass
class PpoBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return int(self.logp_old.size)

    def take(self, index: np.ndarray) -> "PpoBatch":
        return PpoBatch(
            self.obs[index], self.actions[index], self.logp_old[index], self.advantages[index], self.returns[index]
        )


@dataclass
class PpoGradients:
    policy: np.ndarray
    log_std: np.ndarray
    value: np.ndarray


@dataclass
class PpoLossInfo:
    loss: float
    surrogate: float
    value_loss: float
    entropy: float
    skipped: int


@dataclass
class PpoAgent:
    agent_id: str
    policy: Mlp
    log_std: np.ndarray
    value: Mlp
    policy_opt: AdamState
    value_opt: AdamState
    rng: np.random.Generator
    old_policy: Mlp = field(init=False)
    old_log_std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.snapshot()

    @classmethod
    def create(
        cls,
        agent_id: str,
        obs_dim: int,
        act_dim: int,
        hidden_sizes: Sequence[int],
        policy_lr: float,
        value_lr: float,
        initial_log_std: float,
        seed: int,
    ) -> "PpoAgent":
        init_rng = make_rng(derive_seed(seed, f"{agent_id}.init"))
        policy = Mlp.initialize([obs_dim, *hidden_sizes, act_dim], init_rng)
        value = Mlp.initialize([obs_dim, *hidden_sizes, 1], init_rng)
        return cls(
            agent_id=agent_id,
            policy=policy,
            log_std=np.full(act_dim, float(initial_log_std)),
            value=value,
            policy_opt=AdamState.create(policy.n_params + act_dim, policy_lr),
            value_opt=AdamState.create(value.n_params, value_lr),
            rng=make_rng(derive_seed(seed, f"{agent_id}.rollout")),
        )

    @property
    def obs_dim(self) -> int:
        return self.policy.input_dim

    @property
    def act_dim(self) -> int:
        return self.policy.output_dim

    def snapshot(self) -> None:
        """Freeze the current policy as the behaviour policy of the next iteration."""
        self.old_policy = self.policy.copy()
        self.old_log_std = self.log_std.copy()

    def sample(self, obs: np.ndarray) -> tuple[np.ndarray, float]:
        mean = self.old_policy.forward(obs)
        u = mean + np.exp(self.old_log_std) * self.rng.standard_normal(mean.shape)
        return u, float(gaussian_log_prob(u, mean, self.old_log_std)[0])

    def state_value(self, obs: np.ndarray) -> np.ndarray:
        return self.value.forward(np.atleast_2d(obs))[:, 0]


def ppo_loss(
    agent: PpoAgent, batch: PpoBatch, clip_epsilon: float, value_coef: float = 0.5, entropy_coef: float = 0.01
) -> tuple[PpoLossInfo, PpoGradients]:
    """
    Clipped surrogate loss, value regression and entropy bonus for one minibatch.

    loss = -mean(min(ratio*A, clip(ratio, 1-eps, 1+eps)*A))
           + value_coef * mean((V - R)^2) - entropy_coef * H

    Samples whose probability ratio is not finite are dropped from the
    surrogate and counted in ``skipped``.
    """
    n = len(batch)
    if n == 0:
        raise ContractViolation("ppo_loss needs a non-empty batch")
    obs = np.atleast_2d(batch.obs)
    u = np.atleast_2d(batch.actions)
    std = np.exp(agent.log_std)

    mean = agent.policy.forward(obs)
    logp = gaussian_log_prob(u, mean, agent.log_std)
    adv = batch.advantages
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp - batch.logp_old)
        valid = np.isfinite(ratio)
        unclipped = np.where(valid, ratio * adv, 0.0)
        clipped = np.where(valid, np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv, 0.0)
    skipped = int(n - valid.sum())
    n_valid = max(int(valid.sum()), 1)
    surrogate = np.minimum(unclipped, clipped)
    # d(surrogate)/d(logp): ratio*A where the unclipped term is active, else 0
    d_surr = np.where(valid & (unclipped <= clipped), unclipped, 0.0)
    d_logp = -d_surr / n_valid

    z = (u - mean) / std
    d_mean = d_logp[:, None] * z / std
    d_log_std = np.sum(d_logp[:, None] * (z ** 2 - 1.0), axis=0) - entropy_coef
    policy_grad = agent.policy.backward(obs, d_mean).params

    values = agent.state_value(obs)
    diff = values - batch.returns
    value_loss = float(np.mean(diff ** 2))
    value_grad = agent.value.backward(obs, (2.0 * value_coef * diff / n)[:, None]).params

    entropy = gaussian_entropy(agent.log_std)
    surrogate_mean = float(surrogate.sum() / n_valid)
    loss = -surrogate_mean + value_coef * value_loss - entropy_coef * entropy
    info = PpoLossInfo(loss=loss, surrogate=surrogate_mean, value_loss=value_loss, entropy=entropy, skipped=skipped)
    return info, PpoGradients(policy=policy_grad, log_std=d_log_std, value=value_grad)


@dataclass
class Rollout:
    """One agent's trajectory over an iteration's episodes, concatenated."""

    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)

    def to_batch(self, gamma: float, lam: float, reward_scale: float = 1.0) -> PpoBatch:
        advantages, returns = gae_advantages(
            np.asarray(self.rewards) * reward_scale, self.values, self.dones, gamma, lam
        )
        return PpoBatch(
            obs=np.asarray(self.obs, dtype=np.float64),
            actions=np.asarray(self.actions, dtype=np.float64),
            logp_old=np.asarray(self.logp, dtype=np.float64),
            advantages=advantages,
            returns=returns,
        )


def ppo_update(agent: PpoAgent, batch: PpoBatch, config: PpoConfig) -> tuple[float, int]:
    """
    K epochs of shuffled minibatch updates for a single agent.

    Only ``agent`` and its own random stream are touched.

    Returns:
        (mean loss over minibatches, skipped samples)
    """
    losses, skipped = [], 0
    n = len(batch)
    for _ in range(config.epochs):
        perm = agent.rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = batch.take(perm[start:start + config.minibatch_size])
            mb.advantages = normalize_advantages(mb.advantages)
            info, grads = ppo_loss(agent, mb, config.clip_epsilon, config.value_coef, config.entropy_coef)
            if not math.isfinite(info.loss):
                error_logger.error(f"PPO agent {agent.agent_id} produced a non-finite loss: {info}")
                raise TrainingDivergence(f"non-finite PPO loss for agent '{agent.agent_id}'")

            flat = np.concatenate([agent.policy.params, agent.log_std])
            flat, agent.policy_opt = adam_update(flat, np.concatenate([grads.policy, grads.log_std]), agent.policy_opt)
            agent.policy.params = flat[: agent.policy.n_params]
            agent.log_std = flat[agent.policy.n_params:]
            agent.value.params, agent.value_opt = adam_update(agent.value.params, grads.value, agent.value_opt)
            losses.append(info.loss)
            skipped += info.skipped
    return float(np.mean(losses)), skipped


class PpoTrainer:
    """
    Independent PPO over a MultiAgentEnv.

    Args:
        env: Environment to train on
        config: Hyperparameters
        seed: Seeds initialization, sampling, shuffling and episodes
    """

    def __init__(self, env: MultiAgentEnv, config: PpoConfig, seed: int):
        self.env = env
        self.config = config
        self.seed = seed
        self.agent_ids = env.agent_ids
        self.agents = {
            a: PpoAgent.create(
                a,
                space_dim(env.observation_spaces[a]),
                space_dim(env.action_spaces[a]),
                config.hidden_sizes,
                config.policy_lr,
                config.value_lr,
                config.initial_log_std,
                seed,
            )
            for a in self.agent_ids
        }
        self.episodes_run = 0
        app_logger.info(f"Initialized PPO with agents={list(self.agent_ids)}, epochs={config.epochs}")

    def collect(self) -> tuple[dict[str, Rollout], list[dict[str, float]], list[float]]:
        """Roll out the frozen behaviour policies for one iteration."""
        env = self.env
        rollouts = {a: Rollout() for a in self.agent_ids}
        episode_returns, episode_vio = [], []
        for _ in range(self.config.episodes_per_iteration):
            obs = env.reset(derive_seed(self.seed, f"episode{self.episodes_run}"))
            self.episodes_run += 1
            returns = {a: 0.0 for a in self.agent_ids}
            v_vio = 0.0
            done = False
            while not done:
                sampled = {a: self.agents[a].sample(obs[a]) for a in self.agent_ids}
                step = env.step({a: scale_action(sampled[a][0], env.action_spaces[a]) for a in self.agent_ids})
                done = step.dones[ALL_DONE]
                for a in self.agent_ids:
                    r = rollouts[a]
                    r.obs.append(obs[a])
                    r.actions.append(sampled[a][0])
                    r.logp.append(sampled[a][1])
                    r.rewards.append(step.rewards[a])
                    r.values.append(float(self.agents[a].state_value(obs[a])[0]))
                    r.dones.append(done)
                    returns[a] += step.rewards[a]
                v_vio += step.metas[self.agent_ids[0]]["v_vio"]
                obs = step.observations
            episode_returns.append(returns)
            episode_vio.append(v_vio)
        return rollouts, episode_returns, episode_vio

    def run(self, iterations: int | None = None) -> Iterator[TrainMetrics]:
        c = self.config
        for iteration in range(iterations or c.iterations):
            for agent in self.agents.values():
                agent.snapshot()
            rollouts, episode_returns, episode_vio = self.collect()

            losses, skipped = {}, 0
            for a in self.agent_ids:
                batch = rollouts[a].to_batch(c.gamma, c.gae_lambda, c.reward_scale)
                losses[a], agent_skipped = ppo_update(self.agents[a], batch, c)
                skipped += agent_skipped
            if skipped:
                app_logger.warning(f"PPO iteration {iteration}: skipped {skipped} samples with non-finite ratios")

            agent_returns = {a: float(np.mean([r[a] for r in episode_returns])) for a in self.agent_ids}
            metrics = TrainMetrics(
                iteration=iteration,
                agent_returns=agent_returns,
                total_return=float(sum(agent_returns.values())),
                ppo_loss=losses,
                v_vio=float(np.mean(episode_vio)),
                skipped_samples=skipped,
            )
            app_logger.info(
                f"PPO iteration {iteration}: total_return={metrics.total_return:.3f}, v_vio={metrics.v_vio:.4f}"
            )
            yield metrics

    def save_checkpoint(self, directory: str | Path) -> Path:
        directory = Path(directory)
        for a, agent in self.agents.items():
            save_mlp(directory / f"{a}.actor.bin", agent.policy, extras=agent.log_std)
            save_mlp(directory / f"{a}.value.bin", agent.value)
        return directory


def ppo_train(env: MultiAgentEnv, config: PpoConfig, seed: int) -> Iterator[TrainMetrics]:
    """Stream TrainMetrics from a fresh independent-PPO run."""
    return PpoTrainer(env, config, seed).run()
