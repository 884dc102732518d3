"""
Action sources for rollouts outside training: uniform random actions and
deterministic actors restored from a checkpoint directory.
"""
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from gridmarl.core.errors import CheckpointError
from gridmarl.core.neural import Mlp, load_mlp
from gridmarl.core.spaces import Space, scale_action, space_dim
from gridmarl.envs.multi_agent import MultiAgentEnv
from gridmarl.utils.logging_config import app_logger, error_logger
from gridmarl.utils.seeding import make_rng


class Policy(Protocol):
    def reset(self, seed: int) -> None: ...

    def act(self, observations: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]: ...


class RandomPolicy:
    """Uniform actions inside each agent's action space."""

    def __init__(self, action_spaces: Mapping[str, Space]):
        self.action_spaces = dict(action_spaces)
        self.rng = make_rng(0)

    def reset(self, seed: int) -> None:
        self.rng = make_rng(seed)

    def act(self, observations: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {
            aid: self.rng.uniform(space.low, space.high)
            for aid, space in sorted(self.action_spaces.items())
        }


class ActorPolicy:
    """Deterministic actor outputs, clipped to [-1, 1] and mapped onto the action spaces."""

    def __init__(self, actors: Mapping[str, Mlp], action_spaces: Mapping[str, Space]):
        self.actors = dict(actors)
        self.action_spaces = dict(action_spaces)

    def reset(self, seed: int) -> None:
        pass

    def act(self, observations: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {
            aid: scale_action(np.clip(self.actors[aid].forward(observations[aid]), -1.0, 1.0), self.action_spaces[aid])
            for aid in sorted(self.actors)
        }


def load_actor_policy(checkpoint_dir: str | Path, env: MultiAgentEnv) -> ActorPolicy:
    """
    Restore ``<agent>.actor.bin`` for every agent of ``env``.

    Raises:
        CheckpointError: missing files or actor shapes that do not fit the
            scenario's observation/action spaces
    """
    checkpoint_dir = Path(checkpoint_dir)
    actors = {}
    for aid in env.agent_ids:
        net, _ = load_mlp(checkpoint_dir / f"{aid}.actor.bin")
        obs_dim = space_dim(env.observation_spaces[aid])
        act_dim = space_dim(env.action_spaces[aid])
        if (net.input_dim, net.output_dim) != (obs_dim, act_dim):
            error_logger.error(
                f"Checkpoint {checkpoint_dir} actor '{aid}' is {net.input_dim}->{net.output_dim}, "
                f"scenario needs {obs_dim}->{act_dim}"
            )
            raise CheckpointError(
                f"incompatible checkpoint for agent '{aid}': actor maps {net.input_dim}->{net.output_dim}, "
                f"scenario needs {obs_dim}->{act_dim}"
            )
        actors[aid] = net
    app_logger.info(f"Loaded actors for {list(actors)} from {checkpoint_dir}")
    return ActorPolicy(actors, env.action_spaces)
