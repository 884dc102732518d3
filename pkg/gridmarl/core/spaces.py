"""
Observation and action spaces.

Spaces are float64 ``gymnasium.spaces.Box`` instances; the helpers here build,
concatenate and clamp against them.
"""
from typing import Sequence

import numpy as np
from gymnasium import spaces

from gridmarl.core.errors import ContractViolation

Space = spaces.Box


def make_space(low: Sequence[float], high: Sequence[float]) -> Space:
    """
    Build a 1-D float64 Box.

    Args:
        low: Elementwise lower bounds
        high: Elementwise upper bounds

    Returns:
        Box with shape (len(low),)
    """
    low_arr = np.asarray(low, dtype=np.float64).reshape(-1)
    high_arr = np.asarray(high, dtype=np.float64).reshape(-1)
    if low_arr.size < 1:
        raise ContractViolation("space must have at least one dimension")
    if low_arr.shape != high_arr.shape:
        raise ContractViolation(
            f"space bounds length mismatch: low={low_arr.size}, high={high_arr.size}"
        )
    if np.any(low_arr > high_arr):
        raise ContractViolation("space lower bound exceeds upper bound")
    return spaces.Box(low=low_arr, high=high_arr, dtype=np.float64)


def space_dim(space: Space) -> int:
    return int(space.shape[0])


def concat_spaces(parts: Sequence[Space]) -> Space:
    """Concatenate 1-D spaces in order."""
    if not parts:
        raise ContractViolation("cannot concatenate an empty list of spaces")
    return make_space(
        np.concatenate([p.low for p in parts]),
        np.concatenate([p.high for p in parts]),
    )


def clamp_action(action: Sequence[float], space: Space) -> np.ndarray:
    """
    Clamp an action elementwise into the space bounds.

    Args:
        action: Raw action, e.g. an unbounded exploration sample
        space: Target space

    Returns:
        min(max(action, low), high) as a new float64 array
    """
    arr = np.asarray(action, dtype=np.float64).reshape(-1)
    if arr.size != space_dim(space):
        raise ContractViolation(
            f"action length {arr.size} does not match space length {space_dim(space)}"
        )
    return np.minimum(np.maximum(arr, space.low), space.high)


def scale_action(unit_action: Sequence[float], space: Space) -> np.ndarray:
    """Map a policy output in [-1, 1] linearly onto the space bounds (not clamped)."""
    arr = np.asarray(unit_action, dtype=np.float64)
    return space.low + (arr + 1.0) * 0.5 * (space.high - space.low)


def within(vector: np.ndarray, space: Space) -> bool:
    vec = np.asarray(vector, dtype=np.float64).reshape(-1)
    return (
        vec.size == space_dim(space)
        and bool(np.all(vec >= space.low))
        and bool(np.all(vec <= space.high))
    )
