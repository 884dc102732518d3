"""
Minimal feedforward networks on numpy: forward, reverse-mode gradients, Adam,
target-network soft updates and a flat binary checkpoint format.

Parameters live in one flat float64 vector; layer (W, b) pairs are views into
it, W stored row-major with shape (in, out).

Checkpoint byte layout (little-endian):
    header  "<4sHHBBI": magic b"GMLP", version, n_layers,
                        hidden activation tag, output activation tag, n_extra
    shapes  n_layers x "<II": (in, out)
    params  float64 x sum(in*out + out)
    extras  float64 x n_extra   (e.g. a policy's log-std)
Activation tags: 0 identity, 1 tanh.
"""
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gridmarl.core.errors import CheckpointError, ContractViolation

ACTIVATIONS = ("identity", "tanh")
_MAGIC = b"GMLP"
_VERSION = 1
_HEADER = struct.Struct("<4sHHBBI")
_SHAPE = struct.Struct("<II")


@dataclass(frozen=True)
class Gradient:
    """Gradient of ``upstream . output`` w.r.t. the parameters and the input."""

    params: np.ndarray
    inputs: np.ndarray


class Mlp:
    """
    Fully connected network with tanh hidden layers.

    Args:
        layer_sizes: [in, hidden..., out]
        output_activation: "identity" or "tanh"
        params: Flat parameter vector; zeros if omitted
    """

    hidden_activation = "tanh"

    def __init__(self, layer_sizes: Sequence[int], output_activation: str = "identity", params: np.ndarray | None = None):
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ContractViolation(f"invalid layer sizes {list(layer_sizes)}")
        if output_activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown output activation '{output_activation}'")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.shapes = tuple(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        self.output_activation = output_activation
        self.n_params = sum(i * o + o for i, o in self.shapes)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        if params.size != self.n_params:
            raise ContractViolation(f"expected {self.n_params} parameters, got {params.size}")
        self.params = params.copy()

    @classmethod
    def initialize(
        cls, layer_sizes: Sequence[int], rng: np.random.Generator, output_activation: str = "identity"
    ) -> "Mlp":
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        net = cls(layer_sizes, output_activation)
        for (fan_in, _), (w, _) in zip(net.shapes, net.layers()):
            bound = 1.0 / np.sqrt(fan_in)
            w[...] = rng.uniform(-bound, bound, w.shape)
        return net

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, self.params)

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        flat = self.params if params is None else params
        out, offset = [], 0
        for fan_in, fan_out in self.shapes:
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        batch = arr.reshape(1, -1) if single else arr
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ContractViolation(f"input width {batch.shape[-1]} does not match network input {self.input_dim}")
        return batch, single

    def _activations(self, batch: np.ndarray) -> list[np.ndarray]:
        acts = [batch]
        layers = self.layers()
        for k, (w, b) in enumerate(layers):
            z = acts[-1] @ w + b
            last = k == len(layers) - 1
            acts.append(np.tanh(z) if (not last or self.output_activation == "tanh") else z)
        return acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on one input vector or a batch of row vectors."""
        batch, single = self._as_batch(x)
        out = self._activations(batch)[-1]
        return out[0] if single else out

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> Gradient:
        """
        Reverse-mode gradient of sum(upstream * forward(x)).

        Args:
            x: Input vector or batch
            upstream: dLoss/dOutput, same shape as forward(x)

        Returns:
            Gradient with parameter gradient (summed over the batch) and
            input gradient (same shape as x)
        """
        batch, single = self._as_batch(x)
        g = np.asarray(upstream, dtype=np.float64)
        g = g.reshape(1, -1) if single else g
        if g.shape != (batch.shape[0], self.output_dim):
            raise ContractViolation(f"upstream shape {g.shape} does not match output {(batch.shape[0], self.output_dim)}")

        acts = self._activations(batch)
        layers = self.layers()
        grad = np.zeros(self.n_params)
        grad_layers = self.layers(grad)
        if self.output_activation == "tanh":
            g = g * (1.0 - acts[-1] ** 2)
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            gw, gb = grad_layers[k]
            gw[...] = acts[k].T @ g
            gb[...] = g.sum(axis=0)
            g = g @ w.T
            if k > 0:
                g = g * (1.0 - acts[k] ** 2)
        return Gradient(params=grad, inputs=g[0] if single else g)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_update(params: np.ndarray, grad: Gradient | np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; returns new arrays, inputs are not modified."""
    g = grad.params if isinstance(grad, Gradient) else np.asarray(grad, dtype=np.float64)
    if g.shape != params.shape or state.m.shape != params.shape:
        raise ContractViolation(f"adam_update shape mismatch: params {params.shape}, grad {g.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)


def soft_update(target_params: np.ndarray, online_params: np.ndarray, tau: float) -> np.ndarray:
    """target <- (1 - tau) * target + tau * online"""
    if not 0.0 < tau <= 1.0:
        raise ContractViolation(f"tau must be in (0, 1], got {tau}")
    if target_params.shape != online_params.shape:
        raise ContractViolation("soft_update shape mismatch")
    return (1.0 - tau) * target_params + tau * online_params


def mlp_to_bytes(net: Mlp, extras: np.ndarray | None = None) -> bytes:
    extra = np.zeros(0) if extras is None else np.asarray(extras, dtype=np.float64).reshape(-1)
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        len(net.shapes),
        ACTIVATIONS.index(net.hidden_activation),
        ACTIVATIONS.index(net.output_activation),
        extra.size,
    )
    shapes = b"".join(_SHAPE.pack(i, o) for i, o in net.shapes)
    return header + shapes + net.params.astype("<f8").tobytes() + extra.astype("<f8").tobytes()


def mlp_from_bytes(data: bytes) -> tuple[Mlp, np.ndarray]:
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, n_layers, hidden_tag, output_tag, n_extra = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC or version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint (magic={magic!r}, version={version})")
    if hidden_tag >= len(ACTIVATIONS) or output_tag >= len(ACTIVATIONS):
        raise CheckpointError("unknown activation tag in checkpoint")
    if ACTIVATIONS[hidden_tag] != Mlp.hidden_activation:
        raise CheckpointError(f"unsupported hidden activation '{ACTIVATIONS[hidden_tag]}'")
    offset = _HEADER.size
    shapes = []
    for _ in range(n_layers):
        shapes.append(_SHAPE.unpack_from(data, offset))
        offset += _SHAPE.size
    if not shapes or any(prev[1] != nxt[0] for prev, nxt in zip(shapes, shapes[1:])):
        raise CheckpointError("checkpoint layer shapes do not chain")
    sizes = [shapes[0][0]] + [o for _, o in shapes]
    n_params = sum(i * o + o for i, o in shapes)
    expected = offset + 8 * (n_params + n_extra)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint size {len(data)} does not match header ({expected} bytes)")
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=offset).astype(np.float64)
    extras = np.frombuffer(data, dtype="<f8", count=n_extra, offset=offset + 8 * n_params).astype(np.float64)
    return Mlp(sizes, ACTIVATIONS[output_tag], params), extras


def save_mlp(path: str | Path, net: Mlp, extras: np.ndarray | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(mlp_to_bytes(net, extras))
    return path


def load_mlp(path: str | Path) -> tuple[Mlp, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return mlp_from_bytes(path.read_bytes())
