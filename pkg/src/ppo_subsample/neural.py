"""Dense feed-forward networks with hand-written backprop, Adam/AdamW and grad clipping.

Everything is float64.  A network is a list of layers ``y = act(x @ W.T + b)``
with ``W`` stored ``(out, in)``.  Gradients are plain lists of arrays in the
same order as :meth:`DenseNet.parameters` (``W0, b0, W1, b1, ...``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, TrainingDivergence

ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass
class ForwardCache:
    """Per-layer inputs and activated outputs from one forward pass."""

    net_id: int
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]


def orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    flat = rng.standard_normal((rows, cols))
    if rows < cols:
        flat = flat.T
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


class DenseNet:
    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ContractViolation("a network needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ContractViolation(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ContractViolation(f"layer {i}: bias shape {layer.bias.shape} does not match weight {layer.weight.shape}")
            if i and layers[i - 1].weight.shape[0] != layer.weight.shape[1]:
                raise ContractViolation(f"layer {i} expects {layer.weight.shape[1]} inputs, previous layer gives {layers[i - 1].weight.shape[0]}")
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden_gain: float = math.sqrt(2.0),
        output_gain: float = 1.0,
    ) -> "DenseNet":
        """Orthogonal weights, zero biases, tanh on hidden layers, identity on the output."""
        layers = []
        n = len(sizes) - 1
        for i in range(n):
            last = i == n - 1
            w = orthogonal(sizes[i + 1], sizes[i], output_gain if last else hidden_gain, rng)
            layers.append(Layer(w, np.zeros(sizes[i + 1]), "identity" if last else "tanh"))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "DenseNet":
        n = len(sizes) - 1
        return cls([
            Layer(np.zeros((sizes[i + 1], sizes[i])), np.zeros(sizes[i + 1]), "identity" if i == n - 1 else "tanh")
            for i in range(n)
        ])

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        for layer in self.layers:
            x = x @ layer.weight.T + layer.bias
            if layer.activation == "tanh":
                x = np.tanh(x)
        return x

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        inputs, outputs = [], []
        for layer in self.layers:
            inputs.append(x)
            x = x @ layer.weight.T + layer.bias
            if layer.activation == "tanh":
                x = np.tanh(x)
            outputs.append(x)
        return x, ForwardCache(id(self), inputs, outputs)

    def backward(self, cache: ForwardCache | None, grad_out: np.ndarray) -> list[np.ndarray]:
        """Reverse-mode gradients of ``sum(grad_out * output)`` w.r.t. every parameter."""
        if cache is None or cache.net_id != id(self) or len(cache.inputs) != len(self.layers):
            raise ContractViolation("backward needs the forward cache of this network")
        grad = np.asarray(grad_out, dtype=np.float64)
        if grad.shape != cache.outputs[-1].shape:
            raise ContractViolation(f"upstream gradient shape {grad.shape} != output shape {cache.outputs[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == "tanh":
                grad = grad * (1.0 - cache.outputs[i] ** 2)
            x = cache.inputs[i]
            if grad.ndim == 1:
                grads[2 * i] = np.outer(grad, x)
                grads[2 * i + 1] = grad.copy()
            else:
                grads[2 * i] = grad.T @ x
                grads[2 * i + 1] = grad.sum(axis=0)
            if i:
                grad = grad @ layer.weight
        return grads

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ContractViolation(f"input shape {x.shape} does not match network input size {self.input_dim}")


# ------------------------------------------------------------ policy / value


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def categorical_entropy(log_probs: np.ndarray) -> np.ndarray:
    return -np.sum(np.exp(log_probs) * log_probs, axis=-1)


@dataclass
class PolicyOutput:
    logits: np.ndarray
    log_probs: np.ndarray
    entropy: float


def forward_policy(net: DenseNet, observation: np.ndarray) -> PolicyOutput:
    logits = net(observation)
    log_probs = log_softmax(logits)
    return PolicyOutput(logits, log_probs, float(categorical_entropy(log_probs)))


def forward_value(net: DenseNet, observation: np.ndarray) -> float:
    out = net(observation)
    if out.shape[-1] != 1:
        raise ContractViolation("value network must have a single output")
    return float(out[0])


# ------------------------------------------------------------------ optimizer


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    if not max_norm > 0:
        raise ContractViolation("max_norm must be positive")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDivergence("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, kind: str = "adamw", learning_rate: float = 1e-3, weight_decay: float = 0.01) -> "OptimizerState":
        if kind not in ("adam", "adamw"):
            raise ContractViolation(f"unknown optimizer kind {kind!r}")
        params = net.parameters()
        return cls(
            kind,
            learning_rate,
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            weight_decay=weight_decay if kind == "adamw" else 0.0,
        )

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.kind, self.learning_rate,
            [m.copy() for m in self.first_moment], [v.copy() for v in self.second_moment],
            self.betas, self.eps, self.weight_decay, self.step,
        )


def apply_update(net: DenseNet, state: OptimizerState, grads: Sequence[np.ndarray], maximize: bool = False) -> None:
    """One Adam/AdamW step, in place on ``net`` and ``state``.

    AdamW decay is decoupled and touches weight matrices only, never biases.
    """
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ContractViolation("gradients are not shaped like the network parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergence("non-finite gradient passed to the optimiser")
    b1, b2 = state.betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    lr = state.learning_rate
    for i, (p, g) in enumerate(zip(params, grads)):
        if maximize:
            g = -g
        m, v = state.first_moment[i], state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.kind == "adamw" and state.weight_decay and i % 2 == 0:
            p *= 1.0 - lr * state.weight_decay
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p)):
            raise TrainingDivergence(f"parameter tensor {i} became non-finite")


# ----------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "ppo-subsample-checkpoint 1"


def save_checkpoint(path: str | Path, nets: dict[str, DenseNet], meta: dict[str, str] | None = None) -> None:
    """Plain-text checkpoint; see README for the grammar."""
    lines = [CHECKPOINT_MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for name, net in nets.items():
        lines.append(f"net {name} {len(net.layers)}")
        for layer in net.layers:
            out_dim, in_dim = layer.weight.shape
            lines.append(f"layer {in_dim} {out_dim} {layer.activation}")
    lines.append("params")
    for net in nets.values():
        lines.extend(format(float(v), ".17g") for v in net.flat_parameters())
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint file")
    meta: dict[str, str] = {}
    shapes: dict[str, list[tuple[int, int, str]]] = {}
    i = 1
    while i < len(lines) and lines[i] != "params":
        parts = lines[i].split()
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
            i += 1
        elif parts[0] == "net":
            name, n = parts[1], int(parts[2])
            shapes[name] = []
            for j in range(n):
                _, in_dim, out_dim, act = lines[i + 1 + j].split()
                shapes[name].append((int(in_dim), int(out_dim), act))
            i += n + 1
        else:
            raise ContractViolation(f"{path}:{i + 1}: unexpected line {lines[i]!r}")
    values = np.array([float(v) for v in lines[i + 1 :]], dtype=np.float64)
    nets: dict[str, DenseNet] = {}
    pos = 0
    for name, layer_shapes in shapes.items():
        net = DenseNet([Layer(np.zeros((o, n)), np.zeros(o), act) for n, o, act in layer_shapes])
        count = net.parameter_count
        if pos + count > values.size:
            raise ContractViolation(f"{path}: truncated parameter block")
        net.set_flat_parameters(values[pos : pos + count])
        pos += count
        nets[name] = net
    if pos != values.size:
        raise ContractViolation(f"{path}: {values.size - pos} trailing parameter values")
    return nets, meta
