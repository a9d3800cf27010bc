"""Small feedforward-network core: forward/backward passes, Adam, and
splittable random streams.

Only the MLP composite is differentiated; there is no general autodiff here.
Weights are stored as ``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ShapeError, TrainingError

ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpParams:
    """Weights and biases of a fully connected network.

    Hidden layers use ``activation``; the output layer is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: in_dim {w.shape[0]} does not match previous out_dim "
                    f"{self.weights[i - 1].shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(path, array)`` pairs in a fixed order."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layers.{i}.weight", w
            yield f"layers.{i}.bias", b

    def copy(self) -> MlpParams:
        return MlpParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation
        )

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.activation,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.arrays())


def init_mlp(sizes, stream: RngStream, activation: str = "relu") -> MlpParams:
    """He-style initialisation for the layer sizes ``[in, h1, ..., out]``."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"invalid layer sizes {sizes}")
    gen = stream.generator
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / fan_in) if activation == "relu" else np.sqrt(1.0 / fan_in)
        weights.append(gen.standard_normal((fan_in, fan_out)) * scale)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _act(name, x):
    return np.maximum(x, 0.0) if name == "relu" else np.tanh(x)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"layer 0: expected a 2-D input, got shape {x.shape}")
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"layer 0: input has {x.shape[1]} columns, expected {params.in_dim}")
    return x


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    h = _check_input(params, x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = _act(params.activation, h)
    return h


def _forward_trace(params: MlpParams, x: np.ndarray):
    # post-activation inputs to every layer, plus the network output
    inputs = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = _act(params.activation, h)
            inputs.append(h)
    return inputs, h


def mlp_backward(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray, trace=None
) -> MlpParams:
    """Reverse-mode gradient of ``sum(upstream * mlp_forward(params, x))``.

    ``trace`` may carry the layer inputs from a previous forward pass to avoid
    recomputation.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], params.out_dim):
        raise ShapeError(
            f"upstream gradient shape {upstream.shape} != output shape "
            f"{(x.shape[0], params.out_dim)}"
        )
    inputs = trace if trace is not None else _forward_trace(params, x)[0]
    grads = params.zeros_like()
    delta = upstream
    for i in range(len(params.weights) - 1, -1, -1):
        h_in = inputs[i]
        grads.weights[i] = h_in.T @ delta
        grads.biases[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ params.weights[i].T
        # h_in is the activated output of layer i-1
        if params.activation == "relu":
            delta = delta * (h_in > 0.0)
        else:
            delta = delta * (1.0 - h_in * h_in)
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = [np.zeros_like(a) for _, a in params.arrays()]
        return cls(lr, beta1, beta2, eps, 0, zeros, [z.copy() for z in zeros])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    p_items = list(params.arrays())
    g_items = list(grads.arrays())
    if not state.m:
        state.m = [np.zeros_like(a) for _, a in p_items]
        state.v = [np.zeros_like(a) for _, a in p_items]
    if len(g_items) != len(p_items):
        raise ShapeError("gradient structure does not match parameters")
    for (path, p), (_, g) in zip(p_items, g_items):
        if g.shape != p.shape:
            raise ShapeError(f"{path}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at {path}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for j, ((_, p), (_, g)) in enumerate(zip(p_items, g_items)):
        m, v = state.m[j], state.v[j]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _child_key(child_id) -> int:
    if isinstance(child_id, str):
        return zlib.crc32(child_id.encode("utf-8"))
    child_id = int(child_id)
    if child_id < 0:
        raise ValueError("stream ids must be non-negative")
    return child_id


class RngStream:
    """Reproducible random stream identified by ``(seed, path)``.

    Children are derived from the identity, never from the parent's current
    state, so the draws of a child do not depend on how much the parent (or
    any sibling) has been consumed. Backed by the counter-based Philox
    generator keyed through ``numpy.random.SeedSequence``.
    """

    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gen = None

    def split(self, child_id) -> RngStream:
        return RngStream(self.seed, self.path + (_child_key(child_id),))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def rng_split(parent: RngStream, child_id) -> RngStream:
    return parent.split(child_id)


def sample_standard_normal(stream: RngStream, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"rows and cols must be >= 1, got {rows}x{cols}")
    return stream.generator.standard_normal((rows, cols))
