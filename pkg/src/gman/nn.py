"""Small multilayer perceptron engine with exact reverse-mode gradients.

Everything is float64 numpy. Networks are plain affine/activation chains, so
the "tape" is just the list of layer inputs and pre-activations; no general
autodiff graph is built.

Initial weights come from numpy's PCG64 bit generator
(``numpy.random.default_rng(seed)``), drawn layer by layer as
``U(-sqrt(gain/fan_in), sqrt(gain/fan_in))`` with gain 6 for relu networks
and 3 otherwise (He / LeCun uniform); biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    """Raised on dimension mismatches between params, inputs and gradients."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # relu'(0) is 0 by convention
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one network.

    ``activation`` is used after every hidden layer; ``output_activation``
    after the last one (identity unless asked otherwise).
    """

    input_dim: int
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if int(self.input_dim) <= 0:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.layer_widths:
            raise ValueError("layer_widths must be non-empty")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {list(self.layer_widths)}")
        for a in (self.activation, self.output_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; expected one of {ACTIVATIONS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "output_activation": self.output_activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            input_dim=d["input_dim"],
            layer_widths=tuple(d["layer_widths"]),
            activation=d["activation"],
            output_activation=d.get("output_activation", "identity"),
            seed=d["seed"],
        )


@dataclass
class MlpParams:
    """Weights ``W[k]`` of shape (width_k, width_{k-1}) and biases ``b[k]``."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        prev = self.spec.input_dim
        if len(self.weights) != len(self.spec.layer_widths) or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer_widths")
        for k, width in enumerate(self.spec.layer_widths):
            if self.weights[k].shape != (width, prev):
                raise ShapeError(f"weights[{k}] has shape {self.weights[k].shape}, expected {(width, prev)}")
            if self.biases[k].shape != (width,):
                raise ShapeError(f"biases[{k}] has shape {self.biases[k].shape}, expected {(width,)}")
            prev = width

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(self.spec, list(arrays[:n]), list(arrays[n:]))

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass
class GradBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_gradient: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class Tape:
    """Forward record: per-layer inputs, pre-activations and outputs."""

    params: MlpParams
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def mlp_init(spec: MlpSpec) -> MlpParams:
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    prev = spec.input_dim
    gain = 6.0 if spec.activation == "relu" else 3.0
    for width in spec.layer_widths:
        bound = np.sqrt(gain / prev)
        weights.append(rng.uniform(-bound, bound, size=(width, prev)))
        biases.append(np.zeros(width))
        prev = width
    return MlpParams(spec, weights, biases)


def mlp_from_arrays(spec: MlpSpec, weights, biases) -> MlpParams:
    """Build params from explicit (nested-list or array) values."""
    return MlpParams(
        spec,
        [np.array(w, dtype=np.float64, ndmin=2) for w in weights],
        [np.array(b, dtype=np.float64, ndmin=1) for b in biases],
    )


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(f"input has shape {x.shape}, expected (*, {params.spec.input_dim})")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite input to mlp_forward")
    tape = Tape(params, squeeze=squeeze)
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(a)
        z = a @ w.T + b
        a = _act(params.spec.output_activation if k == last else params.spec.activation, z)
        tape.pre.append(z)
        tape.post.append(a)
    return (a[0] if squeeze else a), tape


def mlp_backward(tape: Tape, upstream) -> GradBundle:
    """Gradients of ``sum(output * upstream)``; batch rows are summed into the parameter grads."""
    params = tape.params
    up = np.asarray(upstream, dtype=np.float64)
    if tape.squeeze and up.ndim == 1:
        up = up[None, :]
    out = tape.post[-1]
    if up.shape != out.shape:
        raise ShapeError(f"upstream gradient has shape {up.shape}, expected {out.shape}")
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = up
    for k in range(n - 1, -1, -1):
        name = params.spec.output_activation if k == n - 1 else params.spec.activation
        delta = delta * _act_grad(name, tape.pre[k], tape.post[k])
        gw[k] = delta.T @ tape.inputs[k]
        gb[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k]
    return GradBundle(gw, gb, delta[0] if tape.squeeze else delta)


def _head(scalar_head) -> Callable[[np.ndarray], float]:
    if scalar_head is None or scalar_head == "sum":
        return lambda y: float(np.sum(y))
    if callable(scalar_head):
        return lambda y: float(scalar_head(y))
    raise ValueError(f"unsupported scalar head {scalar_head!r}")


def finite_diff_grad(params: MlpParams, x, scalar_head="sum", h: float = 1e-5) -> GradBundle:
    """Central-difference gradient of ``head(mlp(x))``. Test oracle only."""
    head = _head(scalar_head)
    x = np.asarray(x, dtype=np.float64)

    def value(p: MlpParams, inp) -> float:
        return head(mlp_forward(p, inp)[0])

    grads = []
    work = params.copy()
    for arr in work.arrays():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value(work, x)
            flat[i] = orig - h
            fm = value(work, x)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    gx = np.zeros_like(x)
    xf, gxf = x.copy().reshape(-1), gx.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = value(params, xf.reshape(x.shape))
        xf[i] = orig - h
        fm = value(params, xf.reshape(x.shape))
        xf[i] = orig
        gxf[i] = (fp - fm) / (2 * h)
    n = len(params.weights)
    return GradBundle(grads[:n], grads[n:], gx)


@dataclass
class OptimState:
    """Adam moments plus hyperparameters; weight decay is decoupled (AdamW)."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def fresh(cls, params, **hyper) -> "OptimState":
        arrays = _as_arrays(params)
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, **hyper)


def _as_arrays(obj) -> list[np.ndarray]:
    if hasattr(obj, "arrays"):
        return list(obj.arrays())
    return [np.asarray(a) for a in obj]


def optim_step(params, grads, state: OptimState):
    """One bias-corrected Adam step with decoupled weight decay.

    ``params`` is anything exposing ``arrays()``/``with_arrays()`` (or a plain
    list of arrays); ``grads`` mirrors it. Returns ``(new_params, state)``;
    the input params are not modified.
    """
    p_arr, g_arr = _as_arrays(params), _as_arrays(grads)
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state have different array counts")
    for i, (p, g) in enumerate(zip(p_arr, g_arr)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ShapeError(f"gradient array {i} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite values in gradient array {i} (shape {g.shape})")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr = state.learning_rate
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = []
    for i, (p, g) in enumerate(zip(p_arr, g_arr)):
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        new = p - lr * state.weight_decay * p
        new = new - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        out.append(new)
    if hasattr(params, "with_arrays"):
        return params.with_arrays(out), state
    return out, state
