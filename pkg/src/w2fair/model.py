"""Reference classifier: dense feed-forward net with softmax output, in plain numpy.

The backward pass takes the gradient of the loss with respect to the softmax
*probabilities*, which is where W2 pseudo-gradients live; they are simply added
to the cross-entropy gradient before backpropagation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EPS_LOG = 1e-12
CHECKPOINT_FORMAT = "w2fair-mlp"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
}


class ShapeError(ValueError):
    pass


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # layer l maps sizes[l] -> sizes[l+1]; shape (in, out)
    biases: list[np.ndarray]
    activation: str = "tanh"
    seed: int | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {l}: weight {w.shape} / bias {b.shape} mismatch")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {l} input {w.shape[0]} != previous output")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, sizes: Sequence[int], seed: int | np.random.Generator = 0, activation: str = "tanh"):
        """Glorot-uniform weights, zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation, None if isinstance(seed, np.random.Generator) else int(seed))

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.activation, self.seed)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": self.sizes,
            "activation": self.activation,
            "seed": self.seed,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
        params = cls(
            [np.asarray(layer["weight"], dtype=float) for layer in d["layers"]],
            [np.asarray(layer["bias"], dtype=float) for layer in d["layers"]],
            d["activation"],
            d.get("seed"),
        )
        if params.sizes != list(d["sizes"]):
            raise ShapeError("layer shapes disagree with declared sizes")
        return params

    def save(self, path) -> None:
        # json writes floats with repr(), so the round trip is exact
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardTrace:
    activations: list[np.ndarray]  # input first, then each hidden layer output
    pre_activations: list[np.ndarray]
    probs: np.ndarray


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise ShapeError(f"expected inputs of dimension {params.sizes[0]}, got shape {x.shape}")
    act, _ = _ACTIVATIONS[params.activation]
    acts, pres = [x], []
    a = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pres.append(z)
        if l < last:
            a = act(z)
            acts.append(a)
    return ForwardTrace(acts, pres, softmax(pres[-1]))


def predict_proba(params: ModelParams, x) -> np.ndarray:
    return forward(params, x).probs


def predict(trace_or_probs) -> np.ndarray:
    """Argmax class; ties go to the smallest class id."""
    probs = trace_or_probs.probs if isinstance(trace_or_probs, ForwardTrace) else np.asarray(trace_or_probs)
    return np.argmax(probs, axis=-1)


def backward(params: ModelParams, trace: ForwardTrace, grad_probs) -> list[np.ndarray]:
    """Parameter gradients given dLoss/dprobs (one K-vector per example).

    Returned in the order of :meth:`ModelParams.arrays`.
    """
    g = np.asarray(grad_probs, dtype=float)
    p = trace.probs
    if g.shape != p.shape:
        raise ShapeError(f"output gradient shape {g.shape} != probabilities {p.shape}")
    _, dact = _ACTIVATIONS[params.activation]
    dz = p * (g - np.sum(p * g, axis=1, keepdims=True))
    grads: list[np.ndarray] = []
    for l in range(len(params.weights) - 1, -1, -1):
        a_in = trace.activations[l]
        grads += [dz.sum(axis=0), a_in.T @ dz]
        if l:
            da = dz @ params.weights[l].T
            dz = da * dact(trace.pre_activations[l - 1], trace.activations[l])
    grads.reverse()
    return grads


def loss_cross_entropy(probs, y) -> float:
    """``-log p[true class]`` for one example; ``y`` is a one-hot vector."""
    probs = np.asarray(probs, dtype=float)
    k = int(np.argmax(y))
    return float(-np.log(max(probs[k], EPS_LOG)))


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean loss over a batch with integer labels."""
    labels = np.asarray(labels)
    p = probs[np.arange(labels.size), labels]
    return float(np.mean(-np.log(np.maximum(p, EPS_LOG))))


def cross_entropy_grad(probs: np.ndarray, labels) -> np.ndarray:
    """d(mean cross-entropy)/d(probs)."""
    labels = np.asarray(labels)
    n = labels.size
    g = np.zeros_like(probs)
    rows = np.arange(n)
    g[rows, labels] = -1.0 / (np.maximum(probs[rows, labels], EPS_LOG) * n)
    return g


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def step(params: ModelParams, grads: list[np.ndarray], opt: OptimizerState):
    """One in-place update; returns ``(params, opt)`` for convenience."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ShapeError("gradients do not match parameter shapes")
    opt.t += 1
    if opt.kind == "sgd":
        for a, g in zip(arrays, grads):
            a -= opt.lr * g
        return params, opt
    if not opt.m:
        opt.m = [np.zeros_like(a) for a in arrays]
        opt.v = [np.zeros_like(a) for a in arrays]
    bc1 = 1.0 - opt.beta1 ** opt.t
    bc2 = 1.0 - opt.beta2 ** opt.t
    for a, g, m, v in zip(arrays, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        a -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params, opt
