"""A small float64 MLP with hand-written reverse mode, and Adam."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DomainError
from .io import atomic_write_text

ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpParams:
    layers: list  # [(W: out x in, b: out)]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}")
        if not self.layers:
            raise DomainError("an MLP needs at least one layer")
        layers = []
        prev = None
        for w, b in self.layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatch(f"layer with W {w.shape} and b {b.shape}")
            if prev is not None and w.shape[1] != prev:
                raise DimensionMismatch(f"layer expects {w.shape[1]} inputs, previous layer gives {prev}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError("non-finite parameter")
            prev = w.shape[0]
            layers.append((w, b))
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def unflatten(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        out, k = [], 0
        for w, b in self.layers:
            nw = w.size
            out.append((vec[k:k + nw].reshape(w.shape), vec[k + nw:k + nw + b.size].copy()))
            k += nw + b.size
        if k != vec.size:
            raise DimensionMismatch(f"flat vector has {vec.size} entries, parameters need {k}")
        return MlpParams(out, self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers], self.activation)


def init_mlp(sizes, seed: int, activation: str = "tanh") -> MlpParams:
    """Layers sized ``sizes = [d_in, h1, ..., d_out]``, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""
    if len(sizes) < 2:
        raise DomainError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)))
    return MlpParams(layers, activation)


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    return 1.0 - a * a if kind == "tanh" else (z > 0).astype(np.float64)


def _forward(params: MlpParams, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionMismatch(f"inputs of shape {x.shape}, network expects d_in = {params.input_dim}")
    cache = [(x, None)]
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        h = z if i == last else _act(z, params.activation)
        cache.append((h, z))
    return h, cache


def mlp_forward(params: MlpParams, inputs) -> np.ndarray:
    return _forward(params, inputs)[0]


def mlp_backward(params: MlpParams, inputs, output_cotangent):
    """Gradients of <cotangent, forward(inputs)>; returns (MlpParams of grads, input grads)."""
    out, cache = _forward(params, inputs)
    delta = np.asarray(output_cotangent, dtype=np.float64)
    if delta.shape != out.shape:
        raise DimensionMismatch(f"cotangent {delta.shape} vs output {out.shape}")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        h_out, z = cache[i + 1]
        if i != len(params.layers) - 1:
            delta = delta * _act_grad(z, h_out, params.activation)
        h_in = cache[i][0]
        grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        delta = delta @ w
    return MlpParams(grads, params.activation), delta


@dataclass
class TrainState:
    params: MlpParams
    m: MlpParams
    v: MlpParams
    step: int = 0
    rng_seed: int = 0
    loss_trace: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: MlpParams, rng_seed: int = 0) -> "TrainState":
        return cls(params, params.zeros_like(), params.zeros_like(), 0, rng_seed, [])


def adam_step(state: TrainState, gradients: MlpParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """Bias-corrected Adam; returns a new state (the input is left untouched)."""
    g = gradients.flat()
    p = state.params.flat()
    if g.shape != p.shape:
        raise DimensionMismatch(f"gradient has {g.size} entries, parameters {p.size}")
    t = state.step + 1
    m = beta1 * state.m.flat() + (1 - beta1) * g
    v = beta2 * state.v.flat() + (1 - beta2) * g * g
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    tmpl = state.params
    return TrainState(tmpl.unflatten(p), tmpl.unflatten(m), tmpl.unflatten(v), t, state.rng_seed,
                      list(state.loss_trace))


def params_to_json(params: MlpParams) -> str:
    doc = {
        "format": "mlp-params/1",
        "activation": params.activation,
        "layers": [
            {"weight_shape": list(w.shape), "bias_shape": list(b.shape),
             "weight": [repr(float(v)) for v in w.ravel()], "bias": [repr(float(v)) for v in b]}
            for w, b in params.layers
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def params_from_json(text: str) -> MlpParams:
    doc = json.loads(text)
    layers = []
    for layer in doc["layers"]:
        w = np.array([float(v) for v in layer["weight"]]).reshape(layer["weight_shape"])
        b = np.array([float(v) for v in layer["bias"]]).reshape(layer["bias_shape"])
        layers.append((w, b))
    return MlpParams(layers, doc["activation"])


def save_params(params: MlpParams, path: str | os.PathLike) -> None:
    atomic_write_text(path, params_to_json(params))


def load_params(path: str | os.PathLike) -> MlpParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_json(fh.read())
