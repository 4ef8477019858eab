"""Feed-forward network with relu hidden layers, linear output, MSE and Adam.

Plain numpy, float64 throughout.  Layer ``q`` computes ``A_q h + b_q`` with
``A_q`` of shape ``(N_q, N_{q-1})``; inputs are scaled to ``[0, 1]`` by
known bounds and labels are standardized, and both scalings are stored
with the model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

FORMAT_VERSION = 1


@dataclass
class MlpModel:
    dims: list
    weights: list
    biases: list
    x_lo: np.ndarray = None
    x_hi: np.ndarray = None
    y_mean: np.ndarray = None
    y_std: np.ndarray = None
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if self.x_lo is None:
            self.x_lo = np.zeros(self.dims[0])
        if self.x_hi is None:
            self.x_hi = np.ones(self.dims[0])
        if self.y_mean is None:
            self.y_mean = np.zeros(self.dims[-1])
        if self.y_std is None:
            self.y_std = np.ones(self.dims[-1])

    @property
    def n_params(self) -> int:
        return sum(A.size + b.size for A, b in zip(self.weights, self.biases))

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_params(self, params: list) -> "MlpModel":
        return replace(self, weights=list(params[0::2]), biases=list(params[1::2]))

    def normalize_x(self, X):
        return (np.asarray(X, float) - self.x_lo) / (self.x_hi - self.x_lo)

    def normalize_y(self, Y):
        return (np.asarray(Y, float) - self.y_mean) / self.y_std

    def denormalize_y(self, Yn):
        return np.asarray(Yn, float) * self.y_std + self.y_mean


def init_model(layer_dims, seed=0) -> MlpModel:
    """He-normal weights for relu layers, Glorot-uniform for the output layer."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    if min(dims) < 1:
        raise ValueError(f"layer dimensions must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for q, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if q < len(dims) - 2:
            A = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        else:
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            A = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        weights.append(A)
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _check_input(m: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, float)
    if X.shape[-1] != m.dims[0]:
        raise ValueError(f"expected {m.dims[0]} input features, got {X.shape[-1]}")
    return X


def _forward_cache(m: MlpModel, Xn):
    pre, act = [], [Xn]
    h = Xn
    last = len(m.weights) - 1
    for q, (A, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ A.T + b
        pre.append(z)
        h = z if q == last else np.maximum(z, 0.0)
        act.append(h)
    return pre, act


def forward(m: MlpModel, X, denormalize: bool = False) -> np.ndarray:
    """Network output for raw features ``X`` (one row or a batch)."""
    X = _check_input(m, X)
    _, act = _forward_cache(m, m.normalize_x(np.atleast_2d(X)))
    out = m.denormalize_y(act[-1]) if denormalize else act[-1]
    return out[0] if X.ndim == 1 else out


def compute_gradients(m: MlpModel, X, Y) -> tuple[float, list]:
    """MSE in normalized label space and its gradient, ordered like ``m.params()``."""
    X = _check_input(m, np.atleast_2d(X))
    Yn = m.normalize_y(np.atleast_2d(Y))
    if len(X) == 0:
        raise ValueError("empty batch")
    if Yn.shape != (len(X), m.dims[-1]):
        raise ValueError(f"labels must have shape ({len(X)}, {m.dims[-1]})")
    pre, act = _forward_cache(m, m.normalize_x(X))
    err = act[-1] - Yn
    loss = float(np.mean(err**2))
    delta = 2.0 * err / err.size
    grads = [None] * (2 * len(m.weights))
    for q in range(len(m.weights) - 1, -1, -1):
        grads[2 * q] = delta.T @ act[q]
        grads[2 * q + 1] = delta.sum(axis=0)
        if q:
            delta = (delta @ m.weights[q]) * (pre[q - 1] > 0)
    return loss, grads


def mse(m: MlpModel, X, Y) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean((forward(m, X) - m.normalize_y(Y)) ** 2))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def config(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state: AdamState, model: MlpModel, grads: list) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    params = model.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the model")
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]
    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, mk, vk in zip(params, grads, m_prev, v_prev):
        mk = state.beta1 * mk + (1.0 - state.beta1) * g
        vk = state.beta2 * vk + (1.0 - state.beta2) * g * g
        new_p.append(p - state.lr * (mk / c1) / (np.sqrt(vk / c2) + state.eps))
        new_m.append(mk)
        new_v.append(vk)
    return model.with_params(new_p), replace(state, t=t, m=new_m, v=new_v)


def model_to_dict(m: MlpModel, adam: dict | None = None, extra: dict | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(m.dims),
        "activations": {"hidden": m.hidden_activation, "output": m.output_activation},
        "weights": [A.ravel(order="C").tolist() for A in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "normalization": {
            "x_lo": m.x_lo.tolist(), "x_hi": m.x_hi.tolist(),
            "y_mean": m.y_mean.tolist(), "y_std": m.y_std.tolist(),
        },
        "adam": adam or AdamState().config(),
    }
    if extra:
        doc.update(extra)
    return doc


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
    dims = [int(d) for d in doc["layer_dims"]]
    weights = [np.array(w, float).reshape(o, i) for w, i, o in
               zip(doc["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, float) for b in doc["biases"]]
    norm = doc["normalization"]
    act = doc.get("activations", {})
    if act.get("hidden", "relu") != "relu" or act.get("output", "linear") != "linear":
        raise ValueError("only relu hidden / linear output activations are supported")
    return MlpModel(dims, weights, biases,
                    np.array(norm["x_lo"], float), np.array(norm["x_hi"], float),
                    np.array(norm["y_mean"], float), np.array(norm["y_std"], float))


def dumps_model(m: MlpModel, **kw) -> str:
    return json.dumps(model_to_dict(m, **kw), indent=1)
