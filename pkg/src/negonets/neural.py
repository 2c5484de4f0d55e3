"""Small numpy MLP engine: forward/backward, Adam and early stopping.

Everything is float64. Hidden layers use softplus, the output layer a
sigmoid, so every network maps into (0, 1).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

# outputs are clipped into the open interval; expit saturates to 1.0 at z ~ 37
_OUT_EPS = 1e-15

CHECKPOINT_MAGIC = "negonets-mlp"
CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def softplus(z):
    return np.logaddexp(0.0, z)


# "identity" is only used to hand-build analytic networks (tests, oracles)
_ACTIVATIONS = {"softplus": softplus, "sigmoid": expit, "identity": lambda z: z}


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: list[np.ndarray]) -> "Mlp":
        if len(params) != 2 * self.depth:
            raise ShapeError(f"expected {2 * self.depth} parameter arrays, got {len(params)}")
        for old, new in zip(self.params(), params):
            if old.shape != new.shape:
                raise ShapeError(f"parameter shape {new.shape} != {old.shape}")
        return Mlp(
            weights=[np.array(p, dtype=np.float64) for p in params[0::2]],
            biases=[np.array(p, dtype=np.float64) for p in params[1::2]],
            activations=list(self.activations),
        )

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def __call__(self, inputs) -> np.ndarray:
        return forward(self, inputs)[0]


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


def mlp_init(input_dim: int, hidden_widths, seed: int) -> Mlp:
    """He-style init: N(0, 2/fan_in) weights, zero biases, scalar sigmoid head."""
    hidden_widths = list(hidden_widths)
    if input_dim < 1:
        raise ConfigurationError("input_dim must be positive")
    if not hidden_widths:
        raise ConfigurationError("need at least one hidden layer")
    if any(w < 1 for w in hidden_widths):
        raise ConfigurationError(f"hidden widths must be >= 1, got {hidden_widths}")
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_widths, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    acts = ["softplus"] * len(hidden_widths) + ["sigmoid"]
    return Mlp(weights, biases, acts)


def _as_batch(net: Mlp, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {net.input_dim}), got {np.shape(inputs)}")
    return x


def forward(net: Mlp, inputs) -> tuple[np.ndarray, ForwardTrace]:
    x = _as_batch(net, inputs)
    h = x
    pre, post = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w + b
        h = _ACTIVATIONS[act](z)
        pre.append(z)
        post.append(h)
    out = np.clip(h[:, 0], _OUT_EPS, 1.0 - _OUT_EPS)
    return out, ForwardTrace(x, pre, post)


def backward(net: Mlp, trace: ForwardTrace, output_grad) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients of ``sum(output_grad * output)``.

    Returns parameter gradients in the order of ``Mlp.params()`` and the
    gradient with respect to the inputs.
    """
    if len(trace.pre) != net.depth or any(
        z.shape[1] != w.shape[1] for z, w in zip(trace.pre, net.weights)
    ):
        raise ShapeError("trace does not belong to this network")
    if trace.inputs.shape[1] != net.input_dim:
        raise ShapeError("trace input width does not match network")
    g = np.asarray(output_grad, dtype=np.float64).reshape(-1, 1)
    if g.shape[0] != trace.inputs.shape[0]:
        raise ShapeError(f"output_grad has {g.shape[0]} rows, batch has {trace.inputs.shape[0]}")

    grads: list[np.ndarray] = [None] * (2 * net.depth)  # type: ignore[list-item]
    for i in reversed(range(net.depth)):
        z, h = trace.pre[i], trace.post[i]
        act = net.activations[i]
        if act == "sigmoid":
            dz = g * h * (1.0 - h)
        elif act == "softplus":
            dz = g * expit(z)
        else:
            dz = g
        h_in = trace.inputs if i == 0 else trace.post[i - 1]
        grads[2 * i] = h_in.T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ net.weights[i].T
    return grads, g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state: AdamState, params, grads, maximize: bool = False):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    ``maximize=True`` performs gradient ascent.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient (param shape {p.shape}) at Adam step {state.step + 1}")

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    sign = -1.0 if maximize else 1.0
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = sign * g
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, state.lr, b1, b2, state.eps, t)
    return new_params, new_state


@dataclass
class EarlyStopState:
    patience: int = 10
    tol: float = 1e-6
    best_loss: float = float("inf")
    since_improvement: int = 0
    best_params: object = field(default=None, repr=False)


def early_stop_update(state: EarlyStopState, val_loss: float, params) -> tuple[EarlyStopState, bool]:
    """Record one epoch's validation loss.

    ``params`` is snapshotted (deep-copied) whenever the loss improves by more
    than ``state.tol``. Stops once the non-improving streak exceeds patience.
    """
    if not np.isfinite(val_loss):
        raise TrainingError(f"non-finite validation loss {val_loss}")
    if val_loss < state.best_loss - state.tol:
        new = EarlyStopState(state.patience, state.tol, float(val_loss), 0, copy.deepcopy(params))
    else:
        new = EarlyStopState(
            state.patience, state.tol, state.best_loss, state.since_improvement + 1, state.best_params
        )
    return new, new.since_improvement > new.patience


# -- checkpoints --------------------------------------------------------------
#
# Text format, one token per float written with float.hex() so the round trip
# is bit-exact:
#
#   negonets-mlp 1
#   depth 4
#   layer 0 3 16 softplus
#   W <row-major hex floats>
#   b <hex floats>
#   ...


def dumps_mlp(net: Mlp) -> str:
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"depth {net.depth}"]
    for i, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
        lines.append(f"layer {i} {w.shape[0]} {w.shape[1]} {act}")
        lines.append("W " + " ".join(float(v).hex() for v in w.ravel(order="C")))
        lines.append("b " + " ".join(float(v).hex() for v in b))
    return "\n".join(lines) + "\n"


def loads_mlp(text: str) -> Mlp:
    lines = text.splitlines()
    try:
        magic, version = lines[0].split()
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"not a network checkpoint (header {lines[0]!r})")
        if int(version) != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        depth = int(lines[1].split()[1])
        weights, biases, acts = [], [], []
        for i in range(depth):
            tag, idx, n_in, n_out, act = lines[2 + 3 * i].split()
            n_in, n_out = int(n_in), int(n_out)
            w = np.array([float.fromhex(t) for t in lines[3 + 3 * i].split()[1:]])
            b = np.array([float.fromhex(t) for t in lines[4 + 3 * i].split()[1:]])
            if tag != "layer" or int(idx) != i or w.size != n_in * n_out or b.size != n_out:
                raise ConfigurationError(f"malformed layer {i} in checkpoint")
            weights.append(w.reshape(n_in, n_out))
            biases.append(b)
            if act not in _ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r} in layer {i}")
            acts.append(act)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed checkpoint: {exc}") from exc
    for a, b in zip(weights[:-1], weights[1:]):
        if a.shape[1] != b.shape[0]:
            raise ConfigurationError("layer dimensions do not chain")
    return Mlp(weights, biases, acts)


def save_mlp(net: Mlp, path) -> None:
    Path(path).write_text(dumps_mlp(net))


def load_mlp(path) -> Mlp:
    return loads_mlp(Path(path).read_text())
