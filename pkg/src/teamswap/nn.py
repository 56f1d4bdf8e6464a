"""Dense networks in float64 numpy with explicit backprop, Adam and gradient checks."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("linear", "softmax", "relu", "tanh")

CHECKPOINT_MAGIC = b"TSWPCKPT"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from before the last parameter update."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return softmax(z)
    return z


def _act_backward(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "softmax":
        return a * (g - (g * a).sum(axis=-1, keepdims=True))
    return g


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    output: np.ndarray
    version: int
    net_id: int
    squeeze: bool

    @property
    def logits(self) -> np.ndarray:
        z = self.pre[-1]
        return z[0] if self.squeeze else z


class DenseNet:
    """Multilayer perceptron; layer ``k`` maps ``dims[k]`` to ``dims[k+1]``.

    Weights are stored as ``(out, in)`` matrices.  Inputs may be a single vector or a
    batch of row vectors.
    """

    def __init__(self, layer_dims: Sequence[int], activation="relu", output_activation="linear", rng=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"invalid layer_dims {layer_dims}")
        if activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"activation must be one of {HIDDEN_ACTIVATIONS}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        self.layer_dims = layer_dims
        self.activation = activation
        self.output_activation = output_activation
        self.version = 0
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.weights, self.biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            act = activation if k < len(layer_dims) - 2 else output_activation
            if act == "relu":
                limit = np.sqrt(6.0 / fan_in)  # He-uniform
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))  # Xavier-uniform
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def param_names(self) -> list[str]:
        out = []
        for k in range(self.n_layers):
            out += [f"layer{k}.weight", f"layer{k}.bias"]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _layer_act(self, k: int) -> str:
        return self.activation if k < self.n_layers - 1 else self.output_activation

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input has shape {x.shape[-1:]} but the network expects {self.layer_dims[0]} features")
        inputs, pre = [], []
        a = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w.T + b
            pre.append(z)
            a = _act(self._layer_act(k), z)
        out = a[0] if squeeze else a
        return out, ForwardCache(inputs, pre, a, self.version, id(self), squeeze)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad, wrt_logits: bool = False, input_grad: bool = False):
        """Gradients (ordered like ``params``) given dLoss/dOutput.

        With ``wrt_logits`` the incoming gradient is taken with respect to the last
        layer's pre-activation, skipping the output activation. With ``input_grad``
        the pair ``(grads, dLoss/dInput)`` is returned instead, for chaining a head
        onto a trunk.
        """
        if cache.net_id != id(self) or cache.version != self.version:
            raise StaleCacheError("forward cache does not match the current parameters; rerun forward")
        g = np.asarray(output_grad, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.output.shape:
            raise ValueError(f"output_grad shape {g.shape} does not match output shape {cache.output.shape}")
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)
        for k in range(self.n_layers - 1, -1, -1):
            a = cache.output if k == self.n_layers - 1 else cache.inputs[k + 1]
            if not (k == self.n_layers - 1 and wrt_logits):
                g = _act_backward(self._layer_act(k), cache.pre[k], a, g)
            grads[2 * k] = g.T @ cache.inputs[k]
            grads[2 * k + 1] = g.sum(axis=0)
            if k or input_grad:
                g = g @ self.weights[k]
        if not input_grad:
            return grads
        return grads, (g[0] if cache.squeeze else g)

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.layer_dims = list(self.layer_dims)
        other.activation = self.activation
        other.output_activation = self.output_activation
        other.version = 0
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def load_state_from(self, other: "DenseNet") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src
        self.version += 1

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {values.size}")
        i = 0
        for p in self.params:
            p[...] = values[i : i + p.size].reshape(p.shape)
            i += p.size
        self.version += 1

    def describe(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "output_activation": self.output_activation,
        }


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, learning_rate=1e-4) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, learning_rate)


def adam_step(params, grads, state: AdamState, names: Sequence[str] | None = None) -> None:
    """In-place bias-corrected Adam update of ``params``; increments ``state.step_count``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and Adam moments differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"parameter {i} (layer {i // 2})"
            raise FloatingPointError(f"non-finite gradient in {label}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    root_c2 = np.sqrt(1.0 - state.beta2**t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        scratch = np.square(g)
        scratch *= 1.0 - state.beta2
        v += scratch
        # scratch <- sqrt(v / c2) + eps, then the bias-corrected step
        np.sqrt(v, out=scratch)
        scratch /= root_c2
        scratch += state.epsilon
        np.divide(m, scratch, out=scratch)
        scratch *= state.learning_rate / c1
        p -= scratch


class Adam:
    """Adam over the parameters of one or more networks."""

    def __init__(self, nets: Sequence[DenseNet], learning_rate: float = 1e-4):
        self.nets = list(nets)
        self.state = AdamState.zeros_like(self.params, learning_rate)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets for p in net.params]

    @property
    def names(self) -> list[str]:
        return [f"net{i}.{n}" for i, net in enumerate(self.nets) for n in net.param_names]

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.state, self.names)
        for net in self.nets:
            net.version += 1


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    n_probes: int | None = 100,
    rng=None,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` must read the live ``params`` arrays, which are perturbed in place and
    restored. With ``n_probes=None`` every scalar parameter is checked.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    flat_ids = np.arange(total) if n_probes is None or n_probes >= total else rng.choice(total, n_probes, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_at = 0.0, ()
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        idx = np.unravel_index(int(fid - offsets[k]), params[k].shape)
        p = params[k]
        orig = p[idx]
        p[idx] = orig + h
        up = loss_fn()
        p[idx] = orig - h
        down = loss_fn()
        p[idx] = orig
        numeric = (up - down) / (2 * h)
        err = relative_error(float(grads[k][idx]), numeric)
        if err > worst:
            worst, worst_at = err, (k, tuple(int(i) for i in idx), float(grads[k][idx]), numeric)
    return GradCheckReport(worst, tolerance, len(flat_ids), worst_at)


def gradient_check(
    net: DenseNet,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    tolerance: float = 1e-4,
    n_probes: int | None = 100,
    rng=None,
    h: float = 1e-5,
    backward: Callable | None = None,
) -> GradCheckReport:
    """Check ``net.backward`` for a scalar ``loss(output) -> (value, dvalue/doutput)``.

    ``backward`` can replace ``net.backward`` (used to plant faults in tests).
    """
    out, cache = net.forward(x)
    _, g_out = loss(out)
    grads = (backward or net.backward)(cache, g_out)
    return finite_difference_check(lambda: loss(net.forward(x)[0])[0], net.params, grads, n_probes, rng, h, tolerance)


def save_checkpoint(path, nets: dict[str, DenseNet], adam: AdamState | None = None, meta: dict | None = None) -> None:
    """Write networks (and optionally Adam moments) to a versioned binary file.

    Layout: 8-byte magic ``TSWPCKPT``, uint32 format version, uint64 header length,
    UTF-8 JSON header, then little-endian float64 payload.  The header records each
    network's dims, activations and payload offset/count, the Adam scalars and the
    caller's ``meta`` dictionary.
    """
    header: dict = {"nets": {}, "meta": meta or {}}
    chunks, offset = [], 0
    for name, net in nets.items():
        flat = net.flat()
        header["nets"][name] = {**net.describe(), "offset": offset, "count": int(flat.size)}
        chunks.append(flat)
        offset += flat.size
    if adam is not None:
        m = np.concatenate([a.ravel() for a in adam.first_moment])
        v = np.concatenate([a.ravel() for a in adam.second_moment])
        header["adam"] = {
            "step_count": adam.step_count,
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "shapes": [list(a.shape) for a in adam.first_moment],
            "offset": offset,
            "count": int(m.size),
        }
        chunks += [m, v]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate(chunks).astype("<f8").tobytes() if chunks else b""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict[str, DenseNet], AdamState | None, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    payload = np.frombuffer(raw[20 + hlen :], dtype="<f8").astype(np.float64)
    nets = {}
    for name, d in header["nets"].items():
        net = DenseNet(d["layer_dims"], d["activation"], d["output_activation"], rng=0)
        net.set_flat(payload[d["offset"] : d["offset"] + d["count"]])
        net.version = 0
        nets[name] = net
    adam = None
    if "adam" in header:
        a = header["adam"]
        m_flat = payload[a["offset"] : a["offset"] + a["count"]]
        v_flat = payload[a["offset"] + a["count"] : a["offset"] + 2 * a["count"]]
        ms, vs, i = [], [], 0
        for shape in a["shapes"]:
            n = int(np.prod(shape))
            ms.append(m_flat[i : i + n].reshape(shape).copy())
            vs.append(v_flat[i : i + n].reshape(shape).copy())
            i += n
        adam = AdamState(ms, vs, a["step_count"], a["learning_rate"], a["beta1"], a["beta2"], a["epsilon"])
    return nets, adam, header["meta"]
