"""Dense ReLU networks with hand-written backprop, Adam and gradient clipping."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    """Feed-forward net: affine + ReLU on hidden layers, optional tanh on the output.

    ``weights[i]`` has shape ``(sizes[i], sizes[i + 1])``; inputs are rows.
    """

    sizes: tuple
    weights: list
    biases: list
    out_tanh: bool = False

    @property
    def params(self) -> list:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...); mutated in place."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "Mlp":
        return Mlp(tuple(self.sizes), [w.astype(dtype) for w in self.weights],
                   [b.astype(dtype) for b in self.biases], self.out_tanh)

    def copy(self) -> "Mlp":
        return Mlp(tuple(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.out_tanh)

    def __call__(self, x):
        return forward(self, x)[0]

    def act(self, x) -> np.ndarray:
        """Single-vector inference through the (possibly compiled) kernel."""
        return kernels.dense_forward(x, self.weights, self.biases, self.out_tanh)


@dataclass
class Cache:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    out: np.ndarray


@dataclass
class Grads:
    params: list  # same order as Mlp.params
    dx: np.ndarray  # gradient w.r.t. the network input


def init_xavier(sizes, rng, out_tanh: bool = False, dtype=np.float64) -> Mlp:
    """Glorot-uniform weights on ``+-sqrt(6 / (fan_in + fan_out))``, zero biases.

    Draws are made in float64 and then cast, so the dtype does not change the
    random stream.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return Mlp(sizes, weights, biases, out_tanh)


def forward(net: Mlp, x):
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {net.sizes[0]}")
    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    if net.out_tanh:
        h = np.tanh(h)
    return h, Cache(inputs, pre, h)


def backward(net: Mlp, cache: Cache, dy, param_grads: bool = True) -> Grads:
    """Gradients of a scalar loss given ``dy = dloss/doutput`` (batch rows are summed).

    With ``param_grads=False`` only the input gradient is computed and
    ``Grads.params`` is empty.
    """
    g = np.asarray(dy, dtype=net.dtype)
    if net.out_tanh:
        g = g * (1.0 - cache.out ** 2)
    grads = [None] * (2 * len(net.weights)) if param_grads else []
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            g = g * (cache.pre[i] > 0.0)
        h = cache.inputs[i]
        if not param_grads:
            pass
        elif h.ndim == 1:
            grads[2 * i] = np.outer(h, g)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return Grads(grads, g)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads, max_norm: float):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``; returns (grads, norm)."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- checkpoints -----------------------------------------------------------

def _net_meta(net: Mlp) -> dict:
    return {"sizes": list(net.sizes), "out_tanh": bool(net.out_tanh)}


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, extra: dict | None = None) -> None:
    """Write named networks (and optional Adam states) to one ``.npz`` file.

    Arrays are stored uncompressed with a JSON header, so identical
    parameters produce identical bytes.
    """
    arrays = {}
    meta = {"version": CHECKPOINT_VERSION, "nets": {}, "optimizers": {}, "extra": extra or {}}
    for name, net in nets.items():
        meta["nets"][name] = _net_meta(net)
        for k, p in enumerate(net.params):
            arrays[f"{name}/{k}"] = p
    for name, opt in (optimizers or {}).items():
        meta["optimizers"][name] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                                    "eps": opt.eps, "step": opt.step, "n": len(opt.m)}
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt:{name}/m{k}"] = m
            arrays[f"opt:{name}/v{k}"] = v
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **dict(sorted(arrays.items())))
    data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: returns ``(nets, optimizers, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        nets = {}
        for name, info in meta["nets"].items():
            sizes = tuple(info["sizes"])
            n_layers = len(sizes) - 1
            ws = [data[f"{name}/{2 * i}"].copy() for i in range(n_layers)]
            bs = [data[f"{name}/{2 * i + 1}"].copy() for i in range(n_layers)]
            nets[name] = Mlp(sizes, ws, bs, info["out_tanh"])
        opts = {}
        for name, info in meta["optimizers"].items():
            opts[name] = AdamState(
                lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"], eps=info["eps"], step=info["step"],
                m=[data[f"opt:{name}/m{k}"].copy() for k in range(info["n"])],
                v=[data[f"opt:{name}/v{k}"].copy() for k in range(info["n"])],
            )
    return nets, opts, meta["extra"]
