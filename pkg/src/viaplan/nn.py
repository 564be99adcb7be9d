"""Small feedforward nets with hand-written gradients.

Every learned component in this package (the step proposal model, the
viability filters, the toy models) runs on the same substrate: plain
numpy MLPs with tanh hidden layers and a linear output, analytic
backprop, and Adam. Checkpoints store the float64 training parameters
verbatim, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"VPNN"
CHECKPOINT_VERSION = 2


def glorot_uniform(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output.

    Weights are stored as (fan_out, fan_in) matrices so a layer computes
    ``a @ W.T + b``. Inputs may be single vectors ``(d,)`` or batches
    ``(B, d)``; outputs match.
    """

    def __init__(self, dims, rng: np.random.Generator | None = None, ws=None, bs=None):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if ws is None:
            if rng is None:
                raise ValueError("pass an rng to initialize a fresh net")
            self.ws = [
                glorot_uniform(self.dims[i + 1], self.dims[i], rng)
                for i in range(len(self.dims) - 1)
            ]
            self.bs = [np.zeros(self.dims[i + 1]) for i in range(len(self.dims) - 1)]
        else:
            self.ws = [np.array(w, dtype=np.float64) for w in ws]
            self.bs = [np.array(b, dtype=np.float64) for b in bs]
            got = tuple([self.ws[0].shape[1]] + [w.shape[0] for w in self.ws])
            if got != self.dims:
                raise ValueError(f"weight shapes {got} do not match dims {self.dims}")

    @property
    def n_layers(self) -> int:
        return len(self.ws)

    def params(self):
        return self.ws + self.bs

    def copy(self) -> "Mlp":
        return Mlp(self.dims, ws=self.ws, bs=self.bs)

    def forward(self, x):
        y, _ = self.forward_full(x)
        return y

    def forward_full(self, x):
        """Forward pass that also returns the activation cache for backward."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.dims[0]:
            raise ValueError(f"input dim {a.shape[1]}, net expects {self.dims[0]}")
        acts = [a]
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.ws, self.bs)):
            z = a @ w.T + b
            a = z if l == last else np.tanh(z)
            acts.append(a)
        out = acts[-1][0] if squeeze else acts[-1]
        return out, (acts, squeeze)

    def backward_from(self, cache, upstream):
        """Gradients of sum(upstream * output) w.r.t. params and input.

        Returns ((weight grads, bias grads), input grad). Parameter grads
        are summed over the batch; the input grad has the input's shape.
        """
        acts, squeeze = cache
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        gws = [None] * self.n_layers
        gbs = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            gws[l] = g.T @ acts[l]
            gbs[l] = g.sum(axis=0)
            g = g @ self.ws[l]
            if l > 0:
                # acts[l] is a tanh output for every hidden layer
                g = g * (1.0 - acts[l] ** 2)
        gx = g[0] if squeeze else g
        return (gws, gbs), gx

    def backward(self, x, upstream):
        _, cache = self.forward_full(x)
        return self.backward_from(cache, upstream)


class Adam:
    """Adam with bias correction. Steps every weight and bias of one Mlp."""

    def __init__(self, net: Mlp, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, net: Mlp, grads) -> None:
        gws, gbs = grads
        gs = list(gws) + list(gbs)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.params(), gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Ema:
    """Exponential moving average of one Mlp's parameters.

    ``update`` folds the net's current parameters into the shadow copy;
    ``write_to`` overwrites the net with the averaged weights.
    """

    def __init__(self, net: Mlp, decay: float = 0.999):
        self.decay = decay
        self.shadow = [p.copy() for p in net.params()]

    def update(self, net: Mlp) -> None:
        for s, p in zip(self.shadow, net.params()):
            s *= self.decay
            s += (1.0 - self.decay) * p

    def write_to(self, net: Mlp) -> None:
        for s, p in zip(self.shadow, net.params()):
            p[...] = s


def time_embed(i, dim: int, max_wavelength: float = 100.0) -> np.ndarray:
    """Sinusoidal embedding of a denoising step index.

    ``dim`` must be even and >= 4. Frequencies fall geometrically from 1
    down to 1/max_wavelength, so the slowest pair stays monotone (and the
    embedding injective) for indices well past any schedule length used
    here. ``i`` may be a scalar or an array; one embedding row per index.
    """
    if dim < 4 or dim % 2:
        raise ValueError("embedding dim must be even and >= 4")
    half = dim // 2
    k = np.arange(half, dtype=np.float64)
    freqs = max_wavelength ** (-k / (half - 1))
    ang = np.asarray(i, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def save_mlp(path, net: Mlp) -> None:
    """Binary checkpoint: magic, version, dims, then per layer W then b.

    All integers little-endian u32, all parameters little-endian float64
    in row-major order.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.dims)))
        f.write(struct.pack(f"<{len(net.dims)}I", *net.dims))
        for w, b in zip(net.ws, net.bs):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise ValueError(f"{path}: truncated checkpoint header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, not a VPNN checkpoint")
    version, ndims = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if ndims < 2 or len(data) < 12 + 4 * ndims:
        raise ValueError(f"{path}: corrupt dimension table")
    dims = struct.unpack_from(f"<{ndims}I", data, 12)
    off = 12 + 4 * ndims
    n_params = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(ndims - 1))
    if len(data) != off + 8 * n_params:
        raise ValueError(
            f"{path}: payload is {len(data) - off} bytes, expected {8 * n_params}"
        )
    ws, bs = [], []
    for i in range(ndims - 1):
        nw = dims[i + 1] * dims[i]
        w = np.frombuffer(data, dtype="<f8", count=nw, offset=off)
        off += 8 * nw
        b = np.frombuffer(data, dtype="<f8", count=dims[i + 1], offset=off)
        off += 8 * dims[i + 1]
        ws.append(w.reshape(dims[i + 1], dims[i]))
        bs.append(b)
    return Mlp(dims, ws=ws, bs=bs)


def save_sidecar(path, meta: dict) -> None:
    """Plain-text JSON sidecar next to a binary checkpoint."""
    with open(path, "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True, default=_jsonable)
        f.write("\n")


def load_sidecar(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")
