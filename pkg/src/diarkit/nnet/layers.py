"""Layers with hand-written backward passes.

Every layer works on float64 arrays. Frame-level layers take ``(B, T, D)``
(a ``(T, D)`` input is treated as a single sequence); segment-level layers
act on the last axis of whatever they receive.

``forward(x, training)`` returns ``(y, cache)`` and ``backward(cache, dy)``
returns ``(dx, grads)`` where ``grads`` mirrors ``params``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ContractError


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Layer:
    kind = "layer"

    def __init__(self, name: str = ""):
        self.name = name or self.kind
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def _check_dim(self, x, dim):
        if x.shape[-1] != dim:
            raise ContractError(f"{self.name}: expected input width {dim}, got {x.shape[-1]}")

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k not in ("kind",))
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, name: str = ""):
        super().__init__(name)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {"W": np.zeros((in_dim, out_dim)), "b": np.zeros(out_dim)}

    def init_params(self, rng):
        self.params["W"] = glorot(rng, self.in_dim, self.out_dim, (self.in_dim, self.out_dim))
        self.params["b"] = np.zeros(self.out_dim)

    def config(self):
        return {**super().config(), "in_dim": self.in_dim, "out_dim": self.out_dim}

    def forward(self, x, training=False):
        self._check_dim(x, self.in_dim)
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, x, dy):
        x2 = x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
        return dy @ self.params["W"].T, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dy):
        return dy * mask, {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        y = expit(x)
        return y, y

    def backward(self, y, dy):
        return dy * y * (1.0 - y), {}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, y, dy):
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}


class BatchNorm(Layer):
    """Normalization over every axis but the last; no learned affine.

    Training uses batch statistics and updates running estimates with
    `momentum`; inference uses the running estimates only.
    """

    kind = "batchnorm"

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1, name: str = ""):
        super().__init__(name)
        self.dim, self.eps, self.momentum = dim, eps, momentum
        self.state = {"running_mean": np.zeros(dim), "running_var": np.ones(dim)}

    def config(self):
        return {**super().config(), "dim": self.dim, "eps": self.eps, "momentum": self.momentum}

    def forward(self, x, training=False):
        self._check_dim(x, self.dim)
        if not training:
            inv = 1.0 / np.sqrt(self.state["running_var"] + self.eps)
            return (x - self.state["running_mean"]) * inv, ("eval", inv)
        x2 = x.reshape(-1, self.dim)
        mean = x2.mean(axis=0)
        var = x2.var(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        m = self.momentum
        self.state["running_mean"] = (1 - m) * self.state["running_mean"] + m * mean
        self.state["running_var"] = (1 - m) * self.state["running_var"] + m * var
        return xhat, ("train", inv, xhat)

    def backward(self, cache, dy):
        if cache[0] == "eval":
            return dy * cache[1], {}
        _, inv, xhat = cache
        d2 = dy.reshape(-1, self.dim)
        xh2 = xhat.reshape(-1, self.dim)
        n = d2.shape[0]
        dx = inv / n * (n * d2 - d2.sum(axis=0) - xh2 * (d2 * xh2).sum(axis=0))
        return dx.reshape(dy.shape), {}


def _as_batch(x):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ContractError(f"expected (T, D) or (B, T, D) input, got shape {x.shape}")


class TDNN(Layer):
    """Frame splicing at fixed offsets followed by an affine map.

    Context frames beyond the sequence are clamped to the first/last frame,
    so the output has the same number of frames as the input.
    """

    kind = "tdnn"

    def __init__(self, in_dim: int, out_dim: int, offsets=(0,), name: str = ""):
        super().__init__(name)
        offsets = tuple(int(o) for o in offsets)
        if list(offsets) != sorted(offsets) or len(set(offsets)) != len(offsets):
            raise ContractError(f"{name}: offsets must be strictly ascending, got {offsets}")
        self.in_dim, self.out_dim, self.offsets = in_dim, out_dim, offsets
        self.splice_dim = in_dim * len(offsets)
        self.params = {"W": np.zeros((self.splice_dim, out_dim)), "b": np.zeros(out_dim)}

    def init_params(self, rng):
        self.params["W"] = glorot(rng, self.splice_dim, self.out_dim, (self.splice_dim, self.out_dim))
        self.params["b"] = np.zeros(self.out_dim)

    def config(self):
        return {**super().config(), "in_dim": self.in_dim, "out_dim": self.out_dim, "offsets": list(self.offsets)}

    def splice(self, x):
        T = x.shape[1]
        t = np.arange(T)
        return np.concatenate([x[:, np.clip(t + o, 0, T - 1), :] for o in self.offsets], axis=-1)

    def forward(self, x, training=False):
        self._check_dim(x, self.in_dim)
        xb, squeeze = _as_batch(x)
        spliced = self.splice(xb)
        y = spliced @ self.params["W"] + self.params["b"]
        return (y[0] if squeeze else y), (spliced, squeeze)

    def backward(self, cache, dy):
        spliced, squeeze = cache
        dyb = dy[None] if squeeze else dy
        grads = {
            "W": spliced.reshape(-1, self.splice_dim).T @ dyb.reshape(-1, self.out_dim),
            "b": dyb.reshape(-1, self.out_dim).sum(axis=0),
        }
        dsp = dyb @ self.params["W"].T
        B, T, _ = dsp.shape
        D = self.in_dim
        dx = np.zeros((B, T, D))
        for k, o in enumerate(self.offsets):
            part = dsp[:, :, k * D : (k + 1) * D]
            # source frame t feeds output frame t - o; clamped edges pile onto frames 0 and T-1
            lo, hi = max(0, -o), min(T, T - o)
            if lo < hi:
                dx[:, lo + o : hi + o] += part[:, lo:hi]
            if lo > 0:
                dx[:, 0] += part[:, : min(lo, T)].sum(axis=1)
            if hi < T:
                dx[:, T - 1] += part[:, max(hi, 0) :].sum(axis=1)
        return (dx[0] if squeeze else dx), grads


class StatsPool(Layer):
    """Per-dimension mean and standard deviation over time: (B, T, D) -> (B, 2D)."""

    kind = "stats_pool"

    def __init__(self, in_dim: int, eps: float = 1e-10, name: str = ""):
        super().__init__(name)
        self.in_dim, self.eps = in_dim, eps
        self.out_dim = 2 * in_dim

    def config(self):
        return {**super().config(), "in_dim": self.in_dim, "eps": self.eps}

    def forward(self, x, training=False):
        self._check_dim(x, self.in_dim)
        xb, _ = _as_batch(x)
        mean = xb.mean(axis=1)
        centered = xb - mean[:, None, :]
        std = np.sqrt((centered**2).mean(axis=1) + self.eps)
        return np.concatenate([mean, std], axis=-1), (centered, std, x.ndim == 2)

    def backward(self, cache, dy):
        centered, std, squeeze = cache
        T = centered.shape[1]
        D = self.in_dim
        dmean, dstd = dy[:, :D], dy[:, D:]
        dx = dmean[:, None, :] / T + centered * (dstd / (T * std))[:, None, :]
        return (dx[0] if squeeze else dx), {}


class LSTM(Layer):
    """Single-direction LSTM over (B, T, D); gates ordered i, f, g, o.

    ``direction='backward'`` runs over the reversed sequence and returns
    outputs in the original time order; ``'bidirectional'`` concatenates
    forward and backward hidden states (output width 2 * hidden).
    Every call starts from zero state.
    """

    kind = "lstm"

    def __init__(self, in_dim: int, hidden: int, direction: str = "forward", forget_bias: float = 1.0, name: str = ""):
        super().__init__(name)
        if direction not in ("forward", "backward", "bidirectional"):
            raise ContractError(f"unknown LSTM direction {direction!r}")
        self.in_dim, self.hidden, self.direction, self.forget_bias = in_dim, hidden, direction, forget_bias
        self.dirs = ("f", "b") if direction == "bidirectional" else (direction[0],)
        self.out_dim = hidden * len(self.dirs)
        H = hidden
        for d in self.dirs:
            self.params[f"Wx_{d}"] = np.zeros((in_dim, 4 * H))
            self.params[f"Wh_{d}"] = np.zeros((H, 4 * H))
            self.params[f"b_{d}"] = np.zeros(4 * H)

    def init_params(self, rng):
        H = self.hidden
        for d in self.dirs:
            self.params[f"Wx_{d}"] = glorot(rng, self.in_dim, H, (self.in_dim, 4 * H))
            self.params[f"Wh_{d}"] = glorot(rng, H, H, (H, 4 * H))
            b = np.zeros(4 * H)
            b[H : 2 * H] = self.forget_bias
            self.params[f"b_{d}"] = b

    def config(self):
        return {
            **super().config(),
            "in_dim": self.in_dim,
            "hidden": self.hidden,
            "direction": self.direction,
            "forget_bias": self.forget_bias,
        }

    def _run(self, x, d):
        """Forward recurrence over time-major input x (T, B, D)."""
        Wx, Wh, b = self.params[f"Wx_{d}"], self.params[f"Wh_{d}"], self.params[f"b_{d}"]
        T, B, _ = x.shape
        H = self.hidden
        zx = x @ Wx + b
        gates = np.empty((T, B, 4 * H))
        c = np.empty((T + 1, B, H))
        h = np.empty((T + 1, B, H))
        tc = np.empty((T, B, H))
        c[0] = 0.0
        h[0] = 0.0
        for t in range(T):
            z = zx[t] + h[t] @ Wh
            a = gates[t]
            a[:, : 2 * H] = expit(z[:, : 2 * H])
            a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            a[:, 3 * H :] = expit(z[:, 3 * H :])
            c[t + 1] = a[:, H : 2 * H] * c[t] + a[:, :H] * a[:, 2 * H : 3 * H]
            tc[t] = np.tanh(c[t + 1])
            h[t + 1] = a[:, 3 * H :] * tc[t]
        return h[1:], (x, gates, c, h, tc)

    def _back(self, cache, dh_seq, d):
        x, gates, c, h, tc = cache
        Wx, Wh = self.params[f"Wx_{d}"], self.params[f"Wh_{d}"]
        T, B, _ = x.shape
        H = self.hidden
        dz = np.empty((T, B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = gates[t]
            i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            dh = dh_seq[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc[t] ** 2)
            dzt = dz[t]
            dzt[:, :H] = dc * g * i * (1.0 - i)
            dzt[:, H : 2 * H] = dc * c[t] * f * (1.0 - f)
            dzt[:, 2 * H : 3 * H] = dc * i * (1.0 - g**2)
            dzt[:, 3 * H :] = dh * tc[t] * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dzt @ Wh.T
        dz2 = dz.reshape(-1, 4 * H)
        grads = {
            f"Wx_{d}": x.reshape(-1, self.in_dim).T @ dz2,
            f"Wh_{d}": h[:-1].reshape(-1, H).T @ dz2,
            f"b_{d}": dz2.sum(axis=0),
        }
        return dz @ Wx.T, grads

    def forward(self, x, training=False):
        self._check_dim(x, self.in_dim)
        xb, squeeze = _as_batch(x)
        xt = np.ascontiguousarray(xb.transpose(1, 0, 2))
        outs, caches = [], []
        for d in self.dirs:
            inp = xt[::-1] if d == "b" else xt
            hs, cache = self._run(inp, d)
            outs.append(hs[::-1] if d == "b" else hs)
            caches.append(cache)
        y = np.concatenate(outs, axis=-1).transpose(1, 0, 2)
        return (y[0] if squeeze else y), (caches, squeeze)

    def backward(self, cache, dy):
        caches, squeeze = cache
        dyb = dy[None] if squeeze else dy
        dyt = dyb.transpose(1, 0, 2)
        H = self.hidden
        dx = None
        grads = {}
        for k, (d, c) in enumerate(zip(self.dirs, caches)):
            dh = dyt[:, :, k * H : (k + 1) * H]
            if d == "b":
                dh = dh[::-1]
            dxt, g = self._back(c, dh, d)
            if d == "b":
                dxt = dxt[::-1]
            dx = dxt if dx is None else dx + dxt
            grads.update(g)
        dx = dx.transpose(1, 0, 2)
        return (dx[0] if squeeze else dx), grads


LAYER_KINDS = {
    cls.kind: cls for cls in (Dense, ReLU, Sigmoid, Softmax, BatchNorm, TDNN, StatsPool, LSTM)
}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown layer kind {kind!r}") from None
    return cls(**cfg)
