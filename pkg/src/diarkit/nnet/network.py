"""Sequential networks, SGD, parameter files and the finite-difference checker."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ContractError, DivergenceError, FormatError
from .layers import Layer, ReLU, layer_from_config


class Network:
    def __init__(self, layers: list[Layer], seed: int | None = None):
        self.layers = list(layers)
        self.seed = seed
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ContractError(f"layer names must be unique: {names}")

    @classmethod
    def from_spec(cls, spec: list[dict], seed: int = 0) -> "Network":
        net = cls([layer_from_config(c) for c in spec], seed=seed)
        rng = np.random.default_rng(seed)
        for layer in net.layers:
            layer.init_params(rng)
        return net

    @property
    def spec(self) -> list[dict]:
        return [l.config() for l in self.layers]

    def digest(self) -> bytes:
        return spec_digest(self.spec)

    def index(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(name)

    def _stop(self, stop) -> int:
        if stop is None:
            return len(self.layers)
        if isinstance(stop, str):
            return self.index(stop) + 1
        return stop if stop >= 0 else len(self.layers) + stop

    def forward(self, x, training: bool = False, stop=None):
        """Run layers up to `stop` (a count, a negative count, or an inclusive layer name)."""
        caches = []
        for layer in self.layers[: self._stop(stop)]:
            x, cache = layer.forward(x, training)
            caches.append(cache)
        return x, caches

    def __call__(self, x, stop=None):
        return self.forward(x, training=False, stop=stop)[0]

    def backward(self, caches, dy):
        grads = [None] * len(caches)
        for i in range(len(caches) - 1, -1, -1):
            dy, grads[i] = self.layers[i].backward(caches[i], dy)
        grads.extend({} for _ in range(len(self.layers) - len(caches)))
        return dy, grads

    def zero_grads(self) -> list[dict]:
        return [{k: np.zeros_like(v) for k, v in l.params.items()} for l in self.layers]

    def num_params(self) -> int:
        return sum(v.size for l in self.layers for v in l.params.values())

    def copy(self) -> "Network":
        net = Network([layer_from_config(l.config()) for l in self.layers], seed=self.seed)
        for dst, src in zip(net.layers, self.layers):
            dst.params = {k: v.copy() for k, v in src.params.items()}
            dst.state = {k: v.copy() for k, v in src.state.items()}
        return net

    def shape_audit(self, in_dim: int) -> list[tuple[str, str, int, int]]:
        """(name, kind, input width, output width) for every parameterized or pooling layer."""
        rows = []
        width = in_dim
        for l in self.layers:
            if hasattr(l, "out_dim"):
                in_w = getattr(l, "splice_dim", getattr(l, "in_dim", width))
                rows.append((l.name, l.kind, in_w, l.out_dim))
                width = l.out_dim
        return rows


def spec_digest(spec: list[dict]) -> bytes:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).digest()


def add_grads(acc: list[dict], grads: list[dict]) -> None:
    for a, g in zip(acc, grads):
        for k, v in g.items():
            a[k] += v


def sgd_step(network: Network, grads: list[dict], learning_rate: float) -> Network:
    """In-place ``param -= learning_rate * grad``; refuses non-finite gradients."""
    for layer, g in zip(network.layers, grads):
        for k, v in g.items():
            if not np.all(np.isfinite(v)):
                raise DivergenceError(f"non-finite gradient for {layer.name}.{k}")
    if learning_rate == 0:
        return network
    for layer, g in zip(network.layers, grads):
        for k, v in g.items():
            layer.params[k] -= learning_rate * v
    return network


# ---------------------------------------------------------------------------
# DKNN parameter files
#
#   "DKNN" | u32 version | u32 spec_len | spec json | 32-byte sha256(spec) |
#   i64 seed | per layer, per array (params then state, sorted names):
#   u32 name_len | name | u32 ndim | u32 dims... | f64 data  (all little-endian)

_VERSION = 1


def save_network(network: Network, path) -> None:
    spec_json = json.dumps(network.spec, sort_keys=True).encode()
    out = [b"DKNN", struct.pack("<II", _VERSION, len(spec_json)), spec_json, network.digest()]
    out.append(struct.pack("<q", -1 if network.seed is None else int(network.seed)))
    for layer in network.layers:
        arrays = [("p:" + k, v) for k, v in sorted(layer.params.items())]
        arrays += [("s:" + k, v) for k, v in sorted(layer.state.items())]
        out.append(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode()
            out.append(struct.pack("<I", len(nb)) + nb)
            out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_network(path) -> Network:
    data = Path(path).read_bytes()
    if data[:4] != b"DKNN":
        raise FormatError(f"{path}: not a DKNN parameter file")
    try:
        version, n = struct.unpack_from("<II", data, 4)
        pos = 12
        spec_json = data[pos : pos + n]
        pos += n
        digest = data[pos : pos + 32]
        pos += 32
        spec = json.loads(spec_json)
        if spec_digest(spec) != digest:
            raise FormatError(f"{path}: spec digest mismatch")
        (seed,) = struct.unpack_from("<q", data, pos)
        pos += 8
        net = Network([layer_from_config(c) for c in spec], seed=None if seed < 0 else seed)
        for layer in net.layers:
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            for _ in range(count):
                (ln,) = struct.unpack_from("<I", data, pos)
                name = data[pos + 4 : pos + 4 + ln].decode()
                pos += 4 + ln
                (ndim,) = struct.unpack_from("<I", data, pos)
                shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
                pos += 4 + 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
                pos += 8 * size
                target = layer.params if name.startswith("p:") else layer.state
                target[name[2:]] = arr
    except (struct.error, ValueError) as e:
        raise FormatError(f"{path}: corrupt DKNN file ({e})") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return net


# ---------------------------------------------------------------------------
# gradient checking


def _relu_masks(network, caches):
    return [c for l, c in zip(network.layers, caches) if isinstance(l, ReLU)]


def loss_noise(network, x, loss, training=True, stop=None, coords=(), h=1e-5, points=9) -> float:
    """Rounding noise (standard deviation) of one loss evaluation.

    For each ``(layer, key, index)`` coordinate (layer -1 is the input) the
    loss is evaluated at `points` offsets spaced ``h * 1e-4`` apart, where it
    is linear far below rounding. The result is the median over coordinates
    of the residual RMS of a straight-line fit, so one coordinate sitting on a
    kink cannot inflate it.
    """
    x = np.array(x, dtype=np.float64)
    t = (np.arange(points) - points // 2) * h * 1e-4
    design = np.stack([np.ones_like(t), t], axis=1)
    rms = []
    for li, k, idx in coords:
        p = x.reshape(-1) if li < 0 else network.layers[li].params[k].reshape(-1)
        orig = p[idx]
        values = []
        for dt in t:
            p[idx] = orig + dt
            values.append(loss(network.forward(x, training, stop)[0])[0])
        p[idx] = orig
        values = np.array(values)
        resid = values - design @ np.linalg.lstsq(design, values, rcond=None)[0]
        rms.append(np.sqrt(resid @ resid / (points - 2)))
    return float(np.median(rms)) if rms else 0.0


def gradient_check(
    network: Network,
    x: np.ndarray,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    num_coords: int = 500,
    h: float = 1e-5,
    seed: int = 0,
    training: bool = True,
    stop=None,
    skip_kinks: bool = True,
    check_input: bool = False,
    rtol: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss(y)`` returns ``(value, dloss/dy)``. Up to `num_coords` parameter
    coordinates are sampled uniformly. With `skip_kinks`, a coordinate whose
    +/-h perturbation flips any ReLU activation pattern is replaced by another
    sample, since the central difference straddles a non-differentiable point
    there. `check_input` adds the input coordinates to the sampled pool, which
    is how parameter-free layers get checked.

    A coordinate whose gradient is smaller than the central difference can
    resolve, divided by `rtol`, is measured against that floor instead, so a
    structurally zero gradient reports its absolute error on the scale the
    difference can see. The resolution is ``3 * sigma / h``, where sigma is
    the rounding noise of one loss evaluation as measured by
    :func:`loss_noise`, and never less than 16 ulps of the loss over ``2h``.
    """
    x = np.array(x, dtype=np.float64)
    y, caches = network.forward(x, training, stop)
    _, dy = loss(y)
    dx, grads = network.backward(caches, dy)
    base_masks = _relu_masks(network, caches)

    coords = [
        (li, k, idx)
        for li, layer in enumerate(network.layers[: network._stop(stop)])
        for k, v in layer.params.items()
        for idx in range(v.size)
    ]
    if check_input:
        coords += [(-1, None, idx) for idx in range(x.size)]
    if not coords:
        return 0.0
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(coords))
    sigma = loss_noise(network, x, loss, training, stop, [coords[j] for j in order[:5]], h)
    worst = 0.0
    checked = 0
    for j in order:
        if checked >= num_coords:
            break
        li, k, idx = coords[j]
        p = x.reshape(-1) if li < 0 else network.layers[li].params[k].reshape(-1)
        orig = p[idx]
        p[idx] = orig + h
        y_plus, c_plus = network.forward(x, training, stop)
        p[idx] = orig - h
        y_minus, c_minus = network.forward(x, training, stop)
        p[idx] = orig
        if skip_kinks:
            flipped = any(
                not (np.array_equal(m0, m1) and np.array_equal(m0, m2))
                for m0, m1, m2 in zip(base_masks, _relu_masks(network, c_plus), _relu_masks(network, c_minus))
            )
            if flipped:
                continue
        l_plus, l_minus = loss(y_plus)[0], loss(y_minus)[0]
        numeric = (l_plus - l_minus) / (2 * h)
        analytic = (dx if li < 0 else grads[li][k]).reshape(-1)[idx]
        # rounding in the two loss values limits the difference to ~resolution;
        # gradients below resolution / rtol are compared on an absolute scale
        resolution = max(3 * sigma / h, 16 * np.finfo(float).eps * max(abs(l_plus), abs(l_minus), 1.0) / (2 * h))
        denom = max(abs(analytic), abs(numeric), resolution / rtol)
        worst = max(worst, abs(analytic - numeric) / denom)
        checked += 1
    return worst
