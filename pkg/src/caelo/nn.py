"""Minimal dense-tensor neural stack for the two auto-encoders.

Layers operate on batch-leading float64 arrays, channels last:
(N, H, W, C) for 2D and (N, D, H, W, C) for 3D.  Convolutions are
stride-1 with zero 'same' padding and odd kernels, pools are 2x non
overlapping, upsampling is nearest-neighbor 2x repetition.  Gradients
are computed analytically per layer; the test suite checks them against
central finite differences.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_BCE_EPS = 1e-7


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


# --- layer specifications ---------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str                      # conv2d | conv3d | maxpool2d | maxpool3d |
                                   # upsample2d | upsample3d | dense |
                                   # flatten | reshape
    kernel: tuple | None = None    # conv kernel spatial dims
    channels: int | None = None    # conv output channels
    units: int | None = None       # dense output units
    activation: str = "linear"     # linear | relu | sigmoid
    shape: tuple | None = None     # reshape target (without batch dim)

    def describe(self) -> str:
        return (f"{self.kind}|k={self.kernel}|c={self.channels}"
                f"|u={self.units}|a={self.activation}|s={self.shape}")


# --- activations ------------------------------------------------------------

def _act_forward(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name, dy, z, a):
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (z > 0)
    if name == "sigmoid":
        return dy * a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


# --- convolution helpers ----------------------------------------------------

def _conv2d_same(x, w):
    """x: (N, H, W, Cin), w: (kh, kw, Cin, Cout) -> (N, H, W, Cout)."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    patches = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    patches = np.moveaxis(patches, 3, 5)            # (N, H, W, kh, kw, Cin)
    cols = patches.reshape(n * h * wd, kh * kw * cin)
    out = cols @ w.reshape(kh * kw * cin, cout)
    return out.reshape(n, h, wd, cout), cols


def _conv3d_same(x, w):
    """x: (N, D, H, W, Cin), w: (kd, kh, kw, Cin, Cout)."""
    n, d, h, wd, cin = x.shape
    kd, kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (kd // 2, kd // 2), (kh // 2, kh // 2),
                    (kw // 2, kw // 2), (0, 0)))
    patches = sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    patches = np.moveaxis(patches, 4, 7)      # (N, D, H, W, kd, kh, kw, Cin)
    cols = patches.reshape(n * d * h * wd, kd * kh * kw * cin)
    out = cols @ w.reshape(kd * kh * kw * cin, cout)
    return out.reshape(n, d, h, wd, cout), cols


# --- layers -----------------------------------------------------------------

class _Layer:
    params: list
    grads: list

    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class _Conv2D(_Layer):
    def __init__(self, kernel, cin, cout, activation, rng):
        super().__init__()
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("conv kernels must have odd dimensions")
        fan_in = kh * kw * cin
        fan_out = kh * kw * cout
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.w = rng.uniform(-limit, limit, size=(kh, kw, cin, cout))
        self.b = np.zeros(cout)
        self.activation = activation
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def forward(self, x):
        z, cols = _conv2d_same(x, self.w)
        z += self.b
        a = _act_forward(self.activation, z)
        self._cache = (x.shape, cols, z, a)
        return a

    def backward(self, dy):
        x_shape, cols, z, a = self._cache
        dz = _act_backward(self.activation, dy, z, a)
        kh, kw, cin, cout = self.w.shape
        dz_flat = dz.reshape(-1, cout)
        self.grads[0][...] = (cols.T @ dz_flat).reshape(self.w.shape)
        self.grads[1][...] = dz_flat.sum(axis=0)
        w_rot = self.w[::-1, ::-1].transpose(0, 1, 3, 2)
        dx, _ = _conv2d_same(dz, w_rot)
        return dx


class _Conv3D(_Layer):
    def __init__(self, kernel, cin, cout, activation, rng):
        super().__init__()
        kd, kh, kw = kernel
        if kd % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("conv kernels must have odd dimensions")
        fan_in = kd * kh * kw * cin
        fan_out = kd * kh * kw * cout
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.w = rng.uniform(-limit, limit, size=(kd, kh, kw, cin, cout))
        self.b = np.zeros(cout)
        self.activation = activation
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def forward(self, x):
        z, cols = _conv3d_same(x, self.w)
        z += self.b
        a = _act_forward(self.activation, z)
        self._cache = (cols, z, a)
        return a

    def backward(self, dy):
        cols, z, a = self._cache
        dz = _act_backward(self.activation, dy, z, a)
        cout = self.w.shape[-1]
        dz_flat = dz.reshape(-1, cout)
        self.grads[0][...] = (cols.T @ dz_flat).reshape(self.w.shape)
        self.grads[1][...] = dz_flat.sum(axis=0)
        w_rot = self.w[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3)
        dx, _ = _conv3d_same(dz, w_rot)
        return dx


class _MaxPool2D(_Layer):
    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims must be even for 2x2 pool, "
                             f"got {h}x{w}")
        blocks = x.reshape(n, h // 2, 2, w // 2, 2, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(
            n, h // 2, w // 2, c, 4)
        # argmax picks the first maximum in (u, v) scan order
        self._idx = np.argmax(blocks, axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(blocks, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, h, w, c = self._in_shape
        blocks = np.zeros((n, h // 2, w // 2, c, 4))
        np.put_along_axis(blocks, self._idx[..., None], dy[..., None], axis=-1)
        blocks = blocks.reshape(n, h // 2, w // 2, c, 2, 2)
        return blocks.transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


class _MaxPool3D(_Layer):
    def forward(self, x):
        n, d, h, w, c = x.shape
        if d % 2 or h % 2 or w % 2:
            raise ValueError("spatial dims must be even for 2x2x2 pool")
        blocks = x.reshape(n, d // 2, 2, h // 2, 2, w // 2, 2, c)
        blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(
            n, d // 2, h // 2, w // 2, c, 8)
        self._idx = np.argmax(blocks, axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(blocks, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, d, h, w, c = self._in_shape
        blocks = np.zeros((n, d // 2, h // 2, w // 2, c, 8))
        np.put_along_axis(blocks, self._idx[..., None], dy[..., None], axis=-1)
        blocks = blocks.reshape(n, d // 2, h // 2, w // 2, c, 2, 2, 2)
        return blocks.transpose(0, 1, 5, 2, 6, 3, 7, 4).reshape(n, d, h, w, c)


class _Upsample2D(_Layer):
    def forward(self, x):
        self._in_shape = x.shape
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, dy):
        n, h, w, c = self._in_shape
        return dy.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


class _Upsample3D(_Layer):
    def forward(self, x):
        self._in_shape = x.shape
        return np.repeat(np.repeat(np.repeat(x, 2, axis=1), 2, axis=2),
                         2, axis=3)

    def backward(self, dy):
        n, d, h, w, c = self._in_shape
        return dy.reshape(n, d, 2, h, 2, w, 2, c).sum(axis=(2, 4, 6))


class _Dense(_Layer):
    def __init__(self, fan_in, units, activation, rng):
        super().__init__()
        limit = np.sqrt(6.0 / (fan_in + units))
        self.w = rng.uniform(-limit, limit, size=(fan_in, units))
        self.b = np.zeros(units)
        self.activation = activation
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def forward(self, x):
        z = x @ self.w + self.b
        a = _act_forward(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, dy):
        x, z, a = self._cache
        dz = _act_backward(self.activation, dy, z, a)
        self.grads[0][...] = x.T @ dz
        self.grads[1][...] = dz.sum(axis=0)
        return dz @ self.w.T


class _Flatten(_Layer):
    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class _Reshape(_Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


# --- losses -----------------------------------------------------------------

def mse_loss(pred, target):
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


def bce_loss(pred, target):
    inside = (pred > _BCE_EPS) & (pred < 1.0 - _BCE_EPS)
    p = np.clip(pred, _BCE_EPS, 1.0 - _BCE_EPS)
    loss = float(np.mean(-(target * np.log(p)
                           + (1.0 - target) * np.log(1.0 - p))))
    grad = np.where(inside, ((1.0 - target) / (1.0 - p) - target / p), 0.0)
    return loss, grad / pred.size


_LOSSES = {"mse": mse_loss, "bce": bce_loss}


# --- network ----------------------------------------------------------------

class CaeNetwork:
    """Sequential network built from LayerSpecs with fixed input shape.

    input_shape excludes the batch dimension; spatial dims may be None
    when no dense layer needs them (the 2D auto-encoder case).
    """

    def __init__(self, specs, input_shape, loss="mse", seed=0,
                 response_layer_index=None, code_layer_index=None):
        if loss not in _LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.loss_name = loss
        self.response_layer_index = response_layer_index
        self.code_layer_index = code_layer_index
        rng = np.random.default_rng(seed)
        self.layers = []
        shape = list(self.input_shape)
        for spec in self.specs:
            layer, shape = self._build_layer(spec, shape, rng)
            self.layers.append(layer)

    @staticmethod
    def _build_layer(spec, shape, rng):
        kind = spec.kind
        if kind == "conv2d":
            layer = _Conv2D(spec.kernel, shape[-1], spec.channels,
                            spec.activation, rng)
            return layer, shape[:-1] + [spec.channels]
        if kind == "conv3d":
            layer = _Conv3D(spec.kernel, shape[-1], spec.channels,
                            spec.activation, rng)
            return layer, shape[:-1] + [spec.channels]
        if kind == "maxpool2d":
            return _MaxPool2D(), [_half(d) for d in shape[:-1]] + [shape[-1]]
        if kind == "maxpool3d":
            return _MaxPool3D(), [_half(d) for d in shape[:-1]] + [shape[-1]]
        if kind == "upsample2d":
            return _Upsample2D(), [_dbl(d) for d in shape[:-1]] + [shape[-1]]
        if kind == "upsample3d":
            return _Upsample3D(), [_dbl(d) for d in shape[:-1]] + [shape[-1]]
        if kind == "dense":
            if shape[0] is None or len(shape) != 1:
                raise ValueError("dense layer needs a flattened, "
                                 "fully specified input")
            return _Dense(shape[0], spec.units, spec.activation, rng), \
                [spec.units]
        if kind == "flatten":
            if any(d is None for d in shape):
                raise ValueError("flatten needs fully specified dims")
            return _Flatten(), [int(np.prod(shape))]
        if kind == "reshape":
            return _Reshape(spec.shape), list(spec.shape)
        raise ValueError(f"unknown layer kind {kind!r}")

    # -- introspection --

    def fingerprint(self) -> bytes:
        text = ";".join(s.describe() for s in self.specs)
        text += f"|in={self.input_shape}|loss={self.loss_name}"
        return hashlib.sha256(text.encode()).digest()

    def output_shapes(self, input_shape):
        """Per-layer output shapes (without batch dim) for a given input."""
        shapes = []
        shape = list(input_shape)
        rng = np.random.default_rng(0)
        for spec in self.specs:
            _, shape = self._build_layer(spec, list(shape), rng)
            shapes.append(tuple(shape))
        return shapes

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    # -- execution --

    def forward(self, x, upto: int | None = None):
        """Run the network; with `upto` return that layer's output instead."""
        out = np.asarray(x, dtype=float)
        for i, layer in enumerate(self.layers):
            out = layer.forward(out)
            if upto is not None and i == upto:
                return out
        if upto is not None:
            raise IndexError(f"layer index {upto} out of range")
        return out

    def loss_and_grads(self, x, target):
        pred = self.forward(x)
        loss, dpred = _LOSSES[self.loss_name](pred, np.asarray(target,
                                                               dtype=float))
        grad = dpred
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss, self.grads

    def set_params(self, values):
        for p, v in zip(self.params, values, strict=True):
            p[...] = v


def _half(d):
    if d is None:
        return None
    if d % 2:
        raise ValueError(f"dimension {d} not divisible by 2 for pooling")
    return d // 2


def _dbl(d):
    return None if d is None else 2 * d


# --- optimizer and training -------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v, strict=True):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(net: CaeNetwork, dataset: np.ndarray, epochs: int, batch: int,
          lr: float, seed: int = 0):
    """Auto-encoder training (target = input).  Returns per-epoch mean loss.

    Deterministic for a given seed: the shuffle order and the parameter
    update sequence are fixed.
    """
    data = np.asarray(dataset, dtype=float)
    if data.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    opt = Adam(net.params, lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(data.shape[0])
        losses = []
        for start in range(0, data.shape[0], batch):
            xb = data[order[start:start + batch]]
            loss, grads = net.loss_and_grads(xb, xb)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite: {loss}")
            opt.step(net.params, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


# --- weight files -----------------------------------------------------------

_WEIGHT_MAGIC = b"caelo-w1"


def save_weights(net: CaeNetwork, path) -> None:
    """Versioned binary: magic, architecture fingerprint, float32 params."""
    params = net.params
    with open(path, "wb") as f:
        f.write(_WEIGHT_MAGIC)
        f.write(net.fingerprint())
        f.write(struct.pack("<I", len(params)))
        for p in params:
            f.write(p.astype("<f4").tobytes())


def load_weights(net: CaeNetwork, path) -> CaeNetwork:
    """Load weights saved for the same architecture into `net`."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 + 32 + 4 or blob[:8] != _WEIGHT_MAGIC:
        raise ValueError(f"{path}: not a weight file")
    if blob[8:40] != net.fingerprint():
        raise ValueError(f"{path}: architecture fingerprint mismatch")
    (count,) = struct.unpack("<I", blob[40:44])
    params = net.params
    if count != len(params):
        raise ValueError(f"{path}: expected {len(params)} parameter arrays, "
                         f"file has {count}")
    offset = 44
    for p in params:
        nbytes = p.size * 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated weight file")
        p[...] = np.frombuffer(chunk, dtype="<f4").reshape(p.shape)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in weight file")
    return net


# --- canonical architectures ------------------------------------------------

def cae2d_specs(out_channels=3):
    return [
        LayerSpec("conv2d", kernel=(3, 3), channels=32, activation="relu"),
        LayerSpec("conv2d", kernel=(1, 1), channels=8, activation="relu"),
        LayerSpec("maxpool2d"),
        LayerSpec("conv2d", kernel=(3, 3), channels=16, activation="relu"),
        LayerSpec("maxpool2d"),
        LayerSpec("conv2d", kernel=(3, 3), channels=16, activation="relu"),
        LayerSpec("upsample2d"),
        LayerSpec("conv2d", kernel=(3, 3), channels=8, activation="relu"),
        LayerSpec("upsample2d"),
        LayerSpec("conv2d", kernel=(1, 1), channels=out_channels,
                  activation="linear"),
    ]


def build_cae2d(in_channels=3, seed=0) -> CaeNetwork:
    """10-layer 2D auto-encoder; the second conv is the response layer."""
    return CaeNetwork(cae2d_specs(in_channels), (None, None, in_channels),
                      loss="mse", seed=seed, response_layer_index=1)


def cae3d_specs():
    return [
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=8, activation="relu"),
        LayerSpec("maxpool3d"),
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=16, activation="relu"),
        LayerSpec("maxpool3d"),
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=32, activation="relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=200, activation="relu"),
        LayerSpec("dense", units=20, activation="linear"),
        LayerSpec("dense", units=200, activation="relu"),
        LayerSpec("dense", units=2048, activation="relu"),
        LayerSpec("reshape", shape=(4, 4, 4, 32)),
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=16, activation="relu"),
        LayerSpec("upsample3d"),
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=8, activation="relu"),
        LayerSpec("upsample3d"),
        LayerSpec("conv3d", kernel=(3, 3, 3), channels=1,
                  activation="sigmoid"),
    ]


def build_cae3d(seed=0) -> CaeNetwork:
    """16-layer 3D auto-encoder; the 20-unit dense is the code layer."""
    return CaeNetwork(cae3d_specs(), (16, 16, 16, 1), loss="bce", seed=seed,
                      code_layer_index=7)
