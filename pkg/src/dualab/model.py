"""Layer objects, the Model container, mode-routed forward passes and the
binary checkpoint format.

The desk-scale architecture has three named BN layers ("bn1", "bn2", "bn3")
so layer-selective adaptation has something to select.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from . import bn as bn_ops
from . import ops
from .errors import DimensionError, FormatError, ParameterError
from .rng import normals

MODES = ("train", "eval", "adapt")


class Conv2d:
    tag = 1

    def __init__(self, c_in: int, c_out: int, ksize: int = 3, stride: int = 1,
                 pad: int = 1, weight=None, bias=None):
        self.c_in, self.c_out, self.ksize = c_in, c_out, ksize
        self.stride, self.pad = stride, pad
        self.weight = (np.zeros((c_out, c_in, ksize, ksize))
                       if weight is None else np.asarray(weight, dtype=np.float64))
        self.bias = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
        self._x = None

    def init_params(self, seed: int, name: str) -> None:
        fan_in = self.c_in * self.ksize * self.ksize
        scale = np.sqrt(2.0 / fan_in)
        self.weight = (normals(seed, f"init/{name}/weight", self.weight.size)
                       .reshape(self.weight.shape) * scale)
        self.bias = np.zeros(self.c_out)

    def forward(self, x, cache: bool = False):
        if cache:
            self._x = x
        return ops.conv2d_forward(x, self.weight, self.bias, self.stride, self.pad)

    def backward(self, out_grad):
        g = ops.conv2d_backward(self._x, self.weight, out_grad, self.stride, self.pad)
        self._x = None
        return g

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def header_ints(self):
        return (self.c_out, self.c_in, self.ksize, self.ksize, self.stride, self.pad)

    def arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm:
    tag = 2

    def __init__(self, channels: int, name: str, eps: float = 1e-5,
                 train_momentum: float = 0.1):
        self.name = name
        self.state = bn_ops.BatchNormState.identity(channels, eps, train_momentum)
        self._x = None

    @property
    def channels(self) -> int:
        return self.state.channels

    def forward_train(self, x, cache: bool = False):
        if cache:
            self._x = x
        return bn_ops.bn_forward_train(x, self.state, self.state.train_momentum)

    def forward_eval(self, x):
        return bn_ops.bn_forward_eval(x, self.state)

    def forward_adapt(self, x, w_k: float, post_update: bool = True):
        return bn_ops.bn_forward_adapt(x, self.state, w_k, post_update)

    def backward(self, out_grad):
        dx, dgamma, dbeta = bn_ops.bn_train_backward(self._x, self.state, out_grad)
        self._x = None
        return ops.LayerGrad(dx, {"gamma": dgamma, "beta": dbeta})

    def params(self):
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def header_ints(self):
        return (self.channels,)

    def arrays(self):
        s = self.state
        return [
            ("gamma", s.gamma),
            ("beta", s.beta),
            ("running_mean", s.running_mean),
            ("running_var", s.running_var),
            ("eps", np.array([s.eps])),
        ]


class ReLU:
    tag = 3

    def __init__(self):
        self._x = None

    def forward(self, x, cache: bool = False):
        if cache:
            self._x = x
        return ops.relu_forward(x)

    def backward(self, out_grad):
        g = ops.LayerGrad(ops.relu_backward(self._x, out_grad))
        self._x = None
        return g

    def params(self):
        return {}

    def header_ints(self):
        return ()

    def arrays(self):
        return []


class MaxPool(ReLU):
    tag = 4

    def forward(self, x, cache: bool = False):
        if cache:
            self._x = x
        return ops.maxpool2x2_forward(x)

    def backward(self, out_grad):
        g = ops.LayerGrad(ops.maxpool2x2_backward(self._x, out_grad))
        self._x = None
        return g


class Flatten(ReLU):
    tag = 5

    def forward(self, x, cache: bool = False):
        if cache:
            self._x = x
        return ops.flatten(x)

    def backward(self, out_grad):
        g = ops.LayerGrad(out_grad.reshape(self._x.shape))
        self._x = None
        return g


class Linear:
    tag = 6

    def __init__(self, d_in: int, d_out: int, weight=None, bias=None):
        self.d_in, self.d_out = d_in, d_out
        self.weight = (np.zeros((d_out, d_in))
                       if weight is None else np.asarray(weight, dtype=np.float64))
        self.bias = np.zeros(d_out) if bias is None else np.asarray(bias, dtype=np.float64)
        self._x = None

    def init_params(self, seed: int, name: str) -> None:
        scale = np.sqrt(2.0 / self.d_in)
        self.weight = (normals(seed, f"init/{name}/weight", self.weight.size)
                       .reshape(self.weight.shape) * scale)
        self.bias = np.zeros(self.d_out)

    def forward(self, x, cache: bool = False):
        if cache:
            self._x = x
        return ops.linear_forward(x, self.weight, self.bias)

    def backward(self, out_grad):
        g = ops.linear_backward(self._x, self.weight, out_grad)
        self._x = None
        return g

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def header_ints(self):
        return (self.d_out, self.d_in)

    def arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Model:
    """Ordered layer list with named, individually addressable BN layers."""

    def __init__(self, layers: list):
        self.layers = layers
        names = [l.name for l in layers if isinstance(l, BatchNorm)]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate BN layer names: {names}")
        self.bn_names = names

    def bn_layers(self) -> dict[str, BatchNorm]:
        return {l.name: l for l in self.layers if isinstance(l, BatchNorm)}

    def copy(self) -> "Model":
        # round-trip through the serialized form: cheap and guarantees deep copy
        return load_checkpoint_bytes(checkpoint_bytes(self))


def model_forward(model: Model, x: np.ndarray, mode: str = "eval", *,
                  w_k: float | None = None, layer_mask=None,
                  post_update: bool = True, cache: bool = False) -> np.ndarray:
    """Run the model; mode only changes how BN layers treat their statistics.

    In adapt mode, BN layers whose name is in layer_mask update their running
    stats with weight w_k; all others evaluate with frozen stats.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    mask = set(layer_mask or ())
    unknown = mask - set(model.bn_names)
    if unknown:
        raise ParameterError(f"layer_mask names {sorted(unknown)} not in {model.bn_names}")
    if mode == "adapt" and mask and w_k is None:
        raise ParameterError("adapt mode with a non-empty mask requires w_k")
    h = x
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            if mode == "train":
                h = layer.forward_train(h, cache=cache)
            elif mode == "adapt" and layer.name in mask:
                h = layer.forward_adapt(h, w_k, post_update)
            else:
                h = layer.forward_eval(h)
        else:
            h = layer.forward(h, cache=cache)
    return h


def model_backward(model: Model, logit_grad: np.ndarray) -> list[ops.LayerGrad]:
    """Chain gradients through cached activations of a train-mode forward."""
    grads: list[ops.LayerGrad] = [None] * len(model.layers)  # type: ignore[list-item]
    g = logit_grad
    for i in range(len(model.layers) - 1, -1, -1):
        lg = model.layers[i].backward(g)
        grads[i] = lg
        g = lg.input_grad
    return grads


def sgd_step(model: Model, grads: list[ops.LayerGrad], lr: float, momentum: float,
             velocity: dict) -> dict:
    """Heavy-ball update of every learned parameter; running BN stats untouched."""
    for i, layer in enumerate(model.layers):
        params = layer.params()
        if not params:
            continue
        for name, p in params.items():
            key = (i, name)
            if key not in velocity:
                velocity[key] = np.zeros_like(p)
            ops.sgd_update(p, grads[i].param_grads[name], velocity[key], lr, momentum)
    return velocity


def default_model() -> Model:
    """The fixed desk-scale CNN for 1x28x28 inputs, 10 classes."""
    return Model([
        Conv2d(1, 16, 3, 1, 1),
        BatchNorm(16, "bn1"),
        ReLU(),
        MaxPool(),
        Conv2d(16, 32, 3, 1, 1),
        BatchNorm(32, "bn2"),
        ReLU(),
        MaxPool(),
        Flatten(),
        Linear(32 * 7 * 7, 64),
        BatchNorm(64, "bn3"),
        ReLU(),
        Linear(64, 10),
    ])


def init_model(seed: int) -> Model:
    model = default_model()
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Conv2d, Linear)):
            layer.init_params(seed, f"layer{i}")
    return model


# ---- checkpoint format ----
#
# magic "DUA1"
# u32   layer count
# per layer: u8 type tag, then the tag-specific shape ints as LE u32:
#   conv:   c_out, c_in, kh, kw, stride, pad
#   bn:     channels
#   linear: d_out, d_in
#   relu / maxpool / flatten: none
# then every layer's arrays as LE f64 in declaration order:
#   conv:   weight, bias
#   bn:     gamma, beta, running_mean, running_var, eps (1 value)
#   linear: weight, bias

MAGIC = b"DUA1"
_TAGS = {1: Conv2d, 2: BatchNorm, 3: ReLU, 4: MaxPool, 5: Flatten, 6: Linear}
_HEADER_INTS = {1: 6, 2: 1, 3: 0, 4: 0, 5: 0, 6: 2}


def checkpoint_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        buf.write(struct.pack("<B", layer.tag))
        ints = layer.header_ints()
        buf.write(struct.pack(f"<{len(ints)}I", *ints))
    for layer in model.layers:
        for _, arr in layer.arrays():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def _read_exact(buf, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated while reading {what} "
                          f"(wanted {n} bytes, got {len(data)})")
    return data


def load_checkpoint_bytes(data: bytes) -> Model:
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} at offset 0, expected {MAGIC!r}")
    (n_layers,) = struct.unpack("<I", _read_exact(buf, 4, "layer count"))
    specs = []
    bn_idx = 0
    for li in range(n_layers):
        (tag,) = struct.unpack("<B", _read_exact(buf, 1, f"layer {li} tag"))
        if tag not in _TAGS:
            raise FormatError(f"unknown layer tag {tag} for layer {li}")
        n_ints = _HEADER_INTS[tag]
        ints = struct.unpack(f"<{n_ints}I", _read_exact(buf, 4 * n_ints, f"layer {li} header"))
        specs.append((tag, ints))

    layers = []
    for tag, ints in specs:
        if tag == 1:
            c_out, c_in, kh, kw, stride, pad = ints
            if kh != kw:
                raise FormatError(f"non-square conv kernel {kh}x{kw} not supported")
            layer = Conv2d(c_in, c_out, kh, stride, pad)
        elif tag == 2:
            bn_idx += 1
            layer = BatchNorm(ints[0], f"bn{bn_idx}")
        elif tag == 6:
            layer = Linear(ints[1], ints[0])
        else:
            layer = _TAGS[tag]()
        for name, arr in layer.arrays():
            raw = _read_exact(buf, 8 * arr.size, f"array {name}")
            vals = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(arr.shape)
            if isinstance(layer, BatchNorm):
                if name == "eps":
                    layer.state.eps = float(vals[0])
                else:
                    setattr(layer.state, name, vals.copy())
            else:
                setattr(layer, name, vals.copy())
        layers.append(layer)
    trailing = buf.read(1)
    if trailing:
        raise FormatError("checkpoint has trailing bytes after the last array")
    return Model(layers)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    return load_checkpoint_bytes(data)
