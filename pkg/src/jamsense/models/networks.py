"""1-D CNN and MLP with hand-written forward and backward passes.

Activations are channels-last: a batch of feature vectors enters the CNN as
(batch, length, 1). Conv weights are stored as (out_channels, in_channels,
kernel).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import SpecError

HEAD_KINDS = ("regression", "classification", "embedding")
POOLINGS = ("flatten", "global_average")
INPUT_TRANSFORMS = ("log", "scale")


@dataclass(frozen=True)
class Head:
    kind: str = "classification"
    size: int = 16

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise SpecError(f"unknown head kind {self.kind!r}; choose from {HEAD_KINDS}")
        if self.size < 1:
            raise SpecError("head size must be >= 1")
        if self.kind == "classification" and self.size < 2:
            raise SpecError("classification needs at least 2 classes")


@dataclass(frozen=True)
class CnnSpec:
    conv_layers: tuple = ((16, 7, 2), (32, 7, 2), (64, 7, 2))
    head: Head = field(default_factory=Head)
    activation: str = "relu"
    pooling: str = "flatten"
    input_length: int = 1025
    # "log": log-compress then standardize with training-set scalars (see training.fit_preprocessing);
    # "scale": multiply by input_scale, which brings unit-L2 vectors to roughly unit-size entries
    input_transform: str = "scale"
    input_scale: float | None = None

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.conv_layers)
        object.__setattr__(self, "conv_layers", layers)
        if len(layers) != 3:
            raise SpecError(f"the CNN has exactly 3 conv layers, got {len(layers)}")
        for ch, k, s in layers:
            if ch < 1 or s < 1:
                raise SpecError("channels and strides must be >= 1")
            if k < 1 or k % 2 == 0:
                raise SpecError(f"kernel sizes must be odd, got {k}")
        if self.activation != "relu":
            raise SpecError("only relu activation is supported")
        if self.pooling not in POOLINGS:
            raise SpecError(f"unknown pooling {self.pooling!r}; choose from {POOLINGS}")
        if self.input_transform not in INPUT_TRANSFORMS:
            raise SpecError(f"unknown input transform {self.input_transform!r}; choose from {INPUT_TRANSFORMS}")
        if self.input_scale is None:
            scale = np.sqrt(self.input_length) if self.input_transform == "scale" else 1.0
            object.__setattr__(self, "input_scale", float(scale))

    def to_dict(self):
        return {"type": "cnn", **asdict(self)}

    def trunk_length(self):
        length = self.input_length
        for _, k, s in self.conv_layers:
            length = conv_out_length(length, k, s)
        return length

    def head_inputs(self):
        channels = self.conv_layers[-1][0]
        return channels if self.pooling == "global_average" else channels * self.trunk_length()


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected network; ``hidden=()`` is multinomial logistic regression."""
    hidden: tuple = (128, 64)
    head: Head = field(default_factory=Head)
    input_length: int = 1025

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise SpecError(f"hidden widths must be positive, got {self.hidden}")

    def to_dict(self):
        return {"type": "mlp", **asdict(self)}


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    head = Head(**d.pop("head"))
    if kind == "cnn":
        return CnnSpec(head=head, **d)
    if kind == "mlp":
        return MlpSpec(head=head, **d)
    raise SpecError(f"unknown network type {kind!r}")


def spec_hash(spec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class ModelParams:
    spec: CnnSpec | MlpSpec
    arrays: dict
    # preprocessing fitted on training data (feature standardization, target scaling)
    meta: dict = field(default_factory=dict)

    @property
    def spec_hash(self):
        return spec_hash(self.spec)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()},
                           {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.meta.items()})

    def astype(self, dtype):
        return ModelParams(self.spec, {k: v.astype(dtype) for k, v in self.arrays.items()}, self.meta)

    def n_parameters(self):
        return sum(v.size for v in self.arrays.values())


# ---------------------------------------------------------------------------
# layers

def conv_out_length(length, kernel, stride):
    pad = kernel // 2
    return (length + 2 * pad - kernel) // stride + 1


def conv1d_forward(x, weight, bias, stride):
    """x: (B, L, Cin); weight: (Cout, Cin, K). Zero 'same' padding of K//2."""
    cout, cin, k = weight.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]  # (B, Lout, Cin, K)
    cols = win.reshape(win.shape[0], win.shape[1], cin * k)
    wmat = weight.transpose(1, 2, 0).reshape(cin * k, cout)
    return cols @ wmat + bias, cols


def conv1d_backward(dout, cols, weight, stride, in_length, need_dx=True):
    cout, cin, k = weight.shape
    pad = k // 2
    batch, lout, _ = dout.shape
    dw = (cols.reshape(-1, cin * k).T @ dout.reshape(-1, cout)).reshape(cin, k, cout).transpose(2, 0, 1)
    db = dout.sum(axis=(0, 1))
    if not need_dx:
        return None, dw, db
    dcols = (dout @ weight.transpose(1, 2, 0).reshape(cin * k, cout).T).reshape(batch, lout, cin, k)
    dxp = np.zeros((batch, in_length + 2 * pad, cin), dtype=dout.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        dxp[:, j:j + span:stride] += dcols[..., j]
    return dxp[:, pad:pad + in_length], dw, db


# ---------------------------------------------------------------------------
# networks

class Cnn:
    def __init__(self, spec: CnnSpec):
        self.spec = spec

    def init(self, seed: int, dtype=np.float64) -> ModelParams:
        rng = np.random.default_rng(seed)
        arrays = {}
        cin = 1
        for i, (ch, k, _) in enumerate(self.spec.conv_layers):
            bound = np.sqrt(6.0 / (cin * k))
            arrays[f"conv{i}.weight"] = rng.uniform(-bound, bound, (ch, cin, k))
            arrays[f"conv{i}.bias"] = np.zeros(ch)
            cin = ch
        fan_in = self.spec.head_inputs()
        bound = 1.0 / np.sqrt(fan_in)
        arrays["head.weight"] = rng.uniform(-bound, bound, (self.spec.head.size, fan_in))
        arrays["head.bias"] = np.zeros(self.spec.head.size)
        return ModelParams(self.spec, {k: v.astype(dtype) for k, v in arrays.items()})

    def check(self, params: ModelParams, x):
        if x.ndim != 2 or x.shape[1] != self.spec.input_length:
            raise SpecError(f"expected input of shape (batch, {self.spec.input_length}), got {x.shape}")
        cin = 1
        for i, (ch, k, _) in enumerate(self.spec.conv_layers):
            if params.arrays[f"conv{i}.weight"].shape != (ch, cin, k):
                raise SpecError(f"conv{i}.weight has shape {params.arrays[f'conv{i}.weight'].shape}, "
                                f"spec wants {(ch, cin, k)}")
            cin = ch
        if params.arrays["head.weight"].shape != (self.spec.head.size, self.spec.head_inputs()):
            raise SpecError("head.weight does not match spec")

    def forward(self, params: ModelParams, x):
        """Return (outputs, cache). x: (batch, input_length) feature matrix."""
        x = np.asarray(x)
        self.check(params, x)
        a = params["head.weight"].dtype.type(self.spec.input_scale) * x.astype(params["head.weight"].dtype)
        h = a[:, :, None]
        cache = []
        for i, (_, _, stride) in enumerate(self.spec.conv_layers):
            z, cols = conv1d_forward(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride)
            cache.append((cols, h.shape[1], z > 0))
            h = np.maximum(z, 0)
        if self.spec.pooling == "global_average":
            pooled = h.mean(axis=1)
        else:
            pooled = h.reshape(len(h), -1)
        out = pooled @ params["head.weight"].T + params["head.bias"]
        return out, (cache, pooled, h.shape)

    def backward(self, params: ModelParams, cache, dout):
        layers, pooled, last_shape = cache
        grads = {"head.weight": dout.T @ pooled, "head.bias": dout.sum(axis=0)}
        dpooled = dout @ params["head.weight"]
        if self.spec.pooling == "global_average":
            last_len = last_shape[1]
            dh = np.repeat(dpooled[:, None, :] / last_len, last_len, axis=1)
        else:
            dh = dpooled.reshape(last_shape)
        for i in reversed(range(len(self.spec.conv_layers))):
            cols, in_len, active = layers[i]
            dz = dh * active
            dh, dw, db = conv1d_backward(dz, cols, params[f"conv{i}.weight"], self.spec.conv_layers[i][2],
                                         in_len, need_dx=i > 0)
            grads[f"conv{i}.weight"] = dw
            grads[f"conv{i}.bias"] = db
        return grads



class Mlp:
    def __init__(self, spec: MlpSpec):
        self.spec = spec

    def widths(self):
        return (self.spec.input_length, *self.spec.hidden, self.spec.head.size)

    def init(self, seed: int, dtype=np.float64) -> ModelParams:
        rng = np.random.default_rng(seed)
        arrays = {}
        w = self.widths()
        for i in range(len(w) - 1):
            last = i == len(w) - 2
            bound = np.sqrt((1.0 if last else 6.0) / w[i])
            arrays[f"fc{i}.weight"] = rng.uniform(-bound, bound, (w[i + 1], w[i]))
            arrays[f"fc{i}.bias"] = np.zeros(w[i + 1])
        return ModelParams(self.spec, {k: v.astype(dtype) for k, v in arrays.items()})

    def forward(self, params: ModelParams, x):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.spec.input_length:
            raise SpecError(f"expected input of shape (batch, {self.spec.input_length}), got {x.shape}")
        h = x.astype(params["fc0.weight"].dtype)
        n = len(self.widths()) - 1
        cache = []
        for i in range(n):
            z = h @ params[f"fc{i}.weight"].T + params[f"fc{i}.bias"]
            cache.append(h)
            h = np.maximum(z, 0) if i < n - 1 else z
        return h, cache

    def backward(self, params: ModelParams, cache, dout):
        grads = {}
        d = dout
        for i in reversed(range(len(cache))):
            h = cache[i]
            grads[f"fc{i}.weight"] = d.T @ h
            grads[f"fc{i}.bias"] = d.sum(axis=0)
            if i > 0:
                d = (d @ params[f"fc{i}.weight"]) * (h > 0)
        return grads


def network_for(spec):
    if isinstance(spec, CnnSpec):
        return Cnn(spec)
    if isinstance(spec, MlpSpec):
        return Mlp(spec)
    raise SpecError(f"no network for spec {spec!r}")
