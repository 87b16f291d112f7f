"""Model artifact, float inference, budget accounting and the binary container."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import dsp
from ..quant import QuantParams
from .layers import (
    LAYER_TYPES,
    AvgPool2D,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    Softmax,
    avgpool_backward,
    avgpool_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    infer_shapes,
    maxpool_backward,
    maxpool_forward,
    relu,
    softmax,
)

INPUT_SHAPE = (dsp.FEATURE_SHAPE[1], dsp.FEATURE_SHAPE[2], dsp.FEATURE_SHAPE[0])
PARAM_BUDGET_BYTES = 12892
N_CLASSES = 2


def default_architecture(input_shape=INPUT_SHAPE) -> list:
    """Two same-padded 3x3 conv layers, 2x2 average pooling and a 10-unit hidden dense layer."""
    h, w, c = input_shape
    return [
        Conv2D(3, 3, c, 8, activation="relu"),
        Conv2D(3, 3, 8, 16, activation="relu"),
        AvgPool2D(2, 2),
        Flatten(),
        Dense((h // 2) * (w // 2) * 16, 10, activation="relu"),
        Dense(10, N_CLASSES),
        Softmax(),
    ]


def describe(layers) -> str:
    parts = []
    for layer in layers:
        if isinstance(layer, Conv2D):
            parts.append(f"conv{layer.kh}x{layer.kw}:{layer.c_in}->{layer.c_out}/{layer.stride}/{layer.padding}/{layer.activation}")
        elif isinstance(layer, Dense):
            parts.append(f"dense:{layer.n_in}->{layer.n_out}/{layer.activation}")
        elif isinstance(layer, (AvgPool2D, MaxPool2D)):
            parts.append(f"{layer.kind}:{layer.ph}x{layer.pw}")
        else:
            parts.append(layer.kind)
    return " | ".join(parts)


@dataclass(eq=False)
class LayerQuant:
    """Integer view of one layer: output grid plus, for conv/dense, int8 weights and int32 bias."""

    output: QuantParams
    weight: Optional[QuantParams] = None
    w_q: Optional[np.ndarray] = None
    b_q: Optional[np.ndarray] = None
    multiplier: Optional[int] = None
    shift: Optional[int] = None


@dataclass(eq=False)
class QuantView:
    input: QuantParams
    layers: list[LayerQuant]


@dataclass(eq=False)
class ModelArtifact:
    layers: list
    params: list[dict[str, np.ndarray]]
    input_shape: tuple[int, int, int] = INPUT_SHAPE
    metadata: dict = field(default_factory=dict)
    quant: Optional[QuantView] = None

    def __post_init__(self):
        self.shapes = infer_shapes(self.layers, self.input_shape)
        if len(self.params) != len(self.layers):
            raise ValueError("need one parameter dict per layer")
        for layer, p in zip(self.layers, self.params):
            expected = layer.param_shapes()
            if set(p) != set(expected) or any(p[k].shape != expected[k] for k in expected):
                raise ValueError(f"parameter shapes for {layer.kind} do not match {expected}")

    @property
    def is_quantized(self) -> bool:
        return self.quant is not None


def param_count_bytes(layer) -> int:
    shapes = layer.param_shapes()
    if not shapes:
        return 0
    return int(np.prod(shapes["w"])) + 4 * int(np.prod(shapes["b"]))


def param_budget(model) -> int:
    """INT8 parameter storage in bytes: one per weight, four per bias."""
    layers = model.layers if isinstance(model, ModelArtifact) else model
    return sum(param_count_bytes(layer) for layer in layers)


def activation_bytes(layers, input_shape=INPUT_SHAPE) -> int:
    """Peak int8 activation memory: the largest input+output pair over all layers."""
    sizes = [int(np.prod(s)) for s in infer_shapes(layers, input_shape)]
    return max(a + b for a, b in zip(sizes, sizes[1:]))


def worst_case_accumulator(layers) -> int:
    """Largest |sum| a conv/dense int32 accumulator can reach before bias, given int8 operands."""
    worst = 0
    for layer in layers:
        if isinstance(layer, (Conv2D, Dense)):
            worst = max(worst, layer.fan_in * 255 * 127)
    return worst


def init_params(layers, rng: np.random.Generator) -> list[dict[str, np.ndarray]]:
    """Glorot-uniform weights, zero biases."""
    params = []
    for layer in layers:
        shapes = layer.param_shapes()
        if not shapes:
            params.append({})
            continue
        w_shape = shapes["w"]
        receptive = int(np.prod(w_shape[:-2])) if len(w_shape) > 2 else 1
        fan_in, fan_out = w_shape[-2] * receptive, w_shape[-1] * receptive
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append({"w": rng.uniform(-limit, limit, w_shape), "b": np.zeros(shapes["b"])})
    return params


def build_model(layers=None, seed: int = 0, metadata: Optional[dict] = None) -> ModelArtifact:
    layers = list(layers) if layers is not None else default_architecture()
    model = ModelArtifact(layers, init_params(layers, np.random.default_rng(seed)), metadata=dict(metadata or {}))
    model.metadata.setdefault("architecture", describe(layers))
    model.metadata["param_bytes"] = param_budget(layers)
    model.metadata["activation_bytes"] = activation_bytes(layers)
    return model


# --- float forward/backward ------------------------------------------------


def forward_layers(layers, params, x, upto: Optional[int] = None):
    """Run ``layers[:upto]`` on a channels-last batch; returns output and per-layer caches."""
    caches = []
    for layer, p in list(zip(layers, params))[:upto]:
        if isinstance(layer, Conv2D):
            z, cache = conv2d_forward(x, p["w"], p["b"], layer)
            y = relu(z) if layer.activation == "relu" else z
            caches.append((cache, z))
        elif isinstance(layer, Dense):
            z, cache = dense_forward(x, p["w"], p["b"])
            y = relu(z) if layer.activation == "relu" else z
            caches.append((cache, z))
        elif isinstance(layer, AvgPool2D):
            y = avgpool_forward(x, layer.ph, layer.pw)
            caches.append(x.shape)
        elif isinstance(layer, MaxPool2D):
            y = maxpool_forward(x, layer.ph, layer.pw)
            caches.append(x)
        elif isinstance(layer, Flatten):
            y = x.reshape(x.shape[0], -1)
            caches.append(x.shape)
        elif isinstance(layer, Softmax):
            y = softmax(x)
            caches.append(None)
        else:
            raise TypeError(f"unsupported layer {layer!r}")
        x = y
    return x, caches


def backward_layers(layers, params, caches, grad):
    """Backpropagate ``grad`` through the cached layers; returns (input grad, per-layer param grads)."""
    grads: list[dict[str, np.ndarray]] = [{} for _ in caches]
    for i in range(len(caches) - 1, -1, -1):
        layer, p, cache = layers[i], params[i], caches[i]
        if isinstance(layer, (Conv2D, Dense)):
            inner, z = cache
            if layer.activation == "relu":
                grad = grad * (z > 0)
            if isinstance(layer, Conv2D):
                grad, dw, db = conv2d_backward(grad, p["w"], layer, inner)
            else:
                grad, dw, db = dense_backward(grad, p["w"], inner)
            grads[i] = {"w": dw, "b": db}
        elif isinstance(layer, AvgPool2D):
            grad = avgpool_backward(grad, cache, layer.ph, layer.pw)
        elif isinstance(layer, MaxPool2D):
            grad = maxpool_backward(grad, cache, layer.ph, layer.pw)
        elif isinstance(layer, Flatten):
            grad = grad.reshape(cache)
        else:
            raise TypeError(f"cannot backpropagate through {layer.kind}")
    return grad, grads


def logits_end(layers) -> int:
    """Index one past the last layer that is not a trailing softmax."""
    return len(layers) - 1 if layers and isinstance(layers[-1], Softmax) else len(layers)


def _as_batch(x, model: ModelArtifact):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    batch = x[None] if single else x
    if batch.ndim != 4:
        raise ValueError(f"expected (axes, time, freq) feature maps, got shape {x.shape}")
    batch = dsp.to_cnn_layout(batch)
    if batch.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"model input is {model.input_shape}, features give {batch.shape[1:]}")
    return batch, single


def forward_f32(model: ModelArtifact, x) -> np.ndarray:
    """Class probabilities for one ``(3, 4, 65)`` feature map or a batch of them."""
    batch, single = _as_batch(x, model)
    logits, _ = forward_layers(model.layers, model.params, batch, logits_end(model.layers))
    probs = softmax(logits)
    return probs[0] if single else probs


def predict_f32(model: ModelArtifact, x, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x)
    out = [forward_f32(model, x[i : i + batch_size]).argmax(axis=-1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# --- container -------------------------------------------------------------

MAGIC = b"TVMC"
VERSION = 1
_ACT = {None: 0, "relu": 1}
_ACT_INV = {v: k for k, v in _ACT.items()}
_KIND = {"conv2d": 1, "dense": 2, "avgpool2d": 3, "maxpool2d": 4, "flatten": 5, "softmax": 6}
_KIND_INV = {v: k for k, v in _KIND.items()}
_PAD = {"same": 0, "valid": 1}
_PAD_INV = {v: k for k, v in _PAD.items()}
_LAYER = struct.Struct("<BBBB6i")
_QP = struct.Struct("<di")


def _layer_record(layer) -> bytes:
    ints = [0] * 6
    act = pad = 0
    if isinstance(layer, Conv2D):
        ints[:5] = [layer.kh, layer.kw, layer.c_in, layer.c_out, layer.stride]
        act, pad = _ACT[layer.activation], _PAD[layer.padding]
    elif isinstance(layer, Dense):
        ints[:2] = [layer.n_in, layer.n_out]
        act = _ACT[layer.activation]
    elif isinstance(layer, (AvgPool2D, MaxPool2D)):
        ints[:2] = [layer.ph, layer.pw]
    return _LAYER.pack(_KIND[layer.kind], act, pad, 0, *ints)


def _layer_from_record(rec: tuple):
    kind, act, pad, _, *ints = rec
    cls = LAYER_TYPES[_KIND_INV[kind]]
    if cls is Conv2D:
        return Conv2D(*ints[:5], padding=_PAD_INV[pad], activation=_ACT_INV[act])
    if cls is Dense:
        return Dense(ints[0], ints[1], activation=_ACT_INV[act])
    if cls in (AvgPool2D, MaxPool2D):
        return cls(ints[0], ints[1])
    return cls()


def _write_array(buf, arr: np.ndarray, dtype: str) -> None:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def _read_array(buf, dtype: str) -> np.ndarray:
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(buf.read(count * itemsize), dtype=dtype).reshape(shape).copy()


def to_bytes(model: ModelArtifact) -> bytes:
    """Serialize: magic, version, metadata (JSON text), layer table, float32 weights, quant tables."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", VERSION, 1 if model.quant else 0))
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I3I", len(model.layers), *model.input_shape))
    for layer in model.layers:
        buf.write(_layer_record(layer))
    for layer, p in zip(model.layers, model.params):
        for name in sorted(p):
            _write_array(buf, p[name], "<f4")
    if model.quant:
        buf.write(_QP.pack(model.quant.input.scale, model.quant.input.zero_point))
        for lq in model.quant.layers:
            buf.write(_QP.pack(lq.output.scale, lq.output.zero_point))
            has_w = lq.weight is not None
            buf.write(struct.pack("<B", has_w))
            if has_w:
                buf.write(_QP.pack(lq.weight.scale, lq.weight.zero_point))
                buf.write(struct.pack("<ii", lq.multiplier, lq.shift))
                _write_array(buf, lq.w_q, "i1")
                _write_array(buf, lq.b_q, "<i4")
    return buf.getvalue()


def from_bytes(data: bytes) -> ModelArtifact:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ValueError("not a model container (bad magic)")
    version, flags = struct.unpack("<HH", buf.read(4))
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    (meta_len,) = struct.unpack("<I", buf.read(4))
    metadata = json.loads(buf.read(meta_len).decode("utf-8"))
    n_layers, *input_shape = struct.unpack("<I3I", buf.read(16))
    layers = [_layer_from_record(_LAYER.unpack(buf.read(_LAYER.size))) for _ in range(n_layers)]
    params = []
    for layer in layers:
        params.append({name: _read_array(buf, "<f4").astype(np.float64) for name in sorted(layer.param_shapes())})
    quant = None
    if flags & 1:
        qin = QuantParams(*_QP.unpack(buf.read(_QP.size)))
        lqs = []
        for _ in layers:
            out = QuantParams(*_QP.unpack(buf.read(_QP.size)))
            (has_w,) = struct.unpack("<B", buf.read(1))
            if has_w:
                wqp = QuantParams(*_QP.unpack(buf.read(_QP.size)))
                mult, shift = struct.unpack("<ii", buf.read(8))
                w_q = _read_array(buf, "i1")
                b_q = _read_array(buf, "<i4")
                lqs.append(LayerQuant(out, wqp, w_q, b_q, mult, shift))
            else:
                lqs.append(LayerQuant(out))
        quant = QuantView(qin, lqs)
    if buf.read(1):
        raise ValueError("trailing bytes after model container")
    return ModelArtifact(layers, params, tuple(input_shape), metadata, quant)


def save_model(path: str | Path, model: ModelArtifact) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path: str | Path) -> ModelArtifact:
    return from_bytes(Path(path).read_bytes())
