"""Post-training INT8 conversion and integer-only inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..quant import QMAX, QMIN, QuantTensor, calibrate, quantize, quantize_bias, quantize_multiplier, requantize
from .layers import AvgPool2D, Conv2D, Dense, Flatten, MaxPool2D, Softmax, _pad, im2col
from .model import (
    PARAM_BUDGET_BYTES,
    LayerQuant,
    ModelArtifact,
    QuantView,
    forward_layers,
    param_budget,
    worst_case_accumulator,
)
from .train import BudgetError, features_and_labels

INT32_MAX = 2**31 - 1
DEFAULT_CALIB_SAMPLES = 128


class MissingQuantError(ValueError):
    pass


def select_calibration(samples, n: int = DEFAULT_CALIB_SAMPLES, seed: int = 0):
    """Random subset (without replacement) of the training samples used for activation ranges."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty calibration pool")
    idx = np.sort(np.random.default_rng(seed).choice(len(samples), size=min(n, len(samples)), replace=False))
    return [samples[i] for i in idx]


def activation_trace(model: ModelArtifact, features) -> list[np.ndarray]:
    """Float activations ``[input, out_0, out_1, ...]`` for a batch of ``(3, 4, 65)`` feature maps."""
    x = dsp.to_cnn_layout(np.asarray(features, dtype=np.float64))
    acts = [x]
    for i in range(len(model.layers)):
        x, _ = forward_layers(model.layers[i : i + 1], model.params[i : i + 1], x)
        acts.append(x)
    return acts


def quantize_model(model: ModelArtifact, calib) -> ModelArtifact:
    """Attach int8 weights, int32 biases and per-tensor activation grids.

    ``calib`` is a list of samples or an array of feature maps. Weights are
    quantized symmetrically, input and activations asymmetrically from the
    ranges observed on ``calib``. Pooling and flatten layers keep their input
    grid.
    """
    if isinstance(calib, np.ndarray):
        features = calib
    else:
        calib = list(calib)
        if not calib:
            raise ValueError("empty calibration set")
        features, _ = features_and_labels(model, calib)
    if len(features) == 0:
        raise ValueError("empty calibration set")
    acts = activation_trace(model, features)
    in_qp = calibrate(acts[0])
    prev = in_qp
    lqs = []
    for i, (layer, p) in enumerate(zip(model.layers, model.params)):
        if isinstance(layer, (Conv2D, Dense)):
            out = calibrate(acts[i + 1])
            wqp = calibrate(p["w"], symmetric=True)
            w_q = quantize(p["w"], wqp).values
            b_q = quantize_bias(p["b"], prev.scale, wqp.scale)
            mult, shift = quantize_multiplier(prev.scale * wqp.scale / out.scale)
            lqs.append(LayerQuant(out, wqp, w_q, b_q, mult, shift))
        else:
            out = prev
            lqs.append(LayerQuant(out))
        prev = out
    budget = param_budget(model.layers)
    if budget > PARAM_BUDGET_BYTES:
        raise BudgetError(f"quantized parameters need {budget} bytes, budget is {PARAM_BUDGET_BYTES}")
    metadata = dict(model.metadata)
    metadata.update(
        quantized=True,
        param_bytes=budget,
        calib_samples=int(len(features)),
        worst_case_accumulator=worst_case_accumulator(model.layers),
    )
    return ModelArtifact(model.layers, model.params, model.input_shape, metadata, QuantView(in_qp, lqs))


def quantize_input(model: ModelArtifact, features) -> QuantTensor:
    """Channels-last int8 input tensor for ``forward_i8``."""
    if model.quant is None:
        raise MissingQuantError("model has no quantization parameters")
    return quantize(dsp.to_cnn_layout(np.asarray(features, dtype=np.float64)), model.quant.input)


def _int_matmul(a, b) -> np.ndarray:
    # exact: |operands| <= 255 and 128, fan-in below 2**30, so every partial sum is far below 2**53
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)


def _avg_round(sums, count: int) -> np.ndarray:
    mag = (np.abs(sums) + count // 2) // count
    return np.where(sums < 0, -mag, mag)


@dataclass
class Int8Result:
    label: np.ndarray
    scores: np.ndarray
    overflow: bool


def forward_i8(model: ModelArtifact, x: QuantTensor) -> Int8Result:
    """Integer inference on a channels-last int8 input (single ``(4, 65, 3)`` or batched).

    Conv and dense layers accumulate ``(q_x - zp_x) * q_w`` in wide integers, add
    the int32 bias and rescale with a Q31 multiplier and shift. ``scores`` are the
    int8 logits; ``overflow`` reports any accumulator leaving the int32 range.
    """
    if model.quant is None:
        raise MissingQuantError("model has no quantization parameters")
    if x.params != model.quant.input:
        raise ValueError(f"input grid {x.params} differs from the model input grid {model.quant.input}")
    q = x.values
    single = q.ndim == 3
    q = q[None] if single else q
    if q.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"expected input {model.input_shape}, got {q.shape[1:]}")
    prev = model.quant.input
    overflow = False
    for layer, lq in zip(model.layers, model.quant.layers):
        if isinstance(layer, Conv2D):
            xp, _, out_hw = _pad(q.astype(np.int64) - prev.zero_point, layer)
            cols = im2col(xp, layer.kh, layer.kw, layer.stride, out_hw)
            acc = _int_matmul(cols, lq.w_q.reshape(-1, layer.c_out)) + lq.b_q
        elif isinstance(layer, Dense):
            acc = _int_matmul(q.astype(np.int64) - prev.zero_point, lq.w_q) + lq.b_q
        elif isinstance(layer, AvgPool2D):
            n, h, w, c = q.shape
            ho, wo = h // layer.ph, w // layer.pw
            blocks = q[:, : ho * layer.ph, : wo * layer.pw].astype(np.int64).reshape(n, ho, layer.ph, wo, layer.pw, c)
            q = _avg_round(blocks.sum(axis=(2, 4)), layer.ph * layer.pw).astype(np.int8)
            prev = lq.output
            continue
        elif isinstance(layer, MaxPool2D):
            n, h, w, c = q.shape
            ho, wo = h // layer.ph, w // layer.pw
            q = q[:, : ho * layer.ph, : wo * layer.pw].reshape(n, ho, layer.ph, wo, layer.pw, c).max(axis=(2, 4))
            prev = lq.output
            continue
        elif isinstance(layer, Flatten):
            q = q.reshape(q.shape[0], -1)
            prev = lq.output
            continue
        elif isinstance(layer, Softmax):
            continue
        else:
            raise TypeError(f"unsupported layer {layer!r}")
        overflow |= bool(np.any(np.abs(acc) > INT32_MAX))
        q = requantize(acc, lq.multiplier, lq.shift, lq.output.zero_point, relu=layer.activation == "relu")
        prev = lq.output
    labels = q.argmax(axis=-1)
    return Int8Result(labels[0] if single else labels, q[0] if single else q, overflow)


def predict_i8(model: ModelArtifact, features, batch_size: int = 256) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    out = [forward_i8(model, quantize_input(model, features[i : i + batch_size])).label for i in range(0, len(features), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def dequantized_scores(model: ModelArtifact, result: Int8Result) -> np.ndarray:
    qp = model.quant.layers[-1].output
    return qp.scale * (result.scores.astype(np.float64) - qp.zero_point)


def activation_coverage(model: ModelArtifact, features) -> float:
    """Fraction of activations (input and every conv/dense output) inside the calibrated grids."""
    if model.quant is None:
        raise MissingQuantError("model has no quantization parameters")
    acts = activation_trace(model, features)
    inside = total = 0
    grids = [(acts[0], model.quant.input)] + [
        (acts[i + 1], lq.output) for i, (layer, lq) in enumerate(zip(model.layers, model.quant.layers)) if isinstance(layer, (Conv2D, Dense))
    ]
    for a, qp in grids:
        lo, hi = qp.range
        inside += int(np.count_nonzero((a >= lo - qp.scale / 2) & (a <= hi + qp.scale / 2)))
        total += a.size
    return inside / total
