"""Network representation, file loading, conv lowering, and concrete evaluation.

All arithmetic is 64-bit IEEE-754. Convolutions are materialized as dense
matrices at load time so the bound engine only ever sees dense, ReLU and
max-pooling layers. The final layer must be dense (properties are stated
on raw logits).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedDocument,
    PoolWithoutRelu,
    ShapeMismatch,
    UnsupportedLayer,
)


@dataclass(frozen=True)
class Dense:
    """Affine layer: y = weights @ x + bias, row i = output node i."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Relu:
    """Elementwise max{0, x}."""

    size: int

    @property
    def in_size(self) -> int:
        return self.size

    @property
    def out_size(self) -> int:
        return self.size


@dataclass(frozen=True)
class MaxPool:
    """Per-group maximum over explicit index windows of the previous layer."""

    window: int
    stride: int
    groups: tuple[tuple[int, ...], ...]
    in_size: int
    # spatial shape the groups were derived from, kept for exact round-trips
    input_shape: tuple[int, int, int]

    @property
    def out_size(self) -> int:
        return len(self.groups)


Layer = Union[Dense, Relu, MaxPool]


@dataclass(frozen=True)
class Network:
    layers: tuple[Layer, ...]
    input_size: int

    @property
    def layer_sizes(self) -> list[int]:
        return [layer.out_size for layer in self.layers]

    @property
    def output_size(self) -> int:
        return self.layers[-1].out_size


@dataclass(frozen=True)
class InputBox:
    """L-infinity ball around a center, optionally clipped per dimension."""

    center: np.ndarray
    epsilon: float
    clip: Optional[tuple[float, float]] = None
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise MalformedDocument("epsilon must be non-negative")
        center = np.asarray(self.center, dtype=float)
        lo = center - self.epsilon
        hi = center + self.epsilon
        if self.clip is not None:
            clo, chi = self.clip
            lo = np.maximum(lo, clo)
            hi = np.minimum(hi, chi)
        if np.any(lo > hi):
            raise MalformedDocument("input box is empty after clipping")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True)
class Property:
    """Robustness: safe iff out_j - out_true < 0 for every j != true_label."""

    true_label: int


def _infer_spatial_shape(size: int) -> tuple[int, int, int]:
    """Treat a flat layer as a square single-channel image when possible."""
    root = math.isqrt(size)
    if root * root == size:
        return (1, root, root)
    return (1, 1, size)


def lower_conv_to_dense(
    channels_out: int,
    window: int,
    stride: int,
    weights,
    bias,
    input_shape: tuple[int, int, int],
) -> Dense:
    """Expand a convolution into an explicit dense layer.

    The window is clamped to each spatial dimension, so a ``window x window``
    kernel on a 1 x n input degenerates to a 1-D convolution of width
    ``window``. Weights are laid out (c_out, c_in, kh, kw) row-major and
    outputs (c_out, oh, ow) row-major.
    """
    if window <= 0 or stride <= 0:
        raise ShapeMismatch("window and stride must be positive")
    c_in, h, w = input_shape
    kh, kw = min(window, h), min(window, w)
    if h < 1 or w < 1 or c_in < 1:
        raise ShapeMismatch(f"bad conv input shape {input_shape}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    kernel = np.asarray(weights, dtype=float).reshape(channels_out, c_in, kh, kw)
    if bias is None:
        bias_vec = np.zeros(channels_out)
    else:
        bias_vec = np.asarray(bias, dtype=float).reshape(-1)
        if bias_vec.shape[0] not in (channels_out, channels_out * oh * ow):
            raise ShapeMismatch("conv bias length does not match output channels")

    n_in = c_in * h * w
    n_out = channels_out * oh * ow
    mat = np.zeros((n_out, n_in))
    full_bias = np.zeros(n_out)
    for co in range(channels_out):
        for oy in range(oh):
            for ox in range(ow):
                out_idx = (co * oh + oy) * ow + ox
                if bias_vec.shape[0] == channels_out:
                    full_bias[out_idx] = bias_vec[co]
                else:
                    full_bias[out_idx] = bias_vec[out_idx]
                for ci in range(c_in):
                    for dy in range(kh):
                        for dx in range(kw):
                            in_idx = (ci * h + oy * stride + dy) * w + ox * stride + dx
                            mat[out_idx, in_idx] = kernel[co, ci, dy, dx]
    return Dense(weights=mat, bias=full_bias)


def _pool_groups(
    window: int, stride: int, input_shape: tuple[int, int, int]
) -> tuple[tuple[int, ...], ...]:
    if window <= 0 or stride <= 0:
        raise ShapeMismatch("window and stride must be positive")
    c, h, w = input_shape
    kh, kw = min(window, h), min(window, w)
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    groups = []
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                idx = []
                for dy in range(kh):
                    for dx in range(kw):
                        idx.append((ch * h + oy * stride + dy) * w + ox * stride + dx)
                groups.append(tuple(idx))
    return tuple(groups)


def _parse_shape(raw, size: int) -> tuple[int, int, int]:
    if raw is None:
        return _infer_spatial_shape(size)
    shape = tuple(int(v) for v in raw)
    if len(shape) != 3 or shape[0] * shape[1] * shape[2] != size:
        raise ShapeMismatch(f"declared input_shape {shape} does not match size {size}")
    return shape


def load_network(document: Union[str, dict]) -> Network:
    """Parse and validate a network file, lowering conv layers to dense."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise MalformedDocument("network document must be a JSON object")
    try:
        input_size = int(doc["input_size"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"missing or invalid field: {exc}") from exc
    if input_size <= 0:
        raise MalformedDocument("input_size must be positive")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise MalformedDocument("layers must be a non-empty list")

    layers: list[Layer] = []
    cur_size = input_size
    cur_shape: Optional[tuple[int, int, int]] = None  # (c, h, w) when known
    for pos, raw in enumerate(raw_layers):
        if not isinstance(raw, dict) or "type" not in raw:
            raise MalformedDocument(f"layer {pos} lacks a type")
        kind = raw["type"]
        if kind == "dense":
            try:
                weights = np.asarray(raw["weights"], dtype=float)
            except (KeyError, ValueError) as exc:
                raise MalformedDocument(f"layer {pos}: bad weights: {exc}") from exc
            if weights.ndim != 2:
                raise ShapeMismatch(f"layer {pos}: weights must be a matrix")
            if weights.shape[1] != cur_size:
                raise ShapeMismatch(
                    f"layer {pos}: expected {cur_size} input columns, "
                    f"got {weights.shape[1]}"
                )
            bias_raw = raw.get("bias")
            bias = (
                np.zeros(weights.shape[0])
                if bias_raw is None
                else np.asarray(bias_raw, dtype=float)
            )
            if bias.shape != (weights.shape[0],):
                raise ShapeMismatch(f"layer {pos}: bias length mismatch")
            layers.append(Dense(weights=weights, bias=bias))
            cur_size = weights.shape[0]
            cur_shape = None
        elif kind == "relu":
            layers.append(Relu(size=cur_size))
        elif kind == "conv":
            if raw.get("input_shape") is not None:
                shape = _parse_shape(raw["input_shape"], cur_size)
            elif cur_shape is not None:
                shape = cur_shape
            else:
                shape = _infer_spatial_shape(cur_size)
            try:
                dense = lower_conv_to_dense(
                    channels_out=int(raw["channels_out"]),
                    window=int(raw["window"]),
                    stride=int(raw["stride"]),
                    weights=raw["weights"],
                    bias=raw.get("bias"),
                    input_shape=shape,
                )
            except KeyError as exc:
                raise MalformedDocument(f"layer {pos}: missing conv field {exc}") from exc
            layers.append(dense)
            c_out = int(raw["channels_out"])
            stride = int(raw["stride"])
            kh = min(int(raw["window"]), shape[1])
            kw = min(int(raw["window"]), shape[2])
            cur_shape = (
                c_out,
                (shape[1] - kh) // stride + 1,
                (shape[2] - kw) // stride + 1,
            )
            cur_size = dense.out_size
        elif kind == "maxpool":
            if not layers or not isinstance(layers[-1], Relu):
                raise PoolWithoutRelu(
                    f"layer {pos}: maxpool must immediately follow a relu layer"
                )
            if raw.get("input_shape") is not None:
                shape = _parse_shape(raw["input_shape"], cur_size)
            elif cur_shape is not None:
                shape = cur_shape
            else:
                shape = _infer_spatial_shape(cur_size)
            window = int(raw["window"])
            stride = int(raw["stride"])
            groups = _pool_groups(window, stride, shape)
            if not groups or any(not g for g in groups):
                raise ShapeMismatch(f"layer {pos}: empty pooling windows")
            layers.append(
                MaxPool(
                    window=window,
                    stride=stride,
                    groups=groups,
                    in_size=cur_size,
                    input_shape=shape,
                )
            )
            kh, kw = min(window, shape[1]), min(window, shape[2])
            cur_shape = (
                shape[0],
                (shape[1] - kh) // stride + 1,
                (shape[2] - kw) // stride + 1,
            )
            cur_size = len(groups)
        else:
            raise UnsupportedLayer(f"layer {pos}: unsupported type {kind!r}")

    if not isinstance(layers[-1], Dense):
        raise MalformedDocument("the final layer must be dense (raw logits)")
    net = Network(layers=tuple(layers), input_size=input_size)
    _validate(net)
    return net


def _validate(net: Network) -> None:
    cur = net.input_size
    for pos, layer in enumerate(net.layers):
        if layer.in_size != cur:
            raise ShapeMismatch(
                f"layer {pos}: input size {layer.in_size} != previous output {cur}"
            )
        if isinstance(layer, MaxPool):
            if pos == 0 or not isinstance(net.layers[pos - 1], Relu):
                raise PoolWithoutRelu(f"layer {pos}: maxpool not preceded by relu")
            for g in layer.groups:
                if not g:
                    raise ShapeMismatch(f"layer {pos}: empty pooling group")
                if max(g) >= layer.in_size or min(g) < 0:
                    raise ShapeMismatch(f"layer {pos}: pooling index out of range")
        cur = layer.out_size


def serialize_network(net: Network) -> dict:
    """Canonical (already lowered) JSON form; inverse of load_network."""
    layers = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            layers.append(
                {
                    "type": "dense",
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                }
            )
        elif isinstance(layer, Relu):
            layers.append({"type": "relu"})
        else:
            layers.append(
                {
                    "type": "maxpool",
                    "window": layer.window,
                    "stride": layer.stride,
                    "input_shape": list(layer.input_shape),
                }
            )
    return {"input_size": net.input_size, "layers": layers}


def evaluate(net: Network, x: Sequence[float]) -> np.ndarray:
    """Exact forward pass; the ground truth every bound is checked against."""
    v = np.asarray(x, dtype=float)
    if v.shape != (net.input_size,):
        raise ShapeMismatch(f"input has shape {v.shape}, expected ({net.input_size},)")
    for layer in net.layers:
        if isinstance(layer, Dense):
            v = layer.weights @ v + layer.bias
        elif isinstance(layer, Relu):
            v = np.maximum(v, 0.0)
        else:
            v = np.array([v[list(g)].max() for g in layer.groups])
    return v


def evaluate_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """Vectorized forward pass over rows of xs."""
    v = np.asarray(xs, dtype=float)
    if v.ndim != 2 or v.shape[1] != net.input_size:
        raise ShapeMismatch(f"batch has shape {v.shape}, expected (n, {net.input_size})")
    for layer in net.layers:
        if isinstance(layer, Dense):
            v = v @ layer.weights.T + layer.bias
        elif isinstance(layer, Relu):
            v = np.maximum(v, 0.0)
        else:
            v = np.stack([v[:, list(g)].max(axis=1) for g in layer.groups], axis=1)
    return v


def forward_trace(net: Network, xs: np.ndarray) -> list[np.ndarray]:
    """Per-layer outputs for a batch: trace[k] holds the values after layer k."""
    v = np.asarray(xs, dtype=float)
    trace = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            v = v @ layer.weights.T + layer.bias
        elif isinstance(layer, Relu):
            v = np.maximum(v, 0.0)
        else:
            v = np.stack([v[:, list(g)].max(axis=1) for g in layer.groups], axis=1)
        trace.append(v)
    return trace


def load_input_spec(document: Union[str, dict]) -> tuple[InputBox, Property]:
    """Parse {"center": [...], "epsilon": num, "clip": [lo, hi]?, "label": int}."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise MalformedDocument("input spec must be a JSON object")
    try:
        center = np.asarray(doc["center"], dtype=float)
        epsilon = float(doc["epsilon"])
        label = int(doc["label"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"missing or invalid field: {exc}") from exc
    if center.ndim != 1:
        raise MalformedDocument("center must be a flat vector")
    clip = None
    if doc.get("clip") is not None:
        raw_clip = doc["clip"]
        if len(raw_clip) != 2:
            raise MalformedDocument("clip must be [lo, hi]")
        clip = (float(raw_clip[0]), float(raw_clip[1]))
    if label < 0:
        raise MalformedDocument("label must be non-negative")
    return InputBox(center=center, epsilon=epsilon, clip=clip), Property(true_label=label)
