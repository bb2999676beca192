"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json

import numpy as np

from relucert.model import (
    Dense,
    InputBox,
    Network,
    Property,
    Relu,
    load_network,
)

REPORT_SCHEMA = {
    "type": "object",
    "required": ["verdict", "stats", "mode", "epsilon", "label"],
    "properties": {
        "verdict": {"enum": ["safe", "unsafe", "undetermined"]},
        "witness": {"type": "array", "items": {"type": "number"}},
        "reason": {"type": "string"},
        "stats": {
            "type": "object",
            "required": ["subproblems", "lp_calls", "wall_time_s"],
            "properties": {
                "subproblems": {"type": "integer", "minimum": 0},
                "lp_calls": {"type": "integer", "minimum": 0},
                "wall_time_s": {"type": "number", "minimum": 0},
            },
        },
        "mode": {"enum": ["coupled", "independent", "zero-bounding"]},
        "epsilon": {"type": "number", "minimum": 0},
        "label": {"type": "integer", "minimum": 0},
    },
}


def two_dense_net() -> Network:
    """f1 = u, f2 = -0.5u, out = f1 + f2: cross-path cancellation fixture."""
    return Network(
        layers=(
            Dense(weights=np.array([[1.0], [-0.5]]), bias=np.zeros(2)),
            Dense(weights=np.array([[1.0, 1.0]]), bias=np.zeros(1)),
        ),
        input_size=1,
    )


def unit_box() -> InputBox:
    return InputBox(center=np.array([0.5]), epsilon=0.5)


def one_relu_net(out0_bias: float = 0.0) -> tuple[Network, InputBox, Property]:
    """x in [-1,1]; out0 = relu(x) + out0_bias, out1 = 0.5; true label 1."""
    net = Network(
        layers=(
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
            Relu(size=1),
            Dense(weights=np.array([[1.0], [0.0]]), bias=np.array([out0_bias, 0.5])),
        ),
        input_size=1,
    )
    box = InputBox(center=np.array([0.0]), epsilon=1.0)
    return net, box, Property(true_label=1)


def conv_pool_net(seed: int):
    """Small conv -> relu -> maxpool -> dense net over a non-negative box."""
    rng = np.random.default_rng(seed)
    r = int(rng.choice([3, 4]))
    n_in = r * r
    c_out = int(rng.integers(1, 3))
    doc = {
        "input_size": n_in,
        "layers": [
            {
                "type": "conv",
                "channels_out": c_out,
                "window": 2,
                "stride": 1,
                "weights": rng.standard_normal(c_out * 4).tolist(),
                "bias": rng.uniform(-0.5, 0.5, c_out).tolist(),
            },
            {"type": "relu"},
            {"type": "maxpool", "window": 2, "stride": 2},
        ],
    }
    conv_out = c_out * (r - 1) ** 2
    # pool output width from the grouping rule: per channel, a (r-1)x(r-1)
    # map pooled with window 2 stride 2
    oh = max((r - 1 - 2) // 2 + 1, 1) if r - 1 >= 2 else 1
    pool_w = c_out * oh * oh
    doc["layers"].append(
        {
            "type": "dense",
            "weights": rng.standard_normal((3, pool_w)).tolist(),
            "bias": rng.uniform(-1.0, 1.0, 3).tolist(),
        }
    )
    net = load_network(json.dumps(doc))
    assert net.layers[0].out_size == conv_out
    box = InputBox(
        center=rng.uniform(0.2, 0.8, n_in),
        epsilon=float(rng.uniform(0.05, 0.3)),
        clip=(0.0, 1.0),
    )
    return net, box, Property(true_label=int(rng.integers(0, 3)))


def naive_interval_outputs(net: Network, box: InputBox):
    """Plain per-edge interval arithmetic, written here rather than using
    any engine code, so engine exactness is checked independently."""
    lo, hi = box.lo.copy(), box.hi.copy()
    for layer in net.layers:
        if isinstance(layer, Dense):
            w = layer.weights
            new_lo = np.where(w > 0, w * lo[None, :], w * hi[None, :]).sum(axis=1)
            new_hi = np.where(w > 0, w * hi[None, :], w * lo[None, :]).sum(axis=1)
            lo, hi = new_lo + layer.bias, new_hi + layer.bias
        elif isinstance(layer, Relu):
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        else:
            lo = np.array([lo[list(g)].max() for g in layer.groups])
            hi = np.array([hi[list(g)].max() for g in layer.groups])
    return lo, hi
