"""Independent ground-truth engines for testing.

Exact verification enumerates ReLU activation patterns: within one pattern
the network is affine, so a single LP per pattern and adversarial target
decides feasibility and the exact margin maximum. Stability of nodes is
pre-filtered with naive interval arithmetic (deliberately not the symbolic
engine) so only genuinely ambiguous nodes are enumerated.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .errors import TooManyNodes, UnsupportedLayer
from .model import (
    Dense,
    InputBox,
    MaxPool,
    Network,
    Property,
    Relu,
    evaluate,
    evaluate_batch,
)
from .search import check_candidate

PATTERN_CAP = 20
ACTIVE = "active"
INACTIVE = "inactive"


@dataclass(frozen=True)
class ActivationPattern:
    """Phase assignment for every ReLU node: (layer position, node) -> phase."""

    phases: dict

    def phase(self, layer: int, node: int) -> str:
        return self.phases[(layer, node)]


@dataclass(frozen=True)
class OracleVerdict:
    status: str  # "safe" | "unsafe"
    witness: Optional[np.ndarray] = None


def _naive_interval_bounds(net: Network, box: InputBox):
    """Per-layer intervals by plain interval arithmetic (no symbols)."""
    lo, hi = box.lo.copy(), box.hi.copy()
    out = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            w_pos = np.maximum(layer.weights, 0.0)
            w_neg = np.minimum(layer.weights, 0.0)
            lo, hi = (
                w_pos @ lo + w_neg @ hi + layer.bias,
                w_pos @ hi + w_neg @ lo + layer.bias,
            )
        elif isinstance(layer, Relu):
            out.append((lo.copy(), hi.copy()))  # pre-activation of this relu
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
            continue
        else:
            raise UnsupportedLayer("exact enumeration does not handle max-pooling")
        out.append(None)
    return out


def _relu_nodes(net: Network) -> list[tuple[int, int]]:
    nodes = []
    for pos, layer in enumerate(net.layers):
        if isinstance(layer, Relu):
            nodes.extend((pos, i) for i in range(layer.size))
        elif isinstance(layer, MaxPool):
            raise UnsupportedLayer("exact enumeration does not handle max-pooling")
    return nodes


def _pattern_lp(
    net: Network,
    box: InputBox,
    phases: dict,
    target: int,
    true_label: int,
) -> lp.LPProblem:
    """Exact LP for one activation pattern: the network is affine inside it."""
    n_inputs = net.input_size
    bounds = [(float(lo), float(hi)) for lo, hi in zip(box.lo, box.hi)]
    num_vars = n_inputs
    constraints = []
    cur_A = np.eye(n_inputs)
    cur_c = np.zeros(n_inputs)
    for pos, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            cur_A = layer.weights @ cur_A
            cur_c = layer.weights @ cur_c + layer.bias
        else:  # Relu
            width = layer.size
            new_A = np.zeros((width, num_vars))
            for i in range(width):
                row = np.zeros(num_vars)
                row[: cur_A.shape[1]] = cur_A[i]
                if phases[(pos, i)] == ACTIVE:
                    constraints.append((row, lp.GE, -float(cur_c[i])))
                    new_A[i] = row
                else:
                    constraints.append((row, lp.LE, -float(cur_c[i])))
            active_c = np.array(
                [
                    float(cur_c[i]) if phases[(pos, i)] == ACTIVE else 0.0
                    for i in range(width)
                ]
            )
            cur_A, cur_c = new_A, active_c
    obj = cur_A[target] - cur_A[true_label]
    offset = float(cur_c[target] - cur_c[true_label])
    problem = lp.LPProblem(
        num_vars=num_vars,
        bounds=bounds,
        objective=obj,
        objective_offset=offset,
    )
    for row, rel, rhs in constraints:
        problem.add_constraint(row, rel, rhs)
    return problem


def exact_verify(
    net: Network, box: InputBox, prop: Property, workers: int = 1
) -> OracleVerdict:
    """Exact verdict by activation-pattern enumeration (<= 20 ReLU nodes).

    Unsafe iff some feasible pattern attains out_j - out_true >= 0 for some
    target j, with the LP optimum concretely re-checked as a witness.
    """
    nodes = _relu_nodes(net)
    if len(nodes) > PATTERN_CAP:
        raise TooManyNodes(f"{len(nodes)} ReLU nodes exceeds the 2^{PATTERN_CAP} cap")

    # fix nodes that plain interval arithmetic proves stable
    intervals = _naive_interval_bounds(net, box)
    fixed: dict[tuple[int, int], str] = {}
    free: list[tuple[int, int]] = []
    for pos, i in nodes:
        lo, hi = intervals[pos]
        if lo[i] >= 0:
            fixed[(pos, i)] = ACTIVE
        elif hi[i] <= 0:
            fixed[(pos, i)] = INACTIVE
        else:
            free.append((pos, i))

    targets = [j for j in range(net.output_size) if j != prop.true_label]

    def scan(assignments) -> Optional[np.ndarray]:
        for combo in assignments:
            phases = dict(fixed)
            phases.update({node: ph for node, ph in zip(free, combo)})
            for target in targets:
                problem = _pattern_lp(net, box, phases, target, prop.true_label)
                outcome = lp.solve(problem, budget=None)
                if outcome.is_optimal and outcome.value >= 0:
                    candidate = np.clip(
                        outcome.point[: net.input_size], box.lo, box.hi
                    )
                    if check_candidate(net, candidate, box, prop):
                        return candidate
        return None

    all_patterns = list(itertools.product((ACTIVE, INACTIVE), repeat=len(free)))
    if workers <= 1:
        witness = scan(all_patterns)
    else:
        chunks = [all_patterns[k::workers] for k in range(workers)]
        witness = None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(scan, chunks):
                if result is not None and witness is None:
                    witness = result
    if witness is not None:
        return OracleVerdict(status="unsafe", witness=witness)
    return OracleVerdict(status="safe")


def sample_attack(
    net: Network,
    box: InputBox,
    prop: Property,
    n: int,
    rng: Optional[np.random.Generator] = None,
) -> Optional[np.ndarray]:
    """Random sampling plus coordinate-wise hill climbing; None proves nothing."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = rng or np.random.default_rng(0)
    t = prop.true_label

    def margin(x: np.ndarray) -> float:
        out = evaluate(net, x)
        others = np.delete(out, t)
        return float(others.max() - out[t])

    xs = rng.uniform(box.lo, box.hi, size=(n, box.size))
    outs = evaluate_batch(net, xs)
    others = np.delete(outs, t, axis=1)
    margins = others.max(axis=1) - outs[:, t]
    best_idx = int(np.argmax(margins))
    if margins[best_idx] >= 0:
        return xs[best_idx]

    # coordinate descent from the best sample
    x = xs[best_idx].copy()
    best = float(margins[best_idx])
    for _ in range(3):
        improved = False
        for d in range(box.size):
            original = x[d]
            step = (box.hi[d] - box.lo[d]) / 4.0
            for cand in (box.lo[d], box.hi[d], original - step, original + step):
                x[d] = float(np.clip(cand, box.lo[d], box.hi[d]))
                m = margin(x)
                if m > best:
                    best = m
                    improved = True
                    if best >= 0:
                        return x
                    original = x[d]
            x[d] = original
        if not improved:
            break
    return None


def sample_soundness(
    net: Network,
    box: InputBox,
    table,
    n: int,
    rng: Optional[np.random.Generator] = None,
    slack: float = 1e-6,
) -> list[tuple[int, int, int]]:
    """(layer, node, sample) triples where a concrete value escapes its bounds."""
    from .model import forward_trace
    from .symbolic import DenseEntry, PoolEntry

    rng = rng or np.random.default_rng(0)
    xs = rng.uniform(box.lo, box.hi, size=(n, box.size))
    trace = forward_trace(net, xs)
    violations = []
    for pos, entry in table.entries.items():
        if isinstance(entry, DenseEntry):
            lo, hi = entry.pre_lo, entry.pre_hi
        elif isinstance(entry, PoolEntry):
            lo, hi = entry.lo, entry.hi
        else:
            continue
        vals = trace[pos]
        bad = (vals < lo[None, :] - slack) | (vals > hi[None, :] + slack)
        for sample, node in zip(*np.nonzero(bad)):
            violations.append((pos, int(node), int(sample)))
    return violations


def random_network(
    rng: np.random.Generator,
    depth: Optional[int] = None,
    max_width: int = 16,
    n_inputs: Optional[int] = None,
    n_outputs: Optional[int] = None,
) -> Network:
    """Small seeded ReLU network: normal weights, uniform [-1, 1] biases."""
    depth = depth if depth is not None else int(rng.integers(2, 5))
    n_inputs = n_inputs if n_inputs is not None else int(rng.integers(2, 6))
    n_outputs = n_outputs if n_outputs is not None else int(rng.integers(2, 5))
    sizes = [n_inputs]
    layers = []
    for _ in range(depth - 1):
        width = int(rng.integers(2, max_width + 1))
        layers.append(
            Dense(
                weights=rng.standard_normal((width, sizes[-1])),
                bias=rng.uniform(-1.0, 1.0, size=width),
            )
        )
        layers.append(Relu(size=width))
        sizes.append(width)
    layers.append(
        Dense(
            weights=rng.standard_normal((n_outputs, sizes[-1])),
            bias=rng.uniform(-1.0, 1.0, size=n_outputs),
        )
    )
    return Network(layers=tuple(layers), input_size=n_inputs)


def random_instance(
    seed: int,
    depth: Optional[int] = None,
    max_width: int = 16,
    epsilon_range: tuple[float, float] = (0.1, 1.0),
) -> tuple[Network, InputBox, Property]:
    """Seeded (network, box, property) triple at enumeration-friendly scale."""
    rng = np.random.default_rng(seed)
    net = random_network(rng, depth=depth, max_width=max_width)
    center = rng.uniform(-1.0, 1.0, size=net.input_size)
    epsilon = float(rng.uniform(*epsilon_range))
    box = InputBox(center=center, epsilon=epsilon)
    label = int(rng.integers(0, net.output_size))
    return net, box, Property(true_label=label)
