"""LP-guided branch-and-bound verification driver.

Each subproblem fixes the phase of some ReLU nodes (nonneg/nonpos) and is
bounded by the symbolic engine. A subproblem is safe when the symbolic
upper bound of the adversarial margin is non-positive, or when the
triangle-relaxation LP proves it. Otherwise the LP optimum is tried as a
concrete counterexample; if it does not reproduce the violation, the
highest-scoring overestimated node is split and both children re-enqueued.
"""

from __future__ import annotations

import heapq
import itertools
import math
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .errors import AlreadySplit, DimensionMismatch, NumericalFailure
from .model import Dense, InputBox, Network, Property, Relu, evaluate
from .symbolic import (
    BoundsTable,
    Classification,
    RelaxationMode,
    compute_layer_bounds,
    output_difference_upper_bound,
)

NONNEG = "nonneg"
NONPOS = "nonpos"


@dataclass(frozen=True)
class Subproblem:
    """One branch of the search tree: a set of fixed ReLU phases."""

    splits: frozenset = frozenset()  # (relu layer position, node, phase)
    depth: int = 0
    priority: float = math.inf

    def split_nodes(self) -> set:
        return {(layer, node) for layer, node, _ in self.splits}


@dataclass(frozen=True)
class Verdict:
    status: str  # "safe" | "unsafe" | "undetermined"
    witness: Optional[np.ndarray] = None
    reason: Optional[str] = None  # for undetermined
    subproblems: int = 0
    lp_calls: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class SearchConfig:
    mode: RelaxationMode = RelaxationMode.ZERO_BOUNDING
    global_timeout: Optional[float] = 3600.0
    lp_budget: Optional[float] = 30.0
    workers: int = 1
    max_subproblems: Optional[int] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def check_candidate(
    net: Network, candidate: np.ndarray, box: InputBox, prop: Property
) -> bool:
    """True iff the (box-clamped) candidate concretely violates the property.

    A tie out_j == out_true counts as a violation: argmax classification
    is no longer guaranteed to pick the true label.
    """
    x = np.clip(np.asarray(candidate, dtype=float), box.lo, box.hi)
    out = evaluate(net, x)
    t = prop.true_label
    return bool(any(out[j] >= out[t] for j in range(len(out)) if j != t))


def build_relaxation_lp(
    net: Network,
    table: BoundsTable,
    sub: Subproblem,
    box: InputBox,
    objective: tuple[int, int],
) -> lp.LPProblem:
    """Triangle-relaxation LP maximizing out_j - out_true for one target.

    Variables: inputs, then one pre- and one post-activation variable per
    ReLU node, then one variable per pooling output. Overestimated nodes
    get the triangle x^ >= 0, x^ >= x, x^ <= a(x - l); stable nodes the
    exact equality; split nodes additionally their sign constraint.
    """
    target, true_label = objective
    split_map = {(layer, node): phase for layer, node, phase in sub.splits}

    n_inputs = net.input_size
    bounds: list[tuple[float, float]] = [
        (float(lo), float(hi)) for lo, hi in zip(box.lo, box.hi)
    ]
    constraints: list[tuple[np.ndarray, str, float]] = []
    num_vars = n_inputs

    def grow(row_len: int):
        nonlocal num_vars
        idx = num_vars
        num_vars += row_len
        return idx

    # cur: affine representation (A, c) of the current level over LP vars
    cur_A = np.eye(n_inputs)
    cur_c = np.zeros(n_inputs)

    def pad(A: np.ndarray) -> np.ndarray:
        if A.shape[1] < num_vars:
            A = np.hstack([A, np.zeros((A.shape[0], num_vars - A.shape[1]))])
        return A

    for pos, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            cur_A = layer.weights @ cur_A
            cur_c = layer.weights @ cur_c + layer.bias
        elif isinstance(layer, Relu):
            entry = table.entries[pos - 1]
            width = layer.size
            pre_idx = grow(width)
            post_idx = grow(width)
            cur_A = pad(cur_A)
            for i in range(width):
                lo, hi = float(entry.pre_lo[i]), float(entry.pre_hi[i])
                bounds.append((lo, hi))  # pre var
            for i in range(width):
                lo, hi = float(entry.pre_lo[i]), float(entry.pre_hi[i])
                bounds.append((max(lo, 0.0), max(hi, 0.0)))  # post var
            for i in range(width):
                pre, post = pre_idx + i, post_idx + i
                # pre variable equals the affine row of this level
                row = np.zeros(num_vars)
                row[: cur_A.shape[1]] = cur_A[i]
                row[pre] -= 1.0
                constraints.append((row, lp.EQ, -float(cur_c[i])))
                phase = split_map.get((pos, i))
                if phase == NONNEG:
                    sign = np.zeros(num_vars)
                    sign[pre] = 1.0
                    constraints.append((sign, lp.GE, 0.0))
                elif phase == NONPOS:
                    sign = np.zeros(num_vars)
                    sign[pre] = 1.0
                    constraints.append((sign, lp.LE, 0.0))
                cls = entry.classes[i]
                link = np.zeros(num_vars)
                if cls == Classification.POSITIVE.value:
                    link[post] = 1.0
                    link[pre] = -1.0
                    constraints.append((link, lp.EQ, 0.0))
                elif cls == Classification.NEGATIVE.value:
                    link[post] = 1.0
                    constraints.append((link, lp.EQ, 0.0))
                else:
                    lo, hi = float(entry.pre_lo[i]), float(entry.pre_hi[i])
                    ge = np.zeros(num_vars)
                    ge[post], ge[pre] = 1.0, -1.0
                    constraints.append((ge, lp.GE, 0.0))  # post >= pre
                    alpha = hi / (hi - lo)
                    ub = np.zeros(num_vars)
                    ub[post], ub[pre] = 1.0, -alpha
                    constraints.append((ub, lp.LE, -alpha * lo))
                    # post >= 0 is the variable's lower bound
            new_A = np.zeros((width, num_vars))
            new_A[:, post_idx : post_idx + width] = np.eye(width)
            cur_A, cur_c = new_A, np.zeros(width)
        else:  # MaxPool over the post vars of the preceding relu
            entry = table.entries[pos]
            n_groups = len(layer.groups)
            prev_A, prev_c = cur_A, cur_c  # identity over relu post vars
            pool_idx = grow(n_groups)
            prev_A = pad(prev_A)
            for g in range(n_groups):
                bounds.append((float(entry.lo[g]), float(entry.hi[g])))
            for g, members in enumerate(entry.surviving):
                for m in members:
                    row = np.zeros(num_vars)
                    row[pool_idx + g] = 1.0
                    row[: prev_A.shape[1]] -= prev_A[m]
                    constraints.append((row, lp.GE, float(prev_c[m])))
                # y <= concrete upper bound is the variable's upper bound
            new_A = np.zeros((n_groups, num_vars))
            new_A[:, pool_idx : pool_idx + n_groups] = np.eye(n_groups)
            cur_A, cur_c = new_A, np.zeros(n_groups)

    obj_row = np.zeros(num_vars)
    final = pad(cur_A)
    obj_row[: final.shape[1]] = final[target] - final[true_label]
    offset = float(cur_c[target] - cur_c[true_label])

    problem = lp.LPProblem(
        num_vars=num_vars,
        bounds=bounds,
        objective=obj_row,
        objective_offset=offset,
    )
    for row, rel, rhs in constraints:
        padded = np.zeros(num_vars)
        padded[: row.shape[0]] = row
        problem.add_constraint(padded, rel, rhs)
    return problem


def _gradient_scores(
    net: Network, table: BoundsTable, target: int, true_label: int
) -> dict[tuple[int, int], float]:
    """Interval-gradient magnitude per ReLU node for the split heuristic."""
    final = net.layers[-1]
    g_lo = final.weights[target] - final.weights[true_label]
    g_hi = g_lo.copy()
    scores: dict[tuple[int, int], float] = {}
    for pos in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[pos]
        if isinstance(layer, Dense):
            w = layer.weights
            prod_lo = np.minimum(w * g_lo[:, None], w * g_hi[:, None])
            prod_hi = np.maximum(w * g_lo[:, None], w * g_hi[:, None])
            g_lo, g_hi = prod_lo.sum(axis=0), prod_hi.sum(axis=0)
        elif isinstance(layer, Relu):
            entry = table.entries.get(pos - 1)
            for i in range(layer.size):
                scores[(pos, i)] = max(abs(float(g_lo[i])), abs(float(g_hi[i])))
            if entry is not None:
                factors_keep = entry.classes == Classification.POSITIVE.value
                factors_drop = entry.classes == Classification.NEGATIVE.value
                new_lo = np.where(factors_drop, 0.0, np.minimum(g_lo, 0.0))
                new_hi = np.where(factors_drop, 0.0, np.maximum(g_hi, 0.0))
                g_lo = np.where(factors_keep, g_lo, new_lo)
                g_hi = np.where(factors_keep, g_hi, new_hi)
        else:  # MaxPool: spread the pool gradient over surviving members
            entry = table.entries[pos]
            in_lo = np.zeros(layer.in_size)
            in_hi = np.zeros(layer.in_size)
            for g, members in enumerate(entry.surviving):
                for m in members:
                    in_lo[m] += min(0.0, float(g_lo[g]))
                    in_hi[m] += max(0.0, float(g_hi[g]))
            g_lo, g_hi = in_lo, in_hi
    return scores


def split_priority(
    net: Network,
    table: BoundsTable,
    target: int,
    true_label: int,
) -> list[tuple[float, int, int]]:
    """Overestimated nodes ranked by gradient magnitude times interval depth."""
    scores = _gradient_scores(net, table, target, true_label)
    ranked = []
    for layer, node in table.overestimated_nodes():
        entry = table.entries[layer - 1]
        l, u = float(entry.pre_lo[node]), float(entry.pre_hi[node])
        score = scores.get((layer, node), 0.0) * min(abs(l), u)
        ranked.append((score, layer, node))
    ranked.sort(key=lambda t: (-t[0], t[1], t[2]))
    return ranked


def split(sub: Subproblem, node: tuple[int, int], priority: float = 0.0):
    """Two children fixing the node nonneg / nonpos."""
    layer, idx = node
    if (layer, idx) in sub.split_nodes():
        raise AlreadySplit(f"node {node} already split in this subproblem")
    child = lambda phase: Subproblem(
        splits=sub.splits | {(layer, idx, phase)},
        depth=sub.depth + 1,
        priority=priority,
    )
    return child(NONNEG), child(NONPOS)


class _SearchState:
    """Shared worklist plus counters; safe under the worker lock."""

    def __init__(self, deadline, max_subproblems):
        self.heap: list = []
        self.counter = itertools.count()
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.in_flight = 0
        self.witness: Optional[np.ndarray] = None
        self.exhausted = False
        self.timed_out = False
        self.subproblems = 0
        self.lp_calls = 0
        self.deadline = deadline
        self.max_subproblems = max_subproblems

    def push(self, target: int, sub: Subproblem):
        key = (-sub.priority, -sub.depth, next(self.counter))
        heapq.heappush(self.heap, (key, target, sub))

    def stop(self) -> bool:
        return self.witness is not None or self.timed_out or self.exhausted


def _process(
    net: Network,
    box: InputBox,
    prop: Property,
    cfg: SearchConfig,
    state: _SearchState,
    target: int,
    sub: Subproblem,
) -> list[tuple[int, Subproblem]]:
    """Handle one subproblem; returns children to enqueue (empty if resolved)."""
    table = compute_layer_bounds(net, box, cfg.mode, sub)
    if table.infeasible:
        return []
    if output_difference_upper_bound(net, table, target, prop.true_label) <= 0:
        return []
    problem = build_relaxation_lp(net, table, sub, box, (target, prop.true_label))
    with state.lock:
        state.lp_calls += 1
    try:
        outcome = lp.solve(problem, budget=cfg.lp_budget)
    except NumericalFailure:
        outcome = lp.LPOutcome(status=lp.TIMED_OUT)
    if outcome.status == lp.INFEASIBLE:
        return []
    if outcome.is_optimal:
        if outcome.value <= 0:
            return []
        candidate = outcome.point[: net.input_size]
        if check_candidate(net, candidate, box, prop):
            with state.lock:
                if state.witness is None:
                    state.witness = np.clip(candidate, box.lo, box.hi)
                state.cond.notify_all()
            return []
    # inconclusive (loose relaxation, unbounded, or LP timeout): refine
    ranked = [
        (score, layer, node)
        for score, layer, node in split_priority(net, table, target, prop.true_label)
        if (layer, node) not in sub.split_nodes()
    ]
    if not ranked:
        if outcome.is_optimal and outcome.value <= lp.FEAS_TOL:
            return []  # fully split: the LP is exact up to its tolerance
        with state.lock:
            state.exhausted = True  # no refinement left; cannot decide
            state.cond.notify_all()
        return []
    score, layer, node = ranked[0]
    a, b = split(sub, (layer, node), priority=score)
    return [(target, a), (target, b)]


def _worker(net, box, prop, cfg, state: _SearchState):
    while True:
        with state.cond:
            while True:
                if state.stop():
                    state.cond.notify_all()
                    return
                if state.heap:
                    break
                if state.in_flight == 0:
                    state.cond.notify_all()
                    return
                state.cond.wait(timeout=0.05)
            if state.deadline is not None and time.monotonic() > state.deadline:
                state.timed_out = True
                state.cond.notify_all()
                return
            if (
                state.max_subproblems is not None
                and state.subproblems >= state.max_subproblems
            ):
                state.exhausted = True
                state.cond.notify_all()
                return
            _, target, sub = heapq.heappop(state.heap)
            state.subproblems += 1
            state.in_flight += 1
        try:
            children = _process(net, box, prop, cfg, state, target, sub)
        finally:
            with state.cond:
                state.in_flight -= 1
                for tgt, child in children:
                    state.push(tgt, child)
                state.cond.notify_all()


def verify(
    net: Network, box: InputBox, prop: Property, cfg: Optional[SearchConfig] = None
) -> Verdict:
    """Decide robustness of the network over the box.

    Safe only when every subproblem of every adversarial target is proven
    safe; unsafe requires a concretely re-checked witness; everything else
    (timeout, budget exhaustion) folds into undetermined.
    """
    if cfg is None:
        cfg = SearchConfig()
    if box.size != net.input_size:
        raise DimensionMismatch("input box does not match the network input size")
    if not (0 <= prop.true_label < net.output_size):
        raise DimensionMismatch("true_label out of range")
    start = time.monotonic()

    if np.array_equal(box.lo, box.hi):  # degenerate box: one evaluation decides
        violated = check_candidate(net, box.lo, box, prop)
        return Verdict(
            status="unsafe" if violated else "safe",
            witness=box.lo.copy() if violated else None,
            subproblems=1,
            wall_time=time.monotonic() - start,
        )

    deadline = None if cfg.global_timeout is None else start + cfg.global_timeout
    state = _SearchState(deadline, cfg.max_subproblems)
    for target in range(net.output_size):
        if target != prop.true_label:
            state.push(target, Subproblem())

    if cfg.workers == 1:
        _worker(net, box, prop, cfg, state)
    else:
        threads = [
            threading.Thread(target=_worker, args=(net, box, prop, cfg, state))
            for _ in range(cfg.workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    wall = time.monotonic() - start
    if state.witness is not None:
        return Verdict(
            status="unsafe",
            witness=state.witness,
            subproblems=state.subproblems,
            lp_calls=state.lp_calls,
            wall_time=wall,
        )
    if state.timed_out or state.exhausted:
        return Verdict(
            status="undetermined",
            reason="global_timeout" if state.timed_out else "exhausted_budget",
            subproblems=state.subproblems,
            lp_calls=state.lp_calls,
            wall_time=wall,
        )
    return Verdict(
        status="safe",
        subproblems=state.subproblems,
        lp_calls=state.lp_calls,
        wall_time=wall,
    )
