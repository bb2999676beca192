"""Symbolic bound engine.

Every node gets two independent linear bounds over the input variables:
an upper expression and a lower expression. Bounds are obtained by
backward substitution: starting from a linear functional over some layer,
coefficients are pushed layer by layer toward the inputs, replacing
post-activation bound expressions by relaxed pre-activation expressions.
Throughout the traversal two coefficient maps are kept per layer: one
multiplying upper-bound expressions and one multiplying lower-bound
expressions. For the upper side the former is non-negative and the latter
non-positive (mirrored for the lower side); all relaxation slopes are
non-negative, so the sign discipline is preserved at every step. At the
input layer upper and lower expressions coincide with the input symbols,
so both maps merge into a single coefficient vector. That merge is what
cancels opposing contributions of paths that share an input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DegenerateInterval,
    DimensionMismatch,
    EmptyWindow,
    MissingRelaxation,
    PoolWithoutRelu,
)
from .model import Dense, InputBox, MaxPool, Network, Relu

DEGENERATE_SPAN = 1e-12


@dataclass(frozen=True)
class LinearExpression:
    """coeffs . x + offset over the input variables, one coeff per input."""

    coeffs: np.ndarray
    offset: float


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


class Classification(enum.Enum):
    POSITIVE = "pos"
    NEGATIVE = "neg"
    OVERESTIMATED = "over"


class RelaxationMode(enum.Enum):
    COUPLED = "coupled"
    INDEPENDENT = "independent"
    ZERO_BOUNDING = "zero-bounding"

    @classmethod
    def parse(cls, name: str) -> "RelaxationMode":
        for mode in cls:
            if mode.value == name:
                return mode
        raise ValueError(f"unknown relaxation mode {name!r}")


@dataclass(frozen=True)
class RelaxationDescriptor:
    """One side of a ReLU relaxation: t -> alpha * t + beta, alpha >= 0."""

    kind: str  # "identity" | "zero" | "affine"
    alpha: float = 1.0
    beta: float = 0.0

    @classmethod
    def identity(cls) -> "RelaxationDescriptor":
        return cls(kind="identity", alpha=1.0, beta=0.0)

    @classmethod
    def zero(cls) -> "RelaxationDescriptor":
        return cls(kind="zero", alpha=0.0, beta=0.0)

    @classmethod
    def affine(cls, alpha: float, beta: float) -> "RelaxationDescriptor":
        if alpha < 0:
            raise ValueError("relaxation slope must be non-negative")
        return cls(kind="affine", alpha=alpha, beta=beta)

    def apply(self, t):
        return self.alpha * t + self.beta


@dataclass(frozen=True)
class NodeBounds:
    """Per-node view: concrete pre-activation interval plus both descriptors."""

    preact_interval: Interval
    upper_relax: RelaxationDescriptor
    lower_relax: RelaxationDescriptor
    classification: Classification


def concretize(expr: LinearExpression, box: InputBox) -> Interval:
    """Exact min/max of a linear expression over the box."""
    c = expr.coeffs
    if c.shape != box.lo.shape:
        raise DimensionMismatch(
            f"expression over {c.shape[0]} vars, box has {box.lo.shape[0]}"
        )
    pos = np.maximum(c, 0.0)
    neg = np.minimum(c, 0.0)
    lo = expr.offset + pos @ box.lo + neg @ box.hi
    hi = expr.offset + pos @ box.hi + neg @ box.lo
    return Interval(lo=float(lo), hi=float(hi))


def classify_node(iv: Interval) -> Classification:
    if iv.lo >= 0:
        return Classification.POSITIVE
    if iv.hi <= 0:
        return Classification.NEGATIVE
    return Classification.OVERESTIMATED


def _check_straddling(l: float, u: float) -> None:
    if not (l < 0 < u):
        raise ValueError(f"expected l < 0 < u, got [{l}, {u}]")
    if u - l < DEGENERATE_SPAN:
        raise DegenerateInterval(f"interval [{l}, {u}] too narrow to relax")


def relax_upper_independent(l: float, u: float) -> RelaxationDescriptor:
    """Tightest linear upper bound on max{0, t} over [l, u]: through (l,0), (u,u)."""
    _check_straddling(l, u)
    alpha = u / (u - l)
    return RelaxationDescriptor.affine(alpha, -alpha * l)


def relax_lower_independent(l: float, u: float) -> RelaxationDescriptor:
    """Scaled lower bound minimizing the maximal distance to max{0, t}."""
    _check_straddling(l, u)
    return RelaxationDescriptor.affine(u / (u - l), 0.0)


def relax_lower_zero_bounding(l: float, u: float) -> RelaxationDescriptor:
    """Keep the lower expression unless l + u < 0, else replace it by 0.

    Minimizes the sum of the errors in the negative and positive regimes
    rather than their maximum. The tie l + u = 0 resolves to identity:
    both choices are optimal and identity keeps symbolic information.
    """
    _check_straddling(l, u)
    if l + u >= 0:
        return RelaxationDescriptor.identity()
    return RelaxationDescriptor.zero()


def relax_coupled(
    l_low: float, u_up: float
) -> tuple[RelaxationDescriptor, RelaxationDescriptor]:
    """Shared-scale relaxation: both sides scaled by u_up / (u_up - l_low)."""
    _check_straddling(l_low, u_up)
    sigma = u_up / (u_up - l_low)
    return (
        RelaxationDescriptor.affine(sigma, -sigma * l_low),
        RelaxationDescriptor.affine(sigma, 0.0),
    )


def prune_dominated(window_intervals: Iterable[Interval]) -> list[int]:
    """Drop window members whose max is strictly below another member's min."""
    ivs = list(window_intervals)
    if not ivs:
        raise EmptyWindow("pooling window has no members")
    best_lo = max(iv.lo for iv in ivs)
    survivors = [j for j, iv in enumerate(ivs) if iv.hi >= best_lo]
    if not survivors:  # cannot happen: the max-lo member always satisfies hi >= lo
        raise EmptyWindow("dominance pruning removed every member")
    return survivors


def maxpool_bounds(
    weights: np.ndarray, biases: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Row bounds for max over the (surviving) dense rows of a pooling window.

    upper_row[i] = max{w_r,i over rows, 0}, lower_row[i] = min{..., 0}; both
    multiply the *upper* bound expressions of the layer feeding those rows
    (valid because its values are non-negative, so a negative coefficient
    times an upper bound yields a lower bound). Biases are treated as a
    weight on a constant-1 pseudo input: max for the upper, min for the
    lower constant.
    """
    rows = np.atleast_2d(np.asarray(weights, dtype=float))
    if rows.shape[0] == 0:
        raise EmptyWindow("no surviving rows in pooling window")
    b = np.asarray(biases, dtype=float).reshape(-1)
    upper_row = np.maximum(rows.max(axis=0), 0.0)
    lower_row = np.minimum(rows.min(axis=0), 0.0)
    return upper_row, lower_row, float(b.max()), float(b.min())


# --- bounds table -----------------------------------------------------------


@dataclass
class DenseEntry:
    """Pre-activation bounds of a dense layer (split clamps applied)."""

    pre_lo: np.ndarray  # min of the lower expression
    pre_hi: np.ndarray  # max of the upper expression
    up_lo: np.ndarray  # extrema of the upper expression
    up_hi: np.ndarray
    low_lo: np.ndarray  # extrema of the lower expression
    low_hi: np.ndarray
    classes: np.ndarray  # values from Classification


@dataclass
class ReluEntry:
    """Per-node relaxation slopes/offsets for both sides."""

    alpha_up: np.ndarray
    beta_up: np.ndarray
    alpha_low: np.ndarray
    beta_low: np.ndarray
    upper: list[RelaxationDescriptor]
    lower: list[RelaxationDescriptor]


@dataclass
class PoolEntry:
    """Bound rows of a max-pooling layer over the pre-dense layer."""

    upper_rows: np.ndarray  # (groups, prior_width), entries >= 0
    lower_rows: np.ndarray  # entries <= 0
    upper_consts: np.ndarray
    lower_consts: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    surviving: list[list[int]]  # member indices (into the relu layer) per group
    prior_level: int


@dataclass
class BoundsTable:
    """All per-layer bound data for one subproblem."""

    net: Network
    box: InputBox
    mode: RelaxationMode
    entries: dict  # layer position -> DenseEntry | ReluEntry | PoolEntry
    infeasible: bool = False
    output_lo: Optional[np.ndarray] = None
    output_hi: Optional[np.ndarray] = None

    @property
    def mean_output_width(self) -> float:
        return float(np.mean(self.output_hi - self.output_lo))

    def node(self, layer: int, index: int) -> NodeBounds:
        """NodeBounds view for one pre-activation node of a dense layer."""
        entry = self.entries[layer]
        if not isinstance(entry, DenseEntry):
            raise MissingRelaxation(f"layer {layer} is not a dense layer")
        relu_pos = layer + 1
        relu = self.entries.get(relu_pos)
        if isinstance(relu, ReluEntry):
            upper, lower = relu.upper[index], relu.lower[index]
        else:
            upper = lower = RelaxationDescriptor.identity()
        return NodeBounds(
            preact_interval=Interval(
                float(entry.pre_lo[index]), float(entry.pre_hi[index])
            ),
            upper_relax=upper,
            lower_relax=lower,
            classification=Classification(entry.classes[index]),
        )

    def overestimated_nodes(self) -> list[tuple[int, int]]:
        """(relu layer position, node index) of every overestimated ReLU node."""
        out = []
        for pos, layer in enumerate(self.net.layers):
            if not isinstance(layer, Relu):
                continue
            dense_entry = self.entries.get(pos - 1)
            if isinstance(dense_entry, DenseEntry):
                for i in np.flatnonzero(
                    dense_entry.classes == Classification.OVERESTIMATED.value
                ):
                    out.append((pos, int(i)))
        return out


def _normalize_splits(splits) -> dict[tuple[int, int], str]:
    table: dict[tuple[int, int], str] = {}
    if splits is None:
        return table
    items = getattr(splits, "splits", splits)
    for layer, node, phase in items:
        table[(int(layer), int(node))] = phase
    return table


_SIGN_SLACK = 1e-9


def _substitute_to_inputs(
    net: Network,
    level: int,
    c_pos: np.ndarray,
    c_neg: np.ndarray,
    const: np.ndarray,
    side: str,
    entries: dict,
    split_map: dict[tuple[int, int], str],
) -> tuple[np.ndarray, np.ndarray]:
    """Push coefficient maps from value level ``level`` down to the inputs.

    ``c_pos`` multiplies same-side bound expressions (upper for side="up"),
    ``c_neg`` opposite-side ones. Returns (coeffs over inputs, consts).
    """
    c_pos = np.array(c_pos, dtype=float)
    c_neg = np.array(c_neg, dtype=float)
    const = np.array(const, dtype=float)
    i = level
    while i > 0:
        layer = net.layers[i - 1]
        if isinstance(layer, Dense):
            w_pos = np.maximum(layer.weights, 0.0)
            w_neg = np.minimum(layer.weights, 0.0)
            const = const + (c_pos + c_neg) @ layer.bias
            c_pos, c_neg = (
                c_pos @ w_pos + c_neg @ w_neg,
                c_pos @ w_neg + c_neg @ w_pos,
            )
            i -= 1
        elif isinstance(layer, Relu):
            entry = entries.get(i - 1)
            if not isinstance(entry, ReluEntry):
                raise MissingRelaxation(f"no relaxation stored for relu layer {i - 1}")
            a_up, b_up = entry.alpha_up, entry.beta_up
            a_low, b_low = entry.alpha_low, entry.beta_low
            for (lpos, node), phase in split_map.items():
                if lpos == i - 1:
                    a_up = a_up.copy() if a_up is entry.alpha_up else a_up
                    b_up = b_up.copy() if b_up is entry.beta_up else b_up
                    a_low = a_low.copy() if a_low is entry.alpha_low else a_low
                    b_low = b_low.copy() if b_low is entry.beta_low else b_low
                    val = 1.0 if phase == "nonneg" else 0.0
                    a_up[node] = a_low[node] = val
                    b_up[node] = b_low[node] = 0.0
            if side == "up":
                const = const + c_pos @ b_up + c_neg @ b_low
                c_pos = c_pos * a_up
                c_neg = c_neg * a_low
            else:
                const = const + c_pos @ b_low + c_neg @ b_up
                c_pos = c_pos * a_low
                c_neg = c_neg * a_up
            i -= 1
        else:  # MaxPool: jump over the relu and dense baked into its rows
            entry = entries.get(i - 1)
            if not isinstance(entry, PoolEntry):
                raise MissingRelaxation(f"no bounds stored for pool layer {i - 1}")
            width = entry.upper_rows.shape[1]
            if side == "up":
                const = const + c_pos @ entry.upper_consts + c_neg @ entry.lower_consts
                # both pool rows are over the prior upper expressions; the mix
                # stays non-negative, i.e. a same-side coefficient map
                mixed = c_pos @ entry.upper_rows + c_neg @ entry.lower_rows
                c_pos, c_neg = mixed, np.zeros((mixed.shape[0], width))
            else:
                const = const + c_pos @ entry.lower_consts + c_neg @ entry.upper_consts
                mixed = c_pos @ entry.lower_rows + c_neg @ entry.upper_rows
                c_pos, c_neg = np.zeros((mixed.shape[0], width)), mixed
            i = entry.prior_level
        assert np.all(c_pos >= -_SIGN_SLACK) and np.all(c_neg <= _SIGN_SLACK), (
            "coefficient sign invariant violated during backward substitution"
        )
    return c_pos + c_neg, const


def _concretize_rows(
    coeffs: np.ndarray, consts: np.ndarray, box: InputBox
) -> tuple[np.ndarray, np.ndarray]:
    pos = np.maximum(coeffs, 0.0)
    neg = np.minimum(coeffs, 0.0)
    lo = consts + pos @ box.lo + neg @ box.hi
    hi = consts + pos @ box.hi + neg @ box.lo
    return lo, hi


def back_substitute(
    net: Network,
    target: tuple[int, int],
    side: str,
    table: "BoundsTable",
    splits=None,
) -> LinearExpression:
    """Sound input-space bound expression for one pre-activation node.

    ``target`` is (dense layer position, node index); ``side`` is "up" or
    "low". Split constraints override the stored descriptors (nonneg ->
    identity, nonpos -> zero on both sides).
    """
    layer_pos, node = target
    layer = net.layers[layer_pos]
    if not isinstance(layer, Dense):
        raise MissingRelaxation(f"target layer {layer_pos} is not dense")
    if side not in ("up", "low"):
        raise ValueError(f"side must be 'up' or 'low', got {side!r}")
    width = layer.out_size
    unit = np.zeros((1, width))
    unit[0, node] = 1.0
    coeffs, consts = _substitute_to_inputs(
        net,
        level=layer_pos + 1,
        c_pos=unit,
        c_neg=np.zeros((1, width)),
        const=np.zeros(1),
        side=side,
        entries=table.entries,
        split_map=_normalize_splits(splits),
    )
    return LinearExpression(coeffs=coeffs[0], offset=float(consts[0]))


def _side_descriptor_upper(
    mode: RelaxationMode, up_lo, up_hi, low_lo, low_hi
) -> RelaxationDescriptor:
    if mode is RelaxationMode.COUPLED:
        l, u = low_lo, up_hi
    else:
        l, u = up_lo, up_hi
    if l >= 0:
        return RelaxationDescriptor.identity()
    if u <= 0:
        return RelaxationDescriptor.zero()
    if u - l < DEGENERATE_SPAN:
        # straddling but numerically flat: resolve per the degenerate rule
        return (
            RelaxationDescriptor.zero()
            if abs(u) < DEGENERATE_SPAN
            else RelaxationDescriptor.identity()
        )
    if mode is RelaxationMode.COUPLED:
        return relax_coupled(l, u)[0]
    return relax_upper_independent(l, u)


def _side_descriptor_lower(
    mode: RelaxationMode, up_lo, up_hi, low_lo, low_hi
) -> RelaxationDescriptor:
    if mode is RelaxationMode.COUPLED:
        l, u = low_lo, up_hi
    else:
        l, u = low_lo, low_hi
    if l >= 0:
        return RelaxationDescriptor.identity()
    if u <= 0:
        return RelaxationDescriptor.zero()
    if u - l < DEGENERATE_SPAN:
        return (
            RelaxationDescriptor.zero()
            if abs(u) < DEGENERATE_SPAN
            else RelaxationDescriptor.identity()
        )
    if mode is RelaxationMode.COUPLED:
        return relax_coupled(l, u)[1]
    if mode is RelaxationMode.ZERO_BOUNDING:
        return relax_lower_zero_bounding(l, u)
    return relax_lower_independent(l, u)


def _classify_clamped(lo: float, hi: float) -> str:
    if lo >= 0:
        return Classification.POSITIVE.value
    if hi <= 0:
        return Classification.NEGATIVE.value
    if hi - lo < DEGENERATE_SPAN:
        return (
            Classification.NEGATIVE.value
            if abs(hi) < DEGENERATE_SPAN
            else Classification.POSITIVE.value
        )
    return Classification.OVERESTIMATED.value


def compute_layer_bounds(
    net: Network,
    box: InputBox,
    mode: RelaxationMode,
    splits=None,
) -> BoundsTable:
    """Bound every node of the network for one subproblem.

    Dense layers get per-node upper/lower expressions back-substituted to
    the inputs and concretized; relu layers get per-node descriptors built
    from those intervals; pooling layers get dominance-pruned bound rows.
    If a split clamp empties some node's interval, the subproblem is
    marked infeasible and bound computation stops.
    """
    if box.size != net.input_size:
        raise DimensionMismatch(
            f"box over {box.size} vars, network expects {net.input_size}"
        )
    split_map = _normalize_splits(splits)
    table = BoundsTable(net=net, box=box, mode=mode, entries={})
    for pos, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            width = layer.out_size
            eye = np.eye(width)
            zero = np.zeros((width, width))
            zconst = np.zeros(width)
            coeffs_up, const_up = _substitute_to_inputs(
                net, pos + 1, eye, zero, zconst, "up", table.entries, split_map
            )
            coeffs_low, const_low = _substitute_to_inputs(
                net, pos + 1, eye, zero, zconst, "low", table.entries, split_map
            )
            up_lo, up_hi = _concretize_rows(coeffs_up, const_up, box)
            low_lo, low_hi = _concretize_rows(coeffs_low, const_low, box)
            pre_lo = low_lo.copy()
            pre_hi = up_hi.copy()
            classes = np.empty(width, dtype=object)
            followed_by_relu = pos + 1 < len(net.layers) and isinstance(
                net.layers[pos + 1], Relu
            )
            for i in range(width):
                phase = split_map.get((pos + 1, i)) if followed_by_relu else None
                if phase == "nonneg":
                    if pre_hi[i] < 0:
                        table.infeasible = True
                        return table
                    pre_lo[i] = max(pre_lo[i], 0.0)
                    low_lo[i] = max(low_lo[i], 0.0)
                elif phase == "nonpos":
                    if pre_lo[i] > 0:
                        table.infeasible = True
                        return table
                    pre_hi[i] = min(pre_hi[i], 0.0)
                    up_hi[i] = min(up_hi[i], 0.0)
                classes[i] = _classify_clamped(pre_lo[i], pre_hi[i])
            table.entries[pos] = DenseEntry(
                pre_lo=pre_lo,
                pre_hi=pre_hi,
                up_lo=up_lo,
                up_hi=up_hi,
                low_lo=low_lo,
                low_hi=low_hi,
                classes=classes,
            )
            if pos == len(net.layers) - 1:
                table.output_lo = pre_lo
                table.output_hi = pre_hi
        elif isinstance(layer, Relu):
            if pos == 0:
                raise MissingRelaxation("relu as the first layer is not supported")
            prev = table.entries.get(pos - 1)
            if not isinstance(prev, DenseEntry):
                raise MissingRelaxation(
                    f"relu at layer {pos} must follow a dense layer"
                )
            width = layer.size
            upper: list[RelaxationDescriptor] = []
            lower: list[RelaxationDescriptor] = []
            for i in range(width):
                phase = split_map.get((pos, i))
                if phase == "nonneg":
                    upper.append(RelaxationDescriptor.identity())
                    lower.append(RelaxationDescriptor.identity())
                elif phase == "nonpos":
                    upper.append(RelaxationDescriptor.zero())
                    lower.append(RelaxationDescriptor.zero())
                else:
                    args = (
                        mode,
                        float(prev.up_lo[i]),
                        float(prev.up_hi[i]),
                        float(prev.low_lo[i]),
                        float(prev.low_hi[i]),
                    )
                    upper.append(_side_descriptor_upper(*args))
                    lower.append(_side_descriptor_lower(*args))
            table.entries[pos] = ReluEntry(
                alpha_up=np.array([d.alpha for d in upper]),
                beta_up=np.array([d.beta for d in upper]),
                alpha_low=np.array([d.alpha for d in lower]),
                beta_low=np.array([d.beta for d in lower]),
                upper=upper,
                lower=lower,
            )
        else:  # MaxPool
            table.entries[pos] = _pool_entry(net, pos, box, table, split_map)
    return table


def _pool_entry(
    net: Network,
    pos: int,
    box: InputBox,
    table: BoundsTable,
    split_map: dict,
) -> PoolEntry:
    layer = net.layers[pos]
    if pos < 2 or not isinstance(net.layers[pos - 1], Relu) or not isinstance(
        net.layers[pos - 2], Dense
    ):
        raise PoolWithoutRelu(
            f"pool at layer {pos} requires a dense + relu prefix for its bound rows"
        )
    dense = net.layers[pos - 2]
    dense_entry = table.entries[pos - 2]
    prior_level = pos - 2
    # The row bounds are only sound when the values feeding the dense rows
    # are non-negative: a relu/pool output, or an input box with lo >= 0.
    if prior_level == 0:
        if np.any(box.lo < 0):
            raise PoolWithoutRelu(
                "pool bound rows need non-negative inputs to the preceding dense "
                "layer; the input box allows negative values"
            )
    elif not isinstance(net.layers[prior_level - 1], (Relu, MaxPool)):
        raise PoolWithoutRelu(
            "pool bound rows need the preceding dense layer to consume "
            "relu or pool outputs"
        )

    n_groups = len(layer.groups)
    prior_width = dense.in_size
    upper_rows = np.zeros((n_groups, prior_width))
    lower_rows = np.zeros((n_groups, prior_width))
    upper_consts = np.zeros(n_groups)
    lower_consts = np.zeros(n_groups)
    surviving: list[list[int]] = []
    member_lo = dense_entry.pre_lo
    member_hi = dense_entry.pre_hi
    for g, members in enumerate(layer.groups):
        ivs = [Interval(float(member_lo[m]), float(member_hi[m])) for m in members]
        keep = prune_dominated(ivs)
        kept_members = [members[k] for k in keep]
        surviving.append(list(kept_members))
        u_row, l_row, u_c, l_c = maxpool_bounds(
            dense.weights[kept_members], dense.bias[list(kept_members)]
        )
        upper_rows[g] = u_row
        lower_rows[g] = l_row
        # The pool output is a max of relu values, hence >= 0: zero acts as an
        # implicit window member. Clamping the constant keeps the upper
        # expression pointwise non-negative (its row is >= 0 over non-negative
        # values), so it dominates max{0, max of the rows} and not merely the
        # possibly-negative row maximum. The lower expression needs no clamp:
        # it sits below the best row, which sits below the pool output.
        upper_consts[g] = max(u_c, 0.0)
        lower_consts[g] = l_c

    cu, ku = _substitute_to_inputs(
        net, prior_level, upper_rows, np.zeros_like(upper_rows), upper_consts,
        "up", table.entries, split_map,
    )
    cl, kl = _substitute_to_inputs(
        net, prior_level, np.zeros_like(lower_rows), lower_rows, lower_consts,
        "low", table.entries, split_map,
    )
    _, hi = _concretize_rows(cu, ku, box)
    lo, _ = _concretize_rows(cl, kl, box)
    # tighten with the naive member-interval bound on the pooled relu outputs
    member_bound_lo = np.array(
        [max(max(member_lo[m], 0.0) for m in surv) for surv in surviving]
    )
    member_bound_hi = np.array(
        [max(max(member_hi[m], 0.0) for m in surv) for surv in surviving]
    )
    lo = np.maximum(lo, member_bound_lo)
    hi = np.minimum(hi, member_bound_hi)
    return PoolEntry(
        upper_rows=upper_rows,
        lower_rows=lower_rows,
        upper_consts=upper_consts,
        lower_consts=lower_consts,
        lo=lo,
        hi=np.maximum(hi, lo),
        surviving=surviving,
        prior_level=prior_level,
    )


def output_difference_upper_bound(
    net: Network, table: BoundsTable, target: int, true_label: int
) -> float:
    """Concrete upper bound of out_target - out_true over the box."""
    final = net.layers[-1]
    if not isinstance(final, Dense):
        raise MissingRelaxation("final layer must be dense")
    row = final.weights[target] - final.weights[true_label]
    const = float(final.bias[target] - final.bias[true_label])
    coeffs, consts = _substitute_to_inputs(
        net,
        level=len(net.layers) - 1,
        c_pos=np.maximum(row, 0.0)[None, :],
        c_neg=np.minimum(row, 0.0)[None, :],
        const=np.array([const]),
        side="up",
        entries=table.entries,
        split_map={},
    )
    _, hi = _concretize_rows(coeffs, consts, table.box)
    return float(hi[0])


def bounds_dump(table: BoundsTable) -> dict:
    """JSON-ready dump: per layer, per node lo/hi/class + mean output width."""
    layers = {}
    for pos, entry in sorted(table.entries.items()):
        if isinstance(entry, DenseEntry):
            layers[str(pos)] = [
                {
                    "lo": float(entry.pre_lo[i]),
                    "hi": float(entry.pre_hi[i]),
                    "class": entry.classes[i],
                }
                for i in range(entry.pre_lo.shape[0])
            ]
        elif isinstance(entry, PoolEntry):
            layers[str(pos)] = [
                {"lo": float(entry.lo[i]), "hi": float(entry.hi[i]), "class": "pos"}
                for i in range(entry.lo.shape[0])
            ]
    return {
        "layers": layers,
        "mean_output_width": table.mean_output_width,
        "mode": table.mode.value,
    }
