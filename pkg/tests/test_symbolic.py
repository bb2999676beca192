"""Symbolic bound engine: relaxations, backward substitution, bound tables."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relucert.errors import DegenerateInterval, DimensionMismatch, MissingRelaxation
from relucert.model import Dense, InputBox, Network, Property, Relu, evaluate
from relucert.symbolic import (
    Classification,
    Interval,
    LinearExpression,
    RelaxationDescriptor,
    RelaxationMode,
    back_substitute,
    bounds_dump,
    classify_node,
    compute_layer_bounds,
    concretize,
    output_difference_upper_bound,
    relax_coupled,
    relax_lower_independent,
    relax_lower_zero_bounding,
    relax_upper_independent,
)

from helpers import two_dense_net, unit_box


straddling = st.tuples(
    st.floats(min_value=-100.0, max_value=-1e-6),
    st.floats(min_value=1e-6, max_value=100.0),
)


# --- concretization ----------------------------------------------------------


def test_concretize_exact_on_signed_coefficients():
    box = InputBox(center=np.array([0.0, 0.0]), epsilon=1.0)
    expr = LinearExpression(coeffs=np.array([2.0, -3.0]), offset=1.0)
    iv = concretize(expr, box)
    assert iv.lo == pytest.approx(-4.0)
    assert iv.hi == pytest.approx(6.0)


def test_concretize_dimension_check():
    box = InputBox(center=np.array([0.0]), epsilon=1.0)
    with pytest.raises(DimensionMismatch):
        concretize(LinearExpression(coeffs=np.zeros(2), offset=0.0), box)


@settings(max_examples=200, deadline=None)
@given(
    coeffs=st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    offset=st.floats(-10, 10),
    eps=st.floats(0.0, 5.0),
)
def test_concretize_is_exact_min_max(coeffs, offset, eps):
    coeffs = np.array(coeffs)
    box = InputBox(center=np.zeros(coeffs.size), epsilon=eps)
    expr = LinearExpression(coeffs=coeffs, offset=offset)
    iv = concretize(expr, box)
    rng = np.random.default_rng(0)
    xs = rng.uniform(box.lo, box.hi, size=(64, coeffs.size))
    xs = np.vstack([xs, box.lo, box.hi])
    vals = xs @ coeffs + offset
    assert vals.min() >= iv.lo - 1e-9
    assert vals.max() <= iv.hi + 1e-9
    # extrema are attained at box corners chosen by coefficient sign
    corner_hi = np.where(coeffs >= 0, box.hi, box.lo) @ coeffs + offset
    assert corner_hi == pytest.approx(iv.hi, abs=1e-9)


def test_classify_node():
    assert classify_node(Interval(0.0, 2.0)) is Classification.POSITIVE
    assert classify_node(Interval(-2.0, 0.0)) is Classification.NEGATIVE
    assert classify_node(Interval(-1.0, 1.0)) is Classification.OVERESTIMATED


# --- relaxation descriptors ---------------------------------------------------


def test_upper_independent_pinned_values():
    d = relax_upper_independent(-1.0, 5.4)
    assert d.alpha == pytest.approx(0.84375, abs=1e-12)
    assert d.beta == pytest.approx(0.84375, abs=1e-12)


def test_lower_independent_pinned_slope():
    d = relax_lower_independent(-2.7, 3.7)
    assert d.alpha == pytest.approx(0.578125, abs=1e-12)
    assert d.beta == 0.0


def test_zero_bounding_cases():
    assert relax_lower_zero_bounding(-4.5, 1.5).kind == "zero"
    assert relax_lower_zero_bounding(-1.5, 4.5).kind == "identity"
    assert relax_lower_zero_bounding(-2.0, 2.0).kind == "identity"  # tie


def test_coupled_shared_scale():
    up, low = relax_coupled(-2.7, 5.4)
    assert up.alpha == pytest.approx(2.0 / 3.0)
    assert low.alpha == pytest.approx(2.0 / 3.0)
    assert up.beta == pytest.approx(2.0 / 3.0 * 2.7)
    assert low.beta == 0.0


def test_symmetric_interval_coupled_slope_half():
    up, _ = relax_coupled(-3.0, 3.0)
    assert up.alpha == pytest.approx(0.5)


@pytest.mark.parametrize(
    "fn",
    [relax_upper_independent, relax_lower_independent, relax_lower_zero_bounding],
)
def test_relaxations_require_straddling(fn):
    with pytest.raises(ValueError):
        fn(1.0, 2.0)
    with pytest.raises(ValueError):
        fn(-2.0, -1.0)
    with pytest.raises(DegenerateInterval):
        fn(-1e-14, 1e-14)


@settings(max_examples=300, deadline=None)
@given(bounds=straddling)
def test_upper_relaxation_dominates_relu_on_interval(bounds):
    l, u = bounds
    d = relax_upper_independent(l, u)
    for t in np.linspace(l, u, 41):
        assert d.apply(t) >= max(0.0, t) - 1e-9


@settings(max_examples=300, deadline=None)
@given(bounds=straddling, t=st.floats(-1000, 1000))
def test_lower_relaxations_below_relu_globally(bounds, t):
    l, u = bounds
    for d in (
        relax_lower_independent(l, u),
        relax_lower_zero_bounding(l, u),
        relax_coupled(l, u)[1],
    ):
        assert d.apply(t) <= max(0.0, t) + 1e-9


@settings(max_examples=300, deadline=None)
@given(bounds=straddling)
def test_coupled_upper_dominates_relu(bounds):
    l, u = bounds
    up, _ = relax_coupled(l, u)
    for t in np.linspace(l, u, 41):
        assert up.apply(t) >= max(0.0, t) - 1e-9


def test_descriptor_slope_must_be_nonnegative():
    with pytest.raises(ValueError):
        RelaxationDescriptor.affine(-0.1, 0.0)


# --- backward substitution ----------------------------------------------------


def test_cross_path_cancellation():
    net = two_dense_net()
    expr = back_substitute(net, target=(1, 0), side="up", table=_table(net))
    # upper bound of f1 + f2 = 0.5u, not u - 0.5*0
    assert expr.coeffs == pytest.approx([0.5])
    assert expr.offset == pytest.approx(0.0)
    iv = concretize(expr, unit_box())
    assert iv.hi == pytest.approx(0.5)


def _table(net, mode=RelaxationMode.ZERO_BOUNDING, box=None):
    return compute_layer_bounds(net, box or unit_box(), mode)


def test_single_dense_layer_is_exact():
    net = Network(
        layers=(Dense(weights=np.array([[2.0], [-1.0]]), bias=np.array([0.5, 0.0])),),
        input_size=1,
    )
    table = _table(net)
    expr = back_substitute(net, target=(0, 0), side="up", table=table)
    assert expr.coeffs == pytest.approx([2.0])
    assert expr.offset == pytest.approx(0.5)
    low = back_substitute(net, target=(0, 1), side="low", table=table)
    assert low.coeffs == pytest.approx([-1.0])


def test_relu_composition_pinned_expression():
    # Dense(w=1) -> relu over [-1, 5.4] -> Dense(w=1)
    net = Network(
        layers=(
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
            Relu(size=1),
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
        ),
        input_size=1,
    )
    box = InputBox(center=np.array([2.2]), epsilon=3.2)  # x in [-1, 5.4]
    table = compute_layer_bounds(net, box, RelaxationMode.INDEPENDENT)
    expr = back_substitute(net, target=(2, 0), side="up", table=table)
    assert expr.coeffs == pytest.approx([0.84375], abs=1e-12)
    assert expr.offset == pytest.approx(0.84375, abs=1e-12)
    # sampled soundness of the expression
    rng = np.random.default_rng(0)
    xs = rng.uniform(box.lo, box.hi, size=1000)
    for x in xs:
        assert expr.coeffs[0] * x + expr.offset >= evaluate(net, [x])[0] - 1e-9


def test_back_substitute_rejects_non_dense_target():
    net, box, _ = _small_relu_net()
    table = compute_layer_bounds(net, box, RelaxationMode.ZERO_BOUNDING)
    with pytest.raises(MissingRelaxation):
        back_substitute(net, target=(1, 0), side="up", table=table)
    with pytest.raises(ValueError):
        back_substitute(net, target=(0, 0), side="sideways", table=table)


def _small_relu_net():
    net = Network(
        layers=(
            Dense(weights=np.array([[1.0], [-1.0]]), bias=np.array([0.0, 0.1])),
            Relu(size=2),
            Dense(weights=np.array([[1.0, 1.0]]), bias=np.zeros(1)),
        ),
        input_size=1,
    )
    return net, InputBox(center=np.array([0.0]), epsilon=1.0), Property(true_label=0)


# --- full-table computation ---------------------------------------------------


@pytest.mark.parametrize("mode", list(RelaxationMode))
def test_two_layer_fixture_output_interval(mode):
    table = compute_layer_bounds(two_dense_net(), unit_box(), mode)
    assert table.output_lo == pytest.approx([0.0], abs=1e-12)
    assert table.output_hi == pytest.approx([0.5], abs=1e-12)


@pytest.mark.parametrize("mode", list(RelaxationMode))
def test_post_relu_upper_is_preserved(mode):
    net = Network(
        layers=(
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
            Relu(size=1),
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
        ),
        input_size=1,
    )
    box = InputBox(center=np.array([2.2]), epsilon=3.2)  # preact in [-1, 5.4]
    table = compute_layer_bounds(net, box, mode)
    assert table.output_hi[0] == pytest.approx(5.4, abs=1e-9)


def test_node_view_and_overestimated_listing():
    net, box, _ = _small_relu_net()
    table = compute_layer_bounds(net, box, RelaxationMode.ZERO_BOUNDING)
    nb = table.node(0, 0)
    assert nb.classification is Classification.OVERESTIMATED
    assert nb.preact_interval.lo == pytest.approx(-1.0)
    assert nb.preact_interval.hi == pytest.approx(1.0)
    assert set(table.overestimated_nodes()) == {(1, 0), (1, 1)}


def test_split_clamps_tighten_and_declassify():
    net, box, _ = _small_relu_net()
    table = compute_layer_bounds(
        net, box, RelaxationMode.ZERO_BOUNDING, splits=[(1, 0, "nonneg")]
    )
    nb = table.node(0, 0)
    assert nb.preact_interval.lo == 0.0
    assert nb.classification is Classification.POSITIVE
    assert (1, 0) not in table.overestimated_nodes()


def test_contradictory_split_marks_infeasible():
    net = Network(
        layers=(
            Dense(weights=np.array([[1.0]]), bias=np.array([5.0])),  # always >= 4
            Relu(size=1),
            Dense(weights=np.array([[1.0]]), bias=np.zeros(1)),
        ),
        input_size=1,
    )
    box = InputBox(center=np.array([0.0]), epsilon=1.0)
    table = compute_layer_bounds(
        net, box, RelaxationMode.ZERO_BOUNDING, splits=[(1, 0, "nonpos")]
    )
    assert table.infeasible


def test_zero_bounding_never_wider_than_independent_here():
    rng = np.random.default_rng(42)
    for _ in range(20):
        w1 = rng.standard_normal((6, 3))
        w2 = rng.standard_normal((2, 6))
        net = Network(
            layers=(
                Dense(weights=w1, bias=rng.uniform(-1, 1, 6)),
                Relu(size=6),
                Dense(weights=w2, bias=rng.uniform(-1, 1, 2)),
            ),
            input_size=3,
        )
        box = InputBox(center=rng.uniform(-1, 1, 3), epsilon=0.5)
        widths = {}
        for mode in RelaxationMode:
            widths[mode] = compute_layer_bounds(net, box, mode).mean_output_width
        # decoupled modes use the exact per-side extrema; they can only
        # improve on the shared coupled scale for the upper side
        assert widths[RelaxationMode.INDEPENDENT] <= widths[RelaxationMode.COUPLED] + 1e-9


def test_sound_bounds_by_sampling_all_modes():
    rng = np.random.default_rng(3)
    net = Network(
        layers=(
            Dense(weights=rng.standard_normal((5, 2)), bias=rng.uniform(-1, 1, 5)),
            Relu(size=5),
            Dense(weights=rng.standard_normal((4, 5)), bias=rng.uniform(-1, 1, 4)),
            Relu(size=4),
            Dense(weights=rng.standard_normal((2, 4)), bias=rng.uniform(-1, 1, 2)),
        ),
        input_size=2,
    )
    box = InputBox(center=np.zeros(2), epsilon=1.0)
    xs = rng.uniform(box.lo, box.hi, size=(500, 2))
    outs = np.array([evaluate(net, x) for x in xs])
    for mode in RelaxationMode:
        table = compute_layer_bounds(net, box, mode)
        assert np.all(outs >= table.output_lo[None, :] - 1e-9)
        assert np.all(outs <= table.output_hi[None, :] + 1e-9)


def test_output_difference_upper_bound_sound():
    net, box, prop = _small_relu_net()
    net2 = Network(
        layers=net.layers[:-1]
        + (Dense(weights=np.array([[1.0, 1.0], [0.5, -0.5]]), bias=np.zeros(2)),),
        input_size=1,
    )
    table = compute_layer_bounds(net2, box, RelaxationMode.ZERO_BOUNDING)
    ub = output_difference_upper_bound(net2, table, target=1, true_label=0)
    rng = np.random.default_rng(0)
    for x in rng.uniform(box.lo, box.hi, size=200):
        out = evaluate(net2, [x])
        assert out[1] - out[0] <= ub + 1e-9


def test_bounds_dump_structure():
    net, box, _ = _small_relu_net()
    table = compute_layer_bounds(net, box, RelaxationMode.COUPLED)
    dump = bounds_dump(table)
    assert dump["mode"] == "coupled"
    assert "0" in dump["layers"] and "2" in dump["layers"]
    node = dump["layers"]["0"][0]
    assert set(node) == {"lo", "hi", "class"}
    assert dump["mean_output_width"] == pytest.approx(table.mean_output_width)


def test_mode_parse_roundtrip():
    for mode in RelaxationMode:
        assert RelaxationMode.parse(mode.value) is mode
    with pytest.raises(ValueError):
        RelaxationMode.parse("loose")
