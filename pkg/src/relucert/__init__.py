"""Robustness verifier for feed-forward ReLU networks.

Decoupled symbolic linear bounds per node, zero-bounding lower relaxation,
max-pooling bound rows with dominance pruning, and an LP-guided
branch-and-bound search over ReLU splits.
"""

from .model import (
    Dense,
    InputBox,
    MaxPool,
    Network,
    Property,
    Relu,
    evaluate,
    load_input_spec,
    load_network,
)
from .search import SearchConfig, Subproblem, Verdict, verify
from .symbolic import (
    Classification,
    Interval,
    LinearExpression,
    RelaxationDescriptor,
    RelaxationMode,
    compute_layer_bounds,
    concretize,
)

__all__ = [
    "Classification",
    "Dense",
    "InputBox",
    "Interval",
    "LinearExpression",
    "MaxPool",
    "Network",
    "Property",
    "RelaxationDescriptor",
    "RelaxationMode",
    "Relu",
    "SearchConfig",
    "Subproblem",
    "Verdict",
    "compute_layer_bounds",
    "concretize",
    "evaluate",
    "load_input_spec",
    "load_network",
    "verify",
]

__version__ = "0.1.0"
