"""Streaming weak supervision.

Learns which labeling sources depend on each other from a first batch of
votes, then keeps source accuracies current with an exponentially weighted
update as later batches arrive, and turns votes into probabilistic labels.
"""

from .encoding import LabelBatch, LabelDomain, encode_one_vs_rest, validate_batch
from .errors import StreamWSError
from .estimator import EstimatorConfig, EstimatorState, new_state, process_batch
from .inference import hard_label, posterior, posterior_batch
from .structure import DependencyStructure

__all__ = [
    "DependencyStructure",
    "EstimatorConfig",
    "EstimatorState",
    "LabelBatch",
    "LabelDomain",
    "StreamWSError",
    "encode_one_vs_rest",
    "hard_label",
    "new_state",
    "posterior",
    "posterior_batch",
    "process_batch",
    "validate_batch",
]

__version__ = "0.1.0"
