"""Smearing graph ensembles, peeling, density evolution and wavelet recovery."""
from .ensemble import (
    Shared,
    SmearGraph,
    SmearPattern,
    Staged,
    degree_histogram,
    from_stream_starts,
    sample_graph,
)
from .thresholds import BracketError, ThresholdEstimate

__version__ = "0.1.0"

__all__ = [
    "Shared",
    "Staged",
    "SmearGraph",
    "SmearPattern",
    "sample_graph",
    "from_stream_starts",
    "degree_histogram",
    "BracketError",
    "ThresholdEstimate",
    "__version__",
]
