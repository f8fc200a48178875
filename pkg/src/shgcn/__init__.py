"""Hypergraph convolution for social recommendation from user-user-item triplets."""

from shgcn.graph import Dataset, Hypergraph, build_hypergraph, DataError
from shgcn.model import ModelState, forward, param_count
from shgcn.baseline import MfState

__all__ = [
    "Dataset",
    "Hypergraph",
    "build_hypergraph",
    "DataError",
    "ModelState",
    "MfState",
    "forward",
    "param_count",
]

__version__ = "0.1.0"
