"""Scalar-generic tensor math: reverse-mode gradients and jet propagation."""

import numpy as np

from ..errors import NonFiniteError
from . import primitives as ops
from .core import MAX_JET_ORDER, Box, shape_of, value_of
from .jets import Jet, jet_propagate, nested_derivative_oracle
from .reverse import forward_reverse, value_and_grad

Tensor = np.ndarray


def tensor(data):
    """Construct a contiguous float64 tensor, rejecting non-finite entries."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 0:
        arr = np.ascontiguousarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor")
    return arr


__all__ = [
    "Box",
    "Jet",
    "MAX_JET_ORDER",
    "Tensor",
    "forward_reverse",
    "jet_propagate",
    "nested_derivative_oracle",
    "ops",
    "shape_of",
    "tensor",
    "value_and_grad",
    "value_of",
]
