"""Reverse-mode differentiation on an append-only tape.

The tape records one node per primitive call, in program order. A pullback
walks the nodes in reverse exactly once, accumulating cotangents in fixed node
order so results are bit-reproducible. Pullback arithmetic goes through the
generic primitives, so a pullback running while an enclosing trace is active
is itself recorded (gradients of gradients, jets of gradients).
"""

from __future__ import annotations

import numpy as np

from ..errors import UnsupportedError
from .core import Box, Trace, as_value, bind, leaves_of, map_structure, shape_of
from .primitives import add


class Node:
    __slots__ = ("prim", "vals", "kwargs", "ans", "parents", "index")

    def __init__(self, prim, vals, kwargs, ans, parents, index):
        self.prim = prim
        self.vals = vals
        self.kwargs = kwargs
        self.ans = ans
        self.parents = parents
        self.index = index


class TapeBox(Box):
    __slots__ = ("value", "node")

    def __init__(self, trace, value, node):
        self._trace = trace
        self.value = value
        self.node = node

    def primal_value(self):
        return self.value

    @property
    def shape(self):
        return shape_of(self.value)


class TapeTrace(Trace):
    def __init__(self):
        super().__init__()
        self.nodes = []

    def new_leaf(self, value):
        node = Node(None, None, None, value, (), len(self.nodes))
        self.nodes.append(node)
        return TapeBox(self, value, node)

    def process(self, prim, args, kwargs):
        def unbox(x):
            if isinstance(x, TapeBox) and x._trace is self:
                return x.value
            return x

        vals = map_structure(unbox, args)
        parents = tuple(
            leaf.node if isinstance(leaf, TapeBox) and leaf._trace is self else None
            for leaf in leaves_of(args)
        )
        ans = bind(prim, vals, kwargs)
        node = Node(prim, vals, kwargs, ans, parents, len(self.nodes))
        self.nodes.append(node)
        return TapeBox(self, ans, node)


def _backward(tape, out_node, seed, leaf_nodes):
    grads = {out_node.index: seed}
    for node in reversed(tape.nodes):
        if node.prim is None:
            continue
        g = grads.pop(node.index, None)
        if g is None:
            continue
        rule = node.prim.vjp_arg
        if rule is None:
            raise UnsupportedError(
                f"primitive '{node.prim.name}' has no pullback rule"
            )
        for i, parent in enumerate(node.parents):
            if parent is None:
                continue
            cot = rule(i, g, node.ans, node.vals, node.kwargs)
            if cot is None:
                continue
            prev = grads.get(parent.index)
            grads[parent.index] = cot if prev is None else add(prev, cot)
    out = []
    for leaf in leaf_nodes:
        g = grads.get(leaf.index)
        if g is None:
            g = np.zeros(shape_of(leaf.ans))
        out.append(g)
    return tuple(out)


def forward_reverse(f, *inputs):
    """Evaluate f on the inputs, returning (value, pullback).

    The pullback maps a cotangent of the output to one gradient per input,
    shapes matching. It may be invoked repeatedly; each call replays the tape
    once in fixed order.
    """
    trace = TapeTrace()
    in_vals = [as_value(x) for x in inputs]
    boxes = [trace.new_leaf(v) for v in in_vals]
    leaf_nodes = [b.node for b in boxes]
    out = f(*boxes)
    if isinstance(out, TapeBox) and out._trace is trace:
        out_val, out_node = out.value, out.node
    else:
        out_val, out_node = out, None

    def pullback(cotangent):
        if out_node is None:
            return tuple(np.zeros(shape_of(v)) for v in in_vals)
        seed = cotangent
        if not isinstance(seed, Box):
            seed = np.broadcast_to(
                np.asarray(seed, dtype=np.float64), shape_of(out_val)
            )
        return _backward(trace, out_node, seed, leaf_nodes)

    return out_val, pullback


def value_and_grad(f, *inputs):
    """Value of f plus the gradient tuple from a unit cotangent."""
    value, pullback = forward_reverse(f, *inputs)
    return value, pullback(1.0)
