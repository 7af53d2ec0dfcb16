"""Graph nodes and reverse-mode accumulation."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


def as_value(x) -> np.ndarray:
    """Coerce to a contiguous array of 32-bit reals.

    64-bit input is kept as-is so the finite-difference oracle can run
    the same graph in double precision.
    """
    arr = np.asarray(x)
    if arr.dtype == np.float64:
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=np.float32)


class Node:
    """A value in the computation graph.

    ``backward_fn`` maps the gradient of this node to a tuple of gradients,
    one per parent (``None`` for parents that need nothing).
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: Optional[Callable] = None,
        op: str = "leaf",
        requires_grad: bool = False,
        name: str = "",
    ):
        self.value = as_value(value)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = np.zeros_like(self.value) if (requires_grad and not self.parents) else None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad[...] = 0

    def detach(self) -> "Node":
        return Node(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape}, dtype={self.value.dtype})"


def parameter(value, name: str = "") -> Node:
    return Node(value, requires_grad=True, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _topo_order(root: Node) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Leaf gradients accumulate across calls: running backward twice without
    zeroing doubles them. Interior gradients are released once propagated.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    interior = {}
    interior[id(root)] = np.ones_like(root.value)
    for node in reversed(order):
        g = interior.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.value)
                node.grad += g.astype(node.value.dtype, copy=False)
            continue
        if g is None:
            continue
        grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.value.shape:
                raise RuntimeError(
                    f"{node.op}: gradient shape {pg.shape} != parent shape {parent.value.shape}"
                )
            key = id(parent)
            if key in interior:
                interior[key] = interior[key] + pg
            else:
                interior[key] = pg
