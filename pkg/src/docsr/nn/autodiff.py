"""Minimal reverse-mode autodiff over numpy arrays.

A Var wraps an ndarray and remembers how it was produced; backward() walks
the graph in reverse topological order and accumulates gradients into the
leaves. Only what the SR networks, the detector and the losses need is
implemented; the op set lives in docsr.nn.ops.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=True, name=""):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Var":
        return Var(self.data, requires_grad=False, name=self.name)

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf."""
        order: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))

        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        self.accumulate(seed)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


def as_var(x, requires_grad=False, name="") -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x), requires_grad=requires_grad, name=name)


def constant(x, name="") -> Var:
    return Var(np.asarray(x), requires_grad=False, name=name)
