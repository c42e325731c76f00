"""Dense float32 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a vector-Jacobian
closure on the output node; the implicit graph is the tape. backward()
walks it once in reverse topological order with pass-local adjoints and
accumulates into the .grad of reachable leaves, so two backward calls
without zeroing add up exactly twice.
"""

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import TapeError


class Tensor:
    """Row-major float32 array plus the autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _vjp: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad else None
        )
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def needs_grad(self) -> bool:
        return self.requires_grad or self._vjp is not None

    def backward(self) -> None:
        backward(self)

    # Arithmetic sugar; the implementations live in ops.py and are attached
    # at import time to keep this module free of operator definitions.
    def __repr__(self) -> str:
        tag = "param" if self.requires_grad else ("node" if self._vjp else "const")
        return f"Tensor({tag}, shape={self.shape})"


class Parameter(Tensor):
    """Learnable leaf tensor with a unique name and persistent gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; result ends with root."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.needs_grad():
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad of every reachable Parameter with d(loss)/d(param).

    Adjoints of interior nodes are pass-local; only leaf gradients persist
    and accumulate across calls.
    """
    if loss._vjp is None and not loss.requires_grad:
        raise TapeError("backward called on a node detached from any recorded operation")
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = adjoint.pop(id(node), None)
        if grad is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += grad
        if node._vjp is None:
            continue
        for parent, pgrad in zip(node._parents, node._vjp(grad)):
            if pgrad is None or not parent.needs_grad():
                continue
            acc = adjoint.get(id(parent))
            # Never accumulate in place: a vjp may hand the same array (or a
            # view of the adjoint) to several parents.
            adjoint[id(parent)] = pgrad if acc is None else acc + pgrad


def collect_named(params: Iterable[Parameter]) -> dict[str, Parameter]:
    """Index parameters by name, enforcing uniqueness."""
    named: dict[str, Parameter] = {}
    for p in params:
        if p.name in named:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        named[p.name] = p
    return named
