"""
Reverse-mode differentiation tape.

Values flow through :class:`Var` handles. Every differentiable op in
``pahs.tensorcore.ops`` computes its result with a pure kernel and, when the
tape is recording, appends a node holding the parent handles and a
vector-Jacobian product closure. Nodes are appended in execution order, so
walking the list backwards is a reverse topological order.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pahs.errors import ContractError

logger = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Var:
    """Handle to a value living on a tape"""

    __slots__ = ("value", "index", "tape", "name")

    def __init__(
        self, value: np.ndarray, index: Optional[int], tape: "Tape", name=None
    ):
        self.value = value
        self.index = index
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def requires_grad(self) -> bool:
        return self.index is not None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.value.shape}, dtype={self.value.dtype})"


@dataclass
class _Node:
    op: str
    out: int
    parents: Tuple[Var, ...]
    vjp: Vjp


class Tape:
    """Single-writer record of one forward pass.

    With ``record=False`` ops only compute values, which keeps memory flat
    during long inference runs.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: List[_Node] = []
        self._leaves: Dict[str, Var] = {}
        self._next = 0
        self.visited: List[int] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def _new_index(self) -> int:
        self._next += 1
        return self._next

    def leaf(self, value: np.ndarray, name: Optional[str] = None) -> Var:
        """Register a differentiable input (a parameter or a watched tensor)"""
        if not self.record:
            return Var(value, None, self, name)
        var = Var(value, self._new_index(), self, name)
        if name is not None:
            if name in self._leaves:
                raise ContractError(f"leaf {name!r} registered twice on one tape")
            self._leaves[name] = var
        return var

    def constant(self, value: np.ndarray) -> Var:
        return Var(np.asarray(value), None, self)

    def apply(
        self, op: str, value: np.ndarray, parents: Sequence[Var], vjp: Vjp
    ) -> Var:
        """Wrap an op result, recording it when any parent needs a gradient"""
        if not self.record or not any(p.requires_grad for p in parents):
            return Var(value, None, self)
        out = Var(value, self._new_index(), self)
        self._nodes.append(_Node(op, out.index, tuple(parents), vjp))
        return out

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every named leaf on this tape.

        Leaves the loss does not depend on get exact zeros.
        """
        if not self.record:
            raise ContractError("backward on a tape that is not recording")
        if loss.tape is not self:
            raise ContractError("loss was computed on a different tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")

        grads: Dict[int, np.ndarray] = {}
        if loss.index is not None:
            grads[loss.index] = np.ones(loss.value.shape, dtype=np.float64)
        self.visited = []
        for node in reversed(self._nodes):
            g = grads.pop(node.out, None)
            if g is None:
                continue
            self.visited.append(node.out)
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or parent.index is None:
                    continue
                if pg.shape != parent.value.shape:
                    raise ContractError(
                        f"{node.op}: gradient shape {pg.shape} != {parent.value.shape}"
                    )
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = np.asarray(pg, dtype=np.float64)

        result = {}
        for name, var in self._leaves.items():
            g = grads.get(var.index)
            if g is None:
                result[name] = np.zeros_like(var.value)
            else:
                result[name] = g.astype(var.value.dtype, copy=False)
        logger.debug(
            f"backward visited {len(self.visited)} of {len(self._nodes)} nodes"
        )
        return result


def backward(tape: Tape, loss: Var) -> Dict[str, np.ndarray]:
    """Module-level alias of :meth:`Tape.backward`"""
    return tape.backward(loss)
