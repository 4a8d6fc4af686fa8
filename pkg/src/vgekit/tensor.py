"""Dense float64 tensors with a define-by-run reverse-mode autodiff tape.

The graph is rebuilt for every batch: parameters enter as leaf tensors
wrapping the current parameter arrays, ops append nodes to the tape, and
``Graph.backward`` walks the tape in reverse creation order (which is a
valid topological order by construction). Tensors are immutable once
created and every op validates that its output is finite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Node:
    """One recorded operation: an output value plus a vector-Jacobian closure."""

    __slots__ = ("op", "inputs", "value", "vjp", "needs_grad", "idx")

    def __init__(self, op, inputs, value, vjp, needs_grad, idx):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.needs_grad = needs_grad
        self.idx = idx


class Graph:
    """Tape of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[Node, np.ndarray] = {}

    def tensor(self, data, requires_grad: bool = False) -> "Tensor":
        value = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError("leaf tensor contains non-finite values")
        node = Node("leaf", (), value, None, bool(requires_grad), len(self.nodes))
        self.nodes.append(node)
        return Tensor(self, node)

    def constant(self, data) -> "Tensor":
        return self.tensor(data, requires_grad=False)

    def _register(self, op: str, value: np.ndarray, inputs, vjp) -> "Tensor":
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op}: non-finite values in output")
        needs = any(n.needs_grad for n in inputs)
        node = Node(op, tuple(inputs), value, vjp if needs else None, needs,
                    len(self.nodes))
        self.nodes.append(node)
        return Tensor(self, node)

    def backward(self, loss: "Tensor") -> None:
        """Populate ``gradients`` for every tracked node reachable from ``loss``.

        Deterministic: the tape is walked in reverse creation order, so
        repeated calls produce bit-identical gradients.
        """
        if loss.graph is not self:
            raise ValueError("loss belongs to a different graph")
        if loss.node.value.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {loss.node.value.shape}")
        self.gradients = {}
        grads = self.gradients
        grads[loss.node] = np.ones_like(loss.node.value)
        for i in range(loss.node.idx, -1, -1):
            node = self.nodes[i]
            g = grads.get(node)
            if g is None or node.vjp is None:
                continue
            for inp, contrib in zip(node.inputs, node.vjp(g)):
                if contrib is None or not inp.needs_grad:
                    continue
                acc = grads.get(inp)
                grads[inp] = contrib if acc is None else acc + contrib


class Tensor:
    """Immutable dense tensor bound to a graph node."""

    __slots__ = ("graph", "node")

    def __init__(self, graph: Graph, node: Node):
        self.graph = graph
        self.node = node

    @property
    def data(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node.value.shape

    @property
    def grad(self) -> np.ndarray | None:
        return self.graph.gradients.get(self.node)

    def item(self) -> float:
        return float(self.node.value)

    def __repr__(self):
        return f"Tensor(op={self.node.op!r}, shape={self.shape})"


def _graph_of(*tensors: Tensor) -> Graph:
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise ValueError("tensors belong to different graphs")
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    av, bv = a.data, b.data
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = av @ bv

    def vjp(gr):
        return gr @ bv.T, av.T @ gr

    return g._register("matmul", out, (a.node, b.node), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.shape}")
    return a.graph._register("transpose", a.data.T.copy(), (a.node,),
                             lambda gr: (gr.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return g._register("add", a.data + b.data, (a.node, b.node),
                       lambda gr: (gr, gr))


def sub(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return g._register("sub", a.data - b.data, (a.node, b.node),
                       lambda gr: (gr, -gr))


def mul(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.data, b.data
    return g._register("mul", av * bv, (a.node, b.node),
                       lambda gr: (gr * bv, gr * av))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast add: [B, D] + [D]."""
    g = _graph_of(a, b)
    if a.data.ndim != 2 or b.data.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: shape mismatch {a.shape} vs {b.shape}")
    return g._register("add_bias", a.data + b.data, (a.node, b.node),
                       lambda gr: (gr, gr.sum(axis=0)))


def add_colvec(a: Tensor, v: Tensor) -> Tensor:
    """Column-broadcast add: [B, D] + [B]."""
    g = _graph_of(a, v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ValueError(f"add_colvec: shape mismatch {a.shape} vs {v.shape}")
    return g._register("add_colvec", a.data + v.data[:, None], (a.node, v.node),
                       lambda gr: (gr, gr.sum(axis=1)))


def mul_colvec(a: Tensor, v: Tensor) -> Tensor:
    """Scale each row of [B, D] by the matching entry of [B]."""
    g = _graph_of(a, v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ValueError(f"mul_colvec: shape mismatch {a.shape} vs {v.shape}")
    av, vv = a.data, v.data

    def vjp(gr):
        return gr * vv[:, None], (gr * av).sum(axis=1)

    return g._register("mul_colvec", av * vv[:, None], (a.node, v.node), vjp)


def smul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.graph._register("smul", a.data * c, (a.node,),
                             lambda gr: (gr * c,))


def sadd(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.graph._register("sadd", a.data + c, (a.node,), lambda gr: (gr,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return a.graph._register("tanh", out, (a.node,),
                             lambda gr: (gr * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails; never overflows in float64.
    v = a.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return a.graph._register("sigmoid", out, (a.node,),
                             lambda gr: (gr * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    v = a.data
    return a.graph._register("relu", np.maximum(v, 0.0), (a.node,),
                             lambda gr: (gr * (v > 0.0),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    v = a.data
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(gr):
        inner = (gr * out).sum(axis=axis, keepdims=True)
        return ((gr - inner) * out,)

    return a.graph._register("softmax", out, (a.node,), vjp)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    v = a.data
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise ValueError("l2_normalize: zero-norm input")
    out = v / norm

    def vjp(gr):
        inner = (gr * out).sum(axis=axis, keepdims=True)
        return ((gr - out * inner) / norm,)

    return a.graph._register("l2_normalize", out, (a.node,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    g = _graph_of(*tensors)
    vals = [t.data for t in tensors]
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(gr):
        return tuple(np.split(gr, splits, axis=axis))

    return g._register("concat", out, tuple(t.node for t in tensors), vjp)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    v = a.data
    if v.ndim != 2 or not (0 <= j0 < j1 <= v.shape[1]):
        raise ValueError(f"slice_cols: bad slice [{j0}:{j1}] for shape {a.shape}")

    def vjp(gr):
        full = np.zeros_like(v)
        full[:, j0:j1] = gr
        return (full,)

    return a.graph._register("slice_cols", v[:, j0:j1].copy(), (a.node,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    v = a.data
    out = v.reshape(shape)
    return a.graph._register("reshape", out, (a.node,),
                             lambda gr: (gr.reshape(v.shape),))


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a matrix by integer index (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.intp)
    v = table.data
    if v.ndim != 2:
        raise ValueError(f"gather_rows: expected a matrix, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v.shape[0]):
        raise ValueError("gather_rows: index out of range")

    def vjp(gr):
        acc = np.zeros_like(v)
        np.add.at(acc, idx, gr)
        return (acc,)

    return table.graph._register("gather_rows", v[idx], (table.node,), vjp)


def diag_part(a: Tensor) -> Tensor:
    v = a.data
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValueError(f"diag_part: expected a square matrix, got shape {a.shape}")
    return a.graph._register("diag_part", np.diag(v).copy(), (a.node,),
                             lambda gr: (np.diag(gr),))


def sum_all(a: Tensor) -> Tensor:
    v = a.data
    return a.graph._register("sum_all", np.asarray(v.sum()), (a.node,),
                             lambda gr: (np.full(v.shape, float(gr)),))


def masked_sum(a: Tensor, mask, axis: int | None = None) -> Tensor:
    """Sum of ``a * mask`` over ``axis`` (mask is a constant 0/1 array)."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.data.shape:
        raise ValueError(f"masked_sum: mask shape {m.shape} != tensor shape {a.shape}")
    out = np.asarray((a.data * m).sum(axis=axis))

    def vjp(gr):
        gg = np.asarray(gr)
        if axis is not None:
            gg = np.expand_dims(gg, axis)
        return (gg * m,)

    return a.graph._register("masked_sum", out, (a.node,), vjp)


def dot(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    av, bv = a.data, b.data
    if av.ndim != 1 or bv.ndim != 1 or av.shape != bv.shape:
        raise ValueError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    return g._register("dot", np.asarray(av @ bv), (a.node, b.node),
                       lambda gr: (float(gr) * bv, float(gr) * av))


def grad_check(f: Callable[[list[Tensor]], Tensor], params, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` maps a list of leaf tensors to a scalar tensor and must be
    re-evaluable on a fresh graph. The per-component error is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    arrays = [np.array(p, dtype=np.float64) for p in params]
    g = Graph()
    leaves = [g.tensor(a, requires_grad=True) for a in arrays]
    loss = f(leaves)
    g.backward(loss)
    analytic = [leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
                for i, a in enumerate(arrays)]

    def value_at(arrs):
        fresh = Graph()
        out = f([fresh.tensor(a, requires_grad=True) for a in arrs])
        if out.data.size != 1:
            raise ValueError("grad_check: f must return a scalar")
        return float(out.data)

    worst = 0.0
    for i, a in enumerate(arrays):
        flat = a.ravel()
        for j in range(flat.size):
            bumped = [x.copy() for x in arrays]
            bumped[i].ravel()[j] = flat[j] + eps
            hi = value_at(bumped)
            bumped[i].ravel()[j] = flat[j] - eps
            lo = value_at(bumped)
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(float(analytic[i].ravel()[j]) - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
