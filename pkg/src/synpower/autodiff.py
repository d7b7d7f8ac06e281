"""Small reverse-mode autodiff over dense 2-D float64 matrices.

Every operation evaluates eagerly when its node is created.  Besides the usual
numeric ``backward`` pass, :func:`input_gradient_node` writes the gradient of a
scalar with respect to some input back *into the graph*, built from ordinary
operations, so it can itself be differentiated (as a gradient penalty needs).

Example::

    g = Graph()
    w = g.param([[0.6], [0.8]])
    x = g.input([[1.0, 2.0]])
    out = g.sum(g.matmul(x, w))
    grad_x = input_gradient_node(g, out, x)          # == w.T, as a node
    penalty = g.mean(g.square(g.affine(g.row_norm(grad_x), 1.0, -1.0)))
    grads = backward(g, penalty)                     # {w: d penalty / d w}
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        listed = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible operand shapes {listed}")


class Node:
    """A value in a :class:`Graph`. Parents always have smaller indices."""

    __slots__ = ("graph", "index", "value", "op", "parents", "attrs", "trainable", "requires_grad", "name")

    def __init__(self, graph, index, value, op, parents, attrs, trainable, requires_grad, name=None):
        self.graph = graph
        self.index = index
        self.value = value
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.trainable = trainable
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.index} {self.op}{label} {self.shape}>"


GradientSet = Dict[Node, np.ndarray]


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise AutodiffError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _inv_safe(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    np.divide(1.0, x, out=out, where=x != 0)
    return out


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True)


class Graph:
    """An append-only list of nodes; parents always precede children."""

    def __init__(self):
        self.nodes: List[Node] = []

    @property
    def parameters(self) -> List[Node]:
        return [n for n in self.nodes if n.trainable]

    def _push(self, op, value, parents=(), attrs=None, trainable=False, name=None):
        for p in parents:
            if p.graph is not self:
                raise AutodiffError(f"{op}: operand belongs to a different graph")
        requires = trainable or any(p.requires_grad for p in parents)
        node = Node(self, len(self.nodes), value, op, tuple(p.index for p in parents),
                    attrs or {}, trainable, requires, name)
        self.nodes.append(node)
        return node

    # leaves

    def param(self, value, name=None) -> Node:
        return self._push("param", _as_matrix(value).copy(), trainable=True, name=name)

    def input(self, value, name=None) -> Node:
        return self._push("input", _as_matrix(value).copy(), name=name)

    def const(self, value, name=None) -> Node:
        return self._push("const", _as_matrix(value).copy(), name=name)

    # operations

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        return self._push("matmul", a.value @ b.value, (a, b))

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError("add", a.shape, b.shape)
        return self._push("add", a.value + b.value, (a, b))

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError("sub", a.shape, b.shape)
        return self._push("sub", a.value - b.value, (a, b))

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError("mul", a.shape, b.shape)
        return self._push("mul", a.value * b.value, (a, b))

    def add_row(self, x: Node, bias: Node) -> Node:
        """``x + bias`` with a 1×k bias broadcast over the rows of x."""
        if bias.shape[0] != 1 or bias.shape[1] != x.shape[1]:
            raise ShapeError("add_row", x.shape, bias.shape)
        return self._push("add_row", x.value + bias.value, (x, bias))

    def affine(self, x: Node, scale: float = 1.0, shift: float = 0.0) -> Node:
        scale, shift = float(scale), float(shift)
        return self._push("affine", x.value * scale + shift, (x,), {"scale": scale, "shift": shift})

    def scale(self, x: Node, c: float) -> Node:
        return self.affine(x, c, 0.0)

    def relu(self, x: Node) -> Node:
        return self._push("relu", np.maximum(x.value, 0.0), (x,))

    def step(self, x: Node) -> Node:
        # Heaviside mask used by the ReLU adjoint; derivative taken as zero.
        return self._push("step", (x.value > 0).astype(np.float64), (x,))

    def sigmoid(self, x: Node) -> Node:
        v = x.value
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        out[~pos] = e / (1.0 + e)
        return self._push("sigmoid", out, (x,))

    def log(self, x: Node) -> Node:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._push("log", np.log(x.value), (x,))

    def square(self, x: Node) -> Node:
        return self._push("square", x.value * x.value, (x,))

    def reciprocal(self, x: Node) -> Node:
        with np.errstate(divide="ignore"):
            return self._push("reciprocal", 1.0 / x.value, (x,))

    def inv_safe(self, x: Node) -> Node:
        """1/x with 0 where x == 0."""
        return self._push("inv_safe", _inv_safe(x.value), (x,))

    def clamp(self, x: Node, lo: float, hi: float) -> Node:
        return self._push("clamp", np.clip(x.value, lo, hi), (x,), {"lo": float(lo), "hi": float(hi)})

    def row_norm(self, x: Node) -> Node:
        """Euclidean norm of every row, as an n×1 column."""
        return self._push("row_norm", np.sqrt((x.value * x.value).sum(axis=1, keepdims=True)), (x,))

    def mean(self, x: Node) -> Node:
        return self._push("mean", np.array([[x.value.mean()]]), (x,))

    def sum(self, x: Node) -> Node:
        return self._push("sum", np.array([[x.value.sum()]]), (x,))

    def transpose(self, x: Node) -> Node:
        return self._push("transpose", x.value.T.copy(), (x,))

    def concat_cols(self, *xs: Node) -> Node:
        rows = {x.shape[0] for x in xs}
        if len(rows) != 1:
            raise ShapeError("concat_cols", *(x.shape for x in xs))
        widths = [x.shape[1] for x in xs]
        return self._push("concat_cols", np.concatenate([x.value for x in xs], axis=1), xs, {"widths": widths})

    def slice_cols(self, x: Node, start: int, stop: int) -> Node:
        if not 0 <= start <= stop <= x.shape[1]:
            raise ShapeError("slice_cols", x.shape, (start, stop))
        return self._push("slice_cols", x.value[:, start:stop].copy(), (x,), {"start": start, "stop": stop})

    def pad_cols(self, x: Node, start: int, total: int) -> Node:
        if start < 0 or start + x.shape[1] > total:
            raise ShapeError("pad_cols", x.shape, (start, total))
        out = np.zeros((x.shape[0], total))
        out[:, start:start + x.shape[1]] = x.value
        return self._push("pad_cols", out, (x,), {"start": start, "total": total})

    def broadcast_to(self, x: Node, shape) -> Node:
        shape = tuple(shape)
        if any(a not in (1, b) for a, b in zip(x.shape, shape)):
            raise ShapeError("broadcast_to", x.shape, shape)
        return self._push("broadcast_to", np.broadcast_to(x.value, shape).copy(), (x,), {"shape": shape})

    def sum_to(self, x: Node, shape) -> Node:
        shape = tuple(shape)
        if any(b not in (1, a) for a, b in zip(x.shape, shape)):
            raise ShapeError("sum_to", x.shape, shape)
        return self._push("sum_to", _sum_to(x.value, shape), (x,), {"shape": shape})


# Numeric adjoints: (node, parent values, upstream gradient) -> per-parent gradient or None.

def _vjp_numeric(node: Node, pv: Sequence[np.ndarray], g: np.ndarray):
    op = node.op
    if op == "matmul":
        a, b = pv
        return [g @ b.T, a.T @ g]
    if op == "add":
        return [g, g]
    if op == "sub":
        return [g, -g]
    if op == "mul":
        a, b = pv
        return [g * b, g * a]
    if op == "add_row":
        return [g, g.sum(axis=0, keepdims=True)]
    if op == "affine":
        return [g * node.attrs["scale"]]
    if op == "relu":
        return [g * (pv[0] > 0)]
    if op == "step":
        return [None]
    if op == "sigmoid":
        s = node.value
        return [g * s * (1.0 - s)]
    if op == "log":
        return [g / pv[0]]
    if op == "square":
        return [2.0 * pv[0] * g]
    if op == "reciprocal":
        return [-g * node.value * node.value]
    if op == "inv_safe":
        return [-g * node.value * node.value]
    if op == "clamp":
        x = pv[0]
        return [g * ((x >= node.attrs["lo"]) & (x <= node.attrs["hi"]))]
    if op == "row_norm":
        return [(g * _inv_safe(node.value)) * pv[0]]
    if op == "mean":
        return [np.full(pv[0].shape, g[0, 0] / pv[0].size)]
    if op == "sum":
        return [np.full(pv[0].shape, g[0, 0])]
    if op == "transpose":
        return [g.T]
    if op == "concat_cols":
        out, start = [], 0
        for w in node.attrs["widths"]:
            out.append(g[:, start:start + w])
            start += w
        return out
    if op == "slice_cols":
        full = np.zeros(pv[0].shape)
        full[:, node.attrs["start"]:node.attrs["stop"]] = g
        return [full]
    if op == "pad_cols":
        s = node.attrs["start"]
        return [g[:, s:s + pv[0].shape[1]]]
    if op == "broadcast_to":
        return [_sum_to(g, pv[0].shape)]
    if op == "sum_to":
        return [np.broadcast_to(g, pv[0].shape).copy()]
    raise AutodiffError(f"no adjoint for operation {op!r}")


def _vjp_graph(graph: Graph, node: Node, g: Node):
    """Adjoints expressed as new graph nodes, so they stay differentiable."""
    op = node.op
    ps = [graph.nodes[i] for i in node.parents]
    if op == "matmul":
        a, b = ps
        return [graph.matmul(g, graph.transpose(b)), graph.matmul(graph.transpose(a), g)]
    if op == "add":
        return [g, g]
    if op == "sub":
        return [g, graph.scale(g, -1.0)]
    if op == "mul":
        a, b = ps
        return [graph.mul(g, b), graph.mul(g, a)]
    if op == "add_row":
        return [g, graph.sum_to(g, ps[1].shape)]
    if op == "affine":
        return [graph.scale(g, node.attrs["scale"])]
    if op == "relu":
        return [graph.mul(g, graph.step(ps[0]))]
    if op == "step":
        return [None]
    if op == "sigmoid":
        return [graph.mul(g, graph.mul(node, graph.affine(node, -1.0, 1.0)))]
    if op == "log":
        return [graph.mul(g, graph.reciprocal(ps[0]))]
    if op == "square":
        return [graph.mul(g, graph.scale(ps[0], 2.0))]
    if op in ("reciprocal", "inv_safe"):
        return [graph.mul(g, graph.scale(graph.square(node), -1.0))]
    if op == "clamp":
        x = ps[0].value
        mask = ((x >= node.attrs["lo"]) & (x <= node.attrs["hi"])).astype(np.float64)
        return [graph.mul(g, graph.const(mask))]
    if op == "row_norm":
        x = ps[0]
        col = graph.mul(g, graph.inv_safe(node))
        return [graph.mul(graph.broadcast_to(col, x.shape), x)]
    if op == "mean":
        return [graph.broadcast_to(graph.scale(g, 1.0 / ps[0].value.size), ps[0].shape)]
    if op == "sum":
        return [graph.broadcast_to(g, ps[0].shape)]
    if op == "transpose":
        return [graph.transpose(g)]
    if op == "concat_cols":
        out, start = [], 0
        for w in node.attrs["widths"]:
            out.append(graph.slice_cols(g, start, start + w))
            start += w
        return out
    if op == "slice_cols":
        return [graph.pad_cols(g, node.attrs["start"], ps[0].shape[1])]
    if op == "pad_cols":
        s = node.attrs["start"]
        return [graph.slice_cols(g, s, s + ps[0].shape[1])]
    if op == "broadcast_to":
        return [graph.sum_to(g, ps[0].shape)]
    if op == "sum_to":
        return [graph.broadcast_to(g, ps[0].shape)]
    raise AutodiffError(f"no adjoint for operation {op!r}")


def _check_scalar(graph: Graph, root: Node):
    if root.graph is not graph:
        raise AutodiffError("root node belongs to a different graph")
    if root.shape != (1, 1):
        raise AutodiffError(f"backward needs a 1x1 scalar root, got shape {root.shape}")


def backward(graph: Graph, root: Node) -> GradientSet:
    """Gradients of the scalar ``root`` for every trainable parameter of ``graph``."""
    _check_scalar(graph, root)
    grads: List[Optional[np.ndarray]] = [None] * (root.index + 1)
    grads[root.index] = np.ones((1, 1))
    nodes = graph.nodes
    for i in range(root.index, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or not node.parents:
            continue
        pv = [nodes[p].value for p in node.parents]
        for p, gp in zip(node.parents, _vjp_numeric(node, pv, g)):
            if gp is None or not nodes[p].requires_grad:
                continue
            grads[p] = gp if grads[p] is None else grads[p] + gp
    out: GradientSet = {}
    for node in graph.parameters:
        g = grads[node.index] if node.index <= root.index else None
        out[node] = np.zeros(node.shape) if g is None else np.array(g, dtype=np.float64)
    return out


def input_gradient_node(graph: Graph, root: Node, wrt: Node) -> Node:
    """Build d(root)/d(wrt) as a node of ``graph`` (same shape as ``wrt``)."""
    _check_scalar(graph, root)
    if wrt.graph is not graph:
        raise AutodiffError("input node belongs to a different graph")
    nodes = graph.nodes
    # nodes lying on some path wrt -> root
    depends = [False] * (root.index + 1)
    if wrt.index <= root.index:
        depends[wrt.index] = True
        for i in range(wrt.index + 1, root.index + 1):
            depends[i] = any(depends[p] for p in nodes[i].parents)
    if not depends[root.index]:
        raise AutodiffError(f"root {root!r} does not depend on {wrt!r}")

    adj: Dict[int, Node] = {root.index: graph.const(np.ones((1, 1)))}
    for i in range(root.index, wrt.index, -1):
        if i not in adj or not depends[i]:
            continue
        node = nodes[i]
        for p, gp in zip(node.parents, _vjp_graph(graph, node, adj[i])):
            if gp is None or p >= len(depends) or not depends[p]:
                continue
            adj[p] = gp if p not in adj else graph.add(adj[p], gp)
    return adj[wrt.index]

