"""Reverse-mode differentiation over the small op set the network needs.

A :class:`Tape` records one forward pass. Values are :class:`Tensor`
objects wrapping numpy arrays; a tensor without a tape is a constant and
costs nothing to carry through the graph. Only ops that touch at least one
trainable leaf are recorded, so evaluating a frozen network (or running
inference with no tape at all) stores no activations.

    >>> tape = Tape()
    >>> x = tape.leaf("x", np.array([-1.0, 2.0]))
    >>> grads = tape.backward(sum_all(relu(x)))
    >>> grads["x"]
    array([0., 1.])
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as K
from .errors import ContractError, NaNError


class Tensor:
    """An array value, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        self.data = np.asarray(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


@dataclass
class Node:
    kind: str
    inputs: tuple          # node ids, None for constants
    vjp: Optional[Callable]
    shape: tuple


class Tape:
    """Append-only record of a forward pass.

    Node inputs always reference earlier nodes, so walking the list
    backwards is a valid reverse topological order.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def leaf(self, name, data):
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        data = np.asarray(data)
        node_id = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, data.shape))
        self.leaves[name] = (node_id, data)
        return Tensor(data, self, node_id)

    def record(self, kind, inputs, out, vjp):
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        node_id = len(self.nodes)
        if not np.all(np.isfinite(out)):
            raise NaNError(f"non-finite output from {kind} at node {node_id}", node=node_id)
        self.nodes.append(Node(kind, ids, vjp, out.shape))
        return Tensor(out, self, node_id)

    def backward(self, loss):
        """Gradients of scalar ``loss`` with respect to every named leaf."""
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for i in range(loss.node, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            needs = tuple(j is not None for j in node.inputs)
            in_grads = node.vjp(g, needs)
            for j, gj in zip(node.inputs, in_grads):
                if j is None or gj is None:
                    continue
                if not np.all(np.isfinite(gj)):
                    raise NaNError(f"non-finite gradient flowing out of {node.kind} at node {i}", node=i)
                grads[j] = gj if grads[j] is None else grads[j] + gj
            grads[i] = None
        out = {}
        for name, (j, data) in self.leaves.items():
            g = grads[j]
            out[name] = np.zeros_like(data) if g is None else np.asarray(g, dtype=data.dtype).reshape(data.shape)
        return out


def backward(tape, loss):
    """Functional alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(kind, inputs, out, vjp):
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError(f"{kind}: inputs belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    return tape.record(kind, inputs, out, vjp)


# -- ops ---------------------------------------------------------------------

def conv2d(x, w, b=None, stride=1, dilation=1, padding=0):
    x, w = as_tensor(x), as_tensor(w)
    inputs = [x, w] if b is None else [x, w, as_tensor(b)]
    out = K.conv2d(x.data, w.data, None if b is None else inputs[2].data, stride, dilation, padding)

    def vjp(g, needs):
        dx, dw, db = K.conv2d_backward(g, x.data, w.data, stride, dilation, padding,
                                       need_x=needs[0], need_w=needs[1])
        return (dx, dw, db)[:len(inputs)]

    return _apply("conv2d", inputs, out, vjp)


def pixel_shuffle(x, r, direction):
    x = as_tensor(x)
    if direction == "down":
        fwd, bwd = K.pixel_unshuffle, K.pixel_shuffle
    elif direction == "up":
        fwd, bwd = K.pixel_shuffle, K.pixel_unshuffle
    else:
        raise ContractError(f"direction must be 'up' or 'down', got {direction!r}")
    out = fwd(x.data, r)
    return _apply(f"pixel_shuffle_{direction}", [x], out, lambda g, needs: (bwd(g, r),))


def resize_bilinear(x, out_h, out_w):
    x = as_tensor(x)
    h, w = x.shape[2:]
    out = K.resize_bilinear(x.data, out_h, out_w)
    return _apply("resize_bilinear", [x], out,
                  lambda g, needs: (K.resize_bilinear_backward(g, h, w),))


def global_avg_pool(x):
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = K.global_avg_pool(x.data)

    def vjp(g, needs):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], (n, c, h, w)).copy(),)

    return _apply("global_avg_pool", [x], out, vjp)


def affine(x, w, b):
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ContractError(f"affine shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out = x.data @ w.data.T + b.data

    def vjp(g, needs):
        return (g @ w.data if needs[0] else None,
                g.T @ x.data if needs[1] else None,
                g.sum(axis=0))

    return _apply("affine", [x, w, b], out, vjp)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _apply("relu", [x], np.where(mask, x.data, 0).astype(x.dtype), lambda g, needs: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    s = K.sigmoid(x.data)
    return _apply("sigmoid", [x], s, lambda g, needs: (g * s * (1 - s),))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"add needs identical shapes, got {a.shape} and {b.shape}")
    return _apply("add", [a, b], a.data + b.data, lambda g, needs: (g, g))


def add_n(parts):
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return total


def mul_channel(a, v):
    """Scale each channel of an NCHW tensor by ``v`` of shape (C,) or (N, C)."""
    a, v = as_tensor(a), as_tensor(v)
    n, c = a.shape[:2]
    if v.shape not in ((c,), (n, c)):
        raise ContractError(f"mul_channel weights {v.shape} do not match channels of {a.shape}")
    vb = v.data.reshape((-1, c, 1, 1))
    out = a.data * vb

    def vjp(g, needs):
        gv = None
        if needs[1]:
            gv = (g * a.data).sum(axis=(2, 3))
            if v.data.ndim == 1:
                gv = gv.sum(axis=0)
        return (g * vb if needs[0] else None, gv)

    return _apply("mul_channel", [a, v], out, vjp)


def l1_diff(a, b):
    """Mean absolute difference as a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"l1_diff shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = np.asarray(np.abs(d).mean(), dtype=d.dtype)
    size = d.size

    def vjp(g, needs):
        s = np.sign(d) * (g / size)
        return (s if needs[0] else None, -s if needs[1] else None)

    return _apply("l1_diff", [a, b], out, vjp)


def scale(x, c):
    x = as_tensor(x)
    return _apply("scale", [x], x.data * x.dtype.type(c), lambda g, needs: (g * c,))


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _apply("sum", [x], np.asarray(x.data.sum()),
                  lambda g, needs: (np.broadcast_to(g, shape).copy(),))


def mean_all(x):
    return scale(sum_all(x), 1.0 / as_tensor(x).data.size)


def concat(parts, axis=1):
    parts = [as_tensor(p) for p in parts]
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != len(ref) or any(p.shape[k] != ref[k] for k in range(len(ref)) if k != axis):
            raise ContractError(f"concat extents disagree: {ref} vs {p.shape}")
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def vjp(g, needs):
        idx = [slice(None)] * g.ndim
        res = []
        for k, need in enumerate(needs):
            if not need:
                res.append(None)
                continue
            idx[axis] = slice(bounds[k], bounds[k + 1])
            res.append(np.ascontiguousarray(g[tuple(idx)]))
        return tuple(res)

    return _apply("concat", parts, out, vjp)


def split(x, sizes, axis=1):
    """Inverse of :func:`concat`; returns one tensor per size."""
    x = as_tensor(x)
    if sum(sizes) != x.shape[axis]:
        raise ContractError(f"split sizes {sizes} do not sum to extent {x.shape[axis]}")
    out = []
    start = 0
    for sz in sizes:
        idx = [slice(None)] * x.data.ndim
        idx[axis] = slice(start, start + sz)
        idx = tuple(idx)

        def vjp(g, needs, idx=idx):
            full = np.zeros(x.shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        out.append(_apply("split", [x], np.ascontiguousarray(x.data[idx]), vjp))
        start += sz
    return out


def maxpool2x2(x):
    x = as_tensor(x)
    out, idx = K.maxpool2x2(x.data)
    shape = x.shape
    return _apply("maxpool2x2", [x], out, lambda g, needs: (K.maxpool2x2_backward(g, idx, shape),))


_POINTWISE = {
    "relu": lambda a, b: relu(a),
    "sigmoid": lambda a, b: sigmoid(a),
    "add": add,
    "mul_channel": mul_channel,
    "l1_diff": l1_diff,
}


def pointwise(kind, a, b=None):
    """Dispatch by name to relu, sigmoid, add, mul_channel or l1_diff."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown pointwise kind {kind!r}") from None
    return fn(a, b)


# -- gradient checking -------------------------------------------------------

def grad_check(builder, inputs, eps=1e-4, samples=None, seed=0):
    """Largest symmetric relative error between tape and central differences.

    ``builder`` maps a list of tensors to a scalar tensor. With ``samples``
    set, only that many randomly chosen elements per input are probed.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    tape = Tape()
    leaves = [tape.leaf(f"x{i}", a) for i, a in enumerate(inputs)]
    analytic = tape.backward(builder(leaves))

    def f(arrays):
        return float(builder([Tensor(a) for a in arrays]).data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, a in enumerate(inputs):
        flat_idx = np.arange(a.size)
        if samples is not None and samples < a.size:
            flat_idx = rng.choice(a.size, size=samples, replace=False)
        ga = analytic[f"x{i}"].ravel()
        for k in flat_idx:
            work = [b.copy() for b in inputs]
            work[i].flat[k] += eps
            fp = f(work)
            work[i].flat[k] -= 2 * eps
            fm = f(work)
            num = (fp - fm) / (2 * eps)
            err = abs(ga[k] - num) / max(1e-8, abs(ga[k]) + abs(num))
            worst = max(worst, err)
    return worst


__all__ = [
    "Tensor", "Tape", "Node", "backward", "as_tensor",
    "conv2d", "pixel_shuffle", "resize_bilinear", "global_avg_pool", "affine",
    "relu", "sigmoid", "add", "add_n", "mul_channel", "l1_diff", "pointwise",
    "scale", "sum_all", "mean_all", "concat", "split", "maxpool2x2", "grad_check",
]
