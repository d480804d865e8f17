"""Dense 2-D tensors with reverse-mode gradients.

Every operation records its inputs and a backward rule; calling
:meth:`Tensor.backward` on a 1 x 1 result walks the recorded graph in
reverse topological order and accumulates exact gradients into ``.grad``
of every tensor created with ``requires_grad=True``.

Sparse matrices (``scipy.sparse``) and index arrays enter only as
constants; gradients never flow into them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import EmptyMask, EmptyNeighborhood, NotScalarOutput, ShapeMismatch, ValidationError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        value = np.array(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim != 2:
            raise ValidationError(f"Tensor values must be at most 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = bool(requires_grad or any(p.requires_grad for p in _parents))
        self.grad = np.zeros_like(value) if requires_grad else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        if self.shape != (1, 1):
            raise NotScalarOutput(f"backward needs a 1x1 output, got {self.shape}")
        order, seen = [], set()
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
            stack.extend((p, False) for p in node._parents)
        # Interior nodes hold transient gradients; leaves keep theirs.
        for node in order:
            if node._backward is not None:
                node.grad = np.zeros_like(node.value)
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    if not (isinstance(value, np.ndarray) and value.ndim == 2 and value.dtype == np.float64):
        return Tensor(value, _parents=tuple(parents), _backward=backward)
    # Fast path: op results are fresh float64 2-D arrays, so skip the copy.
    t = Tensor.__new__(Tensor)
    t.value = value
    t._parents = parents = tuple(parents)
    t.requires_grad = False
    for p in parents:
        if p.requires_grad:
            t.requires_grad = True
            break
    t.grad = None
    t._backward = backward
    return t


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return _node(a.value @ b.value, (a, b), backward)


def affine(pairs, bias=None) -> Tensor:
    """``sum_i A_i @ B_i (+ row bias)`` as one tape node."""
    pairs = [(as_tensor(a), as_tensor(b)) for a, b in pairs]
    if not pairs:
        raise ValidationError("affine needs at least one product")
    out = None
    for a, b in pairs:
        av, bv = a.value, b.value
        if av.shape[1] != bv.shape[0] or (out is not None and out.shape != (av.shape[0], bv.shape[1])):
            raise ShapeMismatch("affine", av.shape, bv.shape)
        if out is None:
            out = av @ bv
        else:
            out += av @ bv
    cols = out.shape[1]
    parents = [t for pair in pairs for t in pair]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.value.shape != (1, cols):
            raise ShapeMismatch("affine", out.shape, bias.value.shape)
        out += bias.value
        parents.append(bias)

    def backward(g):
        for a, b in pairs:
            if a.requires_grad:
                a._accumulate(g @ b.value.T)
            if b.requires_grad:
                b._accumulate(a.value.T @ g)
        if bias is not None:
            bias._accumulate(g.sum(axis=0, keepdims=True))

    return _node(out, parents, backward)


def cheb_step(S, cur, prev) -> Tensor:
    """Chebyshev recurrence ``2 S cur - prev`` for a constant operator ``S``."""
    cur, prev = as_tensor(cur), as_tensor(prev)
    if S.shape[1] != cur.shape[0] or cur.shape != prev.shape:
        raise ShapeMismatch("cheb_step", S.shape, cur.shape, prev.shape)
    out = 2.0 * np.asarray(S @ cur.value) - prev.value

    def backward(g):
        cur._accumulate(2.0 * np.asarray(S.T @ g))
        prev._accumulate(-g)

    return _node(out, (cur, prev), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.T.copy(), (a,), lambda g: a._accumulate(g.T))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1 x cols row broadcast over rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            a._accumulate(g)
            b._accumulate(g)
    elif b.shape == (1, a.shape[1]):
        def backward(g):
            a._accumulate(g)
            b._accumulate(g.sum(axis=0, keepdims=True))
    else:
        raise ShapeMismatch("add", a.shape, b.shape)
    return _node(a.value + b.value, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(c * a.value, (a,), lambda g: a._accumulate(c * g))


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("hadamard", a.shape, b.shape)

    def backward(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    return _node(a.value * b.value, (a, b), backward)


def concat_cols(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeMismatch("concat_cols", *(t.shape for t in tensors))
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t._accumulate(g[:, lo:hi])

    return _node(np.hstack([t.value for t in tensors]), tensors, backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    # Subgradient at exactly 0 is 0.
    active = a.value > 0
    return _node(np.where(active, a.value, 0.0), (a,), lambda g: a._accumulate(g * active))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _node(a.value * factor, (a,), lambda g: a._accumulate(g * factor))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: a._accumulate(g * out))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.sum().reshape(1, 1), (a,), lambda g: a._accumulate(np.full(a.shape, g[0, 0])))


def spmm(S, a) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a tensor."""
    a = as_tensor(a)
    if S.shape[1] != a.shape[0]:
        raise ShapeMismatch("spmm", S.shape, a.shape)
    out = np.asarray(S @ a.value)
    return _node(out, (a,), lambda g: a._accumulate(np.asarray(S.T @ g)))


def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        if not a.requires_grad:
            return
        n = a.shape[0]
        a._accumulate(np.column_stack([np.bincount(index, weights=col, minlength=n) for col in g.T]))

    return _node(a.value[index], (a,), backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeMismatch("slice_rows", a.shape, (start, stop))

    def backward(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        a._accumulate(full)

    return _node(a.value[start:stop].copy(), (a,), backward)


def _check_segments(segments, n_segments):
    counts = np.bincount(segments, minlength=n_segments)
    if counts.size > n_segments:
        raise ValidationError("segment id out of range")
    if np.any(counts == 0):
        raise EmptyNeighborhood(f"node {int(np.flatnonzero(counts == 0)[0])} has an empty neighbourhood")


def edge_logits(h, a, src, dst) -> Tensor:
    """Per-edge score ``a^T [h[src] || h[dst]]`` as an E x 1 tensor."""
    h, a = as_tensor(h), as_tensor(a)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    d = h.shape[1]
    if a.shape != (2 * d, 1) or src.shape != dst.shape:
        raise ShapeMismatch("edge_logits", h.shape, a.shape)
    a_recv, a_send = a.value[:d], a.value[d:]
    s_recv, s_send = h.value @ a_recv, h.value @ a_send

    def backward(g):
        g_recv = np.bincount(src, weights=g[:, 0], minlength=h.shape[0])[:, None]
        g_send = np.bincount(dst, weights=g[:, 0], minlength=h.shape[0])[:, None]
        h._accumulate(g_recv @ a_recv.T + g_send @ a_send.T)
        a._accumulate(np.vstack([h.value.T @ g_recv, h.value.T @ g_send]))

    return _node(s_recv[src] + s_send[dst], (h, a), backward)


def neighborhood_softmax(logits, segments, n_segments: int, weights=None) -> Tensor:
    """Softmax of per-edge logits within each receiving node's neighbourhood.

    ``logits`` is E x 1 and ``segments[e]`` names the node that edge ``e``
    belongs to. With ``weights`` the softmax is multiplied by them and
    renormalised, which equals ``w * exp(x) / sum(w * exp(x))``.
    """
    logits = as_tensor(logits)
    segments = np.asarray(segments, dtype=np.int64)
    if logits.shape != (segments.size, 1):
        raise ShapeMismatch("neighborhood_softmax", logits.shape, (segments.size, 1))
    _check_segments(segments, n_segments)
    x = logits.value[:, 0]
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, segments, x)
    e = np.exp(x - peak[segments])
    if weights is not None:
        e = e * np.asarray(weights, dtype=np.float64).reshape(-1)
    total = np.bincount(segments, weights=e, minlength=n_segments)
    alpha = e / total[segments]

    def backward(g):
        g = g[:, 0]
        dot = np.bincount(segments, weights=alpha * g, minlength=n_segments)
        logits._accumulate((alpha * (g - dot[segments]))[:, None])

    return _node(alpha[:, None], (logits,), backward)


def scatter_rows(values, index, n_rows: int) -> np.ndarray:
    """``out[index[e]] += values[e]`` for an E x d array, as one flat bincount."""
    d = values.shape[1]
    flat = (index[:, None] * d + np.arange(d)).ravel()
    return np.bincount(flat, weights=values.ravel(), minlength=n_rows * d).reshape(n_rows, d)


def edge_aggregate(alpha, h, src, dst, n_out: int) -> Tensor:
    """``out[i] = sum over edges e with src[e] == i of alpha[e] * h[dst[e]]``."""
    alpha, h = as_tensor(alpha), as_tensor(h)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if alpha.shape != (src.size, 1) or src.shape != dst.shape:
        raise ShapeMismatch("edge_aggregate", alpha.shape, (src.size, 1))
    a = alpha.value

    def backward(g):
        h._accumulate(scatter_rows(a * g[src], dst, h.shape[0]))
        if alpha.requires_grad:
            alpha._accumulate(np.sum(g[src] * h.value[dst], axis=1, keepdims=True))

    return _node(scatter_rows(a * h.value[dst], src, n_out), (alpha, h), backward)


def masked_mean_squared_error(pred, target, mask) -> Tensor:
    """Mean squared residual over rows where ``mask`` is true."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.size != pred.shape[0]:
        raise ShapeMismatch("masked_mse", pred.shape, mask.shape)
    m = int(mask.sum())
    if m == 0:
        raise EmptyMask("mask selects no rows")
    # Unmasked targets may be NaN, so zero them before subtracting.
    keep = mask[:, None]
    resid = np.where(keep, pred.value - np.where(keep, target, 0.0), 0.0)
    value = float(np.vdot(resid, resid)) / m
    return _node(np.array([[value]]), (pred,), lambda g: pred._accumulate(g[0, 0] * 2.0 / m * resid))


masked_mse = masked_mean_squared_error


class ParamStore(dict):
    """Ordered name -> trainable :class:`Tensor` map."""

    def __setitem__(self, name, value):
        if name in self:
            raise ValidationError(f"duplicate parameter name {name!r}")
        if not isinstance(value, Tensor):
            value = Tensor(value, requires_grad=True)
        value.requires_grad = True
        if value.grad is None:
            value.zero_grad()
        super().__setitem__(name, value)

    def zero_grad(self):
        for p in self.values():
            p.zero_grad()

    def values_copy(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.items()}

    def load_values(self, values) -> None:
        for k, v in values.items():
            v = np.asarray(v, dtype=np.float64)
            if self[k].shape != v.shape:
                raise ShapeMismatch(f"load {k}", self[k].shape, v.shape)
            self[k].value = v.copy()

    def to_dict(self) -> dict:
        return {
            k: {"shape": list(p.shape), "values": [float(x) for x in p.value.ravel()]}
            for k, p in self.items()
        }

    @classmethod
    def from_dict(cls, d) -> "ParamStore":
        store = cls()
        for k, entry in d.items():
            store[k] = Tensor(np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]), requires_grad=True)
        return store

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def value_and_grad(f, params: ParamStore):
    """Evaluate scalar ``f(params)`` and return ``(value, {name: gradient})``."""
    params.zero_grad()
    out = f(params)
    if not isinstance(out, Tensor) or out.shape != (1, 1):
        shape = out.shape if isinstance(out, Tensor) else type(out).__name__
        raise NotScalarOutput(f"function must return a 1x1 Tensor, got {shape}")
    if out.requires_grad:
        out.backward()
    return float(out.value[0, 0]), {k: p.grad.copy() for k, p in params.items()}


def seeded_init(shape, fan_in: int, seed: int) -> Tensor:
    """Uniform fan-in scaled initialisation in ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``."""
    if fan_in < 1:
        raise ValidationError(f"fan_in must be >= 1, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True)
