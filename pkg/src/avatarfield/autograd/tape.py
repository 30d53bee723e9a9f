"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

A `Tape` records primitive array operations (add, mul, matmul, sigmoid,
softplus, tanh, sin, cos, exp, bilinear gather, reductions, ...) as they
execute; `Tape.backward` replays them in reverse to accumulate exact
gradients for every leaf. Constants (plain ndarrays / scalars) may appear
anywhere and receive no gradient. A tape built with record=False runs the
same code as pure forward evaluation, which is how inference-time rendering
avoids the bookkeeping.

Broadcasting follows numpy; gradients are un-broadcast (summed) back to the
operand shape. The tape is rebuilt every optimization step.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape", "Var", "value_of", "add", "sub", "mul", "div", "matmul",
    "sigmoid", "softplus", "tanh", "sin", "cos", "exp", "sqrt", "absolute",
    "square", "reduce_sum", "mean", "concat", "narrow", "reshape",
    "broadcast_to", "clamp", "bilinear_gather", "stop_gradient",
]


def _d_sigmoid(y):
    return y * (1.0 - y)


def _d_tanh(y):
    return 1.0 - y * y


def _asarray(x):
    return np.asarray(x, dtype=np.float64)


def value_of(x):
    """Underlying ndarray of a Var or constant."""
    return x.value if isinstance(x, Var) else _asarray(x)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


class Var:
    """Handle to a tape node (idx >= 0) or an unrecorded forward value."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


class Tape:
    """Topologically ordered record of primitive ops; inputs precede outputs."""

    def __init__(self, record=True):
        self.record = record
        self.parents = []  # per node: tuple of parent node indices (-1 for consts)
        self.backward_fns = []  # per node: None for leaves, else fn(out_grad) -> grads

    def __len__(self):
        return len(self.parents)

    def leaf(self, value) -> Var:
        """Register a differentiable leaf (a parameter tensor)."""
        v = _asarray(value)
        if not self.record:
            return Var(self, -1, v)
        self.parents.append(())
        self.backward_fns.append(None)
        return Var(self, len(self.parents) - 1, v)

    def _emit(self, value, parent_vars, backward_fn) -> Var:
        if not self.record:
            return Var(self, -1, value)
        idx = tuple(p.idx if isinstance(p, Var) else -1 for p in parent_vars)
        if all(i < 0 for i in idx):
            return Var(self, -1, value)
        self.parents.append(idx)
        self.backward_fns.append(backward_fn)
        return Var(self, len(self.parents) - 1, value)

    def backward(self, out: Var):
        """Gradients of a scalar output w.r.t. every node; list indexed by node id.

        Nodes that do not influence the output get None (read as zero).
        """
        if out.idx < 0:
            raise ValueError("output was not recorded on this tape")
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.value.shape}")
        grads = [None] * len(self.parents)
        grads[out.idx] = np.ones_like(out.value)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            fn = self.backward_fns[i]
            if fn is None:
                continue
            for pidx, pg in zip(self.parents[i], fn(g)):
                if pidx < 0 or pg is None:
                    continue
                if grads[pidx] is None:
                    grads[pidx] = pg
                else:
                    grads[pidx] = grads[pidx] + pg
        return grads


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
    if tape is None:
        raise TypeError("at least one operand must be a Var")
    return tape


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return tape._emit(out, (a, b), lambda g: (
        _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return tape._emit(out, (a, b), lambda g: (
        _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return tape._emit(out, (a, b), lambda g: (
        _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return tape._emit(out, (a, b), lambda g: (
        _unbroadcast(g / bv, av.shape),
        _unbroadcast(-g * av / (bv * bv), bv.shape)))


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    return tape._emit(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _unary(x, out, dfn) -> Var:
    tape = _tape_of(x)
    return tape._emit(out, (x,), lambda g: (g * dfn(),))


def sigmoid(x) -> Var:
    v = value_of(x)
    out = np.empty_like(v)
    np.exp(-np.abs(v), out=out)  # stable for both signs
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return _unary(x, out, lambda: _d_sigmoid(out))


def softplus(x) -> Var:
    v = value_of(x)
    out = np.logaddexp(0.0, v)
    sig = 1.0 / (1.0 + np.exp(-np.clip(v, -500, 500)))
    return _unary(x, out, lambda: sig)


def tanh(x) -> Var:
    out = np.tanh(value_of(x))
    return _unary(x, out, lambda: _d_tanh(out))


def sin(x) -> Var:
    v = value_of(x)
    return _unary(x, np.sin(v), lambda: np.cos(v))


def cos(x) -> Var:
    v = value_of(x)
    return _unary(x, np.cos(v), lambda: -np.sin(v))


def exp(x) -> Var:
    out = np.exp(value_of(x))
    return _unary(x, out, lambda: out)


def sqrt(x) -> Var:
    out = np.sqrt(value_of(x))
    return _unary(x, out, lambda: 0.5 / out)


def absolute(x) -> Var:
    v = value_of(x)
    return _unary(x, np.abs(v), lambda: np.sign(v))


def square(x) -> Var:
    return mul(x, x)


def reduce_sum(x, axis=None, keepdims=False) -> Var:
    tape = _tape_of(x)
    v = value_of(x)
    out = v.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % v.ndim for a in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, v.shape),)

    return tape._emit(np.asarray(out), (x,), bwd)


def mean(x, axis=None, keepdims=False) -> Var:
    v = value_of(x)
    n = v.size if axis is None else np.prod(
        [v.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def concat(parts, axis=0) -> Var:
    tape = _tape_of(*parts)
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for k in range(len(vals)):
            sl[axis] = slice(offsets[k], offsets[k + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return tape._emit(out, tuple(parts), bwd)


def narrow(x, axis, start, length) -> Var:
    """Contiguous slice along one axis."""
    tape = _tape_of(x)
    v = value_of(x)
    sl = [slice(None)] * v.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = v[sl]

    def bwd(g):
        full = np.zeros_like(v)
        full[sl] = g
        return (full,)

    return tape._emit(out, (x,), bwd)


def reshape(x, shape) -> Var:
    tape = _tape_of(x)
    v = value_of(x)
    return tape._emit(np.reshape(v, shape), (x,), lambda g: (np.reshape(g, v.shape),))


def broadcast_to(x, shape) -> Var:
    tape = _tape_of(x)
    v = value_of(x)
    out = np.broadcast_to(v, shape).copy()
    return tape._emit(out, (x,), lambda g: (_unbroadcast(g, v.shape),))


def clamp(x, lo, hi) -> Var:
    """Clamp to [lo, hi]; gradient passes where the value is not clipped away."""
    tape = _tape_of(x)
    v = value_of(x)
    out = np.clip(v, lo, hi)
    mask = ((v >= lo) & (v <= hi)).astype(np.float64)
    return tape._emit(out, (x,), lambda g: (g * mask,))


def stop_gradient(x) -> Var:
    tape = _tape_of(x)
    return Var(tape, -1, value_of(x))


def bilinear_gather(grid, u, v) -> Var:
    """Bilinear interpolation out[n, :] = grid(u[n], v[n]) on a (R0, R1, C) grid.

    u, v are continuous grid coordinates in [0, R0-1] x [0, R1-1] (clipped).
    Differentiable w.r.t. the grid values and w.r.t. the coordinates.
    """
    tape = _tape_of(grid, u, v)
    gv = value_of(grid)
    uv = value_of(u)
    vv = value_of(v)
    r0, r1, _ = gv.shape
    i0 = np.clip(np.floor(uv).astype(np.intp), 0, r0 - 2)
    j0 = np.clip(np.floor(vv).astype(np.intp), 0, r1 - 2)
    fu = (np.clip(uv, 0.0, r0 - 1.0) - i0)[:, None]
    fv = (np.clip(vv, 0.0, r1 - 1.0) - j0)[:, None]
    g00 = gv[i0, j0]
    g10 = gv[i0 + 1, j0]
    g01 = gv[i0, j0 + 1]
    g11 = gv[i0 + 1, j0 + 1]
    w00 = (1.0 - fu) * (1.0 - fv)
    w10 = fu * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w11 = fu * fv
    out = w00 * g00 + w10 * g10 + w01 * g01 + w11 * g11

    inside_u = ((uv >= 0.0) & (uv <= r0 - 1.0)).astype(np.float64)
    inside_v = ((vv >= 0.0) & (vv <= r1 - 1.0)).astype(np.float64)

    def bwd(g):
        grad_grid = np.zeros_like(gv)
        np.add.at(grad_grid, (i0, j0), g * w00)
        np.add.at(grad_grid, (i0 + 1, j0), g * w10)
        np.add.at(grad_grid, (i0, j0 + 1), g * w01)
        np.add.at(grad_grid, (i0 + 1, j0 + 1), g * w11)
        du = (1.0 - fv) * (g10 - g00) + fv * (g11 - g01)
        dv = (1.0 - fu) * (g01 - g00) + fu * (g11 - g10)
        grad_u = (g * du).sum(axis=1) * inside_u
        grad_v = (g * dv).sum(axis=1) * inside_v
        return (grad_grid, grad_u, grad_v)

    return tape._emit(out, (grid, u, v), bwd)
