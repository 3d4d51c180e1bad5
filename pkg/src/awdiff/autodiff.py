"""A minimal reverse-mode autodiff tape over numpy arrays.

Operations on :class:`Var` objects are recorded on the active :class:`Tape`
in execution order; :meth:`Tape.backward` replays them in reverse. The
operator set is deliberately small: broadcasting arithmetic, matmul,
reductions, reshapes, SiLU, softmax, sqrt and a zero-padded "same" conv2d.

>>> with Tape() as tape:
...     w = Var(np.array([2.0]), requires_grad=True)
...     y = (w * w).sum()
>>> tape.backward(y)
>>> w.grad
array([4.])
"""

import numpy as np

_active = []


class Tape:
    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()
        return False

    def record(self, out, parents, backward):
        self.nodes.append((out, parents, backward))

    def backward(self, root, seed=None):
        """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf that requires it."""
        grads = {id(root): np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)}
        for out, parents, backward in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad = pg if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _op(value, parents, backward):
    out = Var(value)
    if any(p.requires_grad for p in parents) and _active:
        out.requires_grad = True
        out.is_leaf = False
        _active[-1].record(out, parents, backward)
    return out


class Var:
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        other = as_var(other)
        a, b = self.shape, other.shape
        return _op(self.value + other.value, (self, other),
                   lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return _op(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __mul__(self, other):
        other = as_var(other)
        x, y = self.value, other.value
        return _op(x * y, (self, other),
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        x, y = self.value, other.value
        return _op(x / y, (self, other),
                   lambda g: (_unbroadcast(g / y, x.shape),
                              _unbroadcast(-g * x / (y * y), y.shape)))

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __matmul__(self, other):
        other = as_var(other)
        x, y = self.value, other.value

        def backward(g):
            gx = g @ np.swapaxes(y, -1, -2) if y.ndim > 1 else np.multiply.outer(g, y)
            gy = np.swapaxes(x, -1, -2) @ g if x.ndim > 1 else np.multiply.outer(x, g)
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return _op(x @ y, (self, other), backward)

    def __rmatmul__(self, other):
        return as_var(other) @ self

    def sum(self, axis=None, keepdims=False):
        x = self.value

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return _op(x.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return _op(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        inverse = np.argsort(axes)
        return _op(self.value.transpose(*axes), (self,), lambda g: (g.transpose(*inverse),))


def silu(x):
    v = x.value
    sig = 1.0 / (1.0 + np.exp(-v))
    return _op(v * sig, (x,), lambda g: (g * sig * (1.0 + v * (1.0 - sig)),))


def sqrt(x):
    r = np.sqrt(x.value)
    return _op(r, (x,), lambda g: (g * 0.5 / r,))


def softmax(x):
    """Softmax over the last axis."""
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _op(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def _im2col(x, k):
    """``(k*k*C, B*H*W)`` column matrix of zero-padded ``k x k`` neighbourhoods."""
    chans, bsz, height, width = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((k, k, chans, bsz, height, width))
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, :, i:i + height, j:j + width]
    return cols.reshape(k * k * chans, bsz * height * width)


def _col2im(cols, shape, k):
    chans, bsz, height, width = shape
    p = k // 2
    cols = cols.reshape(k, k, chans, bsz, height, width)
    xp = np.zeros((chans, bsz, height + 2 * p, width + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + height, j:j + width] += cols[i, j]
    return xp[:, :, p:p + height, p:p + width]


def conv2d(x, w, b):
    """Zero-padded "same" 2D convolution (cross-correlation).

    Activations are channel-major, ``(C, B, H, W)``. ``w`` has shape
    ``(Cout, Cin, k, k)`` with odd ``k``; ``b`` has shape ``(Cout,)``.
    """
    x, w, b = as_var(x), as_var(w), as_var(b)
    cout, cin, k, _ = w.shape
    _, bsz, height, width = x.shape
    cols = _im2col(x.value, k)
    wmat = w.value.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = wmat @ cols
    out += b.value[:, None]

    def backward(g):
        gmat = g.reshape(cout, bsz * height * width)
        gw = gx = None
        if w.requires_grad:
            gw = (gmat @ cols.T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        if x.requires_grad:
            gx = _col2im(wmat.T @ gmat, x.shape, k)
        return gx, gw, gmat.sum(axis=1)

    return _op(out.reshape(cout, bsz, height, width), (x, w, b), backward)
