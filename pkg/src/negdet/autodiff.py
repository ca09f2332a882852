"""Minimal reverse-mode autodiff over numpy arrays.

Every quantity the model and losses touch lives in a `Tensor`: a float64
numpy array plus an optional backward closure. Building a graph only
happens when some input requires gradients, so inference-time code pays
no tape overhead. All primitives are deterministic and pure; kinked
primitives (max, maximum, abs) use subgradient 0 at exact kinks.
"""

from __future__ import annotations

import gc
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "matmul",
    "sigmoid",
    "softmax",
    "bilinear_sample",
    "conv2d",
    "layer_norm",
    "relu",
    "concat",
    "grad_check",
    "paused_gc",
]


@contextmanager
def paused_gc():
    """Pause cyclic garbage collection for a graph-heavy loop.

    Tape graphs are acyclic (backward closures reference parents and
    arrays, never their own output node), so every graph is freed by
    reference counting alone; the cyclic collector only adds bookkeeping
    that scales with the host process's live objects.
    """
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _as_array(x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = tuple(parents)
        self.name = name

    # -- housekeeping -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            # copy: g may alias another node's grad or be a broadcast view
            if g.shape == self.data.shape:
                self.grad = g.copy()
            else:
                self.grad = np.array(np.broadcast_to(g, self.data.shape),
                                     dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        """Reverse pass from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()

        def visit(t: Tensor):
            stack = [(t, iter(t._parents))]
            seen.add(id(t))
            while stack:
                node, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen and p.requires_grad:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    topo.append(node)
                    stack.pop()

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(_wrap(other), power(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward) -> Tensor:
    for t in parents:
        if t.requires_grad:
            out = Tensor(data, requires_grad=True, parents=parents)
            out._backward = backward(out)
            return out
    return Tensor(data)


# -- arithmetic -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        return run

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        return run

    return _make(data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Standard 2-D matrix product with shape checking."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        return run

    return _make(data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    data = np.power(a.data, p)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * p * np.power(a.data, p - 1.0))
        return run

    return _make(data, (a,), bw)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def log(a) -> Tensor:
    a = _wrap(a)
    data = np.log(a.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g / a.data)
        return run

    return _make(data, (a,), bw)


def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * data)
        return run

    return _make(data, (a,), bw)


def tabs(a) -> Tensor:
    a = _wrap(a)
    data = np.abs(a.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data))  # sign(0)=0: subgradient at kink
        return run

    return _make(data, (a,), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; at exact ties neither input gets gradient."""
    a, b = _wrap(a), _wrap(b)
    data = np.maximum(a.data, b.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * (a.data > b.data), a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * (b.data > a.data), b.data.shape))
        return run

    return _make(data, (a, b), bw)


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = np.minimum(a.data, b.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * (a.data < b.data), a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * (b.data < a.data), b.data.shape))
        return run

    return _make(data, (a, b), bw)


def relu(a) -> Tensor:
    return maximum(a, 0.0)


# -- shape ops ------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.data.shape))
        return run

    return _make(data, (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(np.transpose(g, inv))
        return run

    return _make(data, (a,), bw)


def concat(tensors, axis=0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def bw(out):
        def run(g):
            pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
            for t, piece in zip(ts, pieces):
                if t.requires_grad:
                    t._accumulate(piece)
        return run

    return _make(data, tuple(ts), bw)


def take(a, idx) -> Tensor:
    """Basic/advanced indexing with gradient scatter-add."""
    a = _wrap(a)
    data = a.data[idx]

    def bw(out):
        def run(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, idx, g)
                a._accumulate(full)
        return run

    return _make(data, (a,), bw)


# -- reductions -----------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def run(g):
            if a.requires_grad:
                if axis is None:
                    a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    a._accumulate(np.broadcast_to(gg, a.data.shape).copy())
        return run

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def tmax(a, axis) -> Tensor:
    """Max reduction along one axis; ties receive zero subgradient."""
    a = _wrap(a)
    data = a.data.max(axis=axis)

    def bw(out):
        def run(g):
            if a.requires_grad:
                expanded = np.expand_dims(data, axis)
                hits = a.data == expanded
                counts = hits.sum(axis=axis, keepdims=True)
                mask = hits & (counts == 1)
                a._accumulate(mask * np.expand_dims(g, axis))
        return run

    return _make(data, (a,), bw)


# -- nonlinearities -------------------------------------------------------

def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    data = _sigmoid_stable(a.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * data * (1.0 - data))
        return run

    return _make(data, (a,), bw)


def softmax(a, axis=-1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def run(g):
            if a.requires_grad:
                inner = (g * data).sum(axis=axis, keepdims=True)
                a._accumulate(data * (g - inner))
        return run

    return _make(data, (a,), bw)


def layer_norm(a, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply elementwise affine."""
    mu = tmean(a, axis=-1, keepdims=True)
    centered = a - mu
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(var + eps, -0.5)
    return mul(mul(centered, inv), gain) + bias


# -- sampling & convolution ----------------------------------------------

def bilinear_sample(fmap, points) -> Tensor:
    """Sample a [C,H,W] map at continuous (x, y) points -> [P,C].

    Points must lie inside [0, W-1] x [0, H-1]; integer coordinates
    reproduce the cell value exactly. `points` may be a Tensor, in which
    case gradients also flow into the sample coordinates.
    """
    fmap = _wrap(fmap)
    points = _wrap(points)
    pts = points.data.reshape(-1, 2)
    C, H, W = fmap.shape
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x < 0) or np.any(x > W - 1) or np.any(y < 0) or np.any(y > H - 1):
        raise ValueError("bilinear_sample: point outside feature map bounds")
    x0 = np.clip(np.floor(x).astype(int), 0, W - 2) if W > 1 else np.zeros(len(x), int)
    y0 = np.clip(np.floor(y).astype(int), 0, H - 2) if H > 1 else np.zeros(len(y), int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    f = fmap.data
    f00, f01 = f[:, y0, x0].T, f[:, y0, x1].T
    f10, f11 = f[:, y1, x0].T, f[:, y1, x1].T
    data = (w00[:, None] * f00 + w01[:, None] * f01
            + w10[:, None] * f10 + w11[:, None] * f11)

    def bw(out):
        def run(g):
            if fmap.requires_grad:
                full = np.zeros_like(f)
                np.add.at(full, (slice(None), y0, x0), (g * w00[:, None]).T)
                np.add.at(full, (slice(None), y0, x1), (g * w01[:, None]).T)
                np.add.at(full, (slice(None), y1, x0), (g * w10[:, None]).T)
                np.add.at(full, (slice(None), y1, x1), (g * w11[:, None]).T)
                fmap._accumulate(full)
            if points.requires_grad:
                dx = (1 - fy)[:, None] * (f01 - f00) + fy[:, None] * (f11 - f10)
                dy = (1 - fx)[:, None] * (f10 - f00) + fx[:, None] * (f11 - f01)
                gp = np.stack([(g * dx).sum(axis=1), (g * dy).sum(axis=1)], axis=1)
                points._accumulate(gp.reshape(points.data.shape))
        return run

    return _make(data, (fmap, points), bw)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    cols = np.empty((C * kh * kw, Ho * Wo))
    idx = 0
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                patch = xp[c, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
                cols[idx] = patch.reshape(-1)
                idx += 1
    return cols, Ho, Wo


def conv2d(x, weight, bias, stride: int = 1, pad: int = 1) -> Tensor:
    """2-D convolution on a single [C_in,H,W] image.

    weight: [C_out, C_in, kh, kw]; bias: [C_out]. Returns [C_out,Ho,Wo].
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    Cout, Cin, kh, kw = weight.shape
    if x.shape[0] != Cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[0]}, weight {Cin}")
    cols, Ho, Wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(Cout, -1)
    data = (wmat @ cols + bias.data[:, None]).reshape(Cout, Ho, Wo)

    def bw(out):
        def run(g):
            gmat = g.reshape(Cout, -1)
            if bias.requires_grad:
                bias._accumulate(gmat.sum(axis=1))
            if weight.requires_grad:
                weight._accumulate((gmat @ cols.T).reshape(weight.shape))
            if x.requires_grad:
                gcols = wmat.T @ gmat  # [Cin*kh*kw, Ho*Wo]
                C, H, W = x.shape
                xp_grad = np.zeros((C, H + 2 * pad, W + 2 * pad))
                idx = 0
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            xp_grad[c, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                                gcols[idx].reshape(Ho, Wo)
                            )
                            idx += 1
                if pad:
                    xp_grad = xp_grad[:, pad:-pad, pad:-pad]
                x._accumulate(xp_grad)
        return run

    return _make(data, (x, weight, bias), bw)


# -- gradient oracle ------------------------------------------------------

def grad_check(f, params: dict, eps: float = 1e-5, tol: float = 1e-4, max_coords: int | None = None, rng=None):
    """Compare analytic gradients of scalar f(params) with central differences.

    Returns a report dict with per-parameter max relative error and an
    overall pass flag. `max_coords` subsamples coordinates per parameter
    to keep the check fast on large tensors.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps outside [1e-7, 1e-3]")
    for p in params.values():
        p.zero_grad()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: non-finite forward value")
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    report = {"per_param": {}, "max_rel_err": 0.0, "passed": True}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(params).data.item()
            flat[i] = orig - eps
            lo = f(params).data.item()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = analytic[name].reshape(-1)[i]
            denom = max(abs(fd), abs(an), 1.0)
            rel = abs(fd - an) / denom
            worst = max(worst, rel)
        report["per_param"][name] = worst
        report["max_rel_err"] = max(report["max_rel_err"], worst)
    report["passed"] = report["max_rel_err"] < tol
    return report
