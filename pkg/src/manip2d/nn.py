"""Minimal reverse-mode autodiff over numpy arrays, plus MLP layers and Adam.

The same ops run identical numpy calls whether or not gradients are being
recorded, so rollout-time (no-grad) and update-time forward passes are
bitwise identical. Gradients are exact reverse-mode; every component is
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import struct
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class GraphError(RuntimeError):
    pass


class Var:
    """A node in the reverse-mode tape."""

    __slots__ = ("data", "grad", "parents", "bwd", "requires_grad")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        if _GRAD_ENABLED and (requires_grad or any(p.requires_grad for p in parents)):
            self.parents = parents
            self.bwd = bwd
            self.requires_grad = True
        else:
            self.parents = ()
            self.bwd = None

    @property
    def shape(self):
        return self.data.shape

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(
        a.data + b.data,
        parents=(a, b),
        bwd=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )
    return out


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.data - b.data,
        parents=(a, b),
        bwd=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.data * b.data,
        parents=(a, b),
        bwd=lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.data / b.data,
        parents=(a, b),
        bwd=lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.data @ b.data,
        parents=(a, b),
        bwd=lambda g: (g @ b.data.T, a.data.T @ g),
    )


def tanh(a):
    a = as_var(a)
    out_data = np.tanh(a.data)
    return Var(out_data, parents=(a,), bwd=lambda g: (g * (1.0 - out_data * out_data),))


def exp(a):
    a = as_var(a)
    out_data = np.exp(a.data)
    return Var(out_data, parents=(a,), bwd=lambda g: (g * out_data,))


def log(a):
    a = as_var(a)
    return Var(np.log(a.data), parents=(a,), bwd=lambda g: (g / a.data,))


def square(a):
    a = as_var(a)
    return Var(a.data * a.data, parents=(a,), bwd=lambda g: (g * 2.0 * a.data,))


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Var(out_data, parents=(a,), bwd=bwd)


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def minimum(a, b):
    a, b = as_var(a), as_var(b)
    pick_a = a.data <= b.data
    return Var(
        np.where(pick_a, a.data, b.data),
        parents=(a, b),
        bwd=lambda g: (
            _unbroadcast(g * pick_a, a.data.shape),
            _unbroadcast(g * (~pick_a), b.data.shape),
        ),
    )


def maximum(a, b):
    a, b = as_var(a), as_var(b)
    pick_a = a.data >= b.data
    return Var(
        np.where(pick_a, a.data, b.data),
        parents=(a, b),
        bwd=lambda g: (
            _unbroadcast(g * pick_a, a.data.shape),
            _unbroadcast(g * (~pick_a), b.data.shape),
        ),
    )


def clip(a, lo, hi):
    a = as_var(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Var(np.clip(a.data, lo, hi), parents=(a,), bwd=lambda g: (g * inside,))


def take(a, idx):
    a = as_var(a)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Var(a.data[idx], parents=(a,), bwd=bwd)


def reshape(a, shape):
    a = as_var(a)
    old = a.data.shape
    return Var(a.data.reshape(shape), parents=(a,), bwd=lambda g: (g.reshape(old),))


def concat(parts, axis=-1):
    parts = [as_var(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate([p.data for p in parts], axis=axis), parents=tuple(parts), bwd=bwd)


def detach(a):
    return Var(as_var(a).data)


def backward(loss: Var, seed=None):
    """Reverse-mode sweep from a scalar (or seeded) loss through the tape."""
    if loss.bwd is None and not loss.parents and not loss.requires_grad:
        raise GraphError("no forward pass recorded for this output")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if id(node) in seen and not done:
            continue
        if done:
            topo.append(node)
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(topo):
        if node.bwd is None or node.grad is None:
            continue
        grads = node.bwd(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
            else:
                parent.grad = parent.grad + g


# -------------------------------------------------------------------- layers


def orthogonal_init(rng, shape, gain=1.0):
    """Orthogonal initialization (QR of a Gaussian), numpy-deterministic."""
    flat = rng.normal(size=(shape[0], int(np.prod(shape[1:]))))
    if flat.shape[0] < flat.shape[1]:
        flat = flat.T
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if q.shape != (shape[0], int(np.prod(shape[1:]))):
        q = q.T
    return gain * q.reshape(shape)


class ParamSet:
    """Named float64 parameter tensors with gradients."""

    def __init__(self):
        self.params: dict[str, Var] = {}

    def add(self, name, data):
        v = Var(np.asarray(data, dtype=np.float64).copy(), requires_grad=True)
        self.params[name] = v
        return v

    def __getitem__(self, name) -> Var:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for v in self.params.values():
            v.grad = None

    def grad_global_norm(self):
        total = 0.0
        for v in self.params.values():
            if v.grad is not None:
                total += float(np.sum(v.grad * v.grad))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm):
        norm = self.grad_global_norm()
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for v in self.params.values():
                if v.grad is not None:
                    v.grad = v.grad * scale
        return norm

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, v in self.params.items():
            out.add(name, v.data.copy())
        return out

    def flatten(self):
        return np.concatenate([v.data.ravel() for v in self.params.values()])


def linear(x, w: Var, b: Var):
    return add(matmul(x, w), b)


def mlp_forward(x, params: ParamSet, prefix: str, n_layers: int, activation=tanh):
    """Feed-forward pass through layers '<prefix>.w{i}' / '<prefix>.b{i}'."""
    h = as_var(x)
    for i in range(n_layers):
        h = linear(h, params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"])
        h = activation(h)
    return h


def build_mlp(params: ParamSet, rng, prefix: str, sizes, gains=None):
    """Create orthogonally initialized linear layers along `sizes`."""
    for i in range(len(sizes) - 1):
        gain = np.sqrt(2.0) if gains is None else gains[i]
        params.add(f"{prefix}.w{i}", orthogonal_init(rng, (sizes[i], sizes[i + 1]), gain))
        params.add(f"{prefix}.b{i}", np.zeros(sizes[i + 1]))


class Adam:
    """Adam over a ParamSet; state keyed by parameter name."""

    def __init__(self, params: ParamSet, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for name, var in self.params.params.items():
            if var.grad is None:
                continue
            g = var.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            var.data = var.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# --------------------------------------------------------------- checkpoints

MAGIC = b"M2DNET01"


class CheckpointError(RuntimeError):
    pass


def save_params(params: ParamSet, path, extra: dict = None):
    """Binary checkpoint: magic, version, shape table, row-major float64
    tensors, trailing sha256 of everything before it."""
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", 1)
    names = params.names()
    meta = []
    for name in names:
        meta.append((name, params[name].data))
    extra = extra or {}
    for key, value in sorted(extra.items()):
        meta.append((f"__extra__.{key}", np.asarray(value, dtype=np.float64)))
    body += struct.pack("<I", len(meta))
    for name, data in meta:
        nb = name.encode()
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", data.ndim)
        for d in data.shape:
            body += struct.pack("<I", d)
    for _, data in meta:
        body += np.ascontiguousarray(data, dtype="<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as f:
        f.write(bytes(body) + digest)


def load_params(path):
    """Returns (ParamSet, extra dict); validates magic and checksum."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 44 or blob[:8] != MAGIC:
        raise CheckpointError("bad magic or truncated checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    off = 8
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != 1:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", body, off)
            off += 4
            shape.append(d)
        entries.append((name, tuple(shape)))
    params = ParamSet()
    extra = {}
    for name, shape in entries:
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(body, dtype="<f8", count=n_items, offset=off).reshape(shape)
        off += n_items * 8
        if name.startswith("__extra__."):
            extra[name[len("__extra__.") :]] = data.copy()
        else:
            params.add(name, data)
    return params, extra
