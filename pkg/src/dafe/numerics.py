"""Dense float64 tensors with tape-free reverse-mode autodiff.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes ``out.grad`` back into them. ``Tensor.backward`` walks
the graph in reverse topological order. Gradients *accumulate*; the
optimizer is responsible for zeroing them.
"""

import contextlib
import hashlib
import json

import numpy as np

GROUPS = ("base", "domain_in", "domain_out", "task_mt", "task_lm")

_grad_enabled = True


class ShapeError(ValueError):
    pass


class InvalidMaskError(ValueError):
    pass


class EmptyLossError(ValueError):
    pass


class ReproducibilityError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.data.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior nodes do not keep their grads around
                if node._parents:
                    node.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf tensor with a stable id and an immutable group tag."""

    __slots__ = ("_id", "_group")

    def __init__(self, pid, data, group):
        super().__init__(data, requires_grad=True)
        self._id = pid
        self._group = group

    @property
    def id(self):
        return self._id

    @property
    def group(self):
        return self._group

    def __repr__(self):
        return f"Parameter({self._id!r}, group={self._group!r}, shape={self.data.shape})"


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b):
    _check_same(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(x, c):
    c = float(c)

    def backward(g):
        x._accum(g * c)

    return _result(x.data * c, (x,), backward)


def add_rowvec(x, v):
    """``x[..., :] + v`` for a vector ``v`` of length ``x.shape[-1]``."""
    if v.data.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: cannot broadcast {v.shape} over {x.shape}")

    def backward(g):
        if x.requires_grad:
            x._accum(g)
        if v.requires_grad:
            v._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(x.data + v.data, (x, v), backward)


def add_const(x, c):
    """Add a constant (non-differentiable) array broadcast over ``x``."""
    c = np.asarray(c, dtype=np.float64)

    def backward(g):
        x._accum(g)

    return _result(x.data + c, (x,), backward)


def affine(x, w, b=None):
    """``x @ w + b`` over the last axis of ``x``; leading axes are batch axes."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} incompatible with weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accum((g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w._accum(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))

    return _result(out.reshape(lead + (w.shape[1],)), parents, backward)


def matmul(a, b):
    """Batched matrix product with identical leading (batch) axes."""
    if a.data.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accum(np.swapaxes(a.data, -1, -2) @ g)

    return _result(a.data @ b.data, (a, b), backward)


def transpose(x, axes):
    inv = np.argsort(axes)

    def backward(g):
        x._accum(np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), backward)


def reshape(x, shape):
    def backward(g):
        x._accum(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def relu(x):
    pos = x.data > 0

    def backward(g):
        x._accum(g * pos)

    return _result(np.where(pos, x.data, 0.0), (x,), backward)


def sum_all(x):
    def backward(g):
        x._accum(np.broadcast_to(g, x.shape))

    return _result(np.array(x.data.sum()), (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if d < 1 or eps <= 0:
        raise ValueError("layer_norm needs d >= 1 and eps > 0")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            x._accum(dx)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def softmax_masked(scores, mask):
    """Row softmax over the last axis; ``mask`` (broadcastable) marks allowed entries.

    Masked entries come out as exact zeros and receive exact-zero gradient.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not m.any(axis=-1).all():
        raise InvalidMaskError("softmax_masked: a row has every entry masked")
    s = np.where(m, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(s), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        scores._accum(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _result(p, (scores,), backward)


def embedding(weight, ids):
    ids = np.asarray(ids, dtype=np.int64)
    V = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding: token id out of range [0, {V})")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        weight._accum(gw)

    return _result(weight.data[ids], (weight,), backward)


def dropout(x, rate, rng):
    if rate <= 0.0 or not _grad_enabled:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        x._accum(g * keep)

    return _result(x.data * keep, (x,), backward)


def cross_entropy(logits, targets, ignore_index=0):
    """Mean token negative log-likelihood over positions whose target != ignore_index."""
    V = logits.shape[-1]
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    z = logits.data.reshape(-1, V)
    if t.shape[0] != z.shape[0]:
        raise ShapeError(f"cross_entropy: {z.shape[0]} logit rows vs {t.shape[0]} targets")
    keep = t != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise EmptyLossError("cross_entropy: every position is ignored")
    tk = t[keep]
    if tk.min() < 0 or tk.max() >= V:
        raise IndexError(f"cross_entropy: target outside [0, {V})")
    zk = z[keep]
    zmax = zk.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(zk - zmax).sum(axis=1))
    rows = np.arange(n)
    loss = float((lse - zk[rows, tk]).sum() / n)

    def backward(g):
        p = np.exp(zk - lse[:, None])
        p[rows, tk] -= 1.0
        full = np.zeros_like(z)
        full[keep] = p * (float(g) / n)
        logits._accum(full.reshape(logits.shape))

    return _result(np.array(loss), (logits,), backward)


def grad_check(f, params, h=1e-5, max_coords=None, seed=0):
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` builds a fresh scalar Tensor from ``params`` on every call. With
    ``max_coords`` set, that many coordinates per parameter are sampled.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    with no_grad():
        again = f()
    if again.data.tobytes() != loss.data.tobytes():
        raise ReproducibilityError("f is not deterministic between calls")
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(f().data)
                flat[i] = orig - h
                down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        p.zero_grad()
    return worst


# --- checkpoint container -------------------------------------------------
#
#   line 1   b"DAFECKPT 1\n"
#   line 2   one JSON object (sorted keys, no whitespace) then b"\n":
#            {"meta": {...}, "params": [{"id", "group", "shape"}, ...]}
#   rest     every parameter's values, row-major little-endian float64,
#            concatenated in the order of "params".

MAGIC = b"DAFECKPT 1\n"


def save_parameters(path, params, meta=None):
    params = list(params)
    header = {
        "meta": meta or {},
        "params": [{"id": p.id, "group": p.group, "shape": list(p.shape)} for p in params],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_parameters(path):
    """Return ``(meta, {id: (group, array)})`` in file order."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    out = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64)
        out[entry["id"]] = (entry["group"], arr.reshape(shape))
        offset += 8 * n
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return header["meta"], out


def checksum(arr):
    """Bitwise fingerprint of an array (for immutability assertions)."""
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()
