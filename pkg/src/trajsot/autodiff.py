"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a closure producing parent
adjoints; `backward` on a scalar node topologically traverses the tape and
accumulates gradients. Scope is deliberately restricted to what a small
transformer needs: dense matmul, row softmax, layer norm, elementwise
arithmetic, concatenation / slicing, reductions, and the closed-form KL
between diagonal Gaussians. The only broadcasting is the row-wise bias add.

Gradients accumulate: repeated backward passes add into ``Parameter.grad``
until `zero_gradients` (or ``Parameter.zero_grad``) resets them, so one
optimizer step can span several micro-batches. Forward results are pure
functions of the inputs; there is no hidden state.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A value node on the tape; holds a float64 ndarray and its parents."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value)
        if not np.all(np.isfinite(self.value)):
            raise ValueError(f"parameter {name!r} initialized with non-finite values")
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value) -> Tensor:
    """Wrap an array as a leaf with no gradient path."""
    return Tensor(value)


def zero_gradients(params) -> None:
    for p in params:
        p.zero_grad()


def _toposort(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss node."""
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {loss.value.shape}")
    order = _toposort(loss)
    adjoint = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return Tensor(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return Tensor(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return Tensor(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    out = a.value / b.value
    return Tensor(out, (a, b), lambda g: (g / b.value, -g * out / b.value))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor(a.value + float(c), (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    return Tensor(a.value * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0.0):
        raise ValueError("log requires strictly positive input")
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.value)
    return Tensor(np.abs(a.value), (a,), lambda g: (g * sign,))


# ---------------------------------------------------------------------------
# linear algebra and structure ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.value.shape} x {b.value.shape}")
    return Tensor(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: x is (L, d), b is (1, d) or (d,)."""
    bv = b.value.reshape(1, -1)
    if x.value.ndim != 2 or bv.shape[1] != x.value.shape[1]:
        raise ValueError(f"add_bias: shapes {x.value.shape} and {b.value.shape}")
    return Tensor(x.value + bv, (x, b), lambda g: (g, g.sum(axis=0).reshape(b.value.shape)))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias (bias broadcast over rows)."""
    return add_bias(matmul(x, weight), bias)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[0] != b.value.shape[0]:
        raise ValueError(f"concat_cols: row counts differ {a.value.shape} vs {b.value.shape}")
    na = a.value.shape[1]
    return Tensor(
        np.concatenate([a.value, b.value], axis=1),
        (a, b),
        lambda g: (g[:, :na], g[:, na:]),
    )


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[1]:
        raise ValueError(f"concat_rows: column counts differ {a.value.shape} vs {b.value.shape}")
    na = a.value.shape[0]
    return Tensor(
        np.concatenate([a.value, b.value], axis=0),
        (a, b),
        lambda g: (g[:na], g[na:]),
    )


def stack_rows(tensors) -> Tensor:
    """Concatenate a list of (1, d) tensors into an (n, d) tensor."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("stack_rows of an empty list")
    n = tensors[0].value.shape[1]
    for t in tensors:
        if t.value.ndim != 2 or t.value.shape[1] != n:
            raise ValueError("stack_rows: inconsistent row shapes")
    sizes = [t.value.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return Tensor(np.concatenate([t.value for t in tensors], axis=0), tuple(tensors), back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        return (full,)

    return Tensor(x.value[start:stop], (x,), back)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return Tensor(x.value[:, start:stop], (x,), back)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    return Tensor(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.value.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size
    return Tensor(x.value.mean(), (x,), lambda g: (np.broadcast_to(g / n, x.value.shape).copy(),))


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows: (L, d) -> (1, d)."""
    if x.value.ndim != 2:
        raise ValueError("mean_rows expects a 2-D tensor")
    n = x.value.shape[0]
    return Tensor(
        x.value.mean(axis=0, keepdims=True),
        (x,),
        lambda g: (np.repeat(g / n, n, axis=0),),
    )


def group_mean_rows(x: Tensor, group_ids, n_groups: int) -> Tensor:
    """Mean of rows sharing a group id: (L, d) -> (n_groups, d).

    ``group_ids`` assigns each row to a group in [0, n_groups); every group
    must be non-empty. Used to pool a batch of sequences stacked along the
    row axis (groups need not be contiguous).
    """
    ids = np.asarray(group_ids, dtype=np.intp)
    if ids.shape != (x.value.shape[0],):
        raise ValueError(f"group_ids must have one entry per row, got {ids.shape}")
    counts = np.bincount(ids, minlength=n_groups)
    if ids.size and (ids.min() < 0 or ids.max() >= n_groups):
        raise ValueError("group id out of range")
    if np.any(counts == 0):
        raise ValueError("every group must contain at least one row")
    sums = np.zeros((n_groups, x.value.shape[1]))
    np.add.at(sums, ids, x.value)
    out = sums / counts[:, None]

    def back(g):
        return ((g / counts[:, None])[ids],)

    return Tensor(out, (x,), back)


# ---------------------------------------------------------------------------
# normalizations


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction.

    ``mask`` is an optional additive constant array (same shape); entries of
    -1e30 zero out the corresponding attention weights exactly.
    """
    v = x.value if mask is None else x.value + mask
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (x,), back)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row standardization followed by a learned affine map."""
    d = x.value.shape[1]
    if gain.value.size != d or bias.value.size != d:
        raise ValueError(f"layer_norm: feature width {d} vs gain {gain.value.shape}, bias {bias.value.shape}")
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv_std
    gv = gain.value.reshape(1, -1)
    out = xhat * gv + bias.value.reshape(1, -1)

    def back(g):
        dxhat = g * gv
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0).reshape(gain.value.shape)
        dbias = g.sum(axis=0).reshape(bias.value.shape)
        return (dx, dgain, dbias)

    return Tensor(out, (x, gain, bias), back)


# ---------------------------------------------------------------------------
# distribution math


def kl_diag_gaussians(mu_q: Tensor, sigma_q: Tensor, mu_p: Tensor, sigma_p: Tensor) -> Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over dims.

    All four arguments must share one shape; sigmas must be strictly
    positive. Differentiable with respect to every argument.
    """
    for name, t in (("sigma_q", sigma_q), ("sigma_p", sigma_p)):
        if np.any(t.value <= 0.0):
            raise ValueError(f"kl_diag_gaussians: {name} must be strictly positive")
    _check_same_shape("kl_diag_gaussians", mu_q, mu_p)
    _check_same_shape("kl_diag_gaussians", sigma_q, sigma_p)
    _check_same_shape("kl_diag_gaussians", mu_q, sigma_q)
    diff = sub(mu_q, mu_p)
    var_p2 = scale(mul(sigma_p, sigma_p), 2.0)
    quad = div(add(mul(sigma_q, sigma_q), mul(diff, diff)), var_p2)
    terms = add(sub(log(sigma_p), log(sigma_q)), add_scalar(quad, -0.5))
    return sum_all(terms)
