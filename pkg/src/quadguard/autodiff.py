"""Dense float64 matrices plus a reverse-mode gradient tape.

Every value is a 2-D numpy float64 array: scalars are (1, 1), column vectors
(n, 1), row vectors (1, n).  Plain-array kernels live alongside a small taped
``Tensor`` wrapper that records parents and a backward closure per op, enough
to train the toy attention detector.  All numerics are deterministic for a
fixed seed; there is no threading, no float32 path, and no broadcasting beyond
row/column vectors against a matrix.
"""

from __future__ import annotations

import math

import numpy as np

LAYER_NORM_EPS = 1e-5
JS_EPS = 1e-12


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array (scalars become 1x1)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected at most 2 dims, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# plain-array kernels (shared by the Tensor ops below)
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with row-max subtraction; rows sum to one."""
    x = as_matrix(x)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows(x: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Per-row standardization with population variance."""
    x = as_matrix(x)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def js_divergence_rows(p: np.ndarray, q: np.ndarray,
                       eps: float = JS_EPS) -> np.ndarray:
    """Row-wise Jensen-Shannon divergence (natural log), shape (n, 1).

    Bounded in [0, ln 2]; eps only guards log(0) so exact-zero entries
    contribute exactly zero.
    """
    p, q = as_matrix(p), as_matrix(q)
    m = 0.5 * (p + q)
    lm = np.log(m + eps)
    kl_p = (p * (np.log(p + eps) - lm)).sum(axis=1, keepdims=True)
    kl_q = (q * (np.log(q + eps) - lm)).sum(axis=1, keepdims=True)
    # mathematically >= 0; clamp float cancellation near zero
    return np.maximum(0.5 * (kl_p + kl_q), 0.0)


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


class Tensor:
    """A matrix node on the gradient tape."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = as_matrix(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _from_op(value: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor(value)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def detach(self) -> "Tensor":
        """Same value, cut from the tape (no gradient flows through)."""
        return Tensor(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        a, b = self, self._coerce(other)
        out_val = a.value + b.value

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._from_op(out_val, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._from_op(-a.value, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        a, b = self, self._coerce(other)
        out_val = a.value * b.value

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.value, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.value, b.shape))

        return Tensor._from_op(out_val, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self._coerce(other)
        out_val = a.value / b.value

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.value, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.value / (b.value ** 2),
                                           b.shape))

        return Tensor._from_op(out_val, (a, b), backward)

    def __matmul__(self, other):
        a, b = self, self._coerce(other)
        out_val = matmul(a.value, b.value)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.value.T)
            if b.requires_grad:
                b._accumulate(a.value.T @ g)

        return Tensor._from_op(out_val, (a, b), backward)

    @property
    def T(self) -> "Tensor":
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.T)

        return Tensor._from_op(a.value.T.copy(), (a,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out_val = np.exp(a.value)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_val)

        return Tensor._from_op(out_val, (a,), backward)

    def log(self) -> "Tensor":
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.value)

        return Tensor._from_op(np.log(a.value), (a,), backward)

    def tanh(self) -> "Tensor":
        a = self
        out_val = np.tanh(a.value)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (1.0 - out_val ** 2))

        return Tensor._from_op(out_val, (a,), backward)

    def sigmoid(self) -> "Tensor":
        a = self
        # stable two-sided form
        v = a.value
        out_val = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                           np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_val * (1.0 - out_val))

        return Tensor._from_op(out_val, (a,), backward)

    def softplus(self) -> "Tensor":
        a = self
        v = a.value
        out_val = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
        sig = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                       np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * sig)

        return Tensor._from_op(out_val, (a,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self) -> "Tensor":
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.value, g.item()))

        return Tensor._from_op(np.array([[a.value.sum()]]), (a,), backward)

    def mean(self) -> "Tensor":
        a = self
        n = a.value.size

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.value, g.item() / n))

        return Tensor._from_op(np.array([[a.value.mean()]]), (a,), backward)

    def sum_rows(self) -> "Tensor":
        """Sum over columns, keepdims: (n, m) -> (n, 1)."""
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor._from_op(a.value.sum(axis=1, keepdims=True), (a,),
                               backward)

    # -- fused row-wise ops ------------------------------------------------------

    def softmax_rows(self) -> "Tensor":
        a = self
        out_val = softmax_rows(a.value)

        def backward(g):
            if a.requires_grad:
                inner = (g * out_val).sum(axis=1, keepdims=True)
                a._accumulate(out_val * (g - inner))

        return Tensor._from_op(out_val, (a,), backward)

    def layer_norm_rows(self, eps: float = LAYER_NORM_EPS) -> "Tensor":
        a = self
        x = a.value
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv

        def backward(g):
            if a.requires_grad:
                n = x.shape[1]
                g_mean = g.mean(axis=1, keepdims=True)
                gx_mean = (g * xhat).mean(axis=1, keepdims=True)
                a._accumulate(inv * (g - g_mean - xhat * gx_mean))

        return Tensor._from_op(xhat, (a,), backward)

    def js_rows(self, other: "Tensor", eps: float = JS_EPS) -> "Tensor":
        """Row-wise Jensen-Shannon divergence against ``other``; (n, 1)."""
        p, q = self, self._coerce(other)
        pv, qv = p.value, q.value
        m = 0.5 * (pv + qv)
        lp, lq, lm = np.log(pv + eps), np.log(qv + eps), np.log(m + eps)
        raw = 0.5 * ((pv * (lp - lm)).sum(axis=1, keepdims=True)
                     + (qv * (lq - lm)).sum(axis=1, keepdims=True))
        out_val = np.maximum(raw, 0.0)
        pos = (raw > 0.0).astype(np.float64)

        def backward(g):
            gg = g * pos  # clamped rows contribute no gradient
            mr = m / (m + eps)
            if p.requires_grad:
                dp = 0.5 * ((lp - lm) + pv / (pv + eps) - mr)
                p._accumulate(gg * dp)
            if q.requires_grad:
                dq = 0.5 * ((lq - lm) + qv / (qv + eps) - mr)
                q._accumulate(gg * dq)

        return Tensor._from_op(out_val, (p, q), backward)

    def bce_with_logits(self, targets: np.ndarray,
                        mask: np.ndarray) -> "Tensor":
        """Masked binary cross-entropy from logits, summed; (1, 1).

        Stable form: max(z,0) - z*y + log(1 + exp(-|z|)).
        """
        a = self
        z = a.value
        y = as_matrix(targets)
        w = as_matrix(mask)
        per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        out_val = np.array([[(w * per).sum()]])
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                       np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.item() * w * (sig - y))

        return Tensor._from_op(out_val, (a,), backward)

    # -- backward pass ----------------------------------------------------------

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() expects a scalar (1x1) loss")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, grad={self.requires_grad})"


def feed_forward(x, w1, b1, w2, b2):
    """Two affine layers with a tanh between; works on arrays or Tensors."""
    if isinstance(x, Tensor):
        return (x @ w1 + b1).tanh() @ w2 + b2
    return np.tanh(matmul(x, w1) + as_matrix(b1)) @ as_matrix(w2) + as_matrix(b2)


class Adam:
    """Per-parameter adaptive step-size gradient descent."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * p.grad ** 2
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def numeric_gradient(f, leaves: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar f() w.r.t. each leaf entry."""
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.value)
        flat = leaf.value.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f().value.item()
            flat[i] = orig - h
            lo = f().value.item()
            flat[i] = orig
            gf[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads
