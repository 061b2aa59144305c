"""Vectorized forward-mode automatic differentiation.

A ``Dual`` carries a float array ``val`` together with a stack of
directional derivatives ``der`` whose trailing axis indexes the seeded
directions.  All arithmetic needed by the dynamics and the numerical
flow maps is overloaded, so any routine written against the helpers in
this module can be evaluated either on plain numpy arrays (fast path)
or on ``Dual`` operands to obtain exact derivatives of its outputs with
respect to the seeded inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual", "seed", "value", "deriv", "sin", "cos", "sqrt",
    "stack", "concat", "mv", "mm", "transpose", "dot", "vnorm",
]


class Dual:
    __slots__ = ("val", "der")

    # keep numpy scalars/arrays from absorbing us into object arrays;
    # arithmetic with ndarray operands falls back to our reflected ops
    __array_ufunc__ = None

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @property
    def ndir(self) -> int:
        return self.der.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        arr = np.asarray(other, dtype=float)
        return Dual(arr, np.zeros(arr.shape + (self.ndir,)))

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.val + other.val, self.der + other.der)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.val - other.val, self.der - other.der)

    def __rsub__(self, other):
        other = self._lift(other)
        return Dual(other.val - self.val, other.der - self.der)

    def __mul__(self, other):
        other = self._lift(other)
        return Dual(
            self.val * other.val,
            self.der * other.val[..., None] + other.der * self.val[..., None],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        inv = 1.0 / other.val
        val = self.val * inv
        der = (self.der - other.der * val[..., None]) * inv[..., None]
        return Dual(val, der)

    def __rtruediv__(self, other):
        other = self._lift(other)
        return other.__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, np.integer)):
            raise TypeError("only integer powers are supported")
        val = self.val ** p
        der = p * (self.val ** (p - 1))[..., None] * self.der
        return Dual(val, der)

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.der[idx])

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r})"


def seed(x) -> Dual:
    """Lift a 1-D array to a Dual seeded with the identity directions."""
    x = np.asarray(x, dtype=float)
    return Dual(x, np.eye(x.size).reshape(x.shape + (x.size,)))


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def deriv(x):
    if isinstance(x, Dual):
        return x.der
    raise TypeError("not a Dual")


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val)[..., None] * x.der)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val)[..., None] * x.der)
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        root = np.sqrt(x.val)
        return Dual(root, x.der / (2.0 * root[..., None]))
    return np.sqrt(x)


def _common_ndir(items):
    for item in items:
        if isinstance(item, Dual):
            return item.ndir
    return None


def stack(items):
    """Stack scalars/arrays along a new leading axis, promoting to Dual."""
    ndir = _common_ndir(items)
    if ndir is None:
        return np.stack([np.asarray(i, dtype=float) for i in items])
    vals, ders = [], []
    for item in items:
        if not isinstance(item, Dual):
            arr = np.asarray(item, dtype=float)
            item = Dual(arr, np.zeros(arr.shape + (ndir,)))
        vals.append(item.val)
        ders.append(item.der)
    return Dual(np.stack(vals), np.stack(ders))


def concat(items):
    ndir = _common_ndir(items)
    if ndir is None:
        return np.concatenate([np.asarray(i, dtype=float) for i in items])
    vals, ders = [], []
    for item in items:
        if not isinstance(item, Dual):
            arr = np.asarray(item, dtype=float)
            item = Dual(arr, np.zeros(arr.shape + (ndir,)))
        vals.append(item.val)
        ders.append(item.der)
    return Dual(np.concatenate(vals), np.concatenate(ders))


def mv(A, x):
    """Matrix-vector product with Dual support."""
    if not isinstance(A, Dual) and not isinstance(x, Dual):
        return np.asarray(A) @ np.asarray(x)
    ndir = _common_ndir((A, x))
    if not isinstance(A, Dual):
        arr = np.asarray(A, dtype=float)
        A = Dual(arr, np.zeros(arr.shape + (ndir,)))
    if not isinstance(x, Dual):
        arr = np.asarray(x, dtype=float)
        x = Dual(arr, np.zeros(arr.shape + (ndir,)))
    val = A.val @ x.val
    der = np.einsum("ijd,j->id", A.der, x.val) + A.val @ x.der
    return Dual(val, der)


def mm(A, B):
    """Matrix-matrix product with Dual support."""
    if not isinstance(A, Dual) and not isinstance(B, Dual):
        return np.asarray(A) @ np.asarray(B)
    ndir = _common_ndir((A, B))
    if not isinstance(A, Dual):
        arr = np.asarray(A, dtype=float)
        A = Dual(arr, np.zeros(arr.shape + (ndir,)))
    if not isinstance(B, Dual):
        arr = np.asarray(B, dtype=float)
        B = Dual(arr, np.zeros(arr.shape + (ndir,)))
    val = A.val @ B.val
    der = np.einsum("ijd,jk->ikd", A.der, B.val) + np.einsum(
        "ij,jkd->ikd", A.val, B.der
    )
    return Dual(val, der)


def mm_tb(A, B):
    """Matrix product for trailing-batch operands shaped (n, m, B)."""
    if not isinstance(A, Dual) and not isinstance(B, Dual):
        return np.einsum("ikb,kjb->ijb", A, B)
    ndir = _common_ndir((A, B))
    if not isinstance(A, Dual):
        arr = np.asarray(A, dtype=float)
        A = Dual(arr, np.zeros(arr.shape + (ndir,)))
    if not isinstance(B, Dual):
        arr = np.asarray(B, dtype=float)
        B = Dual(arr, np.zeros(arr.shape + (ndir,)))
    val = np.einsum("ikb,kjb->ijb", A.val, B.val)
    der = np.einsum("ikbd,kjb->ijbd", A.der, B.val) + np.einsum(
        "ikb,kjbd->ijbd", A.val, B.der
    )
    return Dual(val, der)


def transpose(A):
    if isinstance(A, Dual):
        return Dual(A.val.T, np.swapaxes(A.der, 0, 1))
    return np.asarray(A).T


def dot(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return float(np.dot(a, b))
    ndir = _common_ndir((a, b))
    if not isinstance(a, Dual):
        arr = np.asarray(a, dtype=float)
        a = Dual(arr, np.zeros(arr.shape + (ndir,)))
    if not isinstance(b, Dual):
        arr = np.asarray(b, dtype=float)
        b = Dual(arr, np.zeros(arr.shape + (ndir,)))
    val = float(np.dot(a.val, b.val))
    der = a.der.T @ b.val + b.der.T @ a.val
    return Dual(val, der)


def vnorm(x, eps: float = 0.0):
    """Euclidean norm; ``eps`` smooths the kink at the origin."""
    s = dot(x, x)
    return sqrt(s + eps * eps)
