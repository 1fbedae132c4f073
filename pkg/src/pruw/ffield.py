"""Prime-field arithmetic, random symbols and exact linear solving.

Field elements live in numpy arrays. When ``(q - 1) ** 2`` fits in a signed
64-bit integer the arrays are ``int64`` and every product is reduced before
the next accumulation; larger moduli fall back to ``object`` arrays of Python
ints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivisionByZero, FieldTooSmall, SingularSystem

DEFAULT_Q = 2147483647  # 2**31 - 1

_INT64_SAFE = 3037000499  # largest q with (q - 1)**2 < 2**63
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    """Miller-Rabin; deterministic for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldCtx:
    q: int = DEFAULT_Q

    def __post_init__(self):
        if not isinstance(self.q, int) or not is_prime(self.q):
            raise ValueError(f"field modulus must be a prime integer, got {self.q!r}")

    @property
    def dtype(self):
        return np.int64 if self.q <= _INT64_SAFE else object

    def array(self, values) -> np.ndarray:
        if self.dtype is object:
            arr = np.array(values, dtype=object)
            return np.vectorize(lambda v: int(v) % self.q, otypes=[object])(arr) if arr.size else arr
        return np.asarray(values, dtype=np.int64) % self.q

    def zeros(self, shape) -> np.ndarray:
        if self.dtype is object:
            out = np.empty(shape, dtype=object)
            out.fill(0)
            return out
        return np.zeros(shape, dtype=np.int64)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Uniform field symbols of the given shape."""
        if self.dtype is object:
            nbytes = (self.q.bit_length() + 7) // 8 + 8
            count = int(np.prod(shape, dtype=np.int64))
            vals = [int.from_bytes(rng.bytes(nbytes), "little") % self.q for _ in range(count)]
            return np.array(vals, dtype=object).reshape(shape)
        return rng.integers(0, self.q, size=shape, dtype=np.int64)

    # elementwise helpers; all inputs assumed reduced
    def add(self, a, b):
        return (a + b) % self.q

    def sub(self, a, b):
        return (a - b) % self.q

    def mul(self, a, b):
        return (a * b) % self.q

    def neg(self, a):
        return (-a) % self.q

    def dot(self, a, b, axis=-1):
        """Sum over ``axis`` of ``a * b`` with a reduction after each product."""
        return ((a * b) % self.q).sum(axis=axis) % self.q

    def pow(self, a, e: int):
        """Elementwise ``a ** e`` by square-and-multiply."""
        a = np.asarray(a, dtype=self.dtype) % self.q
        result = np.ones_like(a)
        base = a.copy()
        while e:
            if e & 1:
                result = result * base % self.q
            base = base * base % self.q
            e >>= 1
        return result

    def inv_array(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=self.dtype) % self.q
        if np.any(a == 0):
            raise DivisionByZero("zero has no multiplicative inverse")
        return self.pow(a, self.q - 2)


def inv(x: int, ctx: FieldCtx) -> int:
    x = int(x) % ctx.q
    if x == 0:
        raise DivisionByZero("zero has no multiplicative inverse")
    return pow(x, -1, ctx.q)


def solve_linear(A, b, ctx: FieldCtx) -> np.ndarray:
    """Solve ``A x = b`` over the field by Gauss-Jordan elimination.

    ``b`` may be a vector of length n or an n x P matrix of right-hand sides,
    in which case the result has the same shape.
    """
    q = ctx.q
    A = ctx.array(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got shape {A.shape}")
    n = A.shape[0]
    B = ctx.array(b)
    vector = B.ndim == 1
    if vector:
        B = B.reshape(n, 1)
    if B.shape[0] != n:
        raise ValueError(f"right-hand side has {B.shape[0]} rows, expected {n}")
    A = A.copy()
    B = B.copy()

    for col in range(n):
        nz = np.nonzero(A[col:, col])[0]
        if nz.size == 0:
            raise SingularSystem(f"matrix is singular mod {q} (no pivot in column {col})")
        piv = col + int(nz[0])
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            B[[col, piv]] = B[[piv, col]]
        pinv = pow(int(A[col, col]), -1, q)
        A[col] = A[col] * pinv % q
        B[col] = B[col] * pinv % q
        for row in range(n):
            if row == col or A[row, col] == 0:
                continue
            factor = A[row, col]
            A[row] = (A[row] - factor * A[col] % q) % q
            B[row] = (B[row] - factor * B[col] % q) % q
    return B[:, 0] if vector else B


@dataclass(frozen=True)
class ConstantsPool:
    """Globally known evaluation points.

    ``alphas[n]`` belongs to database n (0-based); ``f[c]`` is the y x K grid of
    constants for code class c.
    """

    alphas: tuple[int, ...]
    f: tuple[np.ndarray, ...] = field(default=())

    def validate(self) -> None:
        alphas = set(self.alphas)
        if len(alphas) != len(self.alphas):
            raise ValueError("database constants are not distinct")
        for c, grid in enumerate(self.f):
            vals = [int(v) for v in np.ravel(grid)]
            if len(set(vals)) != len(vals):
                raise ValueError(f"class {c}: constants are not distinct")
            if alphas.intersection(vals):
                raise ValueError(f"class {c}: constant collides with a database constant")


def _distinct_nonzero(ctx: FieldCtx, count: int, rng: np.random.Generator) -> list[int]:
    if ctx.q - 1 < 2**62:
        picks = rng.choice(ctx.q - 1, size=count, replace=False) + 1
        return [int(v) for v in picks]
    seen: dict[int, None] = {}
    while len(seen) < count:
        v = int(ctx.random(rng, (1,))[0])
        if v:
            seen.setdefault(v)
    return list(seen)


def gen_constants(
    ctx: FieldCtx,
    n_databases: int,
    class_shapes: Sequence[tuple[int, int]],
    rng: np.random.Generator | int | None = None,
) -> ConstantsPool:
    """Draw N database constants and one y x K grid per class, all distinct and nonzero."""
    rng = np.random.default_rng(rng)
    need = n_databases + sum(y * K for y, K in class_shapes)
    if ctx.q - 1 < need:
        raise FieldTooSmall(
            f"need {need} distinct nonzero constants but F_{ctx.q} has only {ctx.q - 1}"
        )
    values = _distinct_nonzero(ctx, need, rng)
    alphas = tuple(values[:n_databases])
    grids = []
    pos = n_databases
    for y, K in class_shapes:
        grids.append(ctx.array(values[pos : pos + y * K]).reshape(y, K))
        pos += y * K
    return ConstantsPool(alphas=alphas, f=tuple(grids))
