"""Private read / private write for a single (K, R) code class.

Everything works on one subpacket of all M submodels at a time, with an
optional leading batch shape (``...``) so that many subpackets, or many
enumerated noise draws, go through one call.

Array layouts (last axes):

* plain subpacket ``W``: ``(..., M, y, K)``, W[m, j, i] is parameter i of
  coded symbol j of submodel m
* storage noise ``Z``: ``(..., y, y + 1, M)``
* database share ``S``: ``(..., y, M)``; block j holds the M coded symbols j
* read query ``Q[n, l]``: ``(..., y, M)``; query noise ``(..., y, K, M)``
* update ``U[n, l]``: ``(...)``; update noise ``(..., K)``

Submodel and database indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleCode, ProtocolViolation
from .ffield import FieldCtx, inv, solve_linear


@dataclass(frozen=True)
class ClassGeometry:
    K: int
    R: int
    Rprime: int
    y: int

    @classmethod
    def from_code(cls, K: int, R: int) -> ClassGeometry:
        Rprime = R if (R - K) % 2 else R - 1
        y = (Rprime - K - 1) // 2
        if K < 1 or y < 1:
            raise InfeasibleCode(f"({K},{R}) code leaves no room for a subpacket")
        return cls(K=K, R=R, Rprime=Rprime, y=y)

    @property
    def params_per_subpacket(self) -> int:
        return self.y * self.K


def _prod(values, q: int) -> int:
    out = 1
    for v in values:
        out = out * v % q
    return out


def storage_coefficients(alpha: int, f: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    """1 / (f[j, i] - alpha) for every slot of the grid."""
    y, K = f.shape
    return ctx.array([[inv(int(f[j, i]) - alpha, ctx) for i in range(K)] for j in range(y)])


def encode_subpacket(W, Z, alpha: int, f: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    """Share of one database: coded symbols plus a degree-y noise polynomial in alpha."""
    y, K = f.shape
    W = np.asarray(W)
    Z = np.asarray(Z)
    if W.shape[-2:] != (y, K) or Z.shape[-3:-1] != (y, y + 1):
        raise ProtocolViolation(f"plain shape {W.shape} / noise shape {Z.shape} do not fit y={y}, K={K}")
    coeff = storage_coefficients(alpha, f, ctx)
    Wt = np.swapaxes(W, -3, -2)  # (..., y, M, K)
    coded = ctx.dot(Wt, coeff[:, None, :], axis=-1)
    powers = ctx.array([pow(alpha, t, ctx.q) for t in range(y + 1)])
    noise = ctx.dot(np.swapaxes(Z, -2, -1), powers, axis=-1)  # (..., y, M)
    return ctx.add(coded, noise)


@dataclass
class ReadQuery:
    queries: np.ndarray  # (n_dbs, K, ..., y, M)
    noise: np.ndarray  # (..., y, K, M)


def read_query_coefficients(alpha: int, f: np.ndarray, ell: int, ctx: FieldCtx):
    """Per-block multipliers of the selector and of the noise in Q[n, ell]."""
    q = ctx.q
    y, K = f.shape
    sel, mask = [], []
    for j in range(y):
        row = [int(v) for v in f[j]]
        num = _prod((row[i] - alpha for i in range(K) if i != ell), q)
        den = _prod((row[i] - row[ell] for i in range(K) if i != ell), q)
        sel.append(num * inv(den, ctx) % q)
        mask.append(_prod((row[i] - alpha for i in range(K)), q))
    return ctx.array(sel), ctx.array(mask)


def gen_read_queries(
    theta: int,
    M: int,
    alphas: Sequence[int],
    f: np.ndarray,
    ctx: FieldCtx,
    rng: np.random.Generator | None = None,
    noise=None,
    batch: tuple[int, ...] = (),
) -> ReadQuery:
    """Queries for the databases with constants ``alphas``, one per ell.

    The same noise is used for every database. Pass ``noise`` explicitly
    (shape ``(*batch, y, K, M)``, zeros for a noiseless query) or an ``rng``.
    """
    y, K = f.shape
    if not 0 <= theta < M:
        raise ProtocolViolation(f"submodel index {theta} outside [0, {M})")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = ctx.random(rng, (*batch, y, K, M))
    else:
        noise = ctx.array(noise)
    batch = noise.shape[:-3]
    selector = ctx.zeros(M)
    selector[theta] = 1
    out = ctx.zeros((len(alphas), K, *batch, y, M))
    for n, alpha in enumerate(alphas):
        for ell in range(K):
            sel, mask = read_query_coefficients(int(alpha), f, ell, ctx)
            signal = sel[:, None] * selector[None, :] % ctx.q  # (y, M)
            out[n, ell] = ctx.add(signal, ctx.mul(noise[..., :, ell, :], mask[:, None]))
    return ReadQuery(queries=out, noise=noise)


def answer_query(S, Q, ctx: FieldCtx):
    """Inner product of a share with one query."""
    S, Q = np.asarray(S), np.asarray(Q)
    if S.shape[-2:] != Q.shape[-2:]:
        raise ProtocolViolation(f"share shape {S.shape} does not match query shape {Q.shape}")
    return ctx.dot(S, Q, axis=(-2, -1)) if S.ndim else ctx.mul(S, Q)


def decode_matrix(alphas: Sequence[int], f: np.ndarray, ell: int, ctx: FieldCtx) -> np.ndarray:
    """Rows [1/(f[j, ell] - a) for j] + [a**t for t <= K + y], one per answering database."""
    y, K = f.shape
    rows = []
    for a in alphas:
        a = int(a)
        rows.append([inv(int(f[j, ell]) - a, ctx) for j in range(y)]
                    + [pow(a, t, ctx.q) for t in range(K + y + 1)])
    return ctx.array(rows)


def decode_answers(answers, alphas: Sequence[int], f: np.ndarray, geom: ClassGeometry, ctx: FieldCtx):
    """Recover W_theta's parameters of the subpacket from R' answers.

    ``answers`` has shape ``(R', K, ...)``; the result has shape ``(..., y, K)``.
    """
    y, K = geom.y, geom.K
    answers = np.asarray(answers)
    if len(alphas) != geom.Rprime or answers.shape[0] != geom.Rprime:
        raise ProtocolViolation(
            f"decoding needs answers from exactly {geom.Rprime} databases, got {answers.shape[0]}"
        )
    if answers.shape[1] != K:
        raise ProtocolViolation(f"expected {K} answers per database, got {answers.shape[1]}")
    batch = answers.shape[2:]
    out = ctx.zeros((*batch, y, K))
    for ell in range(K):
        A = decode_matrix(alphas, f, ell, ctx)
        rhs = answers[:, ell].reshape(geom.Rprime, -1)
        sol = solve_linear(A, rhs, ctx)  # (R', P)
        out[..., :, ell] = np.moveaxis(sol[:y].reshape(y, *batch), 0, -1)
    return out


@dataclass
class WriteUpdate:
    updates: np.ndarray  # (n_dbs, K, ...)
    delta_tilde: np.ndarray  # (..., y, K)
    noise: np.ndarray  # (..., K)


def update_scaling(f: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    """Factor turning Delta into Delta-tilde, per (j, ell)."""
    q = ctx.q
    y, K = f.shape
    grid = [[int(v) for v in row] for row in f]
    out = []
    for j in range(y):
        row = []
        for ell in range(K):
            num = _prod((grid[j][i] - grid[j][ell] for i in range(K) if i != ell), q)
            den = _prod((grid[i][ell] - grid[j][ell] for i in range(y) if i != j), q)
            row.append(num * inv(den, ctx) % q)
        out.append(row)
    return ctx.array(out)


def gen_write_updates(
    delta,
    alphas: Sequence[int],
    f: np.ndarray,
    ctx: FieldCtx,
    rng: np.random.Generator | None = None,
    noise=None,
) -> WriteUpdate:
    """K combined update symbols for each database in ``alphas``.

    ``delta`` has shape ``(..., y, K)``; ``noise`` (shape ``(..., K)``) is
    drawn from ``rng`` when not given.
    """
    q = ctx.q
    y, K = f.shape
    delta = ctx.array(delta)
    if delta.shape[-2:] != (y, K):
        raise ProtocolViolation(f"update shape {delta.shape} does not fit y={y}, K={K}")
    batch = delta.shape[:-2]
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = ctx.random(rng, (*batch, K))
    else:
        noise = ctx.array(noise)
    dt = ctx.mul(delta, update_scaling(f, ctx))
    out = ctx.zeros((len(alphas), K, *batch))
    for n, alpha in enumerate(alphas):
        alpha = int(alpha)
        for ell in range(K):
            col = [int(f[i, ell]) - alpha for i in range(y)]
            lead = ctx.array([_prod((col[i] for i in range(y) if i != j), q) for j in range(y)])
            acc = ctx.dot(dt[..., :, ell], lead, axis=-1)
            out[n, ell] = ctx.add(acc, ctx.mul(noise[..., ell], _prod(col, q)))
    return WriteUpdate(updates=out, delta_tilde=dt, noise=noise)


def incremental_update(U, Q, alpha: int, f: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    """Database-side expansion of one update symbol into a share-shaped increment.

    ``Q`` is the read query this database kept for the same ell.
    """
    if Q is None:
        raise ProtocolViolation("no retained read query for this update")
    y, K = f.shape
    Q = np.asarray(Q)
    U = np.asarray(U)
    if Q.shape[-2] != y or Q.shape[:-2] != U.shape:
        raise ProtocolViolation(f"update shape {U.shape} does not match query shape {Q.shape}")
    scale = ctx.inv_array([_prod((int(f[j, i]) - alpha for i in range(K)), ctx.q) for j in range(y)])
    return ctx.mul(ctx.mul(U[..., None, None], scale[:, None]), Q)


def apply_updates(S, increments: Sequence[np.ndarray], ctx: FieldCtx) -> np.ndarray:
    out = np.asarray(S).copy()
    for inc in increments:
        if np.shape(inc) != out.shape:
            raise ProtocolViolation(f"increment shape {np.shape(inc)} does not match share {out.shape}")
        out = ctx.add(out, inc)
    return out
