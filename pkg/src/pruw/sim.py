"""In-process cluster of databases running the scheme under a storage plan.

A :class:`Deployment` places every partition of every code class on its
R-subset of databases, runs read-update-write sessions, counts the symbols
that cross the user/database boundary and hosts the privacy probes.
"""

from __future__ import annotations

import itertools
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import BudgetExceeded, IncompatibleLength, ProtocolViolation
from .ffield import FieldCtx, gen_constants
from .planner import StoragePlan
from .scheme import (
    ClassGeometry,
    answer_query,
    apply_updates,
    decode_answers,
    encode_subpacket,
    gen_read_queries,
    gen_write_updates,
    incremental_update,
)

log = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**6
DEFAULT_SAMPLES = 10**5
SIGNIFICANCE = 0.001


@dataclass(frozen=True)
class Slot:
    """One partition of one code class, as laid out in every submodel."""

    class_index: int
    part_index: int
    geom: ClassGeometry
    members: tuple[int, ...]
    readers: tuple[int, ...]
    offset: int
    n_sub: int

    @property
    def key(self) -> tuple[int, int]:
        return (self.class_index, self.part_index)

    @property
    def n_params(self) -> int:
        return self.n_sub * self.geom.params_per_subpacket


class Database:
    """State held by one database: coded shares and the queries of open sessions."""

    def __init__(self, index: int, alpha: int, capacity: int):
        self.index = index
        self.alpha = alpha
        self.capacity = capacity
        self.shares: dict[tuple[int, int], np.ndarray] = {}
        self.retained: dict[tuple[int, tuple[int, int]], np.ndarray] = {}

    @property
    def occupancy(self) -> int:
        return sum(int(s.size) for s in self.shares.values())

    def receive_queries(self, session: int, key, queries: np.ndarray) -> None:
        self.retained[(session, key)] = queries

    def answer(self, session: int, key, ctx: FieldCtx) -> np.ndarray:
        try:
            queries = self.retained[(session, key)]
        except KeyError:
            raise ProtocolViolation(f"database {self.index}: no query for {key} in session {session}") from None
        S = self.shares[key]
        return np.stack([answer_query(S, Q, ctx) for Q in queries])

    def write(self, session: int, key, updates: np.ndarray, f: np.ndarray, ctx: FieldCtx) -> None:
        queries = self.retained.pop((session, key), None)
        if queries is None:
            raise ProtocolViolation(
                f"database {self.index}: update for {key} without a read in session {session}"
            )
        increments = [incremental_update(U, Q, self.alpha, f, ctx) for U, Q in zip(updates, queries)]
        self.shares[key] = apply_updates(self.shares[key], increments, ctx)

    def close_session(self, session: int) -> None:
        for k in [k for k in self.retained if k[0] == session]:
            del self.retained[k]


@dataclass
class ClassCount:
    downloaded: int = 0
    uploaded: int = 0
    params: int = 0


@dataclass
class SessionLedger:
    """Symbols moved in one session. Query uploads are tracked but not in C_W."""

    L: int
    downloaded: int = 0
    uploaded: int = 0
    query_uploaded: int = 0
    per_class: dict[int, ClassCount] = field(default_factory=dict)

    @property
    def C_R(self) -> Fraction:
        return Fraction(self.downloaded, self.L)

    @property
    def C_W(self) -> Fraction:
        return Fraction(self.uploaded, self.L)

    @property
    def C_T(self) -> Fraction:
        return self.C_R + self.C_W


class PlainOracle:
    """Uncoded mirror of the model, updated alongside the deployment."""

    def __init__(self, model, ctx: FieldCtx):
        self.ctx = ctx
        self.model = ctx.array(model).copy()

    def apply(self, theta: int, delta) -> None:
        self.model[theta] = self.ctx.add(self.model[theta], self.ctx.array(delta))


class Deployment:
    def __init__(self, plan: StoragePlan, ctx: FieldCtx, pool, databases, slots, M: int, L: int, stored_L: int):
        self.plan = plan
        self.ctx = ctx
        self.pool = pool
        self.databases: list[Database] = databases
        self.slots: list[Slot] = slots
        self.M = M
        self.L = L
        self.stored_L = stored_L
        self._session = 0

    def next_session(self) -> int:
        self._session += 1
        return self._session

    def f(self, slot: Slot) -> np.ndarray:
        return self.pool.f[slot.class_index]

    def alphas(self, dbs: Sequence[int]) -> list[int]:
        return [self.pool.alphas[n] for n in dbs]


def _layout(plan: StoragePlan, stored_L: int) -> list[Slot]:
    slots = []
    offset = 0
    for c, (geom, table) in enumerate(zip(plan.geometries, plan.partitions)):
        for i, (mask, eta) in enumerate(table.entries):
            n_params = eta * stored_L
            n_sub = n_params / geom.params_per_subpacket
            if n_sub.denominator != 1:
                raise IncompatibleLength(f"L = {stored_L} splits a subpacket of class {c}")
            members = table.members(mask)
            slots.append(Slot(c, i, geom, members, members[: geom.Rprime], offset, int(n_sub)))
            offset += int(n_params)
    if offset != stored_L:
        raise IncompatibleLength(f"layout covers {offset} of {stored_L} parameters")
    return slots


def install_plan(plan: StoragePlan, model, rng, ctx: FieldCtx | None = None, pad: bool = False) -> Deployment:
    """Encode an M x L model and place it on the databases.

    Storage noise comes from ``rng`` (the trusted initializer). With ``pad``
    the model is extended with zero parameters up to the next multiple of the
    plan granularity.
    """
    ctx = ctx or FieldCtx()
    rng = np.random.default_rng(rng)
    model = ctx.array(model)
    if model.ndim != 2 or model.shape[0] != plan.M:
        raise ValueError(f"model must have shape ({plan.M}, L), got {model.shape}")
    M, L = model.shape
    gran = plan.granularity
    if L % gran:
        if not pad:
            raise IncompatibleLength(f"L = {L} is not a multiple of the plan granularity {gran}")
        stored_L = -(-L // gran) * gran
        model = np.concatenate([model, ctx.zeros((M, stored_L - L))], axis=1)
    else:
        stored_L = L

    pool = gen_constants(ctx, plan.profile.N, [(g.y, g.K) for g in plan.geometries], rng)
    slots = _layout(plan, stored_L)
    databases = []
    for n, mu in enumerate(plan.profile.mu):
        cap = mu * M * stored_L
        databases.append(Database(n, pool.alphas[n], int(cap) if cap.denominator == 1 else cap))
    for slot in slots:
        g = slot.geom
        W = model[:, slot.offset : slot.offset + slot.n_params].reshape(M, slot.n_sub, g.y, g.K)
        W = W.transpose(1, 0, 2, 3)
        Z = ctx.random(rng, (slot.n_sub, g.y, g.y + 1, M))
        f = pool.f[slot.class_index]
        for n in slot.members:
            databases[n].shares[slot.key] = encode_subpacket(W, Z, pool.alphas[n], f, ctx)
    dep = Deployment(plan, ctx, pool, databases, slots, M, L, stored_L)
    for db in databases:
        if db.occupancy > db.capacity:
            raise IncompatibleLength(f"database {db.index} overfilled")
    log.debug("installed %d partitions over %d databases", len(slots), len(databases))
    return dep


def _read_phase(dep: Deployment, theta: int, session: int, rng, ledger: SessionLedger) -> np.ndarray:
    ctx = dep.ctx
    out = ctx.zeros(dep.stored_L)
    for slot in dep.slots:
        g = slot.geom
        f = dep.f(slot)
        rq = gen_read_queries(theta, dep.M, dep.alphas(slot.members), f, ctx, rng, batch=(slot.n_sub,))
        for idx, n in enumerate(slot.members):
            dep.databases[n].receive_queries(session, slot.key, rq.queries[idx])
            ledger.query_uploaded += int(rq.queries[idx].size)
        answers = np.stack([dep.databases[n].answer(session, slot.key, ctx) for n in slot.readers])
        count = ledger.per_class.setdefault(slot.class_index, ClassCount())
        ledger.downloaded += int(answers.size)
        count.downloaded += int(answers.size)
        count.params += slot.n_params
        values = decode_answers(answers, dep.alphas(slot.readers), f, g, ctx)
        out[slot.offset : slot.offset + slot.n_params] = values.reshape(-1)
    return out


def read_submodel(dep: Deployment, theta: int, rng) -> tuple[np.ndarray, SessionLedger]:
    """Private read of submodel ``theta`` without a write phase."""
    rng = np.random.default_rng(rng)
    session = dep.next_session()
    ledger = SessionLedger(L=dep.L)
    values = _read_phase(dep, theta, session, rng, ledger)
    for db in dep.databases:
        db.close_session(session)
    return values[: dep.L], ledger


def run_session(dep: Deployment, theta: int, delta, rng) -> tuple[np.ndarray, SessionLedger]:
    """One user: private read of ``theta``, then private write of ``delta``.

    Returns the submodel as read (before the update) and the symbol ledger.
    """
    rng = np.random.default_rng(rng)
    ctx = dep.ctx
    delta = ctx.array(delta)
    if delta.shape != (dep.L,):
        raise ValueError(f"update must have length {dep.L}, got shape {delta.shape}")
    if dep.stored_L != dep.L:
        delta = np.concatenate([delta, ctx.zeros(dep.stored_L - dep.L)])
    session = dep.next_session()
    ledger = SessionLedger(L=dep.L)
    recovered = _read_phase(dep, theta, session, rng, ledger)

    for slot in dep.slots:
        g = slot.geom
        f = dep.f(slot)
        D = delta[slot.offset : slot.offset + slot.n_params].reshape(slot.n_sub, g.y, g.K)
        wu = gen_write_updates(D, dep.alphas(slot.members), f, ctx, rng)
        for idx, n in enumerate(slot.members):
            dep.databases[n].write(session, slot.key, wu.updates[idx], f, ctx)
        sent = int(wu.updates.size)
        ledger.uploaded += sent
        ledger.per_class[slot.class_index].uploaded += sent
    for db in dep.databases:
        db.close_session(session)
    return recovered[: dep.L], ledger


def verify_against_oracle(dep: Deployment, oracle: PlainOracle, rng) -> list[int]:
    """Read back every submodel; return the indices that disagree with the oracle."""
    rng = np.random.default_rng(rng)
    bad = []
    for m in range(dep.M):
        values, _ = read_submodel(dep, m, rng)
        if not np.array_equal(values, oracle.model[m]):
            bad.append(m)
    return bad


def closed_form_costs(geom: ClassGeometry) -> tuple[Fraction, Fraction]:
    denom = geom.Rprime - geom.K - 1
    return Fraction(2 * geom.Rprime, denom), Fraction(2 * geom.R, denom)


def measure_costs(ledger: SessionLedger, plan: StoragePlan) -> dict:
    """Measured against closed-form costs, per class and in aggregate."""
    classes = []
    for c, (cls, geom) in enumerate(zip(plan.classes, plan.geometries)):
        count = ledger.per_class.get(c)
        if count is None or not count.params:
            continue
        want_r, want_w = closed_form_costs(geom)
        got_r = Fraction(count.downloaded, count.params)
        got_w = Fraction(count.uploaded, count.params)
        classes.append({
            "class": c,
            "K": cls.K,
            "R": cls.R,
            "C_R": got_r,
            "C_W": got_w,
            "C_T": got_r + got_w,
            "expected_C_R": want_r,
            "expected_C_W": want_w,
            "expected_C_T": cls.cost,
            "exact": got_r == want_r and got_w == want_w,
        })
    subpacket = max(g.params_per_subpacket for g in plan.geometries)
    theoretical = plan.theoretical_cost
    deviation = abs(ledger.C_T - theoretical)
    tolerance = Fraction(2 * subpacket, ledger.L) * theoretical
    return {
        "classes": classes,
        "C_R": ledger.C_R,
        "C_W": ledger.C_W,
        "C_T": ledger.C_T,
        "theoretical": theoretical,
        "deviation": deviation,
        "tolerance": tolerance,
        "within_tolerance": deviation <= tolerance,
        "query_upload_symbols": ledger.query_uploaded,
    }


# ------------------------------------------------------------ snapshots

_MAGIC = b"PRUWSNAP"
_VERSION = 1


def save_snapshot(databases: Sequence[Database], q: int, path) -> None:
    """Write database shares to a binary file (little-endian, 64-bit symbols)."""
    if q >= 2**64:
        raise ValueError("snapshots store symbols as 64-bit words")
    table = []
    payload = []
    for db in databases:
        cap = db.capacity if isinstance(db.capacity, int) else -1
        table.append(struct.pack("<IQqI", db.index, db.alpha, cap, len(db.shares)))
        for (c, i), share in sorted(db.shares.items()):
            P, y, M = share.shape
            table.append(struct.pack("<IIQII", c, i, P, y, M))
            payload.append(np.asarray(share, dtype="<u8").tobytes())
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HQI", _VERSION, q, len(databases)))
        fh.write(b"".join(table))
        fh.write(b"".join(payload))


def load_snapshot(path) -> tuple[int, list[Database]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a snapshot file")
    version, q, n_db = struct.unpack_from("<HQI", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos = 8 + struct.calcsize("<HQI")
    layout = []
    databases = []
    for _ in range(n_db):
        index, alpha, cap, n_shares = struct.unpack_from("<IQqI", data, pos)
        pos += struct.calcsize("<IQqI")
        db = Database(index, alpha, cap if cap >= 0 else None)
        databases.append(db)
        for _ in range(n_shares):
            c, i, P, y, M = struct.unpack_from("<IIQII", data, pos)
            pos += struct.calcsize("<IIQII")
            layout.append((db, (c, i), (P, y, M)))
    ctx_dtype = FieldCtx(q).dtype
    for db, key, shape in layout:
        count = int(np.prod(shape))
        raw = np.frombuffer(data, dtype="<u8", count=count, offset=pos)
        pos += 8 * count
        db.shares[key] = raw.astype(np.int64).reshape(shape) if ctx_dtype is np.int64 else \
            np.array([int(v) for v in raw], dtype=object).reshape(shape)
    return q, databases


def restore_snapshot(dep: Deployment, path) -> None:
    """Replace the shares of a deployment's databases with those in ``path``."""
    q, databases = load_snapshot(path)
    if q != dep.ctx.q or len(databases) != len(dep.databases):
        raise ValueError("snapshot does not match this deployment")
    for db, saved in zip(dep.databases, databases):
        if db.alpha != saved.alpha or set(db.shares) != set(saved.shares):
            raise ValueError(f"snapshot layout differs for database {db.index}")
        db.shares = saved.shares


# --------------------------------------------------------------- probes


@dataclass
class ProbeReport:
    mode: str
    method: str
    q: int
    K: int
    R: int
    M: int
    points: int
    tv: Fraction | None = None
    tv_uniform: Fraction | None = None
    statistic: float | None = None
    p_value: float | None = None
    n_tests: int = 0
    passed: bool = False


def _tv(a: Counter, b: Counter, na: int, nb: int) -> Fraction:
    keys = set(a) | set(b)
    return sum((abs(Fraction(a[x], na) - Fraction(b[x], nb)) for x in keys), Fraction(0)) / 2


def _tv_uniform(a: Counter, n: int, space: int) -> Fraction:
    u = Fraction(1, space)
    seen = sum((abs(Fraction(c, n) - u) for c in a.values()), Fraction(0))
    return (seen + (space - len(a)) * u) / 2


def _rows(obs: np.ndarray) -> Counter:
    return Counter(map(tuple, obs.tolist()))


def _all_points(q: int, dims: int, ctx: FieldCtx) -> np.ndarray:
    return ctx.array(list(itertools.product(range(q), repeat=dims))).reshape(q**dims, dims)


def _probe_observations(mode, ctx, geom, M, alphas, f, noise, variants, fixed_rng):
    """Per-variant observation matrices, one per database: list[list[(B, d) array]]."""
    y, K = geom.y, geom.K
    B = noise.shape[0]
    out = []
    if mode == "index":
        zq = noise[:, : y * K * M].reshape(B, y, K, M)
        zu = noise[:, y * K * M :].reshape(B, K)
        delta = ctx.random(fixed_rng, (y, K))
        for theta in variants:
            rq = gen_read_queries(theta, M, alphas, f, ctx, noise=zq)
            wu = gen_write_updates(np.broadcast_to(delta, (B, y, K)), alphas, f, ctx, noise=zu)
            per_db = []
            for n in range(len(alphas)):
                qpart = np.moveaxis(rq.queries[n], 0, 1).reshape(B, -1)
                per_db.append(np.concatenate([qpart, wu.updates[n].T.reshape(B, K)], axis=1))
            out.append(per_db)
    elif mode == "update":
        for d in variants:
            wu = gen_write_updates(np.broadcast_to(d, (B, y, K)), alphas, f, ctx, noise=noise.reshape(B, K))
            out.append([wu.updates[n].T.reshape(B, K) for n in range(len(alphas))])
    elif mode == "security":
        Z = noise.reshape(B, y, y + 1, M)
        for W in variants:
            Wb = np.broadcast_to(W, (B, M, y, K))
            out.append([encode_subpacket(Wb, Z, a, f, ctx).reshape(B, y * M) for a in alphas])
    else:
        raise ValueError(f"unknown probe mode {mode!r}")
    return out


def privacy_probe(
    mode: str,
    ctx: FieldCtx,
    K: int = 1,
    R: int = 4,
    M: int = 2,
    seed: int = 0,
    budget: int = ENUMERATION_LIMIT,
    samples: int = DEFAULT_SAMPLES,
    allow_sampling: bool = True,
    force_sampling: bool = False,
    deltas=None,
) -> ProbeReport:
    """Check that what one database sees does not depend on the secret.

    ``index``: queries and updates for every submodel index; ``update``:
    update symbols for different update values; ``security``: stored shares
    for different model values. Small noise spaces are enumerated exactly and
    the total-variation distance is reported; larger ones are sampled and
    tested with chi-square at family-wise significance 0.001 (Bonferroni).
    """
    geom = ClassGeometry.from_code(K, R)
    y = geom.y
    rng = np.random.default_rng(seed)
    pool = gen_constants(ctx, R, [(y, K)], rng)
    alphas, f = list(pool.alphas), pool.f[0]

    if mode == "index":
        dims = y * K * M + K
        variants = list(range(M))
    elif mode == "update":
        dims = K
        variants = [ctx.array(d).reshape(y, K) for d in deltas] if deltas is not None else \
            [ctx.zeros((y, K)), ctx.random(rng, (y, K))]
    elif mode == "security":
        dims = y * (y + 1) * M
        if ctx.q ** (M * y * K) <= 64:
            variants = [ctx.array(w).reshape(M, y, K) for w in itertools.product(range(ctx.q), repeat=M * y * K)]
        else:
            variants = [ctx.zeros((M, y, K))] + [ctx.random(rng, (M, y, K)) for _ in range(3)]
    else:
        raise ValueError(f"unknown probe mode {mode!r}")

    space = ctx.q**dims
    enumerate_all = space <= budget and not force_sampling
    if not enumerate_all and not allow_sampling:
        raise BudgetExceeded(f"noise space of {space} points exceeds the budget of {budget}")
    report = ProbeReport(mode, "enumeration" if enumerate_all else "sampling", ctx.q, K, R, M, 0)
    fixed_rng = np.random.default_rng(seed + 1)

    if enumerate_all:
        noise = _all_points(ctx.q, dims, ctx)
        report.points = noise.shape[0]
        obs = _probe_observations(mode, ctx, geom, M, alphas, f, noise, variants, fixed_rng)
        worst = Fraction(0)
        worst_u = Fraction(0)
        for n in range(R):
            dists = [_rows(v[n]) for v in obs]
            B = report.points
            width = obs[0][n].shape[1]
            for a, b in itertools.combinations(dists, 2):
                worst = max(worst, _tv(a, b, B, B))
            for a in dists:
                worst_u = max(worst_u, _tv_uniform(a, B, ctx.q**width))
        report.tv = worst
        report.tv_uniform = worst_u
        report.passed = worst == 0 and worst_u == 0
        return report

    noise = ctx.random(rng, (samples, dims))
    report.points = samples
    obs = _probe_observations(mode, ctx, geom, M, alphas, f, noise, variants, fixed_rng)
    pvals = []
    for n in range(R):
        width = obs[0][n].shape[1]
        for col in range(width):
            counts = [np.bincount(np.asarray(v[n][:, col], dtype=np.int64), minlength=ctx.q) for v in obs]
            for c in counts:
                stat, p = stats.chisquare(c)
                pvals.append((p, stat))
            table = np.array(counts)
            table = table[:, table.sum(axis=0) > 0]
            stat, p, _, _ = stats.chi2_contingency(table)
            pvals.append((p, stat))
    p_min, stat = min(pvals)
    report.n_tests = len(pvals)
    report.p_value = float(p_min)
    report.statistic = float(stat)
    report.passed = bool(p_min * len(pvals) > SIGNIFICANCE)
    return report
