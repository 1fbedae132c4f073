from fractions import Fraction

import numpy as np
import pytest

import pruw.sim as sim
from pruw.errors import BudgetExceeded, IncompatibleLength, ProtocolViolation
from pruw.ffield import FieldCtx
from pruw.planner import build_plan, total_cost
from pruw.sim import (
    PlainOracle,
    install_plan,
    load_snapshot,
    measure_costs,
    privacy_probe,
    read_submodel,
    restore_snapshot,
    run_session,
    save_snapshot,
    verify_against_oracle,
)

from helpers import N12_MU


def homogeneous(K, R):
    """Profile whose plan is the single (K, R) class."""
    return [Fraction(1, K)] * R


def deploy(mu, M=2, L=None, seed=0, q=2147483647, pad=False, **kw):
    ctx = FieldCtx(q)
    plan = build_plan(mu, M=M, **kw)
    L = plan.granularity if L is None else L
    rng = np.random.default_rng(seed)
    model = ctx.random(rng, (M, L))
    return install_plan(plan, model, rng, ctx, pad=pad), PlainOracle(model, ctx), rng


@pytest.fixture(scope="module")
def n12():
    return deploy(N12_MU, M=4, k="2.7", seed=3)


def test_n12_occupancy(n12):
    dep, _, _ = n12
    L = dep.plan.granularity
    for db, mu in zip(dep.databases, dep.plan.profile.mu):
        assert db.occupancy == db.capacity == mu * 4 * L
    assert sum(db.occupancy for db in dep.databases) == dep.plan.profile.p * 4 * L


def test_replication_audit(n12):
    dep, _, _ = n12
    for slot in dep.slots:
        holders = [db.index for db in dep.databases if slot.key in db.shares]
        assert tuple(holders) == slot.members
        assert len(holders) == slot.geom.R
        for n in holders:
            assert dep.databases[n].shares[slot.key].shape == (slot.n_sub, slot.geom.y, dep.M)


def test_n12_session(n12):
    dep, oracle, rng = n12
    delta = dep.ctx.random(rng, dep.L)
    got, ledger = run_session(dep, 2, delta, rng)
    np.testing.assert_array_equal(got, oracle.model[2])
    oracle.apply(2, delta)
    assert verify_against_oracle(dep, oracle, rng) == []
    report = measure_costs(ledger, dep.plan)
    assert all(c["exact"] for c in report["classes"])
    assert report["C_T"] == Fraction(539, 90) and report["within_tolerance"]


def test_homogeneous_identical_occupancy():
    dep, _, _ = deploy(homogeneous(2, 8), L=4)
    assert len({db.occupancy for db in dep.databases}) == 1


@pytest.mark.parametrize("K,R,C_R,C_W", [(1, 4, 4, 4), (2, 8, Fraction(7, 2), 4)])
def test_measured_costs(K, R, C_R, C_W):
    dep, _, rng = deploy(homogeneous(K, R), L=12)
    _, ledger = run_session(dep, 0, dep.ctx.random(rng, 12), rng)
    assert (ledger.C_R, ledger.C_W) == (C_R, C_W)
    assert ledger.C_T == total_cost(K, R)
    assert ledger.query_uploaded > 0


def test_zero_update_refreshes_noise_only():
    dep, oracle, rng = deploy(homogeneous(2, 7), L=8)
    before = {k: v.copy() for k, v in dep.databases[0].shares.items()}
    run_session(dep, 1, dep.ctx.zeros(8), rng)
    assert any(not np.array_equal(before[k], v) for k, v in dep.databases[0].shares.items())
    assert verify_against_oracle(dep, oracle, rng) == []


def test_two_users_in_sequence():
    dep, oracle, rng = deploy(homogeneous(3, 11), L=9, M=3)
    for theta in (0, 1):
        delta = dep.ctx.random(rng, 9)
        run_session(dep, theta, delta, rng)
        oracle.apply(theta, delta)
    assert verify_against_oracle(dep, oracle, rng) == []


def test_determinism():
    a, _, ra = deploy(homogeneous(2, 8), L=8, seed=9)
    b, _, rb = deploy(homogeneous(2, 8), L=8, seed=9)
    for x, y in zip(a.databases, b.databases):
        assert x.alpha == y.alpha
        for key in x.shares:
            np.testing.assert_array_equal(x.shares[key], y.shares[key])
    delta = np.arange(8)
    la = run_session(a, 1, delta, ra)[1]
    lb = run_session(b, 1, delta, rb)[1]
    assert (la.downloaded, la.uploaded) == (lb.downloaded, lb.uploaded)
    for x, y in zip(a.databases, b.databases):
        for key in x.shares:
            np.testing.assert_array_equal(x.shares[key], y.shares[key])


def test_incompatible_length_and_padding():
    plan = build_plan(N12_MU, M=2, k="2.7")
    ctx = FieldCtx()
    rng = np.random.default_rng(0)
    model = ctx.random(rng, (2, plan.granularity + 5))
    with pytest.raises(IncompatibleLength):
        install_plan(plan, model, rng, ctx)
    dep = install_plan(plan, model, rng, ctx, pad=True)
    assert dep.stored_L == 2 * plan.granularity
    oracle = PlainOracle(model, ctx)
    delta = ctx.random(rng, dep.L)
    got, ledger = run_session(dep, 1, delta, rng)
    np.testing.assert_array_equal(got, model[1])
    oracle.apply(1, delta)
    assert verify_against_oracle(dep, oracle, rng) == []
    assert all(db.occupancy == db.capacity for db in dep.databases)


def test_write_without_read_is_rejected():
    dep, _, _ = deploy(homogeneous(1, 4), L=2)
    slot = dep.slots[0]
    with pytest.raises(ProtocolViolation):
        dep.databases[0].write(99, slot.key, np.zeros((1, slot.n_sub), dtype=np.int64), dep.f(slot), dep.ctx)


def test_snapshot_round_trip(tmp_path):
    dep, oracle, rng = deploy(homogeneous(2, 7), L=8, seed=4)
    path = tmp_path / "state.bin"
    save_snapshot(dep.databases, dep.ctx.q, path)
    assert path.read_bytes()[:8] == b"PRUWSNAP"
    q, dbs = load_snapshot(path)
    assert q == dep.ctx.q
    for a, b in zip(dep.databases, dbs):
        assert (a.index, a.alpha, a.capacity) == (b.index, b.alpha, b.capacity)
        for key in a.shares:
            np.testing.assert_array_equal(a.shares[key], b.shares[key])
    run_session(dep, 0, dep.ctx.random(rng, 8), rng)
    restore_snapshot(dep, path)
    assert verify_against_oracle(dep, oracle, rng) == []


def test_snapshot_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTASNAP" + bytes(20))
    with pytest.raises(ValueError):
        load_snapshot(path)


def test_read_only():
    dep, oracle, rng = deploy(homogeneous(2, 8), L=4)
    values, ledger = read_submodel(dep, 1, rng)
    np.testing.assert_array_equal(values, oracle.model[1])
    assert ledger.uploaded == 0


# ---------------------------------------------------------------- probes


@pytest.mark.parametrize("mode,kw", [
    ("index", dict(K=1, R=4, M=2)),
    ("update", dict(K=1, R=4, M=2, deltas=[[0], [3]])),
    ("security", dict(K=1, R=4, M=1)),
])
def test_probe_enumeration_exact(mode, kw):
    rep = privacy_probe(mode, FieldCtx(7), **kw)
    assert rep.method == "enumeration"
    assert rep.tv == 0 and rep.tv_uniform == 0 and rep.passed


def test_probe_detects_leak(monkeypatch):
    real = sim.gen_read_queries

    def leaky(theta, M, alphas, f, ctx, rng=None, noise=None, batch=()):
        return real(theta, M, alphas, f, ctx, noise=np.zeros_like(noise))

    monkeypatch.setattr(sim, "gen_read_queries", leaky)
    rep = privacy_probe("index", FieldCtx(7), K=1, R=4, M=2)
    assert rep.tv > 0 and not rep.passed


def test_probe_sampling():
    rep = privacy_probe("index", FieldCtx(31), K=1, R=4, M=2, force_sampling=True, samples=20000)
    assert rep.method == "sampling" and rep.passed
    assert rep.n_tests > 0 and rep.p_value * rep.n_tests > 0.001


def test_probe_budget():
    with pytest.raises(BudgetExceeded):
        privacy_probe("index", FieldCtx(31), K=2, R=7, M=2, allow_sampling=False)
