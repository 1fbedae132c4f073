import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pruw.errors import DivisionByZero, FieldTooSmall, SingularSystem
from pruw.ffield import FieldCtx, gen_constants, inv, is_prime, solve_linear

from conftest import brute_force_solve


def test_inverse_examples(f7):
    assert inv(2, f7) == 4
    assert inv(1, f7) == 1
    assert [y for y in range(7) if 2 * y % 7 == 1] == [4]


def test_inverse_of_zero(f7):
    with pytest.raises(DivisionByZero):
        inv(0, f7)
    with pytest.raises(ZeroDivisionError):
        f7.inv_array([1, 0, 3])


@pytest.mark.parametrize("q", [2, 7, 31, 97])
def test_inverse_exhaustive(q):
    ctx = FieldCtx(q)
    for x in range(1, q):
        assert x * inv(x, ctx) % q == 1
    np.testing.assert_array_equal(ctx.inv_array(np.arange(1, q)) * np.arange(1, q) % q, 1)


def test_rejects_composite_modulus():
    with pytest.raises(ValueError):
        FieldCtx(15)
    assert is_prime(2147483647) and not is_prime(2147483647 * 3)


def test_solve_identity(f7):
    np.testing.assert_array_equal(solve_linear(np.eye(2, dtype=int), [3, 5], f7), [3, 5])


def test_solve_matches_brute_force(f7):
    A, b = [[1, 1], [1, 2]], [0, 1]
    assert brute_force_solve(A, b, 7) == [(6, 1)]
    np.testing.assert_array_equal(solve_linear(A, b, f7), [6, 1])


def test_singular(f7):
    with pytest.raises(SingularSystem):
        solve_linear([[1, 1], [2, 2]], [0, 1], f7)


def test_solve_needs_pivot_swap(f7):
    A, b = [[0, 1, 2], [3, 0, 1], [1, 1, 1]], [1, 2, 3]
    (expected,) = brute_force_solve(A, b, 7)
    np.testing.assert_array_equal(solve_linear(A, b, f7), expected)


def test_solve_matrix_rhs(big):
    rng = np.random.default_rng(3)
    A = big.random(rng, (5, 5))
    X = big.random(rng, (5, 4))
    B = np.stack([big.dot(A, X[:, c], axis=-1) for c in range(4)], axis=1)
    np.testing.assert_array_equal(solve_linear(A, B, big), X)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), q=st.sampled_from([7, 31, 2147483647]))
def test_solve_round_trip(seed, n, q):
    ctx = FieldCtx(q)
    rng = np.random.default_rng(seed)
    A = ctx.random(rng, (n, n))
    x = ctx.random(rng, n)
    b = ctx.dot(A, x, axis=-1)
    try:
        got = solve_linear(A, b, ctx)
    except SingularSystem:
        # random matrices over tiny fields are often singular; confirm by brute force
        if q ** n <= 10**5:
            assert len(brute_force_solve(A, b, q)) != 1
        return
    np.testing.assert_array_equal(ctx.dot(A, got, axis=-1), b)


@settings(max_examples=100, deadline=None)
@given(a=st.integers(0, 2**31 - 2), b=st.integers(0, 2**31 - 2), c=st.integers(0, 2**31 - 2))
def test_field_identities(a, b, c):
    ctx = FieldCtx()
    x, y, z = (np.int64(v) for v in (a, b, c))
    assert ctx.mul(x, y) == ctx.mul(y, x)
    assert ctx.add(ctx.add(x, y), z) == ctx.add(x, ctx.add(y, z))
    assert ctx.mul(ctx.mul(x, y), z) == ctx.mul(x, ctx.mul(y, z))
    assert ctx.mul(x, ctx.add(y, z)) == ctx.add(ctx.mul(x, y), ctx.mul(x, z))
    assert int(ctx.mul(x, y)) == a * b % ctx.q


def test_large_modulus_uses_python_ints():
    q = 2**61 - 1
    ctx = FieldCtx(q)
    assert ctx.dtype is object
    rng = np.random.default_rng(0)
    A = ctx.random(rng, (3, 3))
    x = ctx.random(rng, 3)
    b = ctx.dot(A, x, axis=-1)
    np.testing.assert_array_equal(solve_linear(A, b, ctx), x)


def _scan(pool):
    values = list(pool.alphas)
    for grid in pool.f:
        values += [int(v) for v in np.ravel(grid)]
    return values


def test_constants_small():
    pool = gen_constants(FieldCtx(31), 4, [(1, 1)], rng=0)
    vals = _scan(pool)
    assert len(vals) == 5 and len(set(vals)) == 5 and 0 not in vals
    pool.validate()


def test_constants_field_too_small():
    with pytest.raises(FieldTooSmall):
        gen_constants(FieldCtx(5), 4, [(1, 1)], rng=0)


def test_constants_multiple_classes():
    pool = gen_constants(FieldCtx(97), 12, [(4, 2), (3, 3)], rng=1)
    vals = _scan(pool)
    assert len(vals) == 12 + 8 + 9
    assert len(set(vals)) == len(vals)
    assert all(0 < v < 97 for v in vals)
    assert [g.shape for g in pool.f] == [(4, 2), (3, 3)]


def test_constants_deterministic():
    a = gen_constants(FieldCtx(), 6, [(2, 3)], rng=42)
    b = gen_constants(FieldCtx(), 6, [(2, 3)], rng=42)
    assert a.alphas == b.alphas
    np.testing.assert_array_equal(a.f[0], b.f[0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 20), shapes=st.lists(
    st.tuples(st.integers(1, 4), st.integers(1, 4)), max_size=4))
def test_constants_never_collide(seed, n, shapes):
    ctx = FieldCtx(101)
    need = n + sum(y * k for y, k in shapes)
    if need > 100:
        with pytest.raises(FieldTooSmall):
            gen_constants(ctx, n, shapes, rng=seed)
        return
    pool = gen_constants(ctx, n, shapes, rng=seed)
    vals = _scan(pool)
    assert len(set(vals)) == len(vals) == need
    assert 0 not in vals
