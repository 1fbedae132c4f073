import itertools
from fractions import Fraction

import numpy as np
import pytest

from pruw.ffield import FieldCtx, gen_constants
from pruw.scheme import (
    ClassGeometry,
    answer_query,
    gen_read_queries,
    gen_write_updates,
)

Q_BIG = 2147483647


def symbol_count_cost(K, R, M=2, q=Q_BIG, seed=0):
    """Normalized (read, write) symbols of one subpacket of a (K, R) code.

    Counts what actually crosses the wire when the scheme functions are run:
    answers returned by the read set and update symbols sent to every
    replica, divided by the y*K parameters that one subpacket carries.
    """
    ctx = FieldCtx(q)
    rng = np.random.default_rng(seed)
    geom = ClassGeometry.from_code(K, R)
    pool = gen_constants(ctx, R, [(geom.y, K)], rng)
    f = pool.f[0]
    S = ctx.random(rng, (geom.y, M))
    rq = gen_read_queries(0, M, pool.alphas[: geom.Rprime], f, ctx, rng)
    answers = [answer_query(S, rq.queries[n, ell], ctx)
               for n in range(geom.Rprime) for ell in range(K)]
    wu = gen_write_updates(ctx.random(rng, (geom.y, K)), pool.alphas, f, ctx, rng)
    params = geom.y * K
    return Fraction(len(answers), params), Fraction(wu.updates.size, params)


def brute_force_solve(A, b, q):
    """All x in F_q^n with A x = b, by enumeration."""
    A = np.asarray(A, dtype=np.int64)
    n = A.shape[1]
    return [x for x in itertools.product(range(q), repeat=n)
            if np.array_equal(A @ np.array(x) % q, np.asarray(b) % q)]


@pytest.fixture
def big():
    return FieldCtx(Q_BIG)


@pytest.fixture
def f7():
    return FieldCtx(7)


CRITERIA = {
    1: "mixture costs and weights for k=2.7, p=4.3",
    2: "N=12 allocations and placements",
    3: "randomized read/write round trips",
    4: "measured cost identities",
    5: "privacy and security probes",
    6: "planner property suite",
}


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[n]
        ok = all(passed for _, passed, _ in checks)
        terminalreporter.write_line(f"criterion {n} ({CRITERIA[n]}): {'PASS' if ok else 'FAIL'}")
        for name, passed, detail in checks:
            terminalreporter.write_line(f"    [{'ok' if passed else 'FAIL'}] {name}: {detail}")
