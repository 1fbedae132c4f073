"""Independent checkers shared by the planner, sim and acceptance tests."""

from fractions import Fraction


def allocation_violations(mu, classes):
    """Every broken allocation constraint, as readable strings (empty when valid).

    Checks directly, class by class: total space equals fraction * R / K, no
    database holds more than fraction / K of a class, and each database's
    classes add up to exactly its storage fraction.
    """
    problems = []
    N = len(mu)
    for c in classes:
        if any(a < 0 for a in c.alloc):
            problems.append(f"({c.K},{c.R}): negative allocation")
        if sum(c.alloc, Fraction(0)) != c.fraction * c.R / c.K:
            problems.append(f"({c.K},{c.R}): total {sum(c.alloc)} != {c.fraction * c.R / c.K}")
        cap = c.fraction / c.K
        for n, a in enumerate(c.alloc):
            if a > cap:
                problems.append(f"({c.K},{c.R}): db {n} holds {a} > cap {cap}")
    for n in range(N):
        got = sum((c.alloc[n] for c in classes), Fraction(0))
        if got != mu[n]:
            problems.append(f"db {n}: classes fill {got} of {mu[n]}")
    if sum((c.fraction for c in classes), Fraction(0)) != 1:
        problems.append("class fractions do not sum to 1")
    return problems


def table_violations(table, alloc, fraction):
    """Exact re-summation of a partition table against its allocation."""
    problems = []
    induced = [Fraction(0)] * len(alloc)
    for mask, eta in table.entries:
        if eta <= 0:
            problems.append(f"non-positive eta {eta}")
        if bin(mask).count("1") != table.R:
            problems.append(f"mask {mask:b} does not have {table.R} members")
        for n in range(len(alloc)):
            if mask >> n & 1:
                induced[n] += eta / table.K
    if induced != list(alloc):
        problems.append("induced allocation differs")
    if sum((eta for _, eta in table.entries), Fraction(0)) != fraction:
        problems.append("etas do not sum to the class fraction")
    return problems


N12_MU = ["0.37"] * 5 + ["0.35"] * 7


# criterion number -> list of (check name, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def record(criterion, name, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((name, bool(passed), detail))
    return bool(passed)
