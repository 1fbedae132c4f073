"""Storage planning for heterogeneous databases.

Given per-database storage fractions ``mu``, the planner picks a mixture of
MDS codes (the C1 and C2 candidates), splits every database's space between
the codes in use, and places each code's symbols on subsets of R databases.
All arithmetic is exact (``fractions.Fraction``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import (
    IncompatibleLength,
    InfeasibleCode,
    InfeasiblePartition,
    InvalidConstraints,
    InvalidMixture,
)
from .scheme import ClassGeometry

ZERO = Fraction(0)
ONE = Fraction(1)


def as_fraction(x) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float.

    Floats go through ``repr`` so ``0.37`` becomes ``37/100`` rather than the
    nearest binary double.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not storage fractions")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot interpret {x!r} as a rational")


def _floor(x: Fraction) -> int:
    return math.floor(x)


def _ceil(x: Fraction) -> int:
    return math.ceil(x)


def _pos(x: Fraction) -> Fraction:
    return x if x > 0 else ZERO


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class StorageProfile:
    """Storage fractions and the scalars derived from them.

    ``mu`` is None for profiles entered directly as (k, p).
    """

    mu: tuple[Fraction, ...] | None
    k: Fraction
    p: Fraction

    @property
    def N(self) -> int | None:
        return None if self.mu is None else len(self.mu)

    @property
    def r(self) -> Fraction:
        return self.k * self.p

    @property
    def s(self) -> Fraction:
        return _floor(self.k) * self.p

    @property
    def k_lo(self) -> int:
        return _floor(self.k)

    @property
    def k_hi(self) -> int:
        return _ceil(self.k)

    @property
    def k_is_integer(self) -> bool:
        return self.k.denominator == 1


def derive_profile(mu: Iterable, k=None) -> StorageProfile:
    """Build the profile for storage fractions ``mu``.

    ``k`` defaults to ``1 / max(mu)``. A smaller value can be passed to mirror
    a rounded coding parameter; it must satisfy ``1 <= k <= 1 / max(mu)``.
    """
    try:
        values = tuple(as_fraction(v) for v in mu)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise InvalidConstraints(f"storage fractions must be rationals: {exc}") from None
    if not values:
        raise InvalidConstraints("at least one storage fraction is required")
    for n, v in enumerate(values):
        if not (0 < v <= 1):
            raise InvalidConstraints(f"mu[{n}] = {v} is outside (0, 1]")
    k_exact = 1 / max(values)
    if k is None:
        k_val = k_exact
    else:
        k_val = as_fraction(k)
        if not (1 <= k_val <= k_exact):
            raise InvalidConstraints(f"k = {k_val} must lie in [1, 1/max(mu) = {k_exact}]")
    return StorageProfile(mu=values, k=k_val, p=sum(values, ZERO))


def profile_from_kp(k, p) -> StorageProfile:
    k, p = as_fraction(k), as_fraction(p)
    if k < 1:
        raise InvalidConstraints(f"k = {k} must be at least 1")
    if p <= 0:
        raise InvalidConstraints(f"p = {p} must be positive")
    return StorageProfile(mu=None, k=k, p=p)


# ------------------------------------------------------------------ costs


def total_cost(a: int, b: int) -> Fraction:
    """Download plus upload per parameter for an (a, b) MDS coded scheme."""
    if a < 1:
        raise InfeasibleCode(f"coding parameter must be >= 1, got {a}")
    if (b - a) % 2:
        num, den = 4 * b, b - a - 1
    else:
        num, den = 4 * b - 2, b - a - 2
    if den <= 0:
        raise InfeasibleCode(f"({a},{b}) code has too few replications for the scheme")
    return Fraction(num, den)


# --------------------------------------------------------------- mixtures


@dataclass(frozen=True)
class CodeClass:
    """One MDS code of the mixture.

    ``case`` is the row of the four-code table (1..4); ``alloc`` is None on
    shells returned by the mixture functions and is filled in by the planner.
    """

    case: int
    K: int
    R: int
    fraction: Fraction
    alloc: tuple[Fraction, ...] | None = None

    @property
    def cost(self) -> Fraction:
        return total_cost(self.K, self.R)

    def with_alloc(self, alloc: Sequence[Fraction]) -> CodeClass:
        return CodeClass(self.case, self.K, self.R, self.fraction, tuple(alloc))


@dataclass(frozen=True)
class Mixture:
    cost: Fraction
    classes: tuple[CodeClass, ...]
    alpha: Fraction
    beta: Fraction
    delta: Fraction


def _mixture_cost(classes: Sequence[CodeClass]) -> Fraction:
    return sum((c.fraction * c.cost for c in classes if c.fraction), ZERO)


def _c1_beta(profile: StorageProfile) -> Fraction:
    s = profile.s
    return _ceil(s) - s


def mixture_c1(profile: StorageProfile) -> Mixture:
    """Mix the (floor k, floor s) and (floor k, ceil s) codes.

    Weights are ``ceil(s) - s`` and its complement; an integer ``s`` leaves the
    single code (floor k, s).
    """
    s = profile.s
    beta = _c1_beta(profile)
    shells = [
        CodeClass(1, profile.k_lo, _floor(s), beta),
        CodeClass(2, profile.k_lo, _ceil(s), 1 - beta),
    ]
    classes = tuple(c for c in shells if c.fraction)
    return Mixture(_mixture_cost(classes), classes, ONE, beta, ONE)


def mixture_c2_weights(profile: StorageProfile) -> tuple[Fraction, Fraction, Fraction]:
    """(alpha, beta, delta) of the four-code mixture.

    For integer k both coding parameters coincide and the mixture reduces to
    the (k, floor r) / (k, ceil r) pair, reported as alpha = 1.
    """
    k, p, r = profile.k, profile.p, profile.r
    kl, kh = profile.k_lo, profile.k_hi
    rl, rh = _floor(r), _ceil(r)
    frac_r = r - rl
    if profile.k_is_integer:
        return ONE, Fraction(rh) - r, ONE

    alpha_min = Fraction(kl) / k * (kh - k)
    frac_k = k - kl
    if (rl - kl) % 2:
        if frac_r > frac_k and profile.s <= rl:
            alpha = Fraction(kl) * (p * kh - rh) / (kh * rl - kl * rh)
        else:
            alpha = alpha_min
        if frac_r > frac_k and profile.s > rl:
            beta = (rh - r) / (kh - k)
        else:
            beta = ONE
        delta = 1 - frac_r / frac_k if frac_r <= frac_k else ZERO
    else:
        if frac_r < kh - k:
            alpha = alpha_min
            beta = 1 - frac_r / (kh - k)
        else:
            alpha = Fraction(kl) * (p * kh - rl) / (kh * rh - kl * rl)
            beta = ZERO
        delta = ONE
    return alpha, beta, delta


def mixture_c2(profile: StorageProfile) -> Mixture:
    alpha, beta, delta = mixture_c2_weights(profile)
    r = profile.r
    kl, kh = profile.k_lo, profile.k_hi
    rl, rh = _floor(r), _ceil(r)
    shells = [
        CodeClass(1, kl, rl, alpha * beta),
        CodeClass(2, kl, rh, alpha * (1 - beta)),
        CodeClass(3, kh, rl, (1 - alpha) * delta),
        CodeClass(4, kh, rh, (1 - alpha) * (1 - delta)),
    ]
    classes = tuple(c for c in shells if c.fraction)
    return Mixture(_mixture_cost(classes), classes, alpha, beta, delta)


@dataclass(frozen=True)
class MixtureDecision:
    alpha: Fraction
    beta: Fraction
    delta: Fraction
    c1: Fraction | None
    c2: Fraction | None
    chosen: str
    chosen_cost: Fraction
    classes: tuple[CodeClass, ...]


def decide_mixture(profile: StorageProfile) -> MixtureDecision:
    """Evaluate both candidates and keep the cheaper (C1 on ties)."""
    alpha, beta, delta = mixture_c2_weights(profile)
    candidates = {}
    errors = []
    for name, fn in (("C1", mixture_c1), ("C2", mixture_c2)):
        try:
            candidates[name] = fn(profile)
        except InfeasibleCode as exc:
            errors.append(f"{name}: {exc}")
    if not candidates:
        raise InfeasibleCode("; ".join(errors))
    c1 = candidates["C1"].cost if "C1" in candidates else None
    c2 = candidates["C2"].cost if "C2" in candidates else None
    if c1 is not None and (c2 is None or c1 <= c2):
        chosen = "C1"
    else:
        chosen = "C2"
    best = candidates[chosen]
    return MixtureDecision(alpha, beta, delta, c1, c2, chosen, best.cost, best.classes)


# ------------------------------------------------------------ allocations


@dataclass
class AllocationTrace:
    """Intermediate vectors of the allocation formulas (None when unused)."""

    m_tilde: tuple[Fraction, ...] | None = None
    h_tilde: tuple[Fraction, ...] | None = None
    gamma_tilde: Fraction | None = None
    m: tuple[Fraction, ...] | None = None
    h: tuple[Fraction, ...] | None = None
    gamma: Fraction | None = None
    mu_hat: tuple[Fraction, ...] | None = None
    mu_bar: tuple[Fraction, ...] | None = None
    m_hat: tuple[Fraction, ...] | None = None
    h_hat: tuple[Fraction, ...] | None = None
    gamma_hat: Fraction | None = None
    m_bar: tuple[Fraction, ...] | None = None
    h_bar: tuple[Fraction, ...] | None = None
    gamma_bar: Fraction | None = None


def _split(total_vec, cap_first, cap_second, target_first):
    """Split each entry of ``total_vec`` into two parts under per-entry caps.

    Whatever exceeds the second part's cap is forced into the first part (m),
    and vice versa (h); the slack is shared with one common ratio gamma chosen
    so that the first parts sum to ``target_first``.
    """
    m = tuple(_pos(v - cap_second) for v in total_vec)
    h = tuple(_pos(v - cap_first) for v in total_vec)
    slack = sum(total_vec, ZERO) - sum(m, ZERO) - sum(h, ZERO)
    need = target_first - sum(m, ZERO)
    if slack == 0:
        if need != 0:
            raise InvalidMixture(f"allocation split cannot reach its target (short by {need})")
        gamma = ZERO
    else:
        gamma = need / slack
    if not (0 <= gamma <= 1):
        raise InvalidMixture(f"allocation split ratio {gamma} outside [0, 1]")
    first = tuple(mm + (v - mm - hh) * gamma for v, mm, hh in zip(total_vec, m, h))
    second = tuple(hh + (v - mm - hh) * (1 - gamma) for v, mm, hh in zip(total_vec, m, h))
    return first, second, m, h, gamma


def _require_mu(profile: StorageProfile) -> tuple[Fraction, ...]:
    if profile.mu is None:
        raise InvalidConstraints("allocations need per-database storage fractions")
    return profile.mu


def two_code_alloc(profile: StorageProfile):
    """Allocation for the two-code mixture built on floor(k) and s.

    Returns ``(mu_hat1, mu_hat2, trace)`` where ``mu_hat1`` serves the
    (floor k, floor s) code and ``mu_hat2`` the (floor k, ceil s) code.
    """
    mu = _require_mu(profile)
    s = profile.s
    kl = profile.k_lo
    beta = _c1_beta(profile)
    target1 = _floor(s) * beta / kl
    first, second, m, h, gamma = _split(mu, beta / kl, (1 - beta) / kl, target1)
    trace = AllocationTrace(m_tilde=m, h_tilde=h, gamma_tilde=gamma)
    return first, second, trace


def four_code_bounds(profile: StorageProfile, alpha: Fraction) -> tuple[Fraction, Fraction, Fraction]:
    """Smallest admissible (alpha, beta, delta) for a given alpha < 1."""
    k, r = profile.k, profile.r
    kl, kh = profile.k_lo, profile.k_hi
    frac_r = r - _floor(r)
    alpha_min = Fraction(kl) / k * (kh - k)
    beta_min = _pos(1 - Fraction(kl) / (k * alpha) * frac_r) if alpha else ZERO
    delta_min = _pos(1 - Fraction(kh) / (k * (1 - alpha)) * frac_r)
    return alpha_min, beta_min, delta_min


def four_code_alloc(profile: StorageProfile, alpha, beta, delta):
    """Allocation for the four-code mixture with alpha < 1.

    Returns ``(mu_hat1, mu_hat2, mu_bar1, mu_bar2, trace)`` for the codes
    (floor k, floor r), (floor k, ceil r), (ceil k, floor r), (ceil k, ceil r).
    """
    mu = _require_mu(profile)
    alpha, beta, delta = (as_fraction(v) for v in (alpha, beta, delta))
    for name, v in (("alpha", alpha), ("beta", beta), ("delta", delta)):
        if not (0 <= v <= 1):
            raise InvalidMixture(f"{name} = {v} outside [0, 1]")
    if alpha >= 1:
        raise InvalidMixture("four-code allocation requires alpha < 1")
    a_min, b_min, d_min = four_code_bounds(profile, alpha)
    if alpha < a_min or beta < b_min or delta < d_min:
        raise InvalidMixture(
            f"(alpha, beta, delta) = ({alpha}, {beta}, {delta}) below the admissible "
            f"bounds ({a_min}, {b_min}, {d_min})"
        )

    r = profile.r
    kl, kh = profile.k_lo, profile.k_hi
    rl, rh = _floor(r), _ceil(r)
    total_hat = alpha * (beta * rl + (1 - beta) * rh) / kl
    total_bar = (1 - alpha) * (delta * rl + (1 - delta) * rh) / kh
    if total_hat + total_bar != profile.p:
        raise InvalidMixture(
            f"mixture stores {total_hat + total_bar} units but the databases hold {profile.p}"
        )

    mu_hat, mu_bar, m, h, gamma = _split(mu, alpha / kl, (1 - alpha) / kh, total_hat)
    trace = AllocationTrace(m=m, h=h, gamma=gamma, mu_hat=mu_hat, mu_bar=mu_bar)

    if beta in (0, 1):
        hat1 = tuple(v * beta for v in mu_hat)
        hat2 = tuple(v * (1 - beta) for v in mu_hat)
    else:
        hat1, hat2, trace.m_hat, trace.h_hat, trace.gamma_hat = _split(
            mu_hat, alpha * beta / kl, alpha * (1 - beta) / kl, alpha * beta * rl / kl
        )
    if delta in (0, 1):
        bar1 = tuple(v * delta for v in mu_bar)
        bar2 = tuple(v * (1 - delta) for v in mu_bar)
    else:
        bar1, bar2, trace.m_bar, trace.h_bar, trace.gamma_bar = _split(
            mu_bar,
            (1 - alpha) * delta / kh,
            (1 - alpha) * (1 - delta) / kh,
            (1 - alpha) * delta * rl / kh,
        )
    return hat1, hat2, bar1, bar2, trace


# ------------------------------------------------------------- partitions


def check_condition(alloc: Sequence, R: int) -> bool:
    """True when no database holds more than 1/R of the code's total space."""
    alloc = [as_fraction(a) for a in alloc]
    if R <= 0 or R > len(alloc):
        return False
    bound = sum(alloc, ZERO) / R
    return all(a <= bound for a in alloc)


@dataclass(frozen=True)
class PartitionTable:
    """Placement of one code class.

    Each entry is ``(mask, eta)``: an ``eta`` share of every submodel, coded
    with the (K, R) code, is stored on the databases whose bits are set in
    ``mask`` (bit n is database n, 0-based).
    """

    K: int
    R: int
    N: int
    entries: tuple[tuple[int, Fraction], ...]

    @property
    def fraction(self) -> Fraction:
        return sum((eta for _, eta in self.entries), ZERO)

    def members(self, mask: int) -> tuple[int, ...]:
        return tuple(n for n in range(self.N) if mask >> n & 1)

    def induced_alloc(self) -> tuple[Fraction, ...]:
        out = [ZERO] * self.N
        for mask, eta in self.entries:
            for n in self.members(mask):
                out[n] += eta / self.K
        return tuple(out)


def solve_partition(alloc: Sequence, K: int, R: int) -> PartitionTable:
    """Place a code's symbols on R-subsets so every database is filled exactly.

    Water-filling: the R databases with most remaining space (lowest index on
    ties) share one partition, whose size stops either when the R-th of them
    runs dry or when the best excluded database becomes tight, i.e. its space
    equals the share still to be placed.
    """
    alloc = tuple(as_fraction(a) for a in alloc)
    N = len(alloc)
    if any(a < 0 for a in alloc):
        raise InfeasiblePartition("negative allocation")
    if not check_condition(alloc, R):
        raise InfeasiblePartition(
            f"no ({K},{R}) placement exists: some database exceeds 1/{R} of the total"
        )
    cap = [K * a for a in alloc]
    remaining = sum(cap, ZERO) / R
    merged: dict[int, Fraction] = {}
    for _ in range(4 * N + 4):
        if remaining == 0:
            break
        order = sorted(range(N), key=lambda n: (-cap[n], n))
        top = order[:R]
        next_cap = cap[order[R]] if R < N else ZERO
        eta = min(cap[top[-1]], remaining - next_cap)
        if eta <= 0:
            raise InfeasiblePartition("water-filling stalled")  # unreachable under the condition
        mask = 0
        for n in top:
            cap[n] -= eta
            mask |= 1 << n
        remaining -= eta
        merged[mask] = merged.get(mask, ZERO) + eta
    else:
        raise InfeasiblePartition("water-filling did not terminate")
    if any(c != 0 for c in cap):
        raise InfeasiblePartition("capacity left over after placement")
    return PartitionTable(K=K, R=R, N=N, entries=tuple(merged.items()))


def partition_residuals(entries, alloc, K: int, fraction) -> dict:
    """How far a placement is from filling ``alloc`` exactly.

    Works with floats or Fractions; reports the worst per-database error, the
    error on the total share, and structural problems (bad eta, wrong R).
    """
    alloc = list(alloc)
    N = len(alloc)
    induced = [0] * N
    for mask, eta in entries:
        for n in range(N):
            if mask >> n & 1:
                induced[n] += eta / K
    return {
        "alloc_error": max(abs(a - b) for a, b in zip(induced, alloc)),
        "fraction_error": abs(sum(eta for _, eta in entries) - fraction),
        "eta_in_range": all(0 <= eta <= 1 for _, eta in entries),
        "popcounts": sorted({bin(mask).count("1") for mask, _ in entries}),
    }


# ------------------------------------------------------------------- plan


@dataclass(frozen=True)
class StoragePlan:
    profile: StorageProfile
    decision: MixtureDecision
    scheme: str
    classes: tuple[CodeClass, ...]
    partitions: tuple[PartitionTable, ...]
    trace: AllocationTrace
    granularity: int
    M: int
    L: int | None = None
    padded_L: int | None = None
    geometries: tuple[ClassGeometry, ...] = field(default=())

    @property
    def theoretical_cost(self) -> Fraction:
        return self.decision.chosen_cost

    def occupancy(self, L: int) -> list[Fraction]:
        """Symbols stored per database for submodels of length L."""
        return [sum((c.alloc[n] for c in self.classes), ZERO) * self.M * L
                for n in range(len(self.profile.mu))]


def _granularity(partitions: Sequence[PartitionTable], geometries: Sequence[ClassGeometry]) -> int:
    g = 1
    for table, geom in zip(partitions, geometries):
        for _, eta in table.entries:
            g = math.lcm(g, (eta / (geom.y * geom.K)).denominator)
    return g


def allocate(profile: StorageProfile, decision: MixtureDecision):
    """Per-database space for every class of the chosen mixture."""
    if decision.chosen == "C1" or decision.alpha == 1:
        first, second, trace = two_code_alloc(profile)
        by_case = {1: first, 2: second}
    else:
        hat1, hat2, bar1, bar2, trace = four_code_alloc(
            profile, decision.alpha, decision.beta, decision.delta
        )
        by_case = {1: hat1, 2: hat2, 3: bar1, 4: bar2}
    classes = []
    for c in decision.classes:
        alloc = by_case[c.case]
        if sum(alloc, ZERO) != c.fraction * c.R / c.K:
            raise InvalidMixture(f"class ({c.K},{c.R}) allocation does not match its share")
        classes.append(c.with_alloc(alloc))
    leftovers = [v for case, vec in by_case.items()
                 if case not in {c.case for c in decision.classes} for v in vec]
    if any(leftovers):
        raise InvalidMixture("space allocated to a code with zero share")
    return tuple(classes), trace


def build_plan(mu, M: int = 2, L: int | None = None, pad: bool = False, k=None) -> StoragePlan:
    """Full storage plan: mixture, allocations, placements and granularity."""
    if M < 1:
        raise InvalidConstraints("M must be at least 1")
    profile = derive_profile(mu, k=k)
    decision = decide_mixture(profile)
    classes, trace = allocate(profile, decision)
    geometries = tuple(ClassGeometry.from_code(c.K, c.R) for c in classes)
    partitions = tuple(solve_partition(c.alloc, c.K, c.R) for c in classes)
    gran = _granularity(partitions, geometries)
    padded = None
    if L is not None:
        if L < 1:
            raise IncompatibleLength("L must be positive")
        if L % gran:
            if not pad:
                raise IncompatibleLength(
                    f"L = {L} is not a multiple of the plan granularity {gran}"
                )
            padded = -(-L // gran) * gran
        else:
            padded = L
    return StoragePlan(
        profile=profile,
        decision=decision,
        scheme=decision.chosen,
        classes=classes,
        partitions=partitions,
        trace=trace,
        granularity=gran,
        M=M,
        L=L,
        padded_L=padded,
        geometries=geometries,
    )


# ---------------------------------------------------------- serialization


def rational_json(x: Fraction | None):
    if x is None:
        return None
    x = Fraction(x)
    return {"exact": f"{x.numerator}/{x.denominator}", "approx": round(float(x), 6)}


def _vec_json(v):
    return None if v is None else [rational_json(x) for x in v]


def plan_to_dict(plan: StoragePlan) -> dict:
    prof = plan.profile
    dec = plan.decision
    classes = []
    for c, geom, table in zip(plan.classes, plan.geometries, plan.partitions):
        classes.append({
            "case": c.case,
            "K": c.K,
            "R": c.R,
            "read_set_size": geom.Rprime,
            "subpacketization": geom.y,
            "fraction": rational_json(c.fraction),
            "cost": rational_json(c.cost),
            "alloc": _vec_json(c.alloc),
            "partitions": [
                {"mask": format(mask, f"0{table.N}b")[::-1], "eta": rational_json(eta)}
                for mask, eta in table.entries
            ],
        })
    trace = {name: (rational_json(v) if isinstance(v, Fraction) else _vec_json(v))
             for name, v in vars(plan.trace).items() if v is not None}
    return {
        "format": "pruw-plan/1",
        "profile": {
            "N": prof.N,
            "mu": _vec_json(prof.mu),
            "k": rational_json(prof.k),
            "p": rational_json(prof.p),
            "r": rational_json(prof.r),
            "s": rational_json(prof.s),
        },
        "mixture": {
            "alpha": rational_json(dec.alpha),
            "beta": rational_json(dec.beta),
            "delta": rational_json(dec.delta),
            "C1": rational_json(dec.c1),
            "C2": rational_json(dec.c2),
            "chosen": dec.chosen,
            "chosen_cost": rational_json(dec.chosen_cost),
        },
        "classes": classes,
        "trace": trace,
        "granularity": plan.granularity,
        "M": plan.M,
        "L": plan.L,
        "padded_L": plan.padded_L,
    }


def plan_to_json(plan: StoragePlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=False) + "\n"
