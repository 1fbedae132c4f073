"""Command-line front end: ``plan``, ``simulate`` and ``sweep``.

Exit codes: 0 success, 2 invalid input or infeasible plan, 3 a correctness
check failed during simulation, 4 file could not be read or written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleCode, PRUWError
from .ffield import DEFAULT_Q, FieldCtx
from .planner import (
    as_fraction,
    build_plan,
    decide_mixture,
    mixture_c2_weights,
    plan_to_dict,
    profile_from_kp,
    rational_json,
    total_cost,
)
from .sim import PlainOracle, install_plan, measure_costs, privacy_probe, run_session, save_snapshot, verify_against_oracle

log = logging.getLogger("pruw")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CORRECTNESS = 3
EXIT_IO = 4


@dataclass
class ScenarioConfig:
    mu: tuple[Fraction, ...]
    M: int = 2
    L: int | None = None
    q: int = DEFAULT_Q
    seed: int = 0
    pad: bool = False
    k: Fraction | None = None
    sessions: int = 5
    probe: bool = False
    notes: list[str] = field(default_factory=list)


def _int_field(raw: dict, name: str, default, minimum: int):
    if name not in raw:
        return default
    v = raw[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if v < minimum:
        raise ConfigError(f"{name}: must be at least {minimum}, got {v}")
    return v


def parse_config(raw, source: str = "<config>") -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    known = {"mu", "M", "L", "q", "seed", "pad", "k", "sessions", "probe"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
    if "mu" not in raw:
        raise ConfigError(f"{source}: missing required field mu")
    if not isinstance(raw["mu"], list) or not raw["mu"]:
        raise ConfigError("mu: expected a non-empty list of fractions")
    mu = []
    for n, v in enumerate(raw["mu"]):
        try:
            x = as_fraction(v)
        except (TypeError, ValueError, ZeroDivisionError):
            raise ConfigError(f"mu[{n}]: {v!r} is not a rational number") from None
        if not (0 < x <= 1):
            raise ConfigError(f"mu[{n}]: {v} is outside (0, 1]")
        mu.append(x)
    cfg = ScenarioConfig(mu=tuple(mu))
    cfg.M = _int_field(raw, "M", 2, 1)
    cfg.L = _int_field(raw, "L", None, 1)
    cfg.seed = _int_field(raw, "seed", 0, 0)
    cfg.sessions = _int_field(raw, "sessions", 5, 0)
    if "q" in raw:
        q = _int_field(raw, "q", None, 2)
        try:
            FieldCtx(q)
        except ValueError:
            raise ConfigError(f"q: {q} is not prime") from None
        cfg.q = q
    else:
        cfg.notes.append(f"q not given; using default modulus {DEFAULT_Q}")
    for flag in ("pad", "probe"):
        if flag in raw:
            if not isinstance(raw[flag], bool):
                raise ConfigError(f"{flag}: expected true or false")
            setattr(cfg, flag, raw[flag])
    if "k" in raw:
        try:
            cfg.k = as_fraction(raw["k"])
        except (TypeError, ValueError, ZeroDivisionError):
            raise ConfigError(f"k: {raw['k']!r} is not a rational number") from None
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(raw, str(path))


# ----------------------------------------------------------------- plan


def plan_report(cfg: ScenarioConfig) -> dict:
    plan = build_plan(cfg.mu, M=cfg.M, L=cfg.L, pad=cfg.pad, k=cfg.k)
    report = plan_to_dict(plan)
    report["notes"] = list(cfg.notes)
    return report


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    text = json.dumps(plan_report(cfg), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------- simulate


def _fmt(x) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator} ({float(x):.6f})"


def simulate(cfg: ScenarioConfig, sessions: int, probe: bool, out=None, snapshot=None) -> bool:
    """Run the configured sessions; return True when every check passed."""
    out = out or sys.stdout
    ctx = FieldCtx(cfg.q)
    rng = np.random.default_rng(cfg.seed)
    plan = build_plan(cfg.mu, M=cfg.M, L=cfg.L, pad=cfg.pad, k=cfg.k)
    L = cfg.L
    if L is None:
        L = plan.granularity
        cfg.notes.append(f"L not given; using plan granularity {L}")
    for note in cfg.notes:
        print(f"note: {note}", file=out)
    model = ctx.random(rng, (cfg.M, L))
    dep = install_plan(plan, model, rng, ctx, pad=cfg.pad)
    oracle = PlainOracle(model, ctx)
    print(f"plan: {plan.scheme}, {len(plan.classes)} class(es), granularity {plan.granularity}, "
          f"L = {L} (stored {dep.stored_L})", file=out)
    full = all(db.occupancy == db.capacity for db in dep.databases)
    print(f"occupancy: {'all databases full' if full else 'databases NOT full'}", file=out)

    ok = True
    for t in range(sessions):
        theta = int(rng.integers(cfg.M))
        delta = ctx.random(rng, L)
        recovered, ledger = run_session(dep, theta, delta, rng)
        read_ok = bool(np.array_equal(recovered, oracle.model[theta]))
        oracle.apply(theta, delta)
        bad = verify_against_oracle(dep, oracle, rng)
        write_ok = not bad
        report = measure_costs(ledger, plan)
        ok = ok and read_ok and write_ok and all(c["exact"] for c in report["classes"])
        print(f"session {t + 1}: theta={theta} read={'ok' if read_ok else 'FAIL'} "
              f"write={'ok' if write_ok else 'FAIL ' + str(bad)} "
              f"C_R={float(report['C_R']):.6f} C_W={float(report['C_W']):.6f} "
              f"C_T={_fmt(report['C_T'])} theoretical={_fmt(report['theoretical'])}", file=out)
    if sessions:
        for c in report["classes"]:
            print(f"  class ({c['K']},{c['R']}): C_R={_fmt(c['C_R'])} expected {_fmt(c['expected_C_R'])}; "
                  f"C_W={_fmt(c['C_W'])} expected {_fmt(c['expected_C_W'])}", file=out)
        print(f"  query upload (not part of C_W): {report['query_upload_symbols']} symbols", file=out)

    if probe:
        seen = set()
        for geom in plan.geometries:
            if (geom.K, geom.R) in seen:
                continue
            seen.add((geom.K, geom.R))
            for mode in ("index", "update", "security"):
                rep = privacy_probe(mode, ctx, geom.K, geom.R, cfg.M, seed=cfg.seed)
                if rep.method == "enumeration":
                    detail = f"TV={rep.tv} TV_uniform={rep.tv_uniform}"
                else:
                    detail = f"chi2={rep.statistic:.3f} p_min={rep.p_value:.4g} tests={rep.n_tests}"
                print(f"probe {mode} ({geom.K},{geom.R}) q={ctx.q}: {rep.method} over {rep.points} points, "
                      f"{detail}: {'pass' if rep.passed else 'FAIL'}", file=out)
                ok = ok and rep.passed
    if snapshot:
        save_snapshot(dep.databases, ctx.q, snapshot)
        print(f"snapshot written to {snapshot}", file=out)
    print(f"verdict: {'all checks passed' if ok else 'CHECKS FAILED'}", file=out)
    return ok


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sessions = cfg.sessions if args.sessions is None else args.sessions
    ok = simulate(cfg, sessions, args.probe or cfg.probe, snapshot=args.snapshot)
    return EXIT_OK if ok else EXIT_CORRECTNESS


# ---------------------------------------------------------------- sweep


def parse_range(text: str | None, default_step: str = "0.1") -> list[Fraction]:
    """``a``, ``a:b`` or ``a:b:step``, inclusive of b, in exact decimals."""
    if text is None:
        return []
    parts = text.split(":")
    if len(parts) > 3 or not all(p.strip() for p in parts):
        raise ConfigError(f"bad range {text!r}; expected a:b:step")
    try:
        vals = [as_fraction(p) for p in parts]
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad range {text!r}; bounds must be numbers") from None
    if len(vals) == 1:
        return vals
    start, stop = vals[0], vals[1]
    step = vals[2] if len(vals) == 3 else as_fraction(default_step)
    if step <= 0:
        raise ConfigError(f"bad range {text!r}; step must be positive")
    out = []
    x = start
    while x <= stop:
        out.append(x)
        x += step
    return out


def _num(x) -> str:
    return "" if x is None else repr(round(float(x), 6))


SWEEP_COLUMNS = ["k", "p", "r", "s", "C1", "C2", "chosen", "alpha", "beta", "delta"]


def sweep_rows(ks, ps):
    for k in ks:
        for p in ps:
            prof = profile_from_kp(k, p)
            alpha, beta, delta = mixture_c2_weights(prof)
            try:
                dec = decide_mixture(prof)
                c1, c2, chosen = dec.c1, dec.c2, dec.chosen_cost
            except InfeasibleCode:
                c1 = c2 = chosen = None
            yield [_num(k), _num(p), _num(prof.r), _num(prof.s), _num(c1), _num(c2),
                   _num(chosen), _num(alpha), _num(beta), _num(delta)]


def cost_rows(a: int, bs):
    for b in bs:
        try:
            c = total_cost(a, int(b))
        except InfeasibleCode:
            c = None
        yield [str(a), str(int(b)), _num(c)]


def cmd_sweep(args) -> int:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if args.cost_a is not None:
        bs = parse_range(args.b_range, default_step="1")
        if any(b.denominator != 1 for b in bs):
            raise ConfigError("--b-range must contain integers")
        writer.writerow(["a", "b", "C_T"])
        writer.writerows(cost_rows(args.cost_a, bs))
    else:
        ks = parse_range(args.k_range)
        ps = parse_range(args.p_range)
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(sweep_rows(ks, ps))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pruw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute the storage plan for a config")
    p.add_argument("config")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="install a plan and run read-update-write sessions")
    p.add_argument("config")
    p.add_argument("--sessions", type=int, default=None)
    p.add_argument("--probe", action="store_true", help="also run the privacy/security probes")
    p.add_argument("--snapshot", help="write the final database state to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="cost curves as CSV")
    p.add_argument("--k-range", default="2.7", help="a:b:step (default 2.7)")
    p.add_argument("--p-range", default="4.3", help="a:b:step (default 4.3)")
    p.add_argument("--cost-a", type=int, default=None,
                   help="sweep C_T(a, b) over --b-range instead of the (k, p) grid")
    p.add_argument("--b-range", default=None, help="a:b[:step] of replication counts")
    p.add_argument("--csv", help="output file (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("PRUW_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PRUWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
