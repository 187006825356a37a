"""Command line harness.

    pubmech evaluate  --config run.ini
    pubmech solve-dp  --config run.ini
    pubmech evolve    --config run.ini
    pubmech check scs --n 5 --trials 10000
    pubmech table ch3-ub --out results/

Configs are INI files; see the README for the schema.  Every CSV starts
with a ``# config_hash=...,seed=...`` line and is byte-identical on rerun.
Exit codes: 0 success, 1 config error, 2 property violation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import costshare, delay, dp, market, redist
from .core import check_budget, check_ir, check_sp
from .evolve import CURVE_KINDS, GAConfig, evolve_sequences
from .priors import Prior, parse_prior

SHARDS = 16
PRESETS = ("ch3-twopeak", "ch3-ub", "ch4-delays", "ch5-expectation", "ch6-revenue")
BINARY_OBJECTIVES = ("consumers", "welfare")
DELAY_OBJECTIVES = ("sum_delay", "max_delay")
CHECKABLE = ("cec", "scs", "largest-unanimous", "single-deadline", "multiple-deadline",
             "sequential", "ama", "redist")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    prior: Prior = field(default_factory=lambda: Prior.uniform(0.0, 1.0))
    n: int = 3
    objective: str = "consumers"
    mechanism: str = "scs"
    samples: int = 100_000
    seed: int = 0
    threads: int = 1
    trials: int = 10_000
    solver: str = "unanimous"
    H: int = 200
    U_levels: int = 200
    target: str = "sequences"
    curve: str = "fourier"
    size: int = 30
    filter: str = "strict"
    ga: GAConfig = field(default_factory=GAConfig)
    out: Path = Path(".")
    source: str = ""


_KEYS = {
    "experiment": {"prior": str, "n": int, "objective": str, "mechanism": str, "samples": int,
                   "seed": int, "threads": int, "out": str},
    "dp": {"solver": str, "h": int, "u_levels": int},
    "ga": {"target": str, "curve": str, "size": int, "filter": str,
           **{f.name: f.type for f in fields(GAConfig)}},
    "check": {"trials": int},
}
_CASTS = {"int": int, "float": float, "str": str}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return None


def _fail(text: str, section: str, key: str, msg: str) -> ConfigError:
    no = _line_of(text, section, key)
    where = f"line {no}: " if no else ""
    return ConfigError(f"{where}[{section}] {key}: {msg}")


def load_config(text: str = "") -> ExperimentConfig:
    """Parse and validate an INI config; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(source=text)
    ga = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in _KEYS:
            no = next((i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{section}]"), None)
            raise ConfigError(f"line {no}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = _KEYS[sec].get(key)
            if kind is None:
                raise _fail(text, sec, key, "unknown key")
            cast = _CASTS.get(kind if isinstance(kind, str) else kind.__name__, str)
            try:
                value = cast(raw)
            except ValueError as exc:
                raise _fail(text, sec, key, f"cannot read {raw!r}") from exc
            if sec == "experiment" and key == "prior":
                try:
                    value = parse_prior(raw)
                except ValueError as exc:
                    raise _fail(text, sec, key, str(exc)) from exc
            if sec == "ga" and key in {f.name for f in fields(GAConfig)}:
                ga[key] = value
            elif key == "h":
                cfg.H = value
            elif key == "u_levels":
                cfg.U_levels = value
            elif key == "out":
                cfg.out = Path(value)
            else:
                setattr(cfg, key, value)
    try:
        cfg.ga = GAConfig(**ga)
    except ValueError as exc:
        raise _fail(text, "ga", next(iter(ga), "rounds"), str(exc)) from exc
    _validate(cfg, text)
    return cfg


def _validate(cfg: ExperimentConfig, text: str) -> None:
    checks = [
        ("experiment", "samples", cfg.samples >= 1, "must be at least 1"),
        ("experiment", "n", cfg.n >= 1, "must be at least 1"),
        ("experiment", "threads", cfg.threads >= 1, "must be at least 1"),
        ("experiment", "seed", cfg.seed >= 0, "must be nonnegative"),
        ("check", "trials", cfg.trials >= 1, "must be at least 1"),
        ("dp", "h", cfg.H >= 10, "must be at least 10"),
        ("dp", "u_levels", cfg.U_levels >= 2, "must be at least 2"),
        ("dp", "solver", cfg.solver in ("unanimous", "upper-bound", "one-directional"), "unknown solver"),
        ("ga", "target", cfg.target in ("sequences", "curves", "redist"), "unknown target"),
        ("ga", "curve", cfg.curve in CURVE_KINDS, "unknown curve kind"),
        ("ga", "size", cfg.size >= 1, "must be at least 1"),
        ("ga", "filter", cfg.filter in ("strict", "loose"), "must be strict or loose"),
    ]
    for sec, key, ok, msg in checks:
        if not ok:
            raise _fail(text, sec, key, msg)


def config_hash(cfg: ExperimentConfig, *extra: str) -> str:
    """Digest of the normalized config text plus the command line choices."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(cfg.source)
    canon = sorted((s.lower(), k, v.strip()) for s in parser.sections() for k, v in parser.items(s))
    blob = repr((canon, extra)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(rows: list[dict], header: str) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def sharded(fn, samples: int, seed: int, threads: int = 1) -> np.ndarray:
    """Run ``fn(rng, rows)`` over fixed seed-derived shards, concatenated in
    shard order, so the result does not depend on the thread count."""
    streams = np.random.SeedSequence(seed).spawn(SHARDS)
    sizes = [samples // SHARDS + (i < samples % SHARDS) for i in range(SHARDS)]
    jobs = [(np.random.default_rng(s), k) for s, k in zip(streams, sizes) if k > 0]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    else:
        parts = [fn(*job) for job in jobs]
    return np.concatenate(parts)


def _draw(prior: Prior, rng, rows: int, n: int) -> np.ndarray:
    return prior.sample(rng, rows * n).reshape(rows, n)


def parse_mechanism(text: str) -> tuple[str, tuple[float, ...]]:
    """``name`` or ``name(a, b, ...)``."""
    m = re.match(r"^\s*([a-z-]+)\s*(?:\(([^)]*)\))?\s*$", text)
    if not m:
        raise ConfigError(f"cannot parse mechanism {text!r}")
    args = tuple(float(a) for a in (m.group(2) or "").split(",") if a.strip())
    return m.group(1), args


def _release_fn(name: str, args: tuple[float, ...], n: int):
    if name == "scs":
        return lambda v: np.where(costshare.batch_outcomes(v, "scs")[0], 0.0, 1.0)
    if name == "single-deadline":
        return lambda v: delay.batch_deadline(v, args[0] if args else 1.0)[0]
    if name == "multiple-deadline":
        ds = args if args else (1.0,) * n
        if len(ds) != n:
            raise ConfigError("multiple-deadline needs one deadline per agent")
        return lambda v: delay.batch_deadline(v, np.array(ds))[0]
    raise ConfigError(f"no delay form for mechanism {name!r}")


# subcommands


def cmd_evaluate(cfg: ExperimentConfig) -> list[dict]:
    name, args = parse_mechanism(cfg.mechanism)
    n, prior = cfg.n, cfg.prior
    if cfg.objective in BINARY_OBJECTIVES:
        if name not in ("cec", "scs"):
            raise ConfigError(f"mechanism {name!r} has no binary Monte Carlo form")
        col = BINARY_OBJECTIVES.index(cfg.objective)
        vals = sharded(lambda rng, k: costshare.batch_objectives(_draw(prior, rng, k, n), name)[col],
                       cfg.samples, cfg.seed, cfg.threads)
    elif cfg.objective in DELAY_OBJECTIVES:
        release = _release_fn(name, args, n)
        reduce = np.sum if cfg.objective == "sum_delay" else np.max
        vals = sharded(lambda rng, k: reduce(release(_draw(prior, rng, k, n)), axis=1),
                       cfg.samples, cfg.seed, cfg.threads)
    elif cfg.objective == "revenue":
        if name == "optimal":
            mean, se = market.optimal_revenue(cfg.samples, seed=cfg.seed)
        elif name == "vcg":
            mean, se = market.ama_expected_revenue(market.AMASpec.vcg(), cfg.samples, cfg.seed)
        else:
            raise ConfigError(f"unknown market mechanism {name!r}")
        return [{"mechanism": cfg.mechanism, "objective": "revenue", "mean": mean, "se": se}]
    elif cfg.objective == "ratio":
        if name == "baseline":
            h = redist.RedistributionFn.baseline(n)
        elif name == "constant":
            h = redist.RedistributionFn.constant(args[0] if args else n - 1, n)
        else:
            raise ConfigError(f"unknown redistribution {name!r}")
        vals = sharded(lambda rng, k: redist._ratios(h, _draw(prior, rng, k, n)),
                       cfg.samples, cfg.seed, cfg.threads)
    else:
        raise ConfigError(f"unknown objective {cfg.objective!r}")
    mean, se = _mean_se(vals)
    return [{"mechanism": cfg.mechanism, "objective": cfg.objective, "mean": mean, "se": se}]


def cmd_solve_dp(cfg: ExperimentConfig) -> list[dict]:
    if cfg.objective not in BINARY_OBJECTIVES:
        raise ConfigError("dp objective must be consumers or welfare")
    disc = dp.Discretization(cfg.H, cfg.U_levels, cfg.objective)
    if cfg.solver == "unanimous":
        res = dp.optimal_unanimous(cfg.prior, cfg.n, disc)
        extra = " ".join(f"{s:.6f}" for s in res.policy["shares"])
        value = res.value
    elif cfg.solver == "upper-bound":
        value, extra = dp.excludable_upper_bound(cfg.prior, cfg.n, disc), ""
    else:
        value = dp.one_directional_offers(cfg.prior, cfg.n, cfg.H, cfg.objective, cfg.U_levels).value
        extra = ""
    return [{"solver": cfg.solver, "objective": cfg.objective, "n": cfg.n, "H": cfg.H,
             "value": value, "policy": extra}]


def cmd_evolve(cfg: ExperimentConfig) -> tuple[list[dict], str]:
    """Returns the trace rows and the serialized winner."""
    ga = GAConfig(**{**{f.name: getattr(cfg.ga, f.name) for f in fields(GAConfig)}, "seed": cfg.seed})
    if cfg.target == "sequences":
        if cfg.objective not in DELAY_OBJECTIVES:
            raise ConfigError("sequence search needs objective sum_delay or max_delay")
        res = evolve_sequences(cfg.prior, cfg.n, cfg.objective, ga, cfg.filter)
        return _trace_rows(res.trace, res.fitness), res.best.to_csv()
    if cfg.target == "curves":
        res = market.optimize_ama(cfg.curve, cfg.size, ga)
        return _trace_rows(res.trace, res.fitness), res.best.to_csv()
    if cfg.objective not in redist.EPSILON:
        raise ConfigError("redistribution search needs objective expectation or worst_case")
    h = redist.optimize_h(cfg.objective, cfg.prior, cfg.n, ga)
    mean, se = redist.expected_ratio_terms(h, cfg.prior, cfg.n, cfg.samples, cfg.seed + 1)
    alpha, _ = redist.worst_case_ratio(h, cfg.n, 100, cfg.seed)
    return [{"objective": cfg.objective, "expected_ratio": mean, "se": se, "worst_alpha": alpha}], h.to_csv()


def _trace_rows(trace, final) -> list[dict]:
    rows = [{"round": r, "best": b, "mean": m} for r, b, m in trace]
    rows.append({"round": "heldout", "best": final, "mean": final})
    return rows


def _check_target(name: str, args: tuple[float, ...], n: int, prior: Prior):
    """``(mechanism, prior or priors, n)`` for the property suite."""
    if name == "cec":
        return costshare.conservative_equal_cost, prior, n
    if name == "scs":
        return costshare.serial_cost_sharing, prior, n
    if name == "largest-unanimous":
        spec = costshare.CostShareSpec.equal_share(n)
        return (lambda p: costshare.largest_unanimous(p, spec)), prior, n
    if name == "single-deadline":
        d = args[0] if args else 0.5
        return (lambda p: delay.single_deadline(p, d)), prior, n
    if name == "multiple-deadline":
        ds = args if args else tuple(np.linspace(0.4, 1.0, n))
        return (lambda p: delay.multiple_deadline(p, ds)), prior, n
    if name == "sequential":
        mech = default_sequence(n)
        return (lambda p: delay.sequential_unanimous(p, mech)), prior, n
    if name == "ama":
        spec = market.virtual_value_ama(100)
        priors = [Prior.uniform(0.0, market.THETA_O_MAX), Prior.uniform(0.0, market.THETA_D_MAX)]
        return (lambda p: market.ama_outcome(p, spec)), priors, 2
    if name == "redist":
        h = redist.RedistributionFn.baseline(max(n, 2))
        return (lambda p: redist.redist_outcome(p, h)), prior, max(n, 2)
    raise ConfigError(f"cannot check mechanism {name!r}; choose from {CHECKABLE}")


def default_sequence(n: int) -> delay.SequentialMechanism:
    """Equal shares offered at release times 0, 0.3 and 0.6."""
    share = (1.0 / n,) * n
    return delay.SequentialMechanism(tuple(delay.CostTimeVector((d,) * n, share) for d in (0.0, 0.3, 0.6)))


def cmd_check(cfg: ExperimentConfig, mechanism: str) -> list[dict]:
    name, args = parse_mechanism(mechanism)
    mech, prior, n = _check_target(name, args, cfg.n, cfg.prior)
    tol = 1e-6 if name == "ama" else 1e-9
    reports = [check_sp(mech, prior, n, cfg.trials, tol, cfg.seed)]
    if name != "redist":
        reports.append(check_ir(mech, prior, n, cfg.trials, tol, cfg.seed))
    reports.append(check_budget(mech, prior, n, cfg.trials, cfg.seed))
    return [{"mechanism": mechanism, "n": n, "property": r.name, "trials": r.trials,
             "violations": len(r.violations), "max_gain": r.max_gain} for r in reports]


# presets


def preset_rows(name: str, seed: int, threads: int = 1) -> list[dict]:
    if name == "ch3-twopeak":
        return _ch3_twopeak(seed, threads)
    if name == "ch3-ub":
        return _ch3_ub(seed, threads)
    if name == "ch4-delays":
        return _ch4_delays(seed, threads)
    if name == "ch5-expectation":
        return _ch5_expectation(seed)
    if name == "ch6-revenue":
        return _ch6_revenue(seed)
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _mc_binary(prior, n, mech, col, samples, seed, threads):
    vals = sharded(lambda rng, k: costshare.batch_objectives(_draw(prior, rng, k, n), mech)[col],
                   samples, seed, threads)
    return _mean_se(vals)


def _ch3_twopeak(seed, threads):
    prior = Prior.two_peak(0.1, 0.1, 0.9, 0.1, 0.5)
    rows = []
    for n in (3, 5):
        for col, obj in enumerate(BINARY_OBJECTIVES):
            best = dp.optimal_unanimous(prior, n, dp.Discretization(200, 200, obj)).value
            cec, se = _mc_binary(prior, n, "cec", col, 100_000, seed, threads)
            rows.append({"n": n, "objective": obj, "dp": best, "cec": cec, "cec_se": se})
    return rows


def _ch3_ub(seed, threads):
    cases = [(Prior.uniform(0, 1), "Uniform(0,1)", 5), (Prior.uniform(0, 1), "Uniform(0,1)", 10),
             (Prior.truncated_normal(0.5, 0.1), "TruncatedNormal(0.5,0.1)", 5)]
    rows = []
    for prior, label, n in cases:
        for col, obj in enumerate(BINARY_OBJECTIVES):
            ub = dp.excludable_upper_bound(prior, n, dp.Discretization(200, 200, obj))
            scs, se = _mc_binary(prior, n, "scs", col, 100_000, seed, threads)
            rows.append({"prior": label, "n": n, "objective": obj, "scs": scs, "scs_se": se, "ub": ub})
    return rows


def _ch4_delays(seed, threads):
    """Long format: one row per prior, objective and mechanism.

    Deadlines are tuned on one sample and re-evaluated on a fresh one.
    """
    rows = []
    n = 3
    for label, prior in (("Uniform(0,1)", Prior.uniform(0, 1)), ("Bernoulli(0.5)", Prior.two_point(0, 1, 0.5))):
        for obj in DELAY_OBJECTIVES:
            reduce = np.sum if obj == "sum_delay" else np.max

            def measure(release, samples, stream):
                vals = sharded(lambda rng, k: reduce(release(_draw(prior, rng, k, n)), axis=1),
                               samples, stream, threads)
                return _mean_se(vals)

            d, _ = delay.optimal_single_deadline(prior, n, obj, 20_000, seed)
            ds, _ = delay.optimal_multiple_deadlines(prior, n, obj, 20_000, seed)
            found = [("scs", _release_fn("scs", (), n), "", 1_000_000),
                     ("single-deadline", _release_fn("single-deadline", (d,), n), f"{d:.2f}", 200_000),
                     ("multiple-deadline", _release_fn("multiple-deadline", ds, n),
                      " ".join(f"{x:.2f}" for x in ds), 200_000)]
            for mech, release, param, samples in found:
                mean, se = measure(release, samples, seed + 1)
                rows.append({"prior": label, "objective": obj, "mechanism": mech,
                             "value": mean, "se": se, "parameters": param})
    tga = evolve_sequences(Prior.two_point(0, 1, 0.5), n, "sum_delay", GAConfig.sequences(seed=seed), "strict")
    rows.append({"prior": "Bernoulli(0.5)", "objective": "sum_delay", "mechanism": "tga-strict",
                 "value": -tga.fitness, "se": float("nan"), "parameters": f"{len(tga.best)} vectors"})
    return rows


def _ch5_expectation(seed):
    prior, n = Prior.uniform(0, 1), 3
    rows = []
    cands = [("constant", redist.RedistributionFn.constant(n - 1, n)),
             ("baseline", redist.RedistributionFn.baseline(n)),
             ("evolved", redist.optimize_h("expectation", prior, n, GAConfig(rounds=100, seed=seed)))]
    test = np.random.default_rng([seed, 5]).random((100_000, n))
    for label, h in cands:
        mean, se = redist.expected_ratio_terms(h, prior, n, 100_000, seed + 1)
        alpha, _ = redist.worst_case_ratio(h, n, 50, seed)
        rows.append({"h": label, "expected_ratio": mean, "se": se, "worst_alpha": alpha,
                     "violations": len(redist.is_feasible(h, test).violations)})
    return rows


def _ch6_revenue(seed):
    rows = []
    mean, se = market.optimal_revenue(10_000, seed=seed)
    rows.append({"mechanism": "optimal", "revenue": mean, "se": se})
    mean, se = market.ama_expected_revenue(market.AMASpec.vcg(), 10_000, seed)
    rows.append({"mechanism": "vcg", "revenue": mean, "se": se})
    for kind, size in (("fourier", 30), ("piecewise", 50)):
        res = market.optimize_ama(kind, size, GAConfig.curves(seed=seed))
        rows.append({"mechanism": f"{kind}-{size}", "revenue": res.fitness, "se": float("nan")})
    return rows


# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pubmech", description="Public project mechanism experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="directory for CSV output")
    common.add_argument("--threads", type=int, help="worker threads for Monte Carlo shards")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("evaluate", parents=[common], help="Monte Carlo objective of a mechanism")
    sub.add_parser("solve-dp", parents=[common], help="run a dynamic program")
    sub.add_parser("evolve", parents=[common], help="genetic search over sequences, curves or h")
    chk = sub.add_parser("check", parents=[common], help="property suites")
    chk.add_argument("mechanism", help=f"one of {', '.join(CHECKABLE)}, optionally with (args)")
    chk.add_argument("--n", type=int)
    chk.add_argument("--trials", type=int)
    tab = sub.add_parser("table", parents=[common], help="named reproduction presets")
    tab.add_argument("preset", choices=PRESETS)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = load_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg.threads = args.threads
        if args.out is not None:
            cfg.out = args.out
        extra = [args.command]
        if args.command == "check":
            if args.n is not None:
                cfg.n = args.n
            if args.trials is not None:
                if args.trials < 1:
                    raise ConfigError("--trials must be at least 1")
                cfg.trials = args.trials
            extra += [args.mechanism, str(cfg.n), str(cfg.trials)]
        if args.command == "table":
            extra.append(args.preset)
        header = f"# config_hash={config_hash(cfg, *extra)},seed={cfg.seed}"
        artifact = None
        if args.command == "evaluate":
            rows, stem = cmd_evaluate(cfg), "evaluate"
        elif args.command == "solve-dp":
            rows, stem = cmd_solve_dp(cfg), "solve_dp"
        elif args.command == "evolve":
            (rows, artifact), stem = cmd_evolve(cfg), f"evolve_{cfg.target}"
        elif args.command == "check":
            rows, stem = cmd_check(cfg, args.mechanism), "check"
        else:
            rows, stem = preset_rows(args.preset, cfg.seed, cfg.threads), args.preset
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    body = write_csv(rows, header)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / f"{stem}.csv").write_text(body)
    if artifact is not None:
        (cfg.out / f"{stem}_best.csv").write_text(header + "\n" + artifact)
    sys.stdout.write(body)
    if args.command == "check" and any(r["violations"] for r in rows):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
