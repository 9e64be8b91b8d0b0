"""Command line entry point: ``gibbslab <subcommand> [options]``.

Every run writes into ``<out>/<experiment>-<hash>/``:

- ``records.jsonl``: one header line, then one record per replica
- ``reports.jsonl`` and ``summary.csv``: law / entropy reports
- ``manifest.json``: config hash, wall time, versions and progress

Record and report files start with the config that produced them. They never
contain timestamps, so reruns of one config are byte-identical.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__

OUT_ENV = "GIBBSLAB_OUT"
DEFAULT_OUT = "gibbslab-results"
CHUNK = 200

SUBCOMMANDS = ("sample", "exact", "occurrence", "return", "waiting", "matching", "overlap", "poisson",
               "gumbel", "entropy", "pressure", "ldp", "disagreement", "suite")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    experiment: str
    beta: float = 1.0
    n: tuple = (1,)
    pattern: str = "single-minus"
    replicas: int = 100
    cap: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in SUBCOMMANDS:
            raise ConfigError(f"experiment: unknown value {self.experiment!r}")
        try:
            self.beta = float(self.beta)
        except (TypeError, ValueError):
            raise ConfigError(f"beta: not a number: {self.beta!r}") from None
        if not self.beta >= 0 or not math.isfinite(self.beta):
            raise ConfigError(f"beta: must be a finite number >= 0, got {self.beta}")
        try:
            self.n = tuple(int(x) for x in (self.n if isinstance(self.n, (tuple, list)) else (self.n,)))
        except (TypeError, ValueError):
            raise ConfigError(f"n: expected integers, got {self.n!r}") from None
        if any(x < 0 for x in self.n):
            raise ConfigError("n: must be >= 0")
        if int(self.replicas) < 0:
            raise ConfigError("replicas: must be >= 0")
        self.replicas = int(self.replicas)
        if self.cap is not None:
            self.cap = int(self.cap)
            if self.cap < 1:
                raise ConfigError("cap: must be >= 1")
        self.seed = int(self.seed)
        self.params = {str(k): str(v) for k, v in sorted(self.params.items())}

    def param(self, key, default=None, cast=str):
        if key not in self.params:
            return default
        try:
            return cast(self.params[key])
        except ValueError:
            raise ConfigError(f"params.{key}: cannot parse {self.params[key]!r}") from None


def emit_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {
        "id": cfg.experiment,
        "beta": repr(cfg.beta),
        "n": ",".join(map(str, cfg.n)),
        "pattern": cfg.pattern,
        "replicas": str(cfg.replicas),
        "cap": "" if cfg.cap is None else str(cfg.cap),
        "seed": str(cfg.seed),
    }
    cp["params"] = dict(cfg.params)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from None
    if "experiment" not in cp:
        raise ConfigError("config: missing [experiment] section")
    sec = cp["experiment"]
    known = {"id", "beta", "n", "pattern", "replicas", "cap", "seed"}
    extra = set(sec) - known
    if extra:
        raise ConfigError(f"experiment: unknown keys {sorted(extra)}")
    if "id" not in sec:
        raise ConfigError("experiment.id: missing")
    n_text = sec.get("n", "1")
    return ExperimentConfig(
        experiment=sec["id"],
        beta=sec.get("beta", "1.0"),
        n=tuple(int(x) for x in n_text.split(",") if x.strip()) if n_text.strip() else (),
        pattern=sec.get("pattern", "single-minus"),
        replicas=_int_field(sec, "replicas", "100"),
        cap=None if not sec.get("cap", "").strip() else _int_field(sec, "cap", ""),
        seed=_int_field(sec, "seed", "0"),
        params=dict(cp["params"]) if "params" in cp else {},
    )


def _int_field(sec, key, default):
    try:
        return int(sec.get(key, default))
    except ValueError:
        raise ConfigError(f"experiment.{key}: not an integer: {sec.get(key)!r}") from None


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# output

class RunContext:
    def __init__(self, cfg: ExperimentConfig, root: Path, threads: int = 1, quiet: bool = False):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = Path(root) / f"{cfg.experiment}-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, int(threads))
        self.quiet = quiet
        self.t0 = time.time()
        self.files = []

    def header(self) -> dict:
        return {"module": "gibbslab", "operation": self.cfg.experiment, "config_hash": self.hash,
                "config": emit_config(self.cfg)}

    def say(self, text: str):
        if not self.quiet:
            print(text)

    def write_jsonl(self, name: str, lines):
        path = self.dir / name
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": self.header()}, sort_keys=True) + "\n")
            for line in lines:
                fh.write(line + "\n")
        self.files.append(name)
        return path

    def write_csv(self, name: str, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            for line in emit_config(self.cfg).splitlines():
                fh.write(f"# {line}\n")
            fh.write(f"# config_hash={self.hash} operation={self.cfg.experiment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(x) for x in r])
        self.files.append(name)
        return path

    def write_text(self, name: str, text: str):
        path = self.dir / name
        path.write_text(text)
        self.files.append(name)
        return path

    def manifest(self, status: str = "complete", completed: int | None = None):
        m = {"config_hash": self.hash, "config": emit_config(self.cfg), "operation": self.cfg.experiment,
             "status": status, "completed_replicas": completed, "files": sorted(set(self.files)),
             "wall_seconds": round(time.time() - self.t0, 3), "started": self.t0,
             "versions": module_versions()}
        (self.dir / "manifest.json").write_text(json.dumps(m, indent=1, sort_keys=True))


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def module_versions() -> dict:
    import numba
    import scipy
    return {"gibbslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": sys.version.split()[0]}


def payload_digests(root) -> dict:
    """sha256 of every record / report / summary file under ``root`` (manifests excluded)."""
    out = {}
    root = Path(root)
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# replica farming

def _chunk_call(fn, indices):
    return [fn(r) for r in indices]


def map_replicas(fn, start: int, stop: int, threads: int = 1):
    """[fn(r) for r in range(start, stop)], optionally across processes.

    Work is split by replica index and merged in index order, so the result
    does not depend on ``threads``.
    """
    idx = list(range(start, stop))
    if threads <= 1 or len(idx) < 2:
        return [fn(r) for r in idx]
    size = max(1, math.ceil(len(idx) / (threads * 4)))
    chunks = [idx[i:i + size] for i in range(0, len(idx), size)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(partial(_chunk_call, fn), chunks))
    return [x for part in parts for x in part]


def run_records(ctx: RunContext, fn, replicas: int, to_line=lambda rec: rec.to_json(),
                from_line=None, name: str = "records.jsonl"):
    """Produce ``replicas`` records, resuming a partial run of the same config."""
    path = ctx.dir / name
    done_lines = []
    man = ctx.dir / "manifest.json"
    if path.exists() and man.exists():
        m = json.loads(man.read_text())
        if m.get("config_hash") == ctx.hash and m.get("status") == "partial":
            lines = path.read_text().splitlines()[1:]
            done_lines = lines[: int(m.get("completed_replicas") or 0)]
            ctx.say(f"resuming after {len(done_lines)} replicas")
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": ctx.header()}, sort_keys=True) + "\n")
        for line in done_lines:
            fh.write(line + "\n")
        fh.flush()
        ctx.files.append(name)
        done = len(done_lines)
        while done < replicas:
            stop = min(replicas, done + CHUNK)
            for rec in map_replicas(fn, done, stop, ctx.threads):
                fh.write(to_line(rec) + "\n")
            fh.flush()
            done = stop
            ctx.manifest("partial", done)
    lines = path.read_text().splitlines()[1:]
    return [from_line(x) for x in lines] if from_line else lines


# ---------------------------------------------------------------------------
# pattern sources

def _single_minus(side):
    a = np.ones((side, side), dtype=np.int8)
    a[0, 0] = -1
    return a


def _domino(side):
    a = np.ones((side, side), dtype=np.int8)
    a[0, :2] = -1
    return a


# named patterns on C_n (side n + 1)
FIXTURES = {
    "single-minus": _single_minus,
    "all-plus": lambda side: np.ones((side, side), dtype=np.int8),
    "checkerboard": lambda side: (np.indices((side, side)).sum(axis=0) % 2 * -2 + 1).astype(np.int8),
    "domino": _domino,
}


def resolve_pattern(cfg: ExperimentConfig):
    from .gibbs import phase_window
    from .lattice import Pattern, parse_pattern
    src = cfg.pattern
    if src in FIXTURES:
        return Pattern.from_array(FIXTURES[src](cfg.n[0] + 1))
    if src.startswith("file:"):
        try:
            return parse_pattern(Path(src[5:]).read_text())
        except OSError as e:
            raise ConfigError(f"pattern: cannot read {src[5:]}: {e}") from None
    if src == "sampled":
        n = cfg.n[0]
        w = phase_window(cfg.beta, (n + 1, n + 1), cfg.seed, 0, labels=("pattern-source",))
        return Pattern.from_array(w)
    raise ConfigError(f"pattern: unknown source {src!r}; use a fixture {sorted(FIXTURES)}, file:PATH or sampled")


# ---------------------------------------------------------------------------
# subcommands

def _floats(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of numbers, got {text!r}") from None


def _extent(text: str):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"extent: expected RxC, got {text!r}") from None


def cmd_sample(ctx):
    from .gibbs import GibbsSpec, SamplerHandle, sample
    from .lattice import format_window
    cfg = ctx.cfg
    spec = GibbsSpec(_extent(cfg.param("extent", "4x4")), cfg.beta, cfg.param("boundary", "plus"))
    handle = SamplerHandle(spec, cfg.param("method", "cftp"), cfg.seed, 0,
                           burn_in=cfg.param("burn_in", 200, int), sweeps=cfg.param("sweeps", 1, int))
    configs = sample(handle, cfg.replicas)
    ctx.write_text("samples.txt", "".join(format_window(c) + "\n" for c in configs))
    mags = [float(c.spins.mean()) for c in configs]
    ctx.write_csv("summary.csv", ("replica", "magnetization"), enumerate(mags))
    ctx.say(f"{len(configs)} samples, mean magnetization {np.mean(mags) if mags else float('nan'):.4f}")


def cmd_exact(ctx):
    from .gibbs import GibbsSpec, exact_distribution
    cfg = ctx.cfg
    spec = GibbsSpec(_extent(cfg.param("extent", "3x3")), cfg.beta, cfg.param("boundary", "plus"))
    dist = exact_distribution(spec)
    marg = dist.site_marginals()
    rows = [(i, j, float(marg[i, j])) for i in range(marg.shape[0]) for j in range(marg.shape[1])]
    ctx.write_csv("marginals.csv", ("row", "col", "p_plus"), rows)
    ctx.write_jsonl("reports.jsonl", [json.dumps({"log_partition": float(dist.log_z)}, sort_keys=True)])
    ctx.say(f"log Z = {dist.log_z:.12g}")


def _time_common(ctx, kind):
    from . import laws
    from .patterns import TimeRecord
    cfg = ctx.cfg
    A = resolve_pattern(cfg)
    beta = cfg.beta
    p_a = laws.pattern_probability(A, beta)
    side = cfg.cap or laws.cap_side_for(8 / p_a)
    fn = partial(laws.occurrence_replica, A, beta, side, cfg.seed, kind=kind,
                 burn_in=cfg.param("burn_in", 100, int), normalizer=p_a)
    recs = run_records(ctx, fn, cfg.replicas, from_line=TimeRecord.from_json)
    _law_outputs(ctx, recs, p_a, laws.pattern_id(A), min(A.box_shape()) - 1)


def _law_outputs(ctx, recs, p_a, pid, n):
    from . import laws
    cfg = ctx.cfg
    reports, rate_line = [], None
    try:
        rate = laws.rate_from_time_records(recs, p_a, pattern=pid, seed=cfg.seed)
        rate_line = json.dumps(laws._jsonable(rate.to_dict()), sort_keys=True)
        rep = laws.exponential_law_test(recs, rate, law=f"exponential_{cfg.experiment}",
                                        min_records=cfg.param("min_records", laws.MIN_KS_RECORDS, int),
                                        n=n, beta=cfg.beta, seed=cfg.seed)
        reports.append(rep)
    except laws.LawError as e:
        ctx.say(f"law test skipped: {e}")
        reports.append(laws.LawReport(f"exponential_{cfg.experiment}", math.inf, math.nan, "error",
                                      len(recs), n, cfg.beta, cfg.seed, 0.0, {"error": str(e)}))
    lines = [r.to_json() for r in reports] + ([rate_line] if rate_line else [])
    ctx.write_jsonl("reports.jsonl", lines)
    ctx.write_csv("summary.csv", laws.LawReport.FIELDS,
                  [[laws._jsonable(getattr(r, k)) for k in laws.LawReport.FIELDS] for r in reports])
    for r in reports:
        ctx.say(f"{r.law}: statistic={r.statistic:.4g} threshold={r.threshold:.4g} verdict={r.verdict}")


def cmd_occurrence(ctx):
    _time_common(ctx, "occurrence")


def cmd_return(ctx):
    _time_common(ctx, "return")


def cmd_matching(ctx):
    from . import laws, thermo
    from .patterns import TimeRecord
    cfg = ctx.cfg
    n = cfg.n[0]
    coll = laws.collision_probability(n, cfg.beta) if n <= 4 else math.exp(
        -thermo.collision_rate(cfg.beta) * (n + 1) ** 2)
    side = cfg.cap or laws.cap_side_for(8 / coll, max_side=2048)
    fn = partial(laws.matching_replica, n, cfg.beta, side, cfg.seed,
                 burn_in=cfg.param("burn_in", 100, int), normalizer=coll)
    recs = run_records(ctx, fn, cfg.replicas, from_line=TimeRecord.from_json)
    _law_outputs(ctx, recs, coll, f"matching-C{n}", n)
    target, how = thermo.matching_target(n, cfg.beta)
    rep = thermo.time_summary("matching", n, recs, target, {"target_method": how, "beta": cfg.beta})
    _entropy_csv(ctx, [rep], "exponent.csv")


def cmd_waiting(ctx):
    from . import thermo
    from .patterns import TimeRecord
    cfg = ctx.cfg
    q = thermo.parse_q_spec(cfg.param("q", "same"))
    target = thermo.waiting_target(q, cfg.beta)
    reports = []
    for n in cfg.n:
        side = cfg.cap or thermo.default_side(n, cfg.beta)
        fn = partial(thermo.waiting_replica, q, n, cfg.beta, side, cfg.seed,
                     burn_in=cfg.param("burn_in", 100, int))
        recs = run_records(ctx, fn, cfg.replicas, from_line=TimeRecord.from_json, name=f"records-n{n}.jsonl")
        reports.append(thermo.time_summary("waiting_time", n, recs, target,
                                           {"q": thermo.q_label(q), "beta": cfg.beta}))
    _entropy_csv(ctx, reports)


def _entropy_csv(ctx, reports, name="summary.csv"):
    keys = ("method", "n", "value", "ci_lo", "ci_hi", "target", "censored_fraction", "status")
    rows = [[r.row().get(k, "") for k in keys] for r in reports]
    ctx.write_csv(name, keys, rows)
    for r in reports:
        ctx.say(f"{r.method} n={r.n}: {r.value:.5g} (target {float(r.target):.5g}, "
                f"censored {r.extras.get('censored_fraction', 0.0):.2f})")


def cmd_entropy(ctx):
    from . import thermo
    from .patterns import TimeRecord
    cfg = ctx.cfg
    oracle = thermo.entropy_oracle(cfg.beta)
    eps = cfg.param("eps", 4.0, float)
    reports = []
    for n in cfg.n:
        side = cfg.cap or thermo.default_side(n, cfg.beta)
        fn = partial(thermo.return_replica, n, cfg.beta, side, cfg.seed, burn_in=cfg.param("burn_in", 100, int))

        def line(pair):
            rec, lrp = pair
            d = json.loads(rec.to_json())
            d["log_r_times_p"] = lrp
            return json.dumps(d, sort_keys=True)

        lines = run_records(ctx, fn, cfg.replicas, to_line=line, name=f"records-n{n}.jsonl")
        recs = [TimeRecord.from_json(x) for x in lines]
        lrp = [json.loads(x)["log_r_times_p"] for x in lines]
        reports.append(thermo.return_summary(n, recs, lrp, oracle.value, eps, cfg.beta))
    reports.append(oracle)
    _entropy_csv(ctx, reports)


def cmd_overlap(ctx):
    from . import laws, patterns
    cfg = ctx.cfg
    n = cfg.n[0]
    fn = partial(laws.overlap_replica, n, cfg.beta, cfg.seed, burn_in=cfg.param("burn_in", 100, int))
    lines = run_records(ctx, fn, cfg.replicas,
                        to_line=lambda v: json.dumps({"kind": "overlap", "value": int(v), "n": n}, sort_keys=True))
    vals = np.array([json.loads(x)["value"] for x in lines])
    rows = [(int(k), int(c)) for k, c in enumerate(np.bincount(vals))] if len(vals) else []
    ctx.write_csv("summary.csv", ("overlap", "count"), rows)
    if cfg.beta == 0:
        un = patterns.estimate_un(n, 0.0, method="exact", k_max=max(40, int(math.log2(max(n, 2))) + 12))
        ctx.write_jsonl("reports.jsonl", [json.dumps({"u_n": int(un.u[n - 1]), "n": n}, sort_keys=True)])
    ctx.say(f"mean overlap {vals.mean():.3f} over {len(vals)} pairs")


def cmd_poisson(ctx):
    from . import laws
    cfg = ctx.cfg
    A = resolve_pattern(cfg)
    t = cfg.param("t", 3.0, float)
    rate = laws.estimate_lambda(A, cfg.beta, replicas=cfg.param("lambda_replicas", 500, int), seed=cfg.seed)
    reports = laws.poisson_counts(A, t, cfg.beta, cfg.replicas, cfg.seed, rate=rate,
                                  require_good=cfg.param("require_good", "yes") == "yes")
    s = cfg.param("s")
    if s is not None:
        reports.append(laws.increment_independence(A, cfg.param("t1", 1.0, float), float(s), cfg.beta,
                                                   cfg.replicas, cfg.seed, rate=rate))
    ctx.write_jsonl("reports.jsonl", [r.to_json() for r in reports] +
                    [json.dumps(laws._jsonable(rate.to_dict()), sort_keys=True)])
    ctx.write_text("summary.csv", "".join(f"# {x}\n" for x in emit_config(cfg).splitlines()) + laws.reports_csv(reports))
    for r in reports:
        ctx.say(f"{r.law}: statistic={r.statistic:.4g} threshold={r.threshold:.4g} verdict={r.verdict}")


def cmd_gumbel(ctx):
    from . import laws
    cfg = ctx.cfg
    n = cfg.n[0]
    rep = laws.gumbel_bracket(n, cfg.beta, cfg.replicas, cfg.seed, un_samples=cfg.param("un_samples", 0, int))
    ctx.write_jsonl("reports.jsonl", [rep.to_json()])
    e = rep.extras
    ctx.write_csv("summary.csv", ("x", "empirical", "lower", "upper", "se"),
                  zip(e["x"].tolist(), e["empirical"], e["lower"], e["upper"], e["se"]))
    ctx.say(f"gumbel bracket: violation={rep.statistic:.4g} verdict={rep.verdict}")


def cmd_pressure(ctx):
    from . import thermo
    cfg = ctx.cfg
    q = _floats(cfg.param("q", "-2,-1,0,1,2"))
    curve = thermo.pressure_curve(cfg.beta, q, cfg.param("method", "transfer"), cfg.param("width", 14, int))
    ctx.write_csv("summary.csv", ("q_or_beta", "value", "method", "width_or_side"), curve.rows())
    ctx.say("\n".join(f"P({x:g} beta) = {v:.10f}" for x, v in zip(curve.q, curve.values)))


def cmd_ldp(ctx):
    from . import thermo
    cfg = ctx.cfg
    q = _floats(cfg.param("q", "-2,-1,0,1,2"))
    width = cfg.param("width", 14, int)
    curve = thermo.rate_function_curve(cfg.beta, q, lambda x: thermo.ferro_pressure(x, width))
    ctx.write_csv("summary.csv", ("q_or_beta", "value", "method", "width_or_side"), curve.rows())
    ctx.say("\n".join(f"W({x:g}) = {v:.10f}" for x, v in zip(curve.q, curve.values)))


def cmd_disagreement(ctx):
    from . import percolation
    cfg = ctx.cfg
    if cfg.param("mode", "decay") == "inequality":
        W = {tuple(int(c) for c in cfg.param("w", "1,1").split(","))}
        rep = percolation.verify_disa_inequality(_extent(cfg.param("extent", "4x4")), W, cfg.beta,
                                                 cfg.param("eta", "plus"), cfg.param("xi", "minus"),
                                                 cfg.replicas, cfg.seed)
        ctx.write_jsonl("reports.jsonl", [rep.to_json()])
        ctx.say(f"inequality verdict {rep.verdict}: lhs={rep.extras['lhs']:.6f} rhs_upper={rep.extras['rhs_upper']:.6f}")
        return
    dist = [int(x) for x in cfg.param("distances", "2,3,4,5,6").split(",")]
    fit = percolation.fit_decay(cfg.beta, cfg.param("side", 256, int), dist, cfg.replicas, cfg.seed,
                                w=cfg.param("w_side", 1, int))
    ctx.write_csv("summary.csv", ("beta", "distance", "p_hat", "ci_lo", "ci_hi"), fit.rows())
    ctx.write_jsonl("reports.jsonl", [fit.summary_json()])
    ctx.say(f"decay slope {fit.slope:.4g} +- {fit.slope_se:.2g}, R^2 {fit.r_squared:.3g}")


def cmd_suite(ctx):
    from . import acceptance
    cfg = ctx.cfg
    which = cfg.param("criteria")
    numbers = [int(x) for x in which.split(",")] if which else None
    results = acceptance.run_all(numbers, echo=None if ctx.quiet else print)
    ctx.write_jsonl("reports.jsonl", [r.to_json() for r in results])
    ctx.write_csv("summary.csv", ("criterion", "title", "passed", "summary"),
                  [(r.number, r.title, r.passed, r.summary) for r in results])
    ctx.say(acceptance.table(results))
    ctx.suite_ok = all(r.passed for r in results)


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}

# flags that map onto ExperimentConfig.params
PARAM_FLAGS = {
    "sample": ("extent", "boundary", "method", "burn_in", "sweeps"),
    "exact": ("extent", "boundary"),
    "occurrence": ("burn_in", "min_records"),
    "return": ("burn_in", "min_records"),
    "waiting": ("q", "burn_in"),
    "matching": ("burn_in", "min_records"),
    "overlap": ("burn_in",),
    "poisson": ("t", "s", "t1", "lambda_replicas", "require_good"),
    "gumbel": ("un_samples",),
    "entropy": ("eps", "burn_in"),
    "pressure": ("q", "method", "width"),
    "ldp": ("q", "width"),
    "disagreement": ("mode", "side", "distances", "extent", "w", "eta", "xi", "w_side"),
    "suite": ("criteria",),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gibbslab", description="Pattern-time experiments for the 2D Ising plus phase")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "suite":
            p.add_argument("target", choices=("acceptance",))
        p.add_argument("--config", help="key=value config file with [experiment] and [params] sections")
        p.add_argument("--beta", type=float)
        p.add_argument("--n", help="cube index, or a comma separated list")
        p.add_argument("--pattern", help=f"fixture ({', '.join(FIXTURES)}), file:PATH or sampled")
        p.add_argument("--replicas", type=int)
        p.add_argument("--cap", type=int, help="window side")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        for key in PARAM_FLAGS.get(name, ()):
            p.add_argument(f"--{key.replace('_', '-')}", dest=f"param_{key}")
    return ap


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = parse_config(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"config: cannot read {args.config}: {e}") from None
        if cfg.experiment != args.command:
            raise ConfigError(f"experiment.id: config is for {cfg.experiment!r}, not {args.command!r}")
        base = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    else:
        base = {"experiment": args.command}
    params = dict(base.get("params", {}))
    for key, val in vars(args).items():
        if key.startswith("param_") and val is not None:
            params[key[6:]] = val
    if args.beta is not None:
        base["beta"] = args.beta
    if args.n is not None:
        try:
            base["n"] = tuple(int(x) for x in args.n.split(","))
        except ValueError:
            raise ConfigError(f"n: expected integers, got {args.n!r}") from None
    for key in ("pattern", "replicas", "cap", "seed"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    base["params"] = params
    return ExperimentConfig(**base)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as e:
        print(f"gibbslab: invalid config: {e}", file=sys.stderr)
        return 2
    if args.print_config:
        print(emit_config(cfg), end="")
        return 0
    root = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    ctx = RunContext(cfg, root, args.threads, args.quiet)
    ctx.suite_ok = True
    try:
        COMMANDS[cfg.experiment](ctx)
    except ConfigError as e:
        print(f"gibbslab: invalid config: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"gibbslab: {type(e).__name__}: {e}", file=sys.stderr)
        ctx.manifest("failed")
        return 1
    except RuntimeError as e:
        print(f"gibbslab: {type(e).__name__}: {e}", file=sys.stderr)
        ctx.manifest("failed")
        return 1
    ctx.manifest("complete", cfg.replicas)
    ctx.say(f"results in {ctx.dir}")
    return 0 if ctx.suite_ok else 1


if __name__ == "__main__":
    sys.exit(main())
