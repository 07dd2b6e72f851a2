"""Batch command line: one experiment per process, reports written to ``--out``.

Exit status is 0 on success, 1 on a usage error and 2 when an invariant
checked by the experiment is violated (the failing invariant is named in
``report.jsonl`` and on stderr).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .divergence import gain_to_hull
from .evalue import (
    EStatistic,
    compare_strength,
    make_estat,
    simulate_eprocess,
    type1_check,
    verify_estat,
)
from .measures import (
    DEFAULT_POINTS,
    DEFAULT_SUPPORT,
    DEFAULT_WINDOW,
    FamilySpec,
    GridMeasure,
    MixtureWeights,
    bernoulli,
    counting_grid,
    fmt,
    make_family,
    make_measure,
    mix,
    quadrature_grid,
)
from .projection import PreconditionError, greedy_project

COMMANDS = ("project", "gain", "estat", "strength", "sequential", "subprob", "rate", "epower")

DEFAULT_FAMILY = "gauss-pair"
DEFAULT_ALT = "cauchy"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class Outcome:
    files: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    def check(self, name: str, ok: bool, detail: str = ""):
        self.records.append({"invariant": name, "passed": bool(ok), "detail": detail})
        if not ok:
            self.failed.append(name)


# ---------------------------------------------------------------------------
# parsing helpers


def parse_grid(text: str):
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"--grid expects LO:HI:NPTS, got {text!r}") from None


def parse_params(text: str):
    """``a..b/n`` for an evenly spaced range, otherwise members separated by ``;``
    with tuple components separated by ``,``."""
    text = text.strip()
    if not text:
        return ()
    try:
        if ".." in text:
            rng, _, n = text.partition("/")
            a, b = rng.split("..")
            return tuple(float(x) for x in np.linspace(float(a), float(b), int(n or 21)))
        out = []
        for part in text.split(";"):
            xs = tuple(float(x) for x in part.split(","))
            out.append(xs[0] if len(xs) == 1 else xs)
        return tuple(out)
    except ValueError:
        raise UsageError(f"cannot parse parameters {text!r}") from None


_DEFAULT_PARAMS = {
    "gaussian": ((0.0, 1.0),),
    "normal": ((0.0, 1.0),),
    "cauchy": ((0.0, 1.0),),
    "bernoulli": tuple(float(x) for x in np.linspace(0.25, 0.75, 21)),
    "geometric": (0.5,),
}


def split_name(text: str):
    name, _, params = text.partition(":")
    name = name.strip().lower()
    p = parse_params(params)
    if not p and name in _DEFAULT_PARAMS:
        p = _DEFAULT_PARAMS[name]
    return name, p


def build_family(cfg):
    name, params = split_name(cfg["family"])
    lo, hi, n = cfg["grid"]
    spec = FamilySpec(name, params, (lo, hi), n, cfg["support"])
    try:
        return make_family(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_alt(cfg, grid):
    name, params = split_name(cfg["alt"])
    if len(params) != 1:
        raise UsageError(f"--alt needs exactly one parameter set, got {cfg['alt']!r}")
    try:
        return make_measure(name, params[0], grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# configuration


def _defaults():
    return {
        "family": None,
        "alt": DEFAULT_ALT,
        "kmax": 200,
        "seed": 0,
        "out": "out",
        "grid": (DEFAULT_WINDOW[0], DEFAULT_WINDOW[1], DEFAULT_POINTS),
        "support": DEFAULT_SUPPORT,
        "experiment": None,
        "tol": 1e-7,
        "n": 10000,
        "runs": 100,
        "alpha": 0.05,
    }


_INT_KEYS = {"kmax", "seed", "support", "n", "runs"}
_FLOAT_KEYS = {"tol", "alpha"}


def _coerce(key, value):
    if value is None:
        return None
    if key == "grid" and isinstance(value, str):
        return parse_grid(value)
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def read_config(path: str) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config {path!r}")
    section = cp["run"] if cp.has_section("run") else cp[cp.default_section]
    out = {}
    for k, v in section.items():
        k = k.replace("-", "_")
        if k not in _defaults() and k != "command":
            raise UsageError(f"unknown config key {k!r}")
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uripr", description="Universal reverse information projections and e-statistics.")
    p.add_argument("command", nargs="?", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--family", help="family NAME[:params], e.g. gauss-pair or bernoulli:0.25..0.75/21")
    p.add_argument("--alt", help="alternative P as NAME[:params] (default cauchy)")
    p.add_argument("--kmax", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="quadrature window LO:HI:NPTS")
    p.add_argument("--support", type=int, help="counting-grid size")
    p.add_argument("--experiment", help="experiment variant for subprob, rate and epower")
    p.add_argument("--tol", type=float)
    p.add_argument("--n", type=int, help="observations per run (sequential)")
    p.add_argument("--runs", type=int)
    p.add_argument("--alpha", type=float)
    return p


def _attach_values(argv):
    """Glue ``--grid -20:20:401`` into one token so a negative LO is not read as a flag."""
    argv = list(argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def resolve(argv) -> dict:
    args = build_parser().parse_args(_attach_values(argv))
    cfg = _defaults()
    from_file = read_config(args.config) if args.config else {}
    command = args.command or from_file.pop("command", None)
    from_file.pop("command", None)
    if command is None:
        raise UsageError("missing command; expected one of: " + ", ".join(COMMANDS))
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}; expected one of: " + ", ".join(COMMANDS))
    for k, v in from_file.items():
        cfg[k] = _coerce(k, v)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _coerce(k, v)
    cfg["command"] = command
    return cfg


def config_hash(cfg: dict) -> str:
    canon = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())
             if k != "out"}
    return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def _projection(cfg, out: Outcome):
    fam = build_family(cfg)
    P = build_alt(cfg, fam.grid)
    try:
        trace = greedy_project(P, fam, k_max=cfg["kmax"])
    except PreconditionError as exc:
        raise UsageError(f"precondition failed: {exc}") from None
    return fam, P, trace


def cmd_project(cfg, out: Outcome):
    cfg["family"] = cfg["family"] or DEFAULT_FAMILY
    fam, P, trace = _projection(cfg, out)
    base = trace.to_csv().splitlines()
    M = fam.size
    if M <= 10:
        head = base[0] + "," + ",".join(f"weight_{j}" for j in range(M))
        lines = [head]
        for line, r in zip(base[1:], trace.iterations):
            lines.append(line + "," + ",".join(fmt(w) for w in r.weights.dense(M)))
        out.files["trace.csv"] = "\n".join(lines) + "\n"
    else:
        out.files["trace.csv"] = "\n".join(base) + "\n"
    final = trace.final.dense(M)
    out.files["weights.csv"] = "member,label,weight\n" + "".join(
        f"{j},\"{fam.labels[j]}\",{fmt(final[j])}\n" for j in range(M))
    objs = np.array([r.objective for r in trace.iterations])
    rises = np.diff(objs) > 1e-9 * np.maximum(1.0, np.abs(objs[:-1]))
    out.check("objective_nonincreasing", not rises.any(),
              f"{int(rises.sum())} increases along {len(objs)} iterations")
    last = trace.iterations[-1].gain_estimate
    out.records.append({"final_gain": json.loads(last.to_json()), "caveats": list(trace.caveats)})


def cmd_gain(cfg, out: Outcome):
    if not cfg["family"]:
        raise UsageError("gain needs a family (--family NAME or family = NAME in the config)")
    fam = build_family(cfg)
    P = build_alt(cfg, fam.grid)
    Q = mix(fam, MixtureWeights.uniform(fam.size))
    rep = gain_to_hull(P, Q, fam, tol=cfg["tol"])
    out.files["gain.jsonl"] = rep.to_json() + "\n"
    out.check("gain_not_undefined", rep.status != "undefined")


def _estat_from_projection(cfg, out):
    cfg["family"] = cfg["family"] or DEFAULT_FAMILY
    fam, P, trace = _projection(cfg, out)
    E = make_estat(P, mix(fam, trace.final))
    return fam, P, E


def cmd_estat(cfg, out: Outcome):
    fam, P, E = _estat_from_projection(cfg, out)
    v = verify_estat(E, fam, tol=0.05)
    E = E.with_verification(v)
    out.files["estat.csv"] = E.to_csv()
    out.files["verification.jsonl"] = v.to_json() + "\n"
    out.check("estat_slack_within_0.05", v.passed, f"sup slack {fmt(v.sup_slack)}")


def cmd_strength(cfg, out: Outcome):
    fam, P, E = _estat_from_projection(cfg, out)
    lines = []
    for c in (0.5, 0.9):
        v = compare_strength(E, E.scaled(c), P)
        lines.append(json.dumps({"first": "E", "second": f"{c:g}*E", "value": fmt(v.value),
                                 "direction": v.direction, "status": "exact"}, sort_keys=True))
        ok = isinstance(v.value, float) and abs(v.value + math.log(c)) <= 1e-12
        out.check(f"scaled_deficit_{c:g}", ok, f"value {fmt(v.value)}")
    for j in range(fam.size):
        probe = make_estat(P, fam.member(j))
        v = compare_strength(E, probe, P)
        lines.append(json.dumps({"first": "E", "second": f"member_{j}", "value": fmt(v.value),
                                 "direction": v.direction, "status": "exact"}, sort_keys=True))
    out.files["strength.jsonl"] = "\n".join(lines) + "\n"


def cmd_sequential(cfg, out: Outcome):
    P, Q = bernoulli(0.5), bernoulli(0.4)
    E1 = make_estat(P, Q)
    E2 = EStatistic.constant(P.grid, 1.0)
    rep = simulate_eprocess(P, E1, E2, cfg["n"], cfg["runs"], cfg["seed"])
    out.files["growth.csv"] = rep.to_csv()
    out.check("growth_within_3_se", abs(rep.z_score) <= 3, f"z = {fmt(rep.z_score)}")
    t1 = type1_check(Q, E1, 20, 2000, cfg["alpha"], cfg["seed"])
    out.files["type1.jsonl"] = json.dumps({"rate": fmt(t1.rate), "bound": fmt(t1.bound),
                                           "rejections": t1.rejections, "runs": t1.runs},
                                          sort_keys=True) + "\n"
    out.check("type1_rate_within_bound", t1.passed, f"rate {fmt(t1.rate)} bound {fmt(t1.bound)}")


def cmd_subprob(cfg, out: Outcome):
    from . import subprob

    exp = cfg["experiment"] or "harmonic"
    if exp == "harmonic":
        lp = subprob.harmonic_projection(1000)
        ex = subprob.section3a_example(1000, ns=[4, 10, 100])
        out.files["harmonic.csv"] = ex.to_csv()
        out.files["projection.jsonl"] = json.dumps(
            {"q1": fmt(lp.q[0]), "divergence": fmt(lp.divergence), "status": lp.status},
            sort_keys=True) + "\n"
        out.check("divergence_near_ln2", abs(lp.divergence - math.log(2)) <= 2e-3,
                  f"D = {fmt(lp.divergence)}")
    elif exp == "budget":
        N = cfg["support"]
        grid = counting_grid(N, start=1)
        i = grid.points
        z = float(np.sum(i ** -3.0))
        P = GridMeasure.from_density(grid, i ** -3.0 / z)
        app = subprob.build_appendixB(lambda x: 1.0 / x, P, 0.5,
                                      tail_bound=subprob.power_law_tail(N, 2) / z)
        v = verify_estat(app.estat, app.constraints.generators)
        out.files["budget.jsonl"] = json.dumps(
            {"nu": fmt(app.nu), "c": fmt(app.c), "c_upper": fmt(app.c_upper), "mass": fmt(app.mass),
             "truncated": app.truncated, "verification": json.loads(v.to_json())},
            sort_keys=True) + "\n"
        out.check("mass_below_one", app.mass < 1, f"mass {fmt(app.mass)}")
        out.check("estat_verified", v.passed, f"sup slack {fmt(v.sup_slack)}")
    elif exp == "dominated":
        ex = subprob.section3a_example(10 ** 9, ns=[10 ** j for j in range(1, 10)])
        rows = []
        for label, f1 in (("f1=1/i", lambda x: 1.0 / x), ("f1=1", 1.0)):
            lam1 = 0.5 if label == "f1=1/i" else 1.0
            r = subprob.dominated_limit_check(ex.sequence, ex.limit, 1.0, f1, 1.0, lam1)
            rows.append(json.dumps({"case": label, "passed": r.passed,
                                    "precondition_ok": r.precondition_ok,
                                    "failures": r.failures, "limit_mass": fmt(r.limit_mass),
                                    "limit_value": fmt(r.limit_value)}, sort_keys=True))
            if label == "f1=1/i":
                out.check("dominated_limit_preserved", r.passed)
            else:
                out.check("undominated_rejected", not r.precondition_ok)
        out.files["dominated.jsonl"] = "\n".join(rows) + "\n"
    else:
        raise UsageError(f"unknown subprob experiment {exp!r} (harmonic, budget, dominated)")


def cmd_rate(cfg, out: Outcome):
    from . import ratelab

    exp = cfg["experiment"] or "bernoulli"
    if exp == "bernoulli":
        r = ratelab.bernoulli_rate([0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001])
        out.files["rate.csv"] = r.to_csv()
        out.files["summary.txt"] = r.summary() + "\n"
        out.check("slope_in_[0.45,0.55]", 0.45 <= r.fitted_slope <= 0.55, r.summary())
        out.check("bound_never_violated", r.violations == 0, f"{r.violations} violations")
    elif exp == "geometric":
        r = ratelab.geometric_blowup([0.40, 0.45, 0.49, 0.499], support=cfg["support"])
        out.files["rate.csv"] = r.to_csv()
        d = r.deltas
        out.check("deltas_decreasing", bool(np.all(np.diff(d) < 0)))
        out.check("every_sup_diverged", r.all_diverged)
    else:
        raise UsageError(f"unknown rate experiment {exp!r} (bernoulli, geometric)")


def cmd_epower(cfg, out: Outcome):
    from . import ratelab

    exp = cfg["experiment"] or "bernoulli"
    if exp == "bernoulli":
        fam = make_family(FamilySpec("bernoulli", tuple(np.linspace(0.45, 0.55, 21))))
        vertices = [bernoulli(0.3), bernoulli(0.7)]
    elif exp == "gaussian":
        lo, hi, n = cfg["grid"]
        grid = quadrature_grid(lo, hi, n)
        fam = make_family(FamilySpec("gaussian", ((0.0, 1.0),)), grid)
        vertices = [make_measure("gaussian", (-2.0, 1.0), grid), make_measure("gaussian", (2.0, 1.0), grid)]
    else:
        raise UsageError(f"unknown epower experiment {exp!r} (bernoulli, gaussian)")
    r = ratelab.epower_inequality(vertices, fam, cfg["kmax"])
    out.files["epower.csv"] = r.to_csv()
    out.check("epower_inequality", r.passed)


HANDLERS = {
    "project": cmd_project,
    "gain": cmd_gain,
    "estat": cmd_estat,
    "strength": cmd_strength,
    "sequential": cmd_sequential,
    "subprob": cmd_subprob,
    "rate": cmd_rate,
    "epower": cmd_epower,
}


def write_reports(cfg: dict, out: Outcome) -> Path:
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(out.files.items()):
        (d / name).write_text(text, encoding="utf-8", newline="\n")
    report = "".join(json.dumps(r, sort_keys=True) + "\n" for r in out.records)
    (d / "report.jsonl").write_text(report, encoding="utf-8", newline="\n")
    manifest = [
        f"command = {cfg['command']}",
        f"config_hash = {config_hash(cfg)}",
        f"seed = {cfg['seed']}",
        f"version = {__version__}",
        f"files = {', '.join(sorted(out.files) + ['report.jsonl'])}",
        f"status = {'failed: ' + ', '.join(out.failed) if out.failed else 'ok'}",
    ]
    (d / "MANIFEST").write_text("\n".join(manifest) + "\n", encoding="utf-8", newline="\n")
    return d


def main(argv=None) -> int:
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
        out = Outcome()
        HANDLERS[cfg["command"]](cfg, out)
    except UsageError as exc:
        print(f"uripr: error: {exc}", file=sys.stderr)
        return 1
    write_reports(cfg, out)
    if out.failed:
        print("uripr: invariant violated: " + ", ".join(out.failed), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
