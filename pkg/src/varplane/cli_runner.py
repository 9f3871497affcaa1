"""Command-line runner: validates a job, runs the experiments and writes the artifacts.

    varplane classify --preset E
    varplane scaling --preset I --deltas 2..6 --method witness
    varplane run --command all --seed 42 --out results/

Every check lands in report.json, checks.csv and summary.txt together with
an anchor string naming the estimate it tests. The exit status is 0 only
when every verdict is CONSISTENT.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .matrix_classify import (SKW1_RANK2, MatrixParseError, classify,
                              orthogonal_conjugate, parse_matrix, random_orthogonal,
                              skew_symmetric_part)

COMMANDS = ("classify", "scaling", "oscillatory", "sublevel", "hessian", "fold", "contrast", "all")
METHODS = ("witness", "adversarial", "both")
GIB = 1 << 30
SEED_LIMIT = 1 << 64

CONSISTENT = "CONSISTENT"
INCONSISTENT = "INCONSISTENT"
INCONCLUSIVE = "INCONCLUSIVE"
SKIPPED = "SKIPPED"


class ConfigError(ValueError):
    """Invalid job configuration; `errors` lists (field, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))


@dataclass
class JobConfig:
    command: str = "all"
    matrix: str = "E"
    deltas: Optional[tuple] = None       # dyadic exponents: delta = 2^-j for j in jmin..jmax
    jrange: Optional[tuple] = None       # lambda = 2^j for the oscillatory sweep
    sublevel_jrange: tuple = (4, 12)
    grid: Optional[int] = None           # cap on points per axis of a uniform grid
    samples: int = 10 ** 6
    seed: Optional[int] = None
    out: str = "varplane-out"
    tolerance: Optional[float] = None
    method: str = "witness"
    t_count: int = 16
    theta_count: int = 16
    hessian_points: int = 100
    memory_gib: float = 8.0
    workers: int = 1

    def deltas_list(self) -> list:
        return [2.0 ** -j for j in range(self.deltas[0], self.deltas[1] + 1)]

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("deltas", "jrange", "sublevel_jrange"):
            d[k] = list(d[k]) if d[k] is not None else None
        return d


def parse_range(text) -> tuple:
    """'2..6' -> (2, 6); a lone integer is a one-point range."""
    if isinstance(text, (list, tuple)):
        if len(text) != 2:
            raise ValueError(f"range needs two ends, got {text!r}")
        return int(text[0]), int(text[1])
    s = str(text).strip()
    if ".." in s:
        a, b = s.split("..", 1)
        return int(a), int(b)
    return int(s), int(s)


def uniform_points(delta: float, half: float = 1.0) -> int:
    """Points per axis of a uniform grid on [-half, half] with h <= delta/4."""
    return math.ceil(2 * half / (delta / 4)) + 1


def default_grid_cap(memory_gib: float) -> int:
    # one float64 field plus one output field of the same size
    return int((memory_gib * GIB / 16) ** (1 / 3))


def validate(config: JobConfig) -> JobConfig:
    """Fill defaults and check every field; raise ConfigError listing all failures."""
    errs = []
    cfg = replace(config)
    if cfg.command not in COMMANDS:
        errs.append(("command", f"unknown command {cfg.command!r}; choose from {', '.join(COMMANDS)}"))
    if cfg.method not in METHODS:
        errs.append(("method", f"unknown method {cfg.method!r}; choose from {', '.join(METHODS)}"))
    try:
        A = parse_matrix(cfg.matrix)
        if A.is_zero():
            errs.append(("matrix", "the zero matrix has no variable planes to test"))
    except MatrixParseError as exc:
        A = None
        errs.append(("matrix", str(exc)))
    if cfg.deltas is None:
        cfg.deltas = (2, 6)
    if cfg.jrange is None:
        cfg.jrange = (3, 7)
    if cfg.seed is None:
        cfg.seed = 0
    for name in ("deltas", "jrange", "sublevel_jrange"):
        lo, hi = getattr(cfg, name)
        if hi < lo:
            errs.append((name, f"empty range {lo}..{hi}"))
        elif lo < 1:
            errs.append((name, f"exponents must be >= 1, got {lo}"))
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < SEED_LIMIT):
        errs.append(("seed", f"seed must be an integer in [0, 2^64), got {cfg.seed!r}"))
    if cfg.samples < 10 ** 4:
        errs.append(("samples", f"need at least 10^4 Monte-Carlo samples, got {cfg.samples}"))
    if cfg.tolerance is not None and not cfg.tolerance > 0:
        errs.append(("tolerance", "tolerance must be positive"))
    if cfg.memory_gib <= 0:
        errs.append(("memory_gib", "memory budget must be positive"))
    if cfg.workers < 1:
        errs.append(("workers", "need at least one worker"))
    for name in ("t_count", "theta_count", "hessian_points"):
        if getattr(cfg, name) < 1:
            errs.append((name, f"{name} must be >= 1"))
    cap = default_grid_cap(cfg.memory_gib) if cfg.memory_gib > 0 else 0
    if cfg.grid is None:
        cfg.grid = cap
    elif cfg.grid < 2:
        errs.append(("grid", "grid cap must be at least 2 points per axis"))
    elif cfg.grid ** 3 * 16 > cfg.memory_gib * GIB:
        errs.append(("grid", f"a {cfg.grid}^3 grid needs {cfg.grid ** 3 * 16 / GIB:.2f} GiB, "
                             f"over the {cfg.memory_gib} GiB budget"))
    if not any(k == "deltas" for k, _ in errs) and cfg.grid >= 2:
        d_min = 2.0 ** -cfg.deltas[1]
        need = uniform_points(d_min)
        if need > cfg.grid:
            errs.append(("grid", f"delta=2^-{cfg.deltas[1]} needs spacing h <= delta/4 = {d_min / 4:.3g}, "
                                 f"i.e. at least {need} points per axis ({need}^3 grid); "
                                 f"the cap is {cfg.grid}"))
    if not any(k == "jrange" for k, _ in errs) and cfg.memory_gib > 0:
        from .oscillatory_lab import SweepConfig
        mem = SweepConfig().memory_bytes(2.0 ** cfg.jrange[1])
        if mem > cfg.memory_gib * GIB:
            errs.append(("jrange", f"lambda=2^{cfg.jrange[1]} needs {mem / GIB:.2f} GiB, "
                                   f"over the {cfg.memory_gib} GiB budget"))
    if A is not None and cfg.command == "fold" and classify(A).canonical_class != SKW1_RANK2:
        errs.append(("matrix", "fold needs a matrix of class SKW1_RANK2, such as Ic:1"))
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    known = set(JobConfig.__dataclass_fields__)
    bad = sorted(set(data) - known - {"preset"})
    if bad:
        raise ConfigError([(k, "unknown config key") for k in bad])
    if "preset" in data:
        data["matrix"] = data.pop("preset")
    for k in ("deltas", "jrange", "sublevel_jrange"):
        if k in data:
            data[k] = parse_range(data[k])
    return data


# ------------------------------------------------------------------ seeding

def experiment_seed(master: int, experiment: str, batch: int = 0) -> int:
    """64-bit seed keyed by (master seed, experiment id, batch id)."""
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(experiment.encode()), batch))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ------------------------------------------------------------------- checks

@dataclass
class Check:
    name: str
    anchor: str
    measured: object
    predicted: object
    verdict: str
    detail: str = ""


def _f(x):
    if x is None:
        return None
    if isinstance(x, (bool, str)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else None


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _from_report(name, rep) -> Check:
    return Check(name, rep.anchor, _f(rep.slope), _f(rep.predicted), rep.verdict,
                 f"stderr={_fmt(_f(rep.stderr))} tol={rep.tolerance}")


def run_classify(cfg: JobConfig):
    A = parse_matrix(cfg.matrix)
    prof = classify(A)
    rng = np.random.default_rng(experiment_seed(cfg.seed, "classify"))
    ok = True
    for _ in range(32):
        p = classify(orthogonal_conjugate(A, random_orthogonal(rng)))
        ok &= (p.canonical_class, p.annulus_exponent, p.nikodym_exponent) == (
            prof.canonical_class, prof.annulus_exponent, prof.nikodym_exponent)
    check = Check("classify", "rank-classification", prof.canonical_class, prof.canonical_class,
                  CONSISTENT if ok else INCONSISTENT,
                  f"rank_skw={prof.rank_skw} rank_sym={prof.rank_sym} "
                  f"annulus={prof.annulus_exponent} nikodym={prof.nikodym_exponent}")
    return [check], {"classify": prof.as_dict()}, {}


def run_hessian(cfg: JobConfig):
    from .oscillatory_lab import mixed_hessian, phase_bilinear
    A = parse_matrix(cfg.matrix)
    rng = np.random.default_rng(experiment_seed(cfg.seed, "hessian"))
    h = 1e-4
    worst = 0.0
    rows = []
    for _ in range(cfg.hessian_points):
        r = rng.uniform(0.5, 2.0)
        th = rng.uniform(0, 2 * math.pi)
        b = np.array([r * math.cos(th), r * math.sin(th)])
        t = float(rng.uniform(-2, 2))
        x = rng.uniform(-0.5, 0.5, 2)
        xi = b - x
        z0 = np.array([x[0], x[1], t])
        fd = np.empty((3, 2))
        # central differences of the phase in (x1, x2, t) and (xi1, xi2)
        for i in range(3):
            for j in range(2):
                acc = 0.0
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    z = z0.copy()
                    z[i] += si * h
                    e = xi.copy()
                    e[j] += sj * h
                    acc += si * sj * phase_bilinear(A, z[:2], z[2], e)
                fd[i, j] = acc / (4 * h * h)
        H = mixed_hessian(A, b, t)
        dets = np.array([H.det_x1x2, H.det_x1t, H.det_x2t])
        fd_dets = np.array([np.linalg.det(fd[[0, 1]]), np.linalg.det(fd[[0, 2]]),
                            np.linalg.det(fd[[1, 2]])])
        scale = max(1.0, float(np.max(np.abs(fd))) ** 2)
        err = float(np.max(np.abs(dets - fd_dets))) / scale
        worst = max(worst, err)
        rows.append([repr(float(b[0])), repr(float(b[1])), repr(t), repr(err)])
    check = Check("hessian", "mixed-hessian-minors", worst, 1e-6,
                  CONSISTENT if worst <= 1e-6 else INCONSISTENT,
                  f"max relative error over {cfg.hessian_points} points")
    return [check], {}, {"hessian.csv": (["b1", "b2", "t", "rel_error"], rows)}


def run_fold(cfg: JobConfig):
    from .oscillatory_lab import fold_check
    A = parse_matrix(cfg.matrix)
    c = A.a12
    b, t = np.array([0.0, 1.0]), -1.0
    rep = fold_check(A, b, t)
    v_pred = np.array([1.0, 0.0])
    u_pred = np.array([-1.0, c]) / math.hypot(1.0, c)
    pdv = c * t * b[1] ** 3
    pdu = -2 * c * t * b[1] ** 3
    ok = rep.two_sided
    if ok:
        ok = (np.max(np.abs(rep.v - v_pred)) <= 1e-3 and np.max(np.abs(rep.u - u_pred)) <= 1e-3
              and abs(rep.dv - pdv) <= 0.05 * abs(pdv) and abs(rep.du - pdu) <= 0.05 * abs(pdu))
    check = Check("fold", "two-sided-fold", rep.status, "two-sided fold",
                  CONSISTENT if ok else INCONSISTENT,
                  f"dv={_fmt(_f(rep.dv))} (pred {pdv:.6g}) du={_fmt(_f(rep.du))} (pred {pdu:.6g})")
    return [check], {"fold": {"status": rep.status, "singular_values": list(rep.singular_values),
                              "v": None if rep.v is None else rep.v.tolist(),
                              "u": None if rep.u is None else rep.u.tolist(),
                              "dv": _f(rep.dv), "du": _f(rep.du)}}, {}


def run_sublevel(cfg: JobConfig):
    from .oscillatory_lab import SublevelSpec, sublevel_grid_oracle, sublevel_measure
    from .scaling_estimator import ScalingReport, fit_exponent, verdict
    A = parse_matrix(cfg.matrix)
    M = skew_symmetric_part(A)
    rank = int(np.linalg.matrix_rank(M.as_array()))
    predicted = -rank / 2
    tol = cfg.tolerance if cfg.tolerance is not None else (0.02 if rank == 0 else 0.05)
    spec = SublevelSpec(M)
    lams = [2.0 ** j for j in range(cfg.sublevel_jrange[0], cfg.sublevel_jrange[1] + 1)]
    vals, rows, agree = [], [], True
    for i, lam in enumerate(lams):
        est = sublevel_measure(spec, lam, cfg.samples, experiment_seed(cfg.seed, "sublevel", i))
        oracle = sublevel_grid_oracle(spec, lam)
        # the oracle's own error is tiny but nonzero; allow it when the MC error vanishes
        close = abs(est.measure - oracle) <= 3 * est.stderr + 1e-6 * max(oracle, 1.0)
        agree &= close
        vals.append(est.measure)
        rows.append([repr(lam), repr(est.measure), repr(est.stderr), repr(oracle),
                     "sublevel-measure"])
    slope, stderr = fit_exponent([1 / x for x in lams], vals)
    rep = ScalingReport(cfg.matrix, "sublevel", lams, vals, slope, stderr, predicted,
                        verdict(slope, stderr, predicted, tol), "sublevel-measure", tol)
    checks = [_from_report("sublevel-slope", rep),
              Check("sublevel-oracle", "sublevel-measure", agree, True,
                    CONSISTENT if agree else INCONSISTENT,
                    "Monte-Carlo within 3 standard errors of the grid oracle")]
    return checks, {"sublevel": rep.as_dict()}, {
        "sublevel.csv": (["lambda", "measure", "stderr", "oracle", "anchor"], rows)}


def run_oscillatory(cfg: JobConfig):
    from .oscillatory_lab import SWEEP_COLUMNS, lambda_sweep
    A = parse_matrix(cfg.matrix)
    tol = cfg.tolerance if cfg.tolerance is not None else 0.1
    rep = lambda_sweep(A, range(cfg.jrange[0], cfg.jrange[1] + 1), cfg.matrix,
                       seed=experiment_seed(cfg.seed, "oscillatory") % (1 << 32), tolerance=tol)
    rows = [[r.preset, r.j, repr(r.lam), repr(r.opnorm), r.iters, repr(r.residual),
             rep.anchor] for r in rep.rows]
    return [_from_report("oscillatory-slope", rep)], {"oscillatory": rep.as_dict()}, {
        "oscillatory_sweep.csv": (list(SWEEP_COLUMNS) + ["anchor"], rows)}


def run_scaling(cfg: JobConfig):
    from .scaling_estimator import WITNESS_CLASSES, scaling_experiment
    A = parse_matrix(cfg.matrix)
    cls = classify(A).canonical_class
    if cls not in WITNESS_CLASSES:
        return [Check("scaling", "annulus-lower-bound", None, None, SKIPPED,
                      f"class {cls} has no witness construction")], {}, {}
    tol = cfg.tolerance if cfg.tolerance is not None else 0.08
    try:
        rep = scaling_experiment(A, cfg.deltas_list(), cfg.method, cfg.matrix, tol,
                                 experiment_seed(cfg.seed, "scaling") % (1 << 32))
    except ValueError as exc:
        return [Check("scaling", "annulus-lower-bound", None, None, SKIPPED, str(exc))], {}, {}
    rows = [[cfg.matrix, cfg.method, repr(float(s)), repr(float(v)), rep.anchor]
            for s, v in zip(rep.scales, rep.values)]
    return [_from_report("scaling-slope", rep)], {"scaling": rep.as_dict()}, {
        f"scaling_{cfg.method}.csv": (["preset", "method", "delta", "value", "anchor"], rows)}


def run_contrast(cfg: JobConfig):
    from .scaling_estimator import tube_circle_contrast
    lams = [2.0 ** j for j in range(cfg.sublevel_jrange[0], cfg.sublevel_jrange[1] + 1)]
    samples = min(cfg.samples, 10 ** 5)
    rep = tube_circle_contrast(lams, samples, experiment_seed(cfg.seed, "contrast") % (1 << 32))
    checks, rows = [], []
    for (m, form), r in sorted(rep.table.items()):
        checks.append(_from_report(f"contrast-{m}-{form}", r))
        for lam, v in zip(r.scales, r.values):
            rows.append([m, form, repr(float(lam)), repr(float(v)), r.anchor])
    return checks, {"contrast": rep.as_dict()}, {
        "contrast.csv": (["matrix", "form", "lambda", "measure", "anchor"], rows)}


RUNNERS = {
    "classify": run_classify,
    "hessian": run_hessian,
    "fold": run_fold,
    "sublevel": run_sublevel,
    "oscillatory": run_oscillatory,
    "scaling": run_scaling,
    "contrast": run_contrast,
}


def plan(cfg: JobConfig) -> list:
    if cfg.command != "all":
        return [cfg.command]
    names = ["classify", "hessian"]
    if classify(parse_matrix(cfg.matrix)).canonical_class == SKW1_RANK2:
        names.append("fold")
    return names + ["sublevel", "oscillatory", "scaling", "contrast"]


def _task(args):
    name, cfg = args
    return RUNNERS[name](cfg)


# ------------------------------------------------------------------- output

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def aggregate_status(checks) -> int:
    verdicts = [c.verdict for c in checks if c.verdict != SKIPPED]
    return 0 if verdicts and all(v == CONSISTENT for v in verdicts) else 1


def write_artifacts(cfg: JobConfig, checks, reports, tables) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    status = aggregate_status(checks)
    doc = {"config": cfg.as_dict(), "checks": [asdict(c) for c in checks],
           "reports": reports, "exit_status": status}
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for fname, (header, rows) in sorted(tables.items()):
        _write_csv(os.path.join(cfg.out, fname), header, rows)
    _write_csv(os.path.join(cfg.out, "checks.csv"),
               ["check", "anchor", "measured", "predicted", "verdict", "detail"],
               [[c.name, c.anchor, _fmt(c.measured), _fmt(c.predicted), c.verdict, c.detail]
                for c in checks])
    width = max([len(c.name) for c in checks] + [5])
    aw = max([len(c.anchor) for c in checks] + [6])
    lines = [f"varplane {cfg.command} matrix={cfg.matrix} seed={cfg.seed}", ""]
    lines.append(f"{'check':<{width}}  {'anchor':<{aw}}  {'measured':>14}  {'predicted':>14}  verdict")
    for c in checks:
        lines.append(f"{c.name:<{width}}  {c.anchor:<{aw}}  {_fmt(c.measured):>14}  "
                     f"{_fmt(c.predicted):>14}  {c.verdict}")
        if c.detail:
            lines.append(f"{'':<{width}}  {c.detail}")
    lines += ["", f"exit status {status}"]
    with open(os.path.join(cfg.out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return status


def run(cfg: JobConfig) -> int:
    cfg = validate(cfg)
    names = plan(cfg)
    jobs = [(n, cfg) for n in names]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_task, jobs))
    else:
        results = [_task(j) for j in jobs]
    checks, reports, tables = [], {}, {}
    # results arrive in plan order, so the single writer below is deterministic
    for c, r, t in results:
        checks += c
        reports.update(r)
        tables.update(t)
    return write_artifacts(cfg, checks, reports, tables)


# ---------------------------------------------------------------------- CLI

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varplane", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", nargs="?", choices=COMMANDS + ("run",),
                   help="experiment to run; 'run' takes it from --command or the config file")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--preset", "--matrix", dest="matrix",
                   help="preset (E, I, Ic:c, NIL:c, SYM:c) or 'a11,a12,a21,a22'")
    p.add_argument("--deltas", help="delta = 2^-j for j in jmin..jmax")
    p.add_argument("--jrange", help="lambda = 2^j for j in jmin..jmax")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="cap on uniform grid points per axis")
    p.add_argument("--out")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--workers", type=int)
    p.add_argument("--config", help="TOML file with JobConfig keys; flags override it")
    return p


def config_from_args(ns) -> JobConfig:
    data = load_config_file(ns.config) if ns.config else {}
    cmd = ns.subcommand
    if cmd in (None, "run"):
        cmd = ns.command or data.get("command", "all")
    data["command"] = cmd
    for k in ("matrix", "samples", "seed", "grid", "out", "tolerance", "method", "workers"):
        v = getattr(ns, k)
        if v is not None:
            data[k] = v
    for k in ("deltas", "jrange"):
        v = getattr(ns, k)
        if v is not None:
            data[k] = parse_range(v)
    return JobConfig(**data)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = validate(config_from_args(ns))
    except ConfigError as exc:
        for k, m in exc.errors:
            print(f"varplane: invalid {k}: {m}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"varplane: {exc}", file=sys.stderr)
        return 2
    status = run(cfg)
    with open(os.path.join(cfg.out, "summary.txt")) as fh:
        sys.stdout.write(fh.read())
    return status


if __name__ == "__main__":
    sys.exit(main())
