"""Lower bounds for the maximal operators, exponent fits and verdicts.

A power law value ~ scale^(-c) is fitted by least squares in log2
coordinates. Lower bounds come from the class witnesses evaluated on
their sets B, and from ascent over nonnegative grid fields.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .field_grid import AnnulusSpec, Grid3, sample_annulus
from .matrix_classify import (SKW0, SKW1_RANK1, SKW1_RANK2, Matrix2, classify,
                              symmetric_part, skew_symmetric_part)
from .maximal_ops import DilationSet, witness_matrix, witness_probe

CONSISTENT = "CONSISTENT"
INCONSISTENT = "INCONSISTENT"
INCONCLUSIVE = "INCONCLUSIVE"
WITNESS_CLASSES = (SKW1_RANK2, SKW1_RANK1, SKW0)


class UnsupportedClassError(ValueError):
    """No witness construction exists for this class."""


def fit_exponent(scales: Sequence[float], values: Sequence[float]):
    """OLS slope of log2(value) against log2(1/scale), with its standard error."""
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.shape != v.shape:
        raise ValueError("scales and values differ in length")
    if len(s) < 3:
        raise ValueError("need at least 3 points for a fit")
    if np.any(~np.isfinite(s)) or np.any(~np.isfinite(v)) or np.any(s <= 0) or np.any(v <= 0):
        raise ValueError("scales and values must be positive and finite")
    x = -np.log2(s)
    y = np.log2(v)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0:
        raise ValueError("scales are all equal")
    slope = float(xm @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    stderr = math.sqrt(max(float(resid @ resid), 0.0) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


def verdict(slope: float, stderr: float, predicted: float, tolerance: float) -> str:
    if not (math.isfinite(slope) and math.isfinite(stderr)):
        return INCONCLUSIVE
    if stderr > tolerance / 2:
        return INCONCLUSIVE
    return CONSISTENT if abs(slope - predicted) <= tolerance else INCONSISTENT


def _num(x):
    return x if isinstance(x, (int, str)) else repr(float(x))


@dataclass
class ScalingReport:
    preset: str
    method: str
    scales: list
    values: list
    slope: float
    stderr: float
    predicted: float
    verdict: str
    anchor: str = ""
    tolerance: float = 0.08
    rows: list = field(default_factory=list, repr=False)

    KEYS = ("preset", "method", "scales", "values", "slope", "stderr", "predicted", "verdict")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.KEYS}
        d["scales"] = [float(x) for x in self.scales]
        d["values"] = [float(x) for x in self.values]
        for k in ("slope", "stderr", "predicted"):
            d[k] = None if not math.isfinite(d[k]) else float(d[k])
        d["anchor"] = self.anchor
        d["tolerance"] = float(self.tolerance)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["preset", "method", "scale", "value", "anchor"])
            for s, v in zip(self.scales, self.values):
                w.writerow([self.preset, self.method, _num(s), _num(v), self.anchor])

    def write_dat(self, path) -> None:
        """Two columns, log2(1/scale) and log2(value), for gnuplot."""
        with open(path, "w") as fh:
            fh.write(f"# {self.preset} {self.method} slope={self.slope!r}\n")
            for s, v in zip(self.scales, self.values):
                fh.write(f"{-math.log2(s)!r} {math.log2(v) if v > 0 else float('nan')!r}\n")


# ------------------------------------------------------------------- witnesses

def _witness_parameter(A: Matrix2, cls: str) -> float:
    """The constant c of the canonical form, or an error if A is not in it."""
    c = A.a12 if cls in (SKW1_RANK2, SKW1_RANK1) else 1.0
    canon = witness_matrix(cls, c)
    if np.max(np.abs(A.as_array() - canon.as_array())) > 1e-12:
        raise ValueError(f"{A} is not the canonical form {canon} of class {cls}; "
                         "reduce it by an orthogonal conjugation first")
    return c


def witness_lower_bound(A: Matrix2, delta: float, refine: int = 1,
                        spec: Optional[AnnulusSpec] = None) -> float:
    """(int_B |avg|^2 / ||g||^2)^(1/2) for the class witness g."""
    cls = classify(A).canonical_class
    if cls not in WITNESS_CLASSES:
        raise UnsupportedClassError(f"class {cls} has no witness construction")
    c = _witness_parameter(A, cls)
    return witness_probe(cls, delta, c, refine, spec).ratio()


def witness_floor(cls: str, delta: float) -> float:
    """Floor the witness ratio must clear at p = 2.

    For SKW0 this is the floor on int_B |avg|^2 itself, which is at least 1.
    """
    if cls == SKW1_RANK2:
        return math.sqrt(delta ** (2 / 3) * delta ** (1 / 3) / 1e4 / (20 * delta ** (4 / 3)))
    if cls == SKW1_RANK1:
        return math.sqrt(delta * delta ** 0.5 / 1e4 / (20 * delta ** 2))
    if cls == SKW0:
        return 1.0
    raise UnsupportedClassError(f"class {cls} has no witness construction")


# ------------------------------------------------------------------ adversarial

@dataclass
class MaximalObjective:
    """f -> ||M f||_2 / ||f||_2 on one grid, with M the sup over a dilation set."""
    A: Matrix2
    delta: float
    grid: Grid3
    dilations: DilationSet
    spec: AnnulusSpec

    def __post_init__(self):
        self.Y, self.W = sample_annulus(self.spec)
        self.W = self.W / self.spec.area
        self.X = self.grid.nodes()
        self.AX = self.X[:, :2] @ self.A.as_array().T
        self.w = self.grid.weights().ravel()

    def _sums(self, values):
        out = np.empty((len(self.dilations.values), self.X.shape[0]))
        for i, t in enumerate(self.dilations.values):
            T = np.full(self.X.shape[0], t)
            out[i] = kernels.plane_average(values, self.grid.lo, self.grid.h, (0.0, 0.0, 0.0),
                                           self.X, self.AX, T, self.Y, self.W)
        return out

    def norm(self, values) -> float:
        return math.sqrt(float(np.sum(self.w * values.ravel() ** 2)))

    def evaluate(self, values):
        """(ratio, maximal values, argmax dilation per node)."""
        s = self._sums(values)
        k = np.argmax(s, axis=0)
        m = s[k, np.arange(s.shape[1])]
        n = self.norm(values)
        num = math.sqrt(float(np.sum(self.w * m * m)))
        return (num / n if n > 0 else 0.0), m, k

    def supergradient(self, values, m, k):
        """Gradient of ||Mf|| at f with the maximizing dilation frozen."""
        num = math.sqrt(float(np.sum(self.w * m * m)))
        if num == 0:
            return np.zeros_like(values)
        T = np.asarray(self.dilations.values)[k]
        C = self.w * m / num
        g = kernels.plane_scatter(values.shape, self.grid.lo, self.grid.h, (0.0, 0.0, 0.0),
                                  self.X, self.AX, T, C, self.Y, self.W)
        # per unit of the weighted norm: divide by the cell weights
        return g / self.w.reshape(values.shape)


@dataclass
class AdversarialResult:
    ratio: float
    start: str
    history: list
    witness: Optional[float] = None


def adversarial_lower_bound(A: Matrix2, delta: float, iterations: int = 200, seed: int = 0,
                            init: str = "both", grid: Optional[Grid3] = None,
                            dilations: Optional[DilationSet] = None) -> AdversarialResult:
    """Projected ascent of ||Mf|| / ||f|| over nonnegative unit-norm grid fields.

    Every iterate is a feasible f, so the best value seen is a lower bound
    for the discretized operator norm. With init "witness" or "both" the
    class witness ratio enters as a certified starting value.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    grid = grid or Grid3.cube(1.5, 9)
    dilations = dilations or DilationSet.geometric(16)
    obj = MaximalObjective(A, delta, grid, dilations, AnnulusSpec(delta))
    best, start, wit = 0.0, "noise", None
    if init in ("witness", "both"):
        cls = classify(A).canonical_class
        if cls in WITNESS_CLASSES:
            try:
                wit = witness_lower_bound(A, delta)
            except ValueError:
                wit = None
            if wit is not None:
                best, start = wit, "witness"
    history = []
    if init in ("noise", "both") or wit is None:
        rng = np.random.default_rng(seed)
        f = rng.random(grid.points)
        f /= obj.norm(f)
        val, m, k = obj.evaluate(f)
        step = 1.0
        for _ in range(iterations):
            history.append(val)
            g = obj.supergradient(f, m, k)
            gn = obj.norm(g)
            if gn == 0:
                break
            improved = False
            while step > 1e-6:
                cand = np.maximum(f + step * g / gn, 0.0)
                cn = obj.norm(cand)
                if cn == 0:
                    step /= 2
                    continue
                cand /= cn
                cval, cm, ck = obj.evaluate(cand)
                if cval > val:
                    f, val, m, k = cand, cval, cm, ck
                    step *= 1.5
                    improved = True
                    break
                step /= 2
            if not improved:
                break
        history.append(val)
        if val > best:
            best, start = val, "noise"
    return AdversarialResult(best, start, history, wit)


# ------------------------------------------------------------------ experiments

def scaling_experiment(A: Matrix2, deltas: Sequence[float], method: str = "witness",
                       preset: str = "", tolerance: float = 0.08, seed: int = 0,
                       iterations: int = 200, refine: int = 1) -> ScalingReport:
    """Lower bound per delta, fitted exponent, and the verdict against the class."""
    if method not in ("witness", "adversarial", "both"):
        raise ValueError(f"unknown method {method!r}")
    prof = classify(A)
    values = []
    for i, d in enumerate(deltas):
        if method == "witness":
            values.append(witness_lower_bound(A, d, refine))
        else:
            res = adversarial_lower_bound(A, d, iterations, seed + i,
                                          "both" if method == "both" else "noise")
            values.append(res.ratio)
    try:
        slope, stderr = fit_exponent(deltas, values)
    except ValueError:
        slope, stderr = float("nan"), float("nan")
    return ScalingReport(preset or str(A), method, list(deltas), values, slope, stderr,
                         float(prof.annulus_exponent),
                         verdict(slope, stderr, float(prof.annulus_exponent), tolerance),
                         anchor="annulus-lower-bound", tolerance=tolerance)


@dataclass
class ContrastReport:
    """Sublevel-measure slopes for the circle and tube quadratic forms of E and I."""
    lams: list
    table: dict        # (matrix, form) -> ScalingReport

    def slope(self, matrix: str, form: str) -> float:
        return self.table[(matrix, form)].slope

    def as_dict(self) -> dict:
        return {f"{m}/{f}": r.as_dict() for (m, f), r in sorted(self.table.items())}


def tube_circle_contrast(lams: Sequence[float], samples: int = 10 ** 5, seed: int = 0,
                         tolerance: float = 0.05) -> ContrastReport:
    """E is best for circles and worst for tubes; I is the reverse."""
    from .oscillatory_lab import SublevelSpec, sublevel_measure
    forms = {"circle": skew_symmetric_part, "tube": symmetric_part}
    table = {}
    for name, A in (("E", Matrix2.E()), ("I", Matrix2.I())):
        for form, make in forms.items():
            M = make(A)
            rank = int(np.linalg.matrix_rank(M.as_array()))
            predicted = {2: -1.0, 1: -0.5, 0: 0.0}[rank]
            spec = SublevelSpec(M)
            vals = [sublevel_measure(spec, lam, samples, seed + i).measure
                    for i, lam in enumerate(lams)]
            # measure ~ lambda^slope, fitted against scale 1/lambda
            slope, stderr = fit_exponent([1.0 / x for x in lams], vals)
            table[(name, form)] = ScalingReport(
                name, f"sublevel-{form}", list(lams), vals, slope, stderr, predicted,
                verdict(slope, stderr, predicted, tolerance), anchor="sublevel-measure",
                tolerance=tolerance)
    return ContrastReport(list(lams), table)
