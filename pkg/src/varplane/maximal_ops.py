"""Annulus and tube averages along the planes (y, <Ax, y>) through (x, x3)."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .field_grid import (AnnulusSpec, Grid3, ScalarField3, TubeSpec, sample_annulus,
                         sample_tube, trilinear_sample, witness_field, witness_grid)
from .matrix_classify import (SKW0, SKW1_RANK1, SKW1_RANK2, Matrix2, is_orthogonal,
                              orthogonal_conjugate)


@dataclass(frozen=True)
class VariablePlaneMap:
    """(x, x3, y) -> (x - y, x3 - <Ax, y>)."""
    A: Matrix2

    def __call__(self, x, x3, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        Ax = x @ self.A.as_array().T
        return x - y, x3 - np.sum(Ax * y, axis=-1)


@dataclass(frozen=True)
class DilationSet:
    values: tuple
    t_min: float = 0.5
    t_max: float = 2.0

    def __post_init__(self):
        v = tuple(sorted(float(t) for t in self.values))
        if not v:
            raise ValueError("dilation set is empty")
        if v[0] <= 0 or v[0] < self.t_min - 1e-12 or v[-1] > self.t_max + 1e-12:
            raise ValueError(f"dilations must lie in [{self.t_min}, {self.t_max}]")
        object.__setattr__(self, "values", v)

    @classmethod
    def geometric(cls, n: int = 64, t_min: float = 0.5, t_max: float = 2.0) -> "DilationSet":
        return cls(tuple(np.geomspace(t_min, t_max, n)), t_min, t_max)


@dataclass(frozen=True)
class RotationSet:
    values: tuple

    def __post_init__(self):
        v = tuple(sorted(float(t) % (2 * math.pi) for t in self.values))
        if not v:
            raise ValueError("rotation set is empty")
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, n: int = 64) -> "RotationSet":
        return cls(tuple(2 * math.pi * np.arange(n) / n))


def _as_points(x, x3):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x3 = np.atleast_1d(np.asarray(x3, dtype=float))
    if x3.shape[0] == 1 and x.shape[0] > 1:
        x3 = np.full(x.shape[0], x3[0])
    return np.column_stack([x, x3])


def _plane_sum(f: ScalarField3, A: Matrix2, X, T, Y, W):
    AX = X[:, :2] @ A.as_array().T
    return kernels.plane_average(f.values, f.grid.lo, f.grid.h, f.shear_triple(),
                                 X, AX, T, Y, W)


def annulus_average(f: ScalarField3, A: Matrix2, delta: float, t, x, x3,
                    spec: Optional[AnnulusSpec] = None):
    """(1/|S_delta|) sum w |f(x - t y, x3 - <Ax, t y>)| over annulus nodes y.

    x may be one point (2,) or many (N, 2); t and x3 broadcast against it.
    """
    spec = spec or AnnulusSpec(delta)
    if spec.delta != delta:
        raise ValueError("annulus spec width differs from delta")
    single = np.ndim(x) == 1
    X = _as_points(x, x3)
    T = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],)).copy()
    if np.any(T <= 0):
        raise ValueError("t must be positive")
    Y, W = sample_annulus(spec)
    out = _plane_sum(f, A, X, T, Y, W) / spec.area
    return float(out[0]) if single else out


def nikodym_average(f: ScalarField3, A: Matrix2, delta: float, theta: float, x, x3,
                    spec: Optional[TubeSpec] = None):
    """(1/|T_delta|) sum w |f(x - R y, x3 - <Ax, R y>)| over tube nodes y."""
    spec = spec or TubeSpec(delta)
    single = np.ndim(x) == 1
    X = _as_points(x, x3)
    Y, W = sample_tube(spec, theta)
    out = _plane_sum(f, A, X, np.ones(X.shape[0]), Y, W) / spec.area
    return float(out[0]) if single else out


def annulus_maximal(f: ScalarField3, A: Matrix2, delta: float,
                    T: Optional[DilationSet] = None, eval_grid: Optional[Grid3] = None,
                    spec: Optional[AnnulusSpec] = None) -> ScalarField3:
    T = T or DilationSet.geometric()
    eval_grid = eval_grid or f.grid
    spec = spec or AnnulusSpec(delta)
    X = eval_grid.nodes()
    Y, W = sample_annulus(spec)
    best = np.zeros(X.shape[0])
    for t in T.values:
        vals = _plane_sum(f, A, X, np.full(X.shape[0], t), Y, W) / spec.area
        np.maximum(best, vals, out=best)
    return ScalarField3(eval_grid, best.reshape(eval_grid.points))


def nikodym_maximal(f: ScalarField3, A: Matrix2, delta: float,
                    Theta: Optional[RotationSet] = None, eval_grid: Optional[Grid3] = None,
                    spec: Optional[TubeSpec] = None) -> ScalarField3:
    Theta = Theta or RotationSet.uniform()
    eval_grid = eval_grid or f.grid
    spec = spec or TubeSpec(delta)
    X = eval_grid.nodes()
    ones = np.ones(X.shape[0])
    best = np.zeros(X.shape[0])
    for th in Theta.values:
        Y, W = sample_tube(spec, th)
        np.maximum(best, _plane_sum(f, A, X, ones, Y, W) / spec.area, out=best)
    return ScalarField3(eval_grid, best.reshape(eval_grid.points))


def conjugation_transport(f: ScalarField3, A: Matrix2, Q: Matrix2):
    """Return (g, Q^T A Q) with g(x, x3) = f(Qx, x3) resampled on f's grid."""
    if not is_orthogonal(Q):
        raise ValueError("Q is not orthogonal")
    At = orthogonal_conjugate(A, Q)
    nodes = f.grid.nodes()
    moved = nodes.copy()
    moved[:, :2] = nodes[:, :2] @ Q.as_array().T
    vals = trilinear_sample(f, moved)
    return ScalarField3(f.grid, vals.reshape(f.grid.points)), At


# ------------------------------------------------------------- witness probes

@dataclass
class WitnessProbe:
    """Averages of a witness at the nodes of its set B, with the chosen t."""
    cls: str
    delta: float
    nodes: np.ndarray        # (N, 3) in the reduced coordinates of B
    t: np.ndarray            # nan where no admissible t exists
    averages: np.ndarray     # 0 where t is not admissible
    cell: float              # midpoint-rule cell volume
    field_norm_sq: float
    volume_B: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.t)

    def integral_sq(self) -> float:
        return float(np.sum(self.averages ** 2) * self.cell)

    def ratio(self) -> float:
        return math.sqrt(self.integral_sq() / self.field_norm_sq)


def _midpoints(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5), h


def witness_B(cls: str, delta: float, refine: int = 1):
    """Midpoint samples of B (reduced coordinates) and the cell volume."""
    if cls == SKW0:
        n = 24 * refine
        x1, h1 = _midpoints(-1, 1, n)
        x2, h2 = _midpoints(-1, 1, n)
        x3, h3 = _midpoints(1, 2, 16 * refine)
        X1, X2, X3 = np.meshgrid(x1, x2, x3, indexing="ij")
        keep = (X1 ** 2 + X2 ** 2 <= 1).ravel()
        nodes = np.column_stack([X1.ravel(), X2.ravel(), X3.ravel()])[keep]
        return nodes, h1 * h2 * h3, math.pi
    if cls == SKW1_RANK2:
        w = delta ** (1 / 3)
    elif cls == SKW1_RANK1:
        w = delta ** 0.5
    else:
        raise ValueError(f"no witness for class {cls}")
    x1, h1 = _midpoints(-5, 5, 40 * refine)
    x2, h2 = _midpoints(-w, w, 16 * refine)
    x3p, h3 = _midpoints(1, 5, 32 * refine)
    x3 = np.concatenate([-x3p[::-1], x3p])
    X1, X2, X3 = np.meshgrid(x1, x2, x3, indexing="ij")
    nodes = np.column_stack([X1.ravel(), X2.ravel(), X3.ravel()])
    return nodes, h1 * h2 * h3, 10 * 2 * w * 8


def witness_t(cls: str, nodes: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Dilation attached to each node of B; nan when no positive t works.

    SKW1_RANK2: x3 - t^2/2 - c x2 t = 0 (positive root)
    SKW1_RANK1: x3 - c x2 t = 0
    SKW0:       t^2 / 2 = x3
    """
    x2, x3 = nodes[:, 1], nodes[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        if cls == SKW1_RANK2:
            disc = (c * x2) ** 2 + 2 * x3
            t = -c * x2 + np.sqrt(np.where(disc >= 0, disc, np.nan))
        elif cls == SKW1_RANK1:
            t = np.where(x2 != 0, x3 / (c * x2), np.nan)
        elif cls == SKW0:
            t = np.sqrt(np.where(x3 >= 0, 2 * x3, np.nan))
        else:
            raise ValueError(f"no witness for class {cls}")
    return np.where(np.isfinite(t) & (t > 0), t, np.nan)


def witness_matrix(cls: str, c: float = 1.0) -> Matrix2:
    if cls == SKW1_RANK2:
        return Matrix2.Ic(c)
    if cls == SKW1_RANK1:
        return Matrix2.nil(c)
    if cls == SKW0:
        return Matrix2.I()
    raise ValueError(f"no witness for class {cls}")


def witness_probe(cls: str, delta: float, c: float = 1.0, refine: int = 1,
                  spec: Optional[AnnulusSpec] = None) -> WitnessProbe:
    A = witness_matrix(cls, c)
    f = witness_field(cls, delta, witness_grid(cls, delta, refine))
    nodes, cell, volB = witness_B(cls, delta, refine)
    t = witness_t(cls, nodes, c)
    ok = np.isfinite(t)
    # B lives in reduced coordinates; undo the shear to get the base point
    X = nodes[ok].copy()
    if f.shear is not None:
        X[:, 2] += 0.5 * (X[:, 0] ** 2 + X[:, 1] ** 2)
    avg = np.zeros(nodes.shape[0])
    if X.shape[0]:
        avg[ok] = annulus_average(f, A, delta, t[ok], X[:, :2], X[:, 2], spec)
    return WitnessProbe(cls, delta, nodes, t, avg, cell, f.lp_norm(2) ** 2, volB)


# ------------------------------------------------------------------ batch jobs

@dataclass
class MaximalJob:
    matrix: Matrix2
    deltas: Sequence[float]
    grid_points: int = 17
    half_extent: float = 1.5
    t_count: int = 16
    theta_count: int = 16
    label: str = "job"


def bump_field(grid: Grid3) -> ScalarField3:
    """Smooth bump of radius 1 centred at the origin."""
    from .field_grid import psi_radial
    X1, X2, X3 = grid.mesh()
    return ScalarField3(grid, psi_radial(np.sqrt(X1 ** 2 + X2 ** 2 + X3 ** 2)))


def run_maximal_job(job: MaximalJob, out_dir) -> list:
    """Maximal fields for each delta, written as binary plus a CSV summary."""
    os.makedirs(out_dir, exist_ok=True)
    grid = Grid3.cube(job.half_extent, job.grid_points)
    f = bump_field(grid)
    rows = []
    for d in job.deltas:
        tag = f"{job.label}_d{d:.6g}"
        m = annulus_maximal(f, job.matrix, d, DilationSet.geometric(job.t_count), grid)
        n = nikodym_maximal(f, job.matrix, d, RotationSet.uniform(job.theta_count), grid)
        for kind, fld in (("annulus", m), ("nikodym", n)):
            fld.save(os.path.join(out_dir, f"{tag}_{kind}.bin"))
            rows.append({"job": job.label, "kind": kind, "delta": d,
                         "nodes": grid.size, "max": float(fld.values.max()),
                         "l2": fld.lp_norm(2)})
    with open(os.path.join(out_dir, f"{job.label}_maximal.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["job", "kind", "delta", "nodes", "max", "l2"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows
