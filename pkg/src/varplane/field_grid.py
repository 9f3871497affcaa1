"""Uniform 3-D grids, smooth cutoffs, annulus/tube quadratures and witness fields."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .matrix_classify import SKW0, SKW1_RANK1, SKW1_RANK2


# 3 int64 sizes, then half extents, center and shear (s11, s12, s22) as float64
HEADER_BYTES = 3 * 8 + 9 * 8


class ResolutionError(ValueError):
    """Grid too coarse for the requested scale."""


# ---------------------------------------------------------------- cutoffs

def _smooth_step(s):
    # 1 at s<=0, 0 at s>=1, C-infinity, built from exp(-1/x)
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s < 1.0, np.exp(-1.0 / np.where(s < 1.0, 1.0 - s, 1.0)), 0.0)
        b = np.where(s > 0.0, np.exp(-1.0 / np.where(s > 0.0, s, 1.0)), 0.0)
    return a / (a + b)


def psi_radial(r):
    """Radial profile of psi: 1 for r <= 1/2, 0 for r >= 1."""
    r = np.abs(np.asarray(r, dtype=float))
    out = _smooth_step(2.0 * r - 1.0)
    return out if out.ndim else float(out)


def chi_radial(r):
    r = np.abs(np.asarray(r, dtype=float))
    out = psi_radial(r / 2.0) - psi_radial(r)
    return out if np.ndim(out) else float(out)


def bump_psi(u):
    """psi(u) for a vector u (components on the last axis) or a scalar."""
    u = np.asarray(u, dtype=float)
    r = np.abs(u) if u.ndim == 0 else np.linalg.norm(u, axis=-1)
    return psi_radial(r)


def bump_chi(u):
    u = np.asarray(u, dtype=float)
    r = np.abs(u) if u.ndim == 0 else np.linalg.norm(u, axis=-1)
    return chi_radial(r)


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class Grid3:
    half_extent: tuple
    points: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extent)
        pts = tuple(int(v) for v in self.points)
        c = tuple(float(v) for v in self.center)
        if len(he) != 3 or len(pts) != 3 or len(c) != 3:
            raise ValueError("Grid3 needs three axes")
        if min(pts) < 2:
            raise ValueError("need at least 2 points per axis")
        if min(he) <= 0:
            raise ValueError("half extents must be positive")
        object.__setattr__(self, "half_extent", he)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "center", c)

    @classmethod
    def cube(cls, half: float, n: int) -> "Grid3":
        return cls((half,) * 3, (n,) * 3)

    @property
    def h(self) -> tuple:
        return tuple(2.0 * e / (n - 1) for e, n in zip(self.half_extent, self.points))

    @property
    def lo(self) -> tuple:
        return tuple(c - e for c, e in zip(self.center, self.half_extent))

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    def axis(self, i: int) -> np.ndarray:
        return self.lo[i] + self.h[i] * np.arange(self.points[i])

    def axes(self):
        return tuple(self.axis(i) for i in range(3))

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def nodes(self) -> np.ndarray:
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def weights(self) -> np.ndarray:
        """Trapezoid weights, so constants integrate exactly over the box."""
        ws = []
        for i in range(3):
            w = np.full(self.points[i], self.h[i])
            w[0] = w[-1] = self.h[i] / 2
            ws.append(w)
        return np.einsum("i,j,k->ijk", *ws)

    def volume(self) -> float:
        return float(np.prod([2 * e for e in self.half_extent]))

    def memory_bytes(self) -> int:
        return 8 * self.size


@dataclass
class ScalarField3:
    """Samples on a Grid3 (axis order x1, x2, x3).

    With a shear S the field represents f(x, x3) = F(x, x3 - x.Sx/2), where
    F is the trilinear interpolant of the stored samples. This is how the
    witnesses are stored, since their supports are thin in the sheared
    coordinate. Shears preserve volume, so norms are computed from samples.
    """
    grid: Grid3
    values: np.ndarray
    shear: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"{v.size} values for a grid of {self.grid.size} nodes")
        v = v.reshape(self.grid.points)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = np.ascontiguousarray(v)
        if self.shear is not None:
            S = np.asarray(self.shear, dtype=float)
            if S.shape != (2, 2) or not np.allclose(S, S.T):
                raise ValueError("shear must be a symmetric 2x2 matrix")
            self.shear = S

    @classmethod
    def from_function(cls, grid: Grid3, fn, shear=None) -> "ScalarField3":
        X1, X2, X3 = grid.mesh()
        return cls(grid, fn(X1, X2, X3), shear)

    def shear_triple(self):
        if self.shear is None:
            return (0.0, 0.0, 0.0)
        S = self.shear
        return (S[0, 0], S[0, 1], S[1, 1])

    def lp_norm(self, p: float = 2.0) -> float:
        w = self.grid.weights()
        return float(np.sum(w * np.abs(self.values) ** p) ** (1.0 / p))

    def __add__(self, other: "ScalarField3") -> "ScalarField3":
        self._check_compatible(other)
        return ScalarField3(self.grid, self.values + other.values, self.shear)

    def scaled(self, c: float) -> "ScalarField3":
        return ScalarField3(self.grid, c * self.values, self.shear)

    def _check_compatible(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        a = self.shear if self.shear is not None else np.zeros((2, 2))
        b = other.shear if other.shear is not None else np.zeros((2, 2))
        if not np.array_equal(a, b):
            raise ValueError("fields use different shears")

    # serialization -------------------------------------------------------
    def to_bytes(self) -> bytes:
        g = self.grid
        head = struct.pack("<3q", *g.points)
        head += struct.pack("<9d", *g.half_extent, *g.center, *self.shear_triple())
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "ScalarField3":
        pts = struct.unpack_from("<3q", data, 0)
        ext = struct.unpack_from("<9d", data, 24)
        grid = Grid3(ext[:3], pts, ext[3:6])
        s11, s12, s22 = ext[6:]
        shear = None if s11 == s12 == s22 == 0 else np.array([[s11, s12], [s12, s22]])
        vals = np.frombuffer(data, dtype="<f8", offset=HEADER_BYTES, count=grid.size)
        return cls(grid, vals.reshape(pts).copy(), shear)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ScalarField3":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path, max_nodes: int = 200_000) -> None:
        if self.grid.size > max_nodes:
            raise ValueError(f"grid has {self.grid.size} nodes, CSV export capped at {max_nodes}")
        nodes = self.grid.nodes()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "value"])
            for p, v in zip(nodes, self.values.ravel()):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(v))])


def trilinear_sample(f: ScalarField3, p) -> np.ndarray:
    """Interpolate f at points p (shape (3,) or (N, 3)); zero outside the grid."""
    P = np.atleast_2d(np.asarray(p, dtype=float))
    out = kernels.trilinear(f.values, f.grid.lo, f.grid.h, f.shear_triple(), P)
    return out[0] if np.ndim(p) == 1 else out


# -------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class AnnulusSpec:
    delta: float
    radial: int = 4
    angular: Optional[int] = None
    radius: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("annulus width must lie in (0, 1)")
        if self.angular is None:
            object.__setattr__(self, "angular", max(256, math.ceil(8 * math.pi / self.delta)))
        if self.angular < math.ceil(4 * math.pi / self.delta):
            raise ResolutionError(
                f"{self.angular} angular samples do not resolve width {self.delta}; "
                f"need at least {math.ceil(4 * math.pi / self.delta)}")
        if self.radial < 1:
            raise ValueError("need at least one radial sample")

    @property
    def area(self) -> float:
        return 2 * math.pi * self.radius * self.delta


@dataclass(frozen=True)
class TubeSpec:
    delta: float
    along: int = 64
    across: int = 4

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("tube width must lie in (0, 1)")
        if self.along < 1 or self.across < 1:
            raise ValueError("need at least one sample per direction")

    @property
    def area(self) -> float:
        return self.delta


def sample_annulus(spec: AnnulusSpec):
    """Nodes (M, 2) and weights (M,) on 1-d/2 <= |y| <= 1+d/2."""
    gx, gw = np.polynomial.legendre.leggauss(spec.radial)
    half = spec.delta / 2
    r = spec.radius + half * gx
    wr = half * gw * r
    n = spec.angular
    th = 2 * math.pi * np.arange(n) / n
    R, TH = np.meshgrid(r, th, indexing="ij")
    W = np.repeat(wr[:, None], n, axis=1) * (2 * math.pi / n)
    pts = np.stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()], axis=1)
    return pts, W.ravel()


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def sample_tube(spec: TubeSpec, theta: float = 0.0):
    """Nodes and weights on the rotated tube R_theta T_delta."""
    g1, w1 = np.polynomial.legendre.leggauss(spec.along)
    g2, w2 = np.polynomial.legendre.leggauss(spec.across)
    y1 = 0.5 * g1
    y2 = 0.5 * spec.delta * g2
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    W = np.outer(0.5 * w1, 0.5 * spec.delta * w2)
    pts = np.stack([Y1.ravel(), Y2.ravel()], axis=1) @ rotation(theta).T
    return pts, W.ravel()


# ---------------------------------------------------------------- witnesses

def witness_scales(cls: str, delta: float) -> tuple:
    """Half-widths (s1, s2, s3) of g(u) = prod psi(u_i / s_i)."""
    if cls == SKW1_RANK2:
        return (1.0, 10 * delta ** (1 / 3), 10 * delta)
    if cls == SKW1_RANK1:
        return (1.0, 10 * delta ** 0.5, 10 * delta ** 1.5)
    if cls == SKW0:
        return (10.0, 10.0, 100 * delta)
    raise ValueError(f"no witness for class {cls}")


def witness_shear(cls: str, A=None) -> Optional[np.ndarray]:
    """Shear used for the witness of each class; the rank-one class has none."""
    if cls in (SKW1_RANK2, SKW0):
        return np.eye(2)
    return None


def required_points(cls: str, delta: float, refine: int = 1) -> tuple:
    s = witness_scales(cls, delta)
    k = int(np.argmin(s))
    pts = []
    for i, si in enumerate(s):
        if i == k:
            hmax = min(delta, 2 * si) / 4
        else:
            hmax = 2 * si / 32
        pts.append(refine * math.ceil(2 * si / hmax) + 1)
    return tuple(pts)


def witness_grid(cls: str, delta: float, refine: int = 1) -> Grid3:
    """Smallest grid obeying the per-axis resolution rule, times `refine`."""
    return Grid3(witness_scales(cls, delta), required_points(cls, delta, refine))


def check_witness_resolution(cls: str, delta: float, grid: Grid3) -> None:
    s = witness_scales(cls, delta)
    k = int(np.argmin(s))
    need = min(delta, 2 * s[k]) / 4
    if grid.h[k] > need * (1 + 1e-12):
        n = math.ceil(2 * grid.half_extent[k] / need) + 1
        raise ResolutionError(
            f"axis {k} spacing {grid.h[k]:.3g} exceeds {need:.3g} for delta={delta}; "
            f"need at least {n} points on that axis")


def witness_values(cls: str, delta: float, U1, U2, U3):
    s1, s2, s3 = witness_scales(cls, delta)
    return psi_radial(U1 / s1) * psi_radial(U2 / s2) * psi_radial(U3 / s3)


def witness_field(cls: str, delta: float, grid: Optional[Grid3] = None) -> ScalarField3:
    """Witness g for the class, stored in the coordinates where it is a product."""
    if grid is None:
        grid = witness_grid(cls, delta)
    check_witness_resolution(cls, delta, grid)
    X1, X2, X3 = grid.mesh()
    return ScalarField3(grid, witness_values(cls, delta, X1, X2, X3), witness_shear(cls))


def witness_norm_sq(cls: str, delta: float, n: int = 20001) -> float:
    """Closed-form-by-quadrature ||g||_2^2 as a product of 1-D integrals."""
    u = np.linspace(-1, 1, n)
    one = np.trapezoid(psi_radial(u) ** 2, u)
    return float(one ** 3 * np.prod(witness_scales(cls, delta)))
