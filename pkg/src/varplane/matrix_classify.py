"""Rank and eigen classification of real 2x2 matrices.

The symmetric rank is rank(A + A^T); the skew rank is rank(EA + (EA)^T)
with E the quarter-turn rotation. Together with rank(A) they decide the
canonical class and the predicted growth exponents of the annulus and
tube maximal averages on the planes attached to A.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

REL_TOL = 1e-8
ABS_FLOOR = 1e-14
DISC_TOL = 1e-10

SKW2 = "SKW2"
SKW1_RANK2 = "SKW1_RANK2"
SKW1_RANK1 = "SKW1_RANK1"
SKW0 = "SKW0"
ZERO = "ZERO"
CLASSES = (SKW2, SKW1_RANK2, SKW1_RANK1, SKW0, ZERO)

ANNULUS_EXPONENT = {
    SKW2: Fraction(0),
    SKW1_RANK2: Fraction(1, 6),
    SKW1_RANK1: Fraction(1, 4),
    SKW0: Fraction(1, 2),
    ZERO: Fraction(0),  # logarithmic growth only
}
# keyed on rank(A + A^T)
NIKODYM_EXPONENT = {2: Fraction(0), 1: Fraction(1, 6), 0: Fraction(1, 4)}


class ClassificationError(RuntimeError):
    """Rank path and eigen path disagree."""


class MatrixParseError(ValueError):
    pass


@dataclass(frozen=True)
class Matrix2:
    a11: float
    a12: float
    a21: float
    a22: float

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, M) -> "Matrix2":
        M = np.asarray(M, dtype=float)
        if M.shape != (2, 2):
            raise ValueError(f"expected a 2x2 array, got shape {M.shape}")
        return cls(M[0, 0], M[0, 1], M[1, 0], M[1, 1])

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def T(self) -> "Matrix2":
        return Matrix2(self.a11, self.a21, self.a12, self.a22)

    def __matmul__(self, other: "Matrix2") -> "Matrix2":
        return Matrix2.from_array(self.as_array() @ other.as_array())

    def __add__(self, other: "Matrix2") -> "Matrix2":
        return Matrix2.from_array(self.as_array() + other.as_array())

    def scaled(self, c: float) -> "Matrix2":
        return Matrix2.from_array(c * self.as_array())

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array(), 2))

    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def trace(self) -> float:
        return self.a11 + self.a22

    def is_zero(self) -> bool:
        return max(abs(self.a11), abs(self.a12), abs(self.a21), abs(self.a22)) <= ABS_FLOOR

    # named matrices
    @classmethod
    def E(cls) -> "Matrix2":
        return cls(0.0, -1.0, 1.0, 0.0)

    @classmethod
    def I(cls) -> "Matrix2":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def Ic(cls, c: float) -> "Matrix2":
        if c == 0:
            raise ValueError("I_c needs c != 0")
        return cls(1.0, c, 0.0, 1.0)

    @classmethod
    def nil(cls, c: float) -> "Matrix2":
        return cls(0.0, c, 0.0, 0.0)

    @classmethod
    def sym(cls, c: float) -> "Matrix2":
        return cls(0.0, c, c, 0.0)

    @classmethod
    def zero(cls) -> "Matrix2":
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def rotation(cls, theta: float) -> "Matrix2":
        c, s = math.cos(theta), math.sin(theta)
        return cls(c, -s, s, c)


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise MatrixParseError(f"not a number: {text!r}") from exc


def parse_matrix(text: str) -> Matrix2:
    """Parse a preset (E, I, Ic:c, NIL:c, SYM:c) or four row-major numbers."""
    s = text.strip()
    up = s.upper()
    if up == "E":
        return Matrix2.E()
    if up == "I":
        return Matrix2.I()
    if up in ("0", "ZERO"):
        return Matrix2.zero()
    m = re.fullmatch(r"(IC|NIL|SYM)\s*:\s*(.+)", s, flags=re.IGNORECASE)
    if m:
        kind, c = m.group(1).upper(), _number(m.group(2))
        if kind == "IC":
            if c == 0:
                raise MatrixParseError("preset Ic:0 is not allowed, c must be nonzero")
            return Matrix2.Ic(c)
        if c == 0:
            raise MatrixParseError(f"preset {kind}:0 is the zero matrix, c must be nonzero")
        return Matrix2.nil(c) if kind == "NIL" else Matrix2.sym(c)
    parts = [p for p in re.split(r"[,\s]+", s) if p]
    if len(parts) != 4:
        raise MatrixParseError(f"cannot parse matrix {text!r}")
    return Matrix2(*(_number(p) for p in parts))


def skew_symmetric_part(A: Matrix2) -> Matrix2:
    """EA + (EA)^T in closed form."""
    d = A.a11 - A.a22
    return Matrix2(-2.0 * A.a21, d, d, 2.0 * A.a12)


def symmetric_part(A: Matrix2) -> Matrix2:
    return Matrix2(2.0 * A.a11, A.a12 + A.a21, A.a12 + A.a21, 2.0 * A.a22)


def numeric_rank(M, tol: float = REL_TOL) -> int:
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    arr = M.as_array() if isinstance(M, Matrix2) else np.asarray(M, dtype=float)
    if arr.size == 0 or np.max(np.abs(arr)) <= ABS_FLOOR:
        return 0
    s = np.linalg.svd(arr, compute_uv=False)
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class EigenData:
    eigenvalues: tuple
    multiplicities: tuple
    eigenspace_dims: tuple
    repeated: bool


def eigen_analysis(A: Matrix2, tol: float = REL_TOL) -> EigenData:
    """Roots of det(A - s I) = 0 from the quadratic formula."""
    tr, det = A.trace(), A.det()
    disc = tr * tr - 4.0 * det
    scale = 1.0 + A.norm() ** 2
    if abs(disc) < DISC_TOL * scale:
        lam = tr / 2.0
        dim = 2 - numeric_rank(A.as_array() - lam * np.eye(2), tol)
        return EigenData((complex(lam), complex(lam)), (2,), (dim,), True)
    if disc > 0:
        r = math.sqrt(disc)
        # avoid cancellation in the smaller root
        big = (tr + math.copysign(r, tr)) / 2.0 if tr != 0 else r / 2.0
        small = det / big if big != 0 else -big
        ev = tuple(sorted((big, small), reverse=True))
        return EigenData((complex(ev[0]), complex(ev[1])), (1, 1), (1, 1), False)
    im = math.sqrt(-disc) / 2.0
    return EigenData((complex(tr / 2, im), complex(tr / 2, -im)), (1, 1), (1, 1), False)


@dataclass(frozen=True)
class RankProfile:
    rank: int
    rank_sym: int
    rank_skw: int
    eigenvalues: tuple
    eigenspace_dims: tuple
    canonical_class: str
    annulus_exponent: Fraction
    nikodym_exponent: Fraction

    def as_dict(self) -> dict:
        return {
            "rank": self.rank,
            "rank_sym": self.rank_sym,
            "rank_skw": self.rank_skw,
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "eigenspace_dims": list(self.eigenspace_dims),
            "canonical_class": self.canonical_class,
            "annulus_exponent": str(self.annulus_exponent),
            "nikodym_exponent": str(self.nikodym_exponent),
        }


def _class_from_ranks(rank_skw: int, rank: int) -> str:
    if rank == 0:
        return ZERO
    if rank_skw == 2:
        return SKW2
    if rank_skw == 1:
        return SKW1_RANK2 if rank == 2 else SKW1_RANK1
    return SKW0


def _class_from_eigen(ev: EigenData) -> str:
    if not ev.repeated:
        return SKW2
    lam = ev.eigenvalues[0].real
    dim = ev.eigenspace_dims[0]
    if abs(lam) <= DISC_TOL:
        return ZERO if dim == 2 else SKW1_RANK1
    return SKW0 if dim == 2 else SKW1_RANK2


def classify(A: Matrix2, tol: float = REL_TOL) -> RankProfile:
    if A.is_zero():
        return RankProfile(0, 0, 0, (0j, 0j), (2,), ZERO,
                           ANNULUS_EXPONENT[ZERO], Fraction(0))
    # ranks are scale invariant, so work with A/|A|
    An = A.scaled(1.0 / A.norm())
    rank = numeric_rank(An, tol)
    rank_sym = numeric_rank(symmetric_part(An), tol)
    rank_skw = numeric_rank(skew_symmetric_part(An), tol)
    ev = eigen_analysis(An, tol)
    by_rank = _class_from_ranks(rank_skw, rank)
    by_eigen = _class_from_eigen(ev)
    if by_rank != by_eigen:
        raise ClassificationError(
            f"rank path gives {by_rank}, eigen path gives {by_eigen} for {A}")
    scale = A.norm()
    eigenvalues = tuple(z * scale for z in ev.eigenvalues)
    return RankProfile(rank, rank_sym, rank_skw, eigenvalues, ev.eigenspace_dims,
                       by_rank, ANNULUS_EXPONENT[by_rank], NIKODYM_EXPONENT[rank_sym])


def is_orthogonal(Q, tol: float = 1e-10) -> bool:
    q = Q.as_array() if isinstance(Q, Matrix2) else np.asarray(Q, float)
    return bool(np.max(np.abs(q.T @ q - np.eye(q.shape[0]))) <= tol)


def orthogonal_conjugate(A: Matrix2, Q: Matrix2, tol: float = 1e-10) -> Matrix2:
    if not is_orthogonal(Q, tol):
        raise ValueError("Q is not orthogonal (Q^T Q != I)")
    return Q.T @ A @ Q


def complex_eigen_gap(A, s_range=(0.4, 2.5), samples: int = 512) -> float:
    """min over sampled s of the smallest singular value of A^T - s I."""
    a = A.as_array() if isinstance(A, Matrix2) else np.asarray(A, dtype=float)
    lo, hi = s_range
    if not 0 < lo <= hi:
        raise ValueError("s_range must be a closed interval of positive reals")
    d = a.shape[0]
    s = np.linspace(lo, hi, samples)
    mats = a.T[None, :, :] - s[:, None, None] * np.eye(d)[None]
    sv = np.linalg.svd(mats, compute_uv=False)
    return float(sv[:, -1].min())


def random_orthogonal(rng: np.random.Generator) -> Matrix2:
    th = rng.uniform(0, 2 * math.pi)
    Q = Matrix2.rotation(th)
    if rng.random() < 0.5:
        Q = Q @ Matrix2(1.0, 0.0, 0.0, -1.0)
    return Q
