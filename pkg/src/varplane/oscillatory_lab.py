"""The oscillatory operator T^lambda with phase <Ax, xi> + t|x + xi| and its diagnostics.

Application is matrix free. For a fixed pair of second coordinates
(x2, xi2) the sum over xi1 is a correlation in x1 + xi1 once the a11 term
is split as a11 x1 xi1 = a11 (b1^2 - x1^2 - xi1^2) / 2, so each t slice
costs O(n^3 log n) through FFTs instead of O(n^4).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .field_grid import ResolutionError, chi_radial, psi_radial
from .matrix_classify import Matrix2, classify

TWO_PI_I = 2j * math.pi
_CHUNK_BYTES = 64 * 1024 * 1024


def _grid_1d(center: float, half: float, h: float) -> np.ndarray:
    n = int(round(2 * half / h)) + 1
    return center + h * (np.arange(n) - (n - 1) / 2)


@dataclass(frozen=True)
class PhaseSpec:
    """Phi(x, t, xi) = <Ax, xi> + t|x + xi|."""
    A: Matrix2
    d: int = 2

    def phi(self, x, t, xi):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        Ax = x @ self.A.as_array().T
        return np.sum(Ax * xi, axis=-1) + t * np.linalg.norm(x + xi, axis=-1)

    def psi_circle(self, x, t, xi, eta):
        """<A(xi - eta), x> + t(|xi + x| - |eta + x|).

        The linear term pairs A with xi - eta rather than with x, so this is
        phi for A^T differenced in xi. The Schur kernel uses this form.
        """
        x = np.asarray(x, float)
        d = (np.asarray(xi, float) - np.asarray(eta, float)) @ self.A.as_array().T
        return (np.sum(d * x, axis=-1)
                + t * (np.linalg.norm(xi + x, axis=-1) - np.linalg.norm(eta + x, axis=-1)))


def fold_cutoff(eps: float, b0: Sequence[float] = (0.0, 1.0)) -> Callable:
    """Cutoff psi(|b1 - b01| / eps) psi((|b| + t) / eps) near a fold point."""
    def cut(B1, B2, t):
        return psi_radial((B1 - b0[0]) / eps) * psi_radial((np.hypot(B1, B2) + t) / eps)
    return cut


class DiscretizedOperator:
    """T^lambda restricted to square x and xi boxes that share the spacing h.

    Input fields live on the xi grid as arrays g[xi2, xi1]; outputs are
    F[t, x2, x1]. Inner products use cell weight h^2 on both sides and the
    t weights `wt` on the output.
    """

    def __init__(self, A: Matrix2, lam: float, x_center=(0.0, 0.0), x_half: float = 1.0,
                 xi_center=(0.0, 0.0), xi_half: float = 1.0, h: Optional[float] = None,
                 ts: Sequence[float] = (1.0,), wt: Optional[Sequence[float]] = None,
                 x_window: bool = False, xi_window: bool = False,
                 b_cutoff: Optional[Callable] = None, single: bool = False):
        self.A = A
        # single precision halves the FFT cost; fine for tol 1e-4 power iteration
        self.ctype = np.complex64 if single else np.complex128
        self.lam = float(lam)
        self.phase = PhaseSpec(A)
        h = 1.0 / (4.0 * self.lam) if h is None else float(h)
        if h > 1.0 / (4.0 * self.lam) * (1 + 1e-12):
            need = int(math.ceil(2 * max(x_half, xi_half) * 4 * self.lam)) + 1
            raise ResolutionError(
                f"spacing {h:.4g} does not resolve lambda={self.lam:g}; "
                f"need spacing <= {1 / (4 * self.lam):.4g}, i.e. {need} points per axis")
        self.h = h
        self.x1 = _grid_1d(x_center[0], x_half, h)
        self.x2 = _grid_1d(x_center[1], x_half, h)
        self.k1 = _grid_1d(xi_center[0], xi_half, h)
        self.k2 = _grid_1d(xi_center[1], xi_half, h)
        self.nx, self.nk = len(self.x1), len(self.k1)
        self.ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self.wt = np.ones(len(self.ts)) if wt is None else np.asarray(wt, dtype=float)
        if self.wt.shape != self.ts.shape:
            raise ValueError("t weights must match t nodes")
        self.x_center, self.x_half = tuple(x_center), x_half
        self.xi_center, self.xi_half = tuple(xi_center), xi_half
        self.b_cutoff = b_cutoff

        a11, a12, a21, a22 = A.a11, A.a12, A.a21, A.a22
        tp = TWO_PI_I * self.lam
        nx, nk = self.nx, self.nk
        self.L = sfft.next_fast_len(nx + nk - 1)
        b1 = self.x1[0] + self.k1[0] + h * np.arange(nx + nk - 1)
        b2 = self.x2[0] + self.k2[0] + h * np.arange(nx + nk - 1)
        B1, B2 = np.meshgrid(b1, b2, indexing="xy")   # [b2, b1]
        nb = np.hypot(B1, B2)
        self._KF, self._KFc = [], []
        for t in self.ts:
            ker = np.exp(tp * (0.5 * a11 * B1 ** 2 + t * nb)) * chi_radial(nb)
            if b_cutoff is not None:
                ker = ker * b_cutoff(B1, B2, t)
            self._KF.append(sfft.fft(ker, self.L, axis=1).astype(self.ctype))
            self._KFc.append(sfft.fft(np.conj(ker), self.L, axis=1).astype(self.ctype))
        self._pre = np.exp(-tp * 0.5 * a11 * self.k1 ** 2)
        self._mod = np.exp(tp * a12 * np.outer(self.x2, self.k1))      # [x2, xi1]
        self._post = np.exp(-tp * 0.5 * a11 * self.x1 ** 2)
        self._Q1 = np.exp(tp * a21 * np.outer(self.k2, self.x1)).astype(self.ctype)  # [xi2, x1]
        self._Q2 = np.exp(tp * a22 * np.outer(self.x2, self.k2)).astype(self.ctype)  # [x2, xi2]
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="xy")
        self._xamp = psi_radial(np.hypot(X1, X2))
        if x_window:
            self._xamp = self._xamp * psi_radial(
                np.hypot(X1 - x_center[0], X2 - x_center[1]) / x_half)
        K1, K2 = np.meshgrid(self.k1, self.k2, indexing="xy")
        self._gwin = np.ones((nk, nk))
        if xi_window:
            self._gwin = psi_radial(np.hypot(K1 - xi_center[0], K2 - xi_center[1]) / xi_half)
        self._chit = chi_radial(self.ts)
        self._ib = np.add.outer(np.arange(nx), np.arange(nk))
        per_row = nk * self.L * np.dtype(self.ctype).itemsize * 3
        self._rows = max(1, min(nx, _CHUNK_BYTES // per_row))

    # shapes ----------------------------------------------------------------
    @property
    def in_shape(self):
        return (self.nk, self.nk)

    @property
    def out_shape(self):
        return (len(self.ts), self.nx, self.nx)

    def _corr(self, KFrows, V, nin, nout):
        Vf = sfft.fft(V[..., ::-1], self.L, axis=-1)
        Vf *= KFrows
        return sfft.ifft(Vf, axis=-1, overwrite_x=True)[..., nin - 1:nin - 1 + nout]

    def apply(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=complex)
        if g.shape != self.in_shape:
            raise ValueError(f"input shape {g.shape} != {self.in_shape}")
        nx, nk = self.nx, self.nk
        base = ((g * self._gwin) * self._pre[None, :]).astype(self.ctype)
        out = np.empty(self.out_shape, dtype=complex)
        scale = self.lam * self.h ** 2
        for it in range(len(self.ts)):
            KF = self._KF[it]
            o = np.empty((nx, nx), dtype=complex)
            for a0 in range(0, nx, self._rows):
                a1 = min(nx, a0 + self._rows)
                V = base[None, :, :] * self._mod[a0:a1, None, :].astype(self.ctype)
                W = self._corr(KF[self._ib[a0:a1]], V, nk, nx)
                o[a0:a1] = np.einsum("ajx,jx,aj->ax", W, self._Q1, self._Q2[a0:a1])
            out[it] = scale * self._chit[it] * self._xamp * self._post[None, :] * o
        return out

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=complex)
        if y.shape != self.out_shape:
            raise ValueError(f"output shape {y.shape} != {self.out_shape}")
        nx, nk = self.nx, self.nk
        res = np.zeros((nk, nk), dtype=complex)
        cQ1, cQ2 = np.conj(self._Q1), np.conj(self._Q2)
        cmod = np.conj(self._mod * self._pre[None, :]).astype(self.ctype)
        for it in range(len(self.ts)):
            z = (np.conj(self.lam * self._chit[it] * self._xamp * self._post[None, :])
                 * y[it] * (self.wt[it] * self.h ** 2))
            KFc = self._KFc[it]
            for a0 in range(0, nx, self._rows):
                a1 = min(nx, a0 + self._rows)
                Z = z[a0:a1, None, :].astype(self.ctype) * cQ1[None, :, :] * cQ2[a0:a1, :, None]
                acc = self._corr(KFc[self._ib[a0:a1]], Z, nx, nk)
                res += np.einsum("ajk,ak->jk", acc, cmod[a0:a1])
        return self._gwin * res

    def in_norm(self, g) -> float:
        return float(self.h * np.linalg.norm(g))

    def out_norm(self, y) -> float:
        return float(self.h * math.sqrt(np.sum(self.wt[:, None, None] * np.abs(y) ** 2)))

    # dense oracle ------------------------------------------------------------
    def dense(self, weighted: bool = False) -> np.ndarray:
        """Materialize the kernel matrix; rows (t, x2, x1), columns (xi2, xi1)."""
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="xy")
        K1, K2 = np.meshgrid(self.k1, self.k2, indexing="xy")
        X = np.stack([X1.ravel(), X2.ravel()], 1)
        K = np.stack([K1.ravel(), K2.ravel()], 1)
        B = X[:, None, :] + K[None, :, :]
        nb = np.linalg.norm(B, axis=2)
        lin = (X @ self.A.as_array().T) @ K.T
        rows = []
        for it, t in enumerate(self.ts):
            amp = chi_radial(nb)
            if self.b_cutoff is not None:
                amp = amp * self.b_cutoff(B[..., 0], B[..., 1], t)
            G = (self.lam * self.h ** 2 * np.exp(TWO_PI_I * self.lam * (lin + t * nb)) * amp
                 * self._chit[it] * self._xamp.ravel()[:, None] * self._gwin.ravel()[None, :])
            if weighted:
                G = G * math.sqrt(self.wt[it])
            rows.append(G)
        return np.vstack(rows)


def apply_T_lambda(op: DiscretizedOperator, g) -> np.ndarray:
    return op.apply(g)


@dataclass
class OpNormResult:
    value: float
    iterations: int
    residual: float
    converged: bool


def opnorm(op: DiscretizedOperator, tol: float = 1e-4, max_iters: int = 200,
           seed: int = 0) -> OpNormResult:
    """Largest singular value by power iteration on the normal operator."""
    rng = np.random.default_rng(seed)
    g = rng.random(op.in_shape) + 1j * rng.random(op.in_shape)
    g /= op.in_norm(g)
    prev = None
    sigma = 0.0
    for k in range(1, max_iters + 1):
        y = op.apply(g)
        sigma = op.out_norm(y)
        z = op.adjoint(y)
        zn = op.in_norm(z)
        if zn == 0.0:
            return OpNormResult(0.0, k, 0.0, True)
        resid = op.in_norm(z - sigma ** 2 * g) / max(sigma ** 2, 1e-300)
        if prev is not None and abs(sigma - prev) <= tol * sigma:
            return OpNormResult(sigma, k, resid, True)
        prev = sigma
        g = z / zn
    return OpNormResult(sigma, max_iters, resid, False)


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepConfig:
    """Boxes and frozen t used by lambda_sweep.

    The default puts the x box at the origin and the xi box around (0, 1), so
    b = x + xi covers the point (0, 1) where the mixed Hessian of I_c folds
    at t = -1.
    """
    x_center: tuple = (0.0, 0.0)
    x_half: float = 0.5
    xi_center: tuple = (0.0, 1.0)
    xi_half: float = 0.5
    ts: tuple = (-1.0,)
    single: bool = True
    tol: float = 1e-4
    max_iters: int = 200

    def operator(self, A: Matrix2, lam: float) -> DiscretizedOperator:
        return DiscretizedOperator(A, lam, self.x_center, self.x_half, self.xi_center,
                                   self.xi_half, ts=self.ts, single=self.single)

    def memory_bytes(self, lam: float) -> int:
        n = int(round(2 * max(self.x_half, self.xi_half) * 4 * lam)) + 1
        item = 8 if self.single else 16
        return int(len(self.ts) * 2 * (2 * n) ** 2 * item + _CHUNK_BYTES * 4)


@dataclass
class SweepRow:
    preset: str
    j: int
    lam: float
    opnorm: float
    iters: int
    residual: float

    def as_list(self):
        return [self.preset, self.j, self.lam, self.opnorm, self.iters, self.residual]


SWEEP_COLUMNS = ("preset", "j", "lambda", "opnorm", "iters", "residual")


def lambda_sweep(A: Matrix2, j_range: Sequence[int] = range(3, 8), preset: str = "",
                 config: SweepConfig = SweepConfig(), seed: int = 0, tolerance: float = 0.1,
                 progress: Optional[Callable] = None):
    """opnorm at lambda = 2^j and its log2 slope against the class prediction."""
    from .scaling_estimator import ScalingReport, fit_exponent, verdict
    js = list(j_range)
    rows = []
    for j in js:
        lam = 2.0 ** j
        res = opnorm(config.operator(A, lam), config.tol, config.max_iters, seed)
        rows.append(SweepRow(preset or str(A), j, lam, res.value, res.iterations, res.residual))
        if progress is not None:
            progress(rows[-1])
    predicted = float(classify(A).annulus_exponent)
    values = [r.opnorm for r in rows]
    # value ~ lambda^c, so fit against scale 1/lambda
    scales = [1.0 / r.lam for r in rows]
    try:
        slope, stderr = fit_exponent(scales, values)
    except ValueError:
        slope, stderr = float("nan"), float("nan")
    rep = ScalingReport(preset=preset or str(A), method="opnorm", scales=[r.lam for r in rows],
                        values=values, slope=slope, stderr=stderr, predicted=predicted,
                        verdict=verdict(slope, stderr, predicted, tolerance),
                        anchor="oscillatory-norm")
    rep.rows = rows
    return rep


# ---------------------------------------------------------------------------
# kernel of the normal operator and Schur row sums

SCHUR_U = 24.0      # |lambda s| beyond this the t integral is below 1e-5 of its peak


class _TTable:
    """G(r1, u) = int chi(t)^2 chi(|t| r1) chi(|t| r2) e^{2 pi i t u} dt over |t| in [1/2, 2],
    with r2 = r1 - u / lambda. Real because the amplitude is even in t."""

    def __init__(self, lam: float, r_max: float = 4.5, dr: float = 1 / 64,
                 du: float = 1 / 64, U: float = SCHUR_U, nodes: int = 160):
        self.lam, self.dr, self.du, self.U = lam, dr, du, U
        self.r = np.arange(0.0, r_max + dr / 2, dr)
        self.u = np.arange(-U, U + du / 2, du)
        tn, tw = np.polynomial.legendre.leggauss(nodes)
        t = 1.25 + 0.75 * tn
        w = 0.75 * tw * chi_radial(t) ** 2
        C = np.cos(2 * math.pi * np.outer(self.u, t))
        self.G = np.empty((len(self.r), len(self.u)))
        # one r1 row at a time keeps the (u, t) work array small
        for i, r1 in enumerate(self.r):
            v = w * chi_radial(t * r1)
            live = v != 0
            if not np.any(live):
                self.G[i] = 0.0
                continue
            r2 = r1 - self.u / lam
            amp = chi_radial(np.outer(r2, t[live]))
            self.G[i] = 2.0 * np.sum(amp * C[:, live] * v[live], axis=1)

    def __call__(self, r1, u):
        fi = np.clip(r1 / self.dr, 0, len(self.r) - 1 - 1e-9)
        fj = (u + self.U) / self.du
        inside = (fj >= 0) & (fj <= len(self.u) - 1)
        fj = np.clip(fj, 0, len(self.u) - 1 - 1e-9)
        i0, j0 = fi.astype(int), fj.astype(int)
        a, b = fi - i0, fj - j0
        G = self.G
        val = ((1 - a) * (1 - b) * G[i0, j0] + a * (1 - b) * G[i0 + 1, j0]
               + (1 - a) * b * G[i0, j0 + 1] + a * b * G[i0 + 1, j0 + 1])
        return np.where(inside, val, 0.0)


def _kernel_direct(A, lam, xi, eta, table, h=1 / 64):
    ax = np.arange(-1.0, 1.0 + h / 2, h)
    X1, X2 = np.meshgrid(ax, ax, indexing="xy")
    amp = psi_radial(np.hypot(X1, X2)) ** 2
    m = amp > 0
    x1, x2, amp = X1[m], X2[m], amp[m]
    r1 = np.hypot(x1 + xi[0], x2 + xi[1])
    r2 = np.hypot(x1 + eta[0], x2 + eta[1])
    az = A.as_array() @ (np.asarray(xi) - np.asarray(eta))
    ph = np.exp(TWO_PI_I * lam * (az[0] * x1 + az[1] * x2))
    return complex(h * h * np.sum(amp * ph * table(r1, lam * (r1 - r2))))


def _kernel_elliptic(A, lam, xi, eta, table, refine=1):
    # confocal coordinates with foci -xi and -eta: r1 = f(cosh mu - cos nu),
    # r2 = f(cosh mu + cos nu), dx = f^2 (sinh^2 mu + sin^2 nu) dmu dnu.
    # mu is traded for l = f sinh(mu), the distance along the bisector.
    xi, eta = np.asarray(xi, float), np.asarray(eta, float)
    zeta = xi - eta
    d = float(np.hypot(*zeta))
    f = d / 2
    c0 = -(xi + eta) / 2
    e = -zeta / d
    ep = np.array([-e[1], e[0]])
    az = A.as_array() @ zeta
    naz = float(np.hypot(*az))
    kappa = table.U / (lam * d)
    nc0 = float(np.hypot(*c0))
    # |x| <= 1 and r1 + r2 = 2 f cosh(mu) <= |xi| + |eta| + 2
    ch_hi = min(math.sqrt(1 + ((1 + nc0) / f) ** 2),
                (float(np.hypot(*xi)) + float(np.hypot(*eta)) + 2) / d)
    ch_lo = max(1.0, (nc0 - 1) / f)
    if ch_hi <= ch_lo:
        return 0j
    l_lo = f * math.sqrt(ch_lo ** 2 - 1)
    l_hi = f * math.sqrt(ch_hi ** 2 - 1)
    reach = f * ch_hi
    if kappa >= 1:
        bands = [(0.0, 2 * math.pi, l_lo, l_hi)]
    else:
        w = math.asin(kappa)
        # near nu = pi/2 the branch is close to the line c0 + l e_perp
        p = -float(c0 @ ep)
        slack = 1.0 + reach * kappa
        bands = [(math.pi / 2 - w, math.pi / 2 + w,
                  max(l_lo, p - slack), min(l_hi, p + slack)),
                 (3 * math.pi / 2 - w, 3 * math.pi / 2 + w,
                  max(l_lo, -p - slack), min(l_hi, -p + slack))]
    dnu = min(1.0 / (8 * lam * d), 1.0 / (8 * (lam * naz * reach + 1))) / refine
    total = 0j
    for lo, hi, la, lb in bands:
        if lb <= la:
            continue
        nl = refine * int(math.ceil((lb - la) * 4 * (lam * naz + 4))) + 2
        ln, lw = np.polynomial.legendre.leggauss(min(nl, 4096))
        ell = la + 0.5 * (lb - la) * (ln + 1)
        dmu = 0.5 * (lb - la) * lw / np.sqrt(f * f + ell * ell)
        mu = np.arcsinh(ell / f)
        # Gauss panels in nu, 4 nodes per 4 dnu
        npan = int(math.ceil((hi - lo) / (4 * dnu)))
        gn, gw = np.polynomial.legendre.leggauss(4)
        pw = (hi - lo) / npan
        nu = (lo + pw * (np.arange(npan)[:, None] + 0.5 * (gn[None, :] + 1))).ravel()
        wn = np.tile(0.5 * pw * gw, npan)
        M, N = np.meshgrid(mu, nu, indexing="ij")
        ch, sh = np.cosh(M), np.sinh(M)
        cn, sn = np.cos(N), np.sin(N)
        px = f * ch * cn
        py = f * sh * sn
        x1 = c0[0] + px * e[0] + py * ep[0]
        x2 = c0[1] + px * e[1] + py * ep[1]
        rr = x1 * x1 + x2 * x2
        m = rr < 1.0
        if not np.any(m):
            continue
        amp = psi_radial(np.sqrt(rr[m])) ** 2
        r1 = f * (ch - cn)[m]
        r2 = f * (ch + cn)[m]
        jac = f * f * (sh * sh + sn * sn)[m] * (dmu[:, None] * wn[None, :])[m]
        ph = np.exp(TWO_PI_I * lam * (az[0] * x1[m] + az[1] * x2[m]))
        total += np.sum(jac * amp * ph * table(r1, lam * (r1 - r2)))
    return complex(total)


def schur_kernel(A: Matrix2, lam: float, xi, eta, table: Optional[_TTable] = None) -> complex:
    """K(xi, eta): the (x, t) integral with amplitude psi(x)^2 chi(t)^2 chi(t|xi+x|) chi(t|eta+x|).

    t is integrated first through a tabulated transform, then x by quadrature
    in confocal coordinates restricted to the strip where that transform is
    not negligible.
    """
    # chi(t r) with |t| in [1/2, 2] needs r in (1/4, 4), and |x| < 1
    if min(math.hypot(*xi), math.hypot(*eta)) >= 5.0:
        return 0j
    if table is None:
        table = _TTable(lam)
    d = math.hypot(xi[0] - eta[0], xi[1] - eta[1])
    if lam * d <= 2.0:
        return _kernel_direct(A, lam, xi, eta, table)
    return _kernel_elliptic(A, lam, xi, eta, table)


def polar_xi_nodes(eta, lam: float, rho_max: Optional[float] = None, angular: int = 16,
                   inner: int = 6, per_panel: int = 4):
    """Quadrature nodes around eta: Gauss panels in rho graded from 1/lambda outwards.

    K(xi, eta) vanishes unless ||xi + x| - |eta + x|| is O(1/lambda) for some
    |x| <= 1, which caps |xi - eta| by 2(|eta| + 1) plus that slack.
    """
    eta = np.asarray(eta, float)
    if rho_max is None:
        rho_max = min(2 * (float(np.hypot(*eta)) + 1) + SCHUR_U / lam,
                      float(np.hypot(*eta)) + 5.0)
    edges = [0.0, 4.0 / lam]
    while edges[-1] < rho_max:
        edges.append(min(rho_max, 2 * edges[-1]))
    rho, wr = [], []
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        gn, gw = np.polynomial.legendre.leggauss(inner if k == 0 else per_panel)
        rho.append(a + (b - a) * (gn + 1) / 2)
        wr.append((b - a) / 2 * gw)
    rho, wr = np.concatenate(rho), np.concatenate(wr)
    th = 2 * math.pi * (np.arange(angular) + 0.5) / angular
    R, TH = np.meshgrid(rho, th, indexing="ij")
    pts = eta + np.stack([R * np.cos(TH), R * np.sin(TH)], -1).reshape(-1, 2)
    w = (wr[:, None] * rho[:, None] * (2 * math.pi / angular) * np.ones_like(TH)).ravel()
    return pts, w


@dataclass
class KernelRow:
    eta: tuple
    lam: float
    xi: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @property
    def row_sum(self) -> float:
        return float(np.sum(self.weights * self.values))


def kernel_Psi_circle(A: Matrix2, lam: float, eta, xi=None, weights=None,
                      table: Optional[_TTable] = None) -> KernelRow:
    """lambda^2 |K(xi, eta)| on a xi node set and its weighted sum over xi.

    The lambda^2 factor undoes the normalization of K, so the sum is a
    sampled Schur row sum of the normal operator of T^lambda itself.
    """
    lam = float(lam)
    if xi is None and math.hypot(*eta) >= 5.0:
        z = np.zeros((0, 2))
        return KernelRow(tuple(np.asarray(eta, float)), lam, z, np.zeros(0), np.zeros(0))
    if table is None:
        table = _TTable(lam)
    if xi is None:
        xi, weights = polar_xi_nodes(eta, lam)
    xi = np.asarray(xi, float)
    weights = np.asarray(weights, float)
    vals = np.array([abs(schur_kernel(A, lam, p, eta, table)) for p in xi]) * lam ** 2
    return KernelRow(tuple(np.asarray(eta, float)), lam, xi, weights, vals)


# ---------------------------------------------------------------------------
# sublevel sets of quadratic forms

@dataclass(frozen=True)
class SublevelSpec:
    """{xi in the unit ball : |<M xi, xi>| <= threshold(lambda)}, threshold = 1/lambda."""
    M: Matrix2
    domain: str = "ball"

    def __post_init__(self):
        if abs(self.M.a12 - self.M.a21) > 1e-12:
            raise ValueError("quadratic form matrix must be symmetric")
        if self.domain != "ball":
            raise ValueError(f"unsupported domain {self.domain!r}")

    @staticmethod
    def threshold(lam: float) -> float:
        return 1.0 / lam

    def diagonalize(self):
        """(Q, (c1, c2)) with Q^T M Q = diag(c1, c2)."""
        c, Q = np.linalg.eigh(self.M.as_array())
        return Q, (float(c[0]), float(c[1]))


@dataclass
class SublevelEstimate:
    measure: float
    stderr: float
    samples: int
    hits: int


_MC_BATCH = 1 << 16


def sublevel_measure(spec: SublevelSpec, lam: float, mc_samples: int = 10 ** 6,
                     seed: int = 0) -> SublevelEstimate:
    """Monte Carlo measure with a binomial standard error.

    Samples come in fixed batches, each with its own child seed, so the
    estimate does not depend on how batches are scheduled.
    """
    if mc_samples < 10 ** 4:
        raise ValueError("mc_samples must be at least 10^4")
    tau = spec.threshold(lam)
    m = spec.M
    nb = -(-mc_samples // _MC_BATCH)
    children = np.random.SeedSequence(seed).spawn(nb)
    hits = 0
    left = mc_samples
    for ss in children:
        n = min(_MC_BATCH, left)
        left -= n
        rng = np.random.default_rng(ss)
        r = np.sqrt(rng.random(n))
        th = 2 * math.pi * rng.random(n)
        x, y = r * np.cos(th), r * np.sin(th)
        q = m.a11 * x * x + (m.a12 + m.a21) * x * y + m.a22 * y * y
        hits += int(np.count_nonzero(np.abs(q) <= tau))
    p = hits / mc_samples
    return SublevelEstimate(math.pi * p, math.pi * math.sqrt(p * (1 - p) / mc_samples),
                            mc_samples, hits)


def _interval_len(lo, hi):
    return np.maximum(hi - lo, 0.0)


def _column_length(v1, c1, c2, tau):
    """Exact length of {v2 : |c1 v1^2 + c2 v2^2| <= tau, v1^2 + v2^2 <= 1}."""
    half = np.sqrt(np.maximum(1 - v1 * v1, 0.0))
    # (-tau - c1 v1^2) <= c2 v2^2 <= (tau - c1 v1^2)
    a = -tau - c1 * v1 * v1
    b = tau - c1 * v1 * v1
    if c2 == 0.0:
        return np.where((a <= 0) & (b >= 0), 2 * half, 0.0)
    lo, hi = (a / c2, b / c2) if c2 > 0 else (b / c2, a / c2)
    # v2^2 in [lo, hi] intersected with [0, half^2]
    lo = np.clip(lo, 0.0, None)
    hi = np.minimum(hi, half * half)
    outer = np.sqrt(np.clip(hi, 0.0, None))
    inner = np.sqrt(np.clip(lo, 0.0, None))
    return np.where(hi >= lo, 2 * _interval_len(inner, outer), 0.0)


def sublevel_grid_oracle(spec: SublevelSpec, lam: float, n: int = 128) -> float:
    """Deterministic quadrature of the same set in eigen coordinates.

    For each v1 the v2 section is at most two intervals of exact length.
    The section length is smooth in v1 between the points where one of
    its defining inequalities switches, so v1 is integrated with n Gauss
    nodes on each panel between those points.
    """
    _, (c1, c2) = spec.diagonalize()
    tau = spec.threshold(lam)
    # squared breakpoints u = v1^2
    us = []
    if c1 != 0.0:
        us += [tau / c1, -tau / c1]
    if c2 != c1:
        us += [(c2 - tau) / (c2 - c1), (c2 + tau) / (c2 - c1)]
    cuts = {0.0}
    for u in us:
        if 0.0 < u < 1.0:
            cuts.add(math.sqrt(u))
    pts = sorted({-1.0, 1.0} | cuts | {-c for c in cuts})
    gx, gw = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v1 = lo + (hi - lo) * (gx + 1) / 2
        total += 0.5 * (hi - lo) * float(gw @ _column_length(v1, c1, c2, tau))
    return total


# ---------------------------------------------------------------------------
# mixed Hessian and folds

class SingularConfigurationError(ValueError):
    pass


def _H(b):
    b1, b2 = b
    nb = math.hypot(b1, b2)
    return np.array([[b2 * b2, -b1 * b2], [-b1 * b2, b1 * b1]]) / nb ** 3


@dataclass
class MixedHessian:
    matrix: np.ndarray       # rows x1, x2, t; columns xi1, xi2
    det_x1x2: float
    det_x1t: float
    det_x2t: float


def _check_b(b):
    b = np.asarray(b, dtype=float)
    if b.shape != (2,) or math.hypot(*b) == 0:
        raise SingularConfigurationError("b = x + xi must be a nonzero 2-vector")
    return b


def mixed_hessian(A: Matrix2, b, t: float) -> MixedHessian:
    """Second derivatives in (x1, x2, t) and (xi1, xi2) of sum a_ij x_i xi_j + t|x + xi|.

    Row i of the 2x2 block is a_i. + t H_i. with H the Hessian of |b|;
    the t row is b/|b|. The three minors come from their closed forms.
    """
    b = _check_b(b)
    a = A.as_array()
    nb = math.hypot(*b)
    M = np.vstack([a + t * _H(b), b / nb])
    q = float(b @ ((a + a.T) / 2) @ b)
    d12 = A.det() + t / nb ** 3 * q
    d1t = (a[0, 0] * b[1] - a[0, 1] * b[0] + t * b[1] / nb) / nb
    d2t = (a[1, 0] * b[1] - a[1, 1] * b[0] - t * b[0] / nb) / nb
    return MixedHessian(M, d12, d1t, d2t)


def phase_bilinear(A: Matrix2, x, t, xi) -> float:
    """sum a_ij x_i xi_j + t|x + xi|, the phase whose mixed Hessian mixed_hessian returns."""
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    return float(x @ A.as_array() @ xi + t * math.hypot(*(x + xi)))


def grad_det(A: Matrix2, b, t: float) -> np.ndarray:
    """Gradient in b of det(A + t H(b)); equal to grad_x and to grad_y of the determinant."""
    b = _check_b(b)
    a = A.as_array()
    S = a + a.T
    nb2 = float(b @ b)
    q = float(b @ (S / 2) @ b)
    return t * (nb2 * (S @ b) - 3 * q * b) / nb2 ** 2.5


@dataclass
class FoldReport:
    status: str                    # "fold", "two-sided fold", "nondegenerate", "degenerate"
    singular_values: tuple
    v: Optional[np.ndarray] = None  # right kernel, unit length
    u: Optional[np.ndarray] = None  # left kernel, unit length
    dv: Optional[float] = None      # <v, grad_x> det along v scaled to v1 = 1
    du: Optional[float] = None      # <u, grad_y> det along u scaled to u1 = -1

    @property
    def two_sided(self) -> bool:
        return self.status == "two-sided fold"


def _scaled(w, first):
    # representative with first coordinate `first`, if that coordinate is usable
    if abs(w[0]) > 1e-8:
        return w * (first / w[0])
    return w


def fold_check(A: Matrix2, b, t: float, tol: float = 1e-6) -> FoldReport:
    b = _check_b(b)
    M = mixed_hessian(A, b, t).matrix[:2]
    U, s, Vt = np.linalg.svd(M)
    sv = (float(s[0]), float(s[1]))
    if s[0] < tol:
        return FoldReport("degenerate", sv)
    if s[1] >= tol:
        return FoldReport("nondegenerate", sv)
    v = Vt[1] * np.sign(Vt[1][np.argmax(np.abs(Vt[1]))])
    u = U[:, 1] * np.sign(U[:, 1][np.argmax(np.abs(U[:, 1]))])
    if abs(v[0]) > 1e-8:
        v = v * np.sign(v[0])
    if abs(u[0]) > 1e-8:
        u = -u * np.sign(u[0])
    g = grad_det(A, b, t)
    dv = float(_scaled(v, 1.0) @ g)
    du = float(_scaled(u, -1.0) @ g)
    both = abs(dv) >= tol and abs(du) >= tol
    return FoldReport("two-sided fold" if both else "fold", sv, v, u, dv, du)


# ---------------------------------------------------------------------------
# extreme frequency ratios

@dataclass
class ExtremeSchurReport:
    ratio: float
    lam: float
    etas: np.ndarray
    row_sums: np.ndarray
    predicted: float

    @property
    def row_sum(self) -> float:
        return float(np.max(self.row_sums))


def _sector_amp(Z, e, width):
    n = np.hypot(Z[..., 0], Z[..., 1])
    out = np.zeros(n.shape)
    m = n > 0
    d = np.hypot(Z[..., 0][m] / n[m] - e[0], Z[..., 1][m] / n[m] - e[1])
    out[m] = psi_radial(d / width)
    return out


def _extreme_amp(Q, t, ratio, e, width):
    """chi(t|q|/ratio) times the angular cutoff, evaluated only where both can be nonzero."""
    nq = np.hypot(Q[..., 0], Q[..., 1])
    r = t * nq / ratio
    cos_max = 1 - width * width / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = (Q[..., 0] * e[0] + Q[..., 1] * e[1]) / nq
    m = (r > 0.5) & (r < 2.0) & (cosang > cos_max)
    amp = np.zeros(nq.shape)
    if np.any(m):
        amp[m] = chi_radial(r[m]) * _sector_amp(Q[m], e, width)
    return amp, nq


def kernel_schur_extreme(A: Matrix2, ratio: float, t: float = 1.0, etas=None,
                         theta: float = 0.0, j: int = 2, width: float = 1 / 8,
                         h: float = 1 / 32) -> ExtremeSchurReport:
    """Row sums int |T_t(xi, eta)| dxi of the normal kernel localized to |xi + x| ~ ratio.

    lambda = 2^j / ratio. The amplitude is psi(x) chi(t|xi+x|/ratio)
    chi(t|eta+x|/ratio) times angular cutoffs of half-width `width` around
    e(theta) for both xi + x and eta + x.
    """
    if abs(A.det()) <= 1e-12 * max(A.norm(), 1.0) ** 2:
        raise ValueError("kernel_schur_extreme needs an invertible A")
    if not (ratio <= 1 / 8 or ratio >= 8):
        raise ValueError("ratio must be <= 1/8 or >= 8")
    lam = 2.0 ** j / ratio
    e = np.array([math.cos(theta), math.sin(theta)])
    a = A.as_array()
    small = ratio <= 1 / 8
    if etas is None:
        ring = 0.4 * np.stack([np.cos(np.arange(8) * math.pi / 4),
                               np.sin(np.arange(8) * math.pi / 4)], -1)
        etas = ring if small else ring + (ratio / t) * e
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    sums = []
    for eta in etas:
        if small:
            # x = -eta + ratio u, xi = eta + ratio v; dx dxi = ratio^4 du dv
            R = 2.2 / abs(t)
            ax = np.arange(-R, R + h / 2, h)
            U1, U2 = np.meshgrid(ax, ax, indexing="xy")
            U = np.stack([U1.ravel(), U2.ravel()], -1)
            X = -eta + ratio * U
            amp_x = psi_radial(np.hypot(X[:, 0], X[:, 1])) * _extreme_amp(U, t, 1.0, e, width)[0]
            keep = amp_x > 0
            U, X, amp_x = U[keep], X[keep], amp_x[keep]
            if not len(U):
                sums.append(0.0)
                continue
            hv = 2 * h
            span = U.max(axis=0) - U.min(axis=0)
            V1, V2 = np.meshgrid(np.arange(-span[0], span[0] + hv / 2, hv),
                                 np.arange(-span[1], span[1] + hv / 2, hv), indexing="xy")
            V = np.stack([V1.ravel(), V2.ravel()], -1)
            zeta = ratio * V
            sums.append(_extreme_rows(a, lam, t, ratio, X, U * ratio, amp_x, zeta, e, width)
                        * ratio ** 2 * h * h * ratio ** 2 * hv * hv)
        else:
            ax = np.arange(-1.0, 1.0 + h / 2, h)
            X1, X2 = np.meshgrid(ax, ax, indexing="xy")
            X = np.stack([X1.ravel(), X2.ravel()], -1)
            P = eta + X
            amp_x = psi_radial(np.hypot(X[:, 0], X[:, 1])) * _extreme_amp(P, t, ratio, e, width)[0]
            keep = amp_x > 0
            X, P, amp_x = X[keep], P[keep], amp_x[keep]
            if not len(X):
                sums.append(0.0)
                continue
            smin = float(np.linalg.svd(a, compute_uv=False)[-1])
            Rz = 8.0 / (lam * smin)
            hz = 1.0 / (4 * lam)
            bz = np.arange(-Rz, Rz + hz / 2, hz)
            Z1, Z2 = np.meshgrid(bz, bz, indexing="xy")
            zeta = np.stack([Z1.ravel(), Z2.ravel()], -1)
            sums.append(_extreme_rows(a, lam, t, ratio, X, P, amp_x, zeta, e, width)
                        * h * h * hz * hz)
    sums = np.asarray(sums)
    return ExtremeSchurReport(ratio, lam, etas, lam ** 2 * sums,
                              ratio ** 2 if small else 1.0)


def _extreme_rows(a, lam, t, ratio, X, P, amp_x, zeta, e, width, chunk=2048):
    """sum over zeta of |sum over x of amp e^{2 pi i lambda Phi}| (unweighted).

    P holds eta + x for the x nodes; xi + x = P + zeta.
    """
    total = 0.0
    base = TWO_PI_I * lam * t * np.hypot(P[:, 0], P[:, 1])
    for s in range(0, zeta.shape[0], chunk):
        Z = zeta[s:s + chunk]
        Q = P[None, :, :] + Z[:, None, :]
        amp, nq = _extreme_amp(Q, t, ratio, e, width)
        live = np.any(amp > 0, axis=1)
        if not np.any(live):
            continue
        Q, nq, amp, Zl = Q[live], nq[live], amp[live], Z[live]
        atz = Zl @ a             # A^T zeta, as rows
        ph = TWO_PI_I * lam * (atz @ X.T + t * nq) - base[None, :]
        total += float(np.sum(np.abs(np.sum(amp * amp_x[None, :] * np.exp(ph), axis=1))))
    return total
