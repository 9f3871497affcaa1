"""End-to-end acceptance checks; each test prints one PASS/FAIL line in the summary.

Expected exponents below are written out by hand from the rank rules, not
read back from the classifier.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from varplane.cli_runner import main
from varplane.field_grid import Grid3, ScalarField3, chi_radial
from varplane.matrix_classify import (SKW0, SKW1_RANK1, SKW1_RANK2, SKW2, Matrix2, classify,
                                      numeric_rank, orthogonal_conjugate, parse_matrix,
                                      random_orthogonal)
from varplane.maximal_ops import DilationSet, annulus_maximal, witness_probe
from varplane.oscillatory_lab import (DiscretizedOperator, SublevelSpec, SweepConfig, fold_check,
                                      kernel_Psi_circle, kernel_schur_extreme, lambda_sweep,
                                      mixed_hessian, opnorm, phase_bilinear,
                                      sublevel_grid_oracle, sublevel_measure)
from varplane.scaling_estimator import (adversarial_lower_bound, fit_exponent, witness_floor,
                                        witness_lower_bound)

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])

EXPECTED = {
    "E": (SKW2, Fraction(0), Fraction(1, 4)),
    "I": (SKW0, Fraction(1, 2), Fraction(0)),
    "Ic:1": (SKW1_RANK2, Fraction(1, 6), Fraction(0)),
    "Ic:-3": (SKW1_RANK2, Fraction(1, 6), Fraction(0)),
    "NIL:1": (SKW1_RANK1, Fraction(1, 4), Fraction(0)),
    "SYM:2": (SKW2, Fraction(0), Fraction(0)),
}


def slope_of(lams, values):
    return float(np.polyfit(np.log2(lams), np.log2(values), 1)[0])


# ------------------------------------------------------------------ 1

def test_c1_classification(criterion):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    errors = 0
    for text, want in EXPECTED.items():
        A = parse_matrix(text)
        mats = [A] + [orthogonal_conjugate(A, random_orthogonal(rng)) for _ in range(100)]
        for B in mats:
            p = classify(B)
            errors += (p.canonical_class, p.annulus_exponent, p.nikodym_exponent) != want
    dt = time.perf_counter() - t0
    criterion(1, errors == 0 and dt < 1.0, f"classification errors={errors} runtime={dt:.2f}s")


# ------------------------------------------------------------------ 2

def fd_mixed(A, x, t, xi, h=1e-4):
    z0 = np.array([x[0], x[1], t])
    out = np.empty((3, 2))
    for i in range(3):
        for j in range(2):
            acc = 0.0
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                z = z0.copy()
                z[i] += si * h
                e = np.array(xi, float)
                e[j] += sj * h
                acc += si * sj * phase_bilinear(A, z[:2], z[2], e)
            out[i, j] = acc / (4 * h * h)
    return out


def test_c2_hessian_identities(criterion):
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        A = Matrix2.from_array(rng.normal(size=(2, 2)))
        r, th = rng.uniform(0.5, 2), rng.uniform(0, 2 * math.pi)
        b = np.array([r * math.cos(th), r * math.sin(th)])
        t = float(rng.uniform(-2, 2))
        x = rng.uniform(-0.5, 0.5, 2)
        F = fd_mixed(A, x, t, b - x)
        H = mixed_hessian(A, b, t)
        got = np.array([H.det_x1x2, H.det_x1t, H.det_x2t])
        want = np.array([np.linalg.det(F[[0, 1]]), np.linalg.det(F[[0, 2]]),
                         np.linalg.det(F[[1, 2]])])
        scale = max(1.0, float(np.max(np.abs(F))) ** 2)
        worst = max(worst, float(np.max(np.abs(got - want))) / scale)
    e_det = max(abs(mixed_hessian(Matrix2.E(), b, t).det_x1x2 - 1.0)
                for b, t in (((0.3, 1.2), 0.7), ((-2.0, 0.1), -1.5), ((1.0, 1.0), 3.0)))
    sym = 0.0
    for c in (0.5, 1.0, 2.0):
        for b in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
            t = math.sqrt(2) * c * math.copysign(1.0, b[1] / b[0])
            H = mixed_hessian(Matrix2.sym(c), b, t)
            sym = max(sym, abs(H.det_x1x2), abs(H.det_x1t), abs(H.det_x2t))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and e_det == 0.0 and sym < 1e-10 and dt < 1.0
    criterion(2, ok, f"fd rel err={worst:.2e} |det_E - 1|={e_det:.1e} "
                     f"SYM minors={sym:.1e} runtime={dt:.2f}s")


# ------------------------------------------------------------------ 3

def test_c3_fold(criterion):
    t0 = time.perf_counter()
    ok, notes = True, []
    b, t = np.array([0.0, 1.0]), -1.0
    for c in (0.5, 1.0, 2.0):
        rep = fold_check(Matrix2.Ic(c), b, t)
        v_pred = np.array([1.0, 0.0])
        u_pred = np.array([-1.0, c]) / math.hypot(1.0, c)
        nb = float(np.hypot(*b))
        pdv = c * t * b[1] ** 3 / nb ** 5
        pdu = -2 * c * t * b[1] ** 3 / nb ** 5
        good = (rep.two_sided and np.max(np.abs(rep.v - v_pred)) <= 1e-3
                and np.max(np.abs(rep.u - u_pred)) <= 1e-3
                and abs(rep.dv - pdv) <= 0.05 * abs(pdv) and abs(rep.du - pdu) <= 0.05 * abs(pdu))
        ok &= good
        notes.append(f"c={c}: {rep.status} dv={rep.dv:.4g} du={rep.du:.4g}")
    dt = time.perf_counter() - t0
    criterion(3, ok and dt < 1.0, "; ".join(notes) + f" runtime={dt:.2f}s")


# ------------------------------------------------------------------ 4

def test_c4_sublevel_scaling(criterion):
    t0 = time.perf_counter()
    lams = [2.0 ** j for j in range(4, 13)]
    ok, notes = True, []
    for k, (text, pred, tol) in enumerate((("E", -1.0, 0.05), ("NIL:1", -0.5, 0.05),
                                           ("I", 0.0, 0.02))):
        A = parse_matrix(text)
        M = Matrix2.from_array(ROT @ A.as_array() + (ROT @ A.as_array()).T)
        spec = SublevelSpec(M)
        vals, worst = [], 0.0
        for i, lam in enumerate(lams):
            est = sublevel_measure(spec, lam, 10 ** 6, seed=1000 * k + i)
            oracle = sublevel_grid_oracle(spec, lam)
            allowed = 3 * est.stderr + 1e-6 * max(oracle, 1.0)
            worst = max(worst, abs(est.measure - oracle) / allowed)
            vals.append(est.measure)
        slope, _ = fit_exponent([1 / x for x in lams], vals)
        good = abs(slope - pred) <= tol and worst <= 1.0
        ok &= good
        notes.append(f"{text} slope={slope:.3f} (want {pred}±{tol}) mc/oracle={worst:.2f}")
    dt = time.perf_counter() - t0
    criterion(4, ok and dt < 30, "; ".join(notes) + f" runtime={dt:.1f}s")


# ------------------------------------------------------------------ 5

SWEEP_PRESETS = (("E", 0.0), ("I", 0.5), ("Ic:1", 1 / 6), ("NIL:1", 1 / 4))


def test_c5_power_iteration_matches_dense(criterion):
    worst = 0.0
    for text, _ in SWEEP_PRESETS:
        cfg = SweepConfig(single=False)
        op = cfg.operator(parse_matrix(text), 8.0)
        s = np.linalg.svd(op.dense(weighted=True), compute_uv=False)[0]
        r = opnorm(op, tol=1e-10, max_iters=3000)
        worst = max(worst, abs(r.value - s) / s)
    criterion(5, worst <= 1e-6, f"coarse power iteration vs dense SVD rel err={worst:.1e}")


@pytest.mark.parametrize("text,pred", SWEEP_PRESETS)
def test_c5_oscillatory_sweep(criterion, text, pred):
    rep = lambda_sweep(parse_matrix(text), range(3, 8), text)
    vals = " ".join(f"{v:.4g}" for v in rep.values)
    criterion(5, abs(rep.slope - pred) <= 0.1,
              f"{text} opnorm slope={rep.slope:.3f} (want {pred:.3f}±0.1) values={vals}")


# ------------------------------------------------------------------ 6

DELTAS = [2.0 ** -j for j in range(2, 7)]


@pytest.mark.parametrize("text,cls,pred", [("Ic:1", SKW1_RANK2, 1 / 6),
                                           ("NIL:1", SKW1_RANK1, 1 / 4),
                                           ("I", SKW0, 1 / 2)])
def test_c6_witness_lower_bounds(criterion, text, cls, pred):
    A = parse_matrix(text)
    vals, floors_ok = [], True
    for d in DELTAS:
        p = witness_probe(cls, d, A.a12 if cls != SKW0 else 1.0)
        vals.append(p.ratio())
        # for I the floor is on the integral itself, for the others on the ratio
        got = p.integral_sq() if cls == SKW0 else p.ratio()
        floors_ok &= got >= 0.5 * witness_floor(cls, d)
    try:
        slope, _ = fit_exponent(DELTAS, vals)
    except ValueError:
        slope = float("nan")
    fine = vals[-1]
    conv = witness_lower_bound(A, DELTAS[-1], refine=2) / fine if fine > 0 else float("nan")
    ok = abs(slope - pred) <= 0.08 and floors_ok and abs(conv - 1) <= 0.05
    vs = " ".join(f"{v:.4g}" for v in vals)
    criterion(6, ok, f"{text} witness slope={slope:.3f} (want {pred:.3f}±0.08) "
                     f"floors={'ok' if floors_ok else 'missed'} refine2/refine1={conv:.4f} "
                     f"values={vs}")


def test_c6_adversarial_not_below_witness(criterion):
    A = Matrix2.Ic(1.0)
    w = witness_lower_bound(A, 0.25)
    res = adversarial_lower_bound(A, 0.25, iterations=20)
    criterion(6, res.ratio >= w - 1e-12,
              f"adversarial={res.ratio:.4g} >= witness={w:.4g} at delta=1/4")


# ------------------------------------------------------------------ 7

@pytest.mark.parametrize("text,pred", [("E", 0.0), ("I", 1.0)])
def test_c7_schur_rows(criterion, text, pred):
    lams = [2.0 ** j for j in range(3, 7)]
    A = parse_matrix(text)
    sums = [kernel_Psi_circle(A, lam, (0.5, 0.0)).row_sum for lam in lams]
    s = slope_of(lams, sums)
    vs = " ".join(f"{v:.4g}" for v in sums)
    criterion(7, abs(s - pred) <= 0.15,
              f"{text} Schur row-sum slope={s:.3f} (want {pred}±0.15) values={vs}")


# ------------------------------------------------------------------ 8

def test_c8_extreme_ratios(criterion):
    t0 = time.perf_counter()
    A = Matrix2.E()
    small = {r: kernel_schur_extreme(A, r).row_sum for r in (1 / 8, 1 / 16, 1 / 32, 1 / 64)}
    base = small[1 / 8]
    small_ok = True
    for r, v in small.items():
        steps = round(math.log2((1 / 8) / r))
        want = base * 2.0 ** (-2 * steps)
        small_ok &= 0.5 <= v / want <= 2.0
    large = [kernel_schur_extreme(A, r).row_sum for r in (8, 16, 32)]
    spread = max(large) / min(large)
    dt = time.perf_counter() - t0
    ok = small_ok and spread < 2.0 and dt < 60
    ratios = " ".join(f"{small[r] / (base * 2.0 ** (-2 * round(math.log2(1 / 8 / r)))):.3f}"
                      for r in small)
    criterion(8, ok, f"small-ratio scaling vs 2^(-2 steps)={ratios} "
                     f"large-ratio spread={spread:.3f} runtime={dt:.1f}s")


# ------------------------------------------------------------------ 9

def test_c9_properties(criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(19)
    notes, ok = [], True

    op = DiscretizedOperator(Matrix2.Ic(1.0), 8.0, (0.0, 0.0), 0.5, (0.0, 1.0), 0.5, ts=(-1.0,))
    g1 = rng.normal(size=op.in_shape) + 1j * rng.normal(size=op.in_shape)
    g2 = rng.normal(size=op.in_shape)
    a, b = 0.7 - 0.2j, -1.3
    lhs = op.apply(a * g1 + b * g2)
    rhs = a * op.apply(g1) + b * op.apply(g2)
    lin = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    ok &= lin < 1e-12
    notes.append(f"linearity={lin:.1e}")

    g = Grid3.cube(1.5, 9)
    f = ScalarField3(g, rng.normal(size=g.points))
    h = ScalarField3(g, rng.normal(size=g.points))
    T = DilationSet.geometric(4)
    mf = annulus_maximal(f, Matrix2.E(), 0.25, T).values
    mh = annulus_maximal(h, Matrix2.E(), 0.25, T).values
    ms = annulus_maximal(f + h, Matrix2.E(), 0.25, T).values
    m3 = annulus_maximal(f.scaled(-2.5), Matrix2.E(), 0.25, T).values
    maxi = bool(np.all(ms <= mf + mh + 1e-12) and np.all(mf >= 0)
                and np.allclose(m3, 2.5 * mf, rtol=1e-12, atol=0))
    ok &= maxi
    notes.append(f"maximal props={'ok' if maxi else 'broken'}")

    bad = 0
    for _ in range(1000):
        M = rng.normal(size=(2, 2))
        r = numeric_rank(ROT @ M + (ROT @ M).T)
        Q = random_orthogonal(rng).as_array()
        c = rng.uniform(0.2, 3) * rng.choice([-1, 1])
        for N in (Q.T @ M @ Q, c * M, M.T, np.linalg.inv(M)):
            bad += numeric_rank(ROT @ N + (ROT @ N).T) != r
    ok &= bad == 0
    notes.append(f"rank invariance failures={bad}")

    u = np.geomspace(1.001e-3, 0.999e3, 4001)
    part = float(np.max(np.abs(sum(chi_radial(2.0 ** j * u) for j in range(-10, 11)) - 1)))
    ok &= part < 1e-8
    notes.append(f"partition={part:.1e}")

    docs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        main(["sublevel", "--preset", "NIL:1", "--samples", "20000", "--seed", "5",
              "--out", str(out)])
        docs.append(((out / "checks.csv").read_bytes(), (out / "sublevel.csv").read_bytes(),
                     (out / "summary.txt").read_bytes()))
    same = docs[0] == docs[1]
    ok &= same
    notes.append(f"reruns identical={same}")

    dt = time.perf_counter() - t0
    criterion(9, ok and dt < 10, " ".join(notes) + f" runtime={dt:.1f}s")
