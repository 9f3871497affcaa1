"""Pure numpy versions of the hot loops. Used when the extension is absent."""
import numpy as np

BACKEND = "python"
_CHUNK = 1 << 18


def _interp(values, lo, h, shear, Q1, Q2, Q3):
    n0, n1, n2 = values.shape
    s11, s12, s22 = shear
    Q3 = Q3 - 0.5 * (s11 * Q1 * Q1 + 2.0 * s12 * Q1 * Q2 + s22 * Q2 * Q2)
    f0 = (Q1 - lo[0]) / h[0]
    f1 = (Q2 - lo[1]) / h[1]
    f2 = (Q3 - lo[2]) / h[2]
    inside = ((f0 >= 0) & (f0 <= n0 - 1) & (f1 >= 0) & (f1 <= n1 - 1)
              & (f2 >= 0) & (f2 <= n2 - 1))
    out = np.zeros(Q1.shape)
    if not inside.any():
        return out
    f0, f1, f2 = f0[inside], f1[inside], f2[inside]
    i0 = np.minimum(f0.astype(np.intp), n0 - 2)
    i1 = np.minimum(f1.astype(np.intp), n1 - 2)
    i2 = np.minimum(f2.astype(np.intp), n2 - 2)
    a, b, c = f0 - i0, f1 - i1, f2 - i2
    v = values
    acc = ((1 - a) * (1 - b) * (1 - c) * v[i0, i1, i2]
           + a * (1 - b) * (1 - c) * v[i0 + 1, i1, i2]
           + (1 - a) * b * (1 - c) * v[i0, i1 + 1, i2]
           + a * b * (1 - c) * v[i0 + 1, i1 + 1, i2]
           + (1 - a) * (1 - b) * c * v[i0, i1, i2 + 1]
           + a * (1 - b) * c * v[i0 + 1, i1, i2 + 1]
           + (1 - a) * b * c * v[i0, i1 + 1, i2 + 1]
           + a * b * c * v[i0 + 1, i1 + 1, i2 + 1])
    out[inside] = acc
    return out


def trilinear(values, lo, h, shear, P):
    P = np.asarray(P, dtype=float)
    return _interp(values, lo, h, shear, P[:, 0], P[:, 1], P[:, 2])


def plane_average(values, lo, h, shear, X, AX, T, Y, W):
    """sum_m W[m] |F(x - t y_m, x3 - t <Ax, y_m>)| for each row of X."""
    X = np.asarray(X, dtype=float)
    N, M = X.shape[0], Y.shape[0]
    out = np.empty(N)
    step = max(1, _CHUNK // max(M, 1))
    for s in range(0, N, step):
        e = min(N, s + step)
        t = T[s:e, None]
        Q1 = X[s:e, 0:1] - t * Y[None, :, 0]
        Q2 = X[s:e, 1:2] - t * Y[None, :, 1]
        Q3 = X[s:e, 2:3] - t * (AX[s:e, 0:1] * Y[None, :, 0] + AX[s:e, 1:2] * Y[None, :, 1])
        vals = np.abs(_interp(values, lo, h, shear, Q1, Q2, Q3))
        out[s:e] = vals @ W
    return out


def plane_scatter(shape, lo, h, shear, X, AX, T, C, Y, W):
    """Adjoint of the (unsigned) plane sum: spread C[k] W[m] onto the trilinear stencil."""
    n0, n1, n2 = shape
    out = np.zeros(n0 * n1 * n2)
    s11, s12, s22 = shear
    X = np.asarray(X, dtype=float)
    N, M = X.shape[0], Y.shape[0]
    step = max(1, _CHUNK // max(M, 1))
    for s in range(0, N, step):
        e = min(N, s + step)
        t = T[s:e, None]
        Q1 = X[s:e, 0:1] - t * Y[None, :, 0]
        Q2 = X[s:e, 1:2] - t * Y[None, :, 1]
        Q3 = X[s:e, 2:3] - t * (AX[s:e, 0:1] * Y[None, :, 0] + AX[s:e, 1:2] * Y[None, :, 1])
        Q3 = Q3 - 0.5 * (s11 * Q1 * Q1 + 2.0 * s12 * Q1 * Q2 + s22 * Q2 * Q2)
        f0 = (Q1 - lo[0]) / h[0]
        f1 = (Q2 - lo[1]) / h[1]
        f2 = (Q3 - lo[2]) / h[2]
        cw = C[s:e, None] * W[None, :]
        inside = ((f0 >= 0) & (f0 <= n0 - 1) & (f1 >= 0) & (f1 <= n1 - 1)
                  & (f2 >= 0) & (f2 <= n2 - 1))
        f0, f1, f2, cw = f0[inside], f1[inside], f2[inside], cw[inside]
        i0 = np.minimum(f0.astype(np.intp), n0 - 2)
        i1 = np.minimum(f1.astype(np.intp), n1 - 2)
        i2 = np.minimum(f2.astype(np.intp), n2 - 2)
        a, b, c = f0 - i0, f1 - i1, f2 - i2
        for da, wa in ((0, 1 - a), (1, a)):
            for db, wb in ((0, 1 - b), (1, b)):
                for dc, wc in ((0, 1 - c), (1, c)):
                    idx = ((i0 + da) * n1 + (i1 + db)) * n2 + (i2 + dc)
                    out += np.bincount(idx, cw * wa * wb * wc, minlength=out.size)
    return out.reshape(shape)
