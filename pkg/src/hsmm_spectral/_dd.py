"""Vectorized double-double (compensated) arithmetic helpers.

A double-double value is an unevaluated sum ``hi + lo`` of two float64
arrays with ``|lo| <= ulp(hi)/2``, giving roughly 106 bits of precision.
Only the handful of kernels needed by the high-accuracy pseudo-inverse
product live here: error-free transforms, matrix products with compensated
accumulation, and a modified Gram-Schmidt whose projections are compensated.

Rationale: the learned-tensor estimators divide one moment table by another
through a Moore-Penrose inverse whose conditioning is the *product* of two
factor conditionings; float64 alone leaves ~1e-6 relative error on the
larger model sizes, far above the tolerances the estimators are tested at.
"""

from __future__ import annotations

import numpy as np

_SPLIT = 134217729.0  # 2**27 + 1, Dekker splitting constant


def two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def quick_two_sum(a, b):
    """Requires |a| >= |b| elementwise (or a == 0)."""
    s = a + b
    return s, b - (s - a)


def two_prod(a, b):
    p = a * b
    ah = _SPLIT * a
    ah = ah - (ah - a)
    al = a - ah
    bh = _SPLIT * b
    bh = bh - (bh - b)
    bl = b - bh
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def dd_add(xh, xl, yh, yl):
    s, e = two_sum(xh, yh)
    e = e + (xl + yl)
    return quick_two_sum(s, e)


def dd_mul(xh, xl, yh, yl):
    p, e = two_prod(xh, yh)
    e = e + (xh * yl + xl * yh)
    return quick_two_sum(p, e)


def dd_matmul(ah, al, bh, bl):
    """Compensated product of two double-double matrices.

    Accumulates over the inner dimension with double-double adds; the loop
    over the inner dimension is a plain Python loop on vectorized slabs.
    """
    m, k = ah.shape
    n = bh.shape[1]
    outh = np.zeros((m, n))
    outl = np.zeros((m, n))
    for j in range(k):
        ph, pl = dd_mul(ah[:, j, None], al[:, j, None], bh[None, j, :], bl[None, j, :])
        outh, outl = dd_add(outh, outl, ph, pl)
    return outh, outl


def dd_from(a):
    return np.array(a, dtype=float), np.zeros_like(a, dtype=float)


def dd_mgs(zh, zl):
    """Gram-Schmidt with compensated projections (two-pass classical GS).

    Orthonormalizes the columns of ``z``; the normalization scale is a plain
    float64 (an exact-enough column scaling never moves the spanned
    subspace, which is the quantity the caller needs at full precision).
    """
    zh = zh.copy()
    zl = zl.copy()
    m, n = zh.shape
    for j in range(n):
        colh, coll = zh[:, j : j + 1], zl[:, j : j + 1]
        for _ in range(2):  # re-orthogonalization pass restores stability
            if j == 0:
                break
            qh, ql = zh[:, :j], zl[:, :j]
            ch, cl = dd_matmul(qh.T, ql.T, colh, coll)  # (j, 1) coefficients
            ph, pl = dd_matmul(qh, ql, ch, cl)
            colh, coll = dd_add(colh, coll, -ph, -pl)
        nh, _ = dd_matmul(colh.T, coll.T, colh, coll)
        norm = float(np.sqrt(nh[0, 0]))
        if norm > 0.0:
            colh, coll = dd_mul(colh, coll, 1.0 / norm, 0.0)
        zh[:, j : j + 1], zl[:, j : j + 1] = colh, coll
    return zh, zl


def refined_solve(mh, ml, rh, rl, max_iter: int = 4):
    """Solve ``M X = R`` with iterative refinement on compensated residuals.

    ``M`` is square and nonsingular at working precision; corrections are
    computed with a float64 factorization, residuals in double-double, so
    the iteration converges whenever ``cond(M) * eps`` is safely below one.
    """
    lu = np.linalg.inv(mh)  # small system; explicit inverse keeps this simple
    x = lu @ rh
    for _ in range(max_iter):
        axh, axl = dd_matmul(mh, ml, x, np.zeros_like(x))
        resh, resl = dd_add(rh, rl, -axh, -axl)
        x = x + lu @ resh
    return x
