"""Pure-Python kernels used when the compiled extension is unavailable.

Same algorithms and signatures as ``_kernels.pyx``; inner loops are numpy
slices instead of C loops, so results agree to rounding but not bitwise.
"""
from __future__ import annotations

import math

import numpy as np

EPS = 2.220446049250313e-16


def qr_limited_pivot(a_in, tol):
    a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    m, n = a.shape
    perm = np.arange(n, dtype=np.intp)
    vs = np.zeros((min(m, n), m))
    k = 0
    active = n
    while k < m and k < active:
        norm = math.sqrt(float(a[k:, k] @ a[k:, k]))
        if tol >= 0.0 and norm <= tol:
            col = a[:, k].copy()
            a[:, k:active - 1] = a[:, k + 1:active]
            a[:, active - 1] = col
            p = perm[k]
            perm[k:active - 1] = perm[k + 1:active].copy()
            perm[active - 1] = p
            active -= 1
            continue
        x0 = a[k, k]
        alpha = -norm if x0 > 0.0 else norm
        v = a[k:, k].copy()
        v[0] = x0 - alpha
        vnorm = math.sqrt(float(v @ v))
        if vnorm > 0.0:
            v /= vnorm
            vs[k, k:] = v
            block = a[k:, k + 1:]
            block -= np.outer(2.0 * v, v @ block)
        a[k, k] = alpha
        a[k + 1:, k] = 0.0
        k += 1

    q = np.zeros((m, k))
    q[:k, :k] = np.eye(k)
    for s in range(k - 1, -1, -1):
        v = vs[s, s:]
        block = q[s:, s:]
        block -= np.outer(2.0 * v, v @ block)
    r = np.triu(a[:k, :])
    neg = np.diag(r[:, :k]) < 0.0 if k else np.zeros(0, dtype=bool)
    r[neg] *= -1.0
    q[:, neg] *= -1.0
    return q, r, perm, k


def sym_eig_ql(a_in, max_iter=60):
    V = np.array(a_in, dtype=np.float64, order="C", copy=True)
    n = V.shape[0]
    if n == 1:
        return np.array([V[0, 0]]), np.ones((1, 1))
    d = V[n - 1, :].copy()
    e = np.zeros(n)

    for i in range(n - 1, 0, -1):
        scale = float(np.abs(d[:i]).sum())
        h = 0.0
        if scale == 0.0:
            e[i] = d[i - 1]
            d[:i] = V[i - 1, :i]
            V[i, :i] = 0.0
            V[:i, i] = 0.0
        else:
            d[:i] /= scale
            h = float(d[:i] @ d[:i])
            f = d[i - 1]
            g = math.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h = h - f * g
            d[i - 1] = f - g
            e[:i] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                col = V[j + 1:i, j]
                g = e[j] + V[j, j] * f + float(col @ d[j + 1:i])
                e[j + 1:i] += col * f
                e[j] = g
            e[:i] /= h
            f = float(e[:i] @ d[:i])
            hh = f / (h + h)
            e[:i] -= hh * d[:i]
            for j in range(i):
                f = d[j]
                g = e[j]
                V[j:i, j] -= f * e[j:i] + g * d[j:i]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h

    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            d[:i + 1] = V[:i + 1, i + 1] / h
            g = V[:i + 1, i + 1] @ V[:i + 1, :i + 1]
            V[:i + 1, :i + 1] -= np.outer(d[:i + 1], g)
        V[:i + 1, i + 1] = 0.0
    d[:] = V[n - 1, :]
    V[n - 1, :] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0

    e[:-1] = e[1:].copy()
    e[n - 1] = 0.0
    # rotations act on eigenvector columns; keep them as contiguous rows
    W = np.ascontiguousarray(V.T)
    f = 0.0
    tst1 = 0.0
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        mm = l
        while mm < n:
            if abs(e[mm]) <= EPS * tst1:
                break
            mm += 1
        if mm > l:
            it = 0
            while True:
                it += 1
                if it > max_iter:
                    raise ArithmeticError("QL iteration failed to converge")
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2:] -= h
                f += h
                p = d[mm]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(mm - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    wi, wj = W[i], W[i + 1]
                    hrow = wj.copy()
                    wj *= c
                    wj += s * wi
                    wi *= c
                    wi -= s * hrow
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= EPS * tst1:
                    break
        d[l] = d[l] + f
        e[l] = 0.0
    return d, np.ascontiguousarray(W.T)


def sym_eig_jacobi(a_in, tol=1e-12, max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        diag = float(np.diag(a) @ np.diag(a))
        off = 2.0 * float((np.triu(a, 1) ** 2).sum())
        if off <= 0.0 or math.sqrt(off) < tol * math.sqrt(diag):
            break
        if sweep == max_sweeps:
            raise ArithmeticError("Jacobi eigensolver failed to converge")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                x = a[:, p].copy()
                y = a[:, q].copy()
                a[:, p] = c * x - s * y
                a[:, q] = s * x + c * y
                x = a[p, :].copy()
                y = a[q, :].copy()
                a[p, :] = c * x - s * y
                a[q, :] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                x = v[:, p].copy()
                y = v[:, q].copy()
                v[:, p] = c * x - s * y
                v[:, q] = s * x + c * y
    return np.diag(a).copy(), v


def svd_jacobi_rows(xt, vt, tol=1e-15, max_sweeps=80):
    n = xt.shape[0]
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                xp = xt[p]
                xq = xt[q]
                alpha = float(xp @ xp)
                beta = float(xq @ xq)
                gamma = float(xp @ xq)
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                x = xp.copy()
                xt[p] = c * x - s * xq
                xt[q] = s * x + c * xq
                x = vt[p].copy()
                vt[p] = c * x - s * vt[q]
                vt[q] = s * x + c * vt[q]
        if not rotated:
            return sweep + 1
    raise ArithmeticError("one-sided Jacobi SVD failed to converge")
