"""Deterministic dense factorizations of small float64 matrices.

All routines take plain 2-D numpy arrays, validate them, and dispatch the
inner loops to the active kernel backend (see ``_backend``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glora.errors import DimensionMismatch, NonFiniteInput, NotSymmetric, ZeroMatrix
from glora.linalg._backend import kernels

DEFAULT_RANK_TOL = 1e-9
EPS = np.finfo(np.float64).eps
_SIGN_TOL = 1e-12


@dataclass(frozen=True)
class QrResult:
    q: np.ndarray
    r_upper: np.ndarray
    k: int
    perm: np.ndarray

    @property
    def pivots(self) -> np.ndarray:
        """Original column indices of the ``k`` retained (pivot) columns."""
        return self.perm[: self.k]


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class EigResult:
    values: np.ndarray
    vectors: np.ndarray


def check_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a C-contiguous float64 2-D array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains non-finite entries")
    return arr


def _fix_signs(u: np.ndarray, *others: np.ndarray) -> None:
    """Flip columns in place so the first significant entry of each ``u`` column is >= 0."""
    for j in range(u.shape[1]):
        col = u[:, j]
        scale = np.abs(col).max()
        if scale == 0.0:
            continue
        idx = int(np.argmax(np.abs(col) > _SIGN_TOL * scale))
        if col[idx] < 0.0:
            u[:, j] = -col
            for o in others:
                o[:, j] = -o[:, j]


def reduced_qr(b, rank_tol: float = DEFAULT_RANK_TOL, *, allow_zero: bool = False) -> QrResult:
    """Rank-revealing reduced QR, ``b ≈ q @ r_upper``.

    Columns are processed left to right; a column whose residual norm is at
    most ``rank_tol`` times the largest column norm of ``b`` is treated as
    dependent and skipped, so ``k`` is the numerical column rank. When no
    column is dropped ``r_upper`` is upper triangular with a nonnegative
    diagonal; otherwise ``r_upper[:, perm]`` is upper trapezoidal.

    Raises ``ZeroMatrix`` when every column is negligible, unless
    ``allow_zero`` is set, in which case the ``k = 0`` result is returned.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    b = check_matrix(b, "b")
    m, n = b.shape
    scale = float(np.sqrt((b * b).sum(axis=0)).max())
    if scale == 0.0:
        result = QrResult(np.zeros((m, 0)), np.zeros((0, n)), 0, np.arange(n))
        if allow_zero:
            return result
        raise ZeroMatrix("all columns are numerically zero", result)
    q, r, perm, k = kernels().qr_limited_pivot(b, rank_tol * scale)
    t = np.empty_like(r)
    t[:, perm] = r
    return QrResult(q, t, int(k), np.asarray(perm))


def _complete_basis(u: np.ndarray, n_new: int) -> np.ndarray:
    """Append ``n_new`` orthonormal columns to ``u`` (orthonormal, n x k), picked greedily from e_i."""
    n = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1])]
    cols = []
    for _ in range(n_new):
        cur = np.column_stack(basis) if basis else np.zeros((n, 0))
        resid = np.eye(n) - cur @ cur.T
        resid -= cur @ (cur.T @ resid)
        norms = np.sqrt((resid * resid).sum(axis=0))
        i = int(np.argmax(norms))
        vec = resid[:, i] / norms[i]
        if basis:
            vec -= cur @ (cur.T @ vec)
            vec /= np.linalg.norm(vec)
        basis.append(vec)
        cols.append(vec)
    return np.column_stack(cols)


def _svd_tall(m: np.ndarray) -> SvdResult:
    rows, cols = m.shape
    if rows > cols:
        q, r, _, _ = kernels().qr_limited_pivot(m, -1.0)
    else:
        q, r = None, m
    xt = np.ascontiguousarray(r.T, dtype=np.float64).copy()
    vt = np.eye(cols)
    tol = max(1e-15, EPS * np.sqrt(cols))
    kernels().svd_jacobi_rows(xt, vt, tol)
    sigma = np.sqrt((xt * xt).sum(axis=1))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = xt[order].T
    v = np.ascontiguousarray(vt[order].T)
    smax = sigma[0] if sigma.size else 0.0
    good = sigma > max(smax * EPS * cols, 0.0) if smax > 0 else np.zeros(cols, dtype=bool)
    u_r = np.zeros((cols, cols))
    u_r[:, good] = w[:, good] / sigma[good]
    n_bad = int((~good).sum())
    if n_bad:
        # good comes first after the descending sort
        u_r[:, ~good] = _complete_basis(u_r[:, good], n_bad)
    u = u_r if q is None else q @ u_r
    u = np.ascontiguousarray(u)
    _fix_signs(u, v)
    return SvdResult(u, sigma, v)


def thin_svd(m) -> SvdResult:
    """Thin SVD via QR preconditioning and one-sided Jacobi.

    Returns ``min(rows, cols)`` triplets with ``sigma`` nonincreasing; the
    first significant entry of each ``u`` column is nonnegative.
    """
    m = check_matrix(m, "m")
    if m.shape[0] >= m.shape[1]:
        return _svd_tall(m)
    res = _svd_tall(np.ascontiguousarray(m.T))
    u = res.v.copy()
    v = res.u.copy()
    _fix_signs(u, v)
    return SvdResult(u, res.sigma, v)


def sym_eig(g, method: str = "ql") -> EigResult:
    """Full eigendecomposition of a symmetric matrix, values nonincreasing.

    ``method`` is ``"ql"`` (tridiagonalisation + implicit QL, the default)
    or ``"jacobi"`` (cyclic Jacobi rotations). Within degenerate clusters the
    returned basis is arbitrary; compare eigenspaces through projectors.
    """
    g = check_matrix(g, "g")
    if g.shape[0] != g.shape[1]:
        raise DimensionMismatch(f"g must be square, got {g.shape}")
    norm = float(np.sqrt((g * g).sum()))
    asym = float(np.sqrt(((g - g.T) ** 2).sum()))
    if asym > 1e-10 * norm:
        raise NotSymmetric(f"relative asymmetry {asym / norm:.3e} exceeds 1e-10")
    sym = np.ascontiguousarray(0.5 * (g + g.T))
    if method == "ql":
        values, vectors = kernels().sym_eig_ql(sym)
    elif method == "jacobi":
        values, vectors = kernels().sym_eig_jacobi(sym, 1e-12)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(-np.asarray(values), kind="stable")
    values = np.asarray(values)[order].copy()
    vectors = np.ascontiguousarray(np.asarray(vectors)[:, order])
    _fix_signs(vectors)
    return EigResult(values, vectors)


def numerical_rank(m, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``rank_tol * sigma_max`` (0 for a zero matrix)."""
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    sigma = thin_svd(m).sigma
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int((sigma > rank_tol * sigma[0]).sum())


def solve_upper(t: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Back substitution for ``t @ x = rhs`` with ``t`` square upper triangular and nonsingular."""
    n = t.shape[0]
    x = np.array(rhs, dtype=np.float64, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= t[i, i + 1:] @ x[i + 1:]
        x[i] /= t[i, i]
    return x
