"""Dense real linear algebra and quadrature primitives.

Matrices and vectors are plain float64 numpy arrays. Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DimensionError, QuadratureError, SymmetryError, UncontrollableError

# 1/(m+1)! < 1e-14 for unit-norm arguments
_TAYLOR_ORDER = next(m for m in range(1, 40) if 1.0 / math.factorial(m + 1) < 1e-14)
_PINV_CUTOFF = 1e-9
_MAX_SIMPSON_DEPTH = 30


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.array(a, dtype=float, ndmin=2)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _require_square(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")


def mat_exp(a, t: float = 1.0) -> np.ndarray:
    """Return ``exp(a * t)`` by scaling and squaring a truncated Taylor series."""
    a = as_matrix(a, "A")
    _require_square(a, "A")
    if not math.isfinite(t):
        raise ValueError("t must be finite")
    n = a.shape[0]
    at = a * t
    norm = np.abs(at).sum(axis=0).max() if n else 0.0
    squarings = max(0, math.ceil(math.log2(norm))) if norm > 1.0 else 0
    x = at / 2.0**squarings

    eye = np.eye(n)
    # Horner: I + x(I + x/2(I + x/3(...)))
    result = eye.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        result = eye + (x @ result) / k
    for _ in range(squarings):
        result = result @ result
    return result


def jacobi_eigh(m, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns.
    """
    a = as_matrix(m).copy()
    _require_square(a, "M")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.abs(a).max()
    if scale == 0.0:
        return np.zeros(n), v

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, applied to rows then columns p, q
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q]
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ArithmeticError("Jacobi iteration did not converge")

    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def pinv_sym(m, sym_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric matrix.

    Eigenvalues with magnitude below ``1e-9 * max|eigenvalue|`` are treated as
    zero.
    """
    m = as_matrix(m, "M")
    _require_square(m, "M")
    if np.abs(m - m.T).max(initial=0.0) > sym_tol:
        raise SymmetryError("matrix is not symmetric")
    w, v = jacobi_eigh(0.5 * (m + m.T))
    wmax = np.abs(w).max(initial=0.0)
    keep = np.abs(w) > _PINV_CUTOFF * wmax
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (v * inv) @ v.T


def null_space_dim(m) -> int:
    """Number of eigenvalues of symmetric ``m`` below the pseudoinverse cutoff."""
    w, _ = jacobi_eigh(m)
    wmax = np.abs(w).max(initial=0.0)
    return int(np.sum(np.abs(w) <= _PINV_CUTOFF * wmax))


def integrate_matrix(f: Callable[[float], np.ndarray], a: float, b: float, tol: float) -> np.ndarray:
    """Adaptive composite Simpson quadrature of a matrix-valued function.

    The entrywise absolute error target is ``tol``; subintervals are refined
    at most 30 levels deep.
    """
    if not a <= b:
        raise ValueError("require a <= b")
    if tol <= 0:
        raise ValueError("tol must be positive")
    fa = np.asarray(f(a), dtype=float)
    if a == b:
        return np.zeros_like(fa)
    fb = np.asarray(f(b), dtype=float)
    m = 0.5 * (a + b)
    fm = np.asarray(f(m), dtype=float)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    total = np.zeros_like(fa)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        f1 = np.asarray(f(0.5 * (lo + mid)), dtype=float)
        f2 = np.asarray(f(0.5 * (mid + hi)), dtype=float)
        left = (mid - lo) / 6.0 * (flo + 4.0 * f1 + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * f2 + fhi)
        diff = left + right - s
        if np.abs(diff).max(initial=0.0) <= 15.0 * eps:
            total += left + right + diff / 15.0
            continue
        if depth + 1 >= _MAX_SIMPSON_DEPTH:
            raise QuadratureError(f"no convergence on [{lo}, {hi}] within {_MAX_SIMPSON_DEPTH} levels")
        stack.append((mid, hi, fmid, f2, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, f1, fmid, left, 0.5 * eps, depth + 1))
    return total


def lu_solve(m, rhs, max_cond: float = 1e12) -> np.ndarray:
    """Solve ``m @ x = rhs`` by Gaussian elimination with partial pivoting.

    Refuses with :class:`UncontrollableError` when the 1-norm condition
    number exceeds ``max_cond``.
    """
    a = as_matrix(m, "M").copy()
    _require_square(a, "M")
    b = np.array(rhs, dtype=float)
    vector_rhs = b.ndim == 1
    b = b.reshape(a.shape[0], -1).copy()
    n = a.shape[0]
    anorm = np.abs(a).sum(axis=0).max(initial=0.0)
    if anorm == 0.0:
        raise UncontrollableError("matrix is zero")

    perm = np.arange(n)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if a[piv, k] == 0.0:
            raise UncontrollableError("matrix is singular")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])

    def _solve(rhs_cols: np.ndarray) -> np.ndarray:
        y = rhs_cols.copy()
        for k in range(n):
            y[k + 1:] -= np.outer(a[k + 1:, k], y[k])
        for k in range(n - 1, -1, -1):
            y[k] = (y[k] - a[k, k + 1:] @ y[k + 1:]) / a[k, k]
        return y

    inverse = _solve(np.eye(n)[perm])
    cond = anorm * np.abs(inverse).sum(axis=0).max()
    if not np.isfinite(cond) or cond > max_cond:
        raise UncontrollableError(f"matrix condition number {cond:.3e} exceeds {max_cond:.0e}")
    x = _solve(b[perm])
    return x[:, 0] if vector_rhs else x
