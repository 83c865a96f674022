"""Minimal sparse linear algebra: triplet assembly, CSR storage, Jacobi
preconditioned CG / BiCGStab, and a dense LU oracle for small systems.

The CSR layout produced by :meth:`TripletBuffer.to_csr` is canonical
(duplicates summed, column indices sorted per row), so assembly is
deterministic regardless of insertion order. Solvers use a fixed serial
iteration order for bitwise reproducibility.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sps


class AssemblyError(ValueError):
    """Raised for out-of-range indices or malformed assembly input."""


class SolverError(RuntimeError):
    """Raised on solver breakdown or non-convergence."""


@dataclass
class SolveReport:
    iterations: int
    residual: float  # final relative residual ||Ax - b|| / ||b||
    converged: bool


class TripletBuffer:
    """(row, col, value) accumulation buffer for an n-by-n matrix.

    Duplicate entries are summed when converting to CSR.
    """

    def __init__(self, n: int):
        if n < 0:
            raise AssemblyError(f"negative dimension {n}")
        self.n = int(n)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, rows, cols, values) -> None:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        rows, cols, values = np.broadcast_arrays(rows, cols, values)
        if rows.size == 0:
            return
        if rows.min() < 0 or rows.max() >= self.n:
            raise AssemblyError("row index out of range")
        if cols.min() < 0 or cols.max() >= self.n:
            raise AssemblyError("column index out of range")
        self._rows.append(np.ascontiguousarray(rows))
        self._cols.append(np.ascontiguousarray(cols))
        self._vals.append(np.ascontiguousarray(values, dtype=np.float64))

    def to_csr(self) -> "CsrMatrix":
        return to_csr(self)


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix with a canonical (sorted, unique) layout."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def _scipy(self) -> sps.csr_matrix:
        return sps.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n, self.n)
        )

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._scipy() @ x

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x)

    def diagonal(self) -> np.ndarray:
        return self._scipy().diagonal()

    def to_dense(self) -> np.ndarray:
        return self._scipy().toarray()

    def transpose(self) -> "CsrMatrix":
        t = self._scipy().T.tocsr()
        t.sort_indices()
        return CsrMatrix(t.indptr, t.indices, t.data, self.n)

    def symmetry_defect(self) -> float:
        """max |A - A^T| entry, for on-demand symmetry checks."""
        d = self._scipy() - self._scipy().T
        return float(np.abs(d.data).max()) if d.nnz else 0.0


def to_csr(buf: TripletBuffer) -> CsrMatrix:
    n = buf.n
    if not buf._rows:
        return CsrMatrix(
            np.zeros(n + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.float64),
            n,
        )
    rows = np.concatenate(buf._rows)
    cols = np.concatenate(buf._cols)
    vals = np.concatenate(buf._vals)
    m = sps.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return CsrMatrix(
        m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data, n
    )


def _jacobi(A: CsrMatrix) -> np.ndarray:
    d = A.diagonal().copy()
    if np.any(d == 0.0):
        # rows with empty diagonal fall back to identity preconditioning
        d[d == 0.0] = 1.0
    return d


def solve_cg(
    A: CsrMatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    check_symmetry: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Converges when ||Ax - b|| / ||b|| <= tol. Raises SolverError on breakdown
    (non-positive curvature) or when the iteration cap (20 n by default) is hit.
    """
    b = np.asarray(b, dtype=np.float64)
    if check_symmetry:
        scale = float(np.abs(A.data).max()) if A.nnz else 1.0
        if A.symmetry_defect() > 1e-10 * max(scale, 1.0):
            raise SolverError("matrix is not symmetric")
    n = A.n
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    if max_iter is None:
        max_iter = 20 * n
    Asp = A._scipy()
    diag = _jacobi(A)
    x = np.zeros(n)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    it = 0
    res = float(np.linalg.norm(r)) / b_norm
    while res > tol:
        if it >= max_iter:
            raise SolverError(
                f"CG did not converge in {max_iter} iterations (residual {res:.3e})"
            )
        Ap = Asp @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError("CG breakdown: non-positive curvature direction")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = float(np.linalg.norm(r)) / b_norm
        if res <= tol:
            break
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    # report the true residual, not the recursive one
    res = float(np.linalg.norm(b - Asp @ x)) / b_norm
    return x, SolveReport(it, res, res <= 10 * tol)


def solve_bicgstab(
    A: CsrMatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Jacobi-preconditioned BiCGStab for nonsymmetric systems."""
    b = np.asarray(b, dtype=np.float64)
    n = A.n
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    if max_iter is None:
        max_iter = 20 * n
    Asp = A._scipy()
    diag = _jacobi(A)
    x = np.zeros(n)
    r = b.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    it = 0
    fresh = True  # r0 was (re)set to the current residual this iteration
    res = float(np.linalg.norm(r)) / b_norm
    while res > tol:
        if it >= max_iter:
            raise SolverError(
                f"BiCGStab did not converge in {max_iter} iterations "
                f"(residual {res:.3e})"
            )
        rho_new = float(r0 @ r)
        if rho_new == 0.0:
            # r is orthogonal to the shadow residual; restart with a fresh
            # shadow direction unless we just did (then it is a true breakdown)
            if fresh:
                raise SolverError("BiCGStab breakdown: rho = 0")
            r0 = r.copy()
            rho = alpha = omega = 1.0
            v = np.zeros(n)
            p = np.zeros(n)
            fresh = True
            continue
        beta = 0.0 if fresh else (rho_new / rho) * (alpha / omega)
        fresh = False
        p = r + beta * (p - omega * v)
        phat = p / diag
        v = Asp @ phat
        denom = float(r0 @ v)
        if denom == 0.0:
            raise SolverError("BiCGStab breakdown: r0.v = 0")
        alpha = rho_new / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) / b_norm <= tol:
            x += alpha * phat
            r = s
            rho = rho_new
            it += 1
            res = float(np.linalg.norm(r)) / b_norm
            break
        shat = s / diag
        t = Asp @ shat
        tt = float(t @ t)
        if tt == 0.0:
            raise SolverError("BiCGStab breakdown: t = 0")
        omega = float(t @ s) / tt
        if omega == 0.0:
            raise SolverError("BiCGStab breakdown: omega = 0")
        x += alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
        it += 1
        res = float(np.linalg.norm(r)) / b_norm
    res = float(np.linalg.norm(b - Asp @ x)) / b_norm
    return x, SolveReport(it, res, res <= 10 * tol)


def solve_dense_lu(A, b: np.ndarray) -> np.ndarray:
    """Dense LU solve, the verification oracle. Limited to n <= 2000."""
    if isinstance(A, CsrMatrix):
        A = A.to_dense()
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise AssemblyError("dense oracle requires a square matrix")
    if A.shape[0] > 2000:
        raise AssemblyError("dense oracle limited to n <= 2000")
    try:
        lu, piv = scipy.linalg.lu_factor(A)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises below
        raise SolverError(f"singular matrix: {exc}") from exc
    if np.any(np.abs(np.diag(lu)) == 0.0):
        raise SolverError("singular pivot in dense LU")
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=np.float64))


def write_matrix_market(A: CsrMatrix, path) -> None:
    """Coordinate-format MatrixMarket export (1-based, general real)."""
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n} {A.n} {A.nnz}\n")
        for i in range(A.n):
            for k in range(A.indptr[i], A.indptr[i + 1]):
                fh.write(f"{i + 1} {A.indices[k] + 1} {A.data[k]:.17g}\n")
