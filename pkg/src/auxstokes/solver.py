"""Sparse direct solves for indefinite saddle-point systems.

Factorization is SuperLU on a symmetrically permuted matrix. The permutation
is a METIS nested-dissection ordering of the sparsity graph, with very dense
rows (bordering multipliers) moved to the end. Pivoting stays on the
diagonal unless it is tiny, which keeps the fill close to that of the
ordering. If that fails, plain column ordering with partial pivoting is
used instead.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pymetis
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
PIVOT_TOL = 1e-14
DIAG_PIVOT_THRESH = 1e-3


class SingularSystemError(RuntimeError):
    """Raised when factorization meets a (numerically) zero pivot."""

    def __init__(self, msg, dof=None):
        super().__init__(msg)
        self.dof = dof


@dataclass(frozen=True, eq=False)
class Factorization:
    """LU factors of ``matrix[perm][:, perm]``; immutable once built."""

    lu: spla.SuperLU
    matrix: sp.csc_matrix
    size: int
    perm: np.ndarray = None
    ordering: str = "nested-dissection"

    @property
    def fill(self):
        """Nonzeros in L + U."""
        return self.lu.L.nnz + self.lu.U.nnz

    def apply(self, b):
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(b[self.perm])
        return x


def nested_dissection(matrix):
    """Fill-reducing symmetric ordering of ``matrix`` (dense rows last)."""
    G = sp.csr_matrix(abs(matrix) + abs(matrix).T)
    n = G.shape[0]
    G.setdiag(0)
    G.eliminate_zeros()
    deg = np.diff(G.indptr)
    dense = deg > max(16, 10 * math.sqrt(n))
    keep = np.flatnonzero(~dense)
    if keep.size < 2:
        return np.argsort(dense, kind="stable")
    H = G[keep][:, keep].tocsr()
    H.sort_indices()
    order, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(H.indptr, H.indices))
    return np.concatenate([keep[np.asarray(order, dtype=np.int64)], np.flatnonzero(dense)])


def factor(matrix):
    """LU-factor a square sparse matrix with partial pivoting.

    Raises
    ------
    SingularSystemError
        With ``dof`` set to an offending row/column when one can be named.
    """
    M = sp.csc_matrix(matrix)
    n, m = M.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {M.shape}")
    M.eliminate_zeros()
    empty_cols = np.flatnonzero(np.diff(M.indptr) == 0)
    if empty_cols.size:
        raise SingularSystemError(f"column {empty_cols[0]} is structurally empty", empty_cols[0])
    empty_rows = np.flatnonzero(np.bincount(M.indices, minlength=n) == 0)
    if empty_rows.size:
        raise SingularSystemError(f"row {empty_rows[0]} is structurally empty", empty_rows[0])
    scale = max(float(np.abs(M.data).max()), 1.0) if M.nnz else 1.0
    perm = nested_dissection(M)
    try:
        lu = spla.splu(M[perm][:, perm].tocsc(), permc_spec="NATURAL",
                       diag_pivot_thresh=DIAG_PIVOT_THRESH,
                       options=dict(SymmetricMode=True))
        if _smallest_pivot(lu, scale) is None:
            return Factorization(lu, M, n, perm)
    except RuntimeError:
        pass
    log.info("symmetric-mode factorization unusable; retrying with partial pivoting")
    try:
        lu = spla.splu(M, permc_spec="COLAMD")
    except RuntimeError as exc:
        dof = _dependent_column(M)
        where = "" if dof is None else f" (dependent column at dof {dof})"
        raise SingularSystemError(f"factorization failed: {exc}{where}", dof) from None
    k = _smallest_pivot(lu, scale)
    if k is not None:
        dof = int(lu.perm_c[k])
        raise SingularSystemError(f"numerically singular pivot at dof {dof}", dof)
    return Factorization(lu, M, n, None, "colamd")


def _dependent_column(M, limit=3000):
    """Last column of a pivoted QR of a small singular matrix, else None."""
    if M.shape[0] > limit:
        return None
    _, _, piv = scipy.linalg.qr(M.toarray(), mode="economic", pivoting=True)
    return int(piv[-1])


def _smallest_pivot(lu, scale):
    piv = np.abs(lu.U.diagonal())
    small = np.flatnonzero(piv <= PIVOT_TOL * scale)
    return int(small[0]) if small.size else None


def residual_ok(matrix, x, rhs, tol=RESIDUAL_TOL):
    r = np.linalg.norm(matrix @ x - rhs)
    bound = tol * (abs(matrix).max() * np.linalg.norm(x) + np.linalg.norm(rhs))
    return r <= bound, r


def solve(fact, rhs, refine_steps=2):
    """Solve with residual checking and a few steps of iterative refinement.

    The residual contract is ``||M x - b|| <= 1e-10 (max|M| ||x|| + ||b||)``;
    a violation after refinement is logged, not raised.
    """
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != fact.size:
        raise ValueError(f"rhs has length {b.shape[0]}, system size is {fact.size}")
    x = fact.apply(b)
    ok, r = residual_ok(fact.matrix, x, b)
    for _ in range(refine_steps):
        if ok:
            break
        x = x + fact.apply(b - fact.matrix @ x)
        ok, r = residual_ok(fact.matrix, x, b)
    if not ok:
        log.warning("direct solve residual %.3e above contract", r)
    return x
