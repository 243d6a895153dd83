"""Linear solvers for reduced (Dirichlet-eliminated) graph Laplacian systems."""
from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystemError(SolverError):
    """No Dirichlet data reaches some part of the domain."""


def pcg(A, b, x0=None, tol=1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``.  Returns ``(x, relres, iters)``.
    All reductions are plain numpy dot products, so the trajectory is
    reproducible for fixed inputs.
    """
    n = A.shape[0]
    if maxiter is None:
        maxiter = max(100, int(50 * math.sqrt(n)))
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    dinv = 1.0 / A.diagonal()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    res = float(np.linalg.norm(r)) / bnorm
    it = 0
    while res > tol:
        if it >= maxiter:
            raise SolverError(f"CG did not converge in {maxiter} iterations", res, it)
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = float(np.linalg.norm(r)) / bnorm
        z = dinv * r
        rz_new = float(r @ z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    # report the true residual, not the recursively updated one
    res = float(np.linalg.norm(b - A @ x)) / bnorm
    return x, res, it


def direct(A, b):
    """Sparse LU solve followed by one step of iterative refinement.

    The matrix is SPD, so a symmetric minimum-degree ordering without pivoting
    is used; it roughly halves the fill of the default column ordering.
    """
    lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options=dict(SymmetricMode=True))
    x = lu.solve(b)
    x += lu.solve(b - A @ x)
    bnorm = float(np.linalg.norm(b))
    res = float(np.linalg.norm(b - A @ x)) / bnorm if bnorm else 0.0
    return x, res, 0


def solve_spd(A, b, method="direct", tol=1e-10, x0=None, maxiter=None):
    if method == "cg":
        return pcg(A, b, x0=x0, tol=tol, maxiter=maxiter)
    if method == "direct":
        try:
            x, res, it = direct(A, b)
        except MemoryError:
            # LU fill is too large (typically big 3D lattices); CG needs O(n) memory
            warnings.warn("sparse LU ran out of memory; falling back to CG", RuntimeWarning)
            return pcg(A, b, x0=x0, tol=tol, maxiter=maxiter)
        if not res <= max(tol, 1e-12):
            raise SolverError(f"direct solve residual {res:.3e} above tolerance", res, it)
        return x, res, it
    if method == "dense":
        x = np.linalg.solve(np.asarray(A.todense()), b)
        bnorm = float(np.linalg.norm(b))
        res = float(np.linalg.norm(b - A @ x)) / bnorm if bnorm else 0.0
        return x, res, 0
    raise ValueError(f"unknown solver method {method!r}")
