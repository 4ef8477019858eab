"""Dense linear solves for the discounted moment equations.

LAPACK ``gesv`` (LU with partial pivoting) does the elimination; one round
of iterative refinement runs when the residual misses the tolerance.
Accepts a single system or a stack of systems.
"""
from __future__ import annotations

import numpy as np

RESIDUAL_TOL = 1e-9


class SolverError(ArithmeticError):
    pass


def _residual_norms(A, x, b):
    r = b - np.einsum("...ij,...j->...i", A, x)
    scale = 1.0 + np.abs(x).max(axis=-1, initial=0.0)
    return r, np.abs(r).max(axis=-1, initial=0.0) / scale


def solve(A: np.ndarray, b: np.ndarray, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Solve ``A x = b``; ``A`` is ``(..., n, n)`` and ``b`` is ``(..., n)``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        x = np.linalg.solve(A, b[..., None])[..., 0]
        r, rel = _residual_norms(A, x, b)
        if np.any(rel > tol):
            x = x + np.linalg.solve(A, r[..., None])[..., 0]
            _, rel = _residual_norms(A, x, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(x)) or np.any(rel > tol):
        raise SolverError(f"residual {np.max(rel):.3e} exceeds {tol:.1e}")
    return x


def discounted_solve(P: np.ndarray, rhs: np.ndarray, factor: float) -> np.ndarray:
    """Solve ``x = rhs + factor * P x`` for a (stack of) stochastic matrices."""
    n = P.shape[-1]
    return solve(np.eye(n) - factor * P, rhs)
