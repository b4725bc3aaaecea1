"""Jacobi-preconditioned conjugate gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError


@dataclass
class SolveReport:
    coefficients: np.ndarray
    iterations: int
    initial_residual: float
    final_residual: float
    converged: bool


def solve_pcg(system, rtol: float = 1e-8, max_iters: int | None = None, x0=None) -> SolveReport:
    """Solve ``A x = b`` with diagonally preconditioned CG.

    Iterates until ``||r_k||_2 <= rtol * ||r_0||_2``, starting from zero
    unless ``x0`` is given.  Hitting ``max_iters`` (default ``20 * n``)
    returns a report with ``converged=False``.

    Raises
    ------
    SolverError
        On a non-positive diagonal entry or when ``p^T A p <= 0``.
    """
    A, b = system.matrix, np.asarray(system.rhs, dtype=float)
    n = b.size
    if max_iters is None:
        max_iters = 20 * max(n, 1)
    diag = A.diagonal()
    if np.any(~(diag > 0)):
        i = int(np.flatnonzero(~(diag > 0))[0])
        raise SolverError(f"non-positive diagonal entry {diag[i]} at row {i}")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x if x0 is not None else b.copy()
    r0 = float(np.linalg.norm(r))
    if r0 == 0.0:
        return SolveReport(x, 0, 0.0, 0.0, True)
    target = rtol * r0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    res = r0
    it = 0
    while it < max_iters:
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise SolverError(f"CG breakdown: p^T A p = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = float(np.linalg.norm(r))
        if res <= target:
            return SolveReport(x, it, r0, res, True)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return SolveReport(x, it, r0, res, False)
