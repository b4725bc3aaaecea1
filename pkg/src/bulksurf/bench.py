"""Convergence studies: single solves, EOC tables and their CSV form."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, fields

import numpy as np

from .assembly import assemble_nbm, assemble_sif, band_discretization, interface_discretization
from .errors import SolverError
from .evolve import run_evolution
from .levelset import make_problem
from .mesh import build_background_mesh, interpolate_levelset
from .norms import error_h1_interface, error_l2_interface
from .solver import solve_pcg

CSV_HEADER = ("level", "h", "dofs", "l2_error", "eoc_l2", "h1_error", "eoc_h1", "cg_iters", "wall_s")
METHODS = ("sif", "nbm", "evolve")
GRAD_MODES = {"sif": ("full", "tangential"), "nbm": ("full", "projected"), "evolve": ("full",)}
MAX_LEVEL = {2: 7, 3: 5}
LARGE_LEVEL = {2: 9, 3: 7}


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    l2_error: float
    eoc_l2: float | None
    h1_error: float
    eoc_h1: float | None
    cg_iters: int
    wall_s: float


def round_sig(x: float, digits: int = 6) -> float:
    """Round to ``digits`` significant digits (the CSV precision)."""
    return float(f"{x:.{digits}g}")


def compute_eoc(errors, hs) -> list:
    """``log(E_i / E_{i-1}) / log(h_i / h_{i-1})`` for ``i >= 1``.

    Returns a list one shorter than the inputs.  Entries involving a
    non-positive or non-finite error are ``None``.

    >>> compute_eoc([16.0, 4.0], [1.0, 0.5])
    [2.0]
    """
    errors = [float(e) for e in errors]
    hs = [float(v) for v in hs]
    if len(errors) != len(hs):
        raise ValueError("errors and hs must have equal length")
    if len(errors) < 2:
        raise ValueError("need at least two levels")
    if any(not (v > 0) for v in hs):
        raise ValueError("mesh sizes must be positive")
    out = []
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if not (e0 > 0 and e1 > 0 and math.isfinite(e0) and math.isfinite(e1)):
            out.append(None)
        else:
            out.append(math.log(e1 / e0) / math.log(hs[i] / hs[i - 1]))
    return out


def check_level(dim: int, level: int, allow_large: bool = False) -> None:
    """Desk-scale guard on the refinement level."""
    cap = (LARGE_LEVEL if allow_large else MAX_LEVEL)[dim]
    if not 1 <= level <= cap:
        hint = "" if allow_large or dim == 2 else " (finer 3D levels need --allow-large)"
        raise ValueError(f"level {level} outside 1..{cap} for dimension {dim}{hint}")


@dataclass
class SolveResult:
    level: int
    h: float
    dofs: int
    l2_error: float
    h1_error: float
    cg_iters: int
    wall_s: float
    coefficients: np.ndarray
    active: object
    iface: object


def solve_stationary(prob, method: str, level: int, grad_mode: str = "full",
                     rtol: float = 1e-8, allow_large: bool = False) -> SolveResult:
    """Discretise, assemble and solve one stationary problem on one level.

    ``wall_s`` covers level-set interpolation, element selection, cut
    computation, assembly and the CG solve, but not the construction of
    the background-mesh object or the error evaluation.
    """
    if method not in ("sif", "nbm"):
        raise ValueError(f"stationary method must be 'sif' or 'nbm', got {method!r}")
    if grad_mode not in GRAD_MODES[method]:
        raise ValueError(f"grad_mode {grad_mode!r} not available for {method}")
    if not prob.is_stationary:
        raise ValueError(f"problem {prob.name!r} is time dependent; use the evolve driver")
    check_level(prob.dim, level, allow_large)
    mesh = build_background_mesh(prob.bounding_box, level)
    t0 = time.perf_counter()
    nodal = interpolate_levelset(prob.levelset, mesh)
    if method == "sif":
        active, iface = interface_discretization(mesh, nodal)
        system = assemble_sif(active, iface, prob, grad_mode=grad_mode)
    else:
        active, band, iface = band_discretization(mesh, nodal)
        system = assemble_nbm(active, band, prob, grad_mode=grad_mode)
    rep = solve_pcg(system, rtol=rtol)
    wall = time.perf_counter() - t0
    if not rep.converged:
        raise SolverError(f"CG did not reach rtol={rtol} in {rep.iterations} iterations")
    l2 = error_l2_interface(rep.coefficients, active, iface, prob)
    h1 = error_h1_interface(rep.coefficients, active, iface, prob)
    return SolveResult(level, mesh.h, active.ndofs, l2, h1, rep.iterations, wall,
                       rep.coefficients, active, iface)


def _evolve_level(prob, level, rtol, tau_scale, t_end):
    check_level(prob.dim, level)
    t0 = time.perf_counter()
    res = run_evolution(prob, level, tau_scale=tau_scale, t_end=t_end, rtol=rtol)
    wall = time.perf_counter() - t0
    fin = res.final
    h1 = error_h1_interface(fin.coefficients, fin.active, fin.iface, prob, fin.t)
    iters = sum(r.cg_iters for r in res.records)
    return SolveResult(level, res.h, fin.active.ndofs, res.max_error, h1, iters, wall,
                       fin.coefficients, fin.active, fin.iface)


def run_convergence(method: str, problem, levels, grad_mode: str = "full", out=None,
                    rtol: float = 1e-8, allow_large: bool = False, tau_scale: float = 2.0,
                    t_end: float = 0.5, progress=None) -> list[ConvergenceRow]:
    """Run ``method`` on ``problem`` for each level and tabulate errors.

    Parameters
    ----------
    method : {"sif", "nbm", "evolve"}
    problem : str or SurfaceProblem
    levels : iterable of int
        Strictly increasing refinement levels.
    out : path-like, optional
        Where to write the CSV table.
    progress : callable, optional
        Called with each finished row.

    Returns
    -------
    list of ConvergenceRow
        Floats are rounded to the six significant digits used in the CSV,
        so reading the file back reproduces the rows exactly.  For
        ``evolve`` the L2 column is the maximum over time steps, the H1
        column is taken at the final time and ``cg_iters`` is the total
        over all steps.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    prob = make_problem(problem) if isinstance(problem, str) else problem
    levels = [int(k) for k in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be a non-empty increasing sequence")
    if grad_mode not in GRAD_MODES[method]:
        raise ValueError(f"grad_mode {grad_mode!r} not available for {method}")
    for k in levels:
        check_level(prob.dim, k, allow_large and method != "evolve")

    results = []
    rows = []
    for k in levels:
        if method == "evolve":
            r = _evolve_level(prob, k, rtol, tau_scale, t_end)
        else:
            r = solve_stationary(prob, method, k, grad_mode, rtol, allow_large)
        results.append(r)
        hs = [q.h for q in results]
        eoc_l2 = compute_eoc([q.l2_error for q in results], hs)[-1] if len(results) > 1 else None
        eoc_h1 = compute_eoc([q.h1_error for q in results], hs)[-1] if len(results) > 1 else None
        row = ConvergenceRow(
            k, round_sig(r.h), r.dofs, round_sig(r.l2_error),
            None if eoc_l2 is None else round_sig(eoc_l2),
            round_sig(r.h1_error), None if eoc_h1 is None else round_sig(eoc_h1),
            r.cg_iters, round_sig(r.wall_s))
        rows.append(row)
        if progress is not None:
            progress(row)
    if out is not None:
        write_csv(rows, out)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6g}"


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, f.name)) for f in fields(ConvergenceRow)])


def read_csv(path) -> list[ConvergenceRow]:
    """Parse a table written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for rec in reader:
            d = dict(zip(header, rec))
            rows.append(ConvergenceRow(
                int(d["level"]), float(d["h"]), int(d["dofs"]), float(d["l2_error"]),
                float(d["eoc_l2"]) if d["eoc_l2"] else None, float(d["h1_error"]),
                float(d["eoc_h1"]) if d["eoc_h1"] else None, int(d["cg_iters"]),
                float(d["wall_s"])))
    return rows
