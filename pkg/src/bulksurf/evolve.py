"""Time stepping for advection-diffusion on an evolving surface."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_evolve_step, band_discretization
from .cutgeom import SubSimplexSet
from .errors import GeometryError, SolverError
from .levelset import closest_point, with_data
from .mesh import ActiveSet, BackgroundMesh, build_background_mesh, interpolate_levelset
from .norms import error_l2_interface
from .solver import solve_pcg


@dataclass
class TimePartition:
    t_end: float
    steps: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.steps)])

    def __len__(self):
        return self.steps.size


def uniform_partition(t_end: float, tau: float) -> TimePartition:
    """``ceil(t_end / tau)`` steps of size ``tau``; the last one is shortened."""
    if tau <= 0 or t_end <= 0:
        raise ValueError("t_end and tau must be positive")
    n = max(1, math.ceil(t_end / tau - 1e-12))
    steps = np.full(n, tau)
    steps[-1] = t_end - tau * (n - 1)
    return TimePartition(t_end, steps)


@dataclass
class EvolveState:
    m: int
    t: float
    active: ActiveSet
    band: SubSimplexSet
    iface: SubSimplexSet
    coefficients: np.ndarray
    cg_iterations: int = 0
    mass: float = field(init=False)

    def __post_init__(self):
        self.mass = total_mass(self)


def total_mass(state: EvolveState) -> float:
    """``∫_{Γ_h^m} u_h^m dσ``."""
    lam, _, w = state.iface.quadrature(2)
    u = np.einsum("kqi,ki->kq", lam, state.coefficients[state.active.local_dofs[state.iface.parent]])
    return float(np.sum(w * u))


def _discretize(prob, mesh: BackgroundMesh, t: float):
    nodal = interpolate_levelset(prob.levelset, mesh, t)
    return band_discretization(mesh, nodal)


def initialize(prob, mesh: BackgroundMesh, t: float = 0.0, u0=None) -> EvolveState:
    """Interpolate ``u0(p(x))`` at the vertices of the band active set.

    Vertices where the projection is undefined (vanishing gradient) are
    only tolerated if they do not belong to a surface-cut element; their
    coefficients never enter the scheme and are set to zero.
    """
    u0 = u0 or (lambda x: prob.exact_u(x, t))
    active, band, iface = _discretize(prob, mesh, t)
    p = closest_point(active.dof_coords(), t, prob.levelset, on_failure="nan")
    bad = ~np.all(np.isfinite(p), axis=1)
    coeffs = np.zeros(active.ndofs)
    coeffs[~bad] = u0(p[~bad])
    if np.any(bad):
        used = np.unique(active.local_dofs[iface.parent])
        if np.any(bad[used]):
            raise GeometryError("closest-point projection failed at a vertex of Γ_h^0")
    return EvolveState(0, t, active, band, iface, coeffs)


def advance(state: EvolveState, prob, tau: float, rtol: float = 1e-8) -> EvolveState:
    """One step of the hybrid scheme from ``state.t`` to ``state.t + tau``."""
    mesh = state.active.mesh
    t_next = state.t + tau
    active, band, iface = _discretize(prob, mesh, t_next)
    system = assemble_evolve_step(state.active, state.coefficients, state.iface,
                                  active, band, iface, prob, t_next, tau)
    rep = solve_pcg(system, rtol=rtol)
    if not rep.converged:
        raise SolverError(f"CG did not converge in {rep.iterations} iterations at step {state.m + 1}")
    return EvolveState(state.m + 1, t_next, active, band, iface, rep.coefficients, rep.iterations)


@dataclass
class StepRecord:
    m: int
    t: float
    dofs: int
    cg_iters: int
    mass: float
    l2_error: float


@dataclass
class EvolutionResult:
    level: int
    h: float
    records: list
    final: EvolveState
    initial_area: float = 1.0

    @property
    def max_error(self) -> float:
        return max(r.l2_error for r in self.records)

    @property
    def mass_drift(self) -> float:
        """``|mass^N - mass^0| / max(|mass^0|, |Γ_h^0|)``."""
        m0, mN = self.records[0].mass, self.records[-1].mass
        return abs(mN - m0) / max(abs(m0), self.initial_area)


def run_evolution(prob, level: int, tau_scale: float = 2.0, t_end: float = 0.5,
                  gamma: float = 1.0, rtol: float = 1e-8, errors: bool = True,
                  callback=None, strict_tau: bool = False) -> EvolutionResult:
    """Integrate from 0 to ``t_end`` with ``tau = tau_scale * dx**2``.

    ``dx = 2**-level`` is the grid spacing (cell side), not the element
    diameter ``h``; with ``tau_scale=2`` this reproduces the reference
    benchmark step sizes.  ``callback(record)`` is invoked after every
    step (including ``m = 0``).  A step larger than ``gamma * sqrt(h)``
    triggers a warning, or a ``ValueError`` when ``strict_tau`` is set.
    """
    mesh = build_background_mesh(prob.bounding_box, level)
    h = mesh.h
    part = uniform_partition(t_end, tau_scale * mesh.cell_side**2)
    if part.steps.max() > gamma * math.sqrt(h):
        msg = f"tau = {part.steps.max():.3g} exceeds {gamma} * sqrt(h); mass conservation is not guaranteed"
        if strict_tau:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    state = initialize(prob, mesh)
    area0 = float(state.iface.total_measure)

    def record(s):
        err = error_l2_interface(s.coefficients, s.active, s.iface, prob, s.t) if errors else float("nan")
        rec = StepRecord(s.m, s.t, s.active.ndofs, s.cg_iterations, s.mass, err)
        if callback is not None:
            callback(rec)
        return rec

    records = [record(state)]
    for tau in part.steps:
        state = advance(state, prob, float(tau), rtol)
        records.append(record(state))
    return EvolutionResult(level, h, records, state, initial_area=area0)


def source_free(prob):
    """Copy of ``prob`` with ``f = 0``; the exact solution is then unknown."""
    return with_data(prob, rhs_f=lambda x, t: np.zeros(len(x)))
