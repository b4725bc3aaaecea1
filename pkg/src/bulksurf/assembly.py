"""Assembly of the sharp-interface, narrow-band and evolving-surface systems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cutgeom import SubSimplexSet, band_cuts, zero_level_cuts
from .errors import GeometryError, NumericalError
from .levelset import closest_point
from .mesh import ActiveSet, interface_owner_mask, select_band_elements, select_interface_elements

MASS_DEGREE = 2
LOAD_DEGREE = 4
TRANSPORT_DEGREE = 5
CHUNK = 400_000


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def dim(self) -> int:
        return self.rhs.size


# ---------------------------------------------------------------------------
# discretisation setup


def _prune(active: ActiveSet, cuts: SubSimplexSet):
    """Drop elements whose cut lost all sub-simplices (slivers)."""
    has = np.zeros(len(active), dtype=bool)
    has[cuts.parent] = True
    if np.all(has):
        return active, cuts
    remap = np.cumsum(has) - 1
    cuts = SubSimplexSet(cuts.dim, remap[cuts.parent], cuts.bary, cuts.points, cuts.measure)
    return active.subset(has), cuts


def interface_cuts(active: ActiveSet) -> SubSimplexSet:
    """Discrete surface pieces owned by elements of ``active``.

    Parents index into ``active``.
    """
    mask = interface_owner_mask(active.element_ids, active.vertex_ids, active.values)
    idx = np.flatnonzero(mask)
    cuts = zero_level_cuts(active.coords()[idx], active.values[idx])
    cuts.parent = idx[cuts.parent]
    return cuts


def interface_discretization(mesh, nodal):
    """Active set and surface cuts for the sharp-interface method."""
    active = select_interface_elements(mesh, nodal)
    active, cuts = _prune(active, zero_level_cuts(active.coords(), active.values))
    if len(active) == 0:
        raise GeometryError("surface not captured by box/level")
    return active, cuts


def band_discretization(mesh, nodal, h: float | None = None):
    """Active set, band cuts and surface cuts for the narrow-band method."""
    active = select_band_elements(mesh, nodal, h)
    active, cuts = _prune(active, band_cuts(active.coords(), active.values, active.h))
    if len(active) == 0:
        raise GeometryError("narrow band not captured by box/level")
    return active, cuts, interface_cuts(active)


# ---------------------------------------------------------------------------
# helpers


def _per_parent(cuts: SubSimplexSet, arr, n: int):
    out = np.zeros((n,) + arr.shape[1:])
    if cuts.parent.size:
        uniq, starts = np.unique(cuts.parent, return_index=True)
        out[uniq] = np.add.reduceat(arr, starts, axis=0)
    return out


def _scatter_matrix(active: ActiveSet, local):
    n = active.ndofs
    ld = active.local_dofs
    rows = np.broadcast_to(ld[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(ld[:, None, :], local.shape).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vector(active: ActiveSet, local):
    return np.bincount(active.local_dofs.ravel(), weights=local.ravel(), minlength=active.ndofs)


def extended(fun, x, t, ls):
    """``fun(p(x), t)`` for points of any leading shape, evaluated in chunks."""
    shape = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty(flat.shape[0])
    for s in range(0, flat.shape[0], CHUNK):
        out[s:s + CHUNK] = fun(closest_point(flat[s:s + CHUNK], t, ls), t)
    return out.reshape(shape)


def _mass_local(cuts, n):
    lam, _, w = cuts.quadrature(MASS_DEGREE)
    return _per_parent(cuts, np.einsum("kq,kqi,kqj->kij", w, lam, lam), n)


def _load_local(cuts, n, prob, t):
    lam, x, w = cuts.quadrature(LOAD_DEGREE)
    f = extended(prob.rhs_f, x, t, prob.levelset)
    return _per_parent(cuts, np.einsum("kq,kq,kqi->ki", w, f, lam), n)


def _stiffness_local(active, measure, mode):
    G = active.gradients()
    if mode == "full":
        return measure[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    g = active.levelset_gradient()
    ng = np.linalg.norm(g, axis=1)
    if np.any(ng <= 0):
        raise NumericalError("vanishing discrete level-set gradient on an active element")
    nu = g / ng[:, None]
    Gn = np.einsum("eik,ek->ei", G, nu)
    GG = np.einsum("eik,ejk->eij", G, G) - Gn[:, :, None] * Gn[:, None, :]
    return measure[:, None, None] * GG


def _check_cuts(active, cuts):
    if cuts is None or (len(active) and cuts.parent.size and cuts.parent.max() >= len(active)):
        raise ValueError("cut data missing or inconsistent with the active set")


# ---------------------------------------------------------------------------
# stationary schemes


def assemble_sif(active: ActiveSet, cuts: SubSimplexSet, prob, t: float = 0.0,
                 grad_mode: str = "full") -> SparseSystem:
    """Sharp-interface system on the discrete surface.

    ``grad_mode="tangential"`` replaces the full gradient by its projection
    onto the discrete tangent plane.
    """
    if grad_mode not in ("full", "tangential"):
        raise ValueError(f"grad_mode must be 'full' or 'tangential', got {grad_mode!r}")
    _check_cuts(active, cuts)
    n = len(active)
    measure = cuts.measure_per_parent(n)
    local = _stiffness_local(active, measure, "full" if grad_mode == "full" else "tangential")
    local += _mass_local(cuts, n)
    return SparseSystem(_scatter_matrix(active, local),
                        _scatter_vector(active, _load_local(cuts, n, prob, t)))


def assemble_nbm(active: ActiveSet, cuts: SubSimplexSet, prob, t: float = 0.0,
                 grad_mode: str = "full") -> SparseSystem:
    """Narrow-band system, weighted by ``|grad I_h phi| / (2h)``.

    ``grad_mode="projected"`` uses tangentially projected gradients.
    """
    if grad_mode not in ("full", "projected"):
        raise ValueError(f"grad_mode must be 'full' or 'projected', got {grad_mode!r}")
    _check_cuts(active, cuts)
    n = len(active)
    weight = np.linalg.norm(active.levelset_gradient(), axis=1)
    if np.any(weight <= 0):
        raise NumericalError("vanishing discrete level-set gradient on an active element")
    scale = weight / (2.0 * active.h)
    measure = cuts.measure_per_parent(n)
    local = _stiffness_local(active, measure, "full" if grad_mode == "full" else "tangential")
    local += _mass_local(cuts, n)
    local *= scale[:, None, None]
    load = _load_local(cuts, n, prob, t) * scale[:, None]
    return SparseSystem(_scatter_matrix(active, local), _scatter_vector(active, load))


# ---------------------------------------------------------------------------
# evolving surface


def transported_load(prev_active: ActiveSet, prev_coeffs, prev_iface: SubSimplexSet,
                     next_active: ActiveSet, prob, t_next: float, tau: float):
    """``∫_{Γ_h^m} u_h^m φ_j(x + τ v^e(x)) dσ`` for the basis of ``next_active``.

    Raises
    ------
    GeometryError
        When a shifted quadrature point leaves the next active region.
    """
    mesh = next_active.mesh
    degree = TRANSPORT_DEGREE if prev_iface.dim == 1 else 4
    lam, x, w = prev_iface.quadrature(degree)
    u = np.einsum("kqi,ki->kq", lam, prev_coeffs[prev_active.local_dofs[prev_iface.parent]])
    x = x.reshape(-1, x.shape[-1])
    vel = prob.velocity
    if vel is None:
        y = x
    else:
        y = x + tau * vel(closest_point(x, t_next, prob.levelset), t_next)
    eids, bary = mesh.locate_point(y)
    dofs = next_active.dof_index(mesh.element_vertex_ids(eids))
    pos = np.searchsorted(next_active.element_ids, eids)
    pos = np.minimum(pos, len(next_active) - 1)
    inside = next_active.element_ids[pos] == eids
    bad = ~inside & np.any((dofs < 0) & (bary > 1e-12), axis=1)
    bad |= ~inside & np.all(bary > 1e-12, axis=1)
    if np.any(bad):
        i = np.flatnonzero(bad)[0]
        raise GeometryError(f"shifted quadrature point {y[i]} (from {x[i]}) lies outside the "
                            "active region; reduce tau relative to h")
    contrib = (w.ravel() * u.ravel())[:, None] * bary
    ok = dofs >= 0
    return np.bincount(dofs[ok], weights=contrib[ok], minlength=next_active.ndofs)


def assemble_evolve_step(prev_active: ActiveSet, prev_coeffs, prev_iface: SubSimplexSet,
                         next_active: ActiveSet, next_band: SubSimplexSet,
                         next_iface: SubSimplexSet, prob, t_next: float, tau: float) -> SparseSystem:
    """System for one step of the hybrid evolving-surface scheme.

    Matrix: surface mass on ``Γ_h^{m+1}`` plus ``τ/(2h)`` times the weighted
    band stiffness.  Right-hand side: transported old solution plus
    ``τ ∫ f^e φ``.
    """
    _check_cuts(next_active, next_band)
    n = len(next_active)
    weight = np.linalg.norm(next_active.levelset_gradient(), axis=1)
    stiff = _stiffness_local(next_active, next_band.measure_per_parent(n), "full")
    local = _mass_local(next_iface, n) + (tau / (2.0 * next_active.h)) * weight[:, None, None] * stiff
    rhs = transported_load(prev_active, prev_coeffs, prev_iface, next_active, prob, t_next, tau)
    if tau != 0.0:
        rhs = rhs + tau * _scatter_vector(next_active, _load_local(next_iface, n, prob, t_next))
    return SparseSystem(_scatter_matrix(next_active, local), rhs)
