"""Implicit Kuhn-triangulated background mesh and active element sets.

Grid cells of side ``2**-level`` are addressed lexicographically.  Each cell
is split into ``dim!`` Kuhn simplices sharing the main diagonal; simplex
``p`` of a cell is the one whose points satisfy
``f[perm[0]] >= f[perm[1]] >= ...`` for the fractional cell coordinates
``f``, where ``perm`` is the ``p``-th permutation in lexicographic order.

Ids
---
cell id    ``sum_i idx[i] * N**(d-1-i)``  (``N`` cells per axis)
vertex id  ``sum_i idx[i] * (N+1)**(d-1-i)``
element id ``cell_id * dim! + p``
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

MAX_CELLS = 2**30


class BackgroundMesh:
    """Uniform structured simplicial mesh of a cube, materialised on demand."""

    def __init__(self, lower, cells_per_axis: int, cell_side: float, level: int | None = None):
        self.lower = np.asarray(lower, dtype=float)
        self.dim = self.lower.size
        self.cells_per_axis = int(cells_per_axis)
        self.cell_side = float(cell_side)
        self.level = level
        d = self.dim
        self.perms = np.array(list(itertools.permutations(range(d))), dtype=np.int64)
        self.n_simplex = len(self.perms)
        # vertex offsets (in cell units) of each Kuhn simplex
        offs = np.zeros((self.n_simplex, d + 1, d), dtype=np.int64)
        for p, perm in enumerate(self.perms):
            for i, ax in enumerate(perm):
                offs[p, i + 1:, ax] = 1
        self.vertex_offsets = offs
        # gradients of barycentric coordinates in cell units
        grads = np.zeros((self.n_simplex, d + 1, d))
        for p, perm in enumerate(self.perms):
            grads[p, 0, perm[0]] = -1.0
            for i in range(1, d):
                grads[p, i, perm[i - 1]] = 1.0
                grads[p, i, perm[i]] = -1.0
            grads[p, d, perm[d - 1]] = 1.0
        self._bary_grads = grads / self.cell_side
        self._corner_offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)

    # -- geometry ---------------------------------------------------------
    @property
    def h(self) -> float:
        """Simplex diameter (the cell diagonal)."""
        return self.cell_side * math.sqrt(self.dim)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.cells_per_axis * self.cell_side

    @property
    def element_volume(self) -> float:
        return self.cell_side**self.dim / self.n_simplex

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim

    def __repr__(self):
        return (f"BackgroundMesh(dim={self.dim}, lower={self.lower.tolist()}, "
                f"cells_per_axis={self.cells_per_axis}, cell_side={self.cell_side})")

    # -- id arithmetic ----------------------------------------------------
    def _ravel(self, idx, n):
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros(idx.shape[:-1], dtype=np.int64)
        for i in range(self.dim):
            out = out * n + idx[..., i]
        return out

    def _unravel(self, ids, n):
        ids = np.asarray(ids, dtype=np.int64)
        out = np.empty(ids.shape + (self.dim,), dtype=np.int64)
        for i in range(self.dim - 1, -1, -1):
            out[..., i] = ids % n
            ids = ids // n
        return out

    def cell_id(self, idx):
        return self._ravel(idx, self.cells_per_axis)

    def cell_index(self, cell_ids):
        return self._unravel(cell_ids, self.cells_per_axis)

    def vertex_id(self, idx):
        return self._ravel(idx, self.cells_per_axis + 1)

    def vertex_index(self, vids):
        return self._unravel(vids, self.cells_per_axis + 1)

    def vertex_coords(self, vids):
        return self.lower + self.cell_side * self.vertex_index(vids)

    def cell_vertex_ids(self, cell_ids):
        """All ``2**dim`` corner vertex ids of each cell."""
        idx = self.cell_index(cell_ids)
        return self.vertex_id(idx[..., None, :] + self._corner_offsets)

    def cell_elements(self, cell_ids):
        cell_ids = np.asarray(cell_ids, dtype=np.int64)
        return (cell_ids[:, None] * self.n_simplex + np.arange(self.n_simplex)).ravel()

    def element_vertex_ids(self, eids):
        eids = np.asarray(eids, dtype=np.int64)
        idx = self.cell_index(eids // self.n_simplex)
        return self.vertex_id(idx[:, None, :] + self.vertex_offsets[eids % self.n_simplex])

    def element_coords(self, eids):
        eids = np.asarray(eids, dtype=np.int64)
        idx = self.cell_index(eids // self.n_simplex)
        offs = self.vertex_offsets[eids % self.n_simplex]
        return self.lower + self.cell_side * (idx[:, None, :] + offs)

    def basis_gradients(self, eids):
        """Constant gradients of the P1 basis, shape ``(n, dim+1, dim)``."""
        return self._bary_grads[np.asarray(eids, dtype=np.int64) % self.n_simplex]

    def locate_point(self, x):
        """Element ids and barycentric coordinates of points inside the box.

        Raises
        ------
        GeometryError
            If a point lies outside the box.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rel = (x - self.lower) / self.cell_side
        n = self.cells_per_axis
        eps = 1e-12 * n
        if np.any(rel < -eps) or np.any(rel > n + eps):
            bad = np.flatnonzero(np.any((rel < -eps) | (rel > n + eps), axis=1))[0]
            raise GeometryError(f"point {x[bad]} outside mesh box")
        cell = np.clip(np.floor(rel).astype(np.int64), 0, n - 1)
        f = rel - cell
        order = np.argsort(-f, axis=1, kind="stable")
        # index of ``order`` in lexicographic permutation list
        d = self.dim
        fact = [math.factorial(d - 1 - i) for i in range(d)]
        pidx = np.zeros(len(x), dtype=np.int64)
        for i in range(d):
            smaller = (order[:, i + 1:] < order[:, i:i + 1]).sum(axis=1)
            pidx += smaller * fact[i]
        fs = np.take_along_axis(f, order, axis=1)
        bary = np.empty((len(x), d + 1))
        bary[:, 0] = 1.0 - fs[:, 0]
        bary[:, 1:d] = fs[:, :-1] - fs[:, 1:]
        bary[:, d] = fs[:, -1]
        return self.cell_id(cell) * self.n_simplex + pidx, bary


def build_background_mesh(box, level: int, dim: int | None = None) -> BackgroundMesh:
    """Uniform mesh with cell side ``2**-level`` covering ``box``.

    The box is snapped outwards to the grid ``2**-level * Z^dim`` so that
    meshes of successive levels are nested.

    Parameters
    ----------
    box : (lower, upper) pair of sequences
    level : int
    dim : int, optional
        Checked against the box dimension when given.
    """
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    if dim is not None and lo.size == 1:
        lo, hi = np.full(dim, lo[0]), np.full(dim, hi[0])
    if dim is not None and lo.size != dim:
        raise ValueError("box dimension does not match dim")
    if level < 0:
        raise ValueError("level must be non-negative")
    side = 2.0**-level
    ilo = np.floor(lo / side + 1e-9).astype(np.int64)
    ihi = np.ceil(hi / side - 1e-9).astype(np.int64)
    counts = ihi - ilo
    if np.any(counts <= 0):
        raise ValueError("empty box")
    if np.any(counts != counts[0]):
        raise ValueError("box must be a square/cube")
    n = int(counts[0])
    if float(n) ** lo.size > MAX_CELLS:
        raise ValueError(f"resolution overflow: {n}**{lo.size} cells exceeds {MAX_CELLS}")
    return BackgroundMesh(ilo * side, n, side, level)


# ---------------------------------------------------------------------------
# nodal interpolation of the level set


def candidate_cells(mesh: BackgroundMesh, ls, t: float, margin: float, safety: float = 2.0):
    """Cells on which no cheap bound certifies ``|phi| > margin``.

    Blocks of cells are refined hierarchically.  A block with centre ``c``
    and half-diagonal ``r`` is discarded when
    ``|phi(c)| > safety * (|grad phi(c)| r + |D^2 phi(c)| r^2 / 2) + margin``.
    """
    d, n = mesh.dim, mesh.cells_per_axis
    block = 1
    while n // (2 * block) >= 8:
        block *= 2
    nb = -(-n // block)
    starts = np.array(list(itertools.product(range(nb), repeat=d)), dtype=np.int64) * block
    while True:
        ends = np.minimum(starts + block, n)
        lo = mesh.lower + mesh.cell_side * starts
        hi = mesh.lower + mesh.cell_side * ends
        c = 0.5 * (lo + hi)
        r = 0.5 * np.linalg.norm(hi - lo, axis=1)
        with np.errstate(all="ignore"):
            phi = ls.phi(c, t)
            g = np.linalg.norm(ls.grad(c, t), axis=1)
            hs = np.linalg.norm(ls.hessian(c, t), axis=(1, 2))
            bound = safety * (g * r + 0.5 * hs * r**2) + margin
            keep = ~(np.abs(phi) > bound)
        starts = starts[keep]
        if block == 1:
            break
        block //= 2
        kids = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64) * block
        starts = (starts[:, None, :] + kids).reshape(-1, d)
        starts = starts[np.all(starts < n, axis=1)]
    return np.sort(mesh.cell_id(starts))


class NodalField:
    """Lazily evaluated vertex values of a level set (the nodal interpolant).

    Exact zeros are stored as ``+0.0``; a vertex counts as negative iff its
    value is ``< 0``.
    """

    def __init__(self, mesh: BackgroundMesh, ls, t: float = 0.0):
        self.mesh = mesh
        self.levelset = ls
        self.t = t
        self.cells = np.empty(0, dtype=np.int64)
        self._ids = np.empty(0, dtype=np.int64)
        self._vals = np.empty(0)
        self._lock = threading.Lock()

    def __len__(self):
        return self._ids.size

    def values(self, vids):
        """Level-set values at vertex ids, evaluating uncached ones."""
        vids = np.asarray(vids, dtype=np.int64)
        flat = vids.ravel()
        with self._lock:
            pos = np.searchsorted(self._ids, flat)
            hit = pos < self._ids.size
            hit[hit] = self._ids[pos[hit]] == flat[hit]
            if not np.all(hit):
                new = np.unique(flat[~hit])
                nv = self.levelset.phi(self.mesh.vertex_coords(new), self.t) + 0.0
                ids = np.concatenate([self._ids, new])
                vals = np.concatenate([self._vals, nv])
                order = np.argsort(ids, kind="stable")
                self._ids, self._vals = ids[order], vals[order]
                pos = np.searchsorted(self._ids, flat)
            return self._vals[pos].reshape(vids.shape)

    def evaluate(self, x):
        """Value of the piecewise-linear interpolant at arbitrary points."""
        eids, bary = self.mesh.locate_point(x)
        return np.einsum("ni,ni->n", self.values(self.mesh.element_vertex_ids(eids)), bary)

    def elements(self):
        """Element ids of the candidate cells, ascending."""
        return self.mesh.cell_elements(self.cells)


def interpolate_levelset(ls, mesh: BackgroundMesh, t: float = 0.0, margin: float | None = None):
    """Nodal interpolant of ``ls`` on the cells near its zero level.

    ``margin`` (default ``2h``) bounds the region of interest in level-set
    units; vertices of all candidate cells are evaluated eagerly, others on
    request.
    """
    nodal = NodalField(mesh, ls, t)
    nodal.cells = candidate_cells(mesh, ls, t, 2.0 * mesh.h if margin is None else margin)
    nodal.values(np.unique(mesh.cell_vertex_ids(nodal.cells)))
    return nodal


# ---------------------------------------------------------------------------
# active sets


@dataclass
class ActiveSet:
    """Selected elements and the dense numbering of their vertices.

    ``local_dofs[e, i]`` is the dense index of vertex ``i`` of element ``e``;
    ``dof_vertices`` maps dense indices back to vertex ids.
    """

    kind: str
    mesh: BackgroundMesh
    element_ids: np.ndarray
    vertex_ids: np.ndarray
    values: np.ndarray
    h: float

    def __post_init__(self):
        self.dof_vertices, inv = np.unique(self.vertex_ids, return_inverse=True)
        self.local_dofs = inv.reshape(self.vertex_ids.shape)

    @property
    def ndofs(self) -> int:
        return self.dof_vertices.size

    def __len__(self):
        return self.element_ids.size

    def dof_index(self, vids):
        """Dense indices of vertex ids; ``-1`` where the vertex is inactive."""
        vids = np.asarray(vids, dtype=np.int64)
        pos = np.searchsorted(self.dof_vertices, vids)
        pos = np.minimum(pos, self.ndofs - 1)
        return np.where(self.dof_vertices[pos] == vids, pos, -1)

    def coords(self):
        return self.mesh.element_coords(self.element_ids)

    def dof_coords(self):
        return self.mesh.vertex_coords(self.dof_vertices)

    def gradients(self):
        return self.mesh.basis_gradients(self.element_ids)

    def levelset_gradient(self):
        """Constant ``grad I_h phi`` on each element."""
        return np.einsum("ei,eik->ek", self.values, self.gradients())

    def subset(self, mask, kind: str | None = None) -> "ActiveSet":
        return ActiveSet(kind or self.kind, self.mesh, self.element_ids[mask],
                         self.vertex_ids[mask], self.values[mask], self.h)


def interface_owner_mask(element_ids, vertex_ids, values):
    """Elements owning a positive-measure piece of the zero level.

    Case 1: strict sign change.  Case 2: a whole facet is zero; among the
    elements sharing that facet the smallest element id owns it.
    """
    d1 = values.shape[1]
    neg = values < 0
    case1 = neg.any(axis=1) & (values > 0).any(axis=1)
    zero = values == 0
    case2 = zero.sum(axis=1) == d1 - 1
    mask = case1.copy()
    if np.any(case2):
        idx = np.flatnonzero(case2)
        fv = np.where(zero[idx], vertex_ids[idx], -1)
        fv = np.sort(fv, axis=1)[:, 1:]
        _, inv = np.unique(fv, axis=0, return_inverse=True)
        inv = inv.ravel()
        best = np.full(inv.max() + 1, np.iinfo(np.int64).max)
        np.minimum.at(best, inv, element_ids[idx])
        mask[idx] = element_ids[idx] == best[inv]
    return mask


def _candidates(mesh, nodal):
    eids = nodal.elements()
    vids = mesh.element_vertex_ids(eids)
    return eids, vids, nodal.values(vids)


def select_interface_elements(mesh: BackgroundMesh, nodal: NodalField) -> ActiveSet:
    """Elements ``T`` with ``H^n(T ∩ Γ_h) > 0``, each surface piece owned once."""
    eids, vids, vals = _candidates(mesh, nodal)
    mask = interface_owner_mask(eids, vids, vals)
    if not np.any(mask):
        raise GeometryError("surface not captured by box/level")
    return ActiveSet("interface", mesh, eids[mask], vids[mask], vals[mask], mesh.h)


def select_band_elements(mesh: BackgroundMesh, nodal: NodalField, h: float | None = None) -> ActiveSet:
    """Elements overlapping the open band ``|I_h phi| < h`` with positive volume."""
    h = mesh.h if h is None else h
    eids, vids, vals = _candidates(mesh, nodal)
    mask = (vals.min(axis=1) < h) & (vals.max(axis=1) > -h)
    if not np.any(mask):
        raise GeometryError("narrow band not captured by box/level")
    return ActiveSet("band", mesh, eids[mask], vids[mask], vals[mask], h)


def locate_point(mesh: BackgroundMesh, x):
    return mesh.locate_point(x)
