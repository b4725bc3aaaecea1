"""Sub-simplex decomposition of cut simplices, and simplex quadrature.

Sub-simplices are stored through the barycentric coordinates of their
vertices with respect to the parent simplex, so that P1 basis values at
quadrature points are available without any inverse mapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np

SLIVER_TOL = 1e-14


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference ``dim``-simplex; weights sum to one."""

    dim: int
    degree: int
    points: np.ndarray  # barycentric, shape (q, dim+1)
    weights: np.ndarray


def _orbit(coords):
    return sorted(set(permutations(coords)))


def _symmetric(dim, classes):
    pts, wts = [], []
    for w, coords in classes:
        orb = _orbit(coords)
        pts.extend(orb)
        wts.extend([w] * len(orb))
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


def _tri_rules():
    a1, a2 = 0.445948490915965, 0.091576213509771
    deg4 = [(0.223381589678011, (1 - 2 * a1, a1, a1)),
            (0.109951743655322, (1 - 2 * a2, a2, a2))]
    return {
        1: [(1.0, (1 / 3, 1 / 3, 1 / 3))],
        2: [(1 / 3, (0.0, 0.5, 0.5))],
        4: deg4,
    }


def _tet_rules():
    a = 0.1381966011250105
    deg5 = [(0.0734930431163619, (1 - 3 * 0.0927352503108912,) + (0.0927352503108912,) * 3),
            (0.1126879257180159, (1 - 3 * 0.3108859192633006,) + (0.3108859192633006,) * 3),
            (0.0425460207770812, (0.4544962958743504,) * 2 + (0.0455037041256496,) * 2)]
    return {
        1: [(1.0, (0.25,) * 4)],
        2: [(0.25, (1 - 3 * a, a, a, a))],
        4: deg5,
    }


@lru_cache(maxsize=None)
def gauss_rule(dim: int, degree: int) -> QuadratureRule:
    """Symmetric positive-weight rule exact up to ``degree``.

    Segments support degrees 1-5 (Gauss-Legendre), triangles and tetrahedra
    degrees 1-4.  A requested degree may be served by a more accurate rule.
    """
    if dim == 1:
        if not 1 <= degree <= 5:
            raise ValueError(f"unsupported segment degree {degree}")
        npts = (degree + 2) // 2
        x, w = np.polynomial.legendre.leggauss(npts)
        s = 0.5 * (x + 1)
        return QuadratureRule(1, degree, np.stack([1 - s, s], axis=1), w / 2)
    if dim not in (2, 3) or not 1 <= degree <= 4:
        raise ValueError(f"unsupported simplex rule dim={dim} degree={degree}")
    table = _tri_rules() if dim == 2 else _tet_rules()
    key = min(k for k in table if k >= degree)
    pts, wts = _symmetric(dim, table[key])
    return QuadratureRule(dim, degree, pts, wts / wts.sum())


# ---------------------------------------------------------------------------
# sub-simplex sets


@dataclass
class SubSimplexSet:
    """Sub-simplices of a batch of parent simplices.

    Attributes
    ----------
    parent : (K,) int   index of the parent in the batch that was clipped
    bary : (K, m, d+1)  barycentric vertex coordinates in the parent
    points : (K, m, d)  physical vertex coordinates
    measure : (K,)
    """

    dim: int
    parent: np.ndarray
    bary: np.ndarray
    points: np.ndarray
    measure: np.ndarray

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    def __len__(self):
        return self.parent.size

    def measure_per_parent(self, n_parents: int):
        return np.bincount(self.parent, weights=self.measure, minlength=n_parents)

    def quadrature(self, degree: int):
        """Quadrature data on every sub-simplex.

        Returns parent-barycentric points ``(K, q, d+1)``, physical points
        ``(K, q, d)`` and weights ``(K, q)`` that already include the measure.
        """
        rule = gauss_rule(self.dim, degree)
        lam = np.einsum("qj,kjv->kqv", rule.points, self.bary)
        x = np.einsum("qj,kjx->kqx", rule.points, self.points)
        return lam, x, self.measure[:, None] * rule.weights[None, :]

    def restrict(self, mask) -> "SubSimplexSet":
        return SubSimplexSet(self.dim, self.parent[mask], self.bary[mask],
                             self.points[mask], self.measure[mask])


def simplex_measure(points):
    """Measure of (batched) simplices given vertex coordinates ``(..., m, d)``."""
    points = np.asarray(points, dtype=float)
    e = points[..., 1:, :] - points[..., :1, :]
    k = e.shape[-2]
    if k == 0:
        return np.ones(points.shape[:-2])
    if k == e.shape[-1]:
        return np.abs(np.linalg.det(e)) / math.factorial(k)
    gram = np.einsum("...ix,...jx->...ij", e, e)
    return np.sqrt(np.maximum(np.linalg.det(gram), 0.0)) / math.factorial(k)


def _finish(dim, parent, bary, coords, parent_scale):
    order = np.argsort(parent, kind="stable")
    parent, bary = parent[order], bary[order]
    pts = np.einsum("kjv,kvx->kjx", bary, coords[parent])
    meas = simplex_measure(pts)
    keep = meas > SLIVER_TOL * parent_scale[parent]
    return SubSimplexSet(dim, parent[keep], bary[keep], pts[keep], meas[keep])


def _empty(dim, d):
    return SubSimplexSet(dim, np.empty(0, dtype=np.int64), np.empty((0, dim + 1, d + 1)),
                         np.empty((0, dim + 1, d)), np.empty(0))


def _crossing(vals, i, j):
    """Barycentric point where the linear function crosses zero on edge (i, j)."""
    rows = np.arange(len(vals))
    vi, vj = vals[rows, i], vals[rows, j]
    s = vi / (vi - vj)
    out = np.zeros(vals.shape)
    out[rows, i] = 1.0 - s
    out[rows, j] += s
    return out


def zero_level_cuts(coords, values) -> SubSimplexSet:
    """Marching-simplex extraction of ``{linear interpolant = 0}``.

    Parameters
    ----------
    coords : (M, d+1, d) vertex coordinates
    values : (M, d+1) vertex values; zeros count as positive
    """
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    m, d1 = values.shape
    d = d1 - 1
    vol = simplex_measure(coords)
    scale = vol ** ((d - 1) / d)
    neg = values < 0
    nneg = neg.sum(axis=1)
    zero = values == 0
    facet = zero.sum(axis=1) == d
    parents, barys = [], []

    # whole zero facet
    idx = np.flatnonzero(facet)
    if idx.size:
        order = np.argsort(~zero[idx], axis=1, kind="stable")[:, :d]
        b = np.zeros((idx.size, d, d1))
        np.put_along_axis(b, order[:, :, None], 1.0, axis=2)
        parents.append(idx)
        barys.append(b)

    order_all = np.argsort(~neg, axis=1, kind="stable")  # negatives first
    regular = ~facet & (nneg > 0) & (nneg < d1)
    for k in range(1, d1):
        idx = np.flatnonzero(regular & (nneg == k))
        if not idx.size:
            continue
        o = order_all[idx]
        v = values[idx]
        if d == 2:
            if k == 1:
                pts = [_crossing(v, o[:, 0], o[:, 1]), _crossing(v, o[:, 0], o[:, 2])]
            else:
                pts = [_crossing(v, o[:, 0], o[:, 2]), _crossing(v, o[:, 1], o[:, 2])]
            parents.append(idx)
            barys.append(np.stack(pts, axis=1))
        elif d == 3:
            if k in (1, 3):
                lone = o[:, 0] if k == 1 else o[:, 3]
                others = o[:, 1:] if k == 1 else o[:, :3]
                pts = [_crossing(v, others[:, j], lone) if k == 3 else _crossing(v, lone, others[:, j])
                       for j in range(3)]
                parents.append(idx)
                barys.append(np.stack(pts, axis=1))
            else:
                a, b, c, e = o[:, 0], o[:, 1], o[:, 2], o[:, 3]
                q = np.stack([_crossing(v, a, c), _crossing(v, a, e),
                              _crossing(v, b, e), _crossing(v, b, c)], axis=1)
                x = np.einsum("kjv,kvx->kjx", q, coords[idx])
                d02 = np.linalg.norm(x[:, 0] - x[:, 2], axis=1)
                d13 = np.linalg.norm(x[:, 1] - x[:, 3], axis=1)
                use02 = d02 <= d13
                t1 = np.where(use02[:, None, None], q[:, [0, 1, 2]], q[:, [0, 1, 3]])
                t2 = np.where(use02[:, None, None], q[:, [0, 2, 3]], q[:, [1, 2, 3]])
                parents.extend([idx, idx])
                barys.extend([t1, t2])
        else:
            raise ValueError("only 2D and 3D simplices are supported")
    if not parents:
        return _empty(d - 1, d)
    return _finish(d - 1, np.concatenate(parents), np.concatenate(barys), coords, scale)


# templates: lists of sub-simplices; entry ``i`` is an inside vertex,
# ``(i, j)`` the crossing on edge inside-i / outside-j (positions in the
# sorted order, insides first)
_CLIP_TEMPLATES = {
    2: {1: [[0, (0, 1), (0, 2)]],
        2: [[0, 1, (1, 2)], [0, (1, 2), (0, 2)]]},
    3: {1: [[0, (0, 1), (0, 2), (0, 3)]],
        2: [[0, (0, 2), (0, 3), 1], [(0, 2), (0, 3), 1, (1, 2)], [(0, 3), 1, (1, 2), (1, 3)]],
        3: [[0, 1, 2, (0, 3)], [1, 2, (0, 3), (1, 3)], [2, (0, 3), (1, 3), (2, 3)]]},
}


def _clip_below(bary, vals, thresh):
    """Clip sub-simplices to ``{value < thresh}``.

    Returns ``(rows, bary, vals)`` where ``rows`` indexes the input batch.
    """
    n, d1 = vals.shape
    d = d1 - 1
    inside = vals < thresh
    k = inside.sum(axis=1)
    rows_out, b_out, v_out = [np.flatnonzero(k == d1)], [bary[k == d1]], [vals[k == d1]]
    order = np.argsort(~inside, axis=1, kind="stable")
    for kk, template in _CLIP_TEMPLATES[d].items():
        idx = np.flatnonzero(k == kk)
        if not idx.size:
            continue
        o = order[idx]
        bo = np.take_along_axis(bary[idx], o[:, :, None], axis=1)
        vo = np.take_along_axis(vals[idx], o, axis=1)
        for simplex in template:
            pb, pv = [], []
            for node in simplex:
                if isinstance(node, tuple):
                    i, j = node
                    s = (thresh - vo[:, i]) / (vo[:, j] - vo[:, i])
                    pb.append(bo[:, i] + s[:, None] * (bo[:, j] - bo[:, i]))
                    pv.append(np.full(idx.size, float(thresh)))
                else:
                    pb.append(bo[:, node])
                    pv.append(vo[:, node])
            rows_out.append(idx)
            b_out.append(np.stack(pb, axis=1))
            v_out.append(np.stack(pv, axis=1))
    return np.concatenate(rows_out), np.concatenate(b_out), np.concatenate(v_out)


def band_cuts(coords, values, h: float) -> SubSimplexSet:
    """Decompose ``T ∩ {|linear interpolant| < h}`` into sub-simplices."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    m, d1 = values.shape
    bary = np.broadcast_to(np.eye(d1), (m, d1, d1)).copy()
    rows, bary, vals = _clip_below(bary, values, h)
    rows2, bary, vals = _clip_below(bary, -vals, h)
    parent = rows[rows2]
    if parent.size == 0:
        return _empty(d1 - 1, d1 - 1)
    return _finish(d1 - 1, parent, bary, coords, simplex_measure(coords))


def clip_zero_level(vertices, values) -> SubSimplexSet:
    """Zero level of the linear interpolant on a single simplex."""
    return zero_level_cuts(np.asarray(vertices, dtype=float)[None], np.asarray(values, dtype=float)[None])


def clip_band(vertices, values, h: float) -> SubSimplexSet:
    """Band ``{|linear interpolant| < h}`` on a single simplex."""
    return band_cuts(np.asarray(vertices, dtype=float)[None], np.asarray(values, dtype=float)[None], h)
