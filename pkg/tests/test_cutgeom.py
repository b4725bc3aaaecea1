import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from bulksurf.assembly import band_discretization
from bulksurf.cutgeom import (SLIVER_TOL, band_cuts, clip_band, clip_zero_level, gauss_rule,
                              simplex_measure, zero_level_cuts)
from bulksurf.levelset import torus_levelset
from bulksurf.mesh import build_background_mesh, interpolate_levelset

REF = {2: np.array([[0.0, 0], [1, 0], [0, 1]]),
       3: np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])}


# -- quadrature -------------------------------------------------------------

def _exponents(d1, deg):
    return [a for a in itertools.product(range(deg + 1), repeat=d1) if sum(a) <= deg]


@pytest.mark.parametrize("dim,degree", [(1, k) for k in range(1, 6)]
                         + [(d, k) for d in (2, 3) for k in range(1, 5)])
def test_rules_integrate_barycentric_monomials(dim, degree):
    rule = gauss_rule(dim, degree)
    assert np.all(rule.weights > 0) and rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(rule.points.sum(axis=1), 1.0)
    for a in _exponents(dim + 1, degree):
        num = np.sum(rule.weights * np.prod(rule.points ** np.array(a), axis=1))
        exact = math.prod(math.factorial(k) for k in a) * math.factorial(dim) / math.factorial(sum(a) + dim)
        assert num == pytest.approx(exact, rel=1e-13, abs=1e-15)


def test_rule_examples():
    r = gauss_rule(2, 2)
    assert len(r.weights) == 3 and np.allclose(r.weights, 1 / 3)
    assert np.allclose(np.sort(r.points, axis=1), [[0, 0.5, 0.5]] * 3)
    r = gauss_rule(2, 4)
    x = r.points @ REF[2]
    assert 0.5 * np.sum(r.weights * x[:, 0] ** 2 * x[:, 1]) == pytest.approx(1 / 60, abs=1e-14)
    r = gauss_rule(1, 5)
    g, _ = np.polynomial.legendre.leggauss(3)
    assert np.allclose(np.sort(r.points[:, 1]), np.sort((g + 1) / 2))
    for bad in ((1, 6), (2, 5), (3, 0), (4, 1)):
        with pytest.raises(ValueError):
            gauss_rule(*bad)


# -- zero level -------------------------------------------------------------

def test_midpoint_triangle():
    cut = clip_zero_level(REF[3], [-1.0, 1, 1, 1])
    assert len(cut) == 1
    assert cut.total_measure == pytest.approx(math.sqrt(3) / 8, abs=1e-15)
    assert np.allclose(np.sort(cut.points[0], axis=0), np.sort(0.5 * np.eye(3), axis=0))


def test_segment_crossings_2d():
    cut = clip_zero_level(REF[2], [-1.0, 1, -1])
    pts = sorted(map(tuple, np.round(cut.points[0], 14)))
    assert pts == [(0.5, 0.0), (0.5, 0.5)]
    assert cut.total_measure == pytest.approx(0.5)


def test_no_sign_change_gives_empty():
    assert len(clip_zero_level(REF[3], [1.0, 2, 3, 4])) == 0
    assert len(clip_zero_level(REF[2], [-1.0, -2, -3])) == 0
    # a single zero vertex carries no measure
    assert len(clip_zero_level(REF[3], [0.0, 1, 2, 3])) == 0


def test_zero_facet_is_extracted():
    cut = clip_zero_level(REF[3], [0.0, 0, 0, 1])
    assert cut.total_measure == pytest.approx(0.5)


def test_quad_split_uses_shorter_diagonal():
    v = np.array([[0.0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, 1]])
    cut = clip_zero_level(v, [-1.0, -1, 1, 1])
    assert len(cut) == 2
    a, b = (set(map(tuple, np.round(p, 12))) for p in cut.points)
    shared = np.array(sorted(a & b))
    quad = np.array(sorted(a | b))
    assert len(shared) == 2 and len(quad) == 4
    other = np.array(sorted((a | b) - (a & b)))
    assert np.linalg.norm(shared[0] - shared[1]) <= np.linalg.norm(other[0] - other[1])


def test_cut_points_lie_on_zero_level(rng):
    v = rng.normal(size=(200, 4, 3))
    g, c = rng.normal(size=(200, 3)), rng.normal(scale=0.3, size=200)
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    cut = zero_level_cuts(v, vals)
    lin = np.einsum("kjx,kx->kj", cut.points, g[cut.parent]) + c[cut.parent, None]
    assert np.max(np.abs(lin)) <= 1e-12 * np.max(np.abs(vals))


def test_sliver_dropped():
    cut = clip_zero_level(REF[3], [-1e-20, 1.0, 1, 1])
    assert len(cut) == 0
    cut = band_cuts(REF[3][None], np.array([[1e-20 - 1.0, 5, 5, 5]]), 1.0)
    assert np.all(cut.measure > SLIVER_TOL * (1 / 6))


def _random_tets(rng, n, dim):
    v = rng.uniform(-1, 1, size=(n, dim + 1, dim))
    vol = simplex_measure(v)
    keep = vol > 1e-2
    v = v[keep]
    g = rng.normal(size=(len(v), dim))
    c = rng.uniform(-0.5, 0.5, size=len(v))
    return v, g, c


def _uniform_in_simplex(rng, v, n):
    lam = rng.dirichlet(np.ones(v.shape[1]), size=(v.shape[0], n))
    return np.einsum("kqi,kix->kqx", lam, v)


def _hull_oracle_band(v, g, c, h):
    """Exact volume of T ∩ {|g.x + c| < h} from the polytope vertices."""
    d = v.shape[1]
    lin = lambda x: x @ g + c  # noqa: E731
    pts = [x for x in v if abs(lin(x)) <= h]
    for i, j in itertools.combinations(range(d + 1), 2):
        a, b = v[i], v[j]
        la, lb = lin(a), lin(b)
        for lev in (h, -h):
            if (la - lev) * (lb - lev) < 0:
                pts.append(a + (lev - la) / (lb - la) * (b - a))
    if len(pts) <= d:
        return 0.0
    try:
        return ConvexHull(np.array(pts)).volume
    except Exception:  # flat polytope
        return 0.0


def _hull_oracle_cut(v, g, c):
    """Area of T ∩ {g.x + c = 0} from the edge crossings."""
    d = v.shape[1]
    lin = v @ g + c
    pts = [v[i] + lin[i] / (lin[i] - lin[j]) * (v[j] - v[i])
           for i, j in itertools.combinations(range(d + 1), 2) if lin[i] * lin[j] < 0]
    if len(pts) < d:
        return 0.0
    pts = np.array(pts)
    if d == 2:
        return float(np.linalg.norm(pts[0] - pts[1]))
    n = g / np.linalg.norm(g)
    e1 = np.cross(n, [1.0, 0, 0] if abs(n[0]) < 0.9 else [0, 1.0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    if len(pts) == 3:
        return 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    return ConvexHull(np.stack([pts @ e1, pts @ e2], axis=1)).volume


@pytest.mark.parametrize("dim", [2, 3])
def test_band_volume_matches_convex_hull(dim, rng):
    v, g, c = _random_tets(rng, 300, dim)
    h = 0.3
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    cut = band_cuts(v, vals, h)
    got = cut.measure_per_parent(len(v))
    ref = np.array([_hull_oracle_band(v[k], g[k], c[k], h) for k in range(len(v))])
    assert np.allclose(got, ref, atol=1e-12, rtol=1e-10)


@pytest.mark.parametrize("dim", [2, 3])
def test_cut_measure_matches_convex_hull(dim, rng):
    v, g, c = _random_tets(rng, 300, dim)
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    got = zero_level_cuts(v, vals).measure_per_parent(len(v))
    ref = np.array([_hull_oracle_cut(v[k], g[k], c[k]) for k in range(len(v))])
    assert np.allclose(got, ref, atol=1e-12, rtol=1e-10)


def _z_scores(est, exact, sigma):
    z = np.zeros_like(est)
    pos = sigma > 0
    z[pos] = (est[pos] - exact[pos]) / sigma[pos]
    assert np.allclose(est[~pos], exact[~pos], atol=1e-12)
    return z


@pytest.mark.parametrize("dim", [2, 3])
def test_band_volume_monte_carlo(dim, rng):
    v, g, c = _random_tets(rng, 1400, dim)
    assert len(v) >= 1000
    h, n = 0.25, 4000
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    exact = band_cuts(v, vals, h).measure_per_parent(len(v))
    vol = simplex_measure(v)
    x = _uniform_in_simplex(rng, v, n)
    inside = np.abs(np.einsum("kqx,kx->kq", x, g) + c[:, None]) < h
    est = vol * inside.mean(axis=1)
    p = exact / vol
    z = _z_scores(est, exact, vol * np.sqrt(p * (1 - p) / n))
    assert np.mean(np.abs(z) <= 3) >= 0.99
    assert abs(z.mean()) * math.sqrt(len(z)) <= 4


def test_cut_area_monte_carlo_slab(rng):
    """Cut area against thin-slab sampling: vol{|l| < eps} |grad l| / (2 eps)."""
    v, g, c = _random_tets(rng, 1400, 3)
    assert len(v) >= 1000
    eps, n = 0.01, 20000
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    exact = zero_level_cuts(v, vals).measure_per_parent(len(v))
    vol = simplex_measure(v)
    ng = np.linalg.norm(g, axis=1)
    x = _uniform_in_simplex(rng, v, n)
    inside = np.abs(np.einsum("kqx,kx->kq", x, g) + c[:, None]) < eps
    scale = vol * ng / (2 * eps)
    est = scale * inside.mean(axis=1)
    slab = band_cuts(v, vals, eps).measure_per_parent(len(v)) / vol
    z = _z_scores(est, exact, scale * np.sqrt(slab * (1 - slab) / n))
    assert np.mean(np.abs(z) <= 3) >= 0.99


def test_sub_simplices_are_disjoint(rng):
    v, g, c = _random_tets(rng, 40, 3)
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    cut = band_cuts(v, vals, 0.2)
    for k in range(len(v)):
        sub = cut.restrict(cut.parent == k)
        if len(sub) < 2:
            continue
        x = _uniform_in_simplex(rng, v[k:k + 1], 3000)[0]
        x = x[np.abs(x @ g[k] + c[k]) < 0.2]
        hits = np.zeros(len(x), dtype=int)
        for s in sub.points:
            lam = np.linalg.solve(np.vstack([s.T, np.ones(4)]), np.vstack([x.T, np.ones(len(x))])).T
            hits += np.all(lam > 1e-12, axis=1)
        assert np.mean(hits == 1) > 0.995 and hits.max() <= 1


def test_band_examples():
    inside = clip_band(REF[3], [0.1, -0.2, 0.0, 0.3], 1.0)
    assert inside.total_measure == pytest.approx(1 / 6)
    assert len(clip_band(REF[2], [1.0, 1.0, 1.0], 1.0)) == 0
    m = build_background_mesh(((0,) * 3, (1,) * 3), 0)
    pts = m.element_coords(m.cell_elements([0]))
    vals = pts[..., 2] - 0.5
    assert band_cuts(pts, vals, 0.25).total_measure == pytest.approx(0.5, abs=1e-14)
    m2 = build_background_mesh(((-1,) * 3, (1,) * 3), 0)
    pts = m2.element_coords(np.arange(m2.n_cells * 6))
    assert band_cuts(pts, pts[..., 2], 0.25).total_measure == pytest.approx(2.0, abs=1e-14)


def test_unit_cube_slab_x3():
    """l = x3 on the unit cube's Kuhn tets, h = 0.25: slab volume 0.25."""
    m = build_background_mesh(((0,) * 3, (1,) * 3), 0)
    pts = m.element_coords(m.cell_elements([0]))
    assert band_cuts(pts, pts[..., 2], 0.25).total_measure == pytest.approx(0.25, abs=1e-14)


@given(st.floats(0.05, 0.5), st.floats(0.55, 1.5), st.integers(0, 10_000))
def test_band_additivity(h1, h2, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, size=(1, 4, 3))
    if simplex_measure(v)[0] < 1e-3:
        return
    vals = rng.normal(size=(1, 4))
    mid, half = 0.5 * (h1 + h2), 0.5 * (h2 - h1)
    inner = band_cuts(v, vals, h1).total_measure
    outer = band_cuts(v, vals, h2).total_measure
    ring = band_cuts(v, vals - mid, half).total_measure + band_cuts(v, vals + mid, half).total_measure
    assert outer == pytest.approx(inner + ring, rel=1e-10, abs=1e-13)


def _vertex_set(cut):
    return np.unique(np.round(cut.points.reshape(-1, cut.points.shape[-1]), 10), axis=0)


@given(st.integers(0, 10_000), st.sampled_from([2, 3]))
def test_affine_invariance(seed, dim):
    """Band clips map exactly; zero-level cuts map as point sets.

    The quad split picks the shorter diagonal, a metric choice, so the
    triangulation of a zero-level quad may differ after a non-conformal map.
    """
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, size=(1, dim + 1, dim))
    if simplex_measure(v)[0] < 1e-3:
        return
    vals = rng.normal(size=(1, dim + 1))
    A = rng.normal(size=(dim, dim)) + 2 * np.eye(dim)
    if abs(np.linalg.det(A)) < 0.1:
        return
    b = rng.normal(size=dim)
    w = v @ A.T + b
    c0, c1 = band_cuts(v, vals, 0.4), band_cuts(w, vals, 0.4)
    assert np.allclose(c0.bary, c1.bary, atol=1e-12)
    assert np.allclose(c0.points @ A.T + b, c1.points, atol=1e-12)
    z0, z1 = zero_level_cuts(v, vals), zero_level_cuts(w, vals)
    if len(z0):
        mapped = np.unique(np.round(z0.points.reshape(-1, dim) @ A.T + b, 10), axis=0)
        assert np.allclose(mapped, _vertex_set(z1), atol=1e-9)
    else:
        assert len(z1) == 0
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    s0, s1 = zero_level_cuts(v, vals), zero_level_cuts(2.5 * v @ Q.T + b, vals)
    assert np.allclose(s0.bary, s1.bary, atol=1e-12)
    assert np.allclose(s1.measure, 2.5 ** (dim - 1) * s0.measure, rtol=1e-12)


def test_interface_band_consistency(rng):
    v, g, c = _random_tets(rng, 200, 3)
    vals = np.einsum("kvx,kx->kv", v, g) + c[:, None]
    diam = np.max(np.linalg.norm(v[:, :, None] - v[:, None], axis=-1), axis=(1, 2))
    cut = zero_level_cuts(v, vals).measure_per_parent(len(v))
    sign_change = (vals.min(axis=1) < 0) & (vals.max(axis=1) > 0)
    assert np.array_equal(cut > 0, sign_change)
    hs = 1e-6 * diam * np.linalg.norm(g, axis=1)
    for k in np.flatnonzero(sign_change)[:50]:
        band = band_cuts(v[k:k + 1], vals[k:k + 1], hs[k]).total_measure
        assert band * np.linalg.norm(g[k]) / (2 * hs[k]) == pytest.approx(cut[k], rel=1e-4)


def test_torus_band_coarea():
    exact = 4 * np.pi**2 * 0.6
    errs, hs = [], []
    for k in (2, 3, 4):
        m = build_background_mesh(((-2,) * 3, (2,) * 3), k)
        active, band, _ = band_discretization(m, interpolate_levelset(torus_levelset(), m))
        errs.append(abs(band.total_measure / (2 * m.h) - exact))
        hs.append(m.h)
    assert math.log(errs[-1] / errs[-2]) / math.log(hs[-1] / hs[-2]) >= 1.0
