"""Analytic level-set geometry, closest-point projection and benchmark problems.

All callables are vectorised: points are arrays of shape ``(..., d)`` and the
returned values carry the leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ClosestPointError, DegenerateGradientError

GRAD_TOL = 1e-10

ScalarFn = Callable[[np.ndarray, float], np.ndarray]
VectorFn = Callable[[np.ndarray, float], np.ndarray]


def _zero_t(x, t):
    return np.zeros(np.shape(x)[:-1])


@dataclass(frozen=True)
class LevelSetField:
    """Analytic level-set function with its derivatives.

    ``projection`` is an optional analytic closest-point map; when present
    :func:`closest_point` uses it in ``"analytic"`` mode.
    """

    phi: ScalarFn
    grad: VectorFn
    hessian: Callable[[np.ndarray, float], np.ndarray]
    dim: int
    phi_t: ScalarFn = _zero_t
    is_stationary: bool = True
    projection: Optional[VectorFn] = None


@dataclass(frozen=True)
class SurfaceProblem:
    """A manufactured surface PDE: geometry, exact solution and data.

    ``exact_grad`` is, when available, the analytic gradient of the
    normal extension of ``exact_u``; otherwise error norms fall back to finite
    differences.
    """

    name: str
    levelset: LevelSetField
    exact_u: ScalarFn
    rhs_f: ScalarFn
    bounding_box: tuple
    velocity: Optional[VectorFn] = None
    exact_grad: Optional[VectorFn] = None

    @property
    def dim(self) -> int:
        return self.levelset.dim

    @property
    def is_stationary(self) -> bool:
        return self.levelset.is_stationary and self.velocity is None


# ---------------------------------------------------------------------------
# projection and extension


def _newton_step(y, t, ls):
    g = ls.grad(y, t)
    g2 = np.einsum("...i,...i->...", g, g)
    return g, g2


def closest_point(x, t, ls: LevelSetField, mode: str | None = None, tol: float = 1e-12,
                  max_iters: int = 50, on_failure: str = "raise"):
    """Project points onto the zero level set of ``ls``.

    Parameters
    ----------
    x : array_like, shape (..., d)
    t : float
    mode : {"analytic", "iterative", None}
        ``None`` picks the analytic projection when the field provides one.
    tol : float
        Stopping tolerance on ``|phi|``.  One extra step is taken after the
        tolerance is met so that the result is a smooth function of ``x``.
    on_failure : {"raise", "nan"}
        With ``"nan"``, points that fail to converge are returned as NaN.

    Returns
    -------
    ndarray, shape (..., d)
    """
    x = np.asarray(x, dtype=float)
    if mode is None:
        mode = "analytic" if ls.projection is not None else "iterative"
    if mode == "analytic":
        if ls.projection is None:
            raise ValueError("level set has no analytic projection")
        with np.errstate(invalid="ignore", divide="ignore"):
            p = ls.projection(x, t)
        bad = ~np.all(np.isfinite(p), axis=-1)
        if np.any(bad):
            if on_failure == "nan":
                return p
            raise DegenerateGradientError("analytic projection undefined at " f"{x[bad][0]}")
        return p
    if mode != "iterative":
        raise ValueError(f"unknown projection mode {mode!r}")

    shape = x.shape
    y = x.reshape(-1, shape[-1]).copy()
    active = np.arange(len(y))
    failed = np.zeros(len(y), dtype=bool)
    polish = np.zeros(len(y), dtype=bool)
    for _ in range(max_iters + 1):
        if active.size == 0:
            break
        ya = y[active]
        f = ls.phi(ya, t)
        g, g2 = _newton_step(ya, t, ls)
        degenerate = ~(np.sqrt(g2) >= GRAD_TOL)
        done = (np.abs(f) <= tol) & ~degenerate
        # converged points get one last (polishing) step, then retire
        retire = done & polish[active]
        step = np.where(degenerate, 0.0, f / np.where(degenerate, 1.0, g2))
        y[active] = np.where(retire[:, None], ya, ya - step[:, None] * g)
        polish[active[done]] = True
        failed[active[degenerate]] = True
        active = active[~(retire | degenerate)]
    failed[active] = True
    if np.any(failed):
        i = np.flatnonzero(failed)[0]
        if on_failure == "nan":
            y[failed] = np.nan
        else:
            yi = y[i]
            res = float(abs(ls.phi(yi[None], t)[0]))
            gi = ls.grad(yi[None], t)[0]
            if not np.linalg.norm(gi) >= GRAD_TOL:
                raise DegenerateGradientError(f"|grad phi| < {GRAD_TOL} at iterate {yi}")
            raise ClosestPointError(last_iterate=yi, residual=res, start=x.reshape(-1, shape[-1])[i])
    return y.reshape(shape)


def extend_to_point(g: ScalarFn, x, t, ls: LevelSetField, mode: str | None = None):
    """Normal extension ``g(p(x, t), t)`` of a surface function."""
    return g(closest_point(x, t, ls, mode), t)


def normal_and_curvature(x, t, ls: LevelSetField):
    """Unit normal ``grad phi / |grad phi|`` and mean curvature ``div nu``.

    The curvature is the sum of principal curvatures (2 on the unit sphere).
    """
    x = np.asarray(x, dtype=float)
    g = ls.grad(x, t)
    ng = np.linalg.norm(g, axis=-1)
    if np.any(~(ng >= GRAD_TOL)):
        raise DegenerateGradientError("normal undefined: vanishing gradient")
    nu = g / ng[..., None]
    hess = ls.hessian(x, t)
    trace = np.trace(hess, axis1=-2, axis2=-1)
    nhn = np.einsum("...i,...ij,...j->...", nu, hess, nu)
    return nu, (trace - nhn) / ng


# ---------------------------------------------------------------------------
# elementary fields (used for tests and simple studies)


def plane(normal, offset: float = 0.0) -> LevelSetField:
    """Affine level set ``normal . x - offset``."""
    normal = np.asarray(normal, dtype=float)
    d = normal.size

    def phi(x, t):
        return np.asarray(x) @ normal - offset

    def grad(x, t):
        return np.broadcast_to(normal, np.shape(x)).copy()

    def hessian(x, t):
        return np.zeros(np.shape(x) + (d,))

    def projection(x, t):
        n2 = normal @ normal
        return x - (phi(x, t) / n2)[..., None] * normal

    return LevelSetField(phi, grad, hessian, d, projection=projection)


def sphere(dim: int = 3, radius: float = 1.0, squared: bool = False) -> LevelSetField:
    """Sphere as ``|x| - r`` or, with ``squared``, ``|x|^2 - r^2``."""

    def projection(x, t):
        return radius * x / np.linalg.norm(x, axis=-1, keepdims=True)

    if squared:
        def phi(x, t):
            return np.einsum("...i,...i->...", x, x) - radius**2

        def grad(x, t):
            return 2.0 * np.asarray(x, dtype=float)

        def hessian(x, t):
            return np.broadcast_to(2.0 * np.eye(dim), np.shape(x) + (dim,)).copy()
    else:
        def phi(x, t):
            return np.linalg.norm(x, axis=-1) - radius

        def grad(x, t):
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

        def hessian(x, t):
            r = np.linalg.norm(x, axis=-1)[..., None, None]
            xx = np.einsum("...i,...j->...ij", x, x)
            return (np.eye(dim) - xx / r**2) / r

    return LevelSetField(phi, grad, hessian, dim, projection=projection)


# ---------------------------------------------------------------------------
# benchmark problems

TORUS_R, TORUS_r = 1.0, 0.6


def torus_levelset(R: float = TORUS_R, r: float = TORUS_r) -> LevelSetField:
    """Signed distance to the torus with radii ``R`` (centre circle) and ``r``."""

    def _parts(x):
        x = np.asarray(x, dtype=float)
        rho = np.hypot(x[..., 0], x[..., 1])
        c = np.zeros_like(x)
        c[..., 0] = R * x[..., 0] / rho
        c[..., 1] = R * x[..., 1] / rho
        w = x - c
        q = np.linalg.norm(w, axis=-1)
        return x, rho, w, q

    def phi(x, t):
        x = np.asarray(x, dtype=float)
        return np.hypot(np.hypot(x[..., 0], x[..., 1]) - R, x[..., 2]) - r

    def grad(x, t):
        _, _, w, q = _parts(x)
        return w / q[..., None]

    def hessian(x, t):
        x, rho, w, q = _parts(x)
        xh = np.zeros_like(x)
        xh[..., 0] = x[..., 0] / rho
        xh[..., 1] = x[..., 1] / rho
        p2 = np.diag([1.0, 1.0, 0.0])
        dc = (R / rho)[..., None, None] * (p2 - np.einsum("...i,...j->...ij", xh, xh))
        dw = np.eye(3) - dc
        ww = np.einsum("...i,...j->...ij", w, w)
        return dw / q[..., None, None] - ww / q[..., None, None] ** 3

    def projection(x, t):
        x, rho, w, q = _parts(x)
        return x - w + r * w / q[..., None]

    return LevelSetField(phi, grad, hessian, 3, projection=projection)


def torus_angles(x, R: float = TORUS_R):
    """Toroidal angles ``(theta, varphi)``; constant along normal rays."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    return np.arctan2(x[..., 2], rho - R), np.arctan2(x[..., 1], x[..., 0])


def _torus_problem() -> SurfaceProblem:
    R, r = TORUS_R, TORUS_r
    ls = torus_levelset(R, r)

    def exact_u(x, t):
        th, ph = torus_angles(x, R)
        return np.cos(3 * ph) * np.sin(3 * th + ph)

    def rhs_f(x, t):
        th, ph = torus_angles(x, R)
        c3, s3 = np.cos(3 * ph), np.sin(3 * ph)
        s, c = np.sin(3 * th + ph), np.cos(3 * th + ph)
        u = c3 * s
        u_th = 3 * c3 * c
        u_thth = -9 * c3 * s
        u_phph = -10 * c3 * s - 6 * s3 * c
        a = R + r * np.cos(th)
        lap = u_thth / r**2 - np.sin(th) / (r * a) * u_th + u_phph / a**2
        return -lap + u

    def exact_grad(x, t):
        x = np.asarray(x, dtype=float)
        th, ph = torus_angles(x, R)
        c3, s3 = np.cos(3 * ph), np.sin(3 * ph)
        s, c = np.sin(3 * th + ph), np.cos(3 * th + ph)
        u_th = 3 * c3 * c
        u_ph = -3 * s3 * s + c3 * c
        rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
        rho = np.sqrt(rho2)
        sd = rho - R
        q2 = sd**2 + x[..., 2] ** 2
        gph = np.stack([-x[..., 1] / rho2, x[..., 0] / rho2, np.zeros_like(rho)], axis=-1)
        gs = np.stack([x[..., 0] / rho, x[..., 1] / rho, np.zeros_like(rho)], axis=-1)
        e3 = np.zeros_like(x)
        e3[..., 2] = 1.0
        gth = (-x[..., 2, None] * gs + sd[..., None] * e3) / q2[..., None]
        return u_th[..., None] * gth + u_ph[..., None] * gph

    return SurfaceProblem("torus", ls, exact_u, rhs_f, ((-2.0,) * 3, (2.0,) * 3),
                          exact_grad=exact_grad)


def potato_levelset(literal: bool = False) -> LevelSetField:
    """``(x1 - x3^2)^2 + x2^2 + x3^2 - 1``; ``literal`` drops the ``x3^2`` term."""
    c = 0.0 if literal else 1.0

    def phi(x, t):
        a = x[..., 0] - x[..., 2] ** 2
        return a**2 + x[..., 1] ** 2 + c * x[..., 2] ** 2 - 1.0

    def grad(x, t):
        a = x[..., 0] - x[..., 2] ** 2
        return np.stack([2 * a, 2 * x[..., 1], -4 * x[..., 2] * a + 2 * c * x[..., 2]], axis=-1)

    def hessian(x, t):
        a = x[..., 0] - x[..., 2] ** 2
        out = np.zeros(np.shape(x) + (3,))
        out[..., 0, 0] = 2.0
        out[..., 1, 1] = 2.0
        out[..., 0, 2] = out[..., 2, 0] = -4 * x[..., 2]
        out[..., 2, 2] = -4 * a + 8 * x[..., 2] ** 2 + 2 * c
        return out

    return LevelSetField(phi, grad, hessian, 3)


def _potato_problem(literal: bool = False) -> SurfaceProblem:
    ls = potato_levelset(literal)

    def exact_u(x, t):
        return x[..., 0] * x[..., 1]

    def rhs_f(x, t):
        nu, H = normal_and_curvature(x, t, ls)
        x1, x2 = x[..., 0], x[..., 1]
        return 2 * nu[..., 0] * nu[..., 1] + H * (x2 * nu[..., 0] + x1 * nu[..., 1]) + x1 * x2

    return SurfaceProblem("potato", ls, exact_u, rhs_f, ((-1.5,) * 3, (1.5,) * 3))


def ellipse_levelset() -> LevelSetField:
    """``x^2 / (1 + sin(2 pi t) / 4) + y^2 - 1``."""

    def a(t):
        return 1.0 + 0.25 * np.sin(2 * np.pi * t)

    def a_t(t):
        return 0.5 * np.pi * np.cos(2 * np.pi * t)

    def phi(x, t):
        return x[..., 0] ** 2 / a(t) + x[..., 1] ** 2 - 1.0

    def grad(x, t):
        return np.stack([2 * x[..., 0] / a(t), 2 * x[..., 1]], axis=-1)

    def hessian(x, t):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 0] = 2.0 / a(t)
        out[..., 1, 1] = 2.0
        return out

    def phi_t(x, t):
        return -x[..., 0] ** 2 * a_t(t) / a(t) ** 2

    return LevelSetField(phi, grad, hessian, 2, phi_t=phi_t, is_stationary=False)


def normal_velocity(ls: LevelSetField) -> VectorFn:
    """Velocity ``-phi_t grad phi / |grad phi|^2`` moving the zero level set."""

    def velocity(x, t):
        g = ls.grad(x, t)
        g2 = np.einsum("...i,...i->...", g, g)
        return (-ls.phi_t(x, t) / g2)[..., None] * g

    return velocity


def _ellipse_problem() -> SurfaceProblem:
    ls = ellipse_levelset()
    vel = normal_velocity(ls)

    def exact_u(x, t):
        return np.exp(-4.0 * t) * x[..., 0] * x[..., 1]

    def rhs_f(x, t):
        x = np.asarray(x, dtype=float)
        e = np.exp(-4.0 * t)
        u = e * x[..., 0] * x[..., 1]
        du = e * x[..., ::-1]
        d2u = e * np.array([[0.0, 1.0], [1.0, 0.0]])
        nu, H = normal_and_curvature(x, t, ls)
        V = -ls.phi_t(x, t) / np.linalg.norm(ls.grad(x, t), axis=-1)
        nu_du = np.einsum("...i,...i->...", nu, du)
        lap_gamma = -np.einsum("...i,ij,...j->...", nu, d2u, nu) - H * nu_du
        return -4.0 * u + V * nu_du + u * V * H - lap_gamma

    return SurfaceProblem("ellipse2d", ls, exact_u, rhs_f, ((-1.6,) * 2, (1.6,) * 2),
                          velocity=vel)


PROBLEMS = ("torus", "potato", "ellipse2d")


def make_problem(name: str, literal_potato: bool = False) -> SurfaceProblem:
    """Build one of the benchmark problems ``torus``, ``potato``, ``ellipse2d``."""
    if name == "torus":
        return _torus_problem()
    if name == "potato":
        return _potato_problem(literal_potato)
    if name == "ellipse2d":
        return _ellipse_problem()
    raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEMS}")


def with_data(prob: SurfaceProblem, exact_u=None, rhs_f=None) -> SurfaceProblem:
    """Copy of ``prob`` with replaced solution and/or right-hand side."""
    changes = {}
    if exact_u is not None:
        changes["exact_u"] = exact_u
        changes["exact_grad"] = None
    if rhs_f is not None:
        changes["rhs_f"] = rhs_f
    return replace(prob, **changes)


# ---------------------------------------------------------------------------
# manufactured-solution oracle


def sample_surface_points(ls: LevelSetField, box, n: int, t: float = 0.0, seed: int = 0):
    """Random points on the zero level, obtained by projecting box samples."""
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    out = []
    while sum(len(o) for o in out) < n:
        x = rng.uniform(lo, hi, size=(4 * n, ls.dim))
        phi = np.abs(ls.phi(x, t))
        x = x[phi < 0.2 * np.max(hi - lo) / 4]
        if len(x) == 0:
            continue
        p = closest_point(x, t, ls, on_failure="nan")
        p = p[np.all(np.isfinite(p), axis=1)]
        p = p[np.all((p > lo) & (p < hi), axis=1)]
        out.append(p)
    return np.concatenate(out)[:n]


def _fd_derivatives(fun, p, step):
    """Central-difference gradient and Hessian of ``fun`` at points ``p``."""
    n, d = p.shape
    eye = np.eye(d) * step
    f0 = fun(p)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    fp = [fun(p + eye[i]) for i in range(d)]
    fm = [fun(p - eye[i]) for i in range(d)]
    for i in range(d):
        grad[:, i] = (fp[i] - fm[i]) / (2 * step)
        hess[:, i, i] = (fp[i] - 2 * f0 + fm[i]) / step**2
        for j in range(i + 1, d):
            fpp = fun(p + eye[i] + eye[j])
            fpm = fun(p + eye[i] - eye[j])
            fmp = fun(p - eye[i] + eye[j])
            fmm = fun(p - eye[i] - eye[j])
            hess[:, i, j] = hess[:, j, i] = (fpp - fpm - fmp + fmm) / (4 * step**2)
    return grad, hess


def verify_manufactured_solution(prob: SurfaceProblem, samples: int = 20, t: float = 0.0,
                                 step: float = 1e-4, seed: int = 0) -> float:
    """Maximum pointwise PDE residual of ``(exact_u, rhs_f)`` on the surface.

    The Laplace-Beltrami operator is evaluated from finite differences of
    the closest-point extension of ``exact_u``.  For moving surfaces the
    material derivative and the surface divergence of the velocity are
    finite-differenced as well.
    """
    ls = prob.levelset
    p = sample_surface_points(ls, prob.bounding_box, samples, t, seed)

    def ue(y, s=t):
        return extend_to_point(prob.exact_u, y, s, ls)

    g, hess = _fd_derivatives(ue, p, step)
    nu, H = normal_and_curvature(p, t, ls)
    lap_gamma = (np.trace(hess, axis1=1, axis2=2)
                 - np.einsum("ni,nij,nj->n", nu, hess, nu)
                 - H * np.einsum("ni,ni->n", nu, g))
    u = prob.exact_u(p, t)
    f = prob.rhs_f(p, t)
    if prob.velocity is None:
        return float(np.max(np.abs(-lap_gamma + u - f)))

    v = prob.velocity(p, t)
    dt = step
    mat = (ue(p + dt * v, t + dt) - ue(p - dt * v, t - dt)) / (2 * dt)

    def ve(y):
        return prob.velocity(closest_point(y, t, ls), t)

    d = p.shape[1]
    dv = np.empty((len(p), d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        dv[:, :, j] = (ve(p + e) - ve(p - e)) / (2 * step)
    proj = np.eye(d) - np.einsum("ni,nj->nij", nu, nu)
    div_v = np.einsum("nij,nji->n", proj, dv)
    return float(np.max(np.abs(mat + u * div_v - lap_gamma - f)))
