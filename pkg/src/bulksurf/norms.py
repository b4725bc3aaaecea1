"""Error norms on the discrete surface."""
from __future__ import annotations

import numpy as np

from .assembly import CHUNK, extended
from .levelset import closest_point

ERROR_DEGREE = 4
FD_STEP = 1e-6


def _coefficients_at(lam, coeffs, active, cuts):
    return np.einsum("kqi,ki->kq", lam, coeffs[active.local_dofs[cuts.parent]])


def error_l2_interface(coeffs, active, iface, prob, t: float = 0.0) -> float:
    """``||u^e - u_h||_{L^2(Γ_h)}`` with the closest-point extension of the exact solution."""
    lam, x, w = iface.quadrature(ERROR_DEGREE)
    ue = extended(prob.exact_u, x, t, prob.levelset)
    uh = _coefficients_at(lam, coeffs, active, iface)
    return float(np.sqrt(np.sum(w * (ue - uh) ** 2)))


def extension_gradient(prob, x, t: float = 0.0):
    """Gradient of the normal extension of the exact solution.

    Uses ``prob.exact_grad`` when present, central differences otherwise.
    """
    if prob.exact_grad is not None:
        return prob.exact_grad(x, t)
    ls = prob.levelset
    shape = x.shape
    flat = x.reshape(-1, shape[-1])
    out = np.empty_like(flat)
    d = shape[-1]
    for s in range(0, len(flat), CHUNK):
        xs = flat[s:s + CHUNK]
        for j in range(d):
            e = np.zeros(d)
            e[j] = FD_STEP
            up = prob.exact_u(closest_point(xs + e, t, ls), t)
            um = prob.exact_u(closest_point(xs - e, t, ls), t)
            out[s:s + CHUNK, j] = (up - um) / (2 * FD_STEP)
    return out.reshape(shape)


def error_h1_interface(coeffs, active, iface, prob, t: float = 0.0) -> float:
    """``||∇u^e - ∇u_h||_{L^2(Γ_h)}`` using full (ambient) gradients."""
    _, x, w = iface.quadrature(ERROR_DEGREE)
    gu = extension_gradient(prob, x, t)
    G = active.gradients()[iface.parent]
    gh = np.einsum("ki,kix->kx", coeffs[active.local_dofs[iface.parent]], G)
    return float(np.sqrt(np.sum(w * np.sum((gu - gh[:, None, :]) ** 2, axis=-1))))
