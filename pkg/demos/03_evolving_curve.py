"""Advection-diffusion on a stretching ellipse with the hybrid scheme.

Steps the solution on level 3 with tau = 2 dx^2, reports the error at a few
time steps, then repeats without a source to show that mass is conserved.
"""
from bulksurf.evolve import run_evolution, source_free
from bulksurf.levelset import make_problem

prob = make_problem("ellipse2d")
res = run_evolution(prob, 3)
print(f"h = {res.h:.4f}, {len(res.records) - 1} steps")
for rec in res.records[::4]:
    print(f"t = {rec.t:.4f}  dofs = {rec.dofs:4d}  L2 error = {rec.l2_error:.3e}")
print(f"max-in-time L2 error {res.max_error:.4e}")

quiet = run_evolution(source_free(prob), 3, errors=False, strict_tau=True)
print(f"source-free run: mass {quiet.records[0].mass:.6f} -> {quiet.records[-1].mass:.6f}, "
      f"relative drift {quiet.mass_drift:.2e}")
