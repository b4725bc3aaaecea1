"""Convergence study for the Laplace-Beltrami problem on a torus.

Runs the sharp-interface and narrow-band methods on levels 1..4 and prints
the L2 error table with experimental orders of convergence.
"""
from bulksurf.bench import run_convergence

for method in ("sif", "nbm"):
    print(f"\n{method.upper()} on the torus")
    print("k  h         dofs    L2 error   eoc    cg")
    for r in run_convergence(method, "torus", [1, 2, 3, 4]):
        eoc = "  -  " if r.eoc_l2 is None else f"{r.eoc_l2:.3f}"
        print(f"{r.level}  {r.h:.6f}  {r.dofs:6d}  {r.l2_error:.4e}  {eoc}  {r.cg_iters}")
