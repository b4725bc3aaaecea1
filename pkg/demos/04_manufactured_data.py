"""Check the manufactured right-hand sides against their exact solutions.

For each benchmark problem the surface PDE residual of the exact solution
is sampled at points on the surface and should vanish up to round-off.
"""
from bulksurf.levelset import PROBLEMS, make_problem, verify_manufactured_solution

for name in PROBLEMS:
    print(f"{name:10s} max residual {verify_manufactured_solution(make_problem(name)):.2e}")
