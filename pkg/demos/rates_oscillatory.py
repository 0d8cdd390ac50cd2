"""
Convergence under coarse refinement, oscillatory coefficient
============================================================

The fine mesh is fixed at h = 1/64 and the coarse mesh goes through
H = 1/4, 1/8, 1/16.  Each multiscale solution is compared with the fine
finite element solution of the same discrete problem.
"""
import numpy as np

from lodcontrol import MultiscaleSolver, ProblemConfig, compute_errors, solve_fine_reference
from lodcontrol.cli import fit_slope

# eps = 0.08 is resolved by h = 1/64 (h <= eps/4)
H, energy, l2 = [], [], []
ref = None
for N in (4, 8, 16):
    cfg = ProblemConfig(example="oscillatory", epsilon=0.08, N=N, R=64 // N, j=2)
    solver = MultiscaleSolver(cfg)
    if ref is None:
        ref = solve_fine_reference(solver.ops, solver.load())
    e, l = compute_errors(ref, solver.solve(), solver.ops)
    print(f"H=1/{N:<3d} k={cfg.resolved_k()}  energy {e:.3e}  L2 {l:.3e}  kappa {solver.diagnostics().kappa:.2f}")
    H.append(cfg.H)
    energy.append(e)
    l2.append(l)

# slopes of the log-log fit: about 1 in energy and 2 in L2
print("energy slope", round(fit_slope(H, energy)[0], 2))
print("L2 slope", round(fit_slope(H, l2)[0], 2))
