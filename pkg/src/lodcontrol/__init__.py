"""Multiscale (LOD-type) finite elements for elliptic distributed optimal control
with rough diffusion coefficients on the unit square."""

__version__ = "0.1.0"

from .assembly import AssembledOperators, assemble, assemble_load, assemble_mass, assemble_stiffness, pair_norms
from .coeff import CoefficientField, constant, eval_oscillatory, field_bounds, gen_block_random, oscillatory
from .control import (
    ConfigError,
    MultiscaleSolver,
    ProblemConfig,
    SolveResult,
    choose_k,
    compute_errors,
    rescale_problem,
    solve_coarse_standard,
    solve_fine_reference,
    solve_multiscale,
    unscale_result,
    verify_assumption3,
)
from .grid import GridPair, Patch, build_nested, layer_distance, patch
from .interp import InterpOperators, build_interp, build_kernel_basis, build_pi, build_prolongation, prolong
from .linalg import ConvergenceError, SingularMatrixError, dense_solve_symmetric, lanczos_extremes, pminres
from .multiscale import (
    assemble_reduced,
    build_multiscale_basis,
    compute_correctors,
    compute_ideal_corrector,
    compute_localized_corrector,
    corrector_rhs,
    decay_profile,
    derive_xi,
)
from .saddle import (
    C_PF_UNIT_SQUARE,
    apply_block_precond,
    build_as_preconditioner,
    build_kernel_operators,
    spectral_diagnostics,
)
