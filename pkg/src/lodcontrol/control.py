"""End-to-end solves: fine reference, coarse standard FEM, ideal/localized multiscale."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledOperators, assemble, assemble_load, element_stiffness, pair_norms
from .coeff import CoefficientField, constant, field_bounds, gen_block_random, oscillatory
from .grid import GridPair, build_nested
from .interp import build_interp
from .linalg import ConvergenceError, SymmetricFactorization, dense_solve_symmetric, pminres
from .multiscale import (
    IDEAL_TOL,
    CorrectorSet,
    MultiscaleBasis,
    assemble_reduced,
    build_multiscale_basis,
    compute_correctors,
)
from .saddle import (
    C_PF_UNIT_SQUARE,
    SpectralDiagnostics,
    build_as_preconditioner,
    build_kernel_operators,
    spectral_diagnostics,
)

__all__ = [
    "ConfigError",
    "ProblemConfig",
    "SolveResult",
    "solve_fine_reference",
    "solve_coarse_standard",
    "MultiscaleSolver",
    "solve_multiscale",
    "compute_errors",
    "choose_k",
    "verify_assumption3",
    "rescale_problem",
    "unscale_result",
]

EXAMPLES = ("oscillatory", "heterogeneous", "constant")
MODES = ("ideal", "localized", "localized_auto")
DEFAULT_Y_D = {"oscillatory": -1.0, "heterogeneous": 1.0, "constant": 1.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    """Everything needed to reproduce one solve.

    ``coeff_scale`` and ``y_d_scale`` carry the rescaling ``a -> tau a``,
    ``y_d -> tau y_d``; they are 1 for an unscaled problem.
    """

    example: str = "oscillatory"
    epsilon: float = 0.08
    seed: int = 1
    blocks_per_side: int = 40
    lo: float = 1.0
    hi: float = 1350.0
    value: float = 1.0
    N: int = 8
    R: int = 8
    gamma: float = 1.0
    y_d: float | Callable | None = None
    j: int = 2
    mode: str = "localized_auto"
    k: int | None = None
    fine_tol: float = 1e-10
    ideal_tol: float = IDEAL_TOL
    fine_precond: str = "exact"
    lanczos_iters: int = 150
    coeff_scale: float = 1.0
    y_d_scale: float = 1.0

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ConfigError(f"example must be one of {EXAMPLES}, got {self.example!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.N < 2 or self.R < 2:
            raise ConfigError("need N >= 2 and R >= 2")
        if self.mode == "localized" and (self.k is None or self.k < 0):
            raise ConfigError("mode 'localized' needs k >= 0")
        if self.mode == "localized_auto" and self.j < 1:
            raise ConfigError("j must be >= 1")
        if self.coeff_scale <= 0:
            raise ConfigError("coeff_scale must be positive")

    @property
    def H(self) -> float:
        return 1.0 / self.N

    @property
    def h(self) -> float:
        return 1.0 / (self.N * self.R)

    def grid(self) -> GridPair:
        return build_nested(self.N, self.R)

    def field(self) -> CoefficientField:
        if self.example == "oscillatory":
            f = oscillatory(self.epsilon)
        elif self.example == "heterogeneous":
            f = gen_block_random(self.seed, self.blocks_per_side, self.lo, self.hi)
        else:
            f = constant(self.value)
        return f.scaled(self.coeff_scale) if self.coeff_scale != 1.0 else f

    def target(self):
        """Desired state ``y_d`` (constant or callable), scaling included."""
        yd = DEFAULT_Y_D[self.example] if self.y_d is None else self.y_d
        s = self.y_d_scale
        if callable(yd):
            return yd if s == 1.0 else (lambda x, y: s * np.asarray(yd(x, y)))
        return s * float(yd)

    def resolved_k(self) -> int | str:
        if self.mode == "ideal":
            return "ideal"
        if self.mode == "localized":
            return int(self.k)
        return choose_k(self.H, self.j)

    def label(self) -> str:
        if self.example == "oscillatory":
            return repr(self.epsilon)
        if self.example == "heterogeneous":
            return str(self.seed)
        return repr(self.value)


@dataclass
class SolveResult:
    p: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    gamma: float = 1.0
    method: str = ""
    k: int | str | None = None
    energy: float = float("nan")
    l2: float = float("nan")
    kkt_residual: float = float("nan")
    iterations: int | None = None
    history: np.ndarray | None = field(repr=False, default=None)
    diagnostics: SpectralDiagnostics | None = None
    times: dict = field(default_factory=dict)

    @property
    def u(self) -> np.ndarray:
        """Control recovered from the adjoint, ``u = p / gamma``."""
        return self.p / self.gamma

    @property
    def pair(self) -> np.ndarray:
        return np.concatenate([self.p, self.y])


def _kkt_residual(A, M, p, y, load, gamma):
    r1 = A @ p + M @ y - load
    r2 = M @ p - gamma * (A @ y)
    nl = np.linalg.norm(load)
    res = np.sqrt(r1 @ r1 + r2 @ r2)
    return float(res / nl) if nl > 0 else float(res)


def _finish(A, M, p, y, load, gamma, **kw) -> SolveResult:
    energy, l2 = pair_norms(A, M, np.concatenate([p, y]))
    return SolveResult(p, y, gamma, energy=energy, l2=l2, kkt_residual=_kkt_residual(A, M, p, y, load, gamma), **kw)


def _block_precond(A, gamma, kind):
    n = A.shape[0]
    if kind == "jacobi":
        d = 1.0 / A.diagonal()
        return sp.diags(np.concatenate([d, d / gamma]))
    if kind == "exact":
        lu = spla.splu(A.tocsc())

        def apply(X):
            X = np.asarray(X)
            col = X.ndim == 1
            X2 = X.reshape(2 * n, -1)
            out = np.concatenate([lu.solve(X2[:n]), lu.solve(X2[n:]) / gamma])
            return out[:, 0] if col else out

        return spla.LinearOperator((2 * n, 2 * n), matvec=apply, matmat=apply, dtype=float)
    raise ConfigError(f"unknown fine preconditioner {kind!r}")


def solve_fine_reference(ops: AssembledOperators, load: np.ndarray, tol: float = 1e-10, *,
                         gamma: float = 1.0, precond: str = "exact", maxiter: int | None = None) -> SolveResult:
    """Fine KKT system ``[[A, M], [M, -gamma A]] (p, y) = (load, 0)``.

    ``precond`` is ``"exact"`` (block ``A^-1``), ``"jacobi"`` or ``"dense"``
    (direct dense solve, only for n <= 1000).
    """
    t0 = time.perf_counter()
    A, M = ops.A, ops.M
    n = ops.n
    load = np.asarray(load, dtype=float)
    rhs = np.concatenate([load, np.zeros(n)])
    if precond == "dense":
        if n > 1000:
            raise ConfigError("dense fine solve is limited to n <= 1000")
        x = dense_solve_symmetric(ops.block(gamma).toarray(), rhs)
        res = _finish(A, M, x[:n], x[n:], load, gamma, method="fine-dense")
    else:
        if not np.any(rhs):
            x, hist, its = np.zeros(2 * n), np.zeros(1), 0
        else:
            Sb = _block_precond(A, gamma, precond)
            x, rep = pminres(ops.block(gamma), rhs, Sb, tol=tol, maxiter=maxiter or 20 * n)
            if not rep.converged:
                raise ConvergenceError(f"fine MINRES stopped at {rep.final / rep.initial:.3e} > {tol:g}",
                                       rep.residuals)
            hist, its = rep.residuals, rep.steps
        res = _finish(A, M, x[:n], x[n:], load, gamma, method=f"fine-{precond}", iterations=its, history=hist)
    res.times["solve"] = time.perf_counter() - t0
    return res


def solve_coarse_standard(ops: AssembledOperators, load: np.ndarray, *, gamma: float = 1.0, P=None) -> SolveResult:
    """Q1 Galerkin solve on the coarse mesh, returned in fine coordinates.

    Coarse matrices are the Galerkin products ``P^T A P`` of the fine
    operators, so the rough coefficient is integrated like on the fine mesh.
    """
    t0 = time.perf_counter()
    if P is None:
        from .interp import build_prolongation

        P = build_prolongation(ops.grid)
    AH = (P.T @ ops.A @ P).toarray()
    MH = (P.T @ ops.M @ P).toarray()
    LH = P.T @ load
    m = AH.shape[0]
    K = np.block([[AH, MH], [MH, -gamma * AH]])
    x = dense_solve_symmetric(K, np.concatenate([LH, np.zeros(m)]))
    res = _finish(ops.A, ops.M, P @ x[:m], P @ x[m:], load, gamma, method="coarse")
    res.times["solve"] = time.perf_counter() - t0
    return res


class MultiscaleSolver:
    """Offline/online split of the multiscale method for one configuration.

    Everything up to the factorized reduced matrix is built once; ``solve``
    then costs two dense triangular solves and one basis expansion per load.
    ``gamma != 1`` is normalized by rescaling with ``tau = sqrt(gamma)``.
    """

    def __init__(self, config: ProblemConfig, *, grid: GridPair | None = None):
        self.config = config
        self.times: dict[str, float] = {}
        t = time.perf_counter()
        self.grid = grid or config.grid()
        self.tau = math.sqrt(config.gamma)
        self.field = config.field()
        self.ops = assemble(self.grid, self.field)
        self.work_ops = self.ops if self.tau == 1.0 else assemble(self.grid, self.field.scaled(self.tau))
        self.interp = build_interp(self.grid)
        self.kops = build_kernel_operators(self.work_ops.A, self.work_ops.M, self.interp)
        self.times["setup"] = time.perf_counter() - t
        t = time.perf_counter()
        self.S = build_as_preconditioner(self.grid, self.interp, self.kops)
        self.times["preconditioner"] = time.perf_counter() - t
        self._diag: SpectralDiagnostics | None = None
        self._correctors: dict = {}
        self._reduced: dict = {}

    @property
    def alpha_beta(self) -> tuple[float, float]:
        return field_bounds(self.field.scaled(self.tau) if self.tau != 1.0 else self.field)

    def diagnostics(self) -> SpectralDiagnostics:
        if self._diag is None:
            t = time.perf_counter()
            alpha, beta = self.alpha_beta
            self._diag = spectral_diagnostics(self.kops, self.S, C_PF_UNIT_SQUARE, alpha, beta,
                                              iters=self.config.lanczos_iters)
            self.times["spectrum"] = time.perf_counter() - t
        return self._diag

    def correctors(self, k: int | str) -> CorrectorSet:
        if k not in self._correctors:
            t = time.perf_counter()
            self._correctors[k] = compute_correctors(self.kops, self.S, k, tol=self.config.ideal_tol)
            self.times[f"correctors[{k}]"] = time.perf_counter() - t
        return self._correctors[k]

    def reduced(self, k: int | str) -> tuple[MultiscaleBasis, np.ndarray, SymmetricFactorization]:
        if k not in self._reduced:
            basis = build_multiscale_basis(self.correctors(k), self.kops)
            t = time.perf_counter()
            G, _ = assemble_reduced(basis, self.work_ops.A, self.work_ops.M, np.zeros(self.grid.n))
            self._reduced[k] = (basis, G, SymmetricFactorization(G))
            self.times[f"reduced[{k}]"] = time.perf_counter() - t
        return self._reduced[k]

    def load(self, y_d=None) -> np.ndarray:
        """Fine load vector of the original (unscaled) problem."""
        return assemble_load(self.grid, self.config.target() if y_d is None else y_d)

    def solve(self, load: np.ndarray | None = None, k: int | str | None = None) -> SolveResult | list[SolveResult]:
        """Solve for one load vector, or for each column of an ``(n, r)`` block."""
        k = self.config.resolved_k() if k is None else k
        if load is None:
            load = self.load()
        load = np.asarray(load, dtype=float)
        basis, _, lu = self.reduced(k)
        t = time.perf_counter()
        n = self.grid.n
        V = basis.vectors
        rhs = V[:n].T @ (self.tau * load)
        c = lu.solve(rhs)
        x = V @ c
        dt = time.perf_counter() - t
        cols = x if x.ndim == 2 else x[:, None]
        L = load if load.ndim == 2 else load[:, None]
        out = []
        for j in range(cols.shape[1]):
            p, y = cols[:n, j], cols[n:, j] / self.tau
            r = _finish(self.ops.A, self.ops.M, p, y, L[:, j], self.config.gamma,
                        method="ideal" if k == "ideal" else "localized", k=k)
            r.diagnostics = self._diag
            r.times = dict(self.times, online=dt / cols.shape[1])
            out.append(r)
        return out if load.ndim == 2 else out[0]


def solve_multiscale(config: ProblemConfig, load: np.ndarray | None = None) -> SolveResult:
    return MultiscaleSolver(config).solve(load)


def compute_errors(reference: SolveResult, approx: SolveResult, ops: AssembledOperators) -> tuple[float, float]:
    """Relative errors in the product energy and product L2 norms."""
    ref = reference.pair
    e_ref, l_ref = pair_norms(ops.A, ops.M, ref)
    if e_ref == 0.0 or l_ref == 0.0:
        raise ValueError("reference solution has zero norm")
    e, l2 = pair_norms(ops.A, ops.M, ref - approx.pair)
    return e / e_ref, l2 / l_ref


def choose_k(H: float, j: int) -> int:
    """``k = j * ceil(ln(1/H))``."""
    if not 0 < H < 1:
        raise ValueError("need 0 < H < 1")
    if j < 1:
        raise ValueError("need j >= 1")
    # guard against ln(1/H) landing a rounding error above an integer
    return int(j * math.ceil(math.log(1.0 / H) - 1e-12))


def verify_assumption3(diag: SpectralDiagnostics, H: float, k: int, d: int = 2, tau_d: float = 0.0,
                       beta_over_alpha: float | None = None) -> tuple[bool, float]:
    """Sign and value of ``floor(k/2) ln q + 1.5 ln kappa + ln(beta/alpha) - (1+d-tau_d) ln H``."""
    if beta_over_alpha is None:
        if diag.beta is None:
            raise ValueError("beta/alpha unknown: pass beta_over_alpha or diagnostics with beta")
        beta_over_alpha = diag.beta / diag.alpha
    half = k // 2
    if diag.q <= 0.0:
        if half >= 1:
            return True, -math.inf
        lq = 0.0
    else:
        lq = half * math.log(diag.q)
    lhs = lq + 1.5 * math.log(diag.kappa) + math.log(beta_over_alpha) - (1 + d - tau_d) * math.log(H)
    return lhs <= 0.0, lhs


def rescale_problem(config: ProblemConfig, tau: float) -> ProblemConfig:
    """``a -> tau a``, ``y_d -> tau y_d``, ``gamma -> gamma / tau^2``; solutions map by ``y = y~ / tau``."""
    if not tau > 0:
        raise ConfigError("tau must be positive")
    if tau == 1.0:
        return config
    return replace(config, coeff_scale=config.coeff_scale * tau, y_d_scale=config.y_d_scale * tau,
                   gamma=config.gamma / tau**2)


def unscale_result(result: SolveResult, tau: float, gamma: float | None = None) -> SolveResult:
    """Map a solution of the tau-rescaled problem back to the original one."""
    g = result.gamma * tau**2 if gamma is None else gamma
    return replace(result, y=result.y / tau, gamma=g, energy=float("nan"), l2=float("nan"),
                   kkt_residual=float("nan"))
