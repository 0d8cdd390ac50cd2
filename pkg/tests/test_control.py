import math
from dataclasses import replace

import numpy as np
import pytest

from lodcontrol.assembly import assemble, assemble_load, pair_norms
from lodcontrol.coeff import field_bounds
from lodcontrol.control import (
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
from lodcontrol.interp import build_interp, measure_c_dagger
from lodcontrol.saddle import SpectralDiagnostics


def _ops(N, R, example="constant", **kw):
    cfg = ProblemConfig(example=example, N=N, R=R, **kw)
    return cfg, assemble(cfg.grid(), cfg.field())


def test_fine_zero_data():
    cfg, ops = _ops(2, 4)
    r = solve_fine_reference(ops, np.zeros(ops.n))
    assert not np.any(r.p) and not np.any(r.y)
    c = solve_coarse_standard(ops, np.zeros(ops.n))
    assert not np.any(c.p) and not np.any(c.y)


@pytest.mark.parametrize("precond", ["exact", "jacobi"])
@pytest.mark.parametrize("gamma", [1.0, 0.3])
def test_fine_against_dense(precond, gamma):
    cfg, ops = _ops(2, 4)
    load = assemble_load(cfg.grid(), 1.0)
    r = solve_fine_reference(ops, load, 1e-12, gamma=gamma, precond=precond)
    d = solve_fine_reference(ops, load, gamma=gamma, precond="dense")
    assert np.linalg.norm(r.pair - d.pair) <= 1e-8 * np.linalg.norm(d.pair)
    assert r.kkt_residual <= 1e-10
    with pytest.raises(ConfigError):
        solve_fine_reference(ops, load, precond="ilu")


def test_coarse_approaches_fine():
    errs = []
    for N in (2, 4, 8):
        cfg, ops = _ops(N, 16 // N)
        load = assemble_load(cfg.grid(), 1.0)
        ref = solve_fine_reference(ops, load)
        errs.append(compute_errors(ref, solve_coarse_standard(ops, load), ops)[0])
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.slow
def test_coarse_worse_than_multiscale_on_oscillatory():
    cfg = ProblemConfig(example="oscillatory", epsilon=0.025, N=20, R=8, j=2)
    s = MultiscaleSolver(cfg)
    load = s.load()
    ref = solve_fine_reference(s.ops, load)
    ms = compute_errors(ref, s.solve(), s.ops)[0]
    coarse = compute_errors(ref, solve_coarse_standard(s.ops, load, P=s.interp.P), s.ops)[0]
    assert coarse > ms


def test_compute_errors_trivial():
    cfg, ops = _ops(2, 4)
    load = assemble_load(cfg.grid(), 1.0)
    ref = solve_fine_reference(ops, load)
    assert compute_errors(ref, ref, ops) == (0.0, 0.0)
    zero = SolveResult(0 * ref.p, 0 * ref.y)
    assert compute_errors(ref, zero, ops) == pytest.approx((1.0, 1.0))
    with pytest.raises(ValueError):
        compute_errors(zero, ref, ops)


def test_ideal_energy_estimate():
    cfg = ProblemConfig(example="heterogeneous", N=4, R=8, mode="ideal")
    s = MultiscaleSolver(cfg)
    ref = solve_fine_reference(s.ops, s.load())
    res = s.solve()
    e_abs = pair_norms(s.ops.A, s.ops.M, ref.pair - res.pair)[0]
    unit = assemble(s.grid, ProblemConfig(example="constant").field())
    cd = measure_c_dagger(s.interp, unit.A, unit.M)["c_dagger"]
    alpha, _ = field_bounds(s.field)
    yd_l2 = 1.0  # |y_d| = 1 on the unit square
    assert e_abs <= cd / math.sqrt(alpha) * cfg.H * yd_l2


@pytest.mark.parametrize("H,j,k", [(1 / 10, 2, 6), (1 / 20, 3, 9), (1 / 40, 4, 16), (1 / 16, 3, 9), (1 / 4, 2, 4)])
def test_choose_k(H, j, k):
    assert choose_k(H, j) == k


@pytest.mark.parametrize("H,j", [(1.0, 2), (0.0, 2), (0.5, 0)])
def test_choose_k_rejects(H, j):
    with pytest.raises(ValueError):
        choose_k(H, j)


def _diag(kappa, q, alpha=1.0, beta=1.0):
    return SpectralDiagnostics(1.0, kappa, kappa, 1.0, 1.0, q, 0.05, alpha, beta)


def test_assumption3_examples():
    ok, lhs = verify_assumption3(_diag(1.0, 0.0), 0.5, 2)
    assert ok and lhs == -math.inf
    ok, lhs = verify_assumption3(_diag(1.0, 0.3), 0.5, 0)
    assert not ok and lhs == pytest.approx(3 * math.log(2))
    lhs_k = [verify_assumption3(_diag(8.0, 0.7, 1.0, 1350.0), 1 / 16, k)[1] for k in range(0, 40, 2)]
    assert np.all(np.diff(lhs_k) < 0)


def test_assumption3_desk_run():
    s = MultiscaleSolver(ProblemConfig(example="heterogeneous", N=8, R=4))
    d = s.diagnostics()
    margins = [verify_assumption3(d, 1 / 8, k)[1] for k in (2, 4, 8, 16, 32)]
    assert np.all(np.diff(margins) < 0)
    with pytest.raises(ValueError):
        verify_assumption3(_diag(2.0, 0.5, beta=None), 0.5, 2)


def test_rescale_config():
    cfg = ProblemConfig(example="constant", value=4.0)
    assert rescale_problem(cfg, 1.0) is cfg
    t = rescale_problem(cfg, 0.25)
    assert field_bounds(t.field()) == (1.0, 1.0)
    assert t.gamma == pytest.approx(16.0) and t.target() == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        rescale_problem(cfg, 0.0)


@pytest.mark.parametrize("gamma", [0.25, 3.0])
def test_gamma_galerkin_orthogonality(gamma):
    cfg = ProblemConfig(example="oscillatory", N=4, R=4, gamma=gamma, mode="localized", k=3)
    s = MultiscaleSolver(cfg)
    res = s.solve()
    n = s.grid.n
    V = s.reduced(3)[0].vectors.copy()
    V[n:] /= s.tau
    blk = s.ops.block(gamma)
    rhs = np.concatenate([s.load(), np.zeros(n)])
    r = V.T @ (blk @ res.pair - rhs)
    assert np.abs(r).max() <= 1e-10 * np.abs(V.T @ rhs).max()
    assert res.u == pytest.approx(res.p / gamma)


def test_unscale_result_maps_state():
    r = SolveResult(np.ones(3), 2 * np.ones(3), gamma=0.5)
    u = unscale_result(r, 2.0)
    np.testing.assert_array_equal(u.y, np.ones(3))
    assert u.gamma == 2.0


def test_block_of_loads_matches_single_solves():
    s = MultiscaleSolver(ProblemConfig(example="heterogeneous", N=4, R=4))
    L = np.column_stack([s.load(v) for v in (-1.0, 0.5, 2.0)])
    many = s.solve(L)
    for j, r in enumerate(many):
        one = s.solve(L[:, j])
        np.testing.assert_allclose(r.pair, one.pair, rtol=1e-12, atol=1e-15)


def test_solve_multiscale_wrapper():
    cfg = ProblemConfig(example="constant", N=2, R=2, mode="ideal")
    r = solve_multiscale(cfg)
    assert r.method == "ideal" and r.k == "ideal"


@pytest.mark.parametrize("kw", [dict(example="x"), dict(mode="nope"), dict(gamma=0.0), dict(N=1),
                                dict(mode="localized"), dict(j=0), dict(coeff_scale=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ProblemConfig(**kw)


def test_resolved_k_and_label():
    assert ProblemConfig(N=16, j=3).resolved_k() == 9
    assert ProblemConfig(mode="ideal").resolved_k() == "ideal"
    assert ProblemConfig(mode="localized", k=5).resolved_k() == 5
    assert ProblemConfig(example="heterogeneous", seed=3).label() == "3"
    assert replace(ProblemConfig(), epsilon=0.04).label() == "0.04"
