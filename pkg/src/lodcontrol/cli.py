"""Command-line harness: ``lodcontrol {solve,convergence,decay,spectrum,basis}``.

Configs are flat JSON objects.  Keys matching :class:`ProblemConfig` fields
configure the problem; the remaining keys steer the subcommands (see
``RUN_KEYS``).  ``"preset"`` names a bundled configuration that explicit keys
then override.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import element_stiffness
from .control import (
    ConfigError,
    MultiscaleSolver,
    ProblemConfig,
    choose_k,
    compute_errors,
    solve_coarse_standard,
    solve_fine_reference,
    verify_assumption3,
)
from .linalg import ConvergenceError
from .multiscale import compute_correctors, decay_profile, fine_pair
from .saddle import write_spectrum_csv

log = logging.getLogger("lodcontrol")

CONVERGENCE_COLUMNS = ["example", "epsilon_or_seed", "N", "R", "H", "h", "k", "j", "mode",
                       "rel_energy_err", "rel_l2_err", "kappa", "q", "assumption3_margin", "wall_time_s"]
DECAY_COLUMNS = ["node", "layer", "annulus_energy", "cumulative_fraction", "k"]
ASSUMPTION3_COLUMNS = ["N", "R", "k", "lhs", "satisfied"]
SLOPE_COLUMNS = ["example", "mode", "norm", "slope", "intercept", "fit_residual", "points"]

# keys consumed by subcommands rather than ProblemConfig
RUN_KEYS = {"preset", "H_inv", "j_list", "fine_cells", "modes", "nodes", "k_list", "k_grid", "loads",
            "compare_fine"}

PRESETS = {
    # desk-scale rate study: h = 1/64, H = 1/4, 1/8, 1/16
    "oscillatory-desk": dict(example="oscillatory", epsilon=0.08, fine_cells=64, H_inv=[4, 8, 16], j=2,
                             modes=["localized_auto"]),
    "oscillatory-full-scale": dict(example="oscillatory", epsilon=0.08, fine_cells=256, H_inv=[8, 16, 32, 64],
                                   j_list=[2, 2, 3, 3], modes=["localized_auto"]),
    "oscillatory-eps0.04-full-scale": dict(example="oscillatory", epsilon=0.04, fine_cells=256,
                                           H_inv=[8, 16, 32, 64], j_list=[2, 2, 3, 3], modes=["localized_auto"]),
    "oscillatory-eps0.025-full-scale": dict(example="oscillatory", epsilon=0.025, fine_cells=320,
                                            H_inv=[10, 20, 40, 80], j_list=[2, 2, 3, 3], modes=["localized_auto"]),
    "heterogeneous-desk": dict(example="heterogeneous", seed=1, N=16, R=8, j=3, fine_cells=128, H_inv=[4, 8, 16],
                               modes=["ideal", "localized_auto"]),
    "heterogeneous-full-scale": dict(example="heterogeneous", seed=1, fine_cells=320, H_inv=[10, 20, 40],
                                     j_list=[2, 3, 4], modes=["ideal", "localized_auto"]),
}


def load_config(path: str | None, seed: int | None = None) -> tuple[ProblemConfig, dict]:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config must be a flat JSON object")
    merged: dict = {}
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {raw['preset']!r}; known: {sorted(PRESETS)}")
        merged.update(PRESETS[raw["preset"]])
    merged.update(raw)
    if seed is not None:
        merged["seed"] = seed
    names = {f.name for f in fields(ProblemConfig)}
    unknown = set(merged) - names - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in merged.items():
        if isinstance(val, (dict,)) or (isinstance(val, list) and key not in RUN_KEYS):
            raise ConfigError(f"config value for {key!r} must be a scalar")
    try:
        cfg = ProblemConfig(**{k: v for k, v in merged.items() if k in names})
    except TypeError as err:
        raise ConfigError(str(err)) from err
    run = {k: v for k, v in merged.items() if k in RUN_KEYS}
    return cfg, run


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _node_indices(grid, nodes) -> list[int]:
    """Nodes given as interior indices or ``[ix, iy]`` coarse vertex coordinates."""
    if nodes is None:
        c = grid.N // 2
        nodes = [[c, c]]
    out = []
    for nd in nodes:
        if isinstance(nd, (list, tuple)):
            ix, iy = nd
            if not (1 <= ix < grid.N and 1 <= iy < grid.N):
                raise ConfigError(f"node {nd} is not an interior coarse vertex")
            out.append((iy - 1) * (grid.N - 1) + (ix - 1))
        else:
            if not 0 <= int(nd) < grid.m:
                raise ConfigError(f"node index {nd} out of range [0, {grid.m})")
            out.append(int(nd))
    return out


def fit_slope(H, err) -> tuple[float, float, float]:
    """Least-squares ``log err = s log H + c``; returns (s, c, residual norm)."""
    x, y = np.log(np.asarray(H, float)), np.log(np.asarray(err, float))
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.linalg.norm(y - X @ coef))
    return float(coef[0]), float(coef[1]), resid


def run_convergence(cfg: ProblemConfig, run: dict, out: Path, stage_times: dict) -> list[Path]:
    H_inv = run.get("H_inv")
    if not H_inv:
        raise ConfigError("convergence needs a non-empty H_inv list")
    fine_cells = int(run.get("fine_cells", cfg.N * cfg.R))
    if any(fine_cells % int(n) for n in H_inv):
        raise ConfigError(f"every entry of H_inv must divide fine_cells={fine_cells} (h fixed across the sweep)")
    if any(fine_cells // int(n) < 2 for n in H_inv):
        raise ConfigError("each H must be refined at least twice (R >= 2)")
    j_list = run.get("j_list") or [cfg.j] * len(H_inv)
    if len(j_list) != len(H_inv):
        raise ConfigError("j_list must match H_inv in length")
    modes = run.get("modes") or [cfg.mode]
    rows, ref = [], None
    for N, j in zip(H_inv, j_list):
        N, j = int(N), int(j)
        t0 = time.perf_counter()
        base = replace(cfg, N=N, R=fine_cells // N, j=j)
        solver = MultiscaleSolver(replace(base, mode="ideal"))
        setup = time.perf_counter() - t0
        if ref is None:
            t = time.perf_counter()
            ref = solve_fine_reference(solver.ops, solver.load(), cfg.fine_tol, gamma=cfg.gamma,
                                       precond=cfg.fine_precond)
            stage_times["fine_reference"] = time.perf_counter() - t
        diag = solver.diagnostics()
        for mode in modes:
            t = time.perf_counter()
            mcfg = replace(base, mode=mode)
            if mode == "localized" and mcfg.k is None:
                raise ConfigError("mode 'localized' needs k")
            k = mcfg.resolved_k()
            res = solver.solve(k=k)
            e, l2 = compute_errors(ref, res, solver.ops)
            k_num = 0 if k == "ideal" else k
            _, margin = verify_assumption3(diag, base.H, k_num) if k != "ideal" else (True, float("nan"))
            wall = setup + time.perf_counter() - t
            rows.append([cfg.example, cfg.label(), N, fine_cells // N, 1.0 / N, 1.0 / fine_cells, k, j, mode,
                         e, l2, diag.kappa, diag.q, margin, round(wall, 3)])
            log.info("H=1/%d mode=%s k=%s energy=%.4e l2=%.4e kappa=%.2f", N, mode, k, e, l2, diag.kappa)
        stage_times[f"H=1/{N}"] = time.perf_counter() - t0
    slope_rows, summary = [], []
    for mode in modes:
        sel = [r for r in rows if r[8] == mode]
        if len(sel) < 2:
            continue
        H = [r[4] for r in sel]
        for norm, col in (("energy", 9), ("l2", 10)):
            s, c, res = fit_slope(H, [r[col] for r in sel])
            slope_rows.append([cfg.example, mode, norm, s, c, res, len(sel)])
        se = slope_rows[-2][3]
        sl = slope_rows[-1][3]
        summary.append([cfg.example, cfg.label(), "", "", "", "", "", "", f"slope:{mode}",
                        se, sl, "", "", "", ""])
        print(f"{mode}: energy slope {se:.3f}, L2 slope {sl:.3f}")
    p1, p2 = out / "convergence.csv", out / "slopes.csv"
    _write_csv(p1, CONVERGENCE_COLUMNS, rows + summary)
    _write_csv(p2, SLOPE_COLUMNS, slope_rows)
    return [p1, p2]


def run_decay(cfg: ProblemConfig, run: dict, out: Path, stage_times: dict) -> list[Path]:
    solver = MultiscaleSolver(cfg)
    grid = solver.grid
    nodes = _node_indices(grid, run.get("nodes"))
    k_list = run.get("k_list") or [choose_k(cfg.H, cfg.j)]
    EK = element_stiffness(grid, solver.field.scaled(solver.tau) if solver.tau != 1.0 else solver.field)
    rows = []
    for k in ["ideal"] + [int(k) for k in k_list]:
        t = time.perf_counter()
        cs = compute_correctors(solver.kops, solver.S, k, nodes, tol=cfg.ideal_tol)
        stage_times[f"correctors[{k}]"] = time.perf_counter() - t
        for c, node in enumerate(nodes):
            prof = decay_profile(cs.psi[:, c], node, grid, solver.kops, EK)
            sq = np.array([e for _, e in prof]) ** 2
            total = sq.sum()
            cum = np.cumsum(sq) / total if total > 0 else np.zeros_like(sq)
            for (layer, e), f in zip(prof, cum):
                rows.append([node, layer, e, f, k])
    path = out / "decay.csv"
    _write_csv(path, DECAY_COLUMNS, rows)
    print(f"decay profiles for nodes {nodes}, k in {['ideal'] + list(k_list)}")
    return [path]


def run_spectrum(cfg: ProblemConfig, run: dict, out: Path, stage_times: dict) -> list[Path]:
    solver = MultiscaleSolver(cfg)
    diag = solver.diagnostics()
    stage_times.update(solver.times)
    if not diag.converged:
        print(f"warning: Lanczos extremes not converged after {diag.lanczos_steps} steps", file=sys.stderr)
    k_grid = run.get("k_grid") or sorted({choose_k(cfg.H, j) for j in (1, 2, 3, 4)})
    p1, p2 = out / "spectrum.csv", out / "assumption3.csv"
    write_spectrum_csv(p1, [(diag, cfg.N, cfg.R)])
    rows = []
    for k in k_grid:
        ok, lhs = verify_assumption3(diag, cfg.H, int(k))
        rows.append([cfg.N, cfg.R, int(k), lhs, ok])
    _write_csv(p2, ASSUMPTION3_COLUMNS, rows)
    print(f"kappa={diag.kappa:.4g} c*={diag.c_star:.4g} d*={diag.d_star:.4g} q={diag.q:.4g}"
          f" (lanczos {'converged' if diag.converged else 'NOT converged'})")
    return [p1, p2]


def write_nodal(path: Path, grid, values: np.ndarray) -> None:
    """``x y value`` per fine interior node (n rows after a ``#`` header)."""
    xy = grid.fine_node_positions
    with open(path, "w") as fh:
        fh.write("# x y value\n")
        for (x, y), v in zip(xy, values):
            fh.write(f"{float(x)!r} {float(y)!r} {float(v)!r}\n")


def run_basis_export(cfg: ProblemConfig, run: dict, out: Path, stage_times: dict) -> list[Path]:
    solver = MultiscaleSolver(cfg)
    grid = solver.grid
    nodes = _node_indices(grid, run.get("nodes"))
    k_list = run.get("k_list") or [0, choose_k(cfg.H, cfg.j)]
    n = grid.n
    paths = []
    bdir = out / "basis"
    bdir.mkdir(parents=True, exist_ok=True)
    P = solver.interp.P
    for k in ["ideal"] + [int(k) for k in k_list]:
        cs = compute_correctors(solver.kops, solver.S, k, nodes, tol=cfg.ideal_tol)
        for c, node in enumerate(nodes):
            psi = cs.psi[:, c]
            h = psi.shape[0] // 2
            phi = P[:, node].toarray().ravel()
            for slot, corr in ((1, psi), (2, np.concatenate([-psi[h:], psi[:h]]))):
                w = fine_pair(solver.kops, corr)
                vec = -w
                vec[(slot - 1) * n:slot * n] += phi
                for comp, part in (("p", vec[:n]), ("y", vec[n:])):
                    path = bdir / f"node{node}_k{k}_slot{slot}_{comp}.txt"
                    write_nodal(path, grid, part)
                    paths.append(path)
    print(f"wrote {len(paths)} nodal files to {bdir}")
    return paths


def run_solve(cfg: ProblemConfig, run: dict, out: Path, stage_times: dict) -> list[Path]:
    solver = MultiscaleSolver(cfg)
    res = solver.solve()
    stage_times.update(solver.times)
    paths = []
    summary = {"method": res.method, "k": res.k, "energy": res.energy, "l2": res.l2,
               "kkt_residual": res.kkt_residual}
    if run.get("compare_fine", True):
        t = time.perf_counter()
        ref = solve_fine_reference(solver.ops, solver.load(), cfg.fine_tol, gamma=cfg.gamma,
                                   precond=cfg.fine_precond)
        stage_times["fine_reference"] = time.perf_counter() - t
        coarse = solve_coarse_standard(solver.ops, solver.load(), gamma=cfg.gamma, P=solver.interp.P)
        summary["rel_errors_multiscale"] = list(compute_errors(ref, res, solver.ops))
        summary["rel_errors_coarse"] = list(compute_errors(ref, coarse, solver.ops))
    loads = run.get("loads")
    if loads:
        # repeat solves: one factorized reduced system, many targets
        L = np.column_stack([solver.load(float(v)) for v in loads])
        t = time.perf_counter()
        many = solver.solve(L)
        t_ms = time.perf_counter() - t
        t = time.perf_counter()
        for c in range(L.shape[1]):
            solve_fine_reference(solver.ops, L[:, c], cfg.fine_tol, gamma=cfg.gamma, precond=cfg.fine_precond)
        t_fine = time.perf_counter() - t
        summary["repeat_solves"] = {"loads": len(loads), "multiscale_online_s": t_ms, "fine_s": t_fine}
        rows = [[i, float(v), r.energy, r.l2] for i, (v, r) in enumerate(zip(loads, many))]
        p = out / "repeat_solves.csv"
        _write_csv(p, ["load_index", "y_d", "energy", "l2"], rows)
        paths.append(p)
    p = out / "solution.csv"
    xy = solver.grid.fine_node_positions
    _write_csv(p, ["x", "y", "p", "y_state", "u"],
               [[x, y, a, b, c] for (x, y), a, b, c in zip(xy, res.p, res.y, res.u)])
    paths.append(p)
    s = out / "summary.json"
    s.write_text(json.dumps(summary, indent=2, default=float) + "\n")
    paths.append(s)
    for key, val in summary.items():
        print(f"{key}: {val}")
    return paths


COMMANDS = {
    "solve": run_solve,
    "convergence": run_convergence,
    "decay": run_decay,
    "spectrum": run_spectrum,
    "basis": run_basis_export,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lodcontrol", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat JSON config file")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, run = load_config(args.config, args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage_times: dict = {}
    limiter = None
    if args.threads is not None:
        if args.threads < 1:
            print("config error: --threads must be >= 1", file=sys.stderr)
            return 2
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    try:
        t = time.perf_counter()
        paths = COMMANDS[args.command](cfg, run, out, stage_times)
        stage_times["total"] = time.perf_counter() - t
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ConvergenceError as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        return 3
    finally:
        if limiter is not None:
            limiter.unregister()
    cfg_dict = {k: v for k, v in asdict(cfg).items() if not callable(v)}
    manifest = {
        "command": args.command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg_dict,
        "run": run,
        "output_dir": str(out),
        "stage_times_s": stage_times,
        "checksums": {p.name: _sha256(p) for p in paths if p.suffix == ".csv"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
