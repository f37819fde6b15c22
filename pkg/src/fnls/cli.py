"""Command-line entry point.

Exit codes: 0 success, 1 configuration error (or failed verification),
2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import SWEEP_COLUMNS, free_reference, sweep_alpha, sweep_summary
from .config import RunConfig, config_from_dict, parse_config
from .constraints import random_orthonormal_set
from .eigensolver import lowest_eigenpairs
from .energy import ENERGY_CSV_COLUMNS, energy_csv_row, evaluate_energy
from .errors import DomainError, FNLSError, ParseError, SolverError, ValidationError
from .inequalities import (C_LT_DEFAULT, check_gns, check_hardy, check_hoffmann_ostenhof,
                           check_lieb_thirring, empirical_lt_constant)
from .io import RunManifest, read_csv, read_orbitals, utc_now, write_csv, write_orbitals
from .solvers import (binding_check, energy_curve, initial_state,
                      minimize_best, minimize_scf)

log = logging.getLogger("fnls")

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV = 0, 1, 2
SPECTRUM_COLUMNS = ("index", "eigenvalue", "residual")
CURVE_COLUMNS = ("lambda", "energy", "converged", "residual")
BINDING_COLUMNS = ("lambda1", "lambda2", "e_total", "e_first", "e_free", "margin")
CHECK_COLUMNS = ("inequality", "seed", "margin")
VERIFY_RTOL = 1e-12


def _seeds(cfg: RunConfig) -> tuple:
    return tuple(cfg.seed + s for s in cfg.solver.seeds)


def _write(outdir, manifest: RunManifest, name: str, header, rows) -> None:
    write_csv(Path(outdir) / name, header, rows)
    manifest.add_artifact(outdir, name)


def _persist_report(outdir, manifest: RunManifest, rep, operation: str) -> None:
    params = rep.params
    _write(outdir, manifest, "energies.csv", ENERGY_CSV_COLUMNS,
           [energy_csv_row(params, rep.energy, rep.iterations, rep.residual)])
    if rep.spectrum is not None:
        _write(outdir, manifest, "spectrum.csv", SPECTRUM_COLUMNS, rep.spectrum.csv_rows())
    names = write_orbitals(outdir, rep.state)
    for n in names:
        manifest.add_artifact(outdir, n)
    manifest.summaries.append({
        "operation": operation,
        "method": rep.method,
        "total": rep.total,
        "iterations": rep.iterations,
        "residual": rep.residual,
        "converged": rep.converged,
        "eigenvalue_ordering_ok": rep.eigenvalue_ordering_ok(),
        "concentration_point": [float(v) for v in rep.concentration_point],
        "occupations": [float(v) for v in rep.state.occupations],
        "orbitals": names,
    })


def cmd_solve(cfg: RunConfig, outdir, manifest) -> int:
    params, s = cfg.params, cfg.solver
    if s.method == "scf":
        rep = minimize_scf(params, initial_state(params, cfg.seed), tol=s.tol,
                           max_iters=s.max_iters, damping=s.damping, mixing=s.mixing)
    else:
        rep = minimize_best(params, _seeds(cfg), tol=s.tol, max_iters=s.max_iters)
    _persist_report(outdir, manifest, rep, "solve")
    return EXIT_OK if rep.converged else EXIT_NOCONV


def cmd_solve_free(cfg: RunConfig, outdir, manifest) -> int:
    params, s = cfg.params, cfg.solver
    if params.centers:
        raise ValidationError("solve-free requires an empty list of centers")
    rep = minimize_best(params, _seeds(cfg), tol=s.tol, max_iters=s.max_iters, free=True)
    _persist_report(outdir, manifest, rep, "solve-free")
    return EXIT_OK if rep.converged else EXIT_NOCONV


def cmd_spectrum(cfg: RunConfig, outdir, manifest) -> int:
    """Lowest eigenpairs of ``-Δ + V`` with the density coupling switched off."""
    m = cfg.solver.eigenpairs or 5
    tol = cfg.solver.eig_tol or 1e-6
    res = lowest_eigenpairs(None, cfg.params, m, tol=tol, seed=cfg.seed, strict=False)
    _write(outdir, manifest, "spectrum.csv", SPECTRUM_COLUMNS, res.csv_rows())
    manifest.summaries.append({"operation": "spectrum", "eigenvalues": res.eigenvalues.tolist(),
                               "converged": res.converged, "iterations": res.iterations})
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_sweep(cfg: RunConfig, outdir, manifest) -> int:
    if len(cfg.alphas) < 3:
        raise ValidationError("sweep-alpha needs at least 3 alpha values (key 'alphas')")
    records, ref = sweep_alpha(cfg.params, cfg.alphas, tol=cfg.solver.tol,
                               n=cfg.params.grid.n, seeds=_seeds(cfg))
    _write(outdir, manifest, "sweep.csv", SWEEP_COLUMNS, [r.csv_row() for r in records])
    summary = sweep_summary(records, ref)
    summary["free_energy"] = ref.energy
    summary["free_eigenvalues"] = ref.eigenvalues.tolist()
    manifest.summaries.append({"operation": "sweep-alpha", **summary})
    return EXIT_OK if summary["all_converged"] and not summary["errors"] else EXIT_NOCONV


def cmd_curve(cfg: RunConfig, outdir, manifest) -> int:
    lambdas = cfg.lambdas or (cfg.params.lam,)
    pts = energy_curve(cfg.params, lambdas, tol=cfg.solver.tol, seeds=_seeds(cfg),
                       max_iters=cfg.solver.max_iters)
    _write(outdir, manifest, "curve.csv", CURVE_COLUMNS,
           [(p.lam, p.energy, p.converged, p.residual) for p in pts])
    e = np.array([p.energy for p in pts])
    manifest.summaries.append({
        "operation": "curve",
        "all_negative": bool(np.all(e < 0)),
        "strictly_decreasing": bool(np.all(np.diff(e) < 0)),
        "converged": all(p.converged for p in pts),
    })
    return EXIT_OK if all(p.converged for p in pts) else EXIT_NOCONV


def cmd_binding(cfg: RunConfig, outdir, manifest) -> int:
    if cfg.lambda2 is None:
        raise ValidationError("binding needs 'lambda2' (the escaping mass)")
    b = binding_check(cfg.params, cfg.params.lam, cfg.lambda2, tol=cfg.solver.tol,
                      seeds=_seeds(cfg), max_iters=cfg.solver.max_iters)
    _write(outdir, manifest, "binding.csv", BINDING_COLUMNS,
           [(b.lam1, b.lam2, b.e_total, b.e_first, b.e_free, b.margin)])
    manifest.summaries.append({"operation": "binding", "margin": b.margin, "binds": b.binds})
    return EXIT_OK


def cmd_check(cfg: RunConfig, outdir, manifest) -> int:
    """Inequality margins over seeded random states (GNS also at the free minimiser)."""
    params = cfg.params
    grid = params.grid
    chk = cfg.check
    samples = int(chk.get("samples", 100))
    c_lt = float(chk.get("c_lt", C_LT_DEFAULT))
    epsilons = [float(e) for e in chk.get("epsilons", (0.5, 1.0, 2.0))]
    m = params.n_orbitals
    ref = None
    if "j1inf" in chk:
        j1 = float(chk["j1inf"])
    else:
        ref = free_reference(params.p, float(m), n=grid.n | 1, order=params.order,
                             tol=cfg.solver.tol, seeds=_seeds(cfg))
        j1 = ref.energy
    rows, states = [], []
    center = params.centers[0] if params.centers else (0.0, 0.0, 0.0)
    for k in range(samples):
        seed = cfg.seed + k
        mixed = random_orthonormal_set(m, grid, seed, params.occupations(), center=center)
        pure = random_orthonormal_set(m, grid, seed, center=center)
        states.append(mixed)
        for eps in epsilons:
            rows.append((f"hardy(eps={eps!r})", seed,
                         check_hardy(mixed.orbitals[0], eps, center, params.s)))
        rows.append(("lieb_thirring", seed, check_lieb_thirring(mixed, c_lt)))
        rows.append(("hoffmann_ostenhof", seed, check_hoffmann_ostenhof(mixed)))
        rows.append(("gns", seed, check_gns(pure, j1, params.p, params.order)))
    summary = {"operation": "check", "j1inf": j1, "c_lt": c_lt,
               "empirical_lt_constant": empirical_lt_constant(states),
               "min_margin": {}}
    for name in sorted({r[0] for r in rows}):
        summary["min_margin"][name] = min(r[2] for r in rows if r[0] == name)
    if ref is not None:
        rows.append(("gns_at_free_minimiser", -1, check_gns(ref.report.state, j1, params.p,
                                                             params.order)))
        summary["gns_at_free_minimiser"] = rows[-1][2]
    _write(outdir, manifest, "check.csv", CHECK_COLUMNS, rows)
    manifest.summaries.append(summary)
    return EXIT_OK


def cmd_verify(outdir, quiet: bool = False) -> int:
    """Recompute energies from the field dumps of a run directory."""
    manifest = RunManifest.read(outdir)
    bad = manifest.checksum_mismatches(outdir)
    if bad:
        print(f"checksum mismatch: {', '.join(bad)}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = config_from_dict(manifest.config)
    header, rows = read_csv(Path(outdir) / "energies.csv")
    col = header.index("total")
    ok = True
    checked = 0
    for summary, row in zip((s for s in manifest.summaries if "orbitals" in s), rows):
        state = read_orbitals(outdir, summary["orbitals"], summary["occupations"])
        params = replace(cfg.params, lam=float(sum(summary["occupations"])))
        e = evaluate_energy(state, params).total
        ref = float(row[col])
        err = abs(e - ref) / max(abs(ref), 1e-300)
        ok = ok and err <= VERIFY_RTOL
        checked += 1
        if not quiet:
            print(f"{summary['operation']}: recomputed {e!r} recorded {ref!r} rel.err {err:.2e}")
    if checked == 0:
        print("no field dumps to verify", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_CONFIG


COMMANDS = {
    "solve": cmd_solve,
    "solve-free": cmd_solve_free,
    "spectrum": cmd_spectrum,
    "sweep-alpha": cmd_sweep,
    "curve": cmd_curve,
    "binding": cmd_binding,
    "check": cmd_check,
}


def _thread_count(flag, cfg: RunConfig | None) -> int | None:
    if flag is not None:
        return flag
    if cfg is not None and cfg.solver.threads is not None:
        return cfg.solver.threads
    env = os.environ.get("FNLS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"FNLS_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"FNLS_THREADS must be a positive integer, got {env!r}")
        return n
    return None


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fnls", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fnls {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS) + ["verify"])
    ap.add_argument("--config", type=Path, help="JSON configuration (not needed for verify)")
    ap.add_argument("--out", type=Path, required=True, help="run directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    ap.add_argument("--quiet", action="store_true", help="only warnings and errors")
    return ap


def run(command: str, config, outdir, seed=None, threads=None, quiet: bool = False) -> int:
    """Execute one subcommand; returns the process exit code."""
    outdir = Path(outdir)
    if command == "verify":
        try:
            return cmd_verify(outdir, quiet)
        except (OSError, FNLSError, ValueError) as exc:
            print(f"fnls: verify failed: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if command not in COMMANDS:
        print(f"fnls: unknown command {command!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if config is None:
            raise ParseError("--config is required")
        if seed is not None and seed < 0:
            raise ValidationError("--seed must be a nonnegative integer")
        if threads is not None and threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = parse_config(config, seed)
        nthreads = _thread_count(threads, cfg)
        outdir.mkdir(parents=True, exist_ok=True)
    except (ParseError, ValidationError, DomainError) as exc:
        print(f"fnls: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fnls: cannot create {outdir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = RunManifest(command=command, config=cfg.echo(), seed=cfg.seed, started=utc_now())
    try:
        with _thread_limit(nthreads):
            code = COMMANDS[command](cfg, outdir, manifest)
    except (ValidationError, DomainError, ParseError) as exc:
        print(f"fnls: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
        manifest.summaries.append({"operation": command, "error": str(exc)})
    except SolverError as exc:
        print(f"fnls: solver did not converge: {exc}", file=sys.stderr)
        code = EXIT_NOCONV
        manifest.summaries.append({"operation": command, "error": str(exc)})
    manifest.finished = utc_now()
    manifest.exit_code = code
    manifest.write(outdir)
    if not quiet:
        for s in manifest.summaries:
            brief = {k: v for k, v in s.items() if not isinstance(v, (list, dict))}
            print(" ".join(f"{k}={_fmt(v)}" for k, v in brief.items()))
    return code


def _fmt(v) -> str:
    if isinstance(v, float) and math.isfinite(v):
        return f"{v:.10g}"
    return str(v)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.seed, args.threads, args.quiet)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
