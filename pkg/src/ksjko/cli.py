"""Command-line entry point: ``ksjko run | validate | thresholds | chi-star | dist``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import scheme as S
from .config import ConfigError, load, thresholds_json
from .fields import DensityField, read_snapshot, write_snapshot
from .metrics import MassMismatch, fr_distance, w2_1d, w2_entropic, wfr_chains
from .potentials import ReactionSpec, compute_thresholds

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_THRESHOLD, EXIT_SOLVER, EXIT_BLOWUP = 0, 1, 2, 3, 4, 5


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest(out: Path, cfg_hash: str, status: str, report, wall: float, steps: int, message: str = ""):
    payload = {"config_sha256": cfg_hash, "status": status, "steps_completed": steps,
               "wall_time_s": round(wall, 3), "message": message,
               "thresholds": json.loads(report.to_json()) if report is not None else None}
    _atomic_write(out / "manifest.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load(args.config)
        scfg = cfg.scheme()
        rho0 = cfg.initial()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg["output"]["dir"])
    if not out.is_absolute() and args.out is None:
        out = cfg.base_dir / out
    formats = cfg["output"]["formats"]
    every = cfg["output"]["save_every"]
    digest = cfg.sha256()
    report = S.thresholds_for(rho0, scfg)
    if scfg.enforce_thresholds:
        try:
            S.check_step_size(rho0, scfg, report)
        except S.ThresholdViolation as exc:
            print(f"threshold violation: {exc}", file=sys.stderr)
            _manifest(out, digest, "threshold_violation", report, time.perf_counter() - t0, 0, str(exc))
            return EXIT_THRESHOLD

    def save(traj):
        n = len(traj.full_steps) - 1
        if "csv" in formats and every and n % every == 0:
            _atomic_write(out / "snapshots" / f"rho_{n:06d}.csv", write_snapshot(traj.full_steps[-1]))

    out.mkdir(parents=True, exist_ok=True)
    if "csv" in formats and every:
        _atomic_write(out / "snapshots" / "rho_000000.csv", write_snapshot(rho0))
    try:
        traj = S.run(rho0, scfg, on_step=save)
    except S.SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _manifest(out, digest, "solver_failure", report, time.perf_counter() - t0, exc.step - 1, str(exc))
        return EXIT_SOLVER
    _atomic_write(out / "diagnostics.csv", S.diagnostics_csv(traj))
    if "json" in formats:
        _atomic_write(out / "thresholds.json", thresholds_json(traj.report, scfg.reaction, rho0.linf, indent=2) + "\n")
    steps = len(traj.full_steps) - 1
    _manifest(out, digest, traj.status, traj.report, time.perf_counter() - t0, steps)
    if traj.status == "blowup_sentinel":
        print(f"blow-up sentinel reached after {steps} steps", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"completed {steps} steps; output in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import format_table, run_suite

    rows = run_suite(args.suite, jobs=args.jobs)
    print(format_table(rows))
    failed = [r for r in rows if not r.passed]
    if failed:
        print("failed: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_thresholds(args) -> int:
    try:
        F = ReactionSpec(args.alpha, args.beta, args.r)
        if not args.rho0_linf > 0:
            raise ValueError("rho0-linf must be positive")
        if not args.lam > 1:
            raise ValueError("lambda must exceed 1")
        rep = compute_thresholds(F, args.rho0_linf, args.chi, args.lam, omega=args.omega, dim=args.dim)
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.json:
        print(thresholds_json(rep, F, args.rho0_linf, sort_keys=True))
        return EXIT_OK
    rows = [("chi_star", rep.chi_star), ("case", rep.chi_star_case), ("M_star", rep.M_star),
            ("eta", rep.eta_Mstar), ("xi", rep.xi), ("c0", rep.c0), ("tau_star", rep.tau_star),
            ("tau_hat", rep.tau_hat), ("tau_tilde", rep.tau_tilde), ("tau_double_star", rep.tau_double_star),
            ("C1", rep.C1)]
    for k, v in rows:
        print(f"{k:<16} {v:.10g}" if isinstance(v, float) else f"{k:<16} {v}")
    return EXIT_OK


def cmd_dist(args) -> int:
    try:
        a, b = read_snapshot(args.a), read_snapshot(args.b)
        b = DensityField(a.grid, b.values) if a.grid.cells == b.grid.cells else b
        if args.metric == "w2":
            val = w2_1d(a, b).distance if a.grid.dim == 1 else w2_entropic(a, b, args.eps)
        elif args.metric == "fr":
            val = fr_distance(a, b)
        else:
            val = min(wfr_chains(a, b, args.eps).values())
    except (OSError, ValueError, MassMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{val:.17g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ksjko", description="Keller-Segel splitting solver and validator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the splitting scheme from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="run a property suite")
    v.add_argument("--suite", required=True, choices=("lemmas", "metrics", "convergence"))
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_validate)

    for name in ("thresholds", "chi-star"):
        t = sub.add_parser(name, help="print the threshold report")
        t.add_argument("--alpha", type=float, required=True)
        t.add_argument("--beta", type=float, required=True)
        t.add_argument("--r", type=float, required=True)
        t.add_argument("--rho0-linf", type=float, required=True)
        t.add_argument("--chi", type=float, default=0.0)
        t.add_argument("--lambda", dest="lam", type=float, default=1.01)
        t.add_argument("--omega", type=float, default=1.0, help="domain measure")
        t.add_argument("--dim", type=int, default=1)
        t.add_argument("--json", action="store_true")
        t.set_defaults(func=cmd_thresholds)

    d = sub.add_parser("dist", help="distance between two snapshot CSVs")
    d.add_argument("--a", required=True, help="first snapshot CSV")
    d.add_argument("--b", required=True, help="second snapshot CSV")
    d.add_argument("--metric", choices=("w2", "fr", "wfr-ub"), default="w2")
    d.add_argument("--eps", type=float, default=1e-3, help="entropic regularisation for 2D")
    d.set_defaults(func=cmd_dist)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
