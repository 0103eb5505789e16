"""Command-line entry point.

Exit codes: 0 success, 1 a mathematical negative result (instability, a
nonpositive profile, a collapsed path), 2 a software error, 64 a usage error.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FutakiNonzero, StepCollapse, ToricBFieldError

EXIT_OK, EXIT_FINDING, EXIT_ERROR, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _dump(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _field_rows(nodes, **cols):
    names = list(cols)
    header = [f"y{i + 1}" for i in range(nodes.shape[1])] + names
    rows = [list(nodes[a]) + [float(cols[c][a]) for c in names] for a in range(len(nodes))]
    return header, rows


# ------------------------------------------------------------------ config

_KEYS = ("polytope", "omega", "B", "gamma", "eps", "delta", "grid", "tol", "dim", "level",
         "x1", "x2", "coupled", "samples", "seed")


def config_from_args(args) -> dict:
    cfg = {"command": args.command}
    for k in _KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def args_from_config(cfg: dict) -> list[str]:
    argv = [cfg["command"]]
    for k in _KEYS:
        if k not in cfg:
            continue
        v = cfg[k]
        flag = f"--{k}"
        if isinstance(v, bool):
            if v:
                argv.append(flag)
        else:
            argv += [flag, str(v)]
    return argv


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _polytope(args):
    from .polytope import polytope_from_json

    if not args.polytope:
        raise UsageError("--polytope is required")
    P = polytope_from_json(_load_json(args.polytope))
    if getattr(args, "dim", None) is not None and P.n != args.dim:
        raise UsageError(f"polytope dimension {P.n} does not match --dim {args.dim}")
    return P


def _support(P, path, default=None):
    if path is None:
        if default is None:
            raise UsageError("a class file is required")
        return np.asarray(default, float)
    doc = _load_json(path)
    if isinstance(doc, dict):
        doc = doc.get("support", doc.get("offsets"))
    return np.asarray(doc, float)


# ------------------------------------------------------------------ commands

def cmd_angle(args, out: Path):
    from .toric_classes import ToricClass, invariants_bundle

    P = _polytope(args)
    w = ToricClass(P, _support(P, args.omega, -P.offsets))
    B = ToricClass(P, _support(P, args.B))
    data = invariants_bundle(w, B, args.gamma or 0.0)
    return {"angle": data.to_json()}, EXIT_OK


def cmd_stability(args, out: Path):
    from .kstability import lambda_estimate
    from .toric_classes import ToricClass, average_scalar

    P = _polytope(args)
    A0 = 4.0 * average_scalar(ToricClass.of_polytope(P))
    level = args.level or 3
    A = A0
    grid = None
    if args.gamma:
        grid, A = _coupled_A(args, P)
    try:
        rep = lambda_estimate(P, A, level, grid=grid, renormalize=grid is not None)
    except FutakiNonzero as exc:
        return {"lambda": None, "futaki": exc.futaki, "feasible": False}, EXIT_FINDING
    doc = {"lambda": rep.lambda_estimate, "futaki": rep.futaki_affine,
           "destabilizer": rep.destabilizer(), "feasible": True}
    return doc, EXIT_OK if rep.lambda_estimate > 0 else EXIT_FINDING


def _coupled_A(args, P):
    from .dhym import perturbative_dhym_solve
    from .grid import BoxGrid
    from .kstability import A_function
    from .potentials import guillemin_potential, metric_grid
    from .toric_classes import ToricClass, invariants_bundle

    g = BoxGrid(P, args.grid or 32)
    u = guillemin_potential(P, g)
    w = -P.offsets
    eta = _support(P, args.B, np.zeros(P.n_facets))
    eps, delta = args.eps or 0.05, args.delta or 0.1
    sol = perturbative_dhym_solve(u, w, eta, eps, delta, tol=args.tol or 1e-10)
    angle = invariants_bundle(ToricClass(P, w), ToricClass(P, eps * (w + delta * eta)), args.gamma)
    return g, A_function(metric_grid(u), sol.E, args.gamma, angle).A


def cmd_abreu(args, out: Path):
    from .grid import BoxGrid
    from .potentials import abreu_operator, guillemin_potential

    P = _polytope(args)
    g = BoxGrid(P, args.grid or 64)
    A = abreu_operator(guillemin_potential(P, g))
    _write_csv(out / "fields" / "abreu.csv", *_field_rows(g.nodes, abreu=A))
    return {"mean": float(np.mean(A)), "std": float(np.std(A)), "min": float(A.min()),
            "max": float(A.max())}, EXIT_OK


def cmd_dhym(args, out: Path):
    from .dhym import perturbative_dhym_solve
    from .grid import BoxGrid
    from .potentials import elementary_symmetric, guillemin_potential

    P = _polytope(args)
    g = BoxGrid(P, args.grid or 32)
    u = guillemin_potential(P, g)
    w = _support(P, args.omega, -P.offsets)
    eta = _support(P, args.B)
    sol = perturbative_dhym_solve(u, w, eta, args.eps or 0.05, args.delta or 0.1,
                                  tol=args.tol or 1e-10)
    e = elementary_symmetric(sol.E)
    cols = {f"e{k + 1}": e[:, k] for k in range(e.shape[1])}
    _write_csv(out / "fields" / "dhym.csv", *_field_rows(g.nodes, **cols))
    return {"theta_hat": sol.theta_hat, "residual": sol.residual, "iterations": sol.iterations,
            "rho": sol.rho, "seed_distance": sol.seed_distance, "eps": sol.eps}, EXIT_OK


def cmd_continuity(args, out: Path):
    from .continuity import PathConfig, run_path

    P = _polytope(args)
    eta = _support(P, args.B)
    cfg = PathConfig(P, eta, gamma_abs=args.gamma if args.gamma is not None else 1.0,
                     eps=args.eps or 0.05, delta=args.delta if args.delta is not None else 0.1,
                     grid=args.grid or 64, tol=args.tol or 1e-9,
                     omega=None if args.omega is None else _support(P, args.omega))
    out.mkdir(parents=True, exist_ok=True)
    traj = open(out / "trajectory.jsonl", "w")

    def emit(st):
        traj.write(json.dumps(_plain(st.summary()), sort_keys=True) + "\n")

    try:
        res = run_path(cfg, on_state=emit)
    except StepCollapse as exc:
        traj.close()
        return {"completed": False, "t_reached": exc.t_reached, "margin": exc.margin,
                "message": str(exc)}, EXIT_FINDING
    traj.close()
    final = res.final
    from .grid import BoxGrid
    g = BoxGrid(P, cfg.grid)
    _write_csv(out / "fields" / "final.csv", *_field_rows(g.nodes, phi=final.phi, f=final.f))
    return {"completed": True, "config": cfg.to_json(), "final": final.summary(),
            "lambda_estimate": res.lambda_estimate, "gamma_max": res.gamma_max,
            "angle": res.angle.to_json()}, EXIT_OK


def cmd_calabi(args, out: Path):
    from .calabi import perturbed_profile, solve_profile

    x1 = 0.5 if args.x1 is None else args.x1
    x2 = -0.75 if args.x2 is None else args.x2
    alpha = 1.0 if args.coupled else 0.0
    prof = solve_profile(x1, x2, alpha)
    x2e = ""
    if args.coupled and args.eps:
        x2e = perturbed_profile(prof, args.eps).x2
    _write_csv(out / "calabi.csv", ["x1", "x2", "alpha", "kappa1", "kappa2", "positive", "x2_eps"],
               [[x1, x2, alpha, prof.kappa1, prof.kappa2, prof.positive, x2e]])
    _write_csv(out / "fields" / "profile.csv", ["tau", "phi"], zip(prof.tau, prof.phi))
    doc = {"x1": x1, "x2": x2, "alpha": alpha, "kappa1": prof.kappa1, "kappa2": prof.kappa2,
           "positive": prof.positive, "bc_residual": prof.bc_residual, "x2_eps": x2e}
    return doc, EXIT_OK if prof.positive else EXIT_FINDING


def cmd_bounds(args, out: Path):
    from .dhym import elementary_from_eigenvalues, sample_dhym_triples

    count = args.samples or 100000
    lam, T = sample_dhym_triples(count, seed=args.seed or 0)
    e = elementary_from_eigenvalues(lam)
    q = e[:, 0] - e[:, 2]
    bad = int(np.sum((q < 0) | (q >= T)))
    return {"samples": count, "violations": bad, "min_margin": float(np.min(T - q))}, \
        EXIT_OK if bad == 0 else EXIT_FINDING


def cmd_futaki(args, out: Path):
    from .dhym import perturbative_dhym_solve
    from .grid import BoxGrid
    from .kstability import futaki_bfield
    from .potentials import guillemin_potential, metric_grid
    from .toric_classes import ToricClass, invariants_bundle

    P = _polytope(args)
    g = BoxGrid(P, args.grid or 32)
    u = guillemin_potential(P, g)
    w = -P.offsets
    eta = _support(P, args.B, np.zeros(P.n_facets))
    eps, delta = args.eps or 0.05, args.delta or 0.1
    sol = perturbative_dhym_solve(u, w, eta, eps, delta)
    gamma = args.gamma or 0.0
    angle = invariants_bundle(ToricClass(P, w), ToricClass(P, eps * (w + delta * eta)), gamma)
    F = futaki_bfield(metric_grid(u), sol.E, gamma, angle)
    tol = args.tol or 1e-9
    return {"futaki": F}, EXIT_OK if np.max(np.abs(F)) <= tol else EXIT_FINDING


COMMANDS = {
    "angle": cmd_angle, "stability": cmd_stability, "abreu": cmd_abreu, "dhym": cmd_dhym,
    "continuity": cmd_continuity, "calabi": cmd_calabi, "bounds": cmd_bounds, "futaki": cmd_futaki,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toric-bfield", description="cscK with B-field toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--polytope")
        s.add_argument("--omega")
        s.add_argument("--B")
        s.add_argument("--gamma", type=float)
        s.add_argument("--eps", type=float)
        s.add_argument("--delta", type=float)
        s.add_argument("--grid", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--dim", type=int)
        s.add_argument("--level", type=int)
        s.add_argument("--x1", type=float)
        s.add_argument("--x2", type=float)
        s.add_argument("--coupled", action="store_true", default=None)
        s.add_argument("--samples", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", default="out")
        s.add_argument("--sweep")
    return p


def _run_one(args, out: Path) -> int:
    cfg = config_from_args(args)
    doc, code = COMMANDS[args.command](args, out)
    manifest = {"command": args.command, "config": cfg, "config_hash": config_hash(cfg),
                "version": __version__, "tol": getattr(args, "tol", None), "out": str(out)}
    out.mkdir(parents=True, exist_ok=True)
    text = _dump({"manifest": manifest, "result": doc})
    (out / "report.json").write_text(text + "\n")
    print(text)
    return code


def _sweep(args, parser) -> int:
    points = _load_json(args.sweep)
    base = config_from_args(args)
    workers = max(1, int(os.environ.get("TORIC_BFIELD_THREADS", os.cpu_count() or 1)))
    root = Path(args.out)

    def job(i, over):
        cfg = dict(base, **over)
        sub_args = parser.parse_args(args_from_config(cfg) + ["--out", str(root / f"point{i:04d}")])
        try:
            return _run_one(sub_args, Path(sub_args.out))
        except ToricBFieldError:
            return EXIT_ERROR

    with cf.ThreadPoolExecutor(max_workers=workers) as pool:
        codes = list(pool.map(lambda a: job(*a), enumerate(points)))
    if any(c == EXIT_ERROR for c in codes):
        return EXIT_ERROR
    return EXIT_FINDING if any(c == EXIT_FINDING for c in codes) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        if args.sweep:
            return _sweep(args, parser)
        return _run_one(args, Path(args.out))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToricBFieldError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
