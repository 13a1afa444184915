"""Command-line interface: mesh generation, eigenvalue problems and convergence runs.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DECError
from .meshgen import Mesh, grid_mesh, random_mesh
from .problems import ProblemSpec, convergence_study, count_inversions, export_fields, solve

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3
SEED_ENV = "HERMDEC_SEED"

KIND_ALIASES = {
    "membrane": None,       # resolved by --bc
    "cavity": None,         # resolved by --field
    "membrane-dirichlet": "membrane-dirichlet",
    "membrane-neumann": "membrane-neumann",
    "cavity-E": "cavity-E",
    "cavity-H": "cavity-H",
    "qho": "qho",
    "dirac-kahler": "dirac-kahler",
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing helpers


def parse_shape(text: str) -> tuple:
    try:
        shape = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 20x20, got {text!r}") from None
    if not shape or min(shape) < 1:
        raise argparse.ArgumentTypeError("shape entries must be positive")
    return shape


def _number(token: str) -> float:
    token = token.strip().lower()
    sign = -1.0 if token.startswith("-") else 1.0
    token = token.lstrip("+-")
    if "pi" in token:
        coef = token.replace("*", "").replace("pi", "")
        if "/" in coef:
            num, den = coef.split("/", 1)
            return sign * (float(num) if num else 1.0) * math.pi / float(den)
        return sign * (float(coef) if coef else 1.0) * math.pi
    return sign * float(token)


def parse_box(text: str):
    """``lo,hi,lo,hi,...`` with ``pi`` accepted (``pi``, ``2pi``, ``-pi``, ``pi/2``)."""
    try:
        vals = [_number(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse box {text!r}") from None
    if len(vals) % 2 or not vals:
        raise argparse.ArgumentTypeError("box needs an even number of bounds")
    return tuple((vals[i], vals[i + 1]) for i in range(0, len(vals), 2))


def parse_int_list(text: str):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw else 0


def _periodic_axes(axes, dimension: int):
    # command-line axes are 1-based
    out = []
    for a in axes or ():
        if not 1 <= a <= dimension:
            raise UsageError(f"periodic axis {a} outside 1..{dimension}")
        out.append(a - 1)
    return tuple(out)


def _box_for(args, dimension: int, default):
    box = args.box if args.box is not None else default
    if len(box) != dimension:
        raise UsageError(f"box has {len(box)} axes but the mesh is {dimension}-dimensional")
    return box


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hermdec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate a mesh file")
    mesh_sub = mesh.add_subparsers(dest="mesh_kind", required=True)
    grid = mesh_sub.add_parser("grid", help="structured simplicial grid")
    grid.add_argument("--shape", type=parse_shape, required=True)
    grid.add_argument("--box", type=parse_box)
    grid.add_argument("--style", choices=("symmetric", "asymmetric"), default="symmetric")
    grid.add_argument("--periodic", type=parse_int_list, help="1-based axes to wrap, e.g. 1,2")
    grid.add_argument("--output", "-o", default="mesh.json")
    rand = mesh_sub.add_parser("random", help="2-D random Delaunay mesh")
    rand.add_argument("--points", type=int, required=True)
    rand.add_argument("--seed", type=int, default=_default_seed())
    rand.add_argument("--box", type=parse_box)
    rand.add_argument("--periodic", type=parse_int_list)
    rand.add_argument("--output", "-o", default="mesh.json")

    solve_p = sub.add_parser("solve", help="solve an eigenvalue problem")
    solve_p.add_argument("kind", choices=sorted(KIND_ALIASES))
    solve_p.add_argument("--bc", choices=("dirichlet", "neumann"), default="dirichlet",
                         help="membrane boundary condition")
    solve_p.add_argument("--field", choices=("E", "H"), default="E", help="cavity field")
    source = solve_p.add_mutually_exclusive_group()
    source.add_argument("--mesh", help="mesh JSON file")
    source.add_argument("--shape", type=parse_shape)
    source.add_argument("--points", type=int, help="random mesh with this many points")
    solve_p.add_argument("--style", choices=("symmetric", "asymmetric"))
    solve_p.add_argument("--box", type=parse_box)
    solve_p.add_argument("--seed", type=int, default=_default_seed())
    _solver_flags(solve_p)
    solve_p.add_argument("--subdivision", type=int, default=4, help="de Rham sampling density")
    solve_p.add_argument("--output", "-o", help="CSV, or JSON with metadata when ending in .json")
    solve_p.add_argument("--export-fields", help="write sharpened eigenvectors to this JSON file")

    conv = sub.add_parser("convergence", help="mean error on random meshes of growing size")
    conv.add_argument("--points", type=parse_int_list, default=[100, 200, 400, 800])
    conv.add_argument("--repeats", type=int, default=5)
    conv.add_argument("--seed", type=int, default=_default_seed())
    conv.add_argument("--box", type=parse_box)
    _solver_flags(conv)
    conv.add_argument("--output", "-o")
    return parser


def _solver_flags(p):
    p.add_argument("--k", type=int, default=10, help="number of eigenvalues")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--epsilon", type=float, help="metric regularization (default relative 1e-6)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


# --------------------------------------------------------------------------
# commands


def _emit(text: str, path):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_mesh(args) -> int:
    if args.mesh_kind == "grid":
        n = len(args.shape)
        box = _box_for(args, n, ((0.0, 1.0),) * n)
        mesh = grid_mesh(args.shape, box, style=args.style,
                         periodic_axes=_periodic_axes(args.periodic, n))
    else:
        if args.points < 1:
            raise UsageError("--points must be positive")
        box = _box_for(args, 2, ((0.0, 1.0),) * 2)
        verts, tris, stitches = random_mesh(args.points, box, _periodic_axes(args.periodic, 2), args.seed)
        mesh = Mesh(verts, tris, stitches)
    mesh.write(args.output)
    counts = mesh.complex().counts
    print(f"wrote {args.output}: {len(mesh.vertices)} vertices, {len(mesh.simplices)} simplices, "
          f"skeleton sizes {counts}")
    return EXIT_OK


def _resolve_kind(args) -> str:
    if args.kind == "membrane":
        return f"membrane-{args.bc}"
    if args.kind == "cavity":
        return f"cavity-{args.field}"
    return KIND_ALIASES[args.kind]


def cmd_solve(args) -> int:
    kind = _resolve_kind(args)
    mesh = Mesh.read(args.mesh) if args.mesh else None
    if args.subdivision < 1:
        raise UsageError("--subdivision must be positive")
    if args.k < 1:
        raise UsageError("--k must be positive")
    spec = ProblemSpec(
        kind,
        shape=args.shape or ((20,) * 2),
        box=args.box,
        style=args.style,
        points=args.points,
        seed=args.seed,
        mesh=mesh,
        k=args.k,
        epsilon=args.epsilon,
        tol=args.tol,
        subdivision=args.subdivision,
    )
    table = solve(spec)
    text = table.to_json() + "\n" if args.output and args.output.endswith(".json") else table.to_csv()
    _emit(text, args.output)
    if args.output:
        print(table)
    if args.export_fields:
        Path(args.export_fields).write_text(json.dumps(export_fields(table)), encoding="utf-8")
    if table.metadata.get("partial"):
        print(f"only {len(table.numerical)} of {spec.k} eigenvalues converged", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_convergence(args) -> int:
    if args.repeats < 1 or not args.points or min(args.points) < 1:
        raise UsageError("--points and --repeats must be positive")
    if args.points != sorted(args.points):
        raise UsageError("--points must be ascending")
    rows = convergence_study("membrane-dirichlet", args.points, args.repeats, args.seed,
                             k=args.k, tol=args.tol, threads=max(1, args.threads), box=args.box)
    lines = ["points,mean_percent_error"] + [f"{m},{e!r}" for m, e in rows]
    _emit("\n".join(lines) + "\n", args.output)
    errors = [e for _, e in rows]
    if len(errors) > 1:
        trend = "decreasing" if count_inversions(errors) == 0 else f"{count_inversions(errors)} inversion(s)"
        print(f"trend: {trend}; error ratio first/last {errors[0] / errors[-1]:.2f}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "convergence": cmd_convergence}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (DECError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
