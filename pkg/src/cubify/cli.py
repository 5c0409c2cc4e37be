"""Batch command line: stylize an OBJ, write OBJ + report + trace + figures.

    cubify input.obj -o out.obj --lambda 0.2
    cubify input.obj -o out.obj --lambda 0.3 --coarse-faces 20000
    cubify input.obj -o out.obj --controls style.json --constraints pins.json

Exit codes: 0 converged, 2 stopped at the iteration cap, 1 input error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .mesh import MeshError, cubeness_score, load_obj, save_obj, validate
from .progressive import fast_stylize
from .report import RunReport, save_convergence_figure, write_trace_csv
from .solver import (
    Constraints, CubicStylizer, StylizeParams, apply_orientation,
    rotation_about_axis, stylize,
)
from .style import StyleControls


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cubify",
        description="Deform a triangle mesh toward a cubic (or polyhedral) style.",
    )
    p.add_argument("input", help="input OBJ path")
    p.add_argument("-o", "--output", help="output OBJ path (default <input>.cubified.obj)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.2,
                   help="cubeness weight (default 0.2)")
    p.add_argument("--coarse-faces", type=int, default=None, metavar="M",
                   help="solve on an M-face decimation and reinflate (cached)")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--stop-tol", type=float, default=3e-3,
                   help="relative per-vertex displacement stop (default 3e-3)")
    p.add_argument("--eps-abs", type=float, default=1e-5,
                   help="ADMM absolute tolerance; raise for very large lambda")
    p.add_argument("--rotate", metavar='"AXIS ANGLE"', default=None,
                   help="pre-rotate the l1 axes, e.g. \"z 45\" (degrees)")
    p.add_argument("--controls", metavar="FILE.json", default=None,
                   help="style controls sidecar (per-vertex/axis lambda, frames, B)")
    p.add_argument("--constraints", metavar="FILE.json", default=None,
                   help="fixed/point/plane constraints")
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--seed", type=int, default=0,
                   help="seed for any sampled diagnostics")
    p.add_argument("--no-plot", action="store_true",
                   help="skip the convergence figure")
    p.add_argument("--quiet", action="store_true")
    return p


def _fail(msg: str) -> int:
    print(f"cubify: error: {msg}", file=sys.stderr)
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.lam < 0:
        return _fail(f"lambda must be nonnegative, got {args.lam}")

    in_path = Path(args.input)
    try:
        mesh = load_obj(in_path.read_bytes())
    except OSError as e:
        return _fail(f"cannot read {in_path}: {e}")
    except MeshError as e:
        return _fail(f"bad OBJ: {e}")

    report = validate(mesh)
    if not report.ok:
        return _fail(
            f"mesh failed validation: {len(report.nonmanifold_edges)} non-manifold "
            f"edges, {len(report.nonmanifold_vertices)} non-manifold vertices, "
            f"{len(report.degenerate_faces)} degenerate faces"
        )

    constraints = None
    if args.constraints:
        try:
            constraints = Constraints.from_dict(json.loads(Path(args.constraints).read_text()))
        except (OSError, ValueError, KeyError) as e:
            return _fail(f"bad constraints file: {e}")
    controls = None
    if args.controls:
        try:
            controls = StyleControls.from_dict(json.loads(Path(args.controls).read_text()))
        except (OSError, ValueError, KeyError) as e:
            return _fail(f"bad controls file: {e}")

    rotation = None
    if args.rotate:
        try:
            axis, angle = args.rotate.split()
            rotation = rotation_about_axis(axis, float(angle))
        except (ValueError, KeyError) as e:
            return _fail(f"bad --rotate (expected \"axis degrees\"): {e}")

    params = StylizeParams(
        lam=args.lam, eps_abs=args.eps_abs, stop_tol=args.stop_tol,
        max_outer=args.max_iters, threads=args.threads,
    )

    solve_mesh = mesh if rotation is None else apply_orientation(mesh, rotation)
    cubeness_before = cubeness_score(mesh)

    pre_seconds = 0.0
    if args.coarse_faces is not None:
        if args.coarse_faces >= mesh.n_faces:
            return _fail(
                f"--coarse-faces {args.coarse_faces} is not below the face "
                f"count {mesh.n_faces}")
        cache = in_path.with_name(in_path.name + f".{args.coarse_faces}.pmcache")
        try:
            fast = fast_stylize(solve_mesh, params, constraints, controls,
                                args.coarse_faces, cache_path=str(cache))
        except (ValueError, MeshError) as e:
            return _fail(str(e))
        result = fast.coarse
        positions = fast.positions
        pre_seconds = fast.pre_seconds
        online_seconds = fast.online_seconds
        coarse_faces: int | str = args.coarse_faces
    else:
        t0 = time.perf_counter()
        try:
            result = stylize(solve_mesh, params, constraints, controls)
        except (ValueError, MeshError) as e:
            return _fail(str(e))
        positions = result.positions
        online_seconds = time.perf_counter() - t0
        coarse_faces = "full"

    if rotation is not None:
        positions = positions @ rotation  # inverse of the pre-rotation

    out_path = Path(args.output) if args.output else in_path.with_suffix(".cubified.obj")
    out_path.write_bytes(save_obj(mesh, positions_override=positions))

    run_report = RunReport(
        input=str(in_path), n_vertices=mesh.n_vertices, n_faces=mesh.n_faces,
        lam=args.lam, coarse_faces=coarse_faces,
        iterations=result.iterations, converged=result.converged,
        pre_seconds=pre_seconds, online_seconds=online_seconds,
        final_rel_displacement=result.final_rel_displacement,
        final_energy=result.energy,
        cubeness_before=cubeness_before,
        cubeness_after=cubeness_score(mesh, positions),
    )
    report_path = out_path.with_name(out_path.name.removesuffix(".obj") + ".report.json")
    report_path.write_text(run_report.to_json() + "\n")
    trace_path = out_path.with_name(out_path.name.removesuffix(".obj") + ".trace.csv")
    write_trace_csv(result.trace, str(trace_path))
    if not args.no_plot:
        fig_path = out_path.with_name(out_path.name.removesuffix(".obj") + ".convergence.png")
        save_convergence_figure(result.trace, str(fig_path), stop_tol=args.stop_tol,
                                title=f"{in_path.name}  lambda={args.lam}  m={coarse_faces}")

    if not args.quiet:
        status = "converged" if result.converged else "stopped at iteration cap"
        print(
            f"{in_path.name}: |V|={mesh.n_vertices} |F|={mesh.n_faces} "
            f"lambda={args.lam} m={coarse_faces} -> {out_path.name} "
            f"({result.iterations} iterations, {status}, "
            f"pre {pre_seconds:.2f}s + online {online_seconds:.2f}s, "
            f"cubeness {run_report.cubeness_before:.3f} -> {run_report.cubeness_after:.3f})"
        )
    return 0 if result.converged else 2


if __name__ == "__main__":
    raise SystemExit(main())
