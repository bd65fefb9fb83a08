"""Command-line pipeline: mesh, simulate, fit, reconstruct, report.

Every subcommand maps input files to output files. On failure a JSON
object ``{"error": ..., "message": ...}`` is written to stderr and the exit
code is nonzero (2 for invalid input, 1 for numerical failures).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from threadpoolctl import threadpool_limits

from .fem import CEMSolver, standard_patterns
from .linsolve import NoiseModel, write_trace_csv
from .mesh import (ElectrodePatch, MeshError, TetMesh, generate_box_mesh, generate_cylinder_mesh,
                   load_mesh, save_mesh, write_vtk)
from .phantom import case1_phantom, phantom_from_dict, phantom_to_dict, simulate_dataset
from .presets import DESK_RESOLUTION, desk_cylinder
from .reconstruct import ReconstructionConfig, ReconstructionError, fit_homogeneous, reconstruct
from .serialize import read_json, write_csv, write_json

PATTERN_CONVENTION = "e1-e(m+1)"
DATASET_FORMAT = "eit3d-dataset/1"


class InputError(ValueError):
    """Invalid or inconsistent input files or flags (exit code 2)."""


class RunConfig(BaseModel):
    """Reconstruction run configuration; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    mesh: Optional[str] = None
    data: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    threads: Optional[int] = Field(default=None, ge=1)
    edge: Literal["tv", "pm", "quadratic"] = "pm"
    T: Optional[float] = Field(default=None, gt=0)
    tau: float = Field(default=1.0, ge=1)
    max_outer: int = Field(default=20, ge=1)
    inner_max_iter: int = Field(default=200, ge=1)
    sigma_floor_fraction: float = Field(default=1e-3, gt=0)
    steps_per_linearization: int = Field(default=1, ge=1)
    keep_snapshots: bool = False
    allow_inverse_crime: bool = False

    def reconstruction_config(self) -> ReconstructionConfig:
        return ReconstructionConfig(edge=self.edge, T=self.T, tau=self.tau, max_outer=self.max_outer,
                                    inner_max_iter=self.inner_max_iter,
                                    sigma_floor_fraction=self.sigma_floor_fraction,
                                    steps_per_linearization=self.steps_per_linearization,
                                    seed=self.seed)


def load_run_config(path=None, **overrides) -> RunConfig:
    """Config file values, overridden by any non-None keyword."""
    data = {}
    if path is not None:
        try:
            data = read_json(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError(f"config {path} must contain a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise InputError(f"invalid run configuration: {problems}") from exc


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------
def dataset_to_dict(sim, mesh: TetMesh, phantom, z_mean, z_std, seed) -> dict:
    return {
        "format": DATASET_FORMAT,
        "M": mesh.num_electrodes,
        "pattern": PATTERN_CONVENTION,
        "gamma": sim.gamma,
        "seed": seed,
        "mesh_hash": mesh.content_hash(),
        "num_nodes": mesh.num_nodes,
        "z_mean": z_mean,
        "z_std": z_std,
        "z_true": sim.z_true,
        "phantom": phantom_to_dict(phantom),
        "V": sim.V,
        "noise_variance": None if sim.noise is None else sim.noise.variance,
        "U_exact": sim.U_exact,
    }


def load_dataset(path, require_noise=True) -> dict:
    try:
        data = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    required = {"M", "pattern", "V", "noise_variance", "mesh_hash", "num_nodes"}
    missing = required - set(data) if isinstance(data, dict) else required
    if missing:
        raise InputError(f"dataset {path} lacks {sorted(missing)}")
    if data["pattern"] != PATTERN_CONVENTION:
        raise InputError(f"dataset {path} uses pattern convention {data['pattern']!r}; "
                         f"only {PATTERN_CONVENTION!r} is supported")
    M = int(data["M"])
    if len(data["V"]) != M * (M - 1):
        raise InputError(f"dataset {path}: V has {len(data['V'])} entries, expected M(M-1) = {M * (M - 1)}")
    if require_noise and data["noise_variance"] is None:
        raise InputError(f"dataset {path} is noise-free and carries no covariance; "
                         "simulate with gamma > 0")
    return data


def check_pairing(mesh: TetMesh, data: dict, allow_inverse_crime: bool) -> None:
    """Reject electrode-count mismatches and same-mesh (inverse crime) pairs."""
    if mesh.num_electrodes != int(data["M"]):
        raise InputError(f"mesh has {mesh.num_electrodes} electrodes but the dataset has M = {data['M']}")
    if allow_inverse_crime:
        return
    if data["mesh_hash"] == mesh.content_hash():
        raise InputError("data were simulated on the inversion mesh itself (inverse crime); "
                         "pass --allow-inverse-crime to proceed anyway")
    if int(data["num_nodes"]) < 2 * mesh.num_nodes:
        raise InputError(f"simulation mesh has {data['num_nodes']} nodes, fewer than twice the "
                         f"{mesh.num_nodes} of the inversion mesh; pass --allow-inverse-crime to proceed")


def _parse_tuple(text, kind=float, n=None):
    try:
        vals = tuple(kind(v) for v in str(text).split(","))
    except ValueError as exc:
        raise InputError(f"cannot parse {text!r} as a comma-separated list") from exc
    if n is not None and len(vals) != n:
        raise InputError(f"expected {n} comma-separated values, got {text!r}")
    return vals


def _load_mesh(path) -> TetMesh:
    if path is None:
        raise InputError("--mesh is required")
    try:
        return load_mesh(path)
    except OSError as exc:
        raise InputError(f"cannot read mesh {path}: {exc}") from exc


def _out_dir(path) -> Path:
    if path is None:
        raise InputError("--out is required")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_mesh(args) -> dict:
    if args.out is None:
        raise InputError("--out is required")
    if args.preset:
        mesh = desk_cylinder(args.preset)
    elif args.shape == "cylinder":
        mesh = generate_cylinder_mesh(args.radius, args.height, _parse_tuple(args.resolution, int, 3),
                                      args.electrodes, _parse_tuple(args.electrode_size, float, 2),
                                      rings=args.rings)
    else:
        dims = _parse_tuple(args.dimensions, float, 3)
        faces = [f for f in args.faces.split(",") if f]
        patches = [ElectrodePatch.full_face(f, dims) for f in faces]
        mesh = generate_box_mesh(dims, _parse_tuple(args.resolution, int, 3), patches)
    save_mesh(mesh, args.out)
    if args.vtk:
        write_vtk(args.vtk, mesh)
    return {"mesh": str(args.out), "num_nodes": mesh.num_nodes, "num_tets": mesh.num_tets,
            "M": mesh.num_electrodes, "hash": mesh.content_hash()}


def cmd_simulate(args) -> dict:
    mesh = _load_mesh(args.mesh)
    if args.out is None:
        raise InputError("--out is required")
    if args.phantom:
        try:
            phantom = phantom_from_dict(read_json(args.phantom))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read phantom {args.phantom}: {exc}") from exc
    else:
        phantom = case1_phantom()
    seed = 0 if args.seed is None else args.seed
    with threadpool_limits(args.threads):
        sim = simulate_dataset(mesh, phantom, seed, args.gamma, args.z_mean, args.z_std)
    write_json(args.out, dataset_to_dict(sim, mesh, phantom, args.z_mean, args.z_std, seed))
    return {"data": str(args.out), "M": mesh.num_electrodes, "gamma": args.gamma, "seed": seed}


def cmd_fit(args) -> dict:
    mesh = _load_mesh(args.mesh)
    if args.data is None:
        raise InputError("--data is required")
    data = load_dataset(args.data, require_noise=False)
    check_pairing(mesh, data, allow_inverse_crime=True)
    # a homogeneous covariance does not move the minimiser, so exact data use the identity
    variance = data["noise_variance"]
    noise = NoiseModel(np.ones(len(data["V"])) if variance is None else np.asarray(variance, dtype=float))
    with threadpool_limits(args.threads):
        s0, z0 = fit_homogeneous(mesh, data["V"], noise)
        _, U = CEMSolver(mesh, np.full(mesh.num_nodes, s0), np.full(mesh.num_electrodes, z0)).solve(
            standard_patterns(mesh.num_electrodes))
    result = {"sigma0": s0, "z0": z0, "E": noise.residual(data["V"], U.reshape(-1)),
              "mesh_hash": mesh.content_hash()}
    if args.out is not None:
        write_json(args.out, result)
    return result


def cmd_reconstruct(args) -> dict:
    cfg = load_run_config(args.config, mesh=args.mesh, data=args.data, out=args.out, seed=args.seed,
                          threads=args.threads, tau=args.tau, edge=args.edge, T=args.T,
                          allow_inverse_crime=args.allow_inverse_crime or None,
                          keep_snapshots=args.keep_snapshots or None)
    mesh = _load_mesh(cfg.mesh)
    if cfg.data is None:
        raise InputError("--data is required")
    data = load_dataset(cfg.data)
    check_pairing(mesh, data, cfg.allow_inverse_crime)
    out = _out_dir(cfg.out)
    noise = NoiseModel(np.asarray(data["noise_variance"], dtype=float))

    with threadpool_limits(cfg.threads):
        result = reconstruct(mesh, np.asarray(data["V"], dtype=float), noise,
                             config=cfg.reconstruction_config(), keep_snapshots=cfg.keep_snapshots)
    diag = dict(result.diagnostics)
    diag["mesh_hash"] = mesh.content_hash()
    diag["data_mesh_hash"] = data["mesh_hash"]
    write_json(out / "diagnostics.json", diag)
    write_json(out / "timings.json", {"threads": cfg.threads, **result.timings})
    write_json(out / "result.json", {"mesh_hash": mesh.content_hash(), "sigma": result.sigma,
                                     "z": result.z})
    fields = {"sigma": result.sigma}
    for j, snap in enumerate(result.snapshots, start=1):
        fields[f"sigma_{j:02d}"] = snap
    write_vtk(out / "sigma.vtk", mesh, fields)
    write_csv(out / "residuals.csv", ["outer", "E"],
              [(j, float(e)) for j, e in enumerate(diag["E_history"])])
    write_trace_csv(out / "inner_traces.csv", diag["inner_traces"])
    return {"out": str(out), "terminated": diag["terminated"],
            "outer_iterations": diag["outer_iterations"], "E": diag["E_history"][-1],
            "target": diag["target"]}


def cmd_report(args) -> dict:
    run = Path(args.run)
    try:
        diag = read_json(run / "diagnostics.json")
        res = read_json(run / "result.json")
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read reconstruction output in {run}: {exc}") from exc
    mesh = _load_mesh(args.mesh)
    if res["mesh_hash"] != mesh.content_hash():
        raise InputError("the reconstruction was computed on a different mesh")
    out = _out_dir(args.out)
    sigma = np.asarray(res["sigma"], dtype=float)
    z_true = None
    if args.data is not None:
        z_true = load_dataset(args.data, require_noise=False).get("z_true")

    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    xs = np.linspace(lo[0], hi[0], args.grid)
    ys = np.linspace(lo[1], hi[1], args.grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    files = []
    for h in _parse_tuple(args.heights):
        pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, h)])
        vals = mesh.interpolate(sigma, pts)
        keep = np.isfinite(vals)
        name = f"cross_section_z{h:g}.csv"
        write_csv(out / name, ["x", "y", "sigma"],
                  [(float(x), float(y), float(v)) for (x, y, _), v in zip(pts[keep], vals[keep])])
        files.append(name)
    write_csv(out / "E_history.csv", ["outer", "E", "target"],
              [(j, float(e), float(diag["target"])) for j, e in enumerate(diag["E_history"])])
    write_trace_csv(out / "inner_traces.csv", diag["inner_traces"])
    z = res["z"]
    header = ["electrode", "z"] + (["z_true"] if z_true is not None else [])
    rows = [(m, float(z[m]), *([float(z_true[m])] if z_true is not None else []))
            for m in range(len(z))]
    write_csv(out / "contact_resistances.csv", header, rows)
    files += ["E_history.csv", "inner_traces.csv", "contact_resistances.csv"]
    write_json(out / "report.json", {"files": files, "terminated": diag["terminated"],
                                     "outer_iterations": diag["outer_iterations"],
                                     "inner_iterations": diag["inner_iterations"]})
    return {"out": str(out), "files": files}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eit3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *names):
        if "mesh" in names:
            p.add_argument("--mesh", help="mesh JSON file")
        if "data" in names:
            p.add_argument("--data", help="dataset JSON file")
        if "out" in names:
            p.add_argument("--out", help="output file or directory")
        if "seed" in names:
            p.add_argument("--seed", type=int, help="random seed")
        if "threads" in names:
            p.add_argument("--threads", type=int, 
                           help="BLAS thread limit (default: all cores)")

    p = sub.add_parser("mesh", help="generate a mesh")
    common(p, "out")
    p.add_argument("--preset", choices=sorted(DESK_RESOLUTION), help="desk-scale Case-1 cylinder")
    p.add_argument("--shape", choices=["cylinder", "box"], default="cylinder")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--resolution", default="64,6,10",
                   help="cylinder: n_theta,n_radial,n_z; box: nx,ny,nz")
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--electrode-size", default="0.35,0.2", help="width,height")
    p.add_argument("--rings", type=int, default=2)
    p.add_argument("--dimensions", default="1,1,1", help="box side lengths")
    p.add_argument("--faces", default="x-,x+", help="box faces used as full-face electrodes")
    p.add_argument("--vtk", help="also write the mesh as legacy VTK")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("simulate", help="simulate noisy data on a fine mesh")
    common(p, "mesh", "out", "seed", "threads")
    p.add_argument("--phantom", help="phantom JSON (default: the Case-1 phantom)")
    p.add_argument("--gamma", type=float, default=4e-3, help="relative noise level")
    p.add_argument("--z-mean", type=float, default=2e-3)
    p.add_argument("--z-std", type=float, default=5e-4)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="best homogeneous (sigma0, z0)")
    common(p, "mesh", "data", "out", "threads")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reconstruct", help="edge-preferring reconstruction")
    common(p, "mesh", "data", "out", "seed", "threads")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--tau", type=float, help="discrepancy multiplier (>= 1)")
    p.add_argument("--edge", choices=["tv", "pm", "quadratic"])
    p.add_argument("--T", type=float, help="edge threshold")
    p.add_argument("--keep-snapshots", action="store_true", help="store every outer iterate in the VTK")
    p.add_argument("--allow-inverse-crime", action="store_true",
                   help="accept data simulated on the inversion mesh or a mesh < 2x finer")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("report", help="plot-ready tables from a reconstruction")
    p.add_argument("run", help="directory written by 'reconstruct'")
    common(p, "mesh", "data", "out")
    p.add_argument("--heights", default="0.9,0.6,0.4,0.1", help="cross-section heights")
    p.add_argument("--grid", type=int, default=41, help="samples per axis in each cross-section")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except (InputError, MeshError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except ReconstructionError as exc:
        return _fail("ReconstructionError", str(exc), 1)
    except (RuntimeError, ArithmeticError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    sys.stdout.write(json.dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
