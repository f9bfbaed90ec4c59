"""Command-line entry points: single runs, grain-size studies,
microstructure inspection, and the single-point strain-path driver.

Outputs land in <output root>/<run name>/ with a manifest listing every
file and its content hash.  The output root is the config's output_dir,
relocatable through the DPCP_OUTPUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import constitutive as cst
from . import crystal
from . import fem
from . import microstructure as micro
from . import postprocess as post
from . import report

RUN_ERRORS = (fem.MeshError, fem.SolverError, cst.ConstitutiveError,
              micro.CalibrationError)


def _version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True,
            text=True, timeout=5, cwd=os.path.dirname(__file__))
        if rev.returncode == 0 and rev.stdout.strip():
            return "%s+g%s" % (__version__, rev.stdout.strip())
    except OSError:
        pass
    return __version__


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _output_dir(cfg, name: str) -> Path:
    root = Path(os.environ.get("DPCP_OUTPUT_ROOT", "")) / cfg.output_dir
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg, info: dict) -> None:
    files = {p.name: _file_sha256(p) for p in sorted(out.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    manifest = {"version": _version_string(),
                "config_sha256": cfgmod.config_hash(cfg),
                "files": files}
    manifest.update(info)
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


class _StepLog:
    """Streams the curve CSV row by row so aborted runs keep their tail."""

    def __init__(self, path: Path):
        self.file = open(path, "w")
        self.file.write(",".join(post.CURVE_COLUMNS) + "\n")

    def append(self, sim: fem.Simulation) -> None:
        row = [col[-1] for col in sim.history.columns()]
        self.file.write(",".join(repr(float(v)) for v in row) + "\n")

    def close(self) -> None:
        self.file.close()


def run_simulation(cfg, out: Path, label: str = "run") -> fem.Simulation:
    """Time loop with streaming curves, snapshots, checkpoints and the
    manifest; raises after writing a final checkpoint if a step fails."""
    started = time.time()
    sim = fem.Simulation(cfg)
    log = _StepLog(out / "curves.csv")
    post.write_snapshot(sim, out / "snapshot_000000.vtk")
    micro.to_csv(sim.ms, out / "microstructure.csv")

    n_steps = cfg.n_steps
    failed = None
    try:
        for k in range(n_steps):
            sim.step()
            log.append(sim)
            step = sim.step_index
            if cfg.snapshot_interval and step % cfg.snapshot_interval == 0:
                post.write_snapshot(sim, out / ("snapshot_%06d.vtk" % step))
            if cfg.checkpoint_interval and \
                    step % cfg.checkpoint_interval == 0:
                fem.write_checkpoint(sim, out / "checkpoint.npz")
    except (fem.MeshError, fem.SolverError, cst.ConstitutiveError) as exc:
        failed = exc
        fem.write_checkpoint(sim, out / "checkpoint_abort.npz")
    finally:
        log.close()

    if failed is None:
        post.write_snapshot(sim, out / ("snapshot_%06d.vtk" % sim.step_index))
        curves = post.read_curves(out / "curves.csv")
        if len(curves["t_s"]):
            report.run_figures(curves, out)

    _write_manifest(out, cfg, {
        "label": label,
        "status": "failed: %s" % failed if failed else "completed",
        "steps_completed": sim.step_index,
        "steps_planned": n_steps,
        "martensite_fraction": micro.martensite_fraction(sim.ms),
        "runtime_s": round(time.time() - started, 3)})
    if failed is not None:
        raise failed
    return sim


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _output_dir(cfg, args.name)
    print("writing to", out)
    sim = run_simulation(cfg, out)
    h = sim.history
    if len(h):
        print("completed %d steps: eps_eq %.4f, nominal stress %.1f MPa"
              % (sim.step_index, h.eps_eq[-1], h.sigma_n[-1]))
    else:
        print("completed 0 steps: configured duration is below one dt")
    return 0


def _study_one(packed):
    cfg_text, d_f, out_dir = packed
    cfg = cfgmod.parse_config(cfg_text)
    cfg = dataclasses.replace(cfg, d_ferrite=d_f)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_simulation(cfg, out, label="d_F=%g" % d_f)
    return d_f, str(out / "curves.csv")


def study_trends(by_size: dict) -> list:
    """Ordering checks across grain sizes; returns (name, ok) pairs.

    by_size maps d_F to curve dicts sharing one step grid.
    """
    sizes = sorted(by_size)
    final_sn = {d: by_size[d]["sigma_n_MPa"][-1] for d in sizes}
    results = []
    ordered = all(final_sn[a] > final_sn[b]
                  for a, b in zip(sizes, sizes[1:]))
    results.append(("final stress rises as grain size falls", ordered))
    harder = all(np.all(c["sigma_yy_M_MPa"] > c["sigma_yy_F_MPa"])
                 for c in by_size.values())
    results.append(("martensite carries more stress throughout", harder))
    softer = all(np.all(c["eps_eq_F"] > c["eps_eq_M"])
                 for c in by_size.values())
    results.append(("ferrite strains more throughout", softer))
    gaps = [by_size[d]["eps_eq_F"][-1] - by_size[d]["eps_eq_M"][-1]
            for d in sizes]
    results.append(("strain gap shrinks as grain size falls",
                    all(a < b for a, b in zip(gaps, gaps[1:]))))
    for key, lab in (("rho_G_F_per_um2", "ferrite GN"),
                     ("rho_G_M_per_um2", "martensite GN")):
        finals = [by_size[d][key][-1] for d in sizes]
        results.append(("%s density rises as grain size falls" % lab,
                        all(a > b for a, b in zip(finals, finals[1:]))))
    return results


def cmd_study(args) -> int:
    cfg = _load(args)
    sizes = [float(s) for s in args.dF.split(",") if s]
    if not sizes:
        print("no grain sizes given", file=sys.stderr)
        return 2
    out = _output_dir(cfg, args.name)
    cfg_text = cfgmod.dump_config(cfg)
    jobs = [(cfg_text, d, str(out / ("dF_%g" % d))) for d in sizes]

    failures = []
    curve_files = {}
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(_study_one, job): job for job in jobs}
            for future, job in futures.items():
                try:
                    d_f, path = future.result()
                    curve_files[d_f] = path
                except RUN_ERRORS as exc:
                    failures.append((job[1], exc))
    else:
        for job in jobs:
            try:
                d_f, path = _study_one(job)
                curve_files[d_f] = path
            except RUN_ERRORS as exc:
                failures.append((job[1], exc))

    for d_f, exc in failures:
        print("d_F=%g failed: %s" % (d_f, exc), file=sys.stderr)
    by_size = {d: post.read_curves(p) for d, p in curve_files.items()}
    if by_size:
        _write_comparison(by_size, out / "comparison.csv")
        report.study_comparison(by_size, out / "study_stress_strain.png")
    if len(by_size) == len(sizes) and len(sizes) > 1:
        print("trend report:")
        for name, ok in study_trends(by_size):
            print("  %-45s %s" % (name, "pass" if ok else "FAIL"))
    _write_manifest(out, cfg, {"label": "study",
                               "grain_sizes": sizes,
                               "completed": sorted(by_size)})
    return 1 if failures else 0


def _write_comparison(by_size: dict, path: Path) -> None:
    """Merged per-size curve table keyed by a leading d_F column."""
    with open(path, "w") as f:
        f.write("d_F_um," + ",".join(post.CURVE_COLUMNS) + "\n")
        for d_f in sorted(by_size):
            cols = [by_size[d_f][name] for name in post.CURVE_COLUMNS]
            for row in zip(*cols):
                f.write(repr(float(d_f)) + ","
                        + ",".join(repr(float(v)) for v in row) + "\n")


def cmd_microstructure(args) -> int:
    cfg = _load(args)
    ms = micro.generate(cfg.domain_size, cfg.nx, cfg.ny, cfg.d_ferrite,
                        cfg.d_martensite, cfg.martensite_fraction, cfg.seed)
    print("elements: %d x %d, martensite fraction %.4f"
          % (ms.nx, ms.ny, micro.martensite_fraction(ms)))
    print("boundary length per area: %.4f /um"
          % micro.boundary_length_per_area(ms))
    if args.export:
        out = _output_dir(cfg, args.name)
        micro.to_csv(ms, out / "microstructure.csv")
        post.write_vtk_cells(
            out / "microstructure.vtk", "microstructure", ms.nx, ms.ny,
            ms.dx, ms.dy, {"phase": ms.phase.astype(float),
                           "grain_id": ms.grain_id.astype(float),
                           "phi_z_deg": ms.phi_z})
        report.phase_map(ms, out / "phase_map.png")
        _write_manifest(out, cfg, {
            "label": "microstructure",
            "martensite_fraction": micro.martensite_fraction(ms)})
        print("exported to", out)
    return 0


def cmd_point_driver(args) -> int:
    """Integrate one material point along a tabulated stretch-rate path.

    The path file is a CSV with header t_s,dxx,dyy,dzz,dyz,dxz,dxy; rows
    must be uniformly spaced in time.  Writes per-step resolved shear
    stress, flow stress, slip rates and stored density per system.
    """
    rows = np.loadtxt(args.path_file, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 7:
        print("expected 7 columns t_s,dxx,dyy,dzz,dyz,dxz,dxy",
              file=sys.stderr)
        return 2
    t = rows[:, 0]
    if len(t) < 2:
        print("need at least two path rows", file=sys.stderr)
        return 2
    dt = float(t[1] - t[0])

    material = (cst.martensite_params() if args.phase == "martensite"
                else cst.ferrite_params())
    state = cst.IntegrationPointState.initial(
        material, crystal.Orientation(0.0, 0.0, args.phi_z))
    ps, _ = crystal.schmid_tensors(state.systems.s, state.systems.m)

    n = len(state.systems)
    out_path = Path(args.output)
    with open(out_path, "w") as f:
        heads = ["t_s"]
        for stem in ("tau_MPa", "g_MPa", "gamma_dot", "rho_S_per_um2"):
            heads += ["%s_%02d" % (stem, a) for a in range(n)]
        f.write(",".join(heads) + "\n")
        w = np.zeros((3, 3))
        for row in rows:
            d = np.zeros((3, 3))
            (d[0, 0], d[1, 1], d[2, 2], d[1, 2], d[0, 2],
             d[0, 1]) = row[1:]
            d[2, 1], d[2, 0], d[1, 0] = d[1, 2], d[0, 2], d[0, 1]
            update = cst.tangent_stress_update(state, d, w, dt)
            cst.apply_point_update(state, update, d, dt)
            tau = np.einsum("nij,ij->n", ps, state.stress)
            cells = [row[0] + dt]
            cells += list(tau) + list(state.g) + list(state.gamma_dot)
            cells += list(state.dislocations.rho_ss)
            f.write(",".join(repr(float(v)) for v in cells) + "\n")
    print("wrote", out_path)
    return 0


def _load(args) -> cfgmod.SimulationConfig:
    if args.config is None:
        cfg = cfgmod.SimulationConfig()
    else:
        cfg = cfgmod.load_config(args.config)
    if args.preset:
        cfg = cfgmod.apply_preset(cfg, args.preset)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpcp",
        description="Dislocation-based crystal-plasticity simulation of "
                    "dual-phase steel plates under plane-strain tension.")
    parser.add_argument("--version", action="version",
                        version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configured simulation")
    p.add_argument("config", nargs="?", help="YAML configuration file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--name", default="run")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("study",
                       help="run several ferrite grain sizes and compare")
    p.add_argument("config", nargs="?", help="YAML configuration file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--name", default="study")
    p.add_argument("--dF", default="3.75,7.5,15",
                   help="comma-separated ferrite grain sizes in um")
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("microstructure",
                       help="generate and inspect a phase map")
    p.add_argument("config", nargs="?", help="YAML configuration file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--name", default="microstructure")
    p.add_argument("--export", action="store_true",
                   help="write CSV, VTK and figure outputs")
    p.set_defaults(fn=cmd_microstructure)

    p = sub.add_parser("point-driver",
                       help="integrate one point along a strain path file")
    p.add_argument("path_file", help="CSV of t_s,dxx,dyy,dzz,dyz,dxz,dxy")
    p.add_argument("--phase", choices=("ferrite", "martensite"),
                   default="ferrite")
    p.add_argument("--phi-z", dest="phi_z", type=float, default=0.0,
                   help="lattice rotation about z in degrees")
    p.add_argument("--output", default="point_driver.csv")
    p.set_defaults(fn=cmd_point_driver)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except cfgmod.ConfigError as exc:
        print("configuration error:\n%s" % exc, file=sys.stderr)
        return 2
    except RUN_ERRORS as exc:
        print("aborted: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
