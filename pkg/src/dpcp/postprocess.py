"""Field reductions, history serialization, and snapshot export.

All delimited output is written with repr() floats so repeated runs of the
same configuration produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

from . import microstructure as micro

CURVE_COLUMNS = ("t_s", "eps_eq", "sigma_n_MPa", "sigma_yy_F_MPa",
                 "sigma_yy_M_MPa", "eps_eq_F", "eps_eq_M",
                 "rho_G_F_per_um2", "rho_G_M_per_um2",
                 "rho_S_F_per_um2", "rho_S_M_per_um2")


def deviator(t: np.ndarray) -> np.ndarray:
    tr = np.trace(t, axis1=-2, axis2=-1) / 3.0
    dev = t.copy()
    for k in range(3):
        dev[..., k, k] -= tr
    return dev


def equivalent_strain(strain: np.ndarray) -> np.ndarray:
    """sqrt(2/3 e' : e') of (..., 3, 3) strain tensors."""
    dev = deviator(strain)
    return np.sqrt(2.0 / 3.0 * np.einsum("...ij,...ij->...", dev, dev))


def equivalent_stress(stress: np.ndarray) -> np.ndarray:
    """von Mises sqrt(3/2 s' : s') of (..., 3, 3) stress tensors."""
    dev = deviator(stress)
    return np.sqrt(1.5 * np.einsum("...ij,...ij->...", dev, dev))


def axial_hooke_stress(elastic_strain: np.ndarray,
                       young_modulus: float) -> np.ndarray:
    """Loading-direction stress measure E * elastic strain yy."""
    return young_modulus * elastic_strain[..., 1, 1]


def phase_average(values: np.ndarray, phase: np.ndarray,
                  which: int) -> float:
    """Mean of an element field over one phase; an absent phase is an
    error rather than a silent NaN."""
    mask = phase == which
    if not np.any(mask):
        raise ValueError("no elements of phase %s in this specimen"
                         % micro.PHASE_NAMES.get(which, which))
    return float(np.asarray(values)[mask].mean())


# ---------------------------------------------------------------------------
# history curves

def write_curves(history, path) -> None:
    """Per-step phase-partitioned averages as a comma-delimited table."""
    cols = history.columns()
    with open(path, "w") as f:
        f.write(",".join(CURVE_COLUMNS) + "\n")
        for row in zip(*cols):
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_curves(path) -> dict:
    with open(path) as f:
        header = f.readline().strip().split(",")
        if tuple(header) != CURVE_COLUMNS:
            raise ValueError("unexpected curve columns %r in %s"
                             % (header, path))
        rows = [line.strip().split(",") for line in f if line.strip()]
    data = np.array(rows, dtype=float)
    if data.size == 0:
        data = data.reshape(0, len(CURVE_COLUMNS))
    return {name: data[:, k] for k, name in enumerate(CURVE_COLUMNS)}


# ---------------------------------------------------------------------------
# legacy VTK snapshots (structured points, cell data)

def write_vtk_cells(path, title: str, nx: int, ny: int, dx: float,
                    dy: float, fields: dict) -> None:
    """Element fields on the reference grid as legacy ASCII VTK."""
    n = nx * ny
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title + "\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write("DIMENSIONS %d %d 1\n" % (nx + 1, ny + 1))
        f.write("ORIGIN 0.0 0.0 0.0\n")
        f.write("SPACING %s %s 1.0\n" % (repr(float(dx)), repr(float(dy))))
        f.write("CELL_DATA %d\n" % n)
        for name, values in fields.items():
            arr = np.asarray(values).ravel()
            if arr.size != n:
                raise ValueError("field %r has %d values, expected %d"
                                 % (name, arr.size, n))
            f.write("SCALARS %s double 1\n" % name)
            f.write("LOOKUP_TABLE default\n")
            for v in arr:
                f.write(repr(float(v)) + "\n")


def read_vtk_cells(path):
    """Counterpart of write_vtk_cells; returns (meta, fields)."""
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f]
    meta = {"title": lines[1]}
    fields = {}
    i = 0
    n = None
    while i < len(lines):
        line = lines[i]
        if line.startswith("DIMENSIONS"):
            _, sx, sy, _ = line.split()
            meta["nx"] = int(sx) - 1
            meta["ny"] = int(sy) - 1
        elif line.startswith("SPACING"):
            _, sx, sy, _ = line.split()
            meta["dx"] = float(sx)
            meta["dy"] = float(sy)
        elif line.startswith("CELL_DATA"):
            n = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            i += 2  # skip the lookup-table line
            vals = [float(lines[i + k]) for k in range(n)]
            fields[name] = np.array(vals)
            i += n - 1
        i += 1
    return meta, fields


def element_fields(sim) -> dict:
    """Snapshot fields of a simulation, keyed for the VTK writer."""
    ms = sim.ms
    return {
        "phase": ms.phase.astype(float),
        "grain_id": ms.grain_id.astype(float),
        "phi_z_deg": ms.phi_z,
        "sigma_eq_MPa": sim.element_equivalent_stress(),
        "sigma_yy_MPa": sim.element_axial_stress(),
        "eps_eq": sim.element_equivalent_strain(),
        "rho_G_per_um2": sim.element_rho_gn(),
        "rho_S_per_um2": sim.element_rho_ss(),
        "slip_total": sim.element_mean(sim.gamma_acc),
    }


def write_snapshot(sim, path) -> None:
    ms = sim.ms
    title = "step %d t %s s" % (sim.step_index, repr(float(sim.t)))
    write_vtk_cells(path, title, ms.nx, ms.ny, ms.dx, ms.dy,
                    element_fields(sim))
