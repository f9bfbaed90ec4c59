"""Figure rendering for run and study outputs.

Each function takes curve data as returned by postprocess.read_curves
(or the in-memory history) and writes one PNG next to the delimited
output.  Rendering is headless (Agg) so runs work without a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PHASE_COLORS = {"F": "tab:blue", "M": "tab:red"}


def _new_axes(xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def stress_strain(curves: dict, path) -> None:
    """Nominal stress against equivalent strain for one run."""
    fig, ax = _new_axes("equivalent strain", "nominal stress (MPa)")
    ax.plot(curves["eps_eq"], curves["sigma_n_MPa"], color="black")
    fig.savefig(path, dpi=160)
    plt.close(fig)


def stress_partition(curves: dict, path) -> None:
    """Phase-averaged axial stress histories."""
    fig, ax = _new_axes("equivalent strain", "axial stress (MPa)")
    ax.plot(curves["eps_eq"], curves["sigma_yy_F_MPa"],
            color=_PHASE_COLORS["F"], label="ferrite")
    ax.plot(curves["eps_eq"], curves["sigma_yy_M_MPa"],
            color=_PHASE_COLORS["M"], label="martensite")
    ax.legend()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def strain_partition(curves: dict, path) -> None:
    """Phase-averaged equivalent strain histories."""
    fig, ax = _new_axes("overall equivalent strain",
                        "phase equivalent strain")
    ax.plot(curves["eps_eq"], curves["eps_eq_F"],
            color=_PHASE_COLORS["F"], label="ferrite")
    ax.plot(curves["eps_eq"], curves["eps_eq_M"],
            color=_PHASE_COLORS["M"], label="martensite")
    ax.legend()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def density_histories(curves: dict, path) -> None:
    """GN and stored densities per phase on a log axis."""
    fig, ax = _new_axes("equivalent strain", "density (1/um^2)")
    ax.plot(curves["eps_eq"], curves["rho_G_F_per_um2"],
            color=_PHASE_COLORS["F"], label="GN ferrite")
    ax.plot(curves["eps_eq"], curves["rho_G_M_per_um2"],
            color=_PHASE_COLORS["M"], label="GN martensite")
    ax.plot(curves["eps_eq"], curves["rho_S_F_per_um2"],
            color=_PHASE_COLORS["F"], linestyle="--", label="SS ferrite")
    ax.plot(curves["eps_eq"], curves["rho_S_M_per_um2"],
            color=_PHASE_COLORS["M"], linestyle="--", label="SS martensite")
    positive = [curves[k] for k in ("rho_G_F_per_um2", "rho_G_M_per_um2")
                if np.any(curves[k] > 0)]
    if positive:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=160)
    plt.close(fig)


def phase_map(ms, path) -> None:
    """Phase and grain layout of a generated microstructure."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.8),
                             constrained_layout=True)
    extent = (0.0, ms.nx * ms.dx, 0.0, ms.ny * ms.dy)
    axes[0].imshow(ms.phase.reshape(ms.ny, ms.nx), origin="lower",
                   extent=extent, cmap="coolwarm", interpolation="nearest")
    axes[0].set_title("phase")
    rng = np.random.default_rng(0)
    shuffle = rng.permutation(int(ms.grain_id.max()) + 1)
    axes[1].imshow(shuffle[ms.grain_id].reshape(ms.ny, ms.nx),
                   origin="lower", extent=extent, cmap="tab20",
                   interpolation="nearest")
    axes[1].set_title("grains")
    for ax in axes:
        ax.set_xlabel("x (um)")
        ax.set_ylabel("y (um)")
    fig.savefig(path, dpi=160)
    plt.close(fig)


def run_figures(curves: dict, directory) -> list:
    """All per-run figures; returns the written paths."""
    jobs = (("stress_strain.png", stress_strain),
            ("stress_partition.png", stress_partition),
            ("strain_partition.png", strain_partition),
            ("density_histories.png", density_histories))
    written = []
    for name, fn in jobs:
        path = directory / name
        fn(curves, path)
        written.append(path)
    return written


def study_comparison(by_size: dict, path) -> None:
    """Overlaid stress-strain curves of a grain-size study, keyed by
    the ferrite grain size in um."""
    fig, ax = _new_axes("equivalent strain", "nominal stress (MPa)")
    for d_f in sorted(by_size, reverse=True):
        curves = by_size[d_f]
        ax.plot(curves["eps_eq"], curves["sigma_n_MPa"],
                label="d_F = %g um" % d_f)
    ax.legend()
    fig.savefig(path, dpi=160)
    plt.close(fig)
