"""BCC slip-system geometry.

Builds the 24 slip systems ({110}<111> and {112}<111>), rotates them into
the sample frame, and provides Schmid tensors and resolved shear stress.
All vectors are unit 3-vectors in the crystal frame unless rotated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

FAMILY_110 = 0
FAMILY_112 = 1
FAMILY_LABELS = {FAMILY_110: "{110}<111>", FAMILY_112: "{112}<111>"}

N_SYSTEMS = 24

# Plane normals up to sign, first nonzero component positive.
_NORMALS_110 = [
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
]
_NORMALS_112 = [
    (2, 1, 1), (2, 1, -1), (2, -1, 1), (2, -1, -1),
    (1, 2, 1), (1, 2, -1), (1, -2, 1), (1, -2, -1),
    (1, 1, 2), (1, 1, -2), (1, -1, 2), (1, -1, -2),
]
# The four <111> axes up to sign.
_DIRECTIONS_111 = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1)]


@dataclass(frozen=True)
class Orientation:
    """Lattice orientation as fixed-axis rotations in degrees, applied
    x first, then y, then z."""

    phi_x: float = 0.0
    phi_y: float = 0.0
    phi_z: float = 0.0


@dataclass(frozen=True)
class SlipSystemSet:
    """Slip direction s, plane normal m, and in-plane transverse t = s x m
    for a set of systems, plus the family index of each."""

    s: np.ndarray      # (n, 3)
    m: np.ndarray      # (n, 3)
    t: np.ndarray      # (n, 3)
    family: np.ndarray  # (n,) int

    def __len__(self):
        return self.s.shape[0]

    def rotated(self, orientation: Orientation) -> "SlipSystemSet":
        """Return a copy with all vectors rotated into the sample frame."""
        r = rotation_matrix(orientation)
        return SlipSystemSet(
            s=self.s @ r.T, m=self.m @ r.T, t=self.t @ r.T,
            family=self.family.copy(),
        )


def bcc_slip_systems() -> SlipSystemSet:
    """All 24 BCC systems, 12 per family, one representative per +-(s, m)
    pair; negative slip is carried by the sign of the resolved stress."""
    svecs, mvecs, fams = [], [], []
    for fam, normals in ((FAMILY_110, _NORMALS_110), (FAMILY_112, _NORMALS_112)):
        for n in normals:
            for d in _DIRECTIONS_111:
                if sum(ni * di for ni, di in zip(n, d)) == 0:
                    svecs.append(d)
                    mvecs.append(n)
                    fams.append(fam)
    s = np.array(svecs, dtype=float)
    m = np.array(mvecs, dtype=float)
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    t = np.cross(s, m)
    out = SlipSystemSet(s=s, m=m, t=t, family=np.array(fams, dtype=int))
    assert len(out) == N_SYSTEMS
    return out


def rotation_matrix(orientation: Orientation) -> np.ndarray:
    """Rotation matrix R = Rz(phi_z) Ry(phi_y) Rx(phi_x), angles in degrees.

    Maps crystal-frame vectors into the sample frame; a positive phi_z is a
    counter-clockwise rotation about the out-of-plane z axis.
    """
    ax, ay, az = (np.radians(a) for a in
                  (orientation.phi_x, orientation.phi_y, orientation.phi_z))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def schmid_tensors(s: np.ndarray, m: np.ndarray):
    """Symmetric and antisymmetric Schmid tensors of s (x) m.

    Broadcasts over any leading axes; returns (P_sym, P_asym), each
    shaped like s with a trailing (3, 3).
    """
    outer = np.asarray(s)[..., :, None] * np.asarray(m)[..., None, :]
    outer_t = np.swapaxes(outer, -1, -2)
    return 0.5 * (outer + outer_t), 0.5 * (outer - outer_t)


def resolved_shear_stress(stress: np.ndarray, s: np.ndarray,
                          m: np.ndarray) -> np.ndarray:
    """tau = s . (T m), broadcast over leading axes of the inputs."""
    return np.einsum("...ij,...i,...j->...", stress, s, m)


def to_csv(systems: SlipSystemSet, path) -> None:
    """Dump the system table (family, s, m, t) for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "family",
                         "s_x", "s_y", "s_z",
                         "m_x", "m_y", "m_z",
                         "t_x", "t_y", "t_z"])
        for i in range(len(systems)):
            writer.writerow(
                [i, FAMILY_LABELS[int(systems.family[i])]]
                + [repr(float(v)) for v in systems.s[i]]
                + [repr(float(v)) for v in systems.m[i]]
                + [repr(float(v)) for v in systems.t[i]])


def read_csv_systems(path) -> SlipSystemSet:
    """Inverse of :func:`to_csv`, used to round-trip the table."""
    labels = {v: k for k, v in FAMILY_LABELS.items()}
    s, m, t, fam = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fam.append(labels[row["family"]])
            s.append([float(row["s_" + ax]) for ax in "xyz"])
            m.append([float(row["m_" + ax]) for ax in "xyz"])
            t.append([float(row["t_" + ax]) for ax in "xyz"])
    return SlipSystemSet(s=np.array(s), m=np.array(m), t=np.array(t),
                         family=np.array(fam, dtype=int))
