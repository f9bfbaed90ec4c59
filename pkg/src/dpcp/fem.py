"""Rate-form updated-Lagrangian FEM on bilinear quads, plane strain.

Each step solves the linearized virtual-work rate statement for nodal
velocities, marches stress and internal variables with explicit Euler, and
convects the mesh.  Selective volumetric averaging (B-bar) counters
plane-strain locking; the geometric stiffness carries the current-stress
terms of the rate weak form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constitutive as cst
from . import crystal
from . import dislocation as disl
from . import microstructure as micro
from . import postprocess as post

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
N_GP = 4

CHECKPOINT_FORMAT = "dpcp-checkpoint-1"

# Slip activity below this stress ratio is far under machine relevance
# (0.25^(1/m) < 1e-60); such points take the pure elastic branch.
_ELASTIC_RATIO = 0.25


class MeshError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


def _shape_derivatives(xi: float, eta: float) -> np.ndarray:
    """dN/d(xi, eta) of the 4-node quad at one natural point, (4, 2)."""
    return 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)]])


_DN_GP = np.array([_shape_derivatives(*gp) for gp in GAUSS_POINTS])  # (4,4,2)
_DN_CENTER = _shape_derivatives(0.0, 0.0)


@dataclass
class Mesh:
    """Structured quad mesh; node n = j * (nx + 1) + i."""

    nx: int
    ny: int
    coords: np.ndarray   # (n_nodes, 2), current positions
    quads: np.ndarray    # (n_elements, 4), counter-clockwise
    width0: float
    height0: float

    @classmethod
    def regular(cls, nx: int, ny: int, lx: float, ly: float) -> "Mesh":
        xs = np.linspace(0.0, lx, nx + 1)
        ys = np.linspace(0.0, ly, ny + 1)
        xx, yy = np.meshgrid(xs, ys)
        coords = np.column_stack([xx.ravel(), yy.ravel()])
        i = np.arange(nx)
        j = np.arange(ny)
        ii, jj = np.meshgrid(i, j)
        n00 = (jj * (nx + 1) + ii).ravel()
        quads = np.column_stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1])
        return cls(nx=nx, ny=ny, coords=coords, quads=quads,
                   width0=lx, height0=ly)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.quads.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def bottom_nodes(self) -> np.ndarray:
        return np.arange(self.nx + 1)

    def top_nodes(self) -> np.ndarray:
        return np.arange(self.ny * (self.nx + 1),
                         (self.ny + 1) * (self.nx + 1))

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 8) velocity dof ids, x/y interleaved per node."""
        e = np.empty((self.n_elements, 8), dtype=int)
        e[:, 0::2] = 2 * self.quads
        e[:, 1::2] = 2 * self.quads + 1
        return e


@dataclass
class ElementGeometry:
    """Per-element, per-Gauss-point quantities on the current mesh."""

    dndx: np.ndarray         # (ne, 4, 4, 2) shape gradients at Gauss points
    wdetj: np.ndarray        # (ne, 4) integration weights
    bbar: np.ndarray         # (ne, 4, 3, 8) volumetric-averaged B
    center_dndx: np.ndarray  # (ne, 4, 2) shape gradients at element centers
    volumes: np.ndarray      # (ne,)


def element_geometry(coords: np.ndarray, quads: np.ndarray) -> ElementGeometry:
    xe = coords[quads]                                   # (ne, 4, 2)
    jac = np.einsum("eai,gaj->egij", xe, _DN_GP)         # dx_i/dxi_j
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    if np.any(det <= 0.0):
        bad = int(np.argwhere(det.min(axis=1) <= 0.0)[0, 0])
        raise MeshError("non-positive jacobian in element %d" % bad)
    inv = np.empty_like(jac)
    inv[..., 0, 0] = jac[..., 1, 1]
    inv[..., 1, 1] = jac[..., 0, 0]
    inv[..., 0, 1] = -jac[..., 0, 1]
    inv[..., 1, 0] = -jac[..., 1, 0]
    inv /= det[..., None, None]
    dndx = np.einsum("gaj,egjk->egak", _DN_GP, inv)
    wdetj = det  # unit Gauss weights

    ne = quads.shape[0]
    b = np.zeros((ne, N_GP, 3, 8))
    b[:, :, 0, 0::2] = dndx[..., 0]
    b[:, :, 1, 1::2] = dndx[..., 1]
    b[:, :, 2, 0::2] = dndx[..., 1]
    b[:, :, 2, 1::2] = dndx[..., 0]

    volumes = wdetj.sum(axis=1)
    bvol = b[:, :, 0, :] + b[:, :, 1, :]                 # (ne, 4, 8)
    bvol_avg = np.einsum("ega,eg->ea", bvol, wdetj) / volumes[:, None]
    # Redistribute the element-mean dilatation over both in-plane normals.
    corr = 0.5 * (bvol_avg[:, None, :] - bvol)
    bbar = b.copy()
    bbar[:, :, 0, :] += corr
    bbar[:, :, 1, :] += corr

    jac_c = np.einsum("eai,aj->eij", xe, _DN_CENTER)
    det_c = (jac_c[:, 0, 0] * jac_c[:, 1, 1]
             - jac_c[:, 0, 1] * jac_c[:, 1, 0])
    inv_c = np.empty_like(jac_c)
    inv_c[:, 0, 0] = jac_c[:, 1, 1]
    inv_c[:, 1, 1] = jac_c[:, 0, 0]
    inv_c[:, 0, 1] = -jac_c[:, 0, 1]
    inv_c[:, 1, 0] = -jac_c[:, 1, 0]
    inv_c /= det_c[:, None, None]
    center_dndx = np.einsum("aj,ejk->eak", _DN_CENTER, inv_c)

    return ElementGeometry(dndx=dndx, wdetj=wdetj, bbar=bbar,
                           center_dndx=center_dndx, volumes=volumes)


def assemble_system(geom: ElementGeometry, ctan: np.ndarray,
                    stress_plane: np.ndarray, resid: np.ndarray,
                    edof: np.ndarray, n_dofs: int):
    """Element-wise K and the viscoplastic right-hand side.

    ctan (ne, 4, 3, 3): consistent moduli; stress_plane (ne, 4, 2, 2):
    in-plane Cauchy block for the geometric terms; resid (ne, 4, 3): the
    stress-rate contribution at frozen velocities, moved to the RHS.
    Returns (K as csr, rhs).
    """
    w = geom.wdetj
    k_mat = np.einsum("egka,egkl,eglb,eg->eab", geom.bbar, ctan,
                      geom.bbar, w, optimize=True)

    ne = ctan.shape[0]
    lb = np.zeros((ne, N_GP, 8, 2, 2))
    lb[:, :, 0::2, 0, :] = geom.dndx
    lb[:, :, 1::2, 1, :] = geom.dndx
    db = 0.5 * (lb + lb.swapaxes(-1, -2))
    # Current-stress terms of the rate weak form:
    # (L T) : L_hat  minus  (D T + T D) : D_hat.
    m1 = np.einsum("egaij,egjk->egaik", db, stress_plane)
    mm = m1 + m1.swapaxes(-1, -2)
    k_geo = np.einsum("egapk,egkq,egbpq,eg->eab", lb, stress_plane, lb, w,
                      optimize=True)
    k_geo -= np.einsum("egaij,egbij,eg->eab", mm, db, w, optimize=True)
    k_el = k_mat + k_geo

    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    k = sp.coo_matrix((k_el.ravel(), (rows, cols)),
                      shape=(n_dofs, n_dofs)).tocsr()

    rhs_el = -np.einsum("egka,egk,eg->ea", geom.bbar, resid, w,
                        optimize=True)
    rhs = np.zeros(n_dofs)
    np.add.at(rhs, edof.ravel(), rhs_el.ravel())
    return k, rhs


def internal_forces(geom: ElementGeometry, stress_voigt: np.ndarray,
                    edof: np.ndarray, n_dofs: int) -> np.ndarray:
    """Equivalent nodal forces of the current in-plane Cauchy stress."""
    fe = np.einsum("egka,egk,eg->ea", geom.bbar, stress_voigt, geom.wdetj,
                   optimize=True)
    f = np.zeros(n_dofs)
    np.add.at(f, edof.ravel(), fe.ravel())
    return f


def boundary_conditions(mesh: Mesh, top_speed: float,
                        constrain_lateral: bool = False):
    """Prescribed velocity dofs: bottom y fixed, top y pulled, the
    bottom-left corner pinned in x.  Lateral faces stay traction free
    unless constrain_lateral fixes every x dof (the oedometer variant
    used by the confined-stiffness checks)."""
    bottom = mesh.bottom_nodes()
    top = mesh.top_nodes()
    if constrain_lateral:
        xdofs = 2 * np.arange(mesh.n_nodes)
    else:
        xdofs = np.array([0])
    fixed = np.concatenate([2 * bottom + 1, 2 * top + 1, xdofs])
    values = np.concatenate([np.zeros(len(bottom)),
                             np.full(len(top), top_speed),
                             np.zeros(len(xdofs))])
    return fixed, values


def sparse_solve(a: sp.spmatrix, b: np.ndarray,
                 rel_tol: float = 1.0e-10) -> np.ndarray:
    """Direct sparse solve with a residual guard."""
    x = spla.spsolve(sp.csc_matrix(a), b)
    scale = np.linalg.norm(b)
    resid = np.linalg.norm(a @ x - b)
    if resid > rel_tol * max(scale, 1.0e-30):
        raise SolverError("linear solve residual %.3g exceeds %.3g relative"
                          % (resid, rel_tol))
    return x


def solve_constrained(k: sp.spmatrix, rhs: np.ndarray, fixed: np.ndarray,
                      values: np.ndarray) -> np.ndarray:
    free = np.ones(rhs.shape[0], dtype=bool)
    free[fixed] = False
    k_free = k[free]
    b = rhs[free] - k_free[:, fixed] @ values
    v = np.zeros_like(rhs)
    v[fixed] = values
    v[free] = sparse_solve(k_free[:, free], b)
    return v


def slip_rate_gradient(mesh: Mesh, geom: ElementGeometry,
                       gamma_elem: np.ndarray) -> np.ndarray:
    """In-plane gradient of element slip-rate fields at element centers.

    Element values are scattered to nodes by volume-weighted averaging of
    the attached elements, then differentiated with the element shape
    functions.  Returns (n_elements, n_fields, 2).
    """
    n_nodes = mesh.n_nodes
    weighted = gamma_elem * geom.volumes[:, None]
    acc = np.zeros((n_nodes, gamma_elem.shape[1]))
    wacc = np.zeros(n_nodes)
    flat = mesh.quads.ravel()
    np.add.at(acc, flat, np.repeat(weighted, 4, axis=0))
    np.add.at(wacc, flat, np.repeat(geom.volumes, 4))
    node_vals = acc / wacc[:, None]
    return np.einsum("eak,ean->enk", geom.center_dndx, node_vals[mesh.quads])


@dataclass
class _Group:
    """Elements sharing one phase and one lattice orientation."""

    phase: int
    phi_z: float
    elems: np.ndarray            # element ids
    pts: np.ndarray              # integration point ids
    material: cst.PhaseMaterial
    systems: crystal.SlipSystemSet
    p_sym: np.ndarray            # (n, 3, 3)
    p_asym: np.ndarray
    c_star: np.ndarray
    elastic_block: np.ndarray    # (3, 3) plane-strain stiffness
    omega_hard: np.ndarray
    omega_forest: np.ndarray


@dataclass
class History:
    """Per-step phase-partitioned averages, appended after every step."""

    t: list = field(default_factory=list)
    eps_eq: list = field(default_factory=list)
    sigma_n: list = field(default_factory=list)
    sigma_yy_f: list = field(default_factory=list)
    sigma_yy_m: list = field(default_factory=list)
    eps_eq_f: list = field(default_factory=list)
    eps_eq_m: list = field(default_factory=list)
    rho_gn_f: list = field(default_factory=list)
    rho_gn_m: list = field(default_factory=list)
    rho_ss_f: list = field(default_factory=list)
    rho_ss_m: list = field(default_factory=list)

    COLUMNS = ("t_s", "eps_eq", "sigma_n_MPa", "sigma_yy_F_MPa",
               "sigma_yy_M_MPa", "eps_eq_F", "eps_eq_M", "rho_G_F_per_um2",
               "rho_G_M_per_um2", "rho_S_F_per_um2", "rho_S_M_per_um2")

    def columns(self):
        return (self.t, self.eps_eq, self.sigma_n, self.sigma_yy_f,
                self.sigma_yy_m, self.eps_eq_f, self.eps_eq_m,
                self.rho_gn_f, self.rho_gn_m, self.rho_ss_f, self.rho_ss_m)

    def __len__(self):
        return len(self.t)


class Simulation:
    """Time-marched plane-strain tension of one two-phase specimen."""

    def __init__(self, config, ms: Optional[micro.Microstructure] = None,
                 constrain_lateral: bool = False):
        self.cfg = config
        self.constrain_lateral = constrain_lateral
        if ms is None:
            ms = micro.generate(config.domain_size, config.nx, config.ny,
                                config.d_ferrite, config.d_martensite,
                                config.martensite_fraction, config.seed)
        if ms.nx != config.nx or ms.ny != config.ny:
            raise ValueError("microstructure grid does not match the config")
        self.ms = ms
        self.mesh = Mesh.regular(config.nx, config.ny, config.domain_size,
                                 config.domain_size)
        self.edof = self.mesh.element_dofs()
        self.top_speed = config.strain_rate * self.mesh.height0
        self.dt = config.dt
        self.theta = config.theta
        self.corotate = bool(getattr(config, "corotate_lattice", False))

        self.materials = {
            micro.FERRITE: cst.ferrite_params(
                interaction=config.interaction_matrix,
                free_path_max=config.domain_size,
                **getattr(config, "ferrite", {})),
            micro.MARTENSITE: cst.martensite_params(
                interaction=config.interaction_matrix,
                free_path_max=config.domain_size,
                **getattr(config, "martensite", {})),
        }

        ne = self.mesh.n_elements
        npts = ne * N_GP
        self.n_points = npts
        self.stress = np.zeros((npts, 3, 3))
        self.g = np.zeros((npts, crystal.N_SYSTEMS))
        self.rho_gn_screw = np.zeros((npts, crystal.N_SYSTEMS))
        self.rho_gn_edge = np.zeros((npts, crystal.N_SYSTEMS))
        self.rho_ss = np.zeros((npts, crystal.N_SYSTEMS))
        self.gamma_dot = np.zeros((npts, crystal.N_SYSTEMS))
        self.strain = np.zeros((npts, 3, 3))
        self.elastic_strain = np.zeros((npts, 3, 3))
        self.gamma_acc = np.zeros(npts)

        base = crystal.bcc_slip_systems()
        self.groups = []
        keys = np.stack([ms.phase, ms.phi_z], axis=1)
        for phase, phi in {(int(p), float(a)) for p, a in keys}:
            elems = np.flatnonzero((ms.phase == phase) & (ms.phi_z == phi))
            mat = self.materials[phase]
            systems = base.rotated(crystal.Orientation(0.0, 0.0, phi))
            ps, pa = crystal.schmid_tensors(systems.s, systems.m)
            pts = (elems[:, None] * N_GP + np.arange(N_GP)).ravel()
            n = crystal.N_SYSTEMS
            group = _Group(
                phase=phase, phi_z=phi, elems=elems, pts=pts, material=mat,
                systems=systems, p_sym=ps, p_asym=pa,
                c_star=mat.c_star(systems.family),
                elastic_block=cst.plane_strain_stiffness(mat.lame_lambda,
                                                         mat.mu),
                omega_hard=mat.omega_hardening(n),
                omega_forest=mat.omega_forest(n))
            self.groups.append(group)
            self.g[pts] = cst.bailey_hirsch_flow_stress(
                mat.friction(systems.family),
                np.full(n, mat.initial_density), group.omega_hard,
                mat.hardening_coeff, mat.mu, mat.burgers)
            self.rho_ss[pts] = mat.initial_density
        # Deterministic group order regardless of set iteration.
        self.groups.sort(key=lambda grp: (grp.phase, grp.phi_z))

        if self.corotate:
            self.svec = np.empty((npts, crystal.N_SYSTEMS, 3))
            self.mvec = np.empty((npts, crystal.N_SYSTEMS, 3))
            for grp in self.groups:
                self.svec[grp.pts] = grp.systems.s
                self.mvec[grp.pts] = grp.systems.m
        else:
            self.svec = self.mvec = None

        self.t = 0.0
        self.step_index = 0
        self.history = History()
        self._geom: Optional[ElementGeometry] = None

    # -- geometry ----------------------------------------------------------

    @property
    def geometry(self) -> ElementGeometry:
        if self._geom is None:
            self._geom = element_geometry(self.mesh.coords, self.mesh.quads)
        return self._geom

    def _group_tensors(self, grp: _Group):
        """Sample-frame Schmid tensors for one group, shared or per point."""
        if self.corotate:
            s = self.svec[grp.pts]
            m = self.mvec[grp.pts]
            ps, pa = crystal.schmid_tensors(s, m)
            return ps, pa, s, np.cross(s, m)
        return grp.p_sym, grp.p_asym, grp.systems.s, grp.systems.t

    # -- stepping ----------------------------------------------------------

    def step(self) -> None:
        """Advance one time increment."""
        geom = self.geometry
        ne = self.mesh.n_elements
        npts = self.n_points
        dt, theta = self.dt, self.theta

        ctan = np.empty((npts, 3, 3))
        resid = np.zeros((npts, 3))
        free_path = np.empty((npts, crystal.N_SYSTEMS))
        stash = []

        for grp in self.groups:
            pts = grp.pts
            mat = grp.material
            ps, pa, svec, tvec = self._group_tensors(grp)
            t_g = self.stress[pts]
            g_g = self.g[pts]

            rho_tot = disl.gn_net(self.rho_gn_screw[pts],
                                  self.rho_gn_edge[pts]) + self.rho_ss[pts]
            lpath = disl.mean_free_path(rho_tot, grp.omega_forest,
                                        grp.c_star, mat.free_path_min,
                                        mat.free_path_max)
            free_path[pts] = lpath

            tau = np.einsum("...nij,...ij->...n",
                            cst._with_batch(ps, t_g.shape[:-2]), t_g)
            active = (np.abs(tau) / g_g).max(axis=1) > _ELASTIC_RATIO
            ctan[pts] = grp.elastic_block
            entry = dict(grp=grp, active=active, ps=ps, pa=pa,
                         svec=svec, tvec=tvec, lpath=lpath, op=None)
            if np.any(active):
                idx = np.flatnonzero(active)
                ps_a = ps if ps.ndim == 3 else ps[idx]
                pa_a = pa if pa.ndim == 3 else pa[idx]
                h = cst.hardening_matrix(self.rho_ss[pts][idx], lpath[idx],
                                         grp.omega_hard, mat.hardening_coeff,
                                         mat.mu, mat.storage_coeff)
                op = cst.tangent_operator(t_g[idx], g_g[idx], ps_a, pa_a,
                                          mat, dt, theta=theta, h=h)
                gamma_free, y_resp, r_cols = op.response(cst.PLANAR_ROWS)
                ctan_a, resid_a = op.tangent_block(gamma_free, y_resp,
                                                   r_cols, grp.elastic_block)
                ctan[pts[idx]] = ctan_a
                resid[pts[idx]] = resid_a
                entry.update(op=op, idx=idx, gamma_free=gamma_free,
                             y_resp=y_resp)
            stash.append(entry)

        stress_plane = self.stress[:, :2, :2].reshape(ne, N_GP, 2, 2)
        k, rhs = assemble_system(geom, ctan.reshape(ne, N_GP, 3, 3),
                                 stress_plane, resid.reshape(ne, N_GP, 3),
                                 self.edof, self.mesh.n_dofs)
        fixed, values = boundary_conditions(self.mesh, self.top_speed,
                                            self.constrain_lateral)
        v = solve_constrained(k, rhs, fixed, values)

        ve = v[self.edof].reshape(ne, 4, 2)
        d_pts = np.einsum("egka,ea->egk", geom.bbar,
                          v[self.edof]).reshape(npts, 3)
        l2 = np.einsum("egak,eai->egik", geom.dndx, ve).reshape(npts, 2, 2)

        d3 = np.zeros((npts, 3, 3))
        d3[:, 0, 0] = d_pts[:, 0]
        d3[:, 1, 1] = d_pts[:, 1]
        d3[:, 0, 1] = d3[:, 1, 0] = 0.5 * d_pts[:, 2]
        w3 = np.zeros((npts, 3, 3))
        spin = 0.5 * (l2[:, 0, 1] - l2[:, 1, 0])
        w3[:, 0, 1] = spin
        w3[:, 1, 0] = -spin

        self.gamma_dot[:] = 0.0
        lattice_spin = np.zeros((npts, 3, 3)) if self.corotate else None

        for entry in stash:
            grp = entry["grp"]
            pts = grp.pts
            mat = grp.material
            t_g = self.stress[pts]
            d_g = d3[pts]
            w_g = w3[pts]
            tdot = cst.elastic_stress_rate(d_g, mat.lame_lambda, mat.mu)
            gamma = np.zeros((len(pts), crystal.N_SYSTEMS))
            if entry["op"] is not None:
                op = entry["op"]
                idx = entry["idx"]
                da = d_pts[pts][idx]
                gam = entry["gamma_free"] + np.einsum(
                    "paj,pj->pa", entry["y_resp"], da)
                gamma[idx] = gam
                tdot[idx] = op.jaumann_stress_rate(d_g[idx], gam)
            tdot += w_g @ t_g - t_g @ w_g

            self.stress[pts] = t_g + dt * tdot
            self.gamma_dot[pts] = gamma

            ps = entry["ps"]
            if ps.ndim == 3:
                dp = np.einsum("pa,aij->pij", gamma, ps)
            else:
                dp = np.einsum("pa,paij->pij", gamma, ps)
            self.strain[pts] += dt * d_g
            self.elastic_strain[pts] += dt * (d_g - dp)
            self.gamma_acc[pts] += dt * np.abs(gamma).sum(axis=1)

            # Flow stress marches with the same pre-step path and density
            # used in the linearization.
            gdot_h = cst.hardening_matrix(
                self.rho_ss[pts], entry["lpath"], grp.omega_hard,
                mat.hardening_coeff, mat.mu, mat.storage_coeff)
            self.g[pts] = cst.update_flow_stress(self.g[pts], gdot_h,
                                                 gamma, dt)
            if self.corotate:
                if ps.ndim == 3:
                    wp = np.einsum("pa,aij->pij", gamma, entry["pa"])
                else:
                    wp = np.einsum("pa,paij->pij", gamma, entry["pa"])
                lattice_spin[pts] = w_g - wp

        if not np.all(np.isfinite(self.stress)):
            bad = int(np.argwhere(~np.isfinite(
                self.stress).reshape(npts, -1).all(axis=1))[0, 0]) // N_GP
            raise cst.ConstitutiveError(
                "non-finite stress in element %d at step %d"
                % (bad, self.step_index + 1))

        # GN densities from the recovered slip-rate gradients; stored
        # densities from local activity over the mean free path.
        gamma_elem = self.gamma_dot.reshape(ne, N_GP, -1).mean(axis=1)
        grads = slip_rate_gradient(self.mesh, geom, gamma_elem)
        for entry in stash:
            grp = entry["grp"]
            pts = grp.pts
            mat = grp.material
            grad_e = grads[grp.elems]
            svec, tvec = entry["svec"], entry["tvec"]
            if svec.ndim == 2:
                screw = np.einsum("enk,nk->en", grad_e, tvec[:, :2])
                edge = -np.einsum("enk,nk->en", grad_e, svec[:, :2])
                screw = np.repeat(screw, N_GP, axis=0)
                edge = np.repeat(edge, N_GP, axis=0)
            else:
                grad_p = np.repeat(grad_e, N_GP, axis=0)
                screw = np.einsum("pnk,pnk->pn", grad_p, tvec[..., :2])
                edge = -np.einsum("pnk,pnk->pn", grad_p, svec[..., :2])
            b = mat.burgers
            self.rho_gn_screw[pts] += dt * screw / b
            self.rho_gn_edge[pts] += dt * edge / b
            self.rho_ss[pts] += dt * disl.ss_rate(
                self.gamma_dot[pts], entry["lpath"], mat.storage_coeff, b)

        if self.corotate:
            self._rotate_lattice(lattice_spin, dt)

        self.mesh.coords += dt * v.reshape(-1, 2)
        self._geom = None
        self.t += dt
        self.step_index += 1
        self._record()

    def _rotate_lattice(self, spin: np.ndarray, dt: float) -> None:
        """Rotate per-point slip vectors by the substructure spin."""
        axial = np.stack([spin[:, 2, 1], spin[:, 0, 2], spin[:, 1, 0]],
                         axis=1) * dt
        angle = np.linalg.norm(axial, axis=1)
        small = angle < 1.0e-30
        axis = np.where(small[:, None], np.array([0.0, 0.0, 1.0]),
                        axial / np.where(small, 1.0, angle)[:, None])
        kmat = np.zeros((len(angle), 3, 3))
        kmat[:, 0, 1] = -axis[:, 2]
        kmat[:, 0, 2] = axis[:, 1]
        kmat[:, 1, 0] = axis[:, 2]
        kmat[:, 1, 2] = -axis[:, 0]
        kmat[:, 2, 0] = axis[:, 0]
        kmat[:, 2, 1] = -axis[:, 1]
        sin = np.sin(angle)[:, None, None]
        cos = (1.0 - np.cos(angle))[:, None, None]
        rot = np.eye(3)[None] + sin * kmat + cos * (kmat @ kmat)
        self.svec = np.einsum("pij,pnj->pni", rot, self.svec)
        self.mvec = np.einsum("pij,pnj->pni", rot, self.mvec)
        self.svec /= np.linalg.norm(self.svec, axis=2, keepdims=True)
        self.mvec /= np.linalg.norm(self.mvec, axis=2, keepdims=True)

    def run(self, n_steps: Optional[int] = None, callback=None) -> History:
        total = self.cfg.n_steps if n_steps is None else n_steps
        for _ in range(total):
            self.step()
            if callback is not None:
                callback(self)
        return self.history

    # -- observables -------------------------------------------------------

    def element_mean(self, point_field: np.ndarray) -> np.ndarray:
        """Average a per-point scalar over each element."""
        return point_field.reshape(self.mesh.n_elements, N_GP).mean(axis=1)

    def element_axial_stress(self) -> np.ndarray:
        """Element axial stress from the elastic strain and Young modulus
        of the element phase (the partitioning observable)."""
        eyy = self.element_mean(self.elastic_strain[:, 1, 1])
        e_mod = np.array([self.materials[micro.FERRITE].young_modulus,
                          self.materials[micro.MARTENSITE].young_modulus])
        return e_mod[self.ms.phase] * eyy

    def element_equivalent_strain(self) -> np.ndarray:
        return self.element_mean(post.equivalent_strain(self.strain))

    def element_equivalent_stress(self) -> np.ndarray:
        return self.element_mean(post.equivalent_stress(self.stress))

    def element_rho_gn(self) -> np.ndarray:
        """Net GN density summed over systems, per element."""
        net = disl.gn_net(self.rho_gn_screw, self.rho_gn_edge).sum(axis=1)
        return self.element_mean(net)

    def element_rho_ss(self) -> np.ndarray:
        return self.element_mean(self.rho_ss.sum(axis=1))

    def nominal_stress(self) -> float:
        """Total y-reaction on the top surface over the initial section
        (unit out-of-plane thickness)."""
        sv = np.stack([self.stress[:, 0, 0], self.stress[:, 1, 1],
                       self.stress[:, 0, 1]], axis=1)
        f = internal_forces(self.geometry,
                            sv.reshape(self.mesh.n_elements, N_GP, 3),
                            self.edof, self.mesh.n_dofs)
        top = self.mesh.top_nodes()
        return float(f[2 * top + 1].sum()) / self.mesh.width0

    def reaction_sums(self):
        """(top, bottom) sums of nodal y-forces, for equilibrium checks."""
        sv = np.stack([self.stress[:, 0, 0], self.stress[:, 1, 1],
                       self.stress[:, 0, 1]], axis=1)
        f = internal_forces(self.geometry,
                            sv.reshape(self.mesh.n_elements, N_GP, 3),
                            self.edof, self.mesh.n_dofs)
        top = float(f[2 * self.mesh.top_nodes() + 1].sum())
        bottom = float(f[2 * self.mesh.bottom_nodes() + 1].sum())
        return top, bottom

    def _phase_mean(self, elem_field: np.ndarray, phase: int) -> float:
        mask = self.ms.phase == phase
        if not np.any(mask):
            return float("nan")
        return float(elem_field[mask].mean())

    def _record(self) -> None:
        h = self.history
        sig = self.element_axial_stress()
        eeq = self.element_equivalent_strain()
        rg = self.element_rho_gn()
        rs = self.element_rho_ss()
        h.t.append(self.t)
        h.eps_eq.append(float(eeq.mean()))
        h.sigma_n.append(self.nominal_stress())
        h.sigma_yy_f.append(self._phase_mean(sig, micro.FERRITE))
        h.sigma_yy_m.append(self._phase_mean(sig, micro.MARTENSITE))
        h.eps_eq_f.append(self._phase_mean(eeq, micro.FERRITE))
        h.eps_eq_m.append(self._phase_mean(eeq, micro.MARTENSITE))
        h.rho_gn_f.append(self._phase_mean(rg, micro.FERRITE))
        h.rho_gn_m.append(self._phase_mean(rg, micro.MARTENSITE))
        h.rho_ss_f.append(self._phase_mean(rs, micro.FERRITE))
        h.rho_ss_m.append(self._phase_mean(rs, micro.MARTENSITE))


# ---------------------------------------------------------------------------
# checkpointing

def write_checkpoint(sim: Simulation, path) -> None:
    """Full simulation state as a versioned npz bundle."""
    data = dict(
        format=CHECKPOINT_FORMAT, t=sim.t, step_index=sim.step_index,
        coords=sim.mesh.coords, stress=sim.stress, g=sim.g,
        rho_gn_screw=sim.rho_gn_screw, rho_gn_edge=sim.rho_gn_edge,
        rho_ss=sim.rho_ss, gamma_dot=sim.gamma_dot, strain=sim.strain,
        elastic_strain=sim.elastic_strain, gamma_acc=sim.gamma_acc,
        ms_phase=sim.ms.phase, ms_grain=sim.ms.grain_id, ms_phi=sim.ms.phi_z,
        ms_shape=np.array([sim.ms.nx, sim.ms.ny]),
        ms_spacing=np.array([sim.ms.dx, sim.ms.dy]))
    if sim.corotate:
        data["svec"] = sim.svec
        data["mvec"] = sim.mvec
    np.savez_compressed(path, **data)


def load_checkpoint(config, path) -> Simulation:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != CHECKPOINT_FORMAT:
            raise ValueError("unsupported checkpoint format %r"
                             % str(z["format"]))
        nx, ny = (int(v) for v in z["ms_shape"])
        dx, dy = (float(v) for v in z["ms_spacing"])
        ms = micro.Microstructure(
            nx=nx, ny=ny, dx=dx, dy=dy, phase=z["ms_phase"],
            grain_id=z["ms_grain"], phi_z=z["ms_phi"])
        sim = Simulation(config, ms)
        sim.t = float(z["t"])
        sim.step_index = int(z["step_index"])
        sim.mesh.coords = z["coords"].copy()
        sim._geom = None
        for name in ("stress", "g", "rho_gn_screw", "rho_gn_edge", "rho_ss",
                     "gamma_dot", "strain", "elastic_strain", "gamma_acc"):
            getattr(sim, name)[...] = z[name]
        if sim.corotate:
            sim.svec[...] = z["svec"]
            sim.mvec[...] = z["mvec"]
    return sim
