"""Elastoviscoplastic single-crystal response for ferrite and martensite.

Power-law slip kinetics on 24 BCC systems, Bailey-Hirsch flow stress carried
by the stored-dislocation density, and a theta-weighted rate-tangent stress
update (tangent modulus method) whose linearized slip rates also furnish the
consistent moduli for the FE assembly.  Stresses are MPa, lengths um,
times s.

The Jaumann rate used in the equilibrium statement and the
Mandel-Kratochvil rate corotating with the lattice substructure differ by
the plastic-spin terms; both appear below through the combined slip-response
tensors R = C_e : P_sym + P_asym T - T P_asym.  Lattice vectors are kept
fixed in the sample frame by default (see the corotate flag on the FE
engine).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import crystal
from .dislocation import (DislocationState, foreign_interaction_matrix,
                          gn_net, integrate_state, mean_free_path, ss_rate)

RATIO_CAP = 10.0

# Stress/strain component bookkeeping for tangent blocks: plane components
# (xx, yy, xy) for the 2D assembly, full Voigt order for point updates.
PLANAR_ROWS = ((0, 0), (1, 1), (0, 1))
VOIGT_ROWS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class ConstitutiveError(RuntimeError):
    """Non-finite or unsolvable point update; message carries diagnostics."""


@dataclass(frozen=True)
class PhaseMaterial:
    """Single-phase parameter set with derived elastic constants.

    Per-family values are expanded to per-system arrays through the family
    index of the slip-system set.  flow_stress_* are the tabulated initial
    flow stresses retained for consistency checks; the run-time initial g
    is computed from the Bailey-Hirsch relation at initial_density.
    """

    name: str
    young_modulus: float        # MPa
    poisson: float
    initial_density: float      # 1/um^2, per system
    rate_sensitivity: float     # m
    ref_slip_rate: float        # 1/s
    burgers: float              # um
    hardening_coeff: float      # a
    storage_coeff: float        # c
    c_star_110: float
    c_star_112: float
    friction_110: float         # MPa
    friction_112: float
    flow_stress_110: float      # MPa, tabulated initial value
    flow_stress_112: float
    interaction: str = "identity"
    free_path_max: float = 80.0  # um, clamps the mean free path

    @property
    def mu(self) -> float:
        return self.young_modulus / (2.0 * (1.0 + self.poisson))

    @property
    def lame_lambda(self) -> float:
        e, nu = self.young_modulus, self.poisson
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def free_path_min(self) -> float:
        return 10.0 * self.burgers

    def per_family(self, v110: float, v112: float,
                   family: np.ndarray) -> np.ndarray:
        return np.where(family == crystal.FAMILY_110, v110, v112)

    def c_star(self, family: np.ndarray) -> np.ndarray:
        return self.per_family(self.c_star_110, self.c_star_112, family)

    def friction(self, family: np.ndarray) -> np.ndarray:
        return self.per_family(self.friction_110, self.friction_112, family)

    def tabulated_flow_stress(self, family: np.ndarray) -> np.ndarray:
        return self.per_family(self.flow_stress_110, self.flow_stress_112,
                               family)

    def omega_hardening(self, n: int) -> np.ndarray:
        """Hardening interaction matrix Omega; the identity choice
        reproduces the tabulated initial flow stresses."""
        if self.interaction == "identity":
            return np.eye(n)
        if self.interaction == "dense":
            return np.ones((n, n))
        raise ValueError("unknown interaction matrix %r" % self.interaction)

    def omega_forest(self, n: int) -> np.ndarray:
        return foreign_interaction_matrix(n)


_FERRITE = dict(
    name="ferrite", young_modulus=205900.0, poisson=0.3,
    initial_density=1.0, rate_sensitivity=0.007, ref_slip_rate=1.0e-3,
    burgers=2.49e-4, hardening_coeff=0.1, storage_coeff=1.1,
    c_star_110=29.0, c_star_112=10.0,
    friction_110=23.0, friction_112=28.0,
    flow_stress_110=24.9, flow_stress_112=29.9)

_MARTENSITE = dict(
    name="martensite", young_modulus=237300.0, poisson=0.333,
    initial_density=1000.0, rate_sensitivity=0.01, ref_slip_rate=1.0e-3,
    burgers=2.49e-4, hardening_coeff=0.1, storage_coeff=1.1,
    c_star_110=10.0, c_star_112=10.0,
    friction_110=23.0, friction_112=28.0,
    flow_stress_110=93.0, flow_stress_112=98.0)


def ferrite_params(**overrides) -> PhaseMaterial:
    """Built-in DP-steel ferrite parameter set; the reference slip rate
    reads the literature value 1.0 per millisecond as 1.0e-3 / s."""
    return PhaseMaterial(**{**_FERRITE, **overrides})


def martensite_params(**overrides) -> PhaseMaterial:
    """Built-in DP-steel martensite parameter set."""
    return PhaseMaterial(**{**_MARTENSITE, **overrides})


# ---------------------------------------------------------------------------
# elasticity

def elastic_stress_rate(d: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """Isotropic C_e : D for stretch-rate tensors shaped (..., 3, 3)."""
    tr = np.trace(d, axis1=-2, axis2=-1)
    out = 2.0 * mu * d
    out[..., 0, 0] += lam * tr
    out[..., 1, 1] += lam * tr
    out[..., 2, 2] += lam * tr
    return out


def plane_strain_stiffness(lam: float, mu: float) -> np.ndarray:
    """3x3 elastic block mapping (Dxx, Dyy, 2Dxy) to (Txx, Tyy, Txy)."""
    return np.array([[lam + 2 * mu, lam, 0.0],
                     [lam, lam + 2 * mu, 0.0],
                     [0.0, 0.0, mu]])


def voigt_stiffness(lam: float, mu: float) -> np.ndarray:
    """6x6 elastic block in Voigt order with engineering shear strains."""
    c = np.diag([2 * mu, 2 * mu, 2 * mu, mu, mu, mu]).astype(float)
    c[:3, :3] += lam
    return c


# ---------------------------------------------------------------------------
# slip kinetics and hardening

def slip_rate(tau: np.ndarray, g: np.ndarray, ref_rate: float,
              m_exp: float, cap: float = RATIO_CAP) -> np.ndarray:
    """Power-law slip rate, odd in tau, with the stress ratio clamped at
    cap before exponentiation to keep the power finite."""
    ratio = np.minimum(np.abs(tau) / g, cap)
    return ref_rate * np.sign(tau) * ratio ** (1.0 / m_exp)


def slip_rate_tau_derivative(tau: np.ndarray, g: np.ndarray, ref_rate: float,
                             m_exp: float,
                             cap: float = RATIO_CAP) -> np.ndarray:
    """d(slip rate)/d(tau) of the clamped power law (non-negative)."""
    n = 1.0 / m_exp
    ratio = np.minimum(np.abs(tau) / g, cap)
    return ref_rate * n * ratio ** (n - 1.0) / g


def bailey_hirsch_flow_stress(tau_y: np.ndarray, rho_hard: np.ndarray,
                              omega: np.ndarray, a_coeff: float, mu: float,
                              burgers: float) -> np.ndarray:
    """g = tau_y + a mu b sum_b Omega[a, b] sqrt(rho_hard[b])."""
    root = np.sqrt(rho_hard)
    return np.asarray(tau_y) + a_coeff * mu * burgers * np.einsum(
        "ab,...b->...a", omega, root)


def hardening_matrix(rho_hard: np.ndarray, free_path: np.ndarray,
                     omega: np.ndarray, a_coeff: float, mu: float,
                     c_mult: float) -> np.ndarray:
    """Hardening moduli h[a, b] = a mu Omega[a, b] c / (2 L[b] sqrt(rho[b])).

    Differentiating the Bailey-Hirsch flow stress along the stored-density
    evolution gives exactly these moduli, so incremental hardening stays
    consistent with the algebraic flow stress.
    """
    inv = 1.0 / (free_path * np.sqrt(rho_hard))
    return 0.5 * a_coeff * mu * c_mult * omega * inv[..., None, :]


def flow_stress_rate(h: np.ndarray, gamma_dot: np.ndarray) -> np.ndarray:
    """g_dot[a] = sum_b h[a, b] |gamma_dot[b]|."""
    return np.einsum("...ab,...b->...a", h, np.abs(gamma_dot))


def update_flow_stress(g: np.ndarray, h: np.ndarray, gamma_dot: np.ndarray,
                       dt: float) -> np.ndarray:
    """Explicit Euler step of the flow stress."""
    return g + dt * flow_stress_rate(h, gamma_dot)


# ---------------------------------------------------------------------------
# rate-tangent machinery

def _with_batch(arr: np.ndarray, batch: tuple) -> np.ndarray:
    """Broadcast per-system tensors to a leading batch shape."""
    return np.broadcast_to(arr, batch + arr.shape[-3:])


@dataclass
class TangentOperator:
    """Linearized slip-rate system for one batch of material points.

    Solving A gamma = gamma_t + theta dt F (R : D) yields the
    theta-weighted slip rates of the step; the same pieces produce the
    consistent tangent blocks for assembly.
    """

    tau: np.ndarray          # (..., n)
    gamma_t: np.ndarray      # (..., n) slip rates at the current state
    dgamma_dtau: np.ndarray  # (..., n)
    a_matrix: np.ndarray     # (..., n, n)
    r_tensors: np.ndarray    # (..., n, 3, 3)
    theta_dt: float
    lam: float
    mu: float

    def response(self, rows=PLANAR_ROWS):
        """Free slip rates (at D = 0) and the response of the slip rates
        to unit strain-rate modes for the requested stress components."""
        idx_i = [r[0] for r in rows]
        idx_j = [r[1] for r in rows]
        r_cols = self.r_tensors[..., idx_i, idx_j]
        rhs = np.concatenate(
            [self.gamma_t[..., None],
             self.theta_dt * self.dgamma_dtau[..., None] * r_cols], axis=-1)
        try:
            x = np.linalg.solve(self.a_matrix, rhs)
        except np.linalg.LinAlgError as exc:
            raise ConstitutiveError(
                "singular slip-rate system: %s" % exc) from exc
        return x[..., 0], x[..., 1:], r_cols

    def slip_rates(self, d: np.ndarray) -> np.ndarray:
        """theta-weighted slip rates for a known stretch rate D."""
        rd = np.einsum("...nij,...ij->...n", self.r_tensors, d)
        rhs = self.gamma_t + self.theta_dt * self.dgamma_dtau * rd
        try:
            return np.linalg.solve(self.a_matrix, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ConstitutiveError(
                "singular slip-rate system: %s" % exc) from exc

    def jaumann_stress_rate(self, d: np.ndarray,
                            gamma_dot: np.ndarray) -> np.ndarray:
        """C_e : D minus the slip contributions of the R tensors."""
        return elastic_stress_rate(d, self.lam, self.mu) - np.einsum(
            "...nij,...n->...ij", self.r_tensors, gamma_dot)

    def tangent_block(self, gamma_free, y_response, r_cols,
                      elastic_block) -> tuple:
        """Consistent moduli and the residual stress-rate vector for the
        component rows used in response()."""
        ctan = elastic_block - np.einsum("...nk,...nj->...kj", r_cols,
                                         y_response)
        resid = -np.einsum("...nk,...n->...k", r_cols, gamma_free)
        return ctan, resid


def tangent_operator(stress: np.ndarray, g: np.ndarray, p_sym: np.ndarray,
                     p_asym: np.ndarray, material: PhaseMaterial, dt: float,
                     theta: float = 0.5,
                     h: Optional[np.ndarray] = None) -> TangentOperator:
    """Build the rate-tangent slip system for a batch of points.

    p_sym / p_asym are the sample-frame Schmid tensors, either shared
    (n, 3, 3) or per point (..., n, 3, 3); h is the optional hardening
    matrix coupling (its absence drops the flow-stress feedback from the
    linearization, not from the update).
    """
    batch = stress.shape[:-2]
    ps = _with_batch(p_sym, batch)
    pa = _with_batch(p_asym, batch)
    lam, mu = material.lame_lambda, material.mu

    tau = np.einsum("...nij,...ij->...n", ps, stress)
    gamma_t = slip_rate(tau, g, material.ref_slip_rate,
                        material.rate_sensitivity)
    dgam = slip_rate_tau_derivative(tau, g, material.ref_slip_rate,
                                    material.rate_sensitivity)

    # R = C_e : P_sym + P_asym T - T P_asym; the trace-free P_sym turns the
    # elastic part into 2 mu P_sym.
    q = pa @ stress[..., None, :, :] - stress[..., None, :, :] @ pa
    r = 2.0 * mu * ps + q

    n = ps.shape[-3]
    flat_r = r.reshape(-1, n, 9)
    flat_ps = ps.reshape(-1, n, 9)
    rps = (flat_r @ flat_ps.transpose(0, 2, 1)).reshape(batch + (n, n))

    theta_dt = theta * dt
    a = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
    a += theta_dt * dgam[..., None] * rps
    if h is not None:
        # dgamma/dg = -(1/m) gamma / g; linearize |gamma| with sign(gamma_t).
        dgam_dg = -(1.0 / material.rate_sensitivity) * gamma_t / g
        a -= theta_dt * dgam_dg[..., None] * (
            h * np.sign(gamma_t)[..., None, :])
    return TangentOperator(tau=tau, gamma_t=gamma_t, dgamma_dtau=dgam,
                           a_matrix=a, r_tensors=r, theta_dt=theta_dt,
                           lam=lam, mu=mu)


# ---------------------------------------------------------------------------
# point-level state and update

@dataclass
class IntegrationPointState:
    """Full state of one material point."""

    material: PhaseMaterial
    systems: crystal.SlipSystemSet      # rotated into the sample frame
    stress: np.ndarray                  # (3, 3)
    g: np.ndarray                       # (n,)
    dislocations: DislocationState      # (n,) components
    gamma_dot: np.ndarray = field(default=None)
    strain: np.ndarray = field(default=None)
    elastic_strain: np.ndarray = field(default=None)
    gamma_acc: float = 0.0

    def __post_init__(self):
        n = len(self.systems)
        if self.gamma_dot is None:
            self.gamma_dot = np.zeros(n)
        if self.strain is None:
            self.strain = np.zeros((3, 3))
        if self.elastic_strain is None:
            self.elastic_strain = np.zeros((3, 3))

    @classmethod
    def initial(cls, material: PhaseMaterial,
                orientation: crystal.Orientation) -> "IntegrationPointState":
        """Stress-free state; the initial flow stress comes from the
        Bailey-Hirsch relation at the initial stored density."""
        systems = crystal.bcc_slip_systems().rotated(orientation)
        n = len(systems)
        rho = np.full(n, material.initial_density)
        g0 = bailey_hirsch_flow_stress(
            material.friction(systems.family), rho,
            material.omega_hardening(n), material.hardening_coeff,
            material.mu, material.burgers)
        return cls(material=material, systems=systems,
                   stress=np.zeros((3, 3)), g=g0,
                   dislocations=DislocationState.initial((n,),
                                                         material.initial_density))


@dataclass
class TangentUpdate:
    """Outcome of one rate-tangent point update."""

    stress_rate: np.ndarray          # material rate of Cauchy stress
    jaumann_rate: np.ndarray
    gamma_dot: np.ndarray
    plastic_stretch: np.ndarray      # sum gamma_dot P_sym
    plastic_spin: np.ndarray         # sum gamma_dot P_asym
    lattice_spin: np.ndarray         # W - plastic spin
    free_path: np.ndarray
    moduli: Optional[np.ndarray] = None   # 6x6 consistent tangent


def tangent_stress_update(state: IntegrationPointState, d: np.ndarray,
                          w: np.ndarray, dt: float, theta: float = 0.5,
                          with_moduli: bool = False) -> TangentUpdate:
    """One tangent-modulus stress update for a single point.

    d and w are the symmetric and skew parts of the velocity gradient;
    the returned rates are not applied to the state (see
    apply_point_update).
    """
    mat = state.material
    systems = state.systems
    n = len(systems)
    ps, pa = crystal.schmid_tensors(systems.s, systems.m)

    rho_total = gn_net(state.dislocations.rho_gn_screw,
                       state.dislocations.rho_gn_edge) + \
        state.dislocations.rho_ss
    free_path = mean_free_path(rho_total, mat.omega_forest(n),
                               mat.c_star(systems.family),
                               mat.free_path_min, mat.free_path_max)
    h = hardening_matrix(state.dislocations.rho_ss, free_path,
                         mat.omega_hardening(n), mat.hardening_coeff,
                         mat.mu, mat.storage_coeff)

    op = tangent_operator(state.stress, state.g, ps, pa, mat, dt,
                          theta=theta, h=h)
    gamma = op.slip_rates(d)
    jaumann = op.jaumann_stress_rate(d, gamma)
    stress_rate = jaumann + w @ state.stress - state.stress @ w

    if not np.all(np.isfinite(stress_rate)) or not np.all(np.isfinite(gamma)):
        worst = int(np.argmax(np.abs(op.tau) / state.g))
        raise ConstitutiveError(
            "non-finite point update (%s, system %d, |tau|/g = %.3g)"
            % (mat.name, worst, float(np.abs(op.tau[worst]) / state.g[worst])))

    moduli = None
    if with_moduli:
        gamma_free, y, r_cols = op.response(VOIGT_ROWS)
        moduli, _ = op.tangent_block(
            gamma_free, y, r_cols, voigt_stiffness(op.lam, op.mu))

    plastic_stretch = np.einsum("n,nij->ij", gamma, ps)
    plastic_spin = np.einsum("n,nij->ij", gamma, pa)
    return TangentUpdate(stress_rate=stress_rate, jaumann_rate=jaumann,
                         gamma_dot=gamma, plastic_stretch=plastic_stretch,
                         plastic_spin=plastic_spin,
                         lattice_spin=w - plastic_spin,
                         free_path=free_path, moduli=moduli)


def apply_point_update(state: IntegrationPointState, update: TangentUpdate,
                       d: np.ndarray, dt: float) -> None:
    """Integrate stress, strains and hardening over one step in place."""
    mat = state.material
    state.stress = state.stress + dt * update.stress_rate
    state.strain = state.strain + dt * d
    state.elastic_strain = state.elastic_strain + dt * (
        d - update.plastic_stretch)
    state.gamma_acc += dt * float(np.abs(update.gamma_dot).sum())

    h = hardening_matrix(state.dislocations.rho_ss, update.free_path,
                         mat.omega_hardening(len(state.systems)),
                         mat.hardening_coeff, mat.mu, mat.storage_coeff)
    state.g = update_flow_stress(state.g, h, update.gamma_dot, dt)
    rate_ss = ss_rate(update.gamma_dot, update.free_path, mat.storage_coeff,
                      mat.burgers)
    zero = np.zeros_like(rate_ss)
    state.dislocations = integrate_state(state.dislocations, zero, zero,
                                         rate_ss, dt)
    state.gamma_dot = update.gamma_dot
