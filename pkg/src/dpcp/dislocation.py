"""Dislocation-density evolution per slip system.

Geometrically necessary (GN) screw/edge components accumulate from slip-rate
gradients projected on the system vectors; statistically stored (SS) density
accumulates from slip activity over the mean free path.  Densities are in
1/um^2, lengths in um, rates in 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DislocationState:
    """Signed GN components and SS density, shape (..., n_systems)."""

    rho_gn_screw: np.ndarray
    rho_gn_edge: np.ndarray
    rho_ss: np.ndarray

    @classmethod
    def initial(cls, shape, rho_0: float) -> "DislocationState":
        """All GN components zero, SS density at rho_0 on every system."""
        return cls(rho_gn_screw=np.zeros(shape),
                   rho_gn_edge=np.zeros(shape),
                   rho_ss=np.full(shape, float(rho_0)))

    def copy(self) -> "DislocationState":
        return DislocationState(self.rho_gn_screw.copy(),
                                self.rho_gn_edge.copy(),
                                self.rho_ss.copy())


def gn_rates(grad_rate: np.ndarray, s: np.ndarray, t: np.ndarray,
             burgers: float):
    """Screw and edge GN density rates from a slip-rate gradient.

    rho_dot_screw = (grad . t) / b and rho_dot_edge = -(grad . s) / b,
    broadcast over leading axes; grad_rate has a trailing axis of 3 (a 2D
    gradient can be passed with a zero third component).
    """
    g = np.asarray(grad_rate)
    screw = np.einsum("...i,...i->...", g, t) / burgers
    edge = -np.einsum("...i,...i->...", g, s) / burgers
    return screw, edge


def gn_net(rho_screw: np.ndarray, rho_edge: np.ndarray) -> np.ndarray:
    """Net GN density, the root-sum-square of the signed components."""
    return np.hypot(rho_screw, rho_edge)


def mean_free_path(rho_total: np.ndarray, omega_forest: np.ndarray,
                   c_star: np.ndarray, l_min: float,
                   l_max: float) -> np.ndarray:
    """Mean free path L = c* / sqrt(sum_g omega[b, g] rho_total[g]).

    rho_total is GN plus SS per system, shape (..., n); omega_forest is the
    (n, n) forest-interaction weight matrix; c_star per system.  The result
    is clamped to [l_min, l_max], which also covers a zero forest density.
    """
    forest = np.einsum("...g,bg->...b", rho_total, omega_forest)
    with np.errstate(divide="ignore"):
        length = np.asarray(c_star) / np.sqrt(forest)
    return np.clip(length, l_min, l_max)


def foreign_interaction_matrix(n: int) -> np.ndarray:
    """Forest weights counting every system except the one itself."""
    return np.ones((n, n)) - np.eye(n)


def ss_rate(gamma_dot: np.ndarray, free_path: np.ndarray, c_mult: float,
            burgers: float) -> np.ndarray:
    """SS storage rate rho_dot = c |gamma_dot| / (b L), elementwise."""
    return c_mult * np.abs(gamma_dot) / (burgers * free_path)


def integrate_state(state: DislocationState, screw_rate: np.ndarray,
                    edge_rate: np.ndarray, ss_rate_: np.ndarray,
                    dt: float) -> DislocationState:
    """Explicit Euler update of all density components."""
    return DislocationState(
        rho_gn_screw=state.rho_gn_screw + dt * screw_rate,
        rho_gn_edge=state.rho_gn_edge + dt * edge_rate,
        rho_ss=state.rho_ss + dt * ss_rate_)
