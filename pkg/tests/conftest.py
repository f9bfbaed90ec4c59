"""Shared fixtures: slip systems and a small cached simulation."""

import numpy as np
import pytest

from dpcp import config as cfgmod
from dpcp import fem, microstructure


@pytest.fixture(scope="session")
def systems():
    from dpcp import crystal
    return crystal.bcc_slip_systems()


@pytest.fixture(scope="session")
def small_two_phase_sim():
    """A 16x16 two-phase run of 40 steps, shared read-only across tests."""
    cfg = cfgmod.SimulationConfig(nx=16, ny=16, dt=0.5,
                                  total_displacement=0.16)
    sim = fem.Simulation(cfg)
    sim.run()
    return sim


@pytest.fixture
def uniform_sim_factory():
    """Builds fresh single-phase simulations on demand."""

    def build(nx=8, ny=8, phi_z=0.0, dt=0.5, total_displacement=0.16,
              constrain_lateral=False, **cfg_kwargs):
        cfg = cfgmod.SimulationConfig(nx=nx, ny=ny, dt=dt,
                                      total_displacement=total_displacement,
                                      **cfg_kwargs)
        ms = microstructure.single_phase(cfg.domain_size, nx, ny,
                                         phi_z=phi_z)
        return fem.Simulation(cfg, ms=ms, constrain_lateral=constrain_lateral)

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
