"""Single-crystal response: kinetics, hardening, rate-tangent update."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dpcp import constitutive as cst
from dpcp import crystal

FERRITE = cst.ferrite_params()
MARTENSITE = cst.martensite_params()


def random_symmetric(rng, scale=1.0):
    t = rng.normal(size=(3, 3)) * scale
    return 0.5 * (t + t.T)


# ---------------------------------------------------------------------------
# parameters and elasticity

def test_derived_elastic_constants():
    assert FERRITE.mu == pytest.approx(79192.30769230769, rel=1e-12)
    assert MARTENSITE.mu == pytest.approx(89009.75243810953, rel=1e-12)
    lam = FERRITE.lame_lambda
    assert lam + 2 * FERRITE.mu == pytest.approx(277173.076923, rel=1e-9)
    assert FERRITE.free_path_min == pytest.approx(2.49e-3)


def test_per_family_expansion(systems):
    cs = FERRITE.c_star(systems.family)
    assert set(cs[systems.family == crystal.FAMILY_110]) == {29.0}
    assert set(cs[systems.family == crystal.FAMILY_112]) == {10.0}
    fric = FERRITE.friction(systems.family)
    assert set(fric) == {23.0, 28.0}


def test_interaction_matrices():
    assert np.array_equal(FERRITE.omega_hardening(4), np.eye(4))
    dense = cst.ferrite_params(interaction="dense")
    assert (dense.omega_hardening(4) == 1.0).all()
    with pytest.raises(ValueError, match="unknown interaction"):
        cst.ferrite_params(interaction="banded").omega_hardening(4)


def test_elastic_stress_rate_matches_voigt(rng):
    d = random_symmetric(rng, 1e-3)
    lam, mu = FERRITE.lame_lambda, FERRITE.mu
    full = cst.elastic_stress_rate(d.copy(), lam, mu)
    cv = cst.voigt_stiffness(lam, mu)
    vec = np.array([d[0, 0], d[1, 1], d[2, 2],
                    2 * d[1, 2], 2 * d[0, 2], 2 * d[0, 1]])
    tv = cv @ vec
    assert_allclose([full[0, 0], full[1, 1], full[2, 2],
                     full[1, 2], full[0, 2], full[0, 1]], tv, rtol=1e-12)

    plane = cst.plane_strain_stiffness(lam, mu)
    d2 = np.array([d[0, 0], d[1, 1], 2 * d[0, 1]])
    t2 = plane @ d2
    d3 = d.copy()
    d3[2, :] = d3[:, 2] = 0.0
    full2 = cst.elastic_stress_rate(d3, lam, mu)
    assert_allclose([full2[0, 0], full2[1, 1], full2[0, 1]], t2, rtol=1e-12)


# ---------------------------------------------------------------------------
# slip kinetics

def test_slip_rate_reference_point_and_oddness():
    g = np.array([24.9719])
    assert cst.slip_rate(g.copy(), g, 1e-3, 0.007) == pytest.approx(1e-3)
    assert cst.slip_rate(np.array([0.0]), g, 1e-3, 0.007) == 0.0
    fwd = cst.slip_rate(1.01 * g, g, 1e-3, 0.007)
    rev = cst.slip_rate(-1.01 * g, g, 1e-3, 0.007)
    assert_allclose(fwd, -rev, rtol=1e-15)
    assert fwd[0] == pytest.approx(4.1432306600e-3, rel=1e-9)
    mart = cst.slip_rate(1.01 * g, g, 1e-3, 0.01)
    assert mart[0] == pytest.approx(2.7048138294e-3, rel=1e-9)


def test_slip_rate_ratio_cap():
    g = np.array([25.0])
    at_cap = cst.slip_rate(10.0 * g, g, 1e-3, 0.007)
    beyond = cst.slip_rate(500.0 * g, g, 1e-3, 0.007)
    assert np.isfinite(at_cap).all()
    assert_allclose(beyond, at_cap, rtol=1e-15)


def test_slip_rate_derivative_matches_difference():
    g = np.full(5, 25.0)
    tau = np.array([-20.0, -5.0, 3.0, 15.0, 24.0])
    drv = cst.slip_rate_tau_derivative(tau, g, 1e-3, 0.007)
    eps = 1e-7
    num = (cst.slip_rate(tau + eps, g, 1e-3, 0.007)
           - cst.slip_rate(tau - eps, g, 1e-3, 0.007)) / (2 * eps)
    assert_allclose(drv, num, rtol=1e-5)
    assert (drv >= 0.0).all()


# ---------------------------------------------------------------------------
# hardening

def test_initial_flow_stress_values(systems):
    for mat, expected in ((FERRITE, (24.971888, 29.971888)),
                          (MARTENSITE, (93.086914, 98.086914))):
        point = cst.IntegrationPointState.initial(mat, crystal.Orientation())
        g110 = point.g[systems.family == crystal.FAMILY_110]
        g112 = point.g[systems.family == crystal.FAMILY_112]
        assert_allclose(g110, expected[0], rtol=1e-6)
        assert_allclose(g112, expected[1], rtol=1e-6)


def test_bailey_hirsch_dense_sums_all_systems():
    tau_y = np.zeros(3)
    rho = np.array([1.0, 4.0, 9.0])
    g_dense = cst.bailey_hirsch_flow_stress(tau_y, rho, np.ones((3, 3)),
                                            0.1, 1000.0, 2.49e-4)
    assert_allclose(g_dense, 0.1 * 1000.0 * 2.49e-4 * 6.0, rtol=1e-12)


def test_hardening_matrix_hand_value():
    h = cst.hardening_matrix(np.array([1.0]), np.array([2.9]), np.eye(1),
                             0.1, FERRITE.mu, 1.1)
    assert h[0, 0] == pytest.approx(1501.923077, rel=1e-9)


def test_hardening_consistent_with_flow_stress_derivative(systems):
    """h |gamma| must equal the time derivative of the Bailey-Hirsch flow
    stress along the storage evolution; complex-step differentiation of
    the closed form gives the reference to machine precision."""
    n = len(systems)
    mat = FERRITE
    rng = np.random.default_rng(7)
    rho = rng.uniform(1.0, 50.0, size=n)
    gamma = rng.normal(scale=1e-3, size=n)
    free_path = rng.uniform(0.5, 20.0, size=n)
    omega = mat.omega_hardening(n)

    h = cst.hardening_matrix(rho, free_path, omega, mat.hardening_coeff,
                             mat.mu, mat.storage_coeff)
    g_dot = cst.flow_stress_rate(h, gamma)

    from dpcp.dislocation import ss_rate
    rho_dot = ss_rate(gamma, free_path, mat.storage_coeff, mat.burgers)
    step = 1e-20
    g_c = cst.bailey_hirsch_flow_stress(
        mat.friction(systems.family), rho + 1j * step * rho_dot, omega,
        mat.hardening_coeff, mat.mu, mat.burgers)
    assert_allclose(g_dot, g_c.imag / step, rtol=1e-12)


def test_update_flow_stress_euler():
    g = np.array([25.0])
    h = np.array([[100.0]])
    out = cst.update_flow_stress(g, h, np.array([-2e-3]), 0.5)
    assert_allclose(out, 25.0 + 0.5 * 100.0 * 2e-3)


# ---------------------------------------------------------------------------
# rate-tangent operator

def planar_d(dxx, dyy, dxy):
    d = np.zeros((3, 3))
    d[0, 0], d[1, 1] = dxx, dyy
    d[0, 1] = d[1, 0] = dxy
    return d


def elastic_operator(material, systems, stress=None, dt=0.1):
    """Operator with the flow stress pushed so high that slip is inert."""
    ps, pa = crystal.schmid_tensors(systems.s, systems.m)
    if stress is None:
        stress = np.zeros((3, 3))
    g = np.full(len(systems), 1e9)
    return cst.tangent_operator(stress, g, ps, pa, material, dt)


def test_tangent_operator_elastic_limit(systems, rng):
    op = elastic_operator(FERRITE, systems)
    d = planar_d(1e-4, -3e-5, 2e-5)
    gamma = op.slip_rates(d)
    assert np.abs(gamma).max() < 1e-30
    rate = op.jaumann_stress_rate(d, gamma)
    assert_allclose(rate, cst.elastic_stress_rate(d, op.lam, op.mu),
                    rtol=1e-12)

    gamma_free, y, r_cols = op.response()
    block = cst.plane_strain_stiffness(op.lam, op.mu)
    ctan, resid = op.tangent_block(gamma_free, y, r_cols, block)
    assert_allclose(ctan, block, rtol=1e-12)
    assert np.abs(resid).max() < 1e-20


def test_tangent_response_reconstructs_slip_rates(systems):
    """The affine split gamma = gamma_free + Y d must agree with the direct
    solve for any planar stretch rate."""
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    stress = np.diag([3.0, 20.0, 0.0]).astype(float)
    ps, pa = crystal.schmid_tensors(systems.s, systems.m)
    op = cst.tangent_operator(stress, point.g, ps, pa, FERRITE, dt=0.1)

    d = planar_d(-4e-5, 1e-4, 3e-5)
    direct = op.slip_rates(d)
    gamma_free, y, _ = op.response()
    d_cols = np.array([d[0, 0], d[1, 1], 2.0 * d[0, 1]])
    assert_allclose(gamma_free + y @ d_cols, direct, rtol=1e-10, atol=1e-22)


def test_tangent_operator_theta_zero_is_explicit(systems):
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    stress = np.diag([0.0, 26.0, 0.0]).astype(float)
    ps, pa = crystal.schmid_tensors(systems.s, systems.m)
    op = cst.tangent_operator(stress, point.g, ps, pa, FERRITE, dt=0.1,
                              theta=0.0)
    d = planar_d(1e-4, 2e-4, -1e-4)
    expected = cst.slip_rate(op.tau, point.g, FERRITE.ref_slip_rate,
                             FERRITE.rate_sensitivity)
    assert_allclose(op.slip_rates(d), expected, rtol=1e-12)


def test_tangent_operator_batched_matches_single(systems, rng):
    ps, pa = crystal.schmid_tensors(systems.s, systems.m)
    stresses = np.stack([random_symmetric(rng, 15.0) for _ in range(3)])
    g = np.full((3, len(systems)), 60.0)
    batch = cst.tangent_operator(stresses, g, ps, pa, FERRITE, dt=0.1)
    d = planar_d(1e-4, -2e-4, 5e-5)
    batched = batch.slip_rates(np.broadcast_to(d, (3, 3, 3)))
    for k in range(3):
        single = cst.tangent_operator(stresses[k], g[k], ps, pa, FERRITE,
                                      dt=0.1)
        assert_allclose(batched[k], single.slip_rates(d), rtol=1e-12)


# ---------------------------------------------------------------------------
# point update

def test_point_update_elastic_step():
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    point.g = np.full_like(point.g, 1e9)
    d = planar_d(0.0, 1e-4, 0.0)
    up = cst.tangent_stress_update(point, d, np.zeros((3, 3)), dt=0.1)
    expected = cst.elastic_stress_rate(d, FERRITE.lame_lambda, FERRITE.mu)
    assert_allclose(up.stress_rate, expected, rtol=1e-10)
    cst.apply_point_update(point, up, d, dt=0.1)
    assert point.stress[1, 1] == pytest.approx(expected[1, 1] * 0.1)
    assert point.gamma_acc < 1e-25
    assert_allclose(point.elastic_strain, point.strain, atol=1e-30)


def test_point_update_plastic_flow_hardens():
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    d = planar_d(-5e-4, 1e-3, 0.0)
    g0 = point.g.copy()
    rho0 = point.dislocations.rho_ss.copy()
    for _ in range(200):
        up = cst.tangent_stress_update(point, d, np.zeros((3, 3)), dt=0.1)
        cst.apply_point_update(point, up, d, dt=0.1)
    assert point.gamma_acc > 1e-3
    # Storage happens where slip happens; silent systems keep rho_0.
    assert (point.dislocations.rho_ss >= rho0).all()
    assert (point.dislocations.rho_ss > rho0).any()
    assert point.g.max() > g0.max()
    # Plasticity keeps the axial stress far below the elastic extrapolation.
    elastic = cst.elastic_stress_rate(point.strain.copy(),
                                      FERRITE.lame_lambda, FERRITE.mu)
    assert point.stress[1, 1] < 0.5 * elastic[1, 1]


def test_point_update_spin_rotates_stress():
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    point.g = np.full_like(point.g, 1e9)
    point.stress = np.diag([40.0, 10.0, 0.0]).astype(float)
    rate = 1e-3
    w = np.array([[0.0, -rate, 0.0], [rate, 0.0, 0.0], [0.0, 0.0, 0.0]])
    dt = 1.0
    up = cst.tangent_stress_update(point, np.zeros((3, 3)), w, dt=dt)
    stress0 = point.stress.copy()
    cst.apply_point_update(point, up, np.zeros((3, 3)), dt=dt)
    angle = rate * dt
    c, s = np.cos(angle), np.sin(angle)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    rotated = r @ stress0 @ r.T
    assert_allclose(point.stress, rotated, atol=stress0.max() * angle ** 2)


def test_point_update_with_moduli_elastic_limit():
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    point.g = np.full_like(point.g, 1e9)
    up = cst.tangent_stress_update(point, planar_d(1e-4, 0.0, 0.0),
                                   np.zeros((3, 3)), dt=0.1,
                                   with_moduli=True)
    assert_allclose(up.moduli,
                    cst.voigt_stiffness(FERRITE.lame_lambda, FERRITE.mu),
                    rtol=1e-12)


def test_point_update_rejects_non_finite_state():
    point = cst.IntegrationPointState.initial(FERRITE, crystal.Orientation())
    point.stress[0, 1] = point.stress[1, 0] = np.nan
    with pytest.raises(cst.ConstitutiveError, match="non-finite"):
        cst.tangent_stress_update(point, planar_d(1e-4, 0.0, 0.0),
                                  np.zeros((3, 3)), dt=0.1)
