"""Relative-motion models: derivatives, Jacobians, curvature bounds."""

import math

import numpy as np
import pytest

from missedthrust.dynamics import (
    CircularOrbit, EccentricOrbit, anomaly_rate, curvature_constant,
    eval_dynamics, hessian_norms, hessian_state, jacobian_control,
    jacobian_state, propagate_anomaly,
)

from conftest import LEO_MEAN_MOTION, LEO_RADIUS, MU_EARTH

RNG = np.random.default_rng(20240817)


def random_states(n, pos_scale=5.0, vel_scale=5e-3):
    x = RNG.uniform(-1.0, 1.0, (n, 6))
    x[:, :3] *= pos_scale
    x[:, 3:] *= vel_scale
    return x


def fd_jacobian(f, x, h=1e-6):
    J = np.zeros((f(x).size, x.size))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        J[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def test_circular_linear_part_is_cwh(circ):
    """At the origin the Jacobian reduces to the classical—
    constant-coefficient—relative-motion system."""
    n = circ.mean_motion
    A = np.asarray(jacobian_state(circ, 0.0, np.zeros(6)), dtype=float)
    A_cwh = np.zeros((6, 6))
    A_cwh[:3, 3:] = np.eye(3)
    A_cwh[3, 0] = 3.0 * n * n
    A_cwh[3, 4] = 2.0 * n
    A_cwh[4, 3] = -2.0 * n
    A_cwh[5, 2] = -n * n
    assert np.allclose(A, A_cwh, atol=1e-18)


def test_circular_deriv_hand_value(circ):
    """One state evaluated against an independently coded expression."""
    n, R = circ.mean_motion, circ.radius_km
    c2, c3 = 1.5 * n * n / R, n * n / (R * R)
    x = np.array([1.0, -2.0, 0.5, 1e-3, -2e-3, 5e-4])
    u = np.array([1e-6, -2e-6, 3e-6])
    q1, q2, q3, v1, v2, v3 = x
    expected = np.array([
        v1, v2, v3,
        2 * n * v2 + 3 * n * n * q1 + u[0]
        + c2 * (-2 * q1**2 + q2**2 + q3**2)
        + c3 * (4 * q1**3 - 6 * q1 * (q2**2 + q3**2)),
        -2 * n * v1 + u[1] + c2 * (2 * q1 * q2)
        + c3 * (-6 * q1**2 * q2 + 1.5 * (q2**3 + q2 * q3**2)),
        -n * n * q3 + u[2] + c2 * (2 * q1 * q3)
        + c3 * (-6 * q1**2 * q3 + 1.5 * (q2**2 * q3 + q3**3)),
    ])
    got = np.asarray(eval_dynamics(circ, 0.0, x, u), dtype=float)
    assert np.allclose(got, expected, rtol=1e-14, atol=0.0)


@pytest.mark.parametrize("model_name", ["circ", "ecc"])
def test_jacobian_matches_fd(model_name, circ):
    if model_name == "circ":
        model, t = circ, 0.0
    else:
        model = EccentricOrbit(22903.33, 0.7, MU_EARTH, nu0=math.radians(80.0))
        t = 30.0
    u = np.zeros(3)
    for x in random_states(5):
        J = np.asarray(jacobian_state(model, t, x), dtype=float)
        J_fd = fd_jacobian(
            lambda xx: np.asarray(eval_dynamics(model, t, xx, u), dtype=float),
            x)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - J_fd)) / scale < 1e-7


def test_control_matrix_is_velocity_identity(circ):
    B = np.asarray(jacobian_control(circ), dtype=float)
    assert np.allclose(B[:3], 0.0)
    assert np.allclose(B[3:], np.eye(3))


def test_hessian_matches_fd_of_jacobian(circ):
    x = np.array([2.0, -1.0, 0.5, 0.0, 0.0, 0.0])
    H = np.asarray(hessian_state(circ, 0.0, x), dtype=float)
    h = 1e-3  # second derivatives are affine in position: FD is exact-ish
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        dJ = (np.asarray(jacobian_state(circ, 0.0, x + e), dtype=float)
              - np.asarray(jacobian_state(circ, 0.0, x - e), dtype=float)
              ) / (2 * h)
        assert np.max(np.abs(H[:, :, j] - dJ)) < 1e-10


def test_eccentric_zero_limit_matches_circular(circ):
    """Vanishing eccentricity collapses onto the circular model."""
    ecc = EccentricOrbit(LEO_RADIUS, 1e-10, circ.mu, nu0=0.0)
    u = np.array([1e-6, 2e-6, -1e-6])
    for x in random_states(10):
        fc = np.asarray(eval_dynamics(circ, 0.0, x, u), dtype=float)
        fe = np.asarray(eval_dynamics(ecc, 0.0, x, u), dtype=float)
        denom = max(np.max(np.abs(fc)), 1e-300)
        assert np.max(np.abs(fc - fe)) / denom < 1e-6


def test_anomaly_rate_positive_and_periodic():
    model = EccentricOrbit(22903.33, 0.7, MU_EARTH, nu0=0.0)
    nus = np.linspace(0.0, 2 * math.pi, 50)
    rates = np.array([float(anomaly_rate(model, nu)) for nu in nus])
    assert np.all(rates > 0.0)
    assert np.isclose(rates[0], rates[-1], rtol=1e-12)


def test_anomaly_advances_full_orbit_per_period():
    model = EccentricOrbit(22903.33, 0.7, MU_EARTH, nu0=0.3)
    period = 2 * math.pi * math.sqrt(model.a_km ** 3 / model.mu)
    nu_end = float(propagate_anomaly(model, period))
    assert abs(nu_end - (0.3 + 2 * math.pi)) < 1e-7


def test_anomaly_rate_fastest_at_periapsis():
    model = EccentricOrbit(22903.33, 0.7, MU_EARTH, nu0=0.0)
    r0 = float(anomaly_rate(model, 0.0))
    r_pi = float(anomaly_rate(model, math.pi))
    assert r0 > r_pi
    # vis-viva consistency of the rate ratio: ((1+e)/(1-e))^2
    assert np.isclose(r0 / r_pi, ((1 + 0.7) / (1 - 0.7)) ** 2, rtol=1e-12)


def test_curvature_constant_rigorous_scaling(circ):
    x = np.array([1.0, 0.5, -0.3, 0.0, 0.0, 0.0])
    k_raw = curvature_constant(circ, 0.0, x, rigorous=False)
    k_rig = curvature_constant(circ, 0.0, x, rigorous=True)
    assert np.isclose(k_rig, math.sqrt(6.0) * k_raw, rtol=1e-12)


def test_curvature_constant_grows_with_tube(circ):
    x = np.array([1.0, 0.5, -0.3, 0.0, 0.0, 0.0])
    ks = [curvature_constant(circ, 0.0, x, rho=r) for r in (0.0, 1.0, 5.0)]
    assert ks[0] <= ks[1] <= ks[2]


def test_curvature_dominates_tube_hessians(circ):
    """The ball bound must dominate the pointwise curvature at sampled
    interior points of the tube."""
    x = np.array([2.0, -1.0, 0.5, 0.0, 0.0, 0.0])
    rho = 2.0
    k = curvature_constant(circ, 0.0, x, rho=rho, rigorous=False)
    for _ in range(50):
        dx = RNG.normal(size=6)
        dx *= rho * RNG.uniform() / np.linalg.norm(dx)
        H = np.asarray(hessian_state(circ, 0.0, x + dx), dtype=float)
        local = max(np.linalg.norm(H[i], 2) for i in range(6))
        assert local <= k * (1 + 1e-12)


def test_hessian_norms_on_known_tensor():
    H = np.zeros((2, 3, 3))
    H[0] = np.diag([3.0, -1.0, 0.0])
    H[1] = 2.0 * np.eye(3)
    out = hessian_norms(H)
    assert np.isclose(out["oper"], 3.0)
    assert np.isclose(out["spec"], 3.0)
    assert np.isclose(out["frob"], math.sqrt(9 + 1 + 3 * 4))


def test_eccentric_rejects_anomaly_outside_window():
    model = EccentricOrbit(22903.33, 0.7, MU_EARTH,
                           nu0=math.radians(70.0),
                           nu_range=(math.radians(60.0), math.radians(120.0)))
    with pytest.raises(ValueError):
        # long enough for the anomaly to leave the declared window
        model.aux_at(6000.0)
