"""Relative orbital dynamics about circular and eccentric references.

State ordering is fixed throughout the package as
``x = (q1, q2, q3, q1dot, q2dot, q3dot)`` with positions in km,
velocities in km/s, control accelerations in km/s^2 and time in
seconds.  Both models share the same polynomial structure for the
second- and third-order differential-gravity corrections; only the
coefficients differ (constant for circular, anomaly-dependent for
eccentric references).

Models expose a small uniform surface:

* ``aux_at(t)``      -- auxiliary coordinates at time ``t`` (the true
  anomaly for the eccentric model, empty for circular),
* ``deriv``          -- state and auxiliary time derivatives,
* ``jac_state``      -- analytic 6x6 state Jacobian,
* ``control_matrix`` -- constant 6x3 input matrix,
* ``hessian_state``  -- analytic (6,6,6) stack of second derivatives.

Everything on the evaluation path accepts either floats/ndarrays or
:class:`~missedthrust.dual.Dual` operands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dual as d

__all__ = [
    "CircularOrbit", "EccentricOrbit",
    "eval_dynamics", "jacobian_state", "jacobian_control", "hessian_state",
    "hessian_norms", "curvature_constant", "curvature_sweep",
    "anomaly_rate", "anomaly_accel", "orbit_radius", "propagate_anomaly",
]

_B = np.vstack([np.zeros((3, 3)), np.eye(3)])


def _accel_nonlinear(q1, q2, q3, c2, c3):
    """Quadratic + cubic differential-gravity acceleration components."""
    g2 = (
        -2.0 * q1 * q1 + q2 * q2 + q3 * q3,
        2.0 * q1 * q2,
        2.0 * q1 * q3,
    )
    g3 = (
        4.0 * q1 ** 3 - 6.0 * q1 * (q2 * q2 + q3 * q3),
        -6.0 * q1 * q1 * q2 + 1.5 * (q2 ** 3 + q2 * q3 * q3),
        -6.0 * q1 * q1 * q3 + 1.5 * (q2 * q2 * q3 + q3 ** 3),
    )
    return tuple(c2 * a + c3 * b for a, b in zip(g2, g3))


def _jac_nonlinear(q1, q2, q3, c2, c3):
    """3x3 position-block Jacobian of :func:`_accel_nonlinear`."""
    return (
        (
            -4.0 * c2 * q1 + c3 * (12.0 * q1 * q1 - 6.0 * (q2 * q2 + q3 * q3)),
            2.0 * c2 * q2 - 12.0 * c3 * q1 * q2,
            2.0 * c2 * q3 - 12.0 * c3 * q1 * q3,
        ),
        (
            2.0 * c2 * q2 - 12.0 * c3 * q1 * q2,
            2.0 * c2 * q1 + c3 * (-6.0 * q1 * q1 + 4.5 * q2 * q2 + 1.5 * q3 * q3),
            3.0 * c3 * q2 * q3,
        ),
        (
            2.0 * c2 * q3 - 12.0 * c3 * q1 * q3,
            3.0 * c3 * q2 * q3,
            2.0 * c2 * q1 + c3 * (-6.0 * q1 * q1 + 1.5 * q2 * q2 + 4.5 * q3 * q3),
        ),
    )


def _hessian_nonlinear(q1, q2, q3, c2, c3):
    """(3,3,3) second derivatives of the three acceleration components
    with respect to the positions; velocity blocks are identically zero."""
    H = np.zeros((3, 3, 3))
    # component 1
    H[0] = [
        [-4.0 * c2 + 24.0 * c3 * q1, -12.0 * c3 * q2, -12.0 * c3 * q3],
        [-12.0 * c3 * q2, 2.0 * c2 - 12.0 * c3 * q1, 0.0],
        [-12.0 * c3 * q3, 0.0, 2.0 * c2 - 12.0 * c3 * q1],
    ]
    # component 2
    H[1] = [
        [-12.0 * c3 * q2, 2.0 * c2 - 12.0 * c3 * q1, 0.0],
        [2.0 * c2 - 12.0 * c3 * q1, 9.0 * c3 * q2, 3.0 * c3 * q3],
        [0.0, 3.0 * c3 * q3, 3.0 * c3 * q2],
    ]
    # component 3
    H[2] = [
        [-12.0 * c3 * q3, 0.0, 2.0 * c2 - 12.0 * c3 * q1],
        [0.0, 3.0 * c3 * q3, 3.0 * c3 * q2],
        [2.0 * c2 - 12.0 * c3 * q1, 3.0 * c3 * q2, 9.0 * c3 * q3],
    ]
    return H


@dataclass(frozen=True)
class CircularOrbit:
    """Circular reference orbit of radius ``radius_km`` and mean motion
    ``mean_motion`` (rad/s)."""

    radius_km: float
    mean_motion: float

    n_aux: int = 0

    @property
    def mu(self) -> float:
        return self.mean_motion ** 2 * self.radius_km ** 3

    def aux_at(self, t):
        return ()

    def coeffs(self, aux):
        n, R = self.mean_motion, self.radius_km
        return 1.5 * n * n / R, n * n / (R * R)

    def deriv(self, t, x, aux, u):
        n = self.mean_motion
        q1, q2, q3, v1, v2, v3 = (x[i] for i in range(6))
        c2, c3 = self.coeffs(aux)
        nl1, nl2, nl3 = _accel_nonlinear(q1, q2, q3, c2, c3)
        a1 = 2.0 * n * v2 + 3.0 * n * n * q1 + u[0] + nl1
        a2 = -2.0 * n * v1 + u[1] + nl2
        a3 = -n * n * q3 + u[2] + nl3
        return d.stack([v1, v2, v3, a1, a2, a3]), ()

    def jac_state(self, t, x, aux):
        n = self.mean_motion
        q1, q2, q3 = x[0], x[1], x[2]
        c2, c3 = self.coeffs(aux)
        J = _jac_nonlinear(q1, q2, q3, c2, c3)
        zero = 0.0 * q1
        one = zero + 1.0
        rows = [
            d.stack([zero, zero, zero, one, zero, zero]),
            d.stack([zero, zero, zero, zero, one, zero]),
            d.stack([zero, zero, zero, zero, zero, one]),
            d.stack([3.0 * n * n + J[0][0], J[0][1], J[0][2],
                     zero, zero + 2.0 * n, zero]),
            d.stack([J[1][0], J[1][1], J[1][2],
                     zero - 2.0 * n, zero, zero]),
            d.stack([J[2][0], J[2][1], -n * n + J[2][2],
                     zero, zero, zero]),
        ]
        return d.stack(rows)

    def control_matrix(self):
        return _B

    def hessian_state(self, t, x, aux):
        q1, q2, q3 = float(d.value(x[0])), float(d.value(x[1])), float(d.value(x[2]))
        c2, c3 = self.coeffs(aux)
        H = np.zeros((6, 6, 6))
        H[3:6, 0:3, 0:3] = _hessian_nonlinear(q1, q2, q3, c2, c3)
        return H


@dataclass(frozen=True)
class EccentricOrbit:
    """Eccentric reference orbit parameterized by true anomaly.

    ``nu0`` is the true anomaly (rad) at epoch ``t_epoch`` (s).  The
    model is valid for anomalies inside ``nu_range``; anomaly queries
    outside the range raise ``ValueError``.
    """

    a_km: float
    ecc: float
    mu: float
    nu0: float
    nu_range: tuple = (0.0, 2.0 * math.pi)
    t_epoch: float = 0.0
    anomaly_step: float = 5.0
    range_pad: float = 1e-9

    n_aux: int = 1

    @property
    def semi_latus(self) -> float:
        return self.a_km * (1.0 - self.ecc ** 2)

    def _check_nu(self, nu) -> None:
        v = np.asarray(d.value(nu))
        lo, hi = self.nu_range
        if np.any(v < lo - self.range_pad) or np.any(v > hi + self.range_pad):
            raise ValueError(
                f"true anomaly {v} rad outside valid range {self.nu_range}"
            )

    def aux_at(self, t, check: bool = True):
        nu = propagate_anomaly(self, t)
        if check:
            self._check_nu(nu)
        return (nu,)

    def radius(self, nu):
        return self.semi_latus / (1.0 + self.ecc * d.cos(nu))

    def coeffs(self, aux):
        r = self.radius(aux[0])
        r2 = r * r
        inv_r4 = 1.0 / (r2 * r2)
        return 1.5 * self.mu * inv_r4, self.mu * inv_r4 / r

    def _kin(self, nu):
        """(nu_dot, nu_ddot, mu/r^3) at anomaly ``nu``."""
        nd = anomaly_rate(self, nu)
        ndd = anomaly_accel(self, nu)
        r = self.radius(nu)
        return nd, ndd, self.mu / (r * r * r)

    def deriv(self, t, x, aux, u):
        q1, q2, q3, v1, v2, v3 = (x[i] for i in range(6))
        nu = aux[0]
        nd, ndd, w2 = self._kin(nu)
        c2, c3 = self.coeffs(aux)
        nl1, nl2, nl3 = _accel_nonlinear(q1, q2, q3, c2, c3)
        a1 = 2.0 * nd * v2 + nd * nd * q1 + ndd * q2 + 2.0 * w2 * q1 + u[0] + nl1
        a2 = -2.0 * nd * v1 - ndd * q1 + nd * nd * q2 - w2 * q2 + u[1] + nl2
        a3 = -w2 * q3 + u[2] + nl3
        return d.stack([v1, v2, v3, a1, a2, a3]), (nd,)

    def jac_state(self, t, x, aux):
        q1, q2, q3 = x[0], x[1], x[2]
        nu = aux[0]
        nd, ndd, w2 = self._kin(nu)
        c2, c3 = self.coeffs(aux)
        J = _jac_nonlinear(q1, q2, q3, c2, c3)
        zero = 0.0 * q1
        one = zero + 1.0
        rows = [
            d.stack([zero, zero, zero, one, zero, zero]),
            d.stack([zero, zero, zero, zero, one, zero]),
            d.stack([zero, zero, zero, zero, zero, one]),
            d.stack([nd * nd + 2.0 * w2 + J[0][0], ndd + J[0][1], J[0][2],
                     zero, 2.0 * nd + zero, zero]),
            d.stack([-ndd + J[1][0], nd * nd - w2 + J[1][1], J[1][2],
                     -2.0 * nd + zero, zero, zero]),
            d.stack([J[2][0], J[2][1], -w2 + J[2][2],
                     zero, zero, zero]),
        ]
        return d.stack(rows)

    def control_matrix(self):
        return _B

    def hessian_state(self, t, x, aux):
        q1, q2, q3 = float(d.value(x[0])), float(d.value(x[1])), float(d.value(x[2]))
        c2, c3 = (float(d.value(c)) for c in self.coeffs(aux))
        H = np.zeros((6, 6, 6))
        H[3:6, 0:3, 0:3] = _hessian_nonlinear(q1, q2, q3, c2, c3)
        return H


# --- anomaly kinematics -------------------------------------------------

def anomaly_rate(model: EccentricOrbit, nu):
    """d(nu)/dt along the reference orbit."""
    e = model.ecc
    base = math.sqrt(model.mu / model.a_km ** 3) / (1.0 - e * e) ** 1.5
    w = 1.0 + e * d.cos(nu)
    return base * w * w


def anomaly_accel(model: EccentricOrbit, nu):
    """d^2(nu)/dt^2 along the reference orbit (chain rule on the rate)."""
    e = model.ecc
    base = model.mu / model.a_km ** 3 / (1.0 - e * e) ** 3
    w = 1.0 + e * d.cos(nu)
    return -2.0 * base * e * d.sin(nu) * w ** 3


def orbit_radius(model: EccentricOrbit, nu):
    return model.radius(nu)


def propagate_anomaly(model: EccentricOrbit, t, t0=None, nu0=None):
    """True anomaly at time ``t``, integrating the rate equation with
    fixed-step RK4 from the epoch (or from ``(t0, nu0)`` if given)."""
    if t0 is None:
        t0 = model.t_epoch
    if nu0 is None:
        nu0 = model.nu0
    dt = t - t0
    span = float(np.max(np.abs(d.value(dt))))
    if span == 0.0:
        return nu0 + 0.0 * dt
    steps = max(1, int(math.ceil(span / model.anomaly_step)))
    h = dt / steps
    nu = nu0 + 0.0 * dt
    for _ in range(steps):
        k1 = anomaly_rate(model, nu)
        k2 = anomaly_rate(model, nu + 0.5 * h * k1)
        k3 = anomaly_rate(model, nu + 0.5 * h * k2)
        k4 = anomaly_rate(model, nu + h * k3)
        nu = nu + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return nu


# --- public operation wrappers -----------------------------------------

def eval_dynamics(model, t, x, u):
    """State time derivative f(t, x, u) for either orbit model."""
    aux = model.aux_at(t)
    dx, _ = model.deriv(t, x, aux, u)
    return dx


def jacobian_state(model, t, x):
    return model.jac_state(t, x, model.aux_at(t))


def jacobian_control(model, t=None, x=None):
    return model.control_matrix()


def hessian_state(model, t, x):
    return model.hessian_state(t, x, model.aux_at(t))


# --- curvature measures -------------------------------------------------

def hessian_norms(H) -> dict:
    """Aggregate norms of a stacked (6,6,6) second-derivative tensor.

    ``oper``  largest operator norm over the component matrices,
    ``frob``  Frobenius norm of the full stack,
    ``spec``  largest spectral radius over the component matrices.
    """
    oper = 0.0
    spec = 0.0
    frob2 = 0.0
    for i in range(H.shape[0]):
        Hi = H[i]
        oper = max(oper, float(np.linalg.norm(Hi, 2)))
        if np.allclose(Hi, Hi.T):
            spec = max(spec, float(np.max(np.abs(np.linalg.eigvalsh(Hi)))))
        else:
            spec = max(spec, float(np.max(np.abs(np.linalg.eigvals(Hi)))))
        frob2 += float(np.sum(Hi * Hi))
    return {"oper": oper, "frob": math.sqrt(frob2), "spec": spec}


def curvature_constant(model, t, x, rho: float = 0.0, rigorous: bool = True) -> float:
    """Curvature bound valid on the ball of radius ``rho`` about ``x``.

    The component Hessians are affine in the position coordinates, so the
    operator norm anywhere in the ball is bounded by the norm at the
    center plus ``rho`` times a slope computed from the constant third
    derivatives.  With ``rigorous=True`` the per-component maximum is
    scaled by sqrt(6) so that the vector Taylor remainder is bounded by
    ``(H/2) * |e|^2``; otherwise the raw per-component maximum is
    returned.
    """
    aux = model.aux_at(t)
    x = np.asarray(d.value(x), dtype=float)
    H0 = model.hessian_state(t, x, aux)
    worst = 0.0
    if rho > 0.0:
        slopes = np.zeros(6)
        for j in range(3):  # Hessians depend on positions only
            ej = np.zeros(6)
            ej[j] = 1.0
            Cj = model.hessian_state(t, x + ej, aux) - H0
            for i in range(6):
                slopes[i] += np.linalg.norm(Cj[i], 2) ** 2
        slopes = np.sqrt(slopes)
    else:
        slopes = np.zeros(6)
    for i in range(6):
        worst = max(worst, float(np.linalg.norm(H0[i], 2)) + rho * float(slopes[i]))
    return math.sqrt(6.0) * worst if rigorous else worst


def curvature_sweep(ecc_values, periapse_km: float, mu: float,
                    n_samples: int = 360, rigorous: bool = True) -> dict:
    """Min/max curvature at the origin over one full orbit for a family
    of eccentricities sharing the same periapse radius."""
    ecc_values = np.atleast_1d(np.asarray(ecc_values, dtype=float))
    kmin = np.zeros_like(ecc_values)
    kmax = np.zeros_like(ecc_values)
    origin = np.zeros(6)
    for i, e in enumerate(ecc_values):
        if e == 0.0:
            n = math.sqrt(mu / periapse_km ** 3)
            model = CircularOrbit(periapse_km, n)
            k = curvature_constant(model, 0.0, origin, rigorous=rigorous)
            kmin[i] = kmax[i] = k
            continue
        a = periapse_km / (1.0 - e)
        model = EccentricOrbit(a, e, mu, nu0=0.0)
        vals = []
        for nu in np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False):
            H = model.hessian_state(0.0, origin, (nu,))
            worst = max(np.linalg.norm(H[j], 2) for j in range(6))
            vals.append(math.sqrt(6.0) * worst if rigorous else worst)
        kmin[i] = min(vals)
        kmax[i] = max(vals)
    return {"ecc": ecc_values, "kmin": kmin, "kmax": kmax}
