"""Post-outage recovery energetics.

After an outage ends with deviation ``xi`` the cheapest corrective
effort over a horizon ``[t_from, t_to]`` is measured through the
finite-horizon controllability Gramian of the reference-linearized
dynamics,

    W = int_{t_from}^{t_to} Phi(t, t_from) B B^T Phi(t, t_from)^T dt,

with minimum recovery energy ``xi^T W^{-1} xi``.  Comparing against the
energy the actuators can deliver over the horizon gives a scalar
recoverability ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .propagation import ReferenceTrajectory, flow_with_stm

__all__ = [
    "controllability_gramian", "min_energy", "available_energy",
    "energy_ratio", "RecoveryAssessment", "assess_recovery",
]

CONDITION_LIMIT = 1e12


def controllability_gramian(ref: ReferenceTrajectory, t_from: float,
                            t_to: float, n_intervals: int = 64,
                            n_steps: int = 10) -> np.ndarray:
    """Composite-Simpson Gramian along the reference trajectory.

    State transition matrices are accumulated by chaining variational
    flows between quadrature nodes, so the linearization follows the
    nonlinear reference path.
    """
    if t_to <= t_from:
        raise ValueError("empty recovery horizon")
    if n_intervals % 2 != 0:
        n_intervals += 1
    ts = np.linspace(t_from, t_to, n_intervals + 1)
    B = np.asarray(ref.model.control_matrix(), dtype=float)
    BBt = B @ B.T

    Phi = np.eye(6)
    x = ref.state(t_from)
    aux = ref.model.aux_at(t_from)
    integrand = [Phi @ BBt @ Phi.T]
    for i in range(n_intervals):
        u = ref.control(ts[i]) if ts[i] < ref.times[-1] else np.zeros(3)
        x, dPhi = flow_with_stm(ref.model, x, u, ts[i], ts[i + 1],
                                n_steps=n_steps, aux0=aux)
        aux = ref.model.aux_at(ts[i + 1])
        Phi = np.asarray(dPhi) @ Phi
        integrand.append(Phi @ BBt @ Phi.T)

    h = (t_to - t_from) / n_intervals
    W = integrand[0] + integrand[-1]
    for i in range(1, n_intervals):
        W = W + (4.0 if i % 2 else 2.0) * integrand[i]
    return (h / 3.0) * W


@dataclass(frozen=True)
class EnergyResult:
    energy: float
    ill_conditioned: bool
    condition: float


def min_energy(W: np.ndarray, xi) -> EnergyResult:
    """Minimum-energy cost ``xi^T W^-1 xi`` with a conditioning flag."""
    W = np.asarray(W, dtype=float)
    xi = np.asarray(xi, dtype=float)
    cond = float(np.linalg.cond(W))
    factor = cho_factor(0.5 * (W + W.T))
    e = float(xi @ cho_solve(factor, xi))
    return EnergyResult(e, cond > CONDITION_LIMIT, cond)


def available_energy(t_rec: float, u_bar) -> float:
    """Actuator energy budget over the recovery horizon: T * |u_bar|^2."""
    if t_rec <= 0.0:
        raise ValueError("recovery horizon must be positive")
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    return float(t_rec * np.sum(u_bar * u_bar))


def energy_ratio(e_avail: float, e_min: float) -> float:
    if e_min <= 0.0:
        return math.inf
    return e_avail / e_min


@dataclass(frozen=True)
class RecoveryAssessment:
    e_min: float
    e_avail: float
    ratio: float
    ill_conditioned: bool
    condition: float


def assess_recovery(ref: ReferenceTrajectory, t_from: float, t_to: float,
                    xi, u_bar, n_intervals: int = 64,
                    n_steps: int = 10) -> RecoveryAssessment:
    """Bundle the Gramian energetics for one recovery window."""
    W = controllability_gramian(ref, t_from, t_to, n_intervals, n_steps)
    res = min_energy(W, xi)
    e_avail = available_energy(t_to - t_from, u_bar)
    return RecoveryAssessment(
        e_min=res.energy,
        e_avail=e_avail,
        ratio=energy_ratio(e_avail, res.energy),
        ill_conditioned=res.ill_conditioned,
        condition=res.condition,
    )
