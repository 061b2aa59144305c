"""Fixed-step numerical flow maps and variational sensitivities.

All flows use classical fixed-step RK4 so that results are bitwise
reproducible for identical inputs.  The state transition matrix is
integrated along the nonlinear trajectory via the variational equation
``dPhi/dt = A(t, x(t)) Phi`` and the control convolution
``dG/dt = A(t, x(t)) G + B`` accumulates the sensitivity of the endpoint
to a zero-order-hold control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dual as d

__all__ = [
    "flow", "flow_full", "flow_with_stm", "propagate_trajectory",
    "ReferenceTrajectory",
]


def _joint_rhs(model, t, x, aux, u, Phi, G):
    dx, daux = model.deriv(t, x, aux, u)
    dPhi = dG = None
    if Phi is not None:
        A = model.jac_state(t, x, aux)
        batched = d.value(Phi).ndim == 3
        mul = d.mm_tb if batched else d.mm
        dPhi = mul(A, Phi)
        if G is not None:
            Bmat = model.control_matrix()
            if batched:
                Bmat = np.asarray(Bmat)[:, :, None]
            dG = mul(A, G) + Bmat
    return dx, daux, dPhi, dG


def _axpy(y, h, k):
    if y is None:
        return None
    if isinstance(y, tuple):
        return tuple(yi + h * ki for yi, ki in zip(y, k))
    return y + h * k


def _rk4(model, x, aux, u, t0, t1, n_steps, Phi=None, G=None):
    steps = max(1, int(n_steps))
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = _joint_rhs(model, t, x, aux, u, Phi, G)
        k2 = _joint_rhs(model, t + 0.5 * h,
                        _axpy(x, 0.5 * h, k1[0]), _axpy(aux, 0.5 * h, k1[1]),
                        u, _axpy(Phi, 0.5 * h, k1[2]), _axpy(G, 0.5 * h, k1[3]))
        k3 = _joint_rhs(model, t + 0.5 * h,
                        _axpy(x, 0.5 * h, k2[0]), _axpy(aux, 0.5 * h, k2[1]),
                        u, _axpy(Phi, 0.5 * h, k2[2]), _axpy(G, 0.5 * h, k2[3]))
        k4 = _joint_rhs(model, t + h,
                        _axpy(x, h, k3[0]), _axpy(aux, h, k3[1]),
                        u, _axpy(Phi, h, k3[2]), _axpy(G, h, k3[3]))
        w = h / 6.0
        x = x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        aux = tuple(
            a + w * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(aux, k1[1], k2[1], k3[1], k4[1])
        )
        if Phi is not None:
            Phi = Phi + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        if G is not None:
            G = G + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        t = t + h
    return x, aux, Phi, G


def flow_full(model, x0, u, t0, t1, n_steps: int = 20, aux0=None):
    """Flow the state from ``t0`` to ``t1`` under constant control ``u``.

    Returns ``(x1, aux1)``.  ``aux0`` short-circuits the anomaly lookup
    when the caller already tracks it.
    """
    if aux0 is None:
        aux0 = model.aux_at(t0)
    x1, aux1, _, _ = _rk4(model, x0, aux0, u, t0, t1, n_steps)
    return x1, aux1


def flow(model, x0, u, t0, t1, n_steps: int = 20, aux0=None):
    return flow_full(model, x0, u, t0, t1, n_steps, aux0)[0]


def flow_with_stm(model, x0, u, t0, t1, n_steps: int = 20, aux0=None,
                  control_conv: bool = False):
    """Flow plus state transition matrix along the nonlinear trajectory.

    Returns ``(x1, Phi)`` or ``(x1, Phi, G)`` where ``G`` maps a held
    control over ``[t0, t1]`` to the endpoint perturbation.
    """
    if aux0 is None:
        aux0 = model.aux_at(t0)
    ndir = None
    for item in (x0, u, t0, t1) + tuple(aux0):
        if isinstance(item, d.Dual):
            ndir = item.ndir
            break
    if ndir is None:
        Phi0 = np.eye(6)
        G0 = np.zeros((6, 3)) if control_conv else None
    else:
        Phi0 = d.Dual(np.eye(6), np.zeros((6, 6, ndir)))
        G0 = d.Dual(np.zeros((6, 3)), np.zeros((6, 3, ndir))) if control_conv else None
    x1, aux1, Phi, G = _rk4(model, x0, aux0, u, t0, t1, n_steps, Phi0, G0)
    if control_conv:
        return x1, Phi, G
    return x1, Phi


def propagate_trajectory(model, x0, controls, times, n_steps: int = 20):
    """Chain segment flows over node ``times`` ((N+1,)) under the
    zero-order-hold ``controls`` ((N,3)); returns node states (N+1,6)."""
    times = np.asarray(times, dtype=float)
    n_seg = len(times) - 1
    states = [np.asarray(x0, dtype=float)]
    aux = model.aux_at(times[0])
    x = states[0]
    for k in range(n_seg):
        x, aux = flow_full(model, x, np.asarray(controls[k], dtype=float),
                           times[k], times[k + 1], n_steps, aux0=aux)
        states.append(np.asarray(d.value(x), dtype=float))
    return np.array(states)


@dataclass(frozen=True)
class ReferenceTrajectory:
    """A piecewise-constant-control trajectory with node states.

    Continuous-time queries reconstruct the state by flowing from the
    stored node immediately before the query time.
    """

    model: object
    times: np.ndarray        # (N+1,) node times, s
    states: np.ndarray       # (N+1, 6)
    controls: np.ndarray     # (N, 3)
    n_steps: int = 20

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    def segment_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(idx, 0), self.n_segments - 1)

    def control(self, t: float) -> np.ndarray:
        return self.controls[self.segment_index(t)]

    def state(self, t: float) -> np.ndarray:
        k = self.segment_index(t)
        t_k = self.times[k]
        if t == t_k:
            return self.states[k].copy()
        h = self.times[k + 1] - t_k
        steps = max(1, int(math.ceil(self.n_steps * abs(t - t_k) / h)))
        return np.asarray(
            flow(self.model, self.states[k], self.controls[k], t_k, t,
                 n_steps=steps),
            dtype=float,
        )
