"""Shared fixtures: models, a small solved rendezvous, helper oracles."""

import numpy as np
import pytest

from missedthrust.dynamics import CircularOrbit
from missedthrust.solver import SolveOptions, solve
from missedthrust.transcription import (
    TranscriptionConfig, build_problem, reference_from_solution,
)

MU_EARTH = 398600.4418  # km^3/s^2

# low-Earth-orbit target: 500 km altitude circular chief orbit
LEO_RADIUS = 6871.0
LEO_MEAN_MOTION = 1.109e-3


@pytest.fixture(scope="session")
def circ():
    return CircularOrbit(radius_km=LEO_RADIUS, mean_motion=LEO_MEAN_MOTION)


class DoubleIntegrator:
    """Force-driven point mass in the relative frame; zero drift matrix
    beyond the kinematic identity block.  Matches the dynamics-model
    interface used by the propagation and recovery modules."""

    def aux_at(self, t):
        return ()

    def deriv(self, t, x, aux, u):
        dx = np.concatenate([np.asarray(x)[3:], np.asarray(u, dtype=float)])
        return dx, ()

    def jac_state(self, t, x, aux):
        A = np.zeros((6, 6))
        A[:3, 3:] = np.eye(3)
        return A

    def control_matrix(self):
        B = np.zeros((6, 3))
        B[3:, :] = np.eye(3)
        return B

    def hessian_state(self, t, x, aux):
        return np.zeros((6, 6, 6))


@pytest.fixture(scope="session")
def double_integrator():
    return DoubleIntegrator()


def _rendezvous_config(**over):
    base = dict(
        x0=(2.0, -1.0, 0.5, 0.0, 0.0, 0.0),
        x1=(0.0,) * 6,
        n_leader=4,
        n_steps=8,
        t_flight=3000.0,
        t_bounds=(1500.0, 6000.0),
        u_max=5e-5,
    )
    base.update(over)
    return TranscriptionConfig(**base)


@pytest.fixture(scope="session")
def small_rendezvous_config():
    """Factory for a small in-plane rendezvous configuration."""
    return _rendezvous_config


@pytest.fixture(scope="session")
def solved_leader(circ):
    """A converged small leader-only rendezvous and its reference."""
    cfg = _rendezvous_config()
    problem = build_problem(circ, cfg, None)
    report = solve(problem, options=SolveOptions(seed=3))
    assert report.converged, "fixture solve must converge"
    ref = reference_from_solution(problem, report.z)
    return problem, report, ref
