"""Direct multiple-shooting transcription of the outage-robust problem.

The nonlinear program couples a reference ("leader") trajectory with a
contingency ("follower") trajectory that loses thrust authority on a
contiguous block of its segments.  The follower is additionally pinned
to first-order optimality of a quadratic tracking objective through
explicit multiplier variables: the stationarity, costate-recursion and
transversality rows below are the exact partial derivatives of the
discretized tracking Lagrangian, so their calibration is fixed by
construction rather than by convention.

Decision vector layout (flat, in this order):

    [ T_lead,
      X_lead_0 .. X_lead_N,      (6 each)
      U_lead_0 .. U_lead_{N-1},  (3 each)
      T_fol,
      X_fol_0 .. X_fol_M,        (6 each)
      U_fol_0 .. U_fol_{M-1},    (3 each)
      L_0 .. L_M ]               (6 each, tracking costates)

The follower block is absent for reference-only problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import dual as d
from .propagation import flow, flow_full, _rk4

__all__ = [
    "Obstacle", "TranscriptionConfig", "MteScenario", "Problem",
    "build_problem", "segment_map", "node_map", "adaptive_segments",
]


@dataclass(frozen=True)
class Obstacle:
    """Spherical keep-out zone in the relative frame (km)."""

    center: tuple
    radius: float


@dataclass(frozen=True)
class TranscriptionConfig:
    x0: tuple                      # initial state
    x1: tuple = (0.0,) * 6         # terminal state (rendezvous origin)
    n_leader: int = 10             # leader segment count
    n_steps: int = 20              # RK4 steps per segment
    t_flight: float = 3000.0       # initial flight-time guess, s
    t_bounds: tuple = (100.0, 1e5)
    u_max: float = 1e-6            # per-axis control bound, km/s^2
    q_weight: tuple = tuple(np.eye(6).ravel())
    r_weight: tuple = tuple((0.1 * np.eye(3)).ravel())
    qf_weight: tuple = tuple((10.0 * np.eye(6)).ravel())
    w_t: float = 0.0
    w_u: float = 1.0
    fuel_eps: float = 1e-10        # norm smoothing, in units of u_max
    obstacles: tuple = ()

    @property
    def Q(self) -> np.ndarray:
        return np.asarray(self.q_weight, dtype=float).reshape(6, 6)

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.r_weight, dtype=float).reshape(3, 3)

    @property
    def Qf(self) -> np.ndarray:
        return np.asarray(self.qf_weight, dtype=float).reshape(6, 6)


@dataclass(frozen=True)
class MteScenario:
    """A contiguous block of follower segments with no thrust."""

    outage: tuple                  # follower segment indices, contiguous
    n_follower: int | None = None  # None -> n_leader - len(outage)

    def __post_init__(self):
        out = tuple(sorted(int(k) for k in self.outage))
        if not out:
            raise ValueError("outage set must be nonempty")
        if out != tuple(range(out[0], out[-1] + 1)):
            raise ValueError("outage segments must be contiguous")
        object.__setattr__(self, "outage", out)

    def resolve_n(self, n_leader: int) -> int:
        n = self.n_follower
        if n is None:
            n = adaptive_segments(n_leader, len(self.outage))
        if self.outage[-1] >= n:
            raise ValueError("outage indices exceed follower grid")
        return n

    def active(self, n_follower: int) -> tuple:
        return tuple(k for k in range(n_follower) if k not in self.outage)


def adaptive_segments(n_leader: int, outage_len: int) -> int:
    """Follower segment count shrinks by the outage length."""
    n = n_leader - outage_len
    if n < 1:
        raise ValueError("outage longer than the leader grid")
    return n


def segment_map(n_leader: int, n_follower: int) -> tuple:
    """Follower segment -> leader segment with the nearest midpoint-time
    fraction; ties resolve to the earlier leader segment."""
    out = []
    for k in range(n_follower):
        mid = Fraction(2 * k + 1, 2 * n_follower)
        best, best_err = 0, None
        for j in range(n_leader):
            err = abs(Fraction(2 * j + 1, 2 * n_leader) - mid)
            if best_err is None or err < best_err:
                best, best_err = j, err
        out.append(best)
    return tuple(out)


def node_map(n_leader: int, n_follower: int) -> tuple:
    """Follower node -> leader node with the nearest time fraction;
    ties resolve to the earlier leader node."""
    out = []
    for k in range(n_follower + 1):
        frac = Fraction(k, n_follower)
        best, best_err = 0, None
        for j in range(n_leader + 1):
            err = abs(Fraction(j, n_leader) - frac)
            if best_err is None or err < best_err:
                best, best_err = j, err
        out.append(best)
    return tuple(out)


class Problem:
    """Assembled NLP: residuals, exact Jacobian, objective, metadata."""

    def __init__(self, model, config: TranscriptionConfig,
                 scenario: MteScenario | None = None):
        self.model = model
        self.config = config
        self.scenario = scenario
        n = config.n_leader
        self.n_leader = n
        if scenario is not None:
            m = scenario.resolve_n(n)
            self.n_follower = m
            self.outage = scenario.outage
            self.active = scenario.active(m)
            self.seg_map = segment_map(n, m)
            self.nd_map = node_map(n, m)
        else:
            self.n_follower = 0
            self.outage = ()
            self.active = ()
            self.seg_map = ()
            self.nd_map = ()
        self._build_layout()
        self._build_rows()
        self._cache = {"key": None}

    def _cached(self, z, name, builder):
        """One-slot per-point cache shared by residual and Jacobian
        assembly (both need the same segment flows)."""
        key = np.asarray(z).tobytes()
        if self._cache.get("key") != key:
            self._cache = {"key": key}
        if name not in self._cache:
            self._cache[name] = builder()
        return self._cache[name]

    # --- layout ---------------------------------------------------------

    def _build_layout(self):
        n, m = self.n_leader, self.n_follower
        self.i_t_lead = 0
        self.i_x_lead = 1
        self.i_u_lead = self.i_x_lead + 6 * (n + 1)
        size = self.i_u_lead + 3 * n
        if self.scenario is not None:
            self.i_t_fol = size
            self.i_x_fol = self.i_t_fol + 1
            self.i_u_fol = self.i_x_fol + 6 * (m + 1)
            self.i_lam = self.i_u_fol + 3 * m
            size = self.i_lam + 6 * (m + 1)
        self.n_vars = size

    def x_lead(self, k) -> slice:
        return slice(self.i_x_lead + 6 * k, self.i_x_lead + 6 * (k + 1))

    def u_lead(self, k) -> slice:
        return slice(self.i_u_lead + 3 * k, self.i_u_lead + 3 * (k + 1))

    def x_fol(self, k) -> slice:
        return slice(self.i_x_fol + 6 * k, self.i_x_fol + 6 * (k + 1))

    def u_fol(self, k) -> slice:
        return slice(self.i_u_fol + 3 * k, self.i_u_fol + 3 * (k + 1))

    def lam(self, k) -> slice:
        return slice(self.i_lam + 6 * k, self.i_lam + 6 * (k + 1))

    def pack(self, t_lead, x_lead, u_lead, t_fol=None, x_fol=None,
             u_fol=None, lam=None) -> np.ndarray:
        z = np.zeros(self.n_vars)
        z[self.i_t_lead] = t_lead
        z[self.i_x_lead:self.i_u_lead] = np.asarray(x_lead, dtype=float).ravel()
        z[self.i_u_lead:self.i_u_lead + 3 * self.n_leader] = (
            np.asarray(u_lead, dtype=float).ravel())
        if self.scenario is not None:
            z[self.i_t_fol] = t_fol
            z[self.i_x_fol:self.i_u_fol] = np.asarray(x_fol, dtype=float).ravel()
            z[self.i_u_fol:self.i_lam] = np.asarray(u_fol, dtype=float).ravel()
            z[self.i_lam:] = np.asarray(lam, dtype=float).ravel()
        return z

    def unpack(self, z) -> dict:
        n, m = self.n_leader, self.n_follower
        out = {
            "t_lead": float(z[self.i_t_lead]),
            "x_lead": np.asarray(z[self.i_x_lead:self.i_u_lead]).reshape(n + 1, 6),
            "u_lead": np.asarray(
                z[self.i_u_lead:self.i_u_lead + 3 * n]).reshape(n, 3),
        }
        if self.scenario is not None:
            out.update(
                t_fol=float(z[self.i_t_fol]),
                x_fol=np.asarray(z[self.i_x_fol:self.i_u_fol]).reshape(m + 1, 6),
                u_fol=np.asarray(z[self.i_u_fol:self.i_lam]).reshape(m, 3),
                lam=np.asarray(z[self.i_lam:]).reshape(m + 1, 6),
            )
        return out

    # --- row bookkeeping -------------------------------------------------

    def _build_rows(self):
        rows = []
        r = 0

        def add(name, count, kind, k=None):
            nonlocal r
            rows.append({"name": name, "slice": slice(r, r + count),
                         "kind": kind, "k": k})
            r += count

        n, m = self.n_leader, self.n_follower
        add("leader_initial", 6, "eq")
        for k in range(n):
            add("leader_continuity", 6, "eq", k)
        add("leader_terminal", 6, "eq")
        if self.scenario is not None:
            add("time_link", 1, "eq")
            add("follower_initial", 6, "eq")
            for k in range(m):
                add("follower_continuity", 6, "eq", k)
            add("follower_terminal", 6, "eq")
            for k in self.outage:
                add("outage_zero_thrust", 3, "eq", k)
            for k in self.active:
                add("kkt_stationarity", 3, "eq", k)
            for k in range(1, m):
                add("kkt_costate", 6, "eq", k)
            add("kkt_transversality", 6, "eq")
            add("costate_origin", 6, "eq")
        for i, obs in enumerate(self.config.obstacles):
            for k in range(n + 1):
                add(f"obstacle{i}_leader", 1, "ineq", k)
            for k in range(m + 1 if self.scenario is not None else 0):
                add(f"obstacle{i}_follower", 1, "ineq", k)
        self.index_map = rows
        self.n_eq = sum(row["slice"].stop - row["slice"].start
                        for row in rows if row["kind"] == "eq")
        self.n_rows = r

    def rows_named(self, name: str):
        return [row for row in self.index_map if row["name"] == name]

    # --- follower tracking matrices --------------------------------------

    def _fol_times(self, z_or_tfol):
        t_fol = z_or_tfol
        return [t_fol * (k / self.n_follower) for k in range(self.n_follower + 1)]

    def _ref_segment_start(self, k: int) -> int:
        """Leader segment whose node time is at or before follower node k
        (exact when the two horizons coincide)."""
        j = (k * self.n_leader) // self.n_follower
        return min(j, self.n_leader - 1)

    def _tracking_batch(self, z, with_sens: bool):
        """All follower-segment tracking matrices in one vectorized pass.

        Returns ``(Psi, G)`` with trailing batch axis: shapes
        ``(6, 6, m)`` and ``(6, 3, m)``; in sensitivity mode they are
        Duals whose 14 directions are ``[X_lead_j0, U_lead_j0,
        U_lead_pi(k), T_lead, T_fol]`` per batch element (the order of
        :meth:`tracking_dirs`)."""
        v = self.unpack(z)
        n, m = self.n_leader, self.n_follower
        j0 = np.array([self._ref_segment_start(k) for k in range(m)])
        jp = np.array(self.seg_map)
        xv = v["x_lead"][j0].T.copy()          # (6, m)
        ujv = v["u_lead"][j0].T.copy()         # (3, m)
        upv = v["u_lead"][jp].T.copy()
        Tl = np.full(m, v["t_lead"])
        Tf = np.full(m, v["t_fol"])
        if with_sens:
            D = 14
            xd = np.zeros((6, m, D))
            ujd = np.zeros((3, m, D))
            upd = np.zeros((3, m, D))
            for i in range(6):
                xd[i, :, i] = 1.0
            for i in range(3):
                ujd[i, :, 6 + i] = 1.0
                upd[i, :, 9 + i] = 1.0
            Tld = np.zeros((m, D))
            Tld[:, 12] = 1.0
            Tfd = np.zeros((m, D))
            Tfd[:, 13] = 1.0
            xj = d.Dual(xv, xd)
            uj = d.Dual(ujv, ujd)
            up = d.Dual(upv, upd)
            Tl = d.Dual(Tl, Tld)
            Tf = d.Dual(Tf, Tfd)
        else:
            xj, uj, up = xv, ujv, upv
        k = np.arange(m)
        t_j0 = Tl * (j0 / n)
        t_k = Tf * (k / m)
        t_k1 = Tf * ((k + 1.0) / m)
        aux = self.model.aux_at(t_j0)
        # reference state at the follower node, reached under the stored
        # leader node state and that segment's control
        x_ref, aux, _, _ = _rk4(self.model, xj, aux, uj, t_j0, t_k,
                                self.config.n_steps)
        eye_b = np.broadcast_to(np.eye(6)[:, :, None], (6, 6, m)).copy()
        if with_sens:
            Phi0 = d.Dual(eye_b, np.zeros((6, 6, m, 14)))
            G0 = d.Dual(np.zeros((6, 3, m)), np.zeros((6, 3, m, 14)))
        else:
            Phi0 = eye_b
            G0 = np.zeros((6, 3, m))
        _, _, Psi, G = _rk4(self.model, x_ref, aux, up, t_k, t_k1,
                            self.config.n_steps, Phi0, G0)
        return Psi, G

    def tracking_matrices(self, z, k: int, with_sens: bool = False):
        """Transition ``Psi_k`` and held-control convolution ``G_k`` of the
        leader-linearized deviation dynamics over follower segment ``k``."""
        name = "track_s" if with_sens else "track_f"
        Psi, G = self._cached(
            z, name, lambda: self._tracking_batch(z, with_sens))
        return Psi[:, :, k], G[:, :, k]

    def tracking_dirs(self, k: int):
        """Column groups matching the sensitivity directions of
        :meth:`tracking_matrices`."""
        j0 = self._ref_segment_start(k)
        jp = self.seg_map[k]
        return [
            (self.x_lead(j0), slice(0, 6)),
            (self.u_lead(j0), slice(6, 9)),
            (self.u_lead(jp), slice(9, 12)),
            (slice(self.i_t_lead, self.i_t_lead + 1), slice(12, 13)),
            (slice(self.i_t_fol, self.i_t_fol + 1), slice(13, 14)),
        ]

    # --- objective --------------------------------------------------------

    def _smooth_eps(self) -> float:
        return self.config.fuel_eps * self.config.u_max

    def eval_objective(self, z) -> float:
        v = self.unpack(z)
        cfg = self.config
        eps2 = self._smooth_eps() ** 2
        fuel = float(np.sum(np.sqrt(np.sum(v["u_lead"] ** 2, axis=1) + eps2)))
        return cfg.w_t * v["t_lead"] + cfg.w_u * fuel

    def objective_gradient(self, z) -> np.ndarray:
        v = self.unpack(z)
        cfg = self.config
        g = np.zeros(self.n_vars)
        g[self.i_t_lead] = cfg.w_t
        eps2 = self._smooth_eps() ** 2
        norms = np.sqrt(np.sum(v["u_lead"] ** 2, axis=1) + eps2)
        for k in range(self.n_leader):
            g[self.u_lead(k)] = cfg.w_u * v["u_lead"][k] / norms[k]
        return g

    def objective_hessian(self, z) -> np.ndarray:
        """Exact (block-diagonal) Hessian of the smoothed objective."""
        v = self.unpack(z)
        cfg = self.config
        H = np.zeros((self.n_vars, self.n_vars))
        eps2 = self._smooth_eps() ** 2
        for k in range(self.n_leader):
            u = v["u_lead"][k]
            nrm = math.sqrt(float(u @ u) + eps2)
            blk = cfg.w_u * (np.eye(3) / nrm - np.outer(u, u) / nrm ** 3)
            H[self.u_lead(k), self.u_lead(k)] = blk
        return H

    def eval_follower_objective(self, z) -> float:
        """Quadratic tracking cost of the follower against the mapped
        leader trajectory."""
        if self.scenario is None:
            return 0.0
        v = self.unpack(z)
        Q, R, Qf = self.config.Q, self.config.R, self.config.Qf
        total = 0.0
        for k in range(self.n_follower):
            dx = v["x_fol"][k] - v["x_lead"][self.nd_map[k]]
            du = v["u_fol"][k] - v["u_lead"][self.seg_map[k]]
            total += float(dx @ Q @ dx + du @ R @ du)
        dxN = v["x_fol"][self.n_follower] - v["x_lead"][self.n_leader]
        return total + float(dxN @ Qf @ dxN)

    # --- residuals --------------------------------------------------------

    def _continuity_batch(self, z, leader: bool, with_sens: bool):
        """Endpoints of every segment flow in one vectorized pass.

        Returns the flowed states with trailing batch axis, shape
        ``(6, B)``; in sensitivity mode a Dual whose 10 directions are
        ``[X_k, U_k, T]`` per batch element."""
        v = self.unpack(z)
        if leader:
            Bn = self.n_leader
            xv = v["x_lead"][:Bn].T.copy()
            uv = v["u_lead"].T.copy()
            T = v["t_lead"]
        else:
            Bn = self.n_follower
            xv = v["x_fol"][:Bn].T.copy()
            uv = v["u_fol"].T.copy()
            T = v["t_fol"]
        Tb = np.full(Bn, T)
        if with_sens:
            D = 10
            xd = np.zeros((6, Bn, D))
            ud = np.zeros((3, Bn, D))
            for i in range(6):
                xd[i, :, i] = 1.0
            for i in range(3):
                ud[i, :, 6 + i] = 1.0
            Td = np.zeros((Bn, D))
            Td[:, 9] = 1.0
            x = d.Dual(xv, xd)
            u = d.Dual(uv, ud)
            Tb = d.Dual(Tb, Td)
        else:
            x, u = xv, uv
        k = np.arange(Bn)
        t0 = Tb * (k / Bn)
        t1 = Tb * ((k + 1.0) / Bn)
        aux0 = self.model.aux_at(t0)
        x1, _, _, _ = _rk4(self.model, x, aux0, u, t0, t1,
                           self.config.n_steps)
        return x1

    def _segment_end(self, z, k: int, leader: bool, with_sens: bool = False):
        name = ("lead_" if leader else "fol_") + ("s" if with_sens else "f")
        batch = self._cached(
            z, name, lambda: self._continuity_batch(z, leader, with_sens))
        return batch[:, k]

    def eval_constraints(self, z) -> np.ndarray:
        cfg = self.config
        v = self.unpack(z)
        c = np.zeros(self.n_rows)
        x0 = np.asarray(cfg.x0, dtype=float)
        x1 = np.asarray(cfg.x1, dtype=float)
        for row in self.index_map:
            name, sl, k = row["name"], row["slice"], row["k"]
            if name == "leader_initial":
                c[sl] = v["x_lead"][0] - x0
            elif name == "leader_continuity":
                c[sl] = v["x_lead"][k + 1] - d.value(
                    self._segment_end(z, k, leader=True))
            elif name == "leader_terminal":
                c[sl] = v["x_lead"][self.n_leader] - x1
            elif name == "time_link":
                c[sl] = v["t_fol"] - v["t_lead"]
            elif name == "follower_initial":
                c[sl] = v["x_fol"][0] - x0
            elif name == "follower_continuity":
                c[sl] = v["x_fol"][k + 1] - d.value(
                    self._segment_end(z, k, leader=False))
            elif name == "follower_terminal":
                c[sl] = v["x_fol"][self.n_follower] - x1
            elif name == "outage_zero_thrust":
                c[sl] = v["u_fol"][k]
            elif name == "kkt_stationarity":
                _, G = self.tracking_matrices(z, k)
                du = v["u_fol"][k] - v["u_lead"][self.seg_map[k]]
                c[sl] = 2.0 * cfg.R @ du - G.T @ v["lam"][k + 1]
            elif name == "kkt_costate":
                Psi, _ = self.tracking_matrices(z, k)
                dx = v["x_fol"][k] - v["x_lead"][self.nd_map[k]]
                c[sl] = (2.0 * cfg.Q @ dx + v["lam"][k]
                         - Psi.T @ v["lam"][k + 1])
            elif name == "kkt_transversality":
                dxN = v["x_fol"][self.n_follower] - v["x_lead"][self.n_leader]
                c[sl] = 2.0 * cfg.Qf @ dxN + v["lam"][self.n_follower]
            elif name == "costate_origin":
                c[sl] = v["lam"][0]
            elif name.startswith("obstacle"):
                i = int(name[8:name.index("_")])
                obs = cfg.obstacles[i]
                pos = (v["x_lead"][k][:3] if name.endswith("leader")
                       else v["x_fol"][k][:3])
                c[sl] = (np.linalg.norm(pos - np.asarray(obs.center))
                         - obs.radius)
        return c

    # --- exact Jacobian ---------------------------------------------------

    def jacobian(self, z) -> np.ndarray:
        cfg = self.config
        v = self.unpack(z)
        J = np.zeros((self.n_rows, self.n_vars))
        I6 = np.eye(6)
        track_cache: dict[int, tuple] = {}

        def tracked(k):
            if k not in track_cache:
                track_cache[k] = self.tracking_matrices(z, k, with_sens=True)
            return track_cache[k]

        for row in self.index_map:
            name, sl, k = row["name"], row["slice"], row["k"]
            if name == "leader_initial":
                J[sl, self.x_lead(0)] = I6
            elif name == "leader_continuity":
                xk1 = self._segment_end(z, k, leader=True, with_sens=True)
                J[sl, self.x_lead(k + 1)] = I6
                J[sl, self.x_lead(k)] = -xk1.der[:, 0:6]
                J[sl, self.u_lead(k)] = -xk1.der[:, 6:9]
                J[sl, self.i_t_lead] = -xk1.der[:, 9]
            elif name == "leader_terminal":
                J[sl, self.x_lead(self.n_leader)] = I6
            elif name == "time_link":
                J[sl, self.i_t_fol] = 1.0
                J[sl, self.i_t_lead] = -1.0
            elif name == "follower_initial":
                J[sl, self.x_fol(0)] = I6
            elif name == "follower_continuity":
                xk1 = self._segment_end(z, k, leader=False, with_sens=True)
                J[sl, self.x_fol(k + 1)] = I6
                J[sl, self.x_fol(k)] = -xk1.der[:, 0:6]
                J[sl, self.u_fol(k)] = -xk1.der[:, 6:9]
                J[sl, self.i_t_fol] = -xk1.der[:, 9]
            elif name == "follower_terminal":
                J[sl, self.x_fol(self.n_follower)] = I6
            elif name == "outage_zero_thrust":
                J[sl, self.u_fol(k)] = np.eye(3)
            elif name == "kkt_stationarity":
                _, G = tracked(k)
                lam = v["lam"][k + 1]
                J[sl, self.u_fol(k)] = 2.0 * cfg.R
                J[sl, self.u_lead(self.seg_map[k])] += -2.0 * cfg.R
                J[sl, self.lam(k + 1)] = -G.val.T
                dG = -np.einsum("ijd,i->jd", G.der, lam)   # (3, 14)
                for cols, dirs in self.tracking_dirs(k):
                    J[sl, cols] += dG[:, dirs]
            elif name == "kkt_costate":
                Psi, _ = tracked(k)
                lam = v["lam"][k + 1]
                J[sl, self.x_fol(k)] = 2.0 * cfg.Q
                J[sl, self.x_lead(self.nd_map[k])] += -2.0 * cfg.Q
                J[sl, self.lam(k)] = I6
                J[sl, self.lam(k + 1)] = -Psi.val.T
                dP = -np.einsum("ijd,i->jd", Psi.der, lam)  # (6, 14)
                for cols, dirs in self.tracking_dirs(k):
                    J[sl, cols] += dP[:, dirs]
            elif name == "kkt_transversality":
                J[sl, self.x_fol(self.n_follower)] = 2.0 * cfg.Qf
                J[sl, self.x_lead(self.n_leader)] += -2.0 * cfg.Qf
                J[sl, self.lam(self.n_follower)] = I6
            elif name == "costate_origin":
                J[sl, self.lam(0)] = I6
            elif name.startswith("obstacle"):
                i = int(name[8:name.index("_")])
                obs = cfg.obstacles[i]
                leader = name.endswith("leader")
                pos = (v["x_lead"][k][:3] if leader else v["x_fol"][k][:3])
                diff = pos - np.asarray(obs.center)
                grad = diff / np.linalg.norm(diff)
                xs = self.x_lead(k) if leader else self.x_fol(k)
                J[sl, slice(xs.start, xs.start + 3)] = grad
        return J

    def sparsity_pattern(self) -> np.ndarray:
        """Structural nonzero mask of the Jacobian."""
        P = np.zeros((self.n_rows, self.n_vars), dtype=bool)

        def mark(sl, cols):
            P[sl, cols] = True

        for row in self.index_map:
            name, sl, k = row["name"], row["slice"], row["k"]
            if name == "leader_initial":
                mark(sl, self.x_lead(0))
            elif name == "leader_continuity":
                mark(sl, self.x_lead(k))
                mark(sl, self.x_lead(k + 1))
                mark(sl, self.u_lead(k))
                mark(sl, self.i_t_lead)
            elif name == "leader_terminal":
                mark(sl, self.x_lead(self.n_leader))
            elif name == "time_link":
                mark(sl, self.i_t_lead)
                mark(sl, self.i_t_fol)
            elif name == "follower_initial":
                mark(sl, self.x_fol(0))
            elif name == "follower_continuity":
                mark(sl, self.x_fol(k))
                mark(sl, self.x_fol(k + 1))
                mark(sl, self.u_fol(k))
                mark(sl, self.i_t_fol)
            elif name == "follower_terminal":
                mark(sl, self.x_fol(self.n_follower))
            elif name == "outage_zero_thrust":
                mark(sl, self.u_fol(k))
            elif name in ("kkt_stationarity", "kkt_costate"):
                if name == "kkt_stationarity":
                    mark(sl, self.u_fol(k))
                    mark(sl, self.u_lead(self.seg_map[k]))
                else:
                    mark(sl, self.x_fol(k))
                    mark(sl, self.x_lead(self.nd_map[k]))
                    mark(sl, self.lam(k))
                mark(sl, self.lam(k + 1))
                for cols, _ in self.tracking_dirs(k):
                    mark(sl, cols)
            elif name == "kkt_transversality":
                mark(sl, self.x_fol(self.n_follower))
                mark(sl, self.x_lead(self.n_leader))
                mark(sl, self.lam(self.n_follower))
            elif name == "costate_origin":
                mark(sl, self.lam(0))
            elif name.startswith("obstacle"):
                xs = self.x_lead(k) if name.endswith("leader") else self.x_fol(k)
                mark(sl, slice(xs.start, xs.start + 3))
        return P

    # --- solver interface -------------------------------------------------

    def bounds(self):
        """Box bounds on the decision vector (inf where unbounded)."""
        cfg = self.config
        lo = np.full(self.n_vars, -np.inf)
        hi = np.full(self.n_vars, np.inf)
        lo[self.i_t_lead], hi[self.i_t_lead] = cfg.t_bounds
        for k in range(self.n_leader):
            sl = self.u_lead(k)
            lo[sl], hi[sl] = -cfg.u_max, cfg.u_max
        if self.scenario is not None:
            lo[self.i_t_fol], hi[self.i_t_fol] = cfg.t_bounds
            for k in range(self.n_follower):
                sl = self.u_fol(k)
                lo[sl], hi[sl] = -cfg.u_max, cfg.u_max
        return lo, hi

    def equality_mask(self) -> np.ndarray:
        """True for equality rows, False for inequality (g >= 0) rows."""
        mask = np.zeros(self.n_rows, dtype=bool)
        for row in self.index_map:
            if row["kind"] == "eq":
                mask[row["slice"]] = True
        return mask

    def objective_scale(self, z0) -> float:
        """Magnitude used to normalize the objective and its gradient."""
        cfg = self.config
        return max(abs(self.eval_objective(z0)),
                   cfg.w_u * cfg.u_max * self.n_leader, 1e-15)

    # --- scaling ----------------------------------------------------------

    def col_scales(self, z0=None) -> np.ndarray:
        cfg = self.config
        s = np.ones(self.n_vars)
        pos_s = max(1.0, float(np.linalg.norm(np.asarray(cfg.x0)[:3])))
        vel_s = max(cfg.u_max * cfg.t_flight, 1e-12)
        xs = np.array([pos_s] * 3 + [vel_s] * 3)
        s[self.i_t_lead] = cfg.t_flight
        for k in range(self.n_leader + 1):
            s[self.x_lead(k)] = xs
        for k in range(self.n_leader):
            s[self.u_lead(k)] = cfg.u_max
        if self.scenario is not None:
            s[self.i_t_fol] = cfg.t_flight
            for k in range(self.n_follower + 1):
                s[self.x_fol(k)] = xs
            for k in range(self.n_follower):
                s[self.u_fol(k)] = cfg.u_max
            lam_s = 1.0
            if z0 is not None:
                lam_s = max(float(np.max(np.abs(z0[self.i_lam:]))), 1e-12)
            for k in range(self.n_follower + 1):
                s[self.lam(k)] = lam_s
        return s

    def row_scales(self, z0=None) -> np.ndarray:
        cfg = self.config
        r = np.ones(self.n_rows)
        pos_s = max(1.0, float(np.linalg.norm(np.asarray(cfg.x0)[:3])))
        vel_s = max(cfg.u_max * cfg.t_flight, 1e-12)
        xs = np.array([pos_s] * 3 + [vel_s] * 3)
        lam_s = 1.0
        psi_n = 1.0
        g_n = cfg.t_flight / max(self.n_follower, 1)
        if z0 is not None and self.scenario is not None:
            lam_s = max(float(np.max(np.abs(z0[self.i_lam:]))), 1e-12)
            for k in range(self.n_follower):
                Psi, G = self.tracking_matrices(z0, k)
                psi_n = max(psi_n, float(np.linalg.norm(Psi, 2)))
                g_n = max(g_n, float(np.linalg.norm(G, 2)))
        # scale rows by the magnitude of their largest term so that the
        # cancellation noise floor sits near machine precision of 1
        stat_s = max(2.0 * np.linalg.norm(cfg.R, 2) * cfg.u_max, g_n * lam_s)
        cost_s = max(2.0 * np.linalg.norm(cfg.Q, 2) * float(np.max(xs)),
                     (1.0 + psi_n) * lam_s)
        trans_s = max(2.0 * np.linalg.norm(cfg.Qf, 2) * float(np.max(xs)),
                      lam_s)
        for row in self.index_map:
            name, sl = row["name"], row["slice"]
            if name in ("leader_initial", "leader_continuity", "leader_terminal",
                        "follower_initial", "follower_continuity",
                        "follower_terminal"):
                r[sl] = xs
            elif name == "time_link":
                r[sl] = cfg.t_flight
            elif name == "outage_zero_thrust":
                r[sl] = cfg.u_max
            elif name == "kkt_stationarity":
                r[sl] = stat_s
            elif name == "kkt_costate":
                r[sl] = cost_s
            elif name == "kkt_transversality":
                r[sl] = trans_s
            elif name == "costate_origin":
                r[sl] = lam_s
            elif name.startswith("obstacle"):
                r[sl] = pos_s
        return r

    # --- tracking helpers for analysis and initialization ----------------

    def tracking_rollout(self, z, u_fol) -> np.ndarray:
        """Deviation states produced by the leader-linearized tracking
        dynamics under follower controls ``u_fol`` ((m,3)), starting from
        zero deviation."""
        v = self.unpack(z)
        m = self.n_follower
        dx = np.zeros((m + 1, 6))
        for k in range(m):
            Psi, G = self.tracking_matrices(z, k)
            du = np.asarray(u_fol[k]) - v["u_lead"][self.seg_map[k]]
            dx[k + 1] = Psi @ dx[k] + G @ du
        return dx

    def tracking_cost(self, z, u_fol) -> float:
        """Tracking objective of the linearized rollout (used by the
        independent descent check and available for diagnostics)."""
        v = self.unpack(z)
        Q, R, Qf = self.config.Q, self.config.R, self.config.Qf
        dx = self.tracking_rollout(z, u_fol)
        total = 0.0
        for k in range(self.n_follower):
            du = np.asarray(u_fol[k]) - v["u_lead"][self.seg_map[k]]
            total += float(dx[k] @ Q @ dx[k] + du @ R @ du)
        return total + float(dx[-1] @ Qf @ dx[-1])

    def costates_from_transversality(self, z) -> np.ndarray:
        """Backward substitution of the costate recursion, anchored at the
        transversality condition, for the deviations implied by ``z``."""
        v = self.unpack(z)
        m = self.n_follower
        Q, Qf = self.config.Q, self.config.Qf
        lam = np.zeros((m + 1, 6))
        dxN = v["x_fol"][m] - v["x_lead"][self.n_leader]
        lam[m] = -2.0 * Qf @ dxN
        for k in range(m - 1, 0, -1):
            Psi, _ = self.tracking_matrices(z, k)
            dx = v["x_fol"][k] - v["x_lead"][self.nd_map[k]]
            lam[k] = Psi.T @ lam[k + 1] - 2.0 * Q @ dx
        return lam


def build_problem(model, config: TranscriptionConfig,
                  scenario: MteScenario | None = None) -> Problem:
    return Problem(model, config, scenario)


def reference_from_solution(problem: Problem, z) -> "ReferenceTrajectory":
    """Leader part of a solution as a continuously queryable trajectory."""
    from .propagation import ReferenceTrajectory

    v = problem.unpack(z)
    times = np.linspace(0.0, v["t_lead"], problem.n_leader + 1)
    return ReferenceTrajectory(problem.model, times, v["x_lead"],
                               v["u_lead"], problem.config.n_steps)
