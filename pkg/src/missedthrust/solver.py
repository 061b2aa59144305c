"""Augmented-Lagrangian solution of the transcribed problem.

Outer loop: classical multiplier updates with penalty growth on stalled
feasibility and progressively tightened subproblem tolerances.  Inner
loop: bound-constrained Gauss-Newton descent on the augmented Lagrangian
with the exact constraint Jacobian from the transcription.
After the outer loop a truncated-SVD restoration pushes equality
residuals to tight tolerances (the embedded optimality conditions make
the constraint Jacobian rank-deficient, so restoration steps use a
truncated least-squares solve), and an optional reduced-space limited-
memory BFGS phase refines optimality along the constraint manifold.
Everything is deterministic for a fixed seed; initial guesses use a
counter-based generator so runs are reproducible across hosts.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .propagation import propagate_trajectory
from .transcription import Problem, TranscriptionConfig, MteScenario, build_problem

__all__ = ["SolveOptions", "SolveReport", "initialize", "solve", "run_ensemble"]


@dataclass(frozen=True)
class SolveOptions:
    max_outer: int = 30
    inner_maxiter: int = 100
    tol_con: float = 1e-6        # scaled equality/inequality violation
    tol_stat: float = 1e-4       # scaled projected stationarity
    mu0: float = 1e3
    mu_growth: float = 10.0
    mu_max: float = 1e8
    polish_iters: int = 12
    refine_iters: int = 200      # reduced-space quasi-Newton refinement
    rcond: float = 1e-9          # SVD cutoff for rank-deficient solves
    seed: int = 0
    control_fill: float = 0.3    # initial control magnitude, fraction of bound
    checkpoint_path: str | None = None


@dataclass
class SolveReport:
    converged: bool
    status: str
    outer_iterations: int
    inner_iterations: int
    objective: float
    max_violation: float
    stationarity: float
    wall_time: float
    seed: int
    z: np.ndarray = field(repr=False, default=None)
    multipliers: np.ndarray = field(repr=False, default=None)


def initialize(problem: Problem, seed: int = 0,
               options: SolveOptions | None = None) -> np.ndarray:
    """Deterministic initial guess: sampled leader controls, simulated
    states, follower copied from the mapped leader with the outage
    zeroed, costates by transversality back-substitution."""
    opts = options or SolveOptions(seed=seed)
    rng = np.random.Generator(np.random.Philox(key=seed))
    cfg = problem.config
    n = problem.n_leader
    u_lead = opts.control_fill * cfg.u_max * rng.uniform(-1.0, 1.0, (n, 3))
    t_flight = cfg.t_flight
    times = np.linspace(0.0, t_flight, n + 1)
    x_lead = propagate_trajectory(problem.model, cfg.x0, u_lead, times,
                                  cfg.n_steps)
    if problem.scenario is None:
        return problem.pack(t_flight, x_lead, u_lead)
    m = problem.n_follower
    u_fol = np.array([np.zeros(3) if k in problem.outage
                      else u_lead[problem.seg_map[k]] for k in range(m)])
    times_f = np.linspace(0.0, t_flight, m + 1)
    x_fol = propagate_trajectory(problem.model, cfg.x0, u_fol, times_f,
                                 cfg.n_steps)
    z = problem.pack(t_flight, x_lead, u_lead, t_flight, x_fol, u_fol,
                     np.zeros((m + 1, 6)))
    lam = problem.costates_from_transversality(z)
    z[problem.i_lam:] = lam.ravel()
    return z


def _bounds(problem, s: np.ndarray):
    lo, hi = problem.bounds()
    return lo / s, hi / s


def _eq_mask(problem) -> np.ndarray:
    return problem.equality_mask()


def _violation(c: np.ndarray, eq: np.ndarray) -> float:
    v_eq = np.max(np.abs(c[eq])) if eq.any() else 0.0
    v_in = np.max(np.maximum(0.0, -c[~eq])) if (~eq).any() else 0.0
    return max(v_eq, v_in)


def solve(problem: Problem, z0: np.ndarray | None = None,
          options: SolveOptions | None = None) -> SolveReport:
    opts = options or SolveOptions()
    t_start = time.perf_counter()
    if z0 is None:
        z0 = initialize(problem, opts.seed, opts)
    s = problem.col_scales(z0)
    r = problem.row_scales(z0)
    eq = _eq_mask(problem)
    f_ref = problem.objective_scale(z0)
    lo, hi = _bounds(problem, s)

    def scaled_constraints(y):
        z = y * s
        # wild line-search trial points can overflow the cubic terms of
        # the dynamics; non-finite residuals are rejected by the merit
        # test rather than warned about
        with np.errstate(over="ignore", invalid="ignore"):
            return problem.eval_constraints(z) / r

    def scaled_jacobian(y):
        z = y * s
        return problem.jacobian(z) / r[:, None] * s[None, :]

    def scaled_objective(y):
        z = y * s
        return (problem.eval_objective(z) / f_ref,
                problem.objective_gradient(z) * s / f_ref)

    def scaled_obj_hessian(y):
        z = y * s
        return problem.objective_hessian(z) * np.outer(s, s) / f_ref

    mu = opts.mu0
    lam = np.zeros(problem.n_rows)
    y = z0 / s
    status = "max_iterations"
    stationarity = np.inf
    outer_done = 0
    n = problem.n_vars

    def al_value(yv, mu_, c=None):
        f, _ = scaled_objective(yv)
        if c is None:
            c = scaled_constraints(yv)
        with np.errstate(over="ignore", invalid="ignore"):
            ce = c[eq]
            val = f + float(lam[eq] @ ce + 0.5 * mu_ * ce @ ce)
            if (~eq).any():
                gi = c[~eq]
                li = lam[~eq]
                act = np.maximum(0.0, li / mu_ - gi)
                val += float(0.5 * mu_ * (act @ act)
                             - 0.5 / mu_ * (li @ li))
        return val if np.isfinite(val) else np.inf

    def al_gradient(y, mu, c, J, g):
        grad = g + J[eq].T @ (lam[eq] + mu * c[eq])
        if (~eq).any():
            act = np.maximum(0.0, lam[~eq] / mu - c[~eq])
            grad += J[~eq].T @ (-mu * act)
        return grad

    def inner_solve(y, mu, omega, maxiter):
        """Active-set Gauss-Newton descent on the augmented Lagrangian.

        Variables pinned at a bound with the gradient pushing outward are
        frozen; the reduced Newton system uses mu J^T J plus the exact
        objective Hessian with Levenberg damping, and steps are accepted
        by a projected backtracking line search."""
        sigma = 1e-8
        pgn = np.inf
        used = 0
        for used in range(1, maxiter + 1):
            c = scaled_constraints(y)
            J = scaled_jacobian(y)
            _, g = scaled_objective(y)
            val = al_value(y, mu, c)
            grad = al_gradient(y, mu, c, J, g)
            pg = grad.copy()
            pg[(y <= lo + 1e-12) & (pg > 0)] = 0.0
            pg[(y >= hi - 1e-12) & (pg < 0)] = 0.0
            pgn = float(np.max(np.abs(pg)))
            if pgn <= omega:
                break
            free = ~(((y <= lo + 1e-12) & (grad > 0))
                     | ((y >= hi - 1e-12) & (grad < 0)))
            rows = eq.copy()
            if (~eq).any():
                rows |= (~eq) & (lam / mu - c > 0.0)
            Jgn = np.sqrt(mu) * J[rows][:, free]
            Hff = Jgn.T @ Jgn + scaled_obj_hessian(y)[np.ix_(free, free)]
            nf = int(free.sum())
            accepted = False
            for _ in range(8):
                try:
                    pf = np.linalg.solve(Hff + sigma * np.eye(nf),
                                         -grad[free])
                except np.linalg.LinAlgError:
                    sigma = max(sigma * 100.0, 1e-8)
                    continue
                p = np.zeros(n)
                p[free] = pf
                alpha = 1.0
                for _ in range(30):
                    y_try = np.clip(y + alpha * p, lo, hi)
                    m_lin = float(grad @ (y_try - y))
                    if m_lin < 0.0 and (al_value(y_try, mu)
                                        <= val + 1e-4 * m_lin):
                        accepted = True
                        break
                    alpha *= 0.5
                if accepted:
                    y = y_try
                    sigma = sigma * 0.1 if alpha == 1.0 else sigma * 3.0
                    sigma = min(max(sigma, 1e-10), 1e10)
                    break
                sigma = max(sigma * 100.0, 1e-8)
            if not accepted:
                break
        return y, pgn, used

    omega = 1e-1
    eta = 1.0
    inner_total = 0
    for outer in range(opts.max_outer):
        y, _, used = inner_solve(y, mu, omega, opts.inner_maxiter)
        inner_total += used
        c = scaled_constraints(y)
        viol = _violation(c, eq)
        if viol <= max(eta, opts.tol_con):
            # multiplier update; forcing eta below half the accepted
            # violation keeps the accepted-iterate violations monotone
            lam[eq] += mu * c[eq]
            lam[~eq] = mu * np.maximum(0.0, lam[~eq] / mu - c[~eq])
            omega = max(omega / 10.0, 0.3 * opts.tol_stat)
            eta = max(min(eta / 5.0, 0.5 * viol), 0.3 * opts.tol_con)
        else:
            mu = min(mu * opts.mu_growth, opts.mu_max)
            omega = 1e-1
        # stationarity of the ordinary Lagrangian, projected on the bounds
        _, g = scaled_objective(y)
        J = scaled_jacobian(y)
        gl = g + J[eq].T @ lam[eq] - J[~eq].T @ lam[~eq]
        gl = np.where((y <= lo + 1e-12) & (gl > 0), 0.0, gl)
        gl = np.where((y >= hi - 1e-12) & (gl < 0), 0.0, gl)
        stationarity = float(np.max(np.abs(gl)))
        outer_done = outer + 1
        if opts.checkpoint_path:
            with open(opts.checkpoint_path, "w") as fh:
                json.dump({"outer": outer_done, "mu": mu,
                           "violation": viol,
                           "stationarity": stationarity,
                           "z": (y * s).tolist(),
                           "multipliers": lam.tolist()}, fh)
        if viol <= opts.tol_con and stationarity <= opts.tol_stat:
            status = "converged"
            break

    def restore(y, iters):
        """Feasibility restoration on the equality set (plus violated
        inequalities) via truncated least squares.  The SVD cutoff keeps
        near-null Jacobian directions out of the step, which is what
        lets restoration make progress on the rank-deficient systems
        produced by the embedded optimality conditions."""
        for _ in range(iters):
            c = scaled_constraints(y)
            v0 = _violation(c, eq)
            if v0 <= 1e2 * np.finfo(float).eps:
                break
            J = scaled_jacobian(y)
            rows = eq | ((~eq) & (c < 0.0))
            free = (y > lo + 1e-12) & (y < hi - 1e-12)
            dy_f, *_ = np.linalg.lstsq(J[rows][:, free], -c[rows],
                                       rcond=opts.rcond)
            dy = np.zeros(n)
            dy[free] = dy_f
            step = 1.0
            moved = False
            for _ in range(25):
                y_try = np.clip(y + step * dy, lo, hi)
                if (_violation(scaled_constraints(y_try), eq)
                        < v0 * (1.0 - 0.1 * step)):
                    y = y_try
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
        return y

    def reduced_grad(y):
        """Objective gradient projected onto the tangent space of the
        active constraints, using least-squares multipliers.  Its max
        norm is the reported stationarity measure."""
        c = scaled_constraints(y)
        J = scaled_jacobian(y)
        f, g = scaled_objective(y)
        free = (y > lo + 1e-12) & (y < hi - 1e-12)
        rows = eq | ((~eq) & (np.abs(c) <= opts.tol_con))
        Ja = J[rows][:, free]
        lam_ls, *_ = np.linalg.lstsq(Ja.T, -g[free], rcond=opts.rcond)
        rg = np.zeros(n)
        rg[free] = g[free] + Ja.T @ lam_ls
        return f, rg, _violation(c, eq)

    y = restore(y, opts.polish_iters)

    # reduced-space limited-memory BFGS refinement: descend along the
    # constraint manifold, restoring feasibility after every trial step
    if opts.refine_iters > 0:
        hist_s, hist_y = [], []
        f, rg, viol = reduced_grad(y)
        trail = []
        for _ in range(opts.refine_iters):
            stationarity = float(np.max(np.abs(rg)))
            # the measure fluctuates along near-null constraint
            # directions, so keep the feasible iterates and pick the
            # most stationary one near the final objective afterwards
            if viol <= opts.tol_con:
                trail.append((stationarity, f, y.copy()))
            if stationarity <= opts.tol_stat and viol <= opts.tol_con:
                break
            q = rg.copy()
            alphas = []
            for sk, yk in reversed(list(zip(hist_s, hist_y))):
                rho = 1.0 / float(yk @ sk)
                a = rho * float(sk @ q)
                alphas.append(a)
                q -= a * yk
            if hist_s:
                q *= float(hist_s[-1] @ hist_y[-1]) / float(
                    hist_y[-1] @ hist_y[-1])
            for (sk, yk), a in zip(zip(hist_s, hist_y), reversed(alphas)):
                rho = 1.0 / float(yk @ sk)
                q += (a - rho * float(yk @ q)) * sk
            d = -q
            if float(d @ rg) > -1e-16:
                d = -rg
                hist_s.clear()
                hist_y.clear()
            alpha, ok = 1.0, False
            for _ in range(30):
                y_try = restore(np.clip(y + alpha * d, lo, hi), iters=8)
                f_try, rg_try, v_try = reduced_grad(y_try)
                if (f_try < f + 1e-4 * alpha * float(d @ rg)
                        and v_try <= 1e2 * opts.tol_con):
                    ok = True
                    break
                alpha *= 0.5
            if not ok:
                break
            sk, yk = y_try - y, rg_try - rg
            if float(sk @ yk) > 1e-14 * float(sk @ sk):
                hist_s.append(sk)
                hist_y.append(yk)
                if len(hist_s) > 12:
                    hist_s.pop(0)
                    hist_y.pop(0)
            y, f, rg, viol = y_try, f_try, rg_try, v_try
        f_end = f
        cands = [t for t in trail if t[1] <= f_end + 1e-3 * abs(f_end)]
        if cands:
            stat_c, _, y_c = min(cands, key=lambda t: t[0])
            if stat_c < float(np.max(np.abs(rg))):
                y = y_c
        y = restore(y, opts.polish_iters)

    _, rg, viol = reduced_grad(y)
    stationarity = float(np.max(np.abs(rg)))
    z = y * s
    converged = bool(viol <= opts.tol_con and stationarity <= opts.tol_stat)
    if converged:
        status = "converged"
    elif viol <= opts.tol_con:
        status = "feasible_only"
    return SolveReport(
        converged=converged,
        status=status,
        outer_iterations=outer_done,
        inner_iterations=inner_total,
        objective=float(problem.eval_objective(z)),
        max_violation=float(viol),
        stationarity=float(stationarity),
        wall_time=time.perf_counter() - t_start,
        seed=opts.seed,
        z=z,
        multipliers=lam,
    )


def _ensemble_worker(args):
    model, config, scenario, seed, options = args
    problem = build_problem(model, config, scenario)
    opts = SolveOptions(**{**asdict(options), "seed": seed})
    report = solve(problem, options=opts)
    return report


def run_ensemble(model, config: TranscriptionConfig,
                 scenario: MteScenario | None, seeds,
                 options: SolveOptions | None = None,
                 jobs: int = 1) -> list:
    """Solve one problem per seed; reports come back ordered by seed."""
    options = options or SolveOptions()
    tasks = [(model, config, scenario, int(seed), options) for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_ensemble_worker, tasks))
    else:
        reports = [_ensemble_worker(t) for t in tasks]
    return reports
