"""End-to-end acceptance gate.

Each test prints one PASS/FAIL line with its headline number so the
whole gate can be audited from the pytest log.  Tolerances are stated
inline next to each assertion.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from missedthrust.certificate import (
    blowup_time, certificate_triad, extract_bounds, linear_error_envelope,
    max_missed_thrust_duration, riccati_envelope, riccati_envelope_ode,
    safe_radius, saturation_ratio,
)
from missedthrust.dynamics import (
    CircularOrbit, EccentricOrbit, curvature_constant, jacobian_state,
)
from missedthrust.propagation import flow, flow_with_stm
from missedthrust.recovery import controllability_gramian, min_energy
from missedthrust.solver import SolveOptions, initialize, solve
from missedthrust.transcription import (
    MteScenario, build_problem, reference_from_solution,
)

from conftest import MU_EARTH, _rendezvous_config

RNG_GLOBAL = np.random.default_rng(20260826)


def report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def random_branch_bounds(rng, n):
    """Bound triples spread across the three discriminant regimes of the
    comparison dynamics."""
    out = []
    for _ in range(n):
        alpha = 10.0 ** rng.uniform(-5, -2)
        f_max = 10.0 ** rng.uniform(-9, -5)
        branch = int(rng.integers(3))
        crit = alpha * alpha / (2.0 * f_max)
        if branch == 0:
            h = crit * rng.uniform(0.05, 0.95)
        elif branch == 1:
            h = crit
        else:
            h = crit * rng.uniform(1.05, 20.0)
        out.append((alpha, h, f_max))
    return out


@pytest.fixture(scope="module")
def converged_batch(circ):
    """At least 50 converged small rendezvous solutions with distinct
    initial states (shared by the sufficiency and ordering criteria)."""
    rng = np.random.default_rng(7771)
    solutions = []
    t0 = time.perf_counter()
    attempts = 0
    while len(solutions) < 50 and attempts < 70:
        attempts += 1
        x0 = np.concatenate([rng.uniform(-3.0, 3.0, 3), np.zeros(3)])
        cfg = _rendezvous_config(x0=tuple(x0), n_leader=2)
        problem = build_problem(circ, cfg)
        rep = solve(problem, options=SolveOptions(seed=attempts))
        if rep.converged:
            solutions.append((problem, rep,
                              reference_from_solution(problem, rep.z)))
    return solutions, attempts, time.perf_counter() - t0


def thrusting_window(ref):
    k = int(np.argmax(np.linalg.norm(ref.controls, axis=1)))
    return float(ref.times[k]), float(ref.times[k + 1])


def test_criterion_1_certificate_ode_consistency():
    """Closed-form outage-duration inversion agrees with direct RK4
    integration of the comparison dynamics to 1e-8 relative."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(111)
    worst = 0.0
    checked = 0
    for alpha, h, f_max in random_branch_bounds(rng, 300):
        t_star = blowup_time(alpha, h, f_max)
        t_probe = 0.4 * min(t_star, 5.0 / alpha)
        delta = float(riccati_envelope(alpha, h, f_max, t_probe))
        if not math.isfinite(delta) or delta <= 0.0:
            continue
        dtau = max_missed_thrust_duration(alpha, h, f_max, delta)
        rho_bar = riccati_envelope_ode(alpha, h, f_max, dtau, n_steps=4000)
        worst = max(worst, abs(rho_bar - delta) / delta)
        checked += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and checked == 300 and dt < 10.0
    report("criterion 1", ok,
           f"max |rho_bar - delta|/delta = {worst:.3e} over {checked} "
           f"bound sets in {dt:.1f}s (gate 1e-8, budget 10s)")


def test_criterion_2_sufficiency_end_to_end(converged_batch, circ):
    """On >= 50 converged solutions the linearization remainder along the
    simulated coast stays within epsilon = 0.05 of the linear drift for
    every t up to the theoretical certificate.  Zero violations."""
    solutions, attempts, t_solve = converged_batch
    t0 = time.perf_counter()
    violations = 0
    checked = 0
    B = circ.control_matrix()
    for problem, rep, ref in solutions:
        tau1, tau2 = thrusting_window(ref)
        bounds = extract_bounds(ref, tau1, tau2, n_samples=20)
        if not bounds.certified:
            continue
        delta = safe_radius(bounds.alpha, bounds.h_curv, bounds.f_min,
                            epsilon=0.05)
        dtau = max_missed_thrust_duration(bounds.alpha, bounds.h_curv,
                                          bounds.f_max, delta)
        dtau = min(dtau, tau2 - tau1)
        x = ref.state(tau1)
        for t in np.linspace(tau1, tau1 + dtau, 12)[1:]:
            x_ref = ref.state(t)
            xi = np.asarray(flow(circ, x, np.zeros(3), tau1, t,
                                 n_steps=40), dtype=float) - x_ref
            u_ref = ref.control(t)
            aux = circ.aux_at(t)
            A = circ.jac_state(t, x_ref, aux)
            f_dev = (np.asarray(circ.deriv(t, x_ref + xi, aux,
                                           np.zeros(3))[0], dtype=float)
                     - np.asarray(circ.deriv(t, x_ref, aux, u_ref)[0],
                                  dtype=float))
            lin = A @ xi + B @ (-u_ref)
            r = f_dev - lin
            checked += 1
            if np.linalg.norm(r) > 0.05 * np.linalg.norm(lin):
                violations += 1
    dt = t_solve + time.perf_counter() - t0
    ok = (len(solutions) >= 50 and violations == 0 and checked > 0
          and dt < 120.0)
    report("criterion 2", ok,
           f"{len(solutions)}/{attempts} solves converged, "
           f"{violations}/{checked} remainder violations "
           f"(epsilon 0.05) in {dt:.1f}s (budget 120s)")


def test_criterion_3_duration_ordering(converged_batch):
    """Theoretical certificates never exceed the simulation-derived
    duration on any converged row."""
    solutions, _, _ = converged_batch
    n_rows = 0
    n_ordered = 0
    for problem, rep, ref in solutions:
        tau1, tau2 = thrusting_window(ref)
        triad = certificate_triad(ref, tau1, tau2, epsilon=0.05,
                                  n_samples=20)
        if not triad["bounds"].certified:
            continue
        n_rows += 1
        if triad["dtau_theoretical"] <= triad["dtau_computed"] * (1 + 1e-12):
            n_ordered += 1
    ok = n_rows > 0 and n_ordered == n_rows
    report("criterion 3", ok,
           f"ordering dtau_theoretical <= dtau_computed on "
           f"{n_ordered}/{n_rows} converged rows (need 100%)")


def test_criterion_4_jacobian_gate(circ):
    """Exact constraint Jacobian vs central differences (step 1e-6 in
    scaled variables) at a simulated and a random point, full problem
    size: max relative entry error <= 1e-6, median <= 1e-9."""
    t0 = time.perf_counter()
    cfg = _rendezvous_config(n_leader=10, n_steps=8)
    problem = build_problem(circ, cfg, MteScenario(outage=(4, 5)))
    z_sim = initialize(problem, seed=2)
    rng = np.random.default_rng(42)
    z_rand = z_sim * (1.0 + 0.05 * rng.standard_normal(problem.n_vars))
    max_e, med_e = 0.0, 0.0
    for z0 in (z_sim, z_rand):
        s = problem.col_scales(z0)
        r = problem.row_scales(z0)
        J = problem.jacobian(z0) / r[:, None] * s[None, :]
        y0 = z0 / s
        step = 1e-6
        J_fd = np.zeros_like(J)
        for j in range(problem.n_vars):
            dy = np.zeros_like(y0)
            dy[j] = step
            cp = problem.eval_constraints((y0 + dy) * s) / r
            cm = problem.eval_constraints((y0 - dy) * s) / r
            J_fd[:, j] = (cp - cm) / (2.0 * step)
        e_rel = np.abs(J - J_fd) / (1.0 + np.abs(J_fd))
        max_e = max(max_e, float(e_rel.max()))
        med_e = max(med_e, float(np.median(e_rel)))
    dt = time.perf_counter() - t0
    ok = max_e <= 1e-6 and med_e <= 1e-9 and dt < 60.0
    report("criterion 4", ok,
           f"max e_rel {max_e:.3e} (gate 1e-6), median {med_e:.3e} "
           f"(gate 1e-9) in {dt:.1f}s (budget 60s)")


def test_criterion_5_kkt_exactness(circ):
    """The embedded optimality rows vanish (<= 1e-6 scaled) at follower
    controls found by an independent descent oracle."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = 0.0
    for trial in range(10):
        n = int(rng.integers(2, 6))
        cfg = _rendezvous_config(n_leader=n, n_steps=6)
        problem = build_problem(circ, cfg, MteScenario(outage=(0,),
                                                       n_follower=n))
        m = problem.n_follower
        x_lead = rng.normal(scale=[1, 1, 1, 1e-3, 1e-3, 1e-3],
                            size=(n + 1, 6))
        u_lead = rng.uniform(-0.5, 0.5, (n, 3)) * cfg.u_max
        z = problem.pack(cfg.t_flight, x_lead, u_lead, cfg.t_flight,
                         np.zeros((m + 1, 6)), np.zeros((m, 3)),
                         np.zeros((m + 1, 6)))
        act = list(problem.active)

        def cost(w):
            # oracle works in units of the control bound so its descent
            # steps are well scaled
            u_fol = np.zeros((m, 3))
            for i, k in enumerate(act):
                u_fol[k] = w[3 * i:3 * i + 3] * cfg.u_max
            return problem.tracking_cost(z, u_fol) / cfg.u_max ** 2

        # the tracking cost is exactly quadratic in the controls, so
        # central differences with an O(1) step recover its gradient and
        # Hessian to machine precision and one Newton step is the optimum
        nd = 3 * len(act)
        h = 0.5
        g0 = np.zeros(nd)
        H = np.zeros((nd, nd))
        c0 = cost(np.zeros(nd))
        for i in range(nd):
            ei = np.zeros(nd)
            ei[i] = h
            cp, cm = cost(ei), cost(-ei)
            g0[i] = (cp - cm) / (2 * h)
            H[i, i] = (cp - 2 * c0 + cm) / h ** 2
        for i in range(nd):
            for j in range(i + 1, nd):
                ei = np.zeros(nd)
                ei[i] = h
                ej = np.zeros(nd)
                ej[j] = h
                H[i, j] = H[j, i] = (
                    cost(ei + ej) - cost(ei - ej)
                    - cost(-ei + ej) + cost(-ei - ej)) / (4 * h ** 2)
        w_star = np.linalg.solve(H, -g0)
        u_fol = np.zeros((m, 3))
        for i, k in enumerate(act):
            u_fol[k] = w_star[3 * i:3 * i + 3] * cfg.u_max
        dx = problem.tracking_rollout(z, u_fol)
        x_fol = np.array([x_lead[problem.nd_map[k]] + dx[k]
                          for k in range(m + 1)])
        z = problem.pack(cfg.t_flight, x_lead, u_lead, cfg.t_flight,
                         x_fol, u_fol, np.zeros((m + 1, 6)))
        z[problem.i_lam:] = problem.costates_from_transversality(z).ravel()
        c = problem.eval_constraints(z) / problem.row_scales(z)
        for name in ("kkt_stationarity", "kkt_costate",
                     "kkt_transversality"):
            for row in problem.rows_named(name):
                worst = max(worst, float(np.max(np.abs(c[row["slice"]]))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 120.0
    report("criterion 5", ok,
           f"max scaled KKT residual {worst:.3e} at 10 oracle optima "
           f"(gate 1e-6) in {dt:.1f}s (budget 120s)")


def test_criterion_6_gramian_energy_oracle(circ, double_integrator,
                                           solved_leader):
    """Gramian minimum recovery energy vs a 200-interval held-control
    minimum-norm steering: relative error <= 1e-3, 10 deviations per
    model."""
    from missedthrust.propagation import ReferenceTrajectory

    t0 = time.perf_counter()
    rng = np.random.default_rng(66)
    _, _, ref_c = solved_leader
    T = 600.0
    times = np.linspace(0.0, T, 3)
    ref_d = ReferenceTrajectory(double_integrator, times, np.zeros((3, 6)),
                                np.zeros((2, 3)), 10)
    worst = 0.0
    for ref, t_from in ((ref_d, 0.0), (ref_c, 200.0)):
        t_to = t_from + T
        W = controllability_gramian(ref, t_from, t_to, n_intervals=256)
        # 200 held-control slices; each column is the integral of
        # Phi(t, t_from) B over its slice (midpoint rule refined by
        # chaining transition matrices at slice edges)
        mslices = 200
        h = T / mslices
        B = ref.model.control_matrix()
        Phi = np.eye(6)
        x = ref.state(t_from)
        aux = ref.model.aux_at(t_from)
        M = np.zeros((6, 3 * mslices))
        for i in range(mslices):
            a = t_from + i * h
            u = ref.control(a) if a < ref.times[-1] else np.zeros(3)
            x_m, dPhi_m = flow_with_stm(ref.model, x, u, a, a + 0.5 * h,
                                        n_steps=2, aux0=aux)
            M[:, 3 * i:3 * i + 3] = h * (np.asarray(dPhi_m) @ Phi) @ B
            x, dPhi = flow_with_stm(ref.model, x, u, a, a + h,
                                    n_steps=4, aux0=aux)
            aux = ref.model.aux_at(a + h)
            Phi = np.asarray(dPhi) @ Phi
        for _ in range(10):
            xi = rng.normal(size=6) * np.array([1, 1, 1, 1e-3, 1e-3, 1e-3])
            e_gram = min_energy(W, xi).energy
            u = M.T @ np.linalg.solve(M @ M.T, xi)
            e_disc = h * float(u @ u)
            worst = max(worst, abs(e_gram - e_disc) / e_disc)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and dt < 30.0
    report("criterion 6", ok,
           f"max relative E_min error {worst:.3e} over 2x10 deviations "
           f"(gate 1e-3) in {dt:.1f}s (budget 30s)")


def test_criterion_7_linear_envelope_dominance():
    """Simulated error of 100 random bounded LTV systems never exceeds
    the first-order envelope (1e-10 relative slack)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = -np.inf
    for _ in range(100):
        A0 = rng.normal(scale=0.3, size=(6, 6))
        A1 = rng.normal(scale=0.1, size=(6, 6))
        w = rng.uniform(0.5, 3.0)
        f0 = rng.normal(size=6)
        f0 /= np.linalg.norm(f0)
        fmag = 10.0 ** rng.uniform(-3, 0)
        alpha = float(np.linalg.norm(A0, 2) + np.linalg.norm(A1, 2))
        T = min(3.0 / alpha, 10.0)

        def rhs(t, e):
            return (A0 + math.sin(w * t) * A1) @ e + fmag * math.cos(
                0.7 * w * t) * f0

        sol = solve_ivp(rhs, (0.0, T), np.zeros(6), method="DOP853",
                        rtol=1e-12, atol=1e-14, dense_output=True)
        for t in np.linspace(0.0, T, 50)[1:]:
            env = linear_error_envelope(alpha, fmag, t)
            margin = np.linalg.norm(sol.sol(t)) / env - 1.0
            worst = max(worst, margin)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10.0
    report("criterion 7", ok,
           f"max (|e|/envelope - 1) = {worst:.3e} over 100 LTV systems "
           f"(gate 1e-10) in {dt:.1f}s (budget 10s)")


def test_criterion_8_remainder_bound(circ):
    """1000 random tube samples obey |r| <= (H/2)|e|^2 under the
    rigorous curvature convention — zero violations."""
    rng = np.random.default_rng(88)
    violations = 0
    for _ in range(1000):
        x = rng.normal(scale=[2, 2, 2, 2e-3, 2e-3, 2e-3], size=6)
        rho = 10.0 ** rng.uniform(-2, 0.5)
        e = rng.normal(size=6)
        e *= rng.uniform(0.0, rho) / np.linalg.norm(e)
        t = rng.uniform(0.0, 5000.0)
        aux = circ.aux_at(t)
        H = curvature_constant(circ, t, x, rho=rho, rigorous=True)
        f0 = np.asarray(circ.deriv(t, x, aux, np.zeros(3))[0], dtype=float)
        f1 = np.asarray(circ.deriv(t, x + e, aux, np.zeros(3))[0],
                        dtype=float)
        r = f1 - f0 - circ.jac_state(t, x, aux) @ e
        if np.linalg.norm(r) > 0.5 * H * float(e @ e) * (1 + 1e-12):
            violations += 1
    ok = violations == 0
    report("criterion 8", ok,
           f"{violations}/1000 tube samples violate |r| <= (H/2)|e|^2")


def test_criterion_9_eccentric_circular_limit():
    """Eccentric derivatives at e = 1e-10 match the circular model to
    1e-6 relative on 100 random states."""
    a = 6871.0
    n_mm = math.sqrt(MU_EARTH / a ** 3)
    circ = CircularOrbit(radius_km=a, mean_motion=n_mm)
    ecc = EccentricOrbit(a_km=a, ecc=1e-10, mu=MU_EARTH, nu0=0.0)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(scale=[2, 2, 2, 2e-3, 2e-3, 2e-3], size=6)
        u = rng.uniform(-1, 1, 3) * 1e-6
        t = rng.uniform(0.0, 2000.0)
        dc = np.asarray(circ.deriv(t, x, circ.aux_at(t), u)[0], dtype=float)
        de = np.asarray(ecc.deriv(t, x, ecc.aux_at(t), u)[0], dtype=float)
        worst = max(worst, float(np.max(np.abs(dc - de))
                                 / max(np.max(np.abs(dc)), 1e-12)))
        Jc = circ.jac_state(t, x, circ.aux_at(t))
        Je = ecc.jac_state(t, x, ecc.aux_at(t))
        worst = max(worst, float(np.max(np.abs(Jc - Je))
                                 / np.max(np.abs(Jc))))
    ok = worst <= 1e-6
    report("criterion 9", ok,
           f"max relative derivative mismatch {worst:.3e} over 100 "
           f"states (gate 1e-6)")


def test_criterion_10_end_to_end_solves():
    """Leader-only 10-segment rendezvous from [sqrt(2)/2, 0, sqrt(2)/2]
    km reaches violation <= 1e-8; the full problem with the embedded
    follower (two outage segments) converges on at least one of 20
    seeds, tried in order with early exit.  Budget 5 min total."""
    t0 = time.perf_counter()
    r2 = math.sqrt(2.0) / 2.0
    model = CircularOrbit(radius_km=6871.0, mean_motion=1.109e-3)
    cfg = _rendezvous_config(x0=(r2, 0.0, r2, 0.0, 0.0, 0.0),
                             n_leader=10, n_steps=8)
    leader = solve(build_problem(model, cfg),
                   options=SolveOptions(seed=0))
    viol_lead = leader.max_violation

    scenario = MteScenario(outage=(4, 5))   # adaptive follower grid
    problem = build_problem(model, cfg, scenario)
    opts = dict(max_outer=15, inner_maxiter=60, refine_iters=60)
    n_converged = 0
    seeds_tried = 0
    for seed in range(20):
        seeds_tried += 1
        rep = solve(problem, options=SolveOptions(seed=seed, **opts))
        if rep.converged:
            n_converged += 1
            break            # the >= 1 of 20 clause is monotone
        if time.perf_counter() - t0 > 280.0:
            break
    dt = time.perf_counter() - t0
    ok = viol_lead <= 1e-8 and n_converged >= 1 and dt < 300.0
    report("criterion 10", ok,
           f"leader violation {viol_lead:.2e} (gate 1e-8); "
           f"{n_converged} converged of {seeds_tried} seeds tried "
           f"(need >=1 of 20) in {dt:.1f}s (budget 300s)")


def test_criterion_11_reported_comparisons(converged_batch):
    """Qualitative distribution report only — no assertion beyond
    successful computation."""
    solutions, attempts, _ = converged_batch
    ratio = 100.0 * len(solutions) / attempts
    r_sats = []
    for problem, rep, ref in solutions[:20]:
        tau1, tau2 = thrusting_window(ref)
        bounds = extract_bounds(ref, tau1, tau2, n_samples=20)
        if not bounds.certified:
            continue
        delta = safe_radius(bounds.alpha, bounds.h_curv, bounds.f_min,
                            epsilon=0.05)
        r_sats.append(saturation_ratio(delta, bounds.alpha, bounds.f_min))
    r_sats = np.asarray(r_sats)
    print(f"[REPORT] criterion 11: ensemble convergence ratio "
          f"{ratio:.1f}% (benchmark circular-case feasibility ratios: "
          f"48.0 / 51.2 / 54.4%)")
    if len(r_sats):
        print(f"[REPORT] criterion 11: r_sat quartiles "
              f"{np.percentile(r_sats, [25, 50, 75])} "
              f"(benchmark: r_sat near 1)")
    report("criterion 11", True,
           "reported-only comparison emitted (no assertion)")
