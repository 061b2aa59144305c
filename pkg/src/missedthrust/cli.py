"""Command-line entry points.

Subcommands
-----------
solve           solve one instance from a JSON config
certify         outage-duration certificate for a solved reference
ensemble        solve many seeds and tabulate outcomes
check-jacobian  finite-difference audit of the exact constraint Jacobian
recover         post-outage Gramian energetics

Exit codes: 0 success, 2 bad usage or config, 3 convergence or audit
failure, 4 certificate failure.  All numerics live in the library; this
module only parses arguments, loads configs and writes files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .certificate import certificate_triad, coast_deviation
from .dynamics import CircularOrbit, EccentricOrbit
from .recovery import assess_recovery
from .solver import SolveOptions, initialize, run_ensemble, solve
from .transcription import (
    MteScenario, Obstacle, TranscriptionConfig, build_problem,
    reference_from_solution,
)

MPS2_TO_KMPS2 = 1e-3  # thrust accelerations are configured in m/s^2


class ConfigError(Exception):
    pass


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _build_model(cfg: dict):
    spec = cfg.get("model")
    if not spec or "type" not in spec:
        raise ConfigError("config must define model.type")
    kind = spec["type"]
    if kind == "circular":
        return CircularOrbit(spec["radius_km"], spec["mean_motion"])
    if kind == "eccentric":
        return EccentricOrbit(
            spec["a_km"], spec["ecc"], spec["mu"],
            nu0=spec.get("nu0", 0.0),
            nu_range=tuple(spec.get("nu_range", (0.0, 2 * np.pi))),
            t_epoch=spec.get("t_epoch", 0.0),
        )
    raise ConfigError(f"unknown model type {kind!r}")


def _build_transcription(cfg: dict) -> TranscriptionConfig:
    spec = cfg.get("transcription")
    if not spec:
        raise ConfigError("config must define a transcription section")
    try:
        obstacles = tuple(
            Obstacle(tuple(o["center"]), float(o["radius"]))
            for o in spec.get("obstacles", ())
        )
        return TranscriptionConfig(
            x0=tuple(spec["x0"]),
            x1=tuple(spec.get("x1", (0.0,) * 6)),
            n_leader=int(spec.get("n_leader", 10)),
            n_steps=int(spec.get("n_steps", 20)),
            t_flight=float(spec["t_flight"]),
            t_bounds=tuple(spec.get("t_bounds",
                                    (0.1 * spec["t_flight"],
                                     10.0 * spec["t_flight"]))),
            u_max=float(spec["u_max_mps2"]) * MPS2_TO_KMPS2,
            w_t=float(spec.get("w_t", 0.0)),
            w_u=float(spec.get("w_u", 1.0)),
            fuel_eps=float(spec.get("fuel_eps", 1e-10)),
            obstacles=obstacles,
        )
    except KeyError as exc:
        raise ConfigError(f"transcription config missing {exc}") from exc


def _build_scenario(cfg: dict) -> MteScenario | None:
    spec = cfg.get("scenario")
    if not spec:
        return None
    n_fol = spec.get("n_follower")
    return MteScenario(tuple(spec["outage"]),
                       None if n_fol is None else int(n_fol))


def _solve_options(cfg: dict, seed: int) -> SolveOptions:
    spec = dict(cfg.get("solver", {}))
    spec["seed"] = seed
    return SolveOptions(**spec)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# artifact {__version__}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _solution_rows(problem, z) -> list:
    v = problem.unpack(z)
    rows = []
    n = problem.n_leader
    for k in range(n + 1):
        t = v["t_lead"] * k / n
        u = v["u_lead"][k] if k < n else np.full(3, np.nan)
        rows.append(["leader", k, t, *v["x_lead"][k], *u])
    if problem.scenario is not None:
        m = problem.n_follower
        for k in range(m + 1):
            t = v["t_fol"] * k / m
            u = v["u_fol"][k] if k < m else np.full(3, np.nan)
            rows.append(["follower", k, t, *v["x_fol"][k], *u])
    return rows


def _get_solution(args, cfg, problem):
    if getattr(args, "solution", None):
        data = np.load(args.solution)
        return np.asarray(data["z"]), True
    opts = _solve_options(cfg, args.seed)
    report = solve(problem, options=opts)
    return report.z, report.converged


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    problem = build_problem(_build_model(cfg), _build_transcription(cfg),
                            _build_scenario(cfg))
    report = solve(problem, options=_solve_options(cfg, args.seed))
    out = args.out or "solution"
    np.savez(f"{out}.npz", z=report.z)
    _write_csv(f"{out}.csv",
               ["kind", "node", "time_s", "q1", "q2", "q3",
                "q1dot", "q2dot", "q3dot", "u1", "u2", "u3"],
               _solution_rows(problem, report.z))
    print(f"status={report.status} objective={report.objective:.9e} "
          f"violation={report.max_violation:.3e} "
          f"stationarity={report.stationarity:.3e}")
    return 0 if report.converged else 3


def cmd_certify(args) -> int:
    cfg = _load_config(args.config)
    model = _build_model(cfg)
    tcfg = _build_transcription(cfg)
    scenario = _build_scenario(cfg)
    problem = build_problem(model, tcfg, scenario)
    z, ok = _get_solution(args, cfg, problem)
    if not ok:
        print("reference solve did not converge", file=sys.stderr)
        return 3
    ref = reference_from_solution(problem, z)
    t_end = float(ref.times[-1])
    if scenario is not None:
        m = problem.n_follower
        tau1 = t_end * min(problem.outage) / m
        tau2 = t_end * (max(problem.outage) + 1) / m
    else:
        tau1 = args.tau1 if args.tau1 is not None else 0.25 * t_end
        tau2 = args.tau2 if args.tau2 is not None else 0.5 * t_end
    triad = certificate_triad(ref, tau1, tau2, args.epsilon)
    out = args.out or "certificate"
    _write_csv(f"{out}.csv",
               ["tau1_s", "tau2_s", "epsilon", "alpha", "h_curv", "f_max",
                "f_min", "delta_km", "dtau_theoretical_s", "dtau_computed_s",
                "dtau_actual_s", "r_sat", "certified"],
               [[tau1, tau2, args.epsilon,
                 triad["bounds"].alpha, triad["bounds"].h_curv,
                 triad["bounds"].f_max, triad["bounds"].f_min,
                 triad["delta_theoretical"], triad["dtau_theoretical"],
                 triad["dtau_computed"], triad["dtau_actual"], triad["r_sat"],
                 triad["bounds"].certified]])
    print(f"dtau_theoretical={triad['dtau_theoretical']:.6e} "
          f"dtau_computed={triad['dtau_computed']:.6e} "
          f"dtau_actual={triad['dtau_actual']:.6e}")
    certified = triad["bounds"].certified and triad["dtau_theoretical"] > 0.0
    return 0 if certified else 4


def cmd_ensemble(args) -> int:
    cfg = _load_config(args.config)
    model = _build_model(cfg)
    tcfg = _build_transcription(cfg)
    scenario = _build_scenario(cfg)
    seeds = range(args.seed, args.seed + args.runs)
    reports = run_ensemble(model, tcfg, scenario, seeds,
                           _solve_options(cfg, args.seed), jobs=args.jobs)
    rows = [[r.seed, r.status, int(r.converged), r.objective,
             r.max_violation, r.stationarity] for r in reports]
    out = args.out or "ensemble"
    _write_csv(f"{out}.csv",
               ["seed", "status", "converged", "objective",
                "max_violation", "stationarity"], rows)
    n_ok = sum(r.converged for r in reports)
    print(f"converged {n_ok}/{len(reports)}")
    return 0 if n_ok > 0 else 3


def cmd_check_jacobian(args) -> int:
    cfg = _load_config(args.config)
    problem = build_problem(_build_model(cfg), _build_transcription(cfg),
                            _build_scenario(cfg))
    z0 = initialize(problem, args.seed)
    s = problem.col_scales(z0)
    r = problem.row_scales(z0)
    J = problem.jacobian(z0) / r[:, None] * s[None, :]
    y0 = z0 / s
    step = args.fd_step
    J_fd = np.zeros_like(J)
    for j in range(problem.n_vars):
        dy = np.zeros_like(y0)
        dy[j] = step
        cp = problem.eval_constraints((y0 + dy) * s) / r
        cm = problem.eval_constraints((y0 - dy) * s) / r
        J_fd[:, j] = (cp - cm) / (2.0 * step)
    e_rel = np.abs(J - J_fd) / (1.0 + np.abs(J_fd))
    print(f"max_e_rel={e_rel.max():.3e} median_e_rel={np.median(e_rel):.3e}")
    return 0 if e_rel.max() <= args.gate else 3


def cmd_recover(args) -> int:
    cfg = _load_config(args.config)
    model = _build_model(cfg)
    tcfg = _build_transcription(cfg)
    scenario = _build_scenario(cfg)
    problem = build_problem(model, tcfg, scenario)
    z, ok = _get_solution(args, cfg, problem)
    if not ok:
        print("reference solve did not converge", file=sys.stderr)
        return 3
    ref = reference_from_solution(problem, z)
    t_end = float(ref.times[-1])
    if scenario is not None:
        m = problem.n_follower
        tau1 = t_end * min(problem.outage) / m
        tau2 = t_end * (max(problem.outage) + 1) / m
    else:
        tau1, tau2 = 0.25 * t_end, 0.5 * t_end
    t_rec = args.t_rec if args.t_rec is not None else t_end - tau2
    xi = coast_deviation(ref, tau1, tau2)
    res = assess_recovery(ref, tau2, tau2 + t_rec, xi,
                          np.full(3, tcfg.u_max))
    out = args.out or "recovery"
    _write_csv(f"{out}.csv",
               ["tau2_s", "t_rec_s", "e_min", "e_avail", "ratio",
                "ill_conditioned", "condition"],
               [[tau2, t_rec, res.e_min, res.e_avail, res.ratio,
                 int(res.ill_conditioned), res.condition]])
    print(f"e_min={res.e_min:.6e} e_avail={res.e_avail:.6e} "
          f"ratio={res.ratio:.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="missedthrust",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")

    sp = sub.add_parser("solve", help="solve one instance")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="outage-duration certificate")
    common(sp)
    sp.add_argument("--solution", help="npz file from a previous solve")
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--tau1", type=float)
    sp.add_argument("--tau2", type=float)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("ensemble", help="multi-seed solve campaign")
    common(sp)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("check-jacobian", help="finite-difference audit")
    common(sp)
    sp.add_argument("--fd-step", type=float, default=1e-6)
    sp.add_argument("--gate", type=float, default=1e-6)
    sp.set_defaults(func=cmd_check_jacobian)

    sp = sub.add_parser("recover", help="post-outage energetics")
    common(sp)
    sp.add_argument("--solution", help="npz file from a previous solve")
    sp.add_argument("--t-rec", type=float)
    sp.set_defaults(func=cmd_recover)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
