"""Command-line front end: solve, simulate, converge, verify.

Exit codes: 0 success, 1 unreadable model spec, 2 validation or usage
failure, 3 solver divergence, 4 verification checks failed.  Same flags
plus same seed produce byte-identical output files; every file embeds the
requested configuration and the package version.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .auv import leader_reference, follower_reference, reference
from .finite_horizon import (RiccatiError, backward_riccati,
                             discounted_backward_riccati, optimal_cost,
                             split_gain, stationarity_residuals)
from .infinite_horizon import (RiccatiDivergence, check_stabilizability,
                               solve_stationary_riccati, stationary_cost)
from .model import (ModelValidationError, SpecFormatError, assemble_compact,
                    load_model_spec, make_cost, make_model, model_from_dict,
                    validate)
from .oracle import StructuredPolicy, gain_gradient, kalman_oracle
from .simulation import monte_carlo, mss_diagnostics, simulate

OUT_DIR_ENV = "LFNS_OUT_DIR"
BUILTINS = ("auv-paper", "scalar-demo")


def _scalar_demo():
    model = make_model(a00=[[1.0]], a10=[[0.0]], a11=[[1.0]],
                       b00=[[1.0]], b10=[[0.0]], b11=[[1.0]],
                       sigma_w0=[[0.1]], sigma_w1=[[0.1]],
                       xbar0=[1.0], xbar1=[0.5],
                       sigma_x0=[[0.25]], sigma_x1=[[0.25]])
    cost = make_cost(q=np.eye(2), r=np.eye(2), p_terminal=np.eye(2), gamma=0.9)
    return model, cost


def _load(args):
    if args.model == "auv-paper":
        doc = json.loads(resources.files("lfns").joinpath("data/auv-paper.json").read_text())
        model, cost = model_from_dict(doc)
        name = "auv-paper"
    elif args.model == "scalar-demo":
        model, cost = _scalar_demo()
        name = "scalar-demo"
    else:
        model, cost = load_model_spec(args.model)
        name = Path(args.model).stem
    if args.gamma is not None:
        cost = make_cost(cost.q, cost.r, cost.p_terminal, args.gamma)
    violations = validate(model, cost)
    if violations:
        raise ModelValidationError(violations)
    return model, cost, name


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_echo(args) -> dict:
    return {"command": args.command, "model": args.model, "mode": args.mode,
            "horizon": args.horizon, "trials": args.trials, "seed": args.seed,
            "gamma": args.gamma, "format": args.format,
            "out": args.out}


def _doc(args, **payload) -> dict:
    doc = {"version": __version__, "config": _config_echo(args)}
    doc.update(payload)
    return doc


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _lst(a):
    return np.asarray(a).tolist()


def _policy_for(model, cost, args):
    """Solve per the requested mode and return (policy, solution, discounted)."""
    compact = assemble_compact(model)
    if args.mode == "finite":
        if cost.p_terminal is None:
            raise ModelValidationError(
                ["finite mode needs a terminal weight in the cost"])
        n = args.horizon if args.horizon is not None else 50
        sol = backward_riccati(compact, cost, n)
        return StructuredPolicy.from_finite_horizon(sol, model), sol, False
    if cost.gamma is None:
        raise ModelValidationError(["stationary mode needs a discount factor"])
    sol = solve_stationary_riccati(compact, cost)
    return StructuredPolicy.from_stationary(sol), sol, True


def cmd_solve(args) -> int:
    model, cost, name = _load(args)
    compact = assemble_compact(model)
    out = _out_dir(args)
    if args.mode == "finite":
        policy, sol, _ = _policy_for(model, cost, args)
        doc = _doc(args, mode="finite", horizon=sol.horizon,
                   p0=_lst(sol.p_seq[0]), k0=_lst(sol.k_seq[0]),
                   gain_sequence=[_lst(k) for k in sol.k_seq],
                   analytic_cost=optimal_cost(sol, model))
        _write_json(out / f"solve-{name}-finite.json", doc)
        return 0
    policy, sol, _ = _policy_for(model, cost, args)
    verdict = check_stabilizability(sol, cost, compact)
    blocks = split_gain(sol.h, model.n, model.m1)
    mean0 = np.concatenate([model.xbar0, model.xbar1])
    sigma0 = np.zeros((2 * model.n, 2 * model.n))
    sigma0[:model.n, :model.n] = model.sigma_x0
    sigma0[model.n:, model.n:] = model.sigma_x1
    trace_term = cost.gamma / (1.0 - cost.gamma) * float(np.trace(compact.sigma_w @ sol.p))
    mean_term = float(mean0 @ sol.p @ mean0 + np.trace(sigma0 @ sol.p))
    doc = _doc(args, mode="stationary", iterations=sol.iterations,
               residual=sol.residual, converged=sol.converged,
               p=_lst(sol.p), h=_lst(sol.h),
               h_blocks={"h00": _lst(blocks.k00), "h01": _lst(blocks.k01),
                         "h10": _lst(blocks.k10), "h11": _lst(blocks.k11)},
               verdict={
                   "positive_definite": verdict.positive_definite.value,
                   "positive_definite_margin": verdict.positive_definite.margin,
                   "inequality_holds": verdict.inequality_holds.value,
                   "inequality_margin": verdict.inequality_holds.margin,
                   "spectral_radius": verdict.spectral_radius,
                   "stabilizable": verdict.stabilizable,
                   "detail": verdict.detail},
               analytic_cost=stationary_cost(sol, model),
               mean_term=mean_term, trace_term=trace_term)
    _write_json(out / f"solve-{name}-stationary.json", doc)
    return 0


def _auv_reference_columns(horizon):
    lead, foll = leader_reference(), follower_reference()
    cols = {}
    for tag, traj in (("leader", lead), ("follower", foll)):
        refs = np.stack([reference(traj, k) for k in range(horizon + 1)])
        for j, ch in enumerate(("x", "y", "psi")):
            cols[f"ref_{tag}_{ch}"] = refs[:, j]
    return cols


def cmd_simulate(args) -> int:
    model, cost, name = _load(args)
    policy, sol, discounted = _policy_for(model, cost, args)
    if args.mode == "finite":
        horizon = sol.horizon + 1
    else:
        horizon = args.horizon if args.horizon is not None else 60
    out = _out_dir(args)
    traces = simulate(model, policy, cost, horizon, seed=args.seed,
                      trials=args.trials)
    trace_path = out / f"simulate-{name}-traces.jsonl"
    with open(trace_path, "w") as fh:
        meta = _doc(args, kind="meta", horizon=horizon)
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for tr in traces:
            for k in range(horizon + 1):
                rec = {"trial": tr.trial, "k": k,
                       "x0": _lst(tr.x0[k]), "x1": _lst(tr.x1[k]),
                       "x1hat": _lst(tr.x1hat[k]),
                       "u0": _lst(tr.u0[k]) if k < horizon else None,
                       "u1": _lst(tr.u1[k]) if k < horizon else None,
                       "stage_cost": float(tr.stage_cost[k]) if k < horizon else None}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    summary = monte_carlo(model, policy, cost, horizon, seed=args.seed,
                          trials=args.trials, discounted=discounted)
    rho = None
    if hasattr(sol, "h"):
        rho = float(np.max(np.abs(np.linalg.eigvals(
            assemble_compact(model).a - assemble_compact(model).b @ sol.h))))
    report = mss_diagnostics(summary, spectral_radius=rho)
    _write_json(out / f"simulate-{name}-summary.json", _doc(
        args, horizon=horizon, trials=args.trials,
        mean_cost=summary.mean_cost, standard_error=summary.standard_error,
        mean_error_norm=_lst(summary.mean_norm),
        second_moment=_lst(summary.second_moment),
        truncation_bound=summary.truncation_bound,
        mss={"mean_decay": report.mean_decay,
             "mean_ratio": report.mean_ratio,
             "second_moment_plateau": report.second_moment_plateau,
             "plateau_relative_change": report.plateau_relative_change,
             "spectral_radius": report.spectral_radius,
             "mss": report.mss}))

    csv_path = out / f"simulate-{name}-curves.csv"
    n = model.n
    cols = {"k": np.arange(horizon + 1)}
    for j in range(n):
        cols[f"mean_err_leader_{j}"] = summary.mean_state[:, j]
    for j in range(n):
        cols[f"mean_err_follower_{j}"] = summary.mean_state[:, n + j]
    if name == "auv-paper":
        refs = _auv_reference_columns(horizon)
        cols.update(refs)
        for j, ch in enumerate(("x", "y", "psi")):
            cols[f"actual_leader_{ch}"] = refs[f"ref_leader_{ch}"] + summary.mean_state[:, j]
            cols[f"actual_follower_{ch}"] = refs[f"ref_follower_{ch}"] + summary.mean_state[:, n + j]
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# version={__version__}\n")
        fh.write("# config=" + json.dumps(_config_echo(args), sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(cols.keys())
        for i in range(horizon + 1):
            writer.writerow([repr(float(cols[key][i])) for key in cols])
    return 0


def cmd_converge(args) -> int:
    model, cost, name = _load(args)
    if cost.gamma is None:
        raise ModelValidationError(["convergence sweep needs a discount factor"])
    compact = assemble_compact(model)
    top = args.horizon if args.horizon is not None else 200
    sweep = sorted(set(range(0, top + 1, 10)) | {0, top})
    rows = []
    for n in sweep:
        sol = discounted_backward_riccati(compact, cost, n)
        rows.append([n, optimal_cost(sol, model)])
    stat = solve_stationary_riccati(compact, cost)
    stationary_value = stationary_cost(stat, model)
    out = _out_dir(args)
    if args.format == "csv":
        path = out / f"converge-{name}.csv"
        with open(path, "w", newline="") as fh:
            fh.write(f"# version={__version__}\n")
            fh.write("# config=" + json.dumps(_config_echo(args), sort_keys=True) + "\n")
            fh.write(f"# stationary_cost={stationary_value!r}\n")
            writer = csv.writer(fh)
            writer.writerow(["horizon", "cost"])
            for n, val in rows:
                writer.writerow([n, repr(val)])
    else:
        _write_json(out / f"converge-{name}.json",
                    _doc(args, rows=rows, stationary_cost=stationary_value))
    return 0


def _verify_checks(model, cost, args):
    checks = []

    def add(name, passed, measured, tolerance, detail=""):
        checks.append({"name": name, "passed": bool(passed),
                       "measured": float(measured), "tolerance": tolerance,
                       "detail": detail})

    compact = assemble_compact(model)
    policy, sol, discounted = _policy_for(model, cost, args)
    if args.perturb_gains:
        bump = np.zeros_like(sol.h if discounted else sol.k_seq[0])
        bump[-1, -1] = 0.05
        if discounted:
            from .infinite_horizon import StationarySolution
            sol = StationarySolution(p=sol.p, h=sol.h + bump, psi=sol.psi,
                                     l=sol.l, gamma=sol.gamma,
                                     iterations=sol.iterations,
                                     residual=sol.residual, n=sol.n, m1=sol.m1)
            policy = StructuredPolicy.from_stationary(sol)
        else:
            gains = [split_gain(k + bump, model.n, model.m1) for k in sol.k_seq]
            policy = StructuredPolicy.from_gain_list(gains)

    if discounted:
        l = compact.b.T @ sol.p @ compact.a
        psi = cost.r + cost.gamma * (compact.b.T @ sol.p @ compact.b)
        rhs = (cost.q + cost.gamma * (compact.a.T @ sol.p @ compact.a)
               - cost.gamma ** 2 * l.T @ np.linalg.solve(psi, l))
        res = np.linalg.norm(rhs - sol.p) / max(1.0, np.linalg.norm(sol.p))
        add("riccati_fixed_point", res < 1e-10, res, 1e-10)
        f = compact.a - compact.b @ sol.h
        lyap = cost.gamma * f.T @ sol.p @ f + cost.q + sol.h.T @ cost.r @ sol.h
        res = np.linalg.norm(lyap - sol.p) / max(1.0, np.linalg.norm(sol.p))
        add("closed_loop_identity", res < 1e-10, res, 1e-10)
        probe_horizon = 300
    else:
        worst = 0.0
        for k in range(len(sol.k_seq)):
            lam = cost.r + compact.b.T @ sol.p_seq[k + 1] @ compact.b
            lm = compact.b.T @ sol.p_seq[k + 1] @ compact.a
            rhs = (cost.q + compact.a.T @ sol.p_seq[k + 1] @ compact.a
                   - lm.T @ np.linalg.solve(lam, lm))
            worst = max(worst, np.linalg.norm(rhs - sol.p_seq[k])
                        / max(1.0, np.linalg.norm(sol.p_seq[k])))
        add("riccati_recursion", worst < 1e-10, worst, 1e-10)
        probe_horizon = sol.horizon + 1

    grad = gain_gradient(model, policy, cost, probe_horizon,
                         discounted=discounted)
    add("gradient_stationarity", grad.max_relative < 1e-6, grad.max_relative,
        1e-6, f"worst block {grad.argmax}")

    steps = 50
    traces = simulate(model, policy, cost, steps, seed=args.seed, trials=1)
    tr = traces[0]
    gains0 = policy.at(0)
    follower = (np.asarray(gains0.k10), np.asarray(gains0.k11))
    if policy.is_constant:
        kf = kalman_oracle(model, tr.x0, tr.u0, follower_gains=follower)
        err = max(np.linalg.norm(tr.x1hat[k] - kf[k]) for k in range(steps + 1))
        add("estimator_vs_conditional_mean", err < 1e-9, err, 1e-9)

    check = stationarity_residuals(sol, tr)
    add("costate_hat_residual", check.max_hat < 1e-9, check.max_hat, 1e-9)
    add("costate_tilde_residual", check.max_tilde < 1e-9, check.max_tilde, 1e-9)

    trials = args.trials if args.trials > 1 else 2000
    horizon = 200 if discounted else probe_horizon
    mc = monte_carlo(model, policy, cost, horizon, seed=args.seed,
                     trials=trials, discounted=discounted)
    analytic = (stationary_cost(sol, model) if discounted
                else optimal_cost(sol, model))
    gap = abs(mc.mean_cost - analytic)
    band = 3.0 * mc.standard_error + (mc.truncation_bound or 0.0)
    add("monte_carlo_vs_analytic", gap <= band, gap, band,
        f"analytic {analytic!r} empirical {mc.mean_cost!r}")

    if args.model == "auv-paper":
        from .auv import (error_model_control, force_reconstruction, h_term,
                          leader_params, rotation)
        lp = leader_params()
        traj = leader_reference()
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(100):
            nu = rng.normal(size=3)
            rot = rotation(rng.normal())
            rot_prev = rotation(rng.normal())
            k = int(rng.integers(0, 60))
            u_z = rng.normal(size=3)
            h = h_term(lp, rot, rot_prev, nu, 1.0)
            tau = force_reconstruction(lp, u_z, traj, k, rot, h, 1.0)
            back = error_model_control(lp, tau, traj, k, rot, h, 1.0)
            worst = max(worst, float(np.max(np.abs(back - u_z))))
        add("force_round_trip", worst < 1e-10, worst, 1e-10)
    return checks


def cmd_verify(args) -> int:
    model, cost, name = _load(args)
    checks = _verify_checks(model, cost, args)
    all_passed = all(c["passed"] for c in checks)
    out = _out_dir(args)
    _write_json(out / f"verify-{name}.json",
                _doc(args, checks=checks, all_passed=all_passed))
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        print(f"{status}  {c['name']}: measured {c['measured']:.3e} "
              f"(tolerance {c['tolerance']:.1e})")
    return 0 if all_passed else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfns",
        description="Decentralized leader-follower LQ control toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, blurb in (
            ("solve", cmd_solve, "solve for gains and value matrices"),
            ("simulate", cmd_simulate, "run seeded closed-loop trials"),
            ("converge", cmd_converge, "finite-horizon cost sweep vs stationary value"),
            ("verify", cmd_verify, "run the self-check property suite")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--model", required=True,
                       help=f"model-spec path or builtin: {', '.join(BUILTINS)}")
        p.add_argument("--mode", choices=("finite", "stationary"),
                       default="stationary")
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_DIR_ENV} or cwd)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "verify":
            p.add_argument("--perturb-gains", action="store_true",
                           help="negative control: offset the solved gains")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.trials < 1 or (args.horizon is not None and args.horizon < 0):
        print("trials must be >= 1 and horizon >= 0", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except SpecFormatError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 1
    except ModelValidationError as exc:
        for line in exc.violations:
            print(f"validation: {line}", file=sys.stderr)
        return 2
    except RiccatiDivergence as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 3
    except RiccatiError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
