"""Experiment runner: wire configuration files to the numerical modules.

Subcommands: solve, price, verify-duality, diagnose-regularity,
diagnose-degeneracy, transform-check, counterexample. Outputs are CSV for
data and JSON for reports, plus a manifest with every resolved parameter and
seed. Reruns with the same seed are byte-identical; exit status is nonzero
exactly when a module raised an error.
"""

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .degeneracy import (
    continuity_diagnostic,
    counterexample_run,
    kernel_basis,
    projection_paths,
)
from .errors import ConfigurationError, ContractViolationError, DegenPdeError
from .montecarlo import price_and_compare, simulate
from .regularity import (
    bound_constants,
    envelope_fit,
    field_sup_norms,
    initial_deviation_check,
    lipschitz_estimates,
    second_difference_constants,
    solution_sobolev_norms,
)
from .reporting import (
    dumps_json,
    read_field_csv,
    write_field_csv,
    write_json,
    write_table_csv,
)
from .solver import residual_field, solve
from .transform import invert, primitive_lambda, solve_Q, structural_check

__all__ = ["main", "run_experiment"]


def _solve_with_summary(cfg):
    field = solve(cfg.problem, cfg.u0, cfg.grid, theta=cfg.theta)
    res = residual_field(field, collar=cfg.collar)
    summary = {
        "variable": field.variable,
        "grid": cfg.manifest["grid"],
        "residual": res.summary(),
        "clamp_report": field.clamp_report,
        "value_range": [float(field.values.min()), float(field.values.max())],
    }
    return field, res, summary


def _regularity_report(cfg, field, max_slices=160):
    grid = field.grid
    collar = cfg.collar
    cap = cfg.diagnostics.get("offset_cap")
    stride = max(1, (grid.steps + 1) // max_slices)
    idx = list(range(0, grid.steps + 1, stride))
    if idx[-1] != grid.steps:
        idx.append(grid.steps)
    times = [float(field.times[k]) for k in idx]
    l_minus, l_plus, w2 = [], [], []
    for k in idx:
        lm, lp = second_difference_constants(field, k, max_offset=cap, collar=collar)
        l_minus.append(lm)
        l_plus.append(lp)
        sup, gsup, hsup = field_sup_norms(field.values[k], grid.axes)
        w2.append(sup + gsup + hsup)
    lip = lipschitz_estimates(field, collar=collar)
    res = residual_field(field, collar=collar) if field.problem is not None else None
    tol = 10.0 * res.max if res is not None else 0.0

    fit_minus = envelope_fit(np.asarray(l_minus), np.asarray(times))
    fit_plus = envelope_fit(np.asarray(l_plus), np.asarray(times))

    report = {
        "variable": field.variable,
        "collar": collar,
        "offset_cap": cap if cap is not None else "auto",
        "slice_stride": stride,
        "per_slice": {
            "t": times,
            "L_minus": l_minus,
            "L_plus": l_plus,
            "lip_x": [float(lip.lip_x[k]) for k in idx],
            "w2_norm": w2,
        },
        "lip_t": lip.lip_t,
        "envelope_minus": {
            "amplitude": fit_minus.amplitude,
            "rate": fit_minus.rate,
            "offset": fit_minus.offset,
            "max_slack": fit_minus.max_slack,
        },
        "envelope_plus": {
            "amplitude": fit_plus.amplitude,
            "rate": fit_plus.rate,
            "offset": fit_plus.offset,
            "max_slack": fit_plus.max_slack,
        },
    }
    if field.problem is not None:
        u0 = field.values[0]
        _, gcap, hcap = field_sup_norms(u0, grid.axes)
        bc = bound_constants(field.problem, grid.axes, grid.horizon, (gcap, hcap))
        dev = initial_deviation_check(field, bc.c0_init, tol, horizon_fraction=0.1, collar=collar)
        report["c0_init"] = bc.c0_init
        report["scheme_tolerance"] = tol
        report["initial_deviation"] = {
            "worst_ratio": dev.worst_ratio,
            "ok": dev.ok,
            "horizon_fraction": 0.1,
        }
        if field.problem.norms is not None:
            # time-Lipschitz check against the one-sided growth bound;
            # flagged, never failed
            w_norms = solution_sobolev_norms(field, collar=collar, stride=max(1, stride))
            bc_t = bound_constants(
                field.problem, grid.axes, grid.horizon, (gcap, hcap), solution_norms=w_norms
            )
            bound = bc_t.c0_init + float(bc_t.alpha(grid.horizon)) + tol
            report["time_lipschitz"] = {
                "lip_t": lip.lip_t,
                "bound": bound,
                "b1": bc_t.b1,
                "b2": bc_t.b2,
                "flag_exceeded": bool(lip.lip_t > bound),
            }
    return report


def _pricing_reports(cfg, field):
    if cfg.model is None:
        raise ConfigurationError("pricing needs an mbs model section")
    mc = cfg.mc
    if not mc:
        raise ConfigurationError("pricing needs an [mc] section")
    modes = ["q", "pw"] if mc["mode"] == "both" else [mc["mode"]]
    reports = {}
    for mode in modes:
        rep = price_and_compare(
            cfg.model,
            field,
            cfg.sigma,
            cfg.mu,
            x0=np.asarray(mc["x0"]),
            price_time=mc["price_time"],
            n_paths=mc["paths"],
            n_steps=mc["steps"],
            seed=mc["seed"],
            mode=mode,
            chunk_size=mc["chunk"],
        )
        reports[mode] = rep
    out = {m: r.as_dict() for m, r in reports.items()}
    if len(reports) == 2:
        rq, rp = reports["q"], reports["pw"]
        combined = float(np.hypot(rq.mc_se, rp.mc_se))
        out["agreement"] = {
            "difference": abs(rq.mc_mean - rp.mc_mean),
            "combined_se": combined,
            "z_score": abs(rq.mc_mean - rp.mc_mean) / combined if combined > 0 else 0.0,
        }
    return out


def run_experiment(cfg, out_dir):
    """solve -> diagnose -> price -> compare, writing every artifact."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = {}
    field, res, summary = _solve_with_summary(cfg)
    artifacts["field"] = write_field_csv(field, os.path.join(out_dir, "field.csv"))
    artifacts["summary"] = write_json(os.path.join(out_dir, "summary.json"), summary)
    if cfg.diagnostics.get("regularity"):
        report = _regularity_report(cfg, field)
        artifacts["regularity"] = write_json(os.path.join(out_dir, "regularity.json"), report)
    if cfg.model is not None and cfg.mc:
        pricing = _pricing_reports(cfg, field)
        pricing["residual_max"] = res.max
        artifacts["pricing"] = write_json(os.path.join(out_dir, "pricing.json"), pricing)
    manifest = dict(cfg.manifest)
    manifest["artifacts"] = sorted(os.path.basename(p) for p in artifacts.values())
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    artifacts["manifest"] = os.path.join(out_dir, "manifest.json")
    return artifacts


def _load_field_arg(field_arg):
    path = field_arg
    if os.path.isdir(path):
        path = os.path.join(path, "field.csv")
    if not os.path.exists(path):
        raise ConfigurationError("field file not found", path=field_arg)
    return read_field_csv(path)


def cmd_solve(args):
    cfg = load_config(args.config)
    field, res, summary = _solve_with_summary(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_field_csv(field, os.path.join(args.out, "field.csv"))
    write_json(os.path.join(args.out, "summary.json"), summary)
    manifest = dict(cfg.manifest)
    manifest["artifacts"] = ["field.csv", "summary.json"]
    write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(os.path.join(args.out, "summary.json"))
    return 0


def cmd_price(args):
    cfg = load_config(args.config)
    if cfg.model is None:
        raise ConfigurationError("price needs an mbs model configuration")
    field = _load_field_arg(args.field)
    mc = dict(cfg.mc) if cfg.mc else {}
    n_paths = args.paths or mc.get("paths", 100_000)
    n_steps = args.steps or mc.get("steps", 500)
    seed = args.seed if args.seed is not None else mc.get("seed", 0)
    mode = args.mode or mc.get("mode", "q")
    if mode == "both":
        mode = "q"
    rep = price_and_compare(
        cfg.model,
        field,
        cfg.sigma,
        cfg.mu,
        x0=np.asarray(mc.get("x0", [0.0] * cfg.dim)),
        price_time=mc.get("price_time", 0.0),
        n_paths=n_paths,
        n_steps=n_steps,
        seed=seed,
        mode=mode,
        chunk_size=mc.get("chunk", 50_000),
    )
    payload = rep.as_dict()
    sys.stdout.write(dumps_json(payload))
    if args.out:
        write_json(os.path.join(args.out, "pricing.json"), payload)
    if args.payoff_csv:
        ens = simulate(
            cfg.sigma,
            cfg.mu,
            np.asarray(mc.get("x0", [0.0] * cfg.dim)),
            mc.get("price_time", 0.0),
            cfg.horizon,
            n_steps,
            min(n_paths, 10_000),
            measure="P",
            seed=seed,
        )
        from .montecarlo import payoff_discounted

        pays = payoff_discounted(ens.states, ens.times, cfg.model)
        write_table_csv(args.payoff_csv, ["path", "payoff"], [np.arange(len(pays)), pays])
    return 0


def cmd_verify_duality(args):
    cfg = load_config(args.config)
    if cfg.model is None:
        raise ConfigurationError("verify-duality needs an mbs model configuration")
    artifacts = run_experiment(cfg, args.out)
    print(artifacts["manifest"])
    return 0


def cmd_diagnose_regularity(args):
    cfg = load_config(args.config)
    if args.field:
        field = _load_field_arg(args.field)
        field.problem = cfg.problem if field.grid.dim == cfg.dim else None
    else:
        field, _, _ = _solve_with_summary(cfg)
    report = _regularity_report(cfg, field)
    sys.stdout.write(dumps_json({"lip_t": report["lip_t"], "variable": report["variable"]}))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "regularity.json"), report)
        per = report["per_slice"]
        write_table_csv(
            os.path.join(args.out, "regularity_slices.csv"),
            ["t", "L_minus", "L_plus", "lip_x"],
            [per["t"], per["L_minus"], per["L_plus"], per["lip_x"]],
        )
        manifest = dict(cfg.manifest)
        manifest["artifacts"] = ["regularity.json", "regularity_slices.csv"]
        write_json(os.path.join(args.out, "manifest.json"), manifest)
    return 0


def cmd_diagnose_degeneracy(args):
    cfg = load_config(args.config)
    sig0 = np.asarray(cfg.sigma(0.0), dtype=float)
    for t in np.linspace(0.0, cfg.horizon, 9):
        if not np.allclose(np.asarray(cfg.sigma(t), dtype=float), sig0, atol=1e-12):
            raise ContractViolationError("degeneracy diagnostics need constant sigma")
    decomp = kernel_basis(sig0)
    mc = cfg.mc or {}
    n_paths = min(int(mc.get("paths", 10_000)), 50_000)
    n_steps = int(mc.get("steps", 200))
    seed = int(mc.get("seed", 0))
    report = {
        "kernel": {
            "m": decomp.m,
            "rank": decomp.rank,
            "basis": decomp.basis.tolist(),
            "condition_number": decomp.condition_number,
            "threshold": decomp.threshold,
        }
    }
    if decomp.m > 0:
        ens = simulate(
            cfg.sigma,
            cfg.mu,
            np.asarray(mc.get("x0", [0.0] * cfg.dim)),
            0.0,
            cfg.horizon,
            n_steps,
            max(n_paths, 1000),
            measure="P",
            seed=seed,
        )
        pp = projection_paths(ens, decomp, cfg.mu, cfg.horizon)
        report["projection"] = {
            "max_quadratic_variation": float(pp.quadratic_variation.max()),
            "n_paths": int(ens.n_paths),
            "n_steps": n_steps,
            "seed": seed,
        }
        report["atom"] = continuity_diagnostic(
            pp.pi[:, -1, :],
            seed=seed,
            conditioning=f"deterministic start x0={mc.get('x0', [0.0] * cfg.dim)}, terminal time",
        )
    else:
        report["atom"] = {"heuristic": True, "m": 0, "empty": True}
    sys.stdout.write(dumps_json(report))
    if args.out:
        write_json(os.path.join(args.out, "degeneracy.json"), report)
        manifest = dict(cfg.manifest)
        manifest["artifacts"] = ["degeneracy.json"]
        write_json(os.path.join(args.out, "manifest.json"), manifest)
    return 0


def cmd_transform_check(args):
    cfg = load_config(args.config)
    tr = cfg.transform
    if not tr:
        raise ConfigurationError("transform-check needs a [transform] section")
    lo, hi = tr["interval"]
    c = lo
    margin = 0.05 * (hi - lo)
    prim = primitive_lambda(tr["lambda_fn"], c, u_hi=hi + 4.0 * margin + 1.0)
    pair = solve_Q(
        prim,
        c,
        tr["mode"],
        tau_max=tr["tau_max"],
        q_target=hi + margin,
        l_exp=tr["l"],
    )
    invert(pair)
    report = structural_check(pair, tr["eta_fn"], (lo, hi))
    report["round_trip_error"] = pair.round_trip_error()
    report["min_slope"] = pair.min_slope()
    report["q_knots"] = len(pair.tau_knots)
    sys.stdout.write(dumps_json(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "transform.json"), report)
        write_table_csv(
            os.path.join(args.out, "transform_tabulation.csv"),
            ["tau", "Q", "Qprime"],
            [pair.tau_knots, pair.q_knots, pair.slope_knots],
        )
    return 0


def cmd_counterexample(args):
    window = None
    if args.window:
        a, b = (float(v) for v in args.window.split(","))
        window = (a, b)
    rep = counterexample_run(
        horizon=args.T,
        n_paths=args.paths,
        n_steps=args.steps,
        seed=args.seed,
        time_window=window,
    )
    sys.stdout.write(dumps_json(rep.as_dict()))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="degenpde",
        description="Degenerate parabolic pricing equation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="march the equation and export the field")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("price", help="Monte Carlo price against a solved field")
    p.add_argument("--config", required=True)
    p.add_argument("--field", required=True, help="field directory or CSV")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--mode", choices=["q", "pw"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--payoff-csv", default=None)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("verify-duality", help="solve, price both modes, compare")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_duality)

    p = sub.add_parser("diagnose-regularity", help="regularity diagnostics of a field")
    p.add_argument("--config", required=True)
    p.add_argument("--field", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagnose_regularity)

    p = sub.add_parser("diagnose-degeneracy", help="kernel decomposition and atom report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagnose_degeneracy)

    p = sub.add_parser("transform-check", help="structural certificate of the change of variable")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_transform_check)

    p = sub.add_parser("counterexample", help="occupation-time counterexample estimate")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", default=None, help="time window a,b")
    p.set_defaults(func=cmd_counterexample)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenPdeError as err:
        sys.stderr.write(dumps_json(err.payload()))
        return 1


if __name__ == "__main__":
    sys.exit(main())
