"""Command-line front end.

Two-level subcommands bind the library to config files:

    twave geometry check <config>
    twave weights check | window <config>
    twave carleman sweep | identity <config>
    twave forward run <config> [--snapshot-every N] [--trace-out PATH]
    twave rays trace | envelope <config>
    twave invert stability | reconstruct <config>

Every run writes its artifacts plus ``manifest.json`` (config hash,
seed, versions, output hashes) into ``output.dir``.  Exit codes: 0
success, 1 usage or config error, 2 infeasible parameter window, 3
numerical failure.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import flatten, get, load_config, validate_keys
from .carleman import conjugation_identity, sweep_ratios
from .errors import (ConfigError, DomainError, InfeasibleWindowError,
                     InstabilityError, TwaveError)
from .forward import solve, solve_linearized
from .geometry import InterfaceCurve, check_strict_convexity, pole_data
from .inverse import (InverseConfig, _bump, reconstruct_linearized,
                      reconstruct_potential, stability_ensemble)
from .raytrace import (RayMedium, envelope_reconstruct, oracle_traveltimes,
                       trace)
from .rng import trial_rng
from .snapshots import write_csv, write_manifest, write_pgm, write_snapshot
from .weights import check_prop1, check_time_monotonicity, minimal_time

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def _curves(flat):
    inner = InterfaceCurve(np.asarray(get(flat, "geometry.inner.pole"), float),
                           get(flat, "geometry.inner.fourier"))
    outer = InterfaceCurve(np.asarray(get(flat, "geometry.outer.pole"), float),
                           get(flat, "geometry.outer.fourier"))
    return inner, outer


def _out_dir(flat) -> Path:
    d = Path(get(flat, "output.dir", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _finish(out_dir, subcommand, config_path, outputs, seed=None, extra=None):
    text = Path(config_path).read_text()
    write_manifest(out_dir, subcommand=subcommand, config_path=config_path,
                   config_text=text, seed=seed, outputs=outputs, extra=extra)


def _probing_data(grid, r):
    X, Y = grid.mesh()
    u0 = np.where(grid.interior, r + 0.2 * _bump(np.hypot(X, Y - 0.2), 1.2), 0.0)
    return u0, np.zeros_like(u0)


# -- handlers -----------------------------------------------------------------


def _cmd_geometry_check(flat, args):
    out = _out_dir(flat)
    inner, outer = _curves(flat)
    a1 = float(get(flat, "geometry.a1"))
    a2 = float(get(flat, "geometry.a2"))
    ok_in, kmin_in = check_strict_convexity(inner)
    ok_out, kmin_out = check_strict_convexity(outer)
    th = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
    clearance = float(np.min(outer.radial_margin(inner.point(th))))
    rows = [
        ("inner_strictly_convex", kmin_in, 0.0, ok_in),
        ("outer_strictly_convex", kmin_out, 0.0, ok_out),
        ("curves_nested", clearance, 0.0, clearance > 0.0),
        ("coefficient_order", a1 - a2, 0.0, a1 > a2 > 0.0),
    ]
    path = out / "geometry_check.csv"
    write_csv(path, ["quantity", "value", "threshold", "pass"], rows)
    for r in rows:
        print(f"{r[0]}: value={r[1]:.6g} pass={r[3]}")
    _finish(out, "geometry check", args.config, [path])
    return 0


def _cmd_weights_check(flat, args):
    out = _out_dir(flat)
    dp = cfgmod.build_pair(flat)
    params = cfgmod.build_weight_params(flat, dp)
    nx = int(get(flat, "grid.nx", 192))
    nt = int(get(flat, "grid.nt", 33))
    rep = check_prop1(params, dp, nx=nx)
    trep = check_time_monotonicity(params, dp, nx=nx, nt=nt)
    rows = rep.rows() + trep.rows()
    path = out / "weights_check.csv"
    write_csv(path, ["condition", "value", "threshold", "pass"], rows)
    print(f"delta={rep.delta:.6g} delta1={rep.delta1:.6g} "
          f"all_pass={rep.passed and trep.passed}")
    _finish(out, "weights check", args.config, [path])
    return 0


def _cmd_weights_window(flat, args):
    out = _out_dir(flat)
    win = cfgmod.build_window(flat, a1=float(get(flat, "geometry.a1")),
                              a2=float(get(flat, "geometry.a2")))
    betas = get(flat, "window.beta")
    if not isinstance(betas, list):
        betas = [betas]
    rows = []
    any_feasible = False
    for b in betas:
        b = float(b)
        lo, hi = win.gamma_interval(b)
        ok = win.feasible(b)
        any_feasible = any_feasible or ok
        rows.append((f"gamma_window@beta={b:g}", lo, min(hi, 1.0), ok))
    path = out / "window.csv"
    write_csv(path, ["condition", "gamma_lo", "gamma_hi", "pass"], rows)
    for r in rows:
        print(f"{r[0]}: [{r[1]:.6g}, {r[2]:.6g}] feasible={r[3]}")
    _finish(out, "weights window", args.config, [path])
    if not any_feasible:
        print(f"no feasible beta in {betas} (beta_max={win.beta_max:.6g})",
              file=sys.stderr)
        return 2
    return 0


def _cmd_carleman_sweep(flat, args):
    out = _out_dir(flat)
    dp = cfgmod.build_pair(flat)
    grid = cfgmod.build_simgrid(flat, dp)
    wT = float(get(flat, "weights.T", grid.t1 - grid.t0))
    p1 = cfgmod.build_weight_params(flat, dp, which=1, T=wT)
    p2 = cfgmod.build_weight_params(flat, dp, which=2, T=wT)
    seed = int(get(flat, "sweep.seed", 0))
    res = sweep_ratios(
        grid, p1, p2,
        s_values=[float(v) for v in get(flat, "sweep.s")],
        lam_values=[float(v) for v in get(flat, "sweep.lambda")],
        n_trials=int(get(flat, "sweep.trials", 100)), seed=seed,
        ablate_boundary=bool(get(flat, "sweep.ablate", False)),
        full_boundary=bool(get(flat, "sweep.full_boundary", False)))
    rows = [(p.s, p.lam, p.max_ratio, p.lhs, p.rhs) for p in res.points]
    path = out / "sweep.csv"
    write_csv(path, ["s", "lambda", "ensemble_max_ratio", "lhs", "rhs"], rows)
    onset_report = {}
    for lam, onset in sorted(res.onsets.items()):
        text = "onset undetermined" if onset is None else f"{onset:.12g}"
        onset_report[f"{lam:g}"] = text
        print(f"lambda={lam:g}: {text}")
    _finish(out, "carleman sweep", args.config, [path], seed=seed,
            extra={"onsets": onset_report, "n_trials": res.n_trials})
    if not all(math.isfinite(p.max_ratio) for p in res.points):
        print("nonfinite ratio encountered", file=sys.stderr)
        return 3
    return 0


def _cmd_carleman_identity(flat, args):
    out = _out_dir(flat)
    dp = cfgmod.build_pair(flat)
    params = cfgmod.build_weight_params(flat, dp,
                                        T=float(get(flat, "identity.T", 0.4)))
    rows = conjugation_identity(
        params, dp, [int(v) for v in get(flat, "identity.nx")],
        T=float(get(flat, "identity.T", 0.4)),
        s=float(get(flat, "identity.s", 0.6)),
        lam=float(get(flat, "identity.lambda", 0.25)))
    path = out / "identity.csv"
    write_csv(path, ["h", "residual", "order"], rows)
    for h, res, order in rows:
        print(f"h={h:.6g} residual={res:.6g} order={order:.3g}")
    _finish(out, "carleman identity", args.config, [path])
    return 0


def _cmd_forward_run(flat, args):
    out = _out_dir(flat)
    dp = cfgmod.build_pair(flat)
    grid = cfgmod.build_simgrid(flat, dp)
    X, Y = grid.mesh()
    amp = float(get(flat, "forward.amp", 0.0))
    u0 = np.zeros((grid.ny, grid.nx))
    if amp != 0.0:
        c = get(flat, "forward.bump_center", [0.0, 0.0])
        w = float(get(flat, "forward.bump_width", 0.8))
        u0 = np.where(grid.interior,
                      amp * _bump(np.hypot(X - c[0], Y - c[1]), w), 0.0)
    potential = None
    p_amp = float(get(flat, "forward.potential_amp", 0.0))
    if p_amp != 0.0:
        c = get(flat, "forward.potential_center", [0.0, 0.0])
        w = float(get(flat, "forward.potential_width", 0.8))
        potential = np.where(grid.interior,
                             p_amp * _bump(np.hypot(X - c[0], Y - c[1]), w), 0.0)

    every = args.snapshot_every
    outputs = []

    def snap(g, state):
        if every > 0 and state.n % every == 0 or state.n == g.nt:
            p = out / f"u_{state.n:06d}.twv"
            write_snapshot(p, state.u, g.h, state.t)
            outputs.append(p)

    result = solve(grid, u0, np.zeros_like(u0), potential=potential,
                   want_trace=True,
                   track_energy=bool(get(flat, "forward.track_energy", False)),
                   on_step=snap)
    tr = result.trace
    trace_path = Path(args.trace_out) if args.trace_out else out / "trace.csv"
    rows = [(tr.times[n], b, tr.arclength[b], tr.values[n, b])
            for n in range(tr.values.shape[0])
            for b in range(tr.values.shape[1])]
    write_csv(trace_path, ["time", "point_index", "arc_length", "value"], rows)
    outputs.append(trace_path)
    if result.energies is not None:
        epath = out / "energy.csv"
        write_csv(epath, ["time", "energy"],
                  list(zip(grid.times, result.energies)))
        outputs.append(epath)
    print(f"{len(outputs)} artifacts, final max |u| = "
          f"{float(np.max(np.abs(result.state.u))):.6g}")
    _finish(out, "forward run", args.config, outputs)
    return 0


def _ray_medium(flat) -> RayMedium:
    # rays bypass the two-speed ordering so slow-inclusion demos work
    inner, outer = _curves(flat)
    return RayMedium(inner, outer, a1=float(get(flat, "geometry.a1")),
                     a2=float(get(flat, "geometry.a2")))


def _cmd_rays_trace(flat, args):
    out = _out_dir(flat)
    med = _ray_medium(flat)
    origin = np.asarray(get(flat, "rays.origin"), float)
    ang = math.radians(float(get(flat, "rays.angle_deg")))
    path = trace(med, origin, (math.cos(ang), math.sin(ang)),
                 max_events=int(get(flat, "rays.max_events", 64)))
    rows = [(k, ev.kind, ev.point[0], ev.point[1], ev.time)
            for k, ev in enumerate(path.events)]
    csv_path = out / "ray_events.csv"
    write_csv(csv_path, ["event", "kind", "x", "y", "time"], rows)
    print(f"{len(path.events)} events, "
          f"{'trapped' if path.trapped else 'exited'}, "
          f"total time {path.total_time:.6g}")
    _finish(out, "rays trace", args.config, [csv_path])
    return 0


def _cmd_rays_envelope(flat, args):
    out = _out_dir(flat)
    med = _ray_medium(flat)
    n_rec = int(get(flat, "rays.records", 64))
    th = np.linspace(0.0, 2.0 * np.pi, n_rec, endpoint=False)
    records = oracle_traveltimes(med, med.outer.point(th))
    env = envelope_reconstruct(records, med.a2,
                               int(get(flat, "rays.grid_n", 256)),
                               truth=med.inner)
    csv_path = out / "contour.csv"
    write_csv(csv_path, ["x", "y"], [tuple(p) for p in env.contour])
    outputs = [csv_path]
    if bool(get(flat, "rays.pgm", False)):
        pgm_path = out / "envelope.pgm"
        write_pgm(pgm_path, env.field)
        outputs.append(pgm_path)
    extra = {"low_coverage": env.low_coverage}
    if env.hausdorff is not None:
        extra["hausdorff"] = env.hausdorff
        print(f"hausdorff vs truth: {env.hausdorff:.6g}")
    _finish(out, "rays envelope", args.config, outputs, extra=extra)
    return 0


def _invert_setup(flat):
    """Grid, probing data, and the minimal horizon shared by both modes.

    With ``invert.t_factor`` the horizon is factor times the minimal
    recovery time (computed from the weight poles and beta) and the
    config guard stays armed; otherwise grid.T is taken at face value.
    """
    dp = cfgmod.build_pair(flat)
    factor = flat.get("invert.t_factor")
    t_min = 0.0
    if factor is not None:
        beta = get(flat, "weights.beta")
        if beta == "auto":
            beta = cfgmod.build_window(flat, a1=dp.a1, a2=dp.a2).choose_beta()
        pd1 = pole_data(dp, np.asarray(get(flat, "weights.pole"), float))
        pd2 = pole_data(dp, np.asarray(get(flat, "weights.pole2"), float))
        t_min = minimal_time(pd1, pd2, dp.a1, float(beta))
        T = factor * t_min
        if factor <= 1.0:
            # probes below the stability horizon are reported, not
            # rejected, but they lose the validity guard
            print(f"warning: T = {T:.6g} is below the stability horizon "
                  f"{t_min:.6g}; results are diagnostic only",
                  file=sys.stderr)
            t_min = 0.0
    else:
        T = float(get(flat, "grid.T"))
    grid = cfgmod.build_simgrid(flat, dp, T=T)
    r = float(get(flat, "invert.r", 0.5))
    u0, u1 = _probing_data(grid, r)
    return grid, u0, u1, r, t_min


def _cmd_invert_stability(flat, args):
    out = _out_dir(flat)
    grid, u0, u1, r, t_min = _invert_setup(flat)
    seed = int(get(flat, "invert.seed", 0))
    cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)),
                        m=float(get(flat, "invert.m", 1.0)),
                        u0=u0, u1=u1, r=r, t_min=t_min)
    rep = stability_ensemble(cfg, int(get(flat, "invert.trials", 50)),
                             seed=seed, amp=flat.get("invert.amp"))
    rows = [(k, t.l2_diff, t.flux_h1, t.ratio)
            for k, t in enumerate(rep.trials)]
    path = out / "stability.csv"
    write_csv(path, ["trial", "l2_diff", "flux_h1", "ratio"], rows)
    print(f"max={rep.max_ratio:.6g} median={rep.median_ratio:.6g} "
          f"near_invisible={rep.n_near_invisible}")
    _finish(out, "invert stability", args.config, [path], seed=seed,
            extra={"max_ratio": rep.max_ratio,
                   "median_ratio": rep.median_ratio,
                   "near_invisible": rep.n_near_invisible})
    return 0


def _cmd_invert_reconstruct(flat, args):
    out = _out_dir(flat)
    task = get(flat, "invert.task", "linearized")
    if task not in ("linearized", "potential"):
        raise ConfigError(f"invert.task must be linearized or potential, "
                          f"got {task!r}")
    grid, u0, u1, r, t_min = _invert_setup(flat)
    X, Y = grid.mesh()
    m = float(get(flat, "invert.m", 1.0))
    amp = float(get(flat, "invert.amp", 0.1))
    seed = int(get(flat, "invert.seed", 0))
    noise = float(get(flat, "invert.noise", 0.0))
    mu = get(flat, "invert.mu", "auto")
    mu = None if mu == "auto" else float(mu)
    p_ref = np.where(grid.interior, 0.25 * _bump(np.hypot(X - 0.3, Y), 0.9), 0.0)
    cfg = InverseConfig(grid=grid, p=p_ref, m=m, u0=u0, u1=u1, r=r,
                        t_min=t_min, mu=mu,
                        cg_maxiter=int(get(flat, "invert.cg_maxiter", 60)),
                        outer_maxiter=int(get(flat, "invert.outer_maxiter", 10)),
                        outer_tol=1e-5)

    def noisy(values):
        if noise == 0.0:
            return values
        rms = float(np.sqrt(np.mean(values ** 2)))
        return values + noise * rms * trial_rng(seed, 0).standard_normal(
            values.shape)

    if task == "linearized":
        base = solve(grid, u0, u1, potential=p_ref, want_trace=True,
                     store="f64")
        truth = np.where(grid.interior,
                         0.8 * _bump(np.hypot(X - 0.5, Y - 0.4), 0.55)
                         - 0.6 * _bump(np.hypot(X + 0.6, Y + 0.3), 0.5), 0.0)
        data = noisy(solve_linearized(grid, truth, base.states,
                                      potential=p_ref).trace.values)
        res = reconstruct_linearized(cfg, data, base.states)
        rows = [(k, res.residuals[k],
                 res.update_norms[k - 1] if k >= 1 else 0.0)
                for k in range(len(res.residuals))]
        est, n_iter, ok = res.f, res.iterations, res.converged
        rel = float(np.linalg.norm(est - truth) / np.linalg.norm(truth))
        failed = False
    else:
        truth = np.where(grid.interior,
                         p_ref + amp * _bump(np.hypot(X + 0.4, Y - 0.3), 0.6),
                         0.0)
        observed = noisy(solve(grid, u0, u1, potential=truth,
                               want_trace=True).trace.values)
        res = reconstruct_potential(cfg, observed)
        rows = [(hrow["iter"], hrow["residual"], hrow["update_norm"])
                for hrow in res.history]
        est, n_iter, ok = res.q, len(res.history), res.converged
        rel = float(np.linalg.norm(est - truth) / np.linalg.norm(truth))
        failed = res.diverged

    snap_path = out / ("f_hat.twv" if task == "linearized" else "q_hat.twv")
    write_snapshot(snap_path, est, grid.h, grid.t1)
    csv_path = out / "convergence.csv"
    write_csv(csv_path, ["iter", "residual", "update_norm"], rows)
    print(f"{task}: iterations={n_iter} converged={ok} rel_error={rel:.6g}")
    _finish(out, "invert reconstruct", args.config, [snap_path, csv_path],
            seed=seed, extra={"task": task, "rel_error": rel,
                              "converged": ok})
    if failed:
        print("outer iteration diverged; trajectory written", file=sys.stderr)
        return 3
    return 0


_HANDLERS = {
    ("geometry", "check"): _cmd_geometry_check,
    ("weights", "check"): _cmd_weights_check,
    ("weights", "window"): _cmd_weights_window,
    ("carleman", "sweep"): _cmd_carleman_sweep,
    ("carleman", "identity"): _cmd_carleman_identity,
    ("forward", "run"): _cmd_forward_run,
    ("rays", "trace"): _cmd_rays_trace,
    ("rays", "envelope"): _cmd_rays_envelope,
    ("invert", "stability"): _cmd_invert_stability,
    ("invert", "reconstruct"): _cmd_invert_reconstruct,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="twave", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    groups = parser.add_subparsers(dest="group", required=True)
    for group, actions in (("geometry", ["check"]),
                           ("weights", ["check", "window"]),
                           ("carleman", ["sweep", "identity"]),
                           ("forward", ["run"]),
                           ("rays", ["trace", "envelope"]),
                           ("invert", ["stability", "reconstruct"])):
        gp = groups.add_parser(group)
        sub = gp.add_subparsers(dest="action", required=True)
        for action in actions:
            ap = sub.add_parser(action)
            ap.add_argument("config", help="experiment config file")
            if (group, action) == ("forward", "run"):
                ap.add_argument("--snapshot-every", type=int, default=0,
                                metavar="N")
                ap.add_argument("--trace-out", default=None, metavar="PATH")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        flat = flatten(load_config(args.config))
        subcommand = f"{args.group} {args.action}"
        validate_keys(flat, subcommand)
        return _HANDLERS[(args.group, args.action)](flat, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleWindowError as exc:
        print(f"infeasible parameter window: {exc}", file=sys.stderr)
        return 2
    except InstabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TwaveError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
