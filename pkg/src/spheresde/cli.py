"""Command-line front end.

Subcommands:

  simulate   single path, trajectory CSV + invariant report JSON
  ensemble   Monte-Carlo run, histogram/series/count CSVs + summary JSON
  plan       reachability planning, plan JSON + executed trajectory CSV
  verify     property suite (brackets, orbits, order, partition volumes)

All numeric output uses shortest round-trip decimals, and every file is a
deterministic function of the configuration (including the seed), so
replays diff empty.  A flat key=value config file can supply any flag;
explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import backend
from .control import (ControlPlan, InfeasibleTimeError, PlanningError,
                      ReachabilityQuery, execute_plan, plan_control)
from .exact import constant_control_state, orbit_circle
from .geometry import (BundleState, ConstraintError, DegenerateInputError,
                       jacobi_bracket, diffusion_g, drift_f, bracket_gf,
                       partition_index_many, project_to_bundle,
                       uniform_bundle_sample)
from .integrator import (NoiseStream, NonconvergenceError, StepConfig,
                         simulate_path, snapshot_indices, startup_gamma)
from .ergodic import (EnsembleConfig, InsufficientDataError, bundle_counts,
                      emax_series, fit_exponential_rate, mean_trajectory,
                      simulate_ensemble, sphere_histogram,
                      uniform_emax_floor)

DEFAULTS = {
    "k": 1e-3,
    "D": 1.0,
    "T": 60.0,
    "N": 2000,
    "seed": 0,
    "u0": "0,1,0",
    "v0": "1,0,0",
    "u1": "1,0,0",
    "v1": "0,1,0",
    "grid": "36x72",
    "out": ".",
    "scheme": "implicit",
    "snapshots": "",
    "fp_tol": 1e-13,
    "fp_max_iter": 100,
    "workers": 1,
    "dW": "noise",
}


def _fmt(x) -> str:
    """Shortest round-trip decimal for a float."""
    return repr(float(x))


def _parse_vec(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated components, got {text!r}")
    return np.array(parts)


def _parse_grid(text):
    nlat, _, nlon = text.partition("x")
    return int(nlat), int(nlon)


def _parse_snapshots(text, T):
    if not text:
        return None
    times = []
    for piece in text.split(","):
        if ":" in piece:
            start, stop, step = (float(p) for p in piece.split(":"))
            times.extend(np.arange(start, stop + 0.5 * step, step))
        else:
            times.append(float(piece))
    times = sorted(t for t in times if t <= T + 1e-12)
    return times


def _load_config_file(path):
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key = value): {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _resolve(args, keys):
    """Merge precedence: explicit flag > config file > default."""
    file_vals = _load_config_file(args.config) if args.config else {}
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_vals:
            caster = type(DEFAULTS[key])
            out[key] = caster(file_vals[key])
        else:
            out[key] = DEFAULTS[key]
    return out


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(rows, header):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg_vals = _resolve(args, ["k", "D", "T", "seed", "u0", "v0", "out",
                               "scheme", "fp_tol", "fp_max_iter", "dW"])
    k, D, T = cfg_vals["k"], cfg_vals["D"], cfg_vals["T"]
    z0 = project_to_bundle(_parse_vec(cfg_vals["u0"]), _parse_vec(cfg_vals["v0"]))
    z0.validate()
    cfg = StepConfig(k=k, D=D, fp_tol=cfg_vals["fp_tol"],
                     fp_max_iter=cfg_vals["fp_max_iter"])
    cfg.check_speed_guard(z0.v)
    n = int(round(T / k))
    if cfg_vals["dW"] == "zero":
        dW = np.zeros(n)
    else:
        dW = NoiseStream(cfg_vals["seed"], 0, k).increments(n)
    idx = np.arange(n + 1, dtype=np.int64)
    snap_u = np.empty((n + 1, 3))
    snap_v = np.empty((n + 1, 3))
    lam = np.zeros(n)
    iters = np.zeros(n, dtype=np.int64)

    if cfg_vals["scheme"] == "implicit":
        gamma = startup_gamma(z0, float(dW[0]), cfg)
        up0 = z0.u - k * (1.0 + gamma) * z0.v
        status, cmax, emax_drift, total_its = backend.implicit_path(
            up0, z0.u, z0.v, k, cfg.sqrtD, dW, cfg.fp_tol, cfg.fp_max_iter,
            True, idx, snap_u, snap_v, lam, iters,
        )
        if status >= 0:
            raise NonconvergenceError(int(status), cfg.fp_max_iter, math.inf)
    elif cfg_vals["scheme"] == "em":
        backend.em_path(z0.u, z0.v, k, D, cfg.sqrtD, dW, idx, snap_u, snap_v)
    else:
        raise ValueError(f"unknown scheme {cfg_vals['scheme']!r}")

    e0 = float(z0.v @ z0.v)
    cons = np.abs(np.linalg.norm(snap_u, axis=1) - 1.0)
    drift = (snap_v * snap_v).sum(axis=1) - e0
    rows = []
    for i in range(n + 1):
        rows.append((
            i * k, snap_u[i, 0], snap_u[i, 1], snap_u[i, 2],
            snap_v[i, 0], snap_v[i, 1], snap_v[i, 2],
            cons[i], drift[i],
            lam[i - 1] if i > 0 else 0.0,
            float(iters[i - 1]) if i > 0 else 0.0,
        ))
    out = Path(cfg_vals["out"])
    _write(out / "trajectory.csv", _csv(rows, [
        "t", "u_x", "u_y", "u_z", "v_x", "v_y", "v_z",
        "constraint_err", "energy_err", "lambda", "fp_iterations",
    ]))
    report = {
        "scheme": cfg_vals["scheme"],
        "k": k, "D": D, "T": T, "seed": cfg_vals["seed"],
        "dW": cfg_vals["dW"],
        "max_constraint_violation": float(cons.max()),
        "max_energy_drift": float(np.abs(drift).max()),
        "max_fp_iterations": int(iters.max()),
        "mean_fp_iterations": float(iters.mean()),
    }
    _write(out / "invariants.json", json.dumps(report, indent=2) + "\n")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'invariants.json'}")
    return 0


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------

def cmd_ensemble(args):
    vals = _resolve(args, ["k", "D", "T", "N", "seed", "u0", "v0", "grid",
                           "out", "snapshots", "fp_tol", "fp_max_iter",
                           "workers"])
    T = vals["T"]
    grid = _parse_grid(vals["grid"])
    snaps = _parse_snapshots(vals["snapshots"], T) or [0.0, T]
    z0 = project_to_bundle(_parse_vec(vals["u0"]), _parse_vec(vals["v0"]))
    cfg = EnsembleConfig(N=vals["N"], k=vals["k"], D=vals["D"], T=T,
                         seed=vals["seed"], snapshot_times=tuple(snaps),
                         grid_resolution=grid)
    result = simulate_ensemble(cfg, z0, workers=vals["workers"])
    out = Path(vals["out"])

    for s, t in enumerate(result.times):
        hist = sphere_histogram(result.u[s], grid)
        dens = hist.density
        rows = []
        for i in range(grid[0]):
            for j in range(grid[1]):
                rows.append((float(i), float(j), float(hist.counts[i, j]),
                             hist.areas[i, j], dens[i, j]))
        _write(out / f"histogram_t{_fmt(t)}.csv",
               _csv(rows, ["lat_index", "lon_index", "count", "area", "density"]))

    series = emax_series(result)
    _write(out / "emax.csv", _csv(
        zip(series.times, series.values, series.values_normalized),
        ["t", "emax", "emax_normalized"],
    ))

    mt = mean_trajectory(result)
    _write(out / "mean_trajectory.csv", _csv(
        [(t, eu[0], eu[1], eu[2], ev[0], ev[1], ev[2]) for t, eu, ev in mt],
        ["t", "Eu_x", "Eu_y", "Eu_z", "Ev_x", "Ev_y", "Ev_z"],
    ))

    summary = {
        "config": {
            "N": cfg.N, "k": cfg.k, "D": cfg.D, "T": cfg.T,
            "seed": cfg.seed, "grid": list(grid),
            "snapshot_times": list(cfg.snapshot_times),
        },
        "emax_final": float(series.values[-1]),
        "emax_meaningful": cfg.N > 1,
    }
    speeds = np.linalg.norm(result.v[-1], axis=1)
    if np.allclose(speeds, 1.0, atol=1e-6):
        bc = bundle_counts(result.u[-1], result.v[-1])
        _write(out / "bundle_counts.csv", _csv(
            [(float(i + 1), float(j + 1), float(bc.counts[i, j]))
             for i in range(6) for j in range(8)],
            ["segment", "sector", "count"],
        ))
        summary["bundle_counts"] = {
            "min": int(bc.counts.min()), "max": int(bc.counts.max()),
            "degenerate": bc.degenerate,
            "segment_totals": [int(c) for c in bc.segment_totals],
        }
    floor = uniform_emax_floor(cfg.N, grid, seed=cfg.seed + 1)
    summary["emax_floor_uniform"] = floor
    try:
        alpha, quality = fit_exponential_rate(series, floor)
        summary["rate_fit"] = {"alpha": alpha, "quality": quality}
    except InsufficientDataError as exc:
        summary["rate_fit"] = {"error": str(exc)}
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"wrote ensemble outputs to {out}")
    return 0


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

def cmd_plan(args):
    vals = _resolve(args, ["T", "u0", "v0", "u1", "v1", "out"])
    start = project_to_bundle(_parse_vec(vals["u0"]), _parse_vec(vals["v0"]))
    target = project_to_bundle(_parse_vec(vals["u1"]), _parse_vec(vals["v1"]))
    try:
        query = ReachabilityQuery(start, target, vals["T"])
    except InfeasibleTimeError as exc:
        r = start.speed
        print(f"infeasible horizon: {exc} (need T >= {2.0 * math.pi / r})",
              file=sys.stderr)
        return 2
    plan = plan_control(query)
    traj = execute_plan(start, plan, samples_per_segment=20)
    tf, sf = traj[-1]
    err = max(float(np.linalg.norm(sf.u - target.u)),
              float(np.linalg.norm(sf.v - target.v)))
    out = Path(vals["out"])
    doc = plan.to_dict()
    doc["endpoint_error"] = err
    _write(out / "plan.json", json.dumps(doc, indent=2) + "\n")
    _write(out / "plan_trajectory.csv", _csv(
        [(t, s.u[0], s.u[1], s.u[2], s.v[0], s.v[1], s.v[2]) for t, s in traj],
        ["t", "u_x", "u_y", "u_z", "v_x", "v_y", "v_z"],
    ))
    print(f"plan with {len(plan.segments)} segments, endpoint error {err:.3e}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _check_brackets(rng, failures):
    for r in (0.5, 1.0, 2.0):
        u, v = uniform_bundle_sample(200, r, rng)
        worst = 0.0
        for i in range(len(u)):
            z = BundleState(u[i], v[i])
            gf_u, gf_v = jacobi_bracket("g", "f", z)
            cu, cv = bracket_gf(z)
            fu, fv = jacobi_bracket("f", "gf", z)
            gu, gv = diffusion_g(z)
            hu, hv = jacobi_bracket("g", "gf", z)
            du, dv = drift_f(z)
            worst = max(
                worst,
                float(np.abs(gf_u - cu).max()), float(np.abs(gf_v - cv).max()),
                float(np.abs(fu - r * r * gu).max()),
                float(np.abs(fv - r * r * gv).max()),
                float(np.abs(hu + du).max()), float(np.abs(hv + dv).max()),
            )
        if worst > 1e-12:
            failures.append(f"bracket identities at r={r}: residual {worst:.3e}")


def _check_orbits(rng, failures):
    worst_res, worst_per = 0.0, 0.0
    for _ in range(50):
        r = float(rng.uniform(0.3, 2.5))
        u, v = uniform_bundle_sample(1, r, rng)
        z = BundleState(u[0], v[0])
        a = float(rng.uniform(-3.0, 3.0))
        b = math.sqrt(r * r + a * a)
        for t in rng.uniform(0.0, 2.0, 10):
            s = constant_control_state(z, a, float(t))
            # second derivative of the closed form
            h = 1e-5
            sp = constant_control_state(z, a, float(t) + h)
            sm = constant_control_state(z, a, float(t) - h)
            acc = (sp.u - 2.0 * s.u + sm.u) / (h * h)
            res = acc + r * r * s.u - a * np.cross(s.u, s.v)
            worst_res = max(worst_res, float(np.abs(res).max()))
        back = constant_control_state(z, a, 2.0 * math.pi / b)
        worst_per = max(worst_per, float(np.abs(back.u - z.u).max()),
                        float(np.abs(back.v - z.v).max()))
        circle = orbit_circle(z, a)
        if abs(circle.diameter - 2.0 * r / b) > 1e-12:
            failures.append("orbit diameter mismatch")
    if worst_res > 1e-4:   # FD second derivative limits the check
        failures.append(f"orbit ODE residual {worst_res:.3e}")
    if worst_per > 1e-11:
        failures.append(f"periodic return residual {worst_per:.3e}")


def _check_order(failures):
    z0 = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    errs = []
    for k in (1e-2, 5e-3, 2.5e-3):
        cfg = StepConfig(k=k, D=0.0)
        noise = NoiseStream(0, 0, k)
        out = simulate_path(z0, 1.0, cfg, noise, snapshots=[1.0],
                            scheme="implicit")
        # D = 0: the noise is multiplied by sqrt(D) = 0
        exact = constant_control_state(z0, 0.0, 1.0)
        errs.append(float(np.linalg.norm(out[-1][1].u - exact.u)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    if not all(3.5 <= rt <= 4.5 for rt in ratios):
        failures.append(f"deterministic order ratios {ratios}")


def _check_multiplier(failures):
    from .integrator import StepState, implicit_step, lagrange_multiplier, \
        multiplier_alt
    z0 = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    cfg = StepConfig(k=1e-3, D=0.0)
    s = StepState(z0.u - cfg.k * z0.v, z0.u, z0.v, 0)
    res = implicit_step(s, 0.0, cfg)
    for n in range(1, 50):
        s = StepState(s.u_cur, res.u_next, res.v_next, n)
        res = implicit_step(s, 0.0, cfg)
        w_mid = 0.5 * (res.u_next + s.u_prev)
        if abs(lagrange_multiplier(w_mid, s, cfg) - res.lam) > 1e-10 or \
           abs(multiplier_alt(s.v_cur, res.v_next, w_mid) - res.lam) > 1e-9:
            failures.append(f"multiplier mismatch at step {n}")
            break


def _check_partition(rng, failures):
    u, v = uniform_bundle_sample(200000, 1.0, rng)
    seg, sec, degenerate = partition_index_many(u, v)
    n = len(u) - degenerate.sum()
    counts = np.zeros((6, 8), dtype=np.int64)
    np.add.at(counts, (seg[~degenerate] - 1, sec[~degenerate] - 1), 1)
    expect = n / 48.0
    sigma = math.sqrt(n * (1.0 / 48.0) * (47.0 / 48.0))
    if np.abs(counts - expect).max() > 5.0 * sigma:
        failures.append(
            f"partition volumes: worst deviation {np.abs(counts - expect).max():.1f}"
            f" vs 5 sigma = {5 * sigma:.1f}"
        )


def cmd_verify(args):
    vals = _resolve(args, ["seed", "out"])
    rng = np.random.default_rng(vals["seed"])
    failures = []
    _check_brackets(rng, failures)
    _check_orbits(rng, failures)
    _check_order(failures)
    _check_multiplier(failures)
    _check_partition(rng, failures)
    report = {"passed": not failures, "failures": failures,
              "backend": backend.BACKEND_NAME}
    out = Path(vals["out"])
    _write(out / "verify.json", json.dumps(report, indent=2) + "\n")
    for f in failures:
        print(f"FAIL: {f}", file=sys.stderr)
    print("verify: " + ("pass" if not failures else f"{len(failures)} failure(s)"))
    return 0 if not failures else 1


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="spheresde",
        description="Damped stochastic geodesics on the sphere: simulation, "
                    "planning and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, keys):
        p.add_argument("--config", help="flat key=value config file")
        for key in keys:
            default = DEFAULTS[key]
            flag = "--" + key.replace("_", "-")
            if key in ("scheme",):
                p.add_argument(flag, choices=["implicit", "em"])
            elif key in ("dW",):
                p.add_argument("--dW", choices=["noise", "zero"])
            elif isinstance(default, bool):
                p.add_argument(flag, action="store_true", default=None)
            elif isinstance(default, int):
                p.add_argument(flag, type=int)
            elif isinstance(default, float):
                p.add_argument(flag, type=float)
            else:
                p.add_argument(flag)

    p = sub.add_parser("simulate", help="single-path simulation")
    add_common(p, ["k", "D", "T", "seed", "u0", "v0", "out", "scheme",
                   "fp_tol", "fp_max_iter", "dW"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="Monte-Carlo ensemble run")
    add_common(p, ["k", "D", "T", "N", "seed", "u0", "v0", "grid", "out",
                   "snapshots", "fp_tol", "fp_max_iter", "workers"])
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("plan", help="reachability planning")
    add_common(p, ["T", "u0", "v0", "u1", "v1", "out"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="run the property suite")
    add_common(p, ["seed", "out"])
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ConstraintError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonconvergenceError, PlanningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
