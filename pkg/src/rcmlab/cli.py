"""Command-line orchestration of the laboratory pipelines.

Commands (all take --config <path> plus optional --seed, --out, --threads):

  env      sample a conductance field, write it in binary and CSV form
  heat     heat kernel slices on a (time, source) grid, as CSV
  verify   fit an envelope on one field, verify on an independent one;
           emits JSON constants, a violations CSV, and an SVG scatter
  chain    ball-chain lower bound versus the computed kernel, as JSON + CSV
  moments  rectangle-sum moment ladder with a fitted growth exponent
  green    Green kernel values (quenched) or annealed means with a power fit

Exit codes: 0 success, 2 verification found violations, 3 precondition or
configuration error, 4 I/O error.  Outputs embed the configuration hash and
artifact version, and identical configurations reproduce byte-identical
files at any --threads value (RCMLAB_THREADS is the environment fallback).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys

from . import __version__
from .chaining import (NearDiagonalRegime, build_chain, calibrate_harnack_amp,
                       chained_lower_bound, plan_step_probes, waypoint_multiplicity)
from .envelopes import fit_envelopes, stability_radius, verify_bounds
from .environment import (EnvironmentSpec, estimate_moments, field_to_csv,
                          sample_environment, write_field)
from .green import annealed_green, green_kernel
from .kernel import heat_kernel, jump_kernel
from .lattice import TorusGeometry
from .moments import annealed_power_mean, default_rectangles, rectangle_ladder
from .reports import scatter_svg, write_csv, write_json
from .seeding import child_seed

EXIT_OK = 0
EXIT_VIOLATIONS = 2
EXIT_PRECONDITION = 3
EXIT_IO = 4

_TOP_KEYS = {"geometry", "environment", "seed", "heat", "verify", "chain", "moments", "green"}
_SECTION_KEYS = {
    "geometry": {"d", "L"},
    "heat": {"times", "sources", "targets", "tol"},
    "verify": {"times", "sources", "window", "p", "q", "moment_samples", "mode",
               "margin", "max_fraction", "tol", "inject_upper_scale",
               "inject_lower_scale"},
    "chain": {"target", "time", "p", "q", "power", "growth", "amp", "tol"},
    "moments": {"quantity", "p", "eta", "sizes", "samples", "mean_samples"},
    "green": {"mode", "pairs", "distances", "tol", "samples", "envelope_times",
              "p", "q", "moment_samples"},
}


class ExperimentConfig:
    """Validated experiment configuration; canonical JSON round-trips losslessly."""

    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise ValueError("configuration must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("geometry", "environment", "seed"):
            if key not in raw:
                raise ValueError(f"configuration needs {key!r}")
        for section, allowed in _SECTION_KEYS.items():
            if section in raw and section != "geometry":
                bad = set(raw[section]) - allowed
                if bad:
                    raise ValueError(f"unknown keys in {section!r}: {sorted(bad)}")
        geo_raw = raw["geometry"]
        bad = set(geo_raw) - _SECTION_KEYS["geometry"]
        if bad:
            raise ValueError(f"unknown keys in 'geometry': {sorted(bad)}")
        self.raw = raw
        self.geometry = TorusGeometry(geo_raw["d"], geo_raw["L"])
        self.environment = EnvironmentSpec.from_dict(raw["environment"])
        self.seed = int(raw["seed"])
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def section(self, name):
        if name not in self.raw:
            raise ValueError(f"configuration needs a {name!r} section")
        return self.raw[name]

    def canonical_json(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def meta(self):
        return {"config_hash": self.config_hash, "version": __version__}


def load_config(path, seed_override=None):
    with open(path) as fh:
        raw = json.load(fh)
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    return ExperimentConfig(raw)


def _point(values):
    return tuple(int(v) for v in values)


# ---------------------------------------------------------------------------
# commands


def cmd_env(config, out_dir):
    field = sample_environment(config.environment, config.geometry, config.seed)
    write_field(field, os.path.join(out_dir, "field.rcm"),
                extra_header={"config_hash": config.config_hash})
    field_to_csv(field, os.path.join(out_dir, "field.csv"))
    return EXIT_OK


def cmd_heat(config, out_dir):
    section = config.section("heat")
    geo = config.geometry
    field = sample_environment(config.environment, config.geometry, config.seed)
    kern = jump_kernel(field)
    tol = float(section.get("tol", 1e-10))
    targets = section.get("targets")
    target_points = ([_point(p) for p in targets] if targets
                     else [geo.coords(i) for i in range(geo.n_vertices)])
    rows = []
    for t in section["times"]:
        for src in section["sources"]:
            src_pt = _point(src)
            s = heat_kernel(field, float(t), src_pt, tol=tol, kernel=kern)
            for y in target_points:
                idx = geo.index(y)
                rows.append([float(t), " ".join(map(str, src_pt)), " ".join(map(str, y)),
                             float(s.prob[idx]), float(s.hk[idx])])
    write_csv(os.path.join(out_dir, "heat.csv"),
              ["t", "x", "y", "prob", "hk"], rows, config.meta())
    return EXIT_OK


def _verify_pipeline(config):
    section = config.section("verify")
    geo = config.geometry
    spec = config.environment
    p = float(section.get("p", 2.0))
    q = float(section.get("q", 2.0))
    window = float(section.get("window", 2.0))
    tol = float(section.get("tol", 1e-10))
    times = [float(t) for t in section["times"]]
    sources = [_point(s) for s in section.get("sources", [[0] * geo.d])]

    moments = estimate_moments(spec, geo, p, q,
                               int(section.get("moment_samples", 512)), config.seed)
    fit_field = sample_environment(spec, geo, child_seed(config.seed, 10))
    mode = section.get("mode", "cross")
    if mode == "self":
        ver_field = fit_field
    elif mode == "cross":
        ver_field = sample_environment(spec, geo, child_seed(config.seed, 11))
    else:
        raise ValueError("verify mode must be 'self' or 'cross'")

    max_window = geo.L // 2
    def n_table(field):
        table = {}
        for src in sources:
            table[geo.wrap(src)] = stability_radius(
                field, src, p, q, moments.mean_mu_p, moments.mean_nu_q, max_window)
        return table

    fit_kern = jump_kernel(fit_field)
    slices = [heat_kernel(fit_field, t, src, tol=tol, kernel=fit_kern)
              for t in times for src in sources]
    env = fit_envelopes(slices, lower_threshold=n_table(fit_field), window=window)
    if mode == "cross":
        # same constants; validity thresholds from the field under verification
        ver_table = n_table(ver_field)
        env_verify = dataclasses.replace(env, lower_threshold=ver_table,
                                         upper_threshold=ver_table)
    else:
        env_verify = env
    # optional deliberate weakening, for exercising the failure path
    upper_scale = float(section.get("inject_upper_scale", 1.0))
    lower_scale = float(section.get("inject_lower_scale", 1.0))
    if upper_scale != 1.0 or lower_scale != 1.0:
        env_verify = dataclasses.replace(
            env_verify, upper_amp=env_verify.upper_amp * upper_scale,
            lower_amp=env_verify.lower_amp * lower_scale)

    grid = []
    for t in times:
        reach = min(window * math.sqrt(t) + 1e-9, geo.L / 2)
        for src in sources:
            for idx in geo.ball_indices(src, reach):
                grid.append((t, src, geo.coords(idx)))
    report = verify_bounds(ver_field, env_verify, grid, tol=tol)
    return env, report, grid, ver_field


def cmd_verify(config, out_dir):
    section = config.section("verify")
    margin = float(section.get("margin", 0.05))
    max_fraction = float(section.get("max_fraction", 0.01))
    env, report, grid, ver_field = _verify_pipeline(config)

    meta = config.meta()

    def threshold_table(table):
        if not isinstance(table, dict):
            return table
        return {" ".join(map(str, k)): v for k, v in sorted(table.items())}

    payload = {
        "envelope": env.to_dict(),
        "lower_threshold": threshold_table(env.lower_threshold),
        "upper_threshold": threshold_table(env.upper_threshold),
        "n_checked": report.n_checked,
        "n_lower_active": report.n_lower_active,
        "n_upper_active": report.n_upper_active,
        "n_violations": len(report.violations),
        "worst_margin": report.worst_margin(),
        "violations": [
            {"t": v.t, "x": list(v.x), "y": list(v.y), "side": v.side,
             "value": v.value, "bound": v.bound, "margin": v.margin}
            for v in report.violations
        ],
    }
    write_json(os.path.join(out_dir, "envelope.json"), payload, meta)
    write_csv(
        os.path.join(out_dir, "violations.csv"),
        ["t", "x", "y", "dist", "side", "value", "bound", "margin"],
        [[v.t, " ".join(map(str, v.x)), " ".join(map(str, v.y)), v.dist,
          v.side, v.value, v.bound, v.margin] for v in report.violations],
        meta,
    )

    geo = ver_field.geometry
    kern = jump_kernel(ver_field)
    points = []
    groups = {}
    for t, x, y in grid:
        groups.setdefault((t, geo.wrap(x)), []).append(y)
    for (t, x), ys in sorted(groups.items()):
        s = heat_kernel(ver_field, t, x, tol=1e-10, kernel=kern)
        for y in ys:
            u = geo.torus_distance(x, y)
            val = float(s.hk[geo.index(y)])
            ratio = u * u / t
            scaled = math.log(val * t ** (geo.d / 2.0)) if val > 0 else math.nan
            points.append((ratio, scaled))
    ratios = sorted({r for r, _ in points if math.isfinite(r)})
    if ratios:
        lines = {
            "lower": [(r, math.log(env.lower_amp) - env.lower_gauss_rate * r) for r in ratios],
            "upper-near": [(r, math.log(env.upper_amp) - env.upper_gauss_rate * r) for r in ratios],
        }
    else:
        lines = {}
    scatter_svg(os.path.join(out_dir, "envelope.svg"), points, lines, meta,
                "distance^2 / t", "log(p t^(d/2))", "heat kernel envelope")

    lower_frac = report.count_beyond(margin, side="lower") / max(1, report.n_lower_active)
    upper_frac = report.count_beyond(margin, side="upper") / max(1, report.n_upper_active)
    if lower_frac > max_fraction or upper_frac > max_fraction:
        return EXIT_VIOLATIONS
    return EXIT_OK


def cmd_chain(config, out_dir):
    section = config.section("chain")
    geo = config.geometry
    field = sample_environment(config.environment, config.geometry, config.seed)
    target = _point(section["target"])
    t = float(section["time"])
    p = float(section.get("p", 2.0))
    q = float(section.get("q", 2.0))
    power = float(section.get("power", 1.0))
    growth = float(section.get("growth", 1.0))
    tol = float(section.get("tol", 1e-10))

    plan = build_chain(target, t)
    amp = section.get("amp")
    if amp is None:
        amp = calibrate_harnack_amp(field, plan_step_probes(plan), growth, power, p, q, tol)
    bound = chained_lower_bound(field, t, target, amp=float(amp), growth=growth,
                                power=power, p=p, q=q, verify_steps=True, tol=tol)
    slice_true = heat_kernel(field, t, (0,) * geo.d, tol=tol)
    true_value = float(slice_true.hk[geo.index(target)])

    meta = config.meta()
    payload = {
        "target": list(target),
        "time": t,
        "plan": {
            "D": bound.plan.D, "r": bound.plan.r, "k": bound.plan.k, "s": bound.plan.s,
            "relaxed": bound.plan.relaxed, "max_gap": bound.plan.max_gap,
            "waypoint_multiplicity": waypoint_multiplicity(bound.plan),
        },
        "constants": bound.constants,
        "log_bound": bound.log_value,
        "bound": bound.value,
        "true_value": true_value,
        "sound": bound.log_value <= math.log(true_value) if true_value > 0 else False,
        "steps_valid": bound.steps_valid,
        "mean_product_diag": bound.mean_product_diag,
    }
    write_json(os.path.join(out_dir, "chain.json"), payload, meta)
    from .environment import avg_norm

    ball_rows = []
    root_s = math.sqrt(bound.plan.s)
    for j in range(bound.plan.k):
        z = bound.plan.waypoints[j]
        ball = geo.ball_indices(z, root_s)
        ball_rows.append([j, " ".join(map(str, z)),
                          avg_norm(field, "mu", p, ball),
                          avg_norm(field, "nu", q, ball),
                          bound.step_logs[j]])
    write_csv(
        os.path.join(out_dir, "chain_balls.csv"),
        ["j", "z", "mu_norm", "nu_norm", "step_log_factor"],
        ball_rows,
        meta,
    )
    return EXIT_OK


def cmd_moments(config, out_dir):
    section = config.section("moments")
    geo = config.geometry
    quantity = section.get("quantity", "mu")
    p = float(section.get("p", 1.0))
    eta = float(section.get("eta", 2.0))
    rects = default_rectangles([(int(l), int(m)) for l, m in section["sizes"]], d=geo.d)
    report = rectangle_ladder(
        config.environment, geo, quantity, p, eta, rects,
        int(section.get("samples", 200)), config.seed,
        mean_samples=int(section.get("mean_samples", 128)),
    )
    meta = config.meta()
    write_json(os.path.join(out_dir, "moments.json"), {
        "quantity": report.quantity, "p": report.p, "eta": report.eta,
        "sizes": report.sizes, "estimates": report.estimates, "stderrs": report.stderrs,
        "theta": report.theta.slope,
        "theta_ci": [report.theta.ci_low, report.theta.ci_high],
        "implied_zeta": report.implied_zeta,
    }, meta)
    write_csv(os.path.join(out_dir, "ladder.csv"), ["size", "estimate", "stderr"],
              [[s, e, se] for s, e, se in zip(report.sizes, report.estimates, report.stderrs)],
              meta)
    pts = [(math.log(s), math.log(e)) for s, e in zip(report.sizes, report.estimates) if e > 0]
    line = [(math.log(s), report.theta.intercept + report.theta.slope * math.log(s))
            for s in report.sizes]
    scatter_svg(os.path.join(out_dir, "ladder.svg"), pts, {"fit": line}, meta,
                "log size", "log estimate", "rectangle moment ladder")
    return EXIT_OK


def cmd_green(config, out_dir):
    section = config.section("green")
    geo = config.geometry
    if geo.d < 3:
        raise ValueError("transient dimension required")
    spec = config.environment
    mode = section.get("mode", "quenched")
    tol = float(section.get("tol", 1.0))
    meta = config.meta()

    if section.get("pairs") is not None:
        pairs = [(_point(a), _point(b)) for a, b in section["pairs"]]
    else:
        distances = section.get("distances", [4, 6, 8])
        origin = (0,) * geo.d
        pairs = [(origin, (int(r),) + (0,) * (geo.d - 1)) for r in distances]

    if mode == "annealed":
        report = annealed_green(spec, geo, pairs, int(section.get("samples", 50)),
                                config.seed)
        write_csv(os.path.join(out_dir, "green.csv"),
                  ["x", "y", "dist", "mean", "stderr"],
                  [[" ".join(map(str, x)), " ".join(map(str, y)), u, m, s]
                   for (x, y), u, m, s in zip(report.pairs, report.distances,
                                              report.means, report.stderrs)],
                  meta)
        write_json(os.path.join(out_dir, "green.json"), {
            "mode": "annealed",
            "slope": report.slope.slope,
            "slope_ci": [report.slope.ci_low, report.slope.ci_high],
            "distances": report.distances,
            "means": report.means,
        }, meta)
        return EXIT_OK

    field = sample_environment(spec, geo, config.seed)
    kern = jump_kernel(field)
    p = float(section.get("p", 2.0))
    q = float(section.get("q", 2.0))
    env_times = [float(t) for t in section.get("envelope_times", [16.0, 32.0, 64.0])]
    moment_samples = int(section.get("moment_samples", 128))
    mean_mu = annealed_power_mean(spec, geo, "mu", p, n_fields=moment_samples, seed=config.seed)
    mean_nu = annealed_power_mean(spec, geo, "nu", q, n_fields=moment_samples, seed=config.seed)
    sources = sorted({x for x, _ in pairs})
    n_table = {geo.wrap(x): stability_radius(field, x, p, q, mean_mu, mean_nu, geo.L // 2)
               for x in sources}
    slices = [heat_kernel(field, t, x, tol=1e-12, kernel=kern)
              for t in env_times for x in sources]
    env = fit_envelopes(slices, lower_threshold=n_table, window=2.0)

    rows = []
    for x, y in pairs:
        est = green_kernel(field, x, y, env, tol=tol, kernel=kern)
        u = geo.torus_distance(x, y)
        rows.append([" ".join(map(str, est.x)), " ".join(map(str, est.y)), u,
                     est.value, est.value * u ** (geo.d - 2.0) if u else math.nan,
                     est.tail_bound, est.split_time])
    write_csv(os.path.join(out_dir, "green.csv"),
              ["x", "y", "dist", "g", "g_scaled", "tail_bound", "split_time"],
              rows, meta)
    write_json(os.path.join(out_dir, "green.json"), {
        "mode": "quenched",
        "envelope": env.to_dict(),
        "pairs": [[list(x), list(y)] for x, y in pairs],
        "values": [float(r[3]) for r in rows],
    }, meta)
    return EXIT_OK


_COMMANDS = {
    "env": cmd_env,
    "heat": cmd_heat,
    "verify": cmd_verify,
    "chain": cmd_chain,
    "moments": cmd_moments,
    "green": cmd_green,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rcmlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default="out")
        cmd.add_argument("--threads", type=int,
                         default=int(os.environ.get("RCMLAB_THREADS", "1")))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_PRECONDITION
    try:
        config = load_config(args.config, seed_override=args.seed)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    try:
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](config, args.out)
    except NearDiagonalRegime as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:
        if "bad format" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
