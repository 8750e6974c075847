"""Command-line front end: ``orderpos SUBCOMMAND --config FILE [options]``.

The config file is INI-style (sections named after the subcommand or its
module) or JSON with the same nesting.  A ``[run]`` section may set ``seed``,
``out`` and ``workers``; command-line flags take precedence.
"""

import argparse
import configparser
import csv
import json
import math
import os
import sys

import numpy as np

from . import harness
from . import point_processes as pp
from .diffusion import (DiffusionParams, derive_diffusion_params, fluctuation_variance,
                        price_decrease_probability, survival_probability)
from .fluid import FluidParams, fluid_hitting_times, fluid_position, fluid_queues
from .ldp import (PiecewiseLinearPath, poisson_iid_rate_density, queue_path_rate, segment_rate,
                  tau_tail_exponent)
from .lob_simulator import (SIM_KEYS, _floats, parse_arrival, parse_marks, sim_config_from_mapping,
                            simulate_path, write_flows_csv, write_path_csv)
from .order_flow import CONVENTIONS, flow_moments, mean_vector

COMMANDS = ("simulate", "fluid", "diffusion", "hitting", "ldp", "verify", "example1")
ALIASES = {"lob_simulator": "simulate", "fluid_engine": "fluid", "diffusion_engine": "diffusion",
           "ldp_engine": "ldp", "verify_harness": "verify"}

_ARRIVAL_KEYS = {"arrival", "rate", "nu", "a_h", "b_h", "rho_s", "kappa", "delta_s"}
_MARK_KEYS = {"p", "sizes", "laws", "vbar"}
_DIRECT_KEYS = {"mu", "sigma1", "sigma2", "rho", "qb", "qa"}
KEYS = {
    "run": {"seed", "out", "workers"},
    "simulate": set(SIM_KEYS),
    "fluid": {"lam", "vbar", "qb", "qa", "z", "t_max", "points"},
    "diffusion": _DIRECT_KEYS | _ARRIVAL_KEYS | _MARK_KEYS | {"z", "convention", "vd2", "times",
                                                               "sigma_times"},
    "hitting": _DIRECT_KEYS | {"paths", "method", "dt", "t_max", "times"},
    "ldp": _MARK_KEYS | {"lam", "qb", "qa", "times", "slopes", "x", "path_times", "path_fb",
                         "path_fa"},
    "verify": {"suite"},
    "example1": {"paths", "n", "stay"},
}
NO_CONFIG_OK = ("verify", "example1")


class ConfigError(ValueError):
    """Problem in the run configuration, with file position when known."""


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

def _ini_lines(text):
    """Map (section, key) to the 1-based line where it is defined."""
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where.setdefault((section, None), i)
            continue
        for sep in ("=", ":"):
            if sep in line:
                where[(section, line.split(sep, 1)[0].strip().lower())] = i
                break
    return where


def parse_config(text, source="<config>"):
    """Parse config text into ``{section: {key: value}}`` with canonical section names."""
    if not text.strip():
        raise UsageError(f"{source}: empty config")
    lines = {}
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ConfigError(f"{source}: JSON config must map section names to objects")
    else:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from None
        raw = {s: dict(cp[s]) for s in cp.sections()}
        lines = _ini_lines(text)
    out = {}
    for section, body in raw.items():
        name = ALIASES.get(section, section)
        if name not in KEYS:
            line = lines.get((section, None))
            loc = f"{source}:{line}" if line else source
            raise ConfigError(f"{loc}: unknown section [{section}]; expected one of "
                              f"{sorted(KEYS) + sorted(ALIASES)}")
        for key in body:
            if key not in KEYS[name]:
                line = lines.get((section, key))
                loc = f"{source}:{line}" if line else source
                raise ConfigError(f"{loc}: unknown key {key!r} in [{section}]; allowed: "
                                  f"{sorted(KEYS[name])}")
        out.setdefault(name, {}).update(body)
    return out


def _float(d, key, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return float(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r}: expected a number, got {d[key]!r}") from None


def _int(d, key, default):
    return int(_float(d, key, float(default)))


def _list(d, key, default=None):
    if key not in d:
        return default
    try:
        return _floats(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r}: expected a list of numbers, got {d[key]!r}") from None


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

class Output:
    """Writes artifacts under one directory and prints a line per artifact."""

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def path(self, name):
        return os.path.join(self.root, name)

    def json(self, name, obj, summary):
        with open(self.path(name), "w") as fh:
            fh.write(harness.dumps(obj))
        print(f"{self.path(name)}: {summary}")

    def csv(self, name, header, rows, summary):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([format(float(x), ".17g") for x in row])
        print(f"{self.path(name)}: {summary}")

    def note(self, name, summary):
        print(f"{self.path(name)}: {summary}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(cfg, seed, out, workers):
    d = dict(cfg.get("simulate", {}))
    try:
        sim = sim_config_from_mapping(d, seed=seed)
    except KeyError as exc:
        raise ConfigError(f"[simulate] missing or unknown key: {exc}") from None
    path = simulate_path(sim)
    write_path_csv(path, out.path("path.csv"))
    out.note("path.csv", f"{path.times.size} events")
    if isinstance(sim.arrival, pp.LinearStateDependent):
        lam = sim.arrival.lam
    else:
        lam = pp.stationary_rate(sim.arrival)
    write_flows_csv(path, lam, mean_vector(sim.marks), out.path("flows.csv"))
    out.note("flows.csv", "net and centered flows")
    summary = {"n": sim.n, "seed": sim.seed, "stream": sim.stream, "events": int(path.times.size),
               "tau_b": path.tau_b, "tau_a": path.tau_a, "tau_z": path.tau_z,
               "violations": path.violations, "final": [float(x[-1]) if x.size else float(x0)
                                                         for x, x0 in zip((path.qb, path.qa, path.z),
                                                                          path.initial)]}
    out.json("simulate.json", summary, f"tau_z={path.tau_z:.6g}")
    return 0


def _fluid_params(d):
    vbar = _list(d, "vbar")
    if vbar is None:
        raise ConfigError("[fluid] missing key 'vbar'")
    return FluidParams(_float(d, "lam", 1.0), tuple(vbar), _float(d, "qb"), _float(d, "qa"),
                       _float(d, "z"))


def cmd_fluid(cfg, seed, out, workers):
    d = cfg.get("fluid", {})
    p = _fluid_params(d)
    tau_a, tau_b, tau_z = fluid_hitting_times(p)
    tau = min(tau_a, tau_b, tau_z)
    t_max = _float(d, "t_max", tau if math.isfinite(tau) else 100.0)
    t = np.linspace(0.0, t_max, _int(d, "points", 201))
    qb, qa = fluid_queues(p, t)
    z = fluid_position(p, t)
    out.csv("fluid.csv", ["t", "qb", "qa", "z"], zip(t, qb, qa, z), f"{t.size} points")
    summary = {"tau_a": tau_a, "tau_b": tau_b, "tau_z": tau_z, "a": p.a, "b": p.b, "c": p.c,
               "vb": p.vb, "va": p.va}
    out.json("fluid.json", summary, f"tau_z={tau_z:.17g}")
    return 0


def _diffusion_params(d, section):
    missing = _DIRECT_KEYS - set(d)
    if missing:
        raise ConfigError(f"[{section}] missing keys {sorted(missing)}")
    mu = _list(d, "mu")
    if len(mu) != 2:
        raise ConfigError(f"[{section}] mu needs two entries")
    return DiffusionParams(mu=tuple(mu), sigma1=_float(d, "sigma1"), sigma2=_float(d, "sigma2"),
                           rho=_float(d, "rho"), qb=_float(d, "qb"), qa=_float(d, "qa"))


def cmd_diffusion(cfg, seed, out, workers):
    d = cfg.get("diffusion", {})
    direct = "mu" in d
    fluid = moments = None
    if direct:
        params = _diffusion_params(d, "diffusion")
    else:
        arrival = parse_arrival(d)
        marks = parse_marks(d)
        lam = pp.stationary_rate(arrival)
        convention = d.get("convention", "diffusion-theorem")
        if convention not in CONVENTIONS:
            raise ConfigError(f"[diffusion] unknown convention {convention!r}")
        vd2 = _float(d, "vd2", pp.clt_variance(arrival))
        moments = flow_moments(marks, lam, vd2, convention)
        params = derive_diffusion_params(moments, _float(d, "qb"), _float(d, "qa"))
        if "z" in d:
            fluid = FluidParams(lam, tuple(moments.vbar), _float(d, "qb"), _float(d, "qa"),
                                _float(d, "z"))
    times = _list(d, "times", [0.25, 0.5, 1.0, 2.0, 4.0])
    survival = [[t, survival_probability(params, t)] for t in times]
    result = params.to_dict()
    result["p_decrease"] = price_decrease_probability(params)
    result["survival"] = survival
    sigma_y2 = []
    if fluid is not None:
        tau_z = fluid_hitting_times(fluid)[2]
        grid = _list(d, "sigma_times")
        if grid is None:
            grid = list(np.linspace(0.0, tau_z, 11)[:-1]) if math.isfinite(tau_z) else []
        sigma_y2 = [[t, fluctuation_variance(fluid, moments, t)] for t in grid]
    result["sigmaY2"] = sigma_y2
    out.json("diffusion.json", result, f"p_decrease={result['p_decrease']:.10g}")
    return 0


def _report_outputs(reports, out, stem):
    failed = 0
    for i, rep in enumerate(reports):
        name = f"{stem}_{rep.name}.json" if len(reports) == 1 else f"{stem}_{i:02d}_{rep.name}.json"
        out.json(name, rep.to_dict(timing=False), "PASS" if rep.passed else "FAIL")
        print(rep.to_text())
        failed += not rep.passed
    return failed


def cmd_hitting(cfg, seed, out, workers):
    d = cfg.get("hitting", {})
    params = _diffusion_params(d, "hitting")
    times = _list(d, "times")
    method = d.get("method", "auto")
    rep = harness.hitting_probability_experiment(
        params, paths=_int(d, "paths", 100_000), seed=seed, workers=workers, times=times,
        method=method, dt=_float(d, "dt", 1e-4), t_max=_float(d, "t_max", 0.0) or None)
    return 1 if _report_outputs([rep], out, "hitting") else 0


def cmd_ldp(cfg, seed, out, workers):
    d = cfg.get("ldp", {})
    lam = _float(d, "lam", 1.0)
    marks = parse_marks(d)
    result = {"lambda": lam, "points": [], "tail_exponents": [], "segments": []}
    xs = _list(d, "x", [])
    if len(xs) % 6:
        raise ConfigError("[ldp] x must list 6-vectors (a multiple of six numbers)")
    for k in range(0, len(xs), 6):
        x = xs[k:k + 6]
        res = poisson_iid_rate_density(marks, lam, x)
        result["points"].append({"x": x, "lambda_value": res.value, "status": res.status})
    times = _list(d, "times", [])
    if times:
        q0 = (_float(d, "qb"), _float(d, "qa"))
        result["q0"] = list(q0)
        for t in times:
            te = tau_tail_exponent(marks, lam, q0, t)
            slope = te.path.slopes[0].tolist() if te.path is not None else None
            result["tail_exponents"].append({"t": t, "exponent": te.exponent, "rate": te.rate,
                                             "slope": slope})
    slopes = _list(d, "slopes", [])
    if len(slopes) % 2:
        raise ConfigError("[ldp] slopes must come in (bid, ask) pairs")
    for sb, sa in zip(slopes[0::2], slopes[1::2]):
        seg = segment_rate(marks, lam, (sb, sa))
        result["segments"].append({"slope": [sb, sa], "rate": seg.value, "status": seg.status,
                                   "duality_gap": seg.duality_gap})
    if "path_times" in d:
        pth = PiecewiseLinearPath(np.asarray(_list(d, "path_times")), np.asarray(_list(d, "path_fb")),
                                  np.asarray(_list(d, "path_fa")))
        result["path"] = {"times": pth.times, "fb": pth.fb, "fa": pth.fa,
                          "rate": queue_path_rate(pth, marks, lam)}
    out.json("ldp.json", result, f"{len(result['points'])} points, "
                                 f"{len(result['tail_exponents'])} exponents, "
                                 f"{len(result['segments'])} segments")
    return 0


def cmd_verify(cfg, seed, out, workers, suite=None):
    d = cfg.get("verify", {})
    suite = suite or d.get("suite", "all")
    if suite not in harness.SUITES:
        raise UsageError(f"unknown suite {suite!r}; expected one of {harness.SUITES}")
    reports = harness.run_suite(suite, seed=seed, workers=workers)
    failed = _report_outputs(reports, out, "verify")
    out.json("verify_summary.json", {"suite": suite, "seed": seed, "reports": len(reports),
                                     "failed": failed, "passed": failed == 0},
             f"{len(reports) - failed}/{len(reports)} passed")
    return 1 if failed else 0


def cmd_example1(cfg, seed, out, workers):
    d = cfg.get("example1", {})
    rep = harness.example1_demo(paths=_int(d, "paths", 100_000), n=_int(d, "n", 10_000), seed=seed,
                                workers=workers, stay=_float(d, "stay", 0.75))
    return 1 if _report_outputs([rep], out, "example1") else 0


HANDLERS = {"simulate": cmd_simulate, "fluid": cmd_fluid, "diffusion": cmd_diffusion,
            "hitting": cmd_hitting, "ldp": cmd_ldp, "verify": cmd_verify, "example1": cmd_example1}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="orderpos", description="Order position engines.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI or JSON config file")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory (default: orderpos_out)")
    ap.add_argument("--workers", type=int, help="worker threads (default 1)")
    ap.add_argument("--suite", help=f"verify suite: {', '.join(harness.SUITES)}")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.config is None:
            if args.command not in NO_CONFIG_OK:
                raise UsageError(f"{args.command} needs --config")
            cfg = {}
        else:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            cfg = parse_config(text, args.config)
        run = cfg.get("run", {})
        if args.seed is not None:
            seed = args.seed
        elif "seed" in run:
            seed = _int(run, "seed", 0)
        else:
            seed = _int(cfg.get("simulate", {}), "seed", 0) if args.command == "simulate" else 0
        if not 0 <= seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        workers = args.workers if args.workers is not None else _int(run, "workers", 1)
        if workers < 1:
            raise UsageError("--workers must be at least 1")
        out = Output(args.out or run.get("out", "orderpos_out"))
        handler = HANDLERS[args.command]
        if args.command == "verify":
            return handler(cfg, seed, out, workers, suite=args.suite)
        return handler(cfg, seed, out, workers)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"orderpos: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"orderpos: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, ArithmeticError, RuntimeError) as exc:
        print(f"orderpos: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
