"""Command-line entry point: ``nbcpp {rw,simulate,moments,clt}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .bundle import Bundle
from .config import SCHEMAS, ConfigError, digest, load_file, resolve, schema
from .orchestrate import ReplicaFailure, default_workers, map_replicas
from .params import ModelParams

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeFailure(RuntimeError):
    """Raised by a runner after writing whatever partial output it has."""


def _params(cfg, L=None, require_odd=True):
    try:
        return ModelParams(cfg["d"], cfg["lambda"], cfg.get("L", 15) if L is None else L,
                           require_odd=require_odd)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_points(cfg, key):
    for p in cfg[key]:
        if p == [0]:
            continue
        if len(p) != cfg["d"]:
            raise ConfigError(f"{key}: point {p} has {len(p)} coordinates, expected d={cfg['d']}")
    cfg[key] = [[0] * cfg["d"] if p == [0] else p for p in cfg[key]]


# ------------------------------------------------------------------ rw

def run_rw(cfg, bundle, workers):
    from .rw import build_tables

    p = _params(cfg)
    if p.d < 3:
        raise ConfigError(f"d: the walk is recurrent for d={p.d}; need d >= 3")
    tab = build_tables(p, cfg["theta"], radius=cfg["radius"], tol=cfg["tol"])
    thetas = [float(th) for th in cfg["theta"] if th != 0]
    bundle.write_json("rw.json", {
        "gamma_d": tab.gamma_d, "h": tab.h, "c1": tab.c1,
        "points": tab.points, "multiplicity": tab.multiplicity,
        "green": tab.green, "phi": tab.phi,
        "resolvent": [{"theta": th, "values": tab.resolvent[th],
                       "outside_mass_bound": tab.tail_bounds[th] / th} for th in thetas],
        "truncation_radius": tab.truncation_radius, "quadrature_tolerance": tab.quadrature_tolerance,
    })
    gcols = ["g_theta"] if len(thetas) == 1 else [f"g_theta_{th:g}" for th in thetas]
    header = [f"x{j + 1}" for j in range(p.d)] + ["multiplicity", "green", "phi"] + gcols
    rows = []
    for i, pt in enumerate(tab.points):
        rows.append([int(v) for v in pt] + [int(tab.multiplicity[i]), tab.green[i], tab.phi[i]]
                    + [tab.resolvent[th][i] for th in thetas])
    bundle.write_csv("rw_tables.csv", header, rows)


# ------------------------------------------------------------ simulate

class _SimTask:
    def __init__(self, cfg, params, times):
        self.cfg, self.params, self.times = cfg, params, times

    def __call__(self, replica):
        from .sim import InitialCondition, Observer, init_state, run_until

        ic = InitialCondition(self.cfg["init"], burn_in=self.cfg["burn_in"])
        st = init_state(self.params, ic, self.cfg["seed"], replica)
        _, logs, _ = run_until(st, self.cfg["t_end"], [Observer(tuple(self.times), tuple(
            tuple(x) for x in self.cfg["observe"]))])
        return replica, logs[0].values, st.events, st.burn_in


def run_simulate(cfg, bundle, workers):
    from .sim import jackknife

    _check_points(cfg, "observe")
    p = _params(cfg)
    if cfg["dt"] is not None and cfg["dt"] <= 0:
        raise ConfigError("dt: must be > 0")
    t_end = cfg["t_end"]
    dt = cfg["dt"] or (t_end / 100 if t_end > 0 else 1.0)
    times = np.unique(np.append(np.arange(0.0, t_end, dt), t_end))
    sites = cfg["observe"]
    try:
        results = map_replicas(_SimTask(cfg, p, times), range(cfg["replicas"]), workers)
        failure = None
    except ReplicaFailure as exc:
        results, failure = exc.results, exc
    for r, vals, _, _ in results:
        rows = [[t, *sites[k], vals[i, k]] for i, t in enumerate(times) for k in range(len(sites))]
        bundle.write_csv(f"trajectories/{r}.csv",
                         ["time"] + [f"x{j + 1}" for j in range(p.d)] + ["eta"], rows)
    doc = {"times": times, "sites": sites,
           "replicas": [{"replica": r, "events": ev, "burn_in": b} for r, _, ev, b in results]}
    if len(results) >= 2:
        vals = np.stack([v for _, v, _, _ in results])  # (rep, time, site)
        m1, s1 = jackknife(vals.mean(axis=2))
        m2, s2 = jackknife((vals**2).mean(axis=2))
        doc.update(mean=m1, mean_se=s1, second_moment=m2, second_moment_se=s2)
    bundle.write_json("moments.json", doc)
    if failure is not None:
        raise RuntimeFailure(str(failure))


# ------------------------------------------------------------- moments

def run_moments(cfg, bundle, workers):
    from . import moments as mo

    _check_points(cfg, "x")
    p = _params(cfg)
    kind = cfg["kernel"]
    kernel = None
    if kind in ("auto", "pair"):
        try:
            kernel = mo.build_pair_kernel(p, cfg["box_radius"])
        except mo.SizeError as exc:
            if kind == "pair":
                raise ConfigError(f"box_radius: {exc}") from None
    if kernel is None:
        geometry = "classes" if kind == "classes" else "box"
        kernel = mo.build_difference_kernel(p, cfg["box_radius"], geometry)
    d = p.d
    if kernel.kind == "pair":
        cols = [f"x{j + 1}" for j in range(d)] + [f"y{j + 1}" for j in range(d)]
    else:
        cols = [f"z{j + 1}" for j in range(d)] + (["multiplicity"] if kernel.multiplicity is not None else [])
    rows, out = [], []
    for t in cfg["t"]:
        for x in cfg["x"]:
            try:
                res = mo.qhat_series(kernel, mo.source_key(kernel, x), t)
            except KeyError as exc:
                raise ConfigError(f"x: {exc.args[0]}") from None
            b = mo.moment_bound(kernel, res)
            out.append({"t": t, "x": x, "value": b.value, "lower": b.lower, "upper": b.upper,
                        "error_bound": b.error_bound, "escaped": b.escaped,
                        "series_tail_bound": b.tail_bound, "n_max": res.n_max})
            label = ",".join(str(v) for v in x)
            for i in np.flatnonzero(res.values):
                pt = [int(v) for v in np.ravel(kernel.points[i])]
                extra = [int(kernel.multiplicity[i])] if kernel.multiplicity is not None else []
                rows.append([t, label, *pt, *extra, res.values[i]])
    bundle.write_csv("qhat.csv", ["t", "x"] + cols + ["value"], rows)
    bundle.write_json("second_moments.json", {
        "kernel": kernel.kind, "geometry": kernel.geometry, "box_radius": kernel.box_radius,
        "states": kernel.n_states, "rowmax": kernel.rowmax, "moments": out})


# ----------------------------------------------------------------- clt

def clt_config(cfg):
    from .campaign import CltConfig

    try:
        return CltConfig(d=cfg["d"], lam=cfg["lambda"], L=cfg["L"], N=tuple(cfg["N"]),
                         times=tuple(cfg["times"]), replicas=cfg["replicas"], seed=cfg["seed"],
                         burn_in=cfg["burn_in"], origins=cfg["origins"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_clt(bundle, ccfg, results, c1, resamples):
    from .campaign import QUANTITIES, SPATIAL, separated_origins, summarize

    origins = separated_origins(ccfg.L, ccfg.d, ccfg.origins)
    rows, srows = [], []
    for res in results:
        for i, N in enumerate(ccfg.N):
            for j, t in enumerate(ccfg.times):
                for k, o in enumerate(origins):
                    rows.append([res.replica, t, *res.samples[i, j, :, k], N,
                                 ",".join(str(int(v)) for v in o)])
                srows.append([res.replica, N, t, *res.spatial[i, j]])
    bundle.write_csv("clt_samples.csv", ["replica", "t", *QUANTITIES, "N", "origin"], rows)
    bundle.write_csv("clt_spatial.csv", ["replica", "N", "t", *[f"mean_{s}" for s in SPATIAL]], srows)
    report = {"c1": c1, "exploratory": ccfg.d < 5, "replicas_completed": len(results),
              "overflowed": [r.replica for r in results if r.status != "ok"],
              "events": int(sum(r.events for r in results))}
    ok = [r for r in results if r.status == "ok"]
    if ok and math.isfinite(c1):
        report.update(summarize(ccfg, ok, c1, resamples=resamples, seed=ccfg.seed).to_dict())
    bundle.write_json("clt_report.json", report)


def run_clt(cfg, bundle, workers):
    from .campaign import cache_path, run_campaign
    from .rw import clt_constant

    ccfg = clt_config(cfg)
    p = ccfg.params
    try:
        c1 = clt_constant(p)
    except ValueError:
        c1 = float("nan")  # d < 5 or subcritical: exploratory output only
    cache = None if cfg["cache"] is None else cache_path(cfg["cache"], ccfg)
    try:
        results = run_campaign(ccfg, workers, cache)
        failure = None
    except ReplicaFailure as exc:
        results, failure = exc.results, exc
    write_clt(bundle, ccfg, results, c1, cfg["resamples"])
    if failure is not None:
        raise RuntimeFailure(str(failure))


RUNNERS = {"rw": run_rw, "simulate": run_simulate, "moments": run_moments, "clt": run_clt}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    g = glob.add_argument_group("global options")
    g.add_argument("--seed", type=str, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default nbcpp-out)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="worker processes (default $NBCPP_THREADS, else all CPUs)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with flat key-value settings")
    top = argparse.ArgumentParser(prog="nbcpp", parents=[glob],
                                  description="Normalized binary contact path process toolkit")
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = top.add_subparsers(dest="subcommand", required=True)
    for name, fields in SCHEMAS.items():
        sp = sub.add_parser(name, parents=[glob])
        for key, f in fields.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                            metavar=f.metavar or key.upper(), help=f.help, choices=f.choices)
    return top


def parse_config(argv, parser=None):
    """Return (subcommand, resolved config, out dir, workers)."""
    parser = parser or build_parser()
    ns = vars(parser.parse_args(argv))
    sub = ns.pop("subcommand")
    out = ns.pop("out", "nbcpp-out")
    threads = ns.pop("threads", None)
    path = ns.pop("config", None)
    file_values = load_file(path) if path else {}
    for key in ("out", "threads"):
        if key in file_values:
            v = file_values.pop(key)
            if key == "out" and out == "nbcpp-out":
                out = v
            if key == "threads" and threads is None:
                threads = v
    cfg = resolve(sub, file_values, ns)
    if threads is not None and int(threads) < 1:
        raise ConfigError("threads: must be >= 1")
    workers = int(threads) if threads is not None else default_workers()
    return sub, cfg, out, workers


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        sub, cfg, out, workers = parse_config(argv)
    except ConfigError as exc:
        print(f"nbcpp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"nbcpp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    bundle = Bundle(out, sub, cfg, digest({"subcommand": sub, **cfg}))
    try:
        RUNNERS[sub](cfg, bundle, workers)
    except ConfigError as exc:
        bundle.fail(f"config error: {exc}")
        print(f"nbcpp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        bundle.fail("interrupted")
        print("nbcpp: interrupted; partial output flagged INCOMPLETE", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        bundle.fail(f"{type(exc).__name__}: {exc}")
        print(f"nbcpp: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    bundle.finish(threads=workers)
    print(os.path.abspath(out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
