"""Command-line entry point: ``persmon <command> --config FILE --out DIR``.

Every flag can also come from an ``SP_``-prefixed environment variable
(``SP_SEED=3`` for ``--seed 3``); explicit flags win.  Exit codes: 0 success,
2 configuration error, 3 constraint violation, 4 enumeration cap exceeded.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, experiments, ipa
from .config_io import (RunConfig, dump_json, load_config, read_tree, to_json, write_events_json,
                        write_trace_csv)
from .graph_scheduler import (AperiodicScheduleError, EnumerationCapError, export_mip, extend_periodic,
                              solve)
from .hybrid_sim import TrajectoryParams, cost, run
from .model import ConfigError
from .optimizer import initial_params, optimize, prop1_violation
from .potential_field import PotentialConfig

EXIT_OK, EXIT_CONFIG, EXIT_CONSTRAINT, EXIT_CAP = 0, 2, 3, 4


class ConstraintViolation(RuntimeError):
    pass


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return __version__


# --------------------------------------------------------------------------- arguments


def _env(name, default=None):
    return os.environ.get("SP_" + name.upper().replace("-", "_"), default)


def _env_flag(name) -> bool:
    return str(_env(name, "")).strip().lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=_env("config"), help="JSON or TOML run configuration")
    common.add_argument("--out", default=_env("out"), help="output directory")
    common.add_argument("--seed", type=int, default=_env("seed"), help="master seed override")
    common.add_argument("--threads", type=int, default=int(_env("threads", 1)),
                        help="worker processes for independent evaluations")
    common.add_argument("--window", type=float, default=_env("window"),
                        help="scheduling window (seconds) before periodic extension")
    common.add_argument("--excitation", action="store_true", default=_env_flag("excitation"),
                        help="add the decaying potential-field term")
    common.add_argument("--iterations", type=int, default=_env("iterations"),
                        help="maximum descent iterations")
    common.add_argument("--export-mip", action="store_true", default=_env_flag("export_mip"),
                        help="also write the assignment model in LP format")
    common.add_argument("--params", default=_env("params"),
                        help="JSON/TOML file with theta and omega matrices")
    common.add_argument("--dt", type=float, default=_env("dt"),
                        help="add a uniform time grid to the trace CSV")

    p = argparse.ArgumentParser(prog="persmon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate one trajectory program")
    sub.add_parser("ipa-optimize", parents=[common], help="gradient descent on switching points and dwells")
    sub.add_parser("graph-schedule", parents=[common], help="visit-sequence scheduler")
    sub.add_parser("compare", parents=[common], help="run both solvers and report the gap")
    g = sub.add_parser("gradient-check", parents=[common], help="IPA gradient against finite differences")
    g.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    r = sub.add_parser("recipe", help="print the config of a reference run")
    r.add_argument("name", choices=experiments.RECIPES)
    return p


def apply_overrides(rc: RunConfig, args) -> tuple[RunConfig, dict]:
    """Fold CLI/environment overrides into the run config; returns what changed."""
    changed = {}
    d = rc.descent
    if args.seed is not None:
        d = replace(d, seed=int(args.seed))
        if d.random is not None:
            d = replace(d, random=replace(d.random, seed=int(args.seed)))
        changed["seed"] = int(args.seed)
    if args.iterations is not None:
        d = replace(d, max_iterations=int(args.iterations))
        changed["iterations"] = int(args.iterations)
    if args.excitation and d.excitation is None:
        d = replace(d, excitation=PotentialConfig())
        changed["excitation"] = True
    sc = rc.scheduler
    if args.window is not None:
        sc = replace(sc, window=float(args.window))
        changed["window"] = float(args.window)
    return replace(rc, descent=d, scheduler=sc), changed


def _load_params(path, rc: RunConfig) -> TrajectoryParams:
    if path:
        tree = read_tree(path)
        tree = tree.get("params", tree)
        try:
            p = TrajectoryParams(np.array(tree["theta"], dtype=float), np.array(tree["omega"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"params file needs theta and omega matrices: {exc}") from exc
        p.validate(rc.mission)
        return p
    if rc.params is not None:
        return rc.params
    return initial_params(rc.mission, rc.gamma)


# --------------------------------------------------------------------------- output


class Outputs:
    """Output directory plus the list of files written, for the manifest."""

    def __init__(self, root):
        self.root = Path(root) if root else None
        self.files: list[str] = []
        if self.root:
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path | None:
        if self.root is None:
            return None
        self.files.append(name)
        return self.root / name

    def json(self, name, obj):
        p = self.path(name)
        if p is not None:
            dump_json(obj, p)

    def trace(self, prefix, trace, dt=None):
        p = self.path(f"{prefix}trace.csv")
        if p is not None:
            write_trace_csv(trace, p, dt)
            write_events_json(trace, self.path(f"{prefix}events.json"))

    def manifest(self, command, rc, changed, seeds, wall):
        if self.root is None:
            return
        man = {
            "command": command,
            "config_digest": rc.digest,
            "overrides": changed,
            "seeds": seeds,
            "tool_version": _version(),
            "wall_clock": wall,
            "outputs": sorted(self.files),
        }
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".manifest", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(to_json(man))
        os.replace(tmp, self.root / "manifest.json")


def _seeds(rc: RunConfig) -> list[int]:
    seeds = [int(rc.descent.seed)]
    if rc.descent.random is not None:
        seeds.append(int(rc.descent.random.seed))
    return seeds


# --------------------------------------------------------------------------- commands


def cmd_simulate(rc, args, out: Outputs) -> dict:
    params = _load_params(args.params, rc)
    trace = run(params, rc.mission)
    out.trace("", trace, args.dt)
    summary = {"J1": trace.J1, "events": len(trace.events),
               "sensing_events": sum(e.kind in ("enter", "exit") for e in trace.events),
               "no_cross_violations": len(trace.violations)}
    out.json("summary.json", summary)
    if trace.violations:
        raise ConstraintViolation(f"agents cross {len(trace.violations)} time(s)")
    return summary


def _ipa(rc, args):
    params = None
    if args.params or rc.params is not None or rc.gamma:
        params = _load_params(args.params, rc)
    return optimize(params, rc.mission, rc.descent)


def cmd_ipa_optimize(rc, args, out: Outputs) -> dict:
    rep = _ipa(rc, args)
    out.json("report.json", rep.as_dict(timing=False))
    p = out.path("costs.csv")
    if p is not None:
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("iteration,J,J1,grad_norm,step\n")
            for h in rep.history:
                fh.write(",".join(format(float(h[k]), ".12g") for k in ("iteration", "J", "J1", "grad_norm", "step"))
                         + "\n")
    out.trace("", rep.trace, args.dt)
    summary = {"J1": rep.J1, "status": rep.status, "iterations": len(rep.history) - 1,
               "prop1_violation": prop1_violation(rep.trace)}
    if rep.trace.violations:
        raise ConstraintViolation("optimised trajectory violates the no-cross constraint")
    return summary


def _graph(rc, args):
    mission = rc.mission
    sc = rc.scheduler
    window = sc.window or mission.horizon
    sched = solve(mission, horizon=min(window, mission.horizon), max_steps=sc.max_steps,
                  refine_top=sc.refine_top, beam=sc.beam, cap=sc.cap, workers=max(1, args.threads))
    if window < mission.horizon:
        sched = extend_periodic(sched, mission.horizon, sc.periodic_tol)
    return sched


def cmd_graph_schedule(rc, args, out: Outputs) -> dict:
    if args.export_mip:
        p = out.path("model.lp")
        if p is not None:
            window = rc.scheduler.window or rc.mission.horizon
            p.write_text(export_mip(rc.mission, rc.scheduler.max_steps, window))
    sched = _graph(rc, args)
    out.json("schedule.json", sched.as_dict())
    trace = sched.simulate()
    out.trace("", trace, args.dt)
    if trace.violations:
        raise ConstraintViolation("schedule violates the no-cross constraint")
    return {"cost": sched.cost, "window": rc.scheduler.window or rc.mission.horizon}


def cmd_compare(rc, args, out: Outputs) -> dict:
    rep = _ipa(rc, args)
    sched = _graph(rc, args)
    gap = abs(rep.J1 - sched.cost) / sched.cost if sched.cost else 0.0
    report = {"ipa": {"J1": rep.J1, "status": rep.status, "theta": rep.params.theta,
                      "omega": rep.params.omega},
              "graph": sched.as_dict(), "relative_gap": gap}
    out.json("compare.json", report)
    out.trace("ipa_", rep.trace, args.dt)
    out.trace("graph_", sched.simulate(), args.dt)
    return {"ipa": rep.J1, "graph": sched.cost, "relative_gap": gap}


def gradient_table(params, mission, h=1e-5):
    """Rows of (name, agent, index, ipa, fd, abs_err, rel_err)."""
    trace = run(params, mission)
    g = ipa.gradient(trace)
    v = params.as_vector()
    N, G = params.N, params.gamma
    rows = []
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        lo = v - e
        if k >= N * G and lo[k] < 0:   # dwell at zero: one-sided
            lo = v
        hi = TrajectoryParams.from_vector(v + e, N, G)
        fd = (cost(hi, mission) - cost(TrajectoryParams.from_vector(lo, N, G), mission)) / (v + e - lo)[k]
        kind = "theta" if k < N * G else "omega"
        j, l = divmod(k % (N * G), G)
        err = abs(g[k] - fd)
        rows.append((kind, j + 1, l + 1, float(g[k]), float(fd), err, err / max(abs(fd), 1e-12)))
    return rows


def cmd_gradient_check(rc, args, out: Outputs) -> dict:
    params = _load_params(args.params, rc)
    rows = gradient_table(params, rc.mission, args.h)
    lines = ["parameter,agent,index,ipa,fd,abs_err,rel_err"]
    lines += [f"{k},{j},{l}," + ",".join(format(x, ".12g") for x in vals) for k, j, l, *vals in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    p = out.path("gradient_check.csv")
    if p is not None:
        p.write_text(text)
    worst = max((r[5] for r in rows), default=0.0)
    return {"components": len(rows), "max_abs_err": worst}


COMMANDS = {
    "simulate": cmd_simulate,
    "ipa-optimize": cmd_ipa_optimize,
    "graph-schedule": cmd_graph_schedule,
    "compare": cmd_compare,
    "gradient-check": cmd_gradient_check,
}


def _fail(code, exc, out_dir):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, EnumerationCapError):
        err["count"] = exc.count
        err["cap"] = exc.cap
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    if out_dir:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            dump_json(err, Path(out_dir) / "error.json")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "recipe":
        sys.stdout.write(to_json(experiments.recipe(args.name)))
        return EXIT_OK
    t0 = time.perf_counter()
    try:
        if not args.config:
            raise ConfigError("--config (or SP_CONFIG) is required")
        rc, changed = apply_overrides(load_config(args.config), args)
        out = Outputs(args.out)
        summary = COMMANDS[args.command](rc, args, out)
        if args.command != "simulate":
            out.json("summary.json", summary)
        out.manifest(args.command, rc, changed, _seeds(rc), time.perf_counter() - t0)
    except (ConstraintViolation, AperiodicScheduleError) as exc:
        return _fail(EXIT_CONSTRAINT, exc, args.out)
    except EnumerationCapError as exc:
        return _fail(EXIT_CAP, exc, args.out)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(EXIT_CONFIG, exc, args.out)
    if args.command != "gradient-check":
        sys.stdout.write(json.dumps(json.loads(to_json(summary)), sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
