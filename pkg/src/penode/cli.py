"""Command-line entry point: ``penode {nodes,simulate,train,sweep,bench-callbacks}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collocation import scheme
from .mesh import build_equidistant
from .problems.common import save_data, write_csv
from .svgplot import write_chart
from .transcription import default_threads

EXIT_OK, EXIT_ITER, EXIT_FAIL, EXIT_INPUT = 0, 2, 3, 4
_STATUS_CODES = {"optimal": EXIT_OK, "acceptable": EXIT_OK, "max_iter": EXIT_ITER}


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the bad-input code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@dataclass
class RunReport:
    problem: str
    config: dict
    status: str
    message: str = ""
    iterations: int = 0
    objective: float = float("nan")
    objective_history: list = field(default_factory=list)
    times: dict = field(default_factory=dict)
    threads: int = 1
    metrics: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return _STATUS_CODES.get(self.status, EXIT_FAIL)

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, "report.json")
        self.manifest.append(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, default=_json_default)
        return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


# --------------------------------------------------------------------------
# helpers


def _out_dir(args) -> str:
    out = args.out or os.path.join("runs", f"{args.command}-{getattr(args, 'problem', 'nodes')}")
    os.makedirs(out, exist_ok=True)
    return out


def _load_overrides(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("config file must hold a JSON object")
    return data


def _make_config(cls, overrides: dict, **flags):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    values = dict(overrides)
    values.update({k: v for k, v in flags.items() if v is not None})
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _vdp_config(args):
    from .problems.vdp import VdpConfig
    return _make_config(VdpConfig, _load_overrides(args.config), sigma=args.sigma, lam=args.lam,
                        intervals=args.intervals, stages=args.stages)


def _qvm_config(args):
    from .problems.qvm import QvmConfig
    base = {"horizon": 42.0, "intervals": 2500} if args.full_scale else {}
    base.update(_load_overrides(args.config))
    return _make_config(QvmConfig, base, noise=args.sigma, intervals=args.intervals, stages=args.stages)


def _history_csv(path, history):
    keys = ("iter", "objective", "inf_pr", "inf_du", "mu", "alpha_pr", "delta_w")
    write_csv(path, {k: [h.get(k, np.nan) for h in history] for k in keys})


def _solver_overrides(args) -> dict:
    out = {}
    if args.max_iter is not None:
        out["max_iterations"] = args.max_iter
    if args.tol is not None:
        out["tol"] = args.tol
    if args.threads is not None:
        out["threads"] = args.threads
    return out


def _check_positive(args):
    for name in ("intervals", "stages", "max_iter", "threads", "runs"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise InputError(f"--{name.replace('_', '-')} must be at least 1")
    for name in ("sigma", "tol", "lam"):
        v = getattr(args, name, None)
        if v is not None and (not np.isfinite(v) or v < 0 or (name != "sigma" and v == 0)):
            raise InputError(f"--{name} has an invalid value")


# --------------------------------------------------------------------------
# commands


def cmd_nodes(args) -> int:
    sch = scheme(args.stages or 5)
    out = _out_dir(args) if args.out else None
    cols = {"node": sch.nodes, "weight": sch.weights}
    if out:
        write_csv(os.path.join(out, "nodes.csv"), cols)
    print("node,weight")
    for c, b in zip(sch.nodes, sch.weights):
        print(f"{c:.17g},{b:.17g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulate import ode_solve
    out = _out_dir(args)
    manifest = []
    if args.problem == "vdp":
        from .problems.vdp import reference_model
        cfg = _vdp_config(args)
        horizon = args.horizon or cfg.horizon
        n = int(round(cfg.intervals * horizon / cfg.horizon))
        sim = ode_solve(reference_model(cfg.mu), [], np.array(cfg.x0),
                        build_equidistant(0.0, horizon, n, cfg.stages))
        cols = {"time": sim.times, "x": sim.states[:, 0], "y": sim.states[:, 1]}
    else:
        from .problems.qvm import STATE_NAMES, generate_qvm_data, road_for
        cfg = _qvm_config(args)
        if args.horizon:
            cfg = dataclasses.replace(cfg, horizon=args.horizon,
                                      intervals=max(1, int(round(cfg.intervals * args.horizon / cfg.horizon))))
        road = road_for(cfg, args.seed, road_class=args.road_class)
        data = generate_qvm_data(cfg, args.seed, road)
        path = os.path.join(out, "data.csv")
        save_data(data, path)
        manifest.append(path)
        cols = {"time": data.times, **{k: data.channels[k] for k in (*STATE_NAMES, "a_b", "a_w", "u")}}
    path = os.path.join(out, "trajectory.csv")
    write_csv(path, cols)
    manifest.append(path)
    if args.svg:
        path = os.path.join(out, "trajectory.svg")
        names = [k for k in cols if k != "time"][:4]
        write_chart(path, {k: cols[k] for k in names}, cols["time"], title=f"{args.problem} simulation",
                    xlabel="t [s]")
        manifest.append(path)
    for p in manifest:
        print(p)
    return EXIT_OK


def _train_vdp(args, out):
    from .problems.vdp import (VdpConfig, default_options, generate_vdp_data, learned_trajectory,
                               reference_solution, train_vdp, vector_field_error)
    cfg = _vdp_config(args)
    mesh = build_equidistant(0.0, cfg.horizon, cfg.intervals, cfg.stages)
    data = generate_vdp_data(cfg, args.seed)
    res = train_vdp(cfg, seed=args.seed, mesh=mesh, data=data, threads=args.threads,
                    options=default_options(**_solver_overrides(args)))
    # evaluation always on the standard simulation grid
    ev = VdpConfig(**{**dataclasses.asdict(cfg), "intervals": 500, "stages": 5})
    metrics = {"parameters": int(res.params.size)}
    files = []
    sol = res.solution
    X = res.problem.states_of(sol.x)
    path = os.path.join(out, "solution.csv")
    write_csv(path, {"time": res.problem.nlp.times, "x": X[:, 0], "y": X[:, 1]})
    files.append(path)
    ref = reference_solution(ev)
    try:
        sim = learned_trajectory(ev, res.params)
        err = np.abs(sim.states - ref.states)
        metrics["trajectory_error"] = float(err.max())
        metrics["trajectory_error_y"] = float(err[:, 1].max())
        metrics["vector_field_error"] = vector_field_error(ev, res.params)
        learned = sim.states
    except Exception as exc:   # a diverging learned model is reported, not fatal
        metrics["simulation_error"] = str(exc)
        learned = np.full_like(ref.states, np.nan)
    path = os.path.join(out, "trajectory.csv")
    cols = {"time": ref.times, "x": learned[:, 0], "y": learned[:, 1],
            "x_ref": ref.states[:, 0], "y_ref": ref.states[:, 1]}
    write_csv(path, cols)
    files.append(path)
    if args.svg:
        path = os.path.join(out, "trajectory.svg")
        write_chart(path, {"x": cols["x"], "y": cols["y"], "x_ref": cols["x_ref"], "y_ref": cols["y_ref"]},
                    cols["time"], title="Van der Pol: learned vs reference", xlabel="t [s]")
        files.append(path)
    return cfg, res, metrics, files


def _train_qvm(args, out):
    from .problems.qvm import (STATE_NAMES, generate_qvm_data, road_for, solver_options,
                               surrogate_errors, surrogate_table, train_qvm)
    cfg = _qvm_config(args)
    strategy = args.strategy or ("III" if args.surrogate == "rational" else "II")
    if args.surrogate == "rational" and strategy != "III":
        raise InputError("rational surrogates are trained with strategy III")
    if args.surrogate == "nn" and strategy == "III":
        raise InputError("strategy III uses rational surrogates")
    road = road_for(cfg, args.seed)
    data = generate_qvm_data(cfg, args.seed, road)
    files = []
    path = os.path.join(out, "data.csv")
    save_data(data, path)
    files.append(path)
    res = train_qvm(cfg, strategy, args.seed, data, road,
                    solver_options(cfg, **_solver_overrides(args)), threads=args.threads)
    X = res.problem.states_of(res.solution.x)
    path = os.path.join(out, "solution.csv")
    write_csv(path, {"time": res.problem.nlp.times, **{k: X[:, i] for i, k in enumerate(STATE_NAMES)}})
    files.append(path)
    metrics = {"strategy": strategy, "parameters": int(res.params.size),
               "surrogates": surrogate_errors(cfg, res),
               "stages": [{"status": s.status, "iterations": s.iterations, "times": s.times}
                          for s in res.stages]}
    for name, (grid, got, ref) in surrogate_table(cfg, res).items():
        path = os.path.join(out, f"surrogate_{name}.csv")
        write_csv(path, {"input": grid, "learned": got, "true": ref})
        files.append(path)
        if args.svg:
            path = os.path.join(out, f"surrogate_{name}.svg")
            write_chart(path, {"learned": got, "true": ref}, grid, title=name, xlabel="input")
            files.append(path)
    return cfg, res, metrics, files


def cmd_train(args) -> int:
    out = _out_dir(args)
    run = _train_vdp if args.problem == "vdp" else _train_qvm
    cfg, res, metrics, files = run(args, out)
    sol = res.solution
    history = sol.history
    path = os.path.join(out, "iterations.csv")
    _history_csv(path, history)
    files.append(path)
    path = os.path.join(out, "params.csv")
    write_csv(path, {"index": np.arange(res.params.size), "value": res.params})
    files.append(path)
    report = RunReport(problem=args.problem, config=dataclasses.asdict(cfg), status=sol.status,
                       message=sol.message, iterations=sol.iterations, objective=sol.objective,
                       objective_history=[h["objective"] for h in history], times=res.times,
                       threads=args.threads or default_threads(), metrics=metrics, manifest=files)
    report.write(out)
    print(f"status {sol.status} iterations {sol.iterations} objective {sol.objective:.6e} "
          f"time {res.times['total']:.1f}s -> {out}")
    return report.exit_code


def cmd_sweep(args) -> int:
    from .problems.sweep import sensitivity_sweep, write_sweep
    from .problems.vdp import default_options
    if args.problem != "vdp":
        raise InputError("sweeps are defined for the vdp problem")
    cfg = _vdp_config(args)
    out = _out_dir(args)
    seeds = list(range(args.seed, args.seed + args.runs))
    report = sensitivity_sweep(cfg, args.runs, seeds, options=default_options(**_solver_overrides(args)),
                               workers=args.workers)
    files = write_sweep(report, out)
    if args.svg:
        bands = report.bands()
        path = os.path.join(out, "sweep_bands.svg")
        write_chart(path, {"reference": report.reference, **bands}, report.times,
                    title=f"sweep sigma={cfg.sigma}", xlabel="t [s]", ylabel="y")
        files.append(path)
    print(f"converged {report.converged}/{len(report.runs)} -> {out}")
    return EXIT_OK


def bench_callbacks(nlp, z, threads: int, repeat: int = 3) -> dict:
    """Best-of-``repeat`` wall time of a full derivative evaluation per thread count."""
    y = np.random.default_rng(0).normal(size=nlp.m)
    rows = {}
    for th in sorted({1, threads}):
        best, ref = np.inf, None
        for _ in range(repeat):
            t = time.perf_counter()
            ev = nlp.eval_all(z, y, 1.0, threads=th)
            best = min(best, time.perf_counter() - t)
            ref = ev
        rows[th] = (best, ref)
    base_t, base = rows[1]
    out = {}
    for th, (t, ev) in rows.items():
        same = all(np.array_equal(np.asarray(ev[k]), np.asarray(base[k])) for k in base)
        out[th] = {"seconds": t, "speedup": base_t / t, "identical": bool(same)}
    return out


def cmd_bench(args) -> int:
    from .problems.qvm import build_qvm_training, generate_qvm_data, road_for
    cfg = _qvm_config(args)
    threads = args.threads or default_threads()
    road = road_for(cfg, args.seed)
    data = generate_qvm_data(cfg, args.seed, road)
    prob = build_qvm_training(cfg, data, road, "nn", args.seed, threads=1)
    res = bench_callbacks(prob.nlp, prob.initial_guess, threads, args.repeat)
    out = _out_dir(args)
    path = os.path.join(out, "bench_callbacks.csv")
    ths = sorted(res)
    write_csv(path, {"threads": ths, "seconds": [res[t]["seconds"] for t in ths],
                     "speedup": [res[t]["speedup"] for t in ths],
                     "identical": [float(res[t]["identical"]) for t in ths]})
    print("threads,seconds,speedup,identical")
    for t in ths:
        r = res[t]
        print(f"{t},{r['seconds']:.4f},{r['speedup']:.3f},{r['identical']}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="penode", description="Train physics-enhanced neural ODEs by direct collocation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, problem=True):
        if problem:
            sp.add_argument("problem", choices=("vdp", "qvm"))
        sp.add_argument("--intervals", type=int)
        sp.add_argument("--stages", type=int)
        sp.add_argument("--sigma", type=float, help="data noise (vdp: absolute, qvm: relative to channel std)")
        sp.add_argument("--lambda", dest="lam", type=float, help="vdp parameter regularization")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, help="callback threads (default from PENODE_THREADS)")
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--strategy", choices=("I", "II", "III"))
        sp.add_argument("--surrogate", choices=("nn", "rational"), default=None)
        sp.add_argument("--out")
        sp.add_argument("--full-scale", action="store_true", help="qvm: 42 s horizon on 2500 intervals")
        sp.add_argument("--config", help="JSON file with problem config overrides")
        sp.add_argument("--svg", action="store_true", help="also write SVG charts")

    sp = sub.add_parser("nodes", help="print fLGR nodes and Radau weights")
    sp.add_argument("--stages", type=int, default=5)
    sp.add_argument("--out")
    sp = sub.add_parser("simulate", help="simulate a reference model")
    common(sp)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--road-class", default=None)
    sp = sub.add_parser("train", help="train a benchmark problem")
    common(sp)
    sp = sub.add_parser("sweep", help="sensitivity sweep over random seeds")
    common(sp)
    sp.add_argument("--runs", type=int, default=20)
    sp.add_argument("--workers", type=int, default=1)
    sp = sub.add_parser("bench-callbacks", help="time callbacks single- vs multi-threaded")
    common(sp, problem=False)
    sp.add_argument("--repeat", type=int, default=3)
    return p


COMMANDS = {"nodes": cmd_nodes, "simulate": cmd_simulate, "train": cmd_train, "sweep": cmd_sweep,
            "bench-callbacks": cmd_bench}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_positive(args)
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"penode: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
