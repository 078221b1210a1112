"""Sensitivity sweep: repeated VdP trainings from independent random seeds."""
from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..mesh import build_equidistant
from ..simulate import SimulationError, ode_solve
from ..solver import SolverOptions
from .common import write_csv
from .vdp import VdpConfig, default_options, node_model, reference_solution, train_vdp

PERCENTILES = (10, 25, 50, 75, 90)


@dataclass
class RunOutcome:
    seed: int
    status: str
    iterations: int
    wall_time: float
    error: float                 # max |y_learned - y_ref| on the training horizon
    converged: bool
    message: str = ""
    y: Optional[np.ndarray] = None   # learned y on the report grid (NaN where undefined)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("y")
        d["error"] = None if not np.isfinite(self.error) else float(self.error)
        return d


@dataclass
class SweepReport:
    sigma: float
    lam: float
    threshold: float
    times: np.ndarray
    reference: np.ndarray
    runs: list = field(default_factory=list)

    @property
    def converged(self) -> int:
        return sum(r.converged for r in self.runs)

    @property
    def fraction_converged(self) -> float:
        return self.converged / len(self.runs) if self.runs else 0.0

    def bands(self) -> dict:
        """Percentiles of y(t) over runs whose trajectory is defined at t."""
        Y = np.array([r.y for r in self.runs if r.y is not None])
        out = {}
        for q in PERCENTILES:
            if Y.size:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)   # all-NaN columns
                    out[f"p{q}"] = np.nanpercentile(Y, q, axis=0)
            else:
                out[f"p{q}"] = np.full(self.times.shape, np.nan)
        return out

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "lambda": self.lam, "threshold": self.threshold,
                "runs": len(self.runs), "converged": self.converged,
                "fraction_converged": self.fraction_converged,
                "horizon": float(self.times[-1]),
                "per_run": [r.summary() for r in self.runs]}


def _report_grid(config: VdpConfig, horizon: float, step: float):
    n = int(round(horizon / step))
    return build_equidistant(0.0, horizon, n, config.stages)


def _one_run(config: VdpConfig, seed: int, horizon: float, step: float, threshold: float,
             options: SolverOptions, intervals: Optional[int]) -> RunOutcome:
    cfg = config if intervals is None else VdpConfig(**{**asdict(config), "intervals": intervals})
    t_start = time.perf_counter()
    mesh = _report_grid(cfg, horizon, step)
    grid = mesh.boundaries
    y = np.full(grid.shape, np.nan)
    try:
        res = train_vdp(cfg, seed=seed, options=options)
    except Exception as exc:   # a failed run is recorded, the sweep goes on
        return RunOutcome(seed, "error", 0, time.perf_counter() - t_start, np.inf, False, str(exc), y)
    sol = res.solution
    model, _ = node_model(cfg)
    message = sol.message
    try:
        sim = ode_solve(model, res.params, np.array(cfg.x0), mesh)
        y = sim.interpolate(grid)[:, 1]
    except SimulationError as exc:
        message = f"{message}; extended simulation failed: {exc}".strip("; ")
    ref = reference_solution(cfg, horizon, mesh.n_intervals).interpolate(grid)[:, 1]
    window = grid <= cfg.horizon + 1e-9
    err = float(np.max(np.abs(y[window] - ref[window]))) if np.all(np.isfinite(y[window])) else np.inf
    converged = bool(err <= threshold)
    y = np.where(np.isfinite(y) & (np.abs(y) < 1e6), y, np.nan)
    return RunOutcome(seed, sol.status, sol.iterations, time.perf_counter() - t_start, err,
                      converged, message, y)


def sensitivity_sweep(config: VdpConfig, runs: int = 20, seeds: Optional[Sequence[int]] = None,
                      horizon: float = 32.0, step: float = 0.05, threshold: float = 0.5,
                      options: Optional[SolverOptions] = None, intervals: Optional[int] = None,
                      workers: int = 1) -> SweepReport:
    """Train ``runs`` times (noisy data and initial guess drawn per seed) and simulate to ``horizon``.

    A run counts as converged when max |y - y_ref| <= ``threshold`` over the training
    horizon.  Results are ordered by seed, so aggregation does not depend on ``workers``.
    """
    if runs < 1:
        raise ValueError("a sweep needs at least one run")
    seeds = list(range(runs)) if seeds is None else [int(s) for s in seeds][:runs]
    if len(seeds) < runs:
        raise ValueError("fewer seeds than runs")
    options = options or default_options()
    args = [(config, s, horizon, step, threshold, options, intervals) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_run, *zip(*args)))
    else:
        outcomes = [_one_run(*a) for a in args]
    mesh = _report_grid(config, horizon, step)
    ref = reference_solution(config, horizon, mesh.n_intervals).interpolate(mesh.boundaries)[:, 1]
    return SweepReport(config.sigma, config.regularization, threshold, mesh.boundaries, ref, outcomes)


def write_sweep(report: SweepReport, out_dir) -> list:
    """JSON summary, percentile-band CSV and one trajectory CSV per run; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    path = os.path.join(out_dir, "sweep_summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    paths.append(path)
    path = os.path.join(out_dir, "sweep_bands.csv")
    write_csv(path, {"time": report.times, "reference": report.reference, **report.bands()})
    paths.append(path)
    for r in report.runs:
        path = os.path.join(out_dir, f"run_seed{r.seed}.csv")
        write_csv(path, {"time": report.times, "y": r.y, "reference": report.reference})
        paths.append(path)
    return paths
