"""Shared scaffolding for benchmark training problems."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..mesh import Mesh
from ..simulate import ode_solve
from ..solver import Solution, SolverOptions, solve
from ..transcription import SparseNLP, TrajectoryData, transcribe


@dataclass
class TrainingProblem:
    """A transcribed training problem together with its initial guess."""

    name: str
    model: object
    mesh: Mesh
    data: Optional[TrajectoryData]
    nlp: SparseNLP
    initial_guess: np.ndarray
    surrogates: dict = field(default_factory=dict)   # name -> (surrogate, param offset)
    meta: dict = field(default_factory=dict)

    def params_of(self, z) -> np.ndarray:
        return self.nlp.split(z)[1].copy()

    def states_of(self, z) -> np.ndarray:
        return self.nlp.split(z)[0].copy()


@dataclass
class TrainingResult:
    problem: TrainingProblem
    solution: Solution
    params: np.ndarray
    stages: list = field(default_factory=list)   # earlier solves (e.g. pre-training)

    @property
    def times(self) -> dict:
        """Wall-times summed over all solves of this result."""
        keys = ("total", "solver_core", "callbacks")
        out = {k: self.solution.times.get(k, 0.0) for k in keys}
        for s in self.stages:
            for k in keys:
                out[k] += s.times.get(k, 0.0)
        return out


def make_problem(name, model, mesh, data, states, params, threads=None, **meta) -> TrainingProblem:
    nlp = transcribe(model, mesh, data=data, threads=threads)
    z0 = nlp.pack(states, params)
    return TrainingProblem(name, model, mesh, data, nlp, z0, meta=meta)


def simulated_guess(model, params, x0, mesh):
    """State guesses from simulating ``model`` with ``params`` on ``mesh``."""
    return ode_solve(model, params, x0, mesh).states


def train(problem: TrainingProblem, options: Optional[SolverOptions] = None) -> TrainingResult:
    sol = solve(problem.nlp, problem.initial_guess, options or SolverOptions())
    return TrainingResult(problem, sol, problem.params_of(sol.x))


def surrogate_curve(surrogate, params, offset, inputs) -> np.ndarray:
    p = np.asarray(params, dtype=float)[offset:offset + surrogate.n_params]
    return np.asarray(surrogate([np.asarray(inputs, dtype=float)], list(p)), dtype=float)


def write_csv(path, columns: dict) -> None:
    """UTF-8 CSV with a header row; ``columns`` maps names to equal-length arrays."""
    names = list(columns)
    table = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="",
               fmt="%.12g", encoding="utf-8")


def read_csv(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        names = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: table[:, i] for i, k in enumerate(names)}


def save_data(data: TrajectoryData, path) -> None:
    write_csv(path, {"time": data.times, **data.channels})


def load_data(path) -> TrajectoryData:
    cols = read_csv(path)
    t = cols.pop("time")
    return TrajectoryData(t, cols)
