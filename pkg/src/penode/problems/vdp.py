"""Van der Pol oscillator learned as a pure neural ODE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..mesh import Mesh, build_equidistant
from ..model import DynamicModel, FeedForwardNet
from ..simulate import ode_solve
from ..solver import SolverOptions
from ..transcription import TrajectoryData
from .common import TrainingProblem, TrainingResult, make_problem, train


@dataclass
class VdpConfig:
    mu: float = 1.0
    x0: tuple = (2.0, 0.0)
    horizon: float = 7.0
    data_intervals: int = 200
    sigma: float = 0.0
    lam: Optional[float] = None
    widths: tuple = (2, 5, 5, 1)
    activation: str = "sigmoid"
    intervals: int = 500
    stages: int = 5
    reference_refinement: int = 4

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise level must be non-negative")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("regularization must be positive")

    @property
    def regularization(self) -> float:
        """Explicit value, else 1e-3 for heavy noise (sigma >= 0.5) and 1e-4 otherwise."""
        if self.lam is not None:
            return float(self.lam)
        return 1e-3 if self.sigma >= 0.5 else 1e-4


def reference_model(mu: float = 1.0) -> DynamicModel:
    def dynamics(x, u, t, p):
        return [x[1], mu * x[1] * (1.0 - x[0] * x[0]) - x[0]]

    return DynamicModel(d_x=2, d_p=0, dynamics=dynamics, state_names=("x", "y"), name="vdp")


def reference_solution(config: VdpConfig, horizon: Optional[float] = None, intervals: Optional[int] = None):
    horizon = config.horizon if horizon is None else horizon
    if intervals is None:
        intervals = int(round(config.intervals * horizon / config.horizon))
    mesh = build_equidistant(0.0, horizon, intervals, config.stages)
    return ode_solve(reference_model(config.mu), [], np.array(config.x0), mesh)


def _streams(seed):
    data_ss, init_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(init_ss)


def generate_vdp_data(config: VdpConfig, seed: int = 0) -> TrajectoryData:
    """States on an equidistant grid of ``data_intervals`` intervals plus independent noise."""
    rng, _ = _streams(seed)
    # independent of the training mesh, so a spectral run sees the same data
    fine = build_equidistant(0.0, config.horizon, config.data_intervals * config.reference_refinement, 5)
    sim = ode_solve(reference_model(config.mu), [], np.array(config.x0), fine)
    t = np.linspace(0.0, config.horizon, config.data_intervals + 1)
    xs = sim.interpolate(t)
    noise = rng.normal(0.0, config.sigma, xs.shape) if config.sigma > 0 else np.zeros_like(xs)
    xs = xs + noise
    return TrajectoryData(t, {"x": xs[:, 0], "y": xs[:, 1]})


def node_model(config: VdpConfig, data: Optional[TrajectoryData] = None) -> tuple:
    """(model, nets): dx/dt = NN_x(x, y), dy/dt = NN_y(x, y) with the data-fit objective."""
    net = FeedForwardNet(tuple(config.widths), config.activation)
    n = net.n_params
    lam = config.regularization
    x0 = np.array(config.x0, dtype=float)

    def dynamics(x, u, t, p):
        return [net(x, p[:n]), net(x, p[n:2 * n])]

    def lagrange(x, u, t, p, d):
        return (d["x"] - x[0]) ** 2 + (d["y"] - x[1]) ** 2

    def mayer(x0_, xf, p):
        return lam * ad.nsum([pi * pi for pi in p])

    def boundary(x0_, xf, p):
        return [x0_[0] - x0[0], x0_[1] - x0[1]]

    model = DynamicModel(d_x=2, d_p=2 * n, dynamics=dynamics, lagrange=lagrange, mayer=mayer,
                         boundary=boundary, r_lower=np.zeros(2), r_upper=np.zeros(2),
                         state_names=("x", "y"), name="vdp-node")
    return model, {"nn_x": (net, 0), "nn_y": (net, n)}


def build_vdp_training(config: VdpConfig, data: TrajectoryData, mesh: Optional[Mesh] = None,
                       seed: int = 0, threads=None) -> TrainingProblem:
    """Constant state guesses at the initial condition, Glorot-uniform parameters."""
    _, rng = _streams(seed)
    mesh = mesh or build_equidistant(0.0, config.horizon, config.intervals, config.stages)
    model, nets = node_model(config, data)
    params = np.concatenate([net.init_params(rng) for net, _ in nets.values()])
    states = np.tile(np.array(config.x0, dtype=float), (mesh.node_count, 1))
    prob = make_problem("vdp", model, mesh, data, states, params, threads=threads,
                        sigma=config.sigma, lam=config.regularization, seed=seed)
    prob.surrogates = nets
    return prob


def default_options(**overrides) -> SolverOptions:
    opts = dict(max_iterations=200, tol=1e-7)
    opts.update(overrides)
    return SolverOptions(**opts)


def learned_trajectory(config: VdpConfig, params, horizon: Optional[float] = None,
                       intervals: Optional[int] = None):
    """Simulate the trained NODE from the true initial condition."""
    horizon = config.horizon if horizon is None else horizon
    if intervals is None:
        intervals = int(round(config.intervals * horizon / config.horizon))
    model, _ = node_model(config)
    mesh = build_equidistant(0.0, horizon, intervals, config.stages)
    return ode_solve(model, params, np.array(config.x0), mesh)


def trajectory_error(config: VdpConfig, params, horizon: Optional[float] = None,
                     intervals: Optional[int] = None) -> float:
    """max |learned - reference| over both states at the nodes of the simulation mesh."""
    ref = reference_solution(config, horizon, intervals)
    got = learned_trajectory(config, params, horizon, intervals)
    return float(np.max(np.abs(ref.states - got.states)))


def vector_field_error(config: VdpConfig, params, samples: int = 400) -> float:
    """Mean 2-norm error of the learned vector field along the reference trajectory."""
    ref = reference_solution(config)
    t = np.linspace(0.0, config.horizon, samples)
    xs = ref.interpolate(t)
    model, _ = node_model(config)
    true = reference_model(config.mu).dynamics([xs[:, 0], xs[:, 1]], [], t, [])
    got = model.dynamics([xs[:, 0], xs[:, 1]], [], t, list(params))
    diff = np.stack([np.asarray(a) - np.asarray(b) for a, b in zip(got, true)])
    return float(np.mean(np.linalg.norm(diff, axis=0)))


def train_vdp(config: VdpConfig, seed: int = 0, mesh: Optional[Mesh] = None,
              options: Optional[SolverOptions] = None, threads=None,
              data: Optional[TrajectoryData] = None) -> TrainingResult:
    data = generate_vdp_data(config, seed) if data is None else data
    prob = build_vdp_training(config, data, mesh, seed, threads)
    return train(prob, options or default_options())
