"""Quarter vehicle model with learnable friction and progressive-spring forces."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..mesh import build_equidistant
from ..model import DynamicModel, FeedForwardNet, RationalChebyshev, zero_crossing_constraint
from ..simulate import SimulationError, ode_solve
from ..solver import SolverOptions
from ..transcription import TrajectoryData
from .common import TrainingProblem, TrainingResult, make_problem, train
from .road import RoadProfile, generate_road

log = logging.getLogger(__name__)

STATE_NAMES = ("z_b", "z_w", "v_b", "v_w", "z_r")
STRATEGIES = ("I", "II", "III")


@dataclass
class QvmConfig:
    # vehicle (SI units)
    m_b: float = 400.0
    m_w: float = 40.0
    c_s: float = 2.0e4
    d_s: float = 1500.0
    c_t: float = 2.0e5
    d_t: float = 100.0
    # data-generating nonlinearities
    friction_force: float = 300.0
    friction_velocity: float = 0.05
    progressive_rate: float = 2.0e6
    # road and sampling
    road_class: str = "D"
    speed: float = 25.0
    sample_rate: float = 1000.0
    noise: float = 0.05           # relative to each channel's std; 0 disables
    data_refinement: int = 4      # data simulation grid = this x training grid
    # training grid
    horizon: float = 10.0
    intervals: int = 625
    stages: int = 5
    # surrogates and solver
    widths: tuple = (1, 5, 5, 1)
    activation: str = "squareplus"
    rational_degree: int = 7
    rational_init_scale: float = 1e-2
    max_iterations: int = 150
    early_stop_window: int = 15
    early_stop_rtol: float = 1e-2
    early_stop_constr_tol: float = 1e-3
    segment_fraction: float = 0.125

    def __post_init__(self):
        for name in ("m_b", "m_w", "c_s", "c_t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.horizon > 0 or self.intervals < 1 or self.stages < 1:
            raise ValueError("invalid training grid")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @classmethod
    def full_scale(cls, **kw) -> "QvmConfig":
        """42 s trajectory on 2500 intervals."""
        return cls(**{"horizon": 42.0, "intervals": 2500, **kw})


# --------------------------------------------------------------------------
# reference forces and model assembly


def true_friction(cfg: QvmConfig, dv):
    return cfg.friction_force * ad.tanh(dv * (1.0 / cfg.friction_velocity))


def true_progressive(cfg: QvmConfig, dz):
    return cfg.progressive_rate * dz * dz * dz


def _qvm_terms(cfg: QvmConfig, x, u, p, f_pr: Callable, f_fr: Callable):
    z_b, z_w, v_b, v_w, z_r = x
    dzs, dvs = z_w - z_b, v_w - v_b
    dzt, dvt = z_r - z_w, u[0] - v_w
    f_s = cfg.c_s * dzs + cfg.d_s * dvs
    extra = [e for e in (f_pr(dzs, p), f_fr(dvs, p)) if e is not None]
    if extra:
        f_s = ad.nsum([f_s, *extra])
    a_b = f_s * (1.0 / cfg.m_b)
    a_w = (cfg.c_t * dzt + cfg.d_t * dvt - f_s) * (1.0 / cfg.m_w)
    return [v_b, v_w, a_b, a_w, u[0]], a_b, a_w


def _none(*_):
    return None


def build_model(cfg: QvmConfig, road: RoadProfile, f_pr: Callable = _none, f_fr: Callable = _none,
                d_p: int = 0, scales: Optional[tuple] = None, name: str = "qvm") -> DynamicModel:
    """QVM with the given extra force laws ``f(delta, p)``.

    With ``scales = (sigma_ab, sigma_aw)`` the model carries the normalized
    acceleration objective against data channels ``a_b`` and ``a_w``.
    """

    def dynamics(x, u, t, p):
        return _qvm_terms(cfg, x, u, p, f_pr, f_fr)[0]

    def outputs(x, u, t, p):
        _, a_b, a_w = _qvm_terms(cfg, x, u, p, f_pr, f_fr)
        return {"a_b": a_b, "a_w": a_w}

    joint = lagrange = None
    if scales is not None:
        ib, iw = 1.0 / scales[0], 1.0 / scales[1]

        def lagrange(x, u, t, p, d):
            _, a_b, a_w = _qvm_terms(cfg, x, u, p, f_pr, f_fr)
            return ad.square((a_b - d["a_b"]) * ib) + ad.square((a_w - d["a_w"]) * iw)

        def joint(x, u, t, p, d):
            f, a_b, a_w = _qvm_terms(cfg, x, u, p, f_pr, f_fr)
            return [ad.square((a_b - d["a_b"]) * ib) + ad.square((a_w - d["a_w"]) * iw), *f]

    return DynamicModel(d_x=5, d_p=d_p, d_u=1, dynamics=dynamics, lagrange=lagrange, joint=joint,
                        input_signal=road.input_signal, outputs=outputs, state_names=STATE_NAMES,
                        name=name)


def generating_model(cfg: QvmConfig, road: RoadProfile) -> DynamicModel:
    return build_model(cfg, road, lambda dz, p: true_progressive(cfg, dz),
                       lambda dv, p: true_friction(cfg, dv), name="qvm-nonlinear")


def linear_model(cfg: QvmConfig, road: RoadProfile) -> DynamicModel:
    return build_model(cfg, road, name="qvm-linear")


# --------------------------------------------------------------------------
# data


def _streams(seed):
    road_ss, noise_ss, init_ss = np.random.SeedSequence([int(seed), 4242]).spawn(3)
    return road_ss, np.random.default_rng(noise_ss), np.random.default_rng(init_ss)


def road_for(cfg: QvmConfig, seed: int = 0, amplitude_scale: float = 1.0,
             road_class: Optional[str] = None) -> RoadProfile:
    road_ss, _, _ = _streams(seed)
    road_seed = int(road_ss.generate_state(1)[0])
    return generate_road(road_class or cfg.road_class, road_seed, max(cfg.horizon, 1.0),
                         speed=cfg.speed, amplitude_scale=amplitude_scale)


def equilibrium_state(road: RoadProfile, t0: float = 0.0) -> np.ndarray:
    zr = float(road.height(np.array([t0]))[0])
    return np.array([zr, zr, 0.0, 0.0, zr])


def simulate_states(model: DynamicModel, params, x0, horizon, intervals, stages, t0=0.0):
    mesh = build_equidistant(t0, t0 + horizon, intervals, stages)
    return ode_solve(model, params, x0, mesh)


def generate_qvm_data(cfg: QvmConfig, seed: int = 0, road: Optional[RoadProfile] = None,
                      horizon: Optional[float] = None) -> TrajectoryData:
    """Nonlinear-model trajectory sampled at ``sample_rate`` with optional noise.

    Channels: the five states, the road slope ``u`` and the accelerations
    ``a_b``, ``a_w``.  Noise is zero-mean Gaussian with standard deviation
    ``noise`` times the channel's own std (not applied to ``u``).
    """
    _, rng, _ = _streams(seed)
    road = road_for(cfg, seed) if road is None else road
    horizon = cfg.horizon if horizon is None else float(horizon)
    intervals = int(round(cfg.intervals * horizon / cfg.horizon)) * cfg.data_refinement
    model = generating_model(cfg, road)
    sim = simulate_states(model, [], equilibrium_state(road), horizon, max(intervals, 1), cfg.stages)
    n = int(round(horizon * cfg.sample_rate)) + 1
    t = np.linspace(0.0, horizon, n)
    xs = sim.interpolate(t)
    u = road.slope(t)
    _, a_b, a_w = _qvm_terms(cfg, list(xs.T), [u], [], lambda dz, p: true_progressive(cfg, dz),
                             lambda dv, p: true_friction(cfg, dv))
    ch = {name: xs[:, k] for k, name in enumerate(STATE_NAMES)}
    ch["a_b"] = np.asarray(a_b, dtype=float)
    ch["a_w"] = np.asarray(a_w, dtype=float)
    if cfg.noise > 0:
        for k in (*STATE_NAMES, "a_b", "a_w"):
            ch[k] = ch[k] + rng.normal(0.0, cfg.noise * np.std(ch[k]), n)
    ch["u"] = u
    return TrajectoryData(t, ch)


def input_stats(data: TrajectoryData) -> dict:
    """Standard deviations of the surrogate inputs and the normalizing accelerations."""
    c = data.channels
    return {"dz": float(np.std(c["z_w"] - c["z_b"])), "dv": float(np.std(c["v_w"] - c["v_b"])),
            "a_b": data.std("a_b"), "a_w": data.std("a_w")}


# --------------------------------------------------------------------------
# training problems


def make_surrogates(cfg: QvmConfig, kind: str, stats: dict) -> dict:
    """Name -> surrogate for the progressive spring ``f_pr`` and friction ``f_fr``."""
    out_scale = cfg.m_b * stats["a_b"]
    if kind == "nn":
        return {name: FeedForwardNet(tuple(cfg.widths), cfg.activation, (0.0,), (stats[key],), out_scale)
                for name, key in (("f_pr", "dz"), ("f_fr", "dv"))}
    if kind == "rational":
        d = cfg.rational_degree
        return {name: RationalChebyshev(d, d, 0.0, 3.0 * stats[key], out_scale)
                for name, key in (("f_pr", "dz"), ("f_fr", "dv"))}
    raise ValueError(f"unknown surrogate kind {kind!r}")


def surrogate_model(cfg: QvmConfig, road: RoadProfile, data: TrajectoryData, kind: str):
    """(model, surrogates) for training: normalized objective plus zero-crossing rows.

    The road height at t0 is pinned to the data: shifting all three positions
    by one constant leaves every acceleration unchanged.
    """
    stats = input_stats(data)
    sur = make_surrogates(cfg, kind, stats)
    offsets, k = {}, 0
    for name, s in sur.items():
        offsets[name] = k
        k += s.n_params
    pr, fr = sur["f_pr"], sur["f_fr"]
    o_pr, o_fr = offsets["f_pr"], offsets["f_fr"]

    def f_pr(dz, p):
        return pr([dz], p[o_pr:o_pr + pr.n_params])

    def f_fr(dv, p):
        return fr([dv], p[o_fr:o_fr + fr.n_params])

    model = build_model(cfg, road, f_pr, f_fr, d_p=k, scales=(stats["a_b"], stats["a_w"]),
                        name=f"qvm-{kind}")
    for name in ("f_pr", "f_fr"):
        model = zero_crossing_constraint(model, sur[name], offsets[name])
    zr0 = float(data.channels["z_r"][0])
    model = model.with_boundary(lambda x0, xf, p: [x0[4] - zr0], 0.0, 0.0)
    return model, {name: (sur[name], offsets[name]) for name in sur}


def initial_params(surrogates: dict, kind: str, rng, cfg: QvmConfig) -> np.ndarray:
    parts = []
    for sur, _ in surrogates.values():
        parts.append(sur.init_params(rng) if kind == "nn" else sur.init_params(rng, cfg.rational_init_scale))
    return np.concatenate(parts)


def solver_options(cfg: QvmConfig, **overrides) -> SolverOptions:
    opts = dict(max_iterations=cfg.max_iterations, tol=1e-7, early_stop_window=cfg.early_stop_window,
                early_stop_rtol=cfg.early_stop_rtol, early_stop_constr_tol=cfg.early_stop_constr_tol)
    opts.update(overrides)
    return SolverOptions(**opts)


def build_qvm_training(cfg: QvmConfig, data: TrajectoryData, road: RoadProfile, kind: str = "nn",
                       seed: int = 0, horizon: Optional[float] = None,
                       intervals: Optional[int] = None, params=None, states=None,
                       threads=None) -> TrainingProblem:
    """Training problem on [0, horizon]; states default to a linear-model simulation."""
    horizon = cfg.horizon if horizon is None else float(horizon)
    intervals = cfg.intervals if intervals is None else int(intervals)
    window = data.window(0.0, horizon)
    model, sur = surrogate_model(cfg, road, window, kind)
    mesh = build_equidistant(0.0, horizon, intervals, cfg.stages)
    _, _, rng = _streams(seed)
    if params is None:
        params = initial_params(sur, kind, rng, cfg)
    x0 = np.array([window.channels[k][0] for k in STATE_NAMES])
    if states is None:
        states = ode_solve(linear_model(cfg, road), [], x0, mesh).states
    prob = make_problem(f"qvm-{kind}", model, mesh, window, states, params, threads=threads,
                        kind=kind, horizon=horizon, intervals=intervals, seed=seed)
    prob.surrogates = sur
    return prob


def train_qvm(cfg: QvmConfig, strategy: str = "II", seed: int = 0,
              data: Optional[TrajectoryData] = None, road: Optional[RoadProfile] = None,
              options: Optional[SolverOptions] = None, threads=None) -> TrainingResult:
    """Strategies: I (random NN parameters, linear-model states), II (pre-train on a
    segment, then simulate for full-horizon guesses), III (rational surrogates)."""
    strategy = str(strategy).upper()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    road = road_for(cfg, seed) if road is None else road
    data = generate_qvm_data(cfg, seed, road) if data is None else data
    options = options or solver_options(cfg)
    kind = "rational" if strategy == "III" else "nn"
    if strategy != "II":
        prob = build_qvm_training(cfg, data, road, kind, seed, threads=threads)
        res = train(prob, options)
        res.problem.meta["strategy"] = strategy
        return res
    seg_h = cfg.horizon * cfg.segment_fraction
    seg_n = max(1, int(round(cfg.intervals * cfg.segment_fraction)))
    pre = train(build_qvm_training(cfg, data, road, "nn", seed, seg_h, seg_n, threads=threads), options)
    full = build_qvm_training(cfg, data, road, "nn", seed, params=pre.params, threads=threads,
                              states=_warm_states(cfg, road, data, pre))
    res = train(full, options)
    res.stages.append(pre.solution)
    res.problem.meta["strategy"] = "II"
    return res


def _warm_states(cfg, road, data, pre: TrainingResult):
    """Simulate the pre-trained model over the full horizon; None falls back to the linear model."""
    model = dataclasses.replace(pre.problem.model, joint=None, lagrange=None)
    x0 = np.array([data.channels[k][0] for k in STATE_NAMES])
    try:
        return simulate_states(model, pre.params, x0, cfg.horizon, cfg.intervals, cfg.stages).states
    except SimulationError as exc:
        log.warning("pre-trained simulation failed (%s); using linear-model states", exc)
        return None


# --------------------------------------------------------------------------
# evaluation


def surrogate_errors(cfg: QvmConfig, result: TrainingResult, n_points: int = 201) -> dict:
    """RMS error of each learned force over +-1 std of its input, relative to the
    true force range there; also reports |surrogate(0)|."""
    stats = input_stats(result.problem.data)
    true = {"f_pr": lambda v: true_progressive(cfg, v), "f_fr": lambda v: true_friction(cfg, v)}
    key = {"f_pr": "dz", "f_fr": "dv"}
    out = {}
    for name, (sur, off) in result.problem.surrogates.items():
        s = stats[key[name]]
        grid = np.linspace(-s, s, n_points)
        p = result.params[off:off + sur.n_params]
        got = np.asarray(sur([grid], list(p)), dtype=float)
        ref = np.asarray(true[name](grid), dtype=float)
        rng = float(ref.max() - ref.min())
        out[name] = {"rms_rel": float(np.sqrt(np.mean((got - ref) ** 2)) / rng),
                     "zero": float(abs(np.asarray(sur([0.0], list(p))).reshape(-1)[0])),
                     "input_std": s, "range": rng}
    return out


def surrogate_table(cfg: QvmConfig, result: TrainingResult, n_points: int = 201, width: float = 2.0):
    """Learned and true force curves on +-``width`` std of each input."""
    stats = input_stats(result.problem.data)
    key = {"f_pr": "dz", "f_fr": "dv"}
    true = {"f_pr": lambda v: true_progressive(cfg, v), "f_fr": lambda v: true_friction(cfg, v)}
    out = {}
    for name, (sur, off) in result.problem.surrogates.items():
        grid = np.linspace(-width * stats[key[name]], width * stats[key[name]], n_points)
        p = result.params[off:off + sur.n_params]
        out[name] = (grid, np.asarray(sur([grid], list(p)), dtype=float),
                     np.asarray(true[name](grid), dtype=float))
    return out
