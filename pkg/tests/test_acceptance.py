"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Training-scale tests are marked slow; run them with ``pytest -m slow`` or as
part of the full suite.
"""
import os
import time

import numpy as np
import pytest

from penode import autodiff as ad
from penode.cli import bench_callbacks
from penode.collocation import scheme
from penode.mesh import build_equidistant
from penode.model import DynamicModel
from penode.problems import qvm
from penode.problems.sweep import sensitivity_sweep, write_sweep
from penode.problems.vdp import (VdpConfig, build_vdp_training, generate_vdp_data, train_vdp,
                                 trajectory_error)
from penode.simulate import SimulationError, simulate
from penode.solver import solve
from penode.transcription import TrajectoryData, transcribe

SWEEP_INTERVALS = 250


def _error_or_inf(cfg, params):
    try:
        return trajectory_error(cfg, params)
    except SimulationError:
        return np.inf


# ---------------------------------------------------------------- 1


def test_criterion_01_collocation_exactness(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for m in range(1, 9):
        sch = scheme(m)
        for k in range(2 * m - 1):
            worst = max(worst, abs(sch.weights @ sch.nodes ** k - 1.0 / (k + 1)))
    s6 = np.sqrt(6.0)
    s3 = scheme(3)
    node_err = np.max(np.abs(s3.nodes - [(4 - s6) / 10, (4 + s6) / 10, 1.0]))
    weight_err = np.max(np.abs(s3.weights - [(16 - s6) / 36, (16 + s6) / 36, 1 / 9]))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-12 and node_err <= 1e-12 and weight_err <= 1e-12 and wall < 1.0
    criterion(1, ok, f"quadrature {worst:.1e}, m=3 nodes {node_err:.1e}, weights {weight_err:.1e}, "
                     f"{wall:.2f} s")


# ---------------------------------------------------------------- 2


def test_criterion_02_integrator_order(criterion):
    t0 = time.perf_counter()
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [-x[0]])
    steps = np.array([0.5, 0.25, 0.125, 0.0625])
    slopes = {}
    for m in (2, 3):
        errs = [abs(simulate(model, [], [1.0], 0.0, 1.0, int(round(1 / h)), m).final_state[0]
                    - np.exp(-1.0)) for h in steps]
        slopes[m] = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    wall = time.perf_counter() - t0
    ok = all(abs(s - (2 * m - 1)) <= 0.1 * (2 * m - 1) for m, s in slopes.items()) and wall < 5.0
    criterion(2, ok, "slopes " + ", ".join(f"m={m}: {s:.3f}" for m, s in slopes.items())
              + f", {wall:.2f} s")


# ---------------------------------------------------------------- 3


def _psi_errors(prob, rng, x_scale, p_scale, batches=4, per_batch=25):
    """Largest relative errors of psi's gradient and weighted Hessian against
    central differences, over batches * per_batch random points."""
    nlp = prob.nlp
    model, pattern = nlp.model, nlp.pattern
    d_x, d_p = model.d_x, model.d_p
    n_loc = d_x + d_p
    X0, p0 = nlp.split(prob.initial_guess)
    state_mask = np.zeros((n_loc, n_loc), dtype=bool)
    state_mask[:d_x] = state_mask[:, :d_x] = True
    worst_g = worst_h = 0.0
    for _ in range(batches):
        idx = np.sort(rng.choice(nlp.n_col, per_batch, replace=False))
        x = (X0[1 + idx] + x_scale * rng.normal(size=(per_batch, d_x))).T
        p = p0 + p_scale * rng.normal(size=d_p)
        u, t = nlp.node_inputs[:, idx], nlp.t_col[idx]
        data = {k: v[idx] for k, v in nlp.node_data.items()}
        w = rng.normal(size=(len(pattern.deps), per_batch))

        def grads(xv, pv):
            b = ad.eval_bundle(model, xv, u, t, list(pv), data, w, pattern)
            G = np.zeros((len(b.jacobian), n_loc, per_batch))
            for k, (deps, g) in enumerate(b.jacobian):
                G[k, deps] = g
            return b, G

        def shifted(a, h):
            xs, ps = x.copy(), p.copy()
            if a < d_x:
                xs[a] += h
            else:
                ps[a - d_x] += h
            return xs, ps

        b, G = grads(x, p)
        G_fd = np.zeros_like(G)
        H_fd = np.zeros((n_loc, n_loc, per_batch))
        hg, hh = 1e-6, 1e-5
        for a in range(n_loc):
            (xp, pp), (xm, pm) = shifted(a, hg), shifted(a, -hg)
            G_fd[:, a] = (ad.eval_values(model, xp, u, t, list(pp), data)
                          - ad.eval_values(model, xm, u, t, list(pm), data)) / (2 * hg)
            _, Gp = grads(*shifted(a, hh))
            _, Gm = grads(*shifted(a, -hh))
            H_fd[:, a] = np.einsum("kn,kin->in", w, Gp - Gm) / (2 * hh)
        H_fd = 0.5 * (H_fd + H_fd.transpose(1, 0, 2))
        H = np.zeros_like(H_fd)
        for (i, j), v in zip(pattern.node_pairs, b.hess_node):
            H[i, j] = H[j, i] = v
        for n in range(per_batch):
            worst_g = max(worst_g, np.max(np.abs(G[..., n] - G_fd[..., n])) / np.max(np.abs(G_fd[..., n])))
            ref = H_fd[..., n][state_mask]
            worst_h = max(worst_h, np.max(np.abs(H[..., n][state_mask] - ref)) / np.max(np.abs(ref)))
        Hp = np.zeros((d_p, d_p))
        for (i, j), v in zip(pattern.param_pairs - d_x, b.hess_param):
            Hp[i, j] = Hp[j, i] = v
        Hp_fd = H_fd[d_x:, d_x:].sum(axis=2)
        worst_h = max(worst_h, np.max(np.abs(Hp - Hp_fd)) / np.max(np.abs(Hp_fd)))
    return worst_g, worst_h


def test_criterion_03_derivatives(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    vcfg = VdpConfig(intervals=20)
    vdp_prob = build_vdp_training(vcfg, generate_vdp_data(vcfg, 0), seed=0)
    qcfg = qvm.QvmConfig(horizon=1.0, intervals=40, noise=0.0)
    qdata = qvm.generate_qvm_data(qcfg, 0)
    qvm_prob = qvm.build_qvm_training(qcfg, qdata, qvm.road_for(qcfg, 0), "nn", seed=0)
    q_scale = np.array([qdata.std(k) for k in qvm.STATE_NAMES])
    g_v, h_v = _psi_errors(vdp_prob, rng, 1.0, 0.5)
    g_q, h_q = _psi_errors(qvm_prob, rng, 0.5 * q_scale, 0.5)
    wall = time.perf_counter() - t0
    ok = max(g_v, g_q) <= 1e-6 and max(h_v, h_q) <= 1e-5 and wall < 30.0
    criterion(3, ok, f"vdp grad {g_v:.1e} hess {h_v:.1e}; qvm grad {g_q:.1e} hess {h_q:.1e}; "
                     f"{wall:.1f} s")


# ---------------------------------------------------------------- 4


def test_criterion_04_dense_kkt_oracle(criterion):
    t0 = time.perf_counter()
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [1.0 - x[0]],
                         lagrange=lambda x, u, t, p, d: (x[0] - d["y"]) ** 2)
    t = np.linspace(0.0, 1.0, 5)
    nlp = transcribe(model, build_equidistant(0.0, 1.0, 1, 2), data=TrajectoryData(t, {"y": 2 * t}))
    z0 = np.zeros(nlp.n)
    ev = nlp.eval_all(z0, np.zeros(nlp.m))
    H = nlp.hessian_matrix(ev["hessian"]).toarray()
    J = nlp.jacobian_matrix(ev["jacobian"]).toarray()
    K = np.block([[H, J.T], [J, np.zeros((nlp.m, nlp.m))]])
    ref = np.linalg.solve(K, np.concatenate([-ev["gradient"], -ev["constraints"]]))[:nlp.n]
    sol = solve(nlp, z0)
    wall = time.perf_counter() - t0
    diff = float(np.max(np.abs(sol.x - ref)))
    ok = sol.status == "optimal" and diff <= 1e-8 and wall < 1.0
    criterion(4, ok, f"{sol.status}, max |x - x_kkt| = {diff:.1e}, {wall:.2f} s")


# ---------------------------------------------------------------- 5 - 8


@pytest.mark.slow
def test_criterion_05_vdp_noise_free(criterion):
    cfg = VdpConfig(sigma=0.0)
    t0 = time.perf_counter()
    res = train_vdp(cfg, seed=0)
    wall = time.perf_counter() - t0
    sol = res.solution
    err = _error_or_inf(cfg, res.params)
    ok = (sol.status == "optimal" and sol.iterations <= 200 and res.params.size == 102
          and cfg.regularization == 1e-4 and cfg.intervals == 500 and cfg.stages == 5
          and err <= 0.1 and wall <= 120.0)
    criterion(5, ok, f"{sol.status} in {sol.iterations} iterations, {res.params.size} parameters, "
                     f"max |dy| = {err:.3e}, {wall:.1f} s")


@pytest.mark.slow
def test_criterion_06_vdp_heavy_noise(criterion):
    cfg = VdpConfig(sigma=0.5)
    t0 = time.perf_counter()
    errs, statuses = [], []
    for seed in range(5):
        res = train_vdp(cfg, seed=seed)
        statuses.append(res.solution.status)
        errs.append(_error_or_inf(cfg, res.params))
    wall = time.perf_counter() - t0
    close = sum(e <= 0.5 for e in errs)
    ok = cfg.regularization == 1e-3 and close >= 3 and wall <= 600.0
    criterion(6, ok, f"{close}/5 seeds within 0.5 (errors {', '.join(f'{e:.3f}' for e in errs)}; "
                     f"{', '.join(statuses)}), {wall:.1f} s")


@pytest.mark.slow
def test_criterion_07_spectral_vdp(criterion):
    cfg = VdpConfig(sigma=0.0)
    t0 = time.perf_counter()
    res = train_vdp(cfg, seed=0, mesh=build_equidistant(0.0, cfg.horizon, 1, 70))
    wall = time.perf_counter() - t0
    err = _error_or_inf(cfg, res.params)
    ok = res.solution.status == "optimal" and err <= 0.1 and wall <= 60.0
    criterion(7, ok, f"{res.solution.status} in {res.solution.iterations} iterations, "
                     f"max |dy| = {err:.3e}, {wall:.1f} s")


@pytest.mark.slow
def test_criterion_08_sensitivity_sweep(criterion, tmp_path):
    t0 = time.perf_counter()
    fractions = {}
    for sigma in (0.0, 0.1, 0.5):
        rep = sensitivity_sweep(VdpConfig(sigma=sigma), runs=20, intervals=SWEEP_INTERVALS)
        files = write_sweep(rep, tmp_path / f"sigma{sigma}")
        assert all(os.path.exists(f) for f in files)
        fractions[sigma] = rep.fraction_converged
    wall = time.perf_counter() - t0
    ok = fractions[0.0] >= 0.9 and fractions[0.1] >= 0.75 and wall <= 1800.0
    criterion(8, ok, "converged " + ", ".join(f"sigma={s}: {f:.0%}" for s, f in fractions.items())
              + f" (20 runs each, {SWEEP_INTERVALS} intervals), {wall / 60:.1f} min")


# ---------------------------------------------------------------- 9 - 10


@pytest.fixture(scope="module")
def qvm_setup():
    cfg = qvm.QvmConfig(noise=0.0)
    road = qvm.road_for(cfg, 0)
    return cfg, road, qvm.generate_qvm_data(cfg, 0, road)


@pytest.mark.slow
def test_criterion_09_qvm_strategies(criterion, qvm_setup):
    cfg, road, data = qvm_setup
    assert cfg.horizon == 10.0 and cfg.intervals == 625 and cfg.stages == 5
    rms, zero, wall = {}, 0.0, {}
    for strategy in ("I", "II"):
        res = qvm.train_qvm(cfg, strategy, 0, data, road)
        errs = qvm.surrogate_errors(cfg, res)
        rms[strategy] = {k: v["rms_rel"] for k, v in errs.items()}
        zero = max(zero, *(v["zero"] for v in errs.values()))
        wall[strategy] = res.times["total"]
    worst = max(max(r.values()) for r in rms.values())
    ok = worst <= 0.05 and zero <= 1e-6 and wall["II"] < wall["I"]
    detail = "; ".join(f"{s}: spring {r['f_pr']:.1%} friction {r['f_fr']:.1%} ({wall[s]:.0f} s)"
                       for s, r in rms.items())
    criterion(9, ok, f"{detail}; max |F(0)| = {zero:.1e}")


@pytest.mark.slow
def test_criterion_10_rational_surrogates(criterion, qvm_setup):
    cfg, road, data = qvm_setup
    res = qvm.train_qvm(cfg, "III", 0, data, road)
    errs = qvm.surrogate_errors(cfg, res)
    ok = res.params.size == 32 and errs["f_fr"]["rms_rel"] <= 0.05 and errs["f_pr"]["rms_rel"] <= 0.10
    criterion(10, ok, f"{res.params.size} parameters, friction {errs['f_fr']['rms_rel']:.1%}, "
                      f"spring {errs['f_pr']['rms_rel']:.1%}")


# ---------------------------------------------------------------- 11 - 12


@pytest.mark.slow
def test_criterion_11_full_scale_sparsity(criterion):
    t0 = time.perf_counter()
    cfg = qvm.QvmConfig.full_scale(noise=0.0)
    road = qvm.road_for(cfg, 0)
    data = qvm.generate_qvm_data(cfg, 0, road)
    model, _ = qvm.surrogate_model(cfg, road, data, "nn")
    nlp = transcribe(model, build_equidistant(0.0, cfg.horizon, cfg.intervals, cfg.stages), data=data)
    wall = time.perf_counter() - t0
    target = 4.73e6
    ok = nlp.jac_nnz > 2.7e6 and abs(nlp.hess_nnz - target) <= 0.02 * target and wall < 30.0
    criterion(11, ok, f"Jacobian nnz {nlp.jac_nnz}, Hessian nnz (lower triangle) {nlp.hess_nnz} "
                      f"({nlp.hess_nnz / target - 1:+.1%} vs 4.73e6), {wall:.1f} s")


@pytest.mark.slow
def test_criterion_12_parallel_callbacks(criterion):
    t0 = time.perf_counter()
    cfg = qvm.QvmConfig()
    road = qvm.road_for(cfg, 0)
    data = qvm.generate_qvm_data(cfg, 0, road)
    prob = qvm.build_qvm_training(cfg, data, road, "nn", seed=0, threads=1)
    nlp, z = prob.nlp, prob.initial_guess
    lam = np.random.default_rng(0).normal(size=nlp.m)
    ref = nlp.eval_all(z, lam, 1.0, threads=1)
    identical = True
    for th in (4, 8):
        got = nlp.eval_all(z, lam, 1.0, threads=th)
        identical &= all(np.array_equal(np.asarray(got[k]), np.asarray(ref[k])) for k in ref)
    bench = bench_callbacks(nlp, z, threads=8, repeat=3)
    speedup = bench[8]["speedup"]
    wall = time.perf_counter() - t0
    ok = identical and speedup >= 2.0 and wall < 120.0
    criterion(12, ok, f"bit-identical for 1/4/8 threads: {identical}; speedup at 8 threads "
                      f"{speedup:.2f}x on {os.cpu_count()} CPU(s), {wall:.1f} s")
