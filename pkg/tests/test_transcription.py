import numpy as np
import pytest

from penode import autodiff as ad
from penode.mesh import Mesh, build_equidistant
from penode.model import DynamicModel, FeedForwardNet
from penode.transcription import TrajectoryData, TranscriptionError, transcribe


def _rich_model():
    """Two states, a small net, a path constraint, data fit and boundary rows."""
    net = FeedForwardNet((2, 3, 1), "squareplus")
    n = net.n_params

    def dynamics(x, u, t, p):
        return [x[1], net(x, p[:n]) - p[n] * x[0] + u[0]]

    def lagrange(x, u, t, p, d):
        return (x[0] - d["y"]) ** 2 + 0.1 * x[1] * x[1]

    def path(x, u, t, p):
        return [x[0] * x[1] + p[n] ** 2]

    def mayer(x0, xf, p):
        return 1e-2 * ad.nsum([q * q for q in p]) + xf[0] * xf[1]

    def boundary(x0, xf, p):
        return [x0[0] - 1.0, x0[1], xf[0] * p[n]]

    return DynamicModel(d_x=2, d_p=n + 1, d_u=1, dynamics=dynamics, lagrange=lagrange, path=path,
                        g_lower=[-5.0], g_upper=[5.0], mayer=mayer, boundary=boundary,
                        r_lower=[0, 0, -1], r_upper=[0, 0, 1], input_signal=lambda t: [np.sin(t)])


def _data():
    t = np.linspace(0.0, 2.0, 41)
    return TrajectoryData(t, {"y": np.cos(t)})


def _nlp(chunk_size=1024, mesh=None):
    mesh = mesh or Mesh.from_boundaries([0.0, 0.5, 1.2, 2.0], [2, 3, 1])
    return transcribe(_rich_model(), mesh, data=_data(), chunk_size=chunk_size, threads=1)


def _point(nlp, seed=0):
    return np.random.default_rng(seed).normal(scale=0.5, size=nlp.n)


def test_sizes_and_bounds():
    nlp = _nlp()
    n_col = 6
    assert nlp.n == (1 + n_col) * 2 + nlp.model.d_p
    assert nlp.m == n_col * 3 + 3
    assert nlp.c_lower.size == nlp.m
    np.testing.assert_array_equal(nlp.c_lower[:3], [0, 0, -5])
    np.testing.assert_array_equal(nlp.c_upper[-3:], [0, 0, 1])
    assert np.all(np.isinf(nlp.x_lower))


def test_derivatives_match_finite_differences():
    nlp = _nlp()
    z = _point(nlp)
    rng = np.random.default_rng(1)
    lam = rng.normal(size=nlp.m)
    ev = nlp.eval_all(z, lam, 0.7)
    f0, c0 = nlp.eval_fg(z)
    assert ev["objective"] == pytest.approx(f0, rel=1e-14)
    np.testing.assert_allclose(ev["constraints"], c0, rtol=1e-14, atol=1e-14)
    h = 1e-6
    g_fd = np.zeros(nlp.n)
    J_fd = np.zeros((nlp.m, nlp.n))
    H_fd = np.zeros((nlp.n, nlp.n))
    J = nlp.jacobian_matrix(ev["jacobian"]).toarray()

    def lag_grad(v):
        e = nlp.eval_all(v, lam, 0.7)
        return 0.7 * e["gradient"] + nlp.jacobian_matrix(e["jacobian"]).T @ lam

    for k in range(nlp.n):
        e = np.zeros(nlp.n)
        e[k] = h
        fp, cp = nlp.eval_fg(z + e)
        fm, cm = nlp.eval_fg(z - e)
        g_fd[k] = (fp - fm) / (2 * h)
        J_fd[:, k] = (cp - cm) / (2 * h)
        H_fd[:, k] = (lag_grad(z + e) - lag_grad(z - e)) / (2 * h)
    np.testing.assert_allclose(ev["gradient"], g_fd, atol=1e-7, rtol=1e-6)
    np.testing.assert_allclose(J, J_fd, atol=1e-7, rtol=1e-6)
    H = nlp.hessian_matrix(ev["hessian"]).toarray()
    np.testing.assert_allclose(H, H_fd, atol=1e-6, rtol=1e-5)
    # structural zeros outside the pattern stay zero
    patt = nlp.hessian_matrix(np.ones(nlp.hess_nnz)).toarray() != 0
    assert np.all(np.abs(H_fd[~patt]) < 1e-6)


def test_chunking_and_threads_are_bitwise_identical():
    mesh = build_equidistant(0.0, 2.0, 40, 3)
    z = _point(_nlp(mesh=mesh), 4)
    lam = np.random.default_rng(5).normal(size=_nlp(mesh=mesh).m)
    ref = _nlp(1024, mesh).eval_all(z, lam, 1.0, threads=1)
    for chunk, threads in ((7, 1), (7, 4), (16, 3)):
        got = _nlp(chunk, mesh).eval_all(z, lam, 1.0, threads=threads)
        for key in ("constraints", "gradient", "jacobian"):
            np.testing.assert_array_equal(got[key], ref[key])
        np.testing.assert_allclose(got["hessian"], ref["hessian"], rtol=1e-13, atol=1e-15)
        assert got["objective"] == pytest.approx(ref["objective"], rel=1e-14)


def test_exact_polynomial_trajectory_is_feasible():
    # x' = 1 is solved exactly by x = t on any mesh
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [1.0 + 0 * x[0]],
                         lagrange=lambda x, u, t, p, d: x[0] * x[0])
    mesh = Mesh.from_boundaries([0.0, 0.3, 1.0], [3, 2])
    nlp = transcribe(model, mesh)
    f, c = nlp.eval_fg(nlp.times.copy())
    np.testing.assert_allclose(c, 0.0, atol=1e-14)
    # objective is the time average of the running cost: (1/3) / 1
    assert f == pytest.approx(1.0 / 3.0, rel=1e-13)


def test_block_hints_put_the_initial_node_in_the_border():
    nlp = _nlp()
    assert np.all(nlp.var_block[:2] == -1)
    assert np.all(nlp.var_block[-nlp.model.d_p:] == -1)
    assert np.all(nlp.con_block[-3:] == -1)
    assert np.all(nlp.var_block[2:-nlp.model.d_p] >= 0)


def test_short_data_rejected():
    t = np.linspace(0.0, 1.0, 11)
    with pytest.raises(TranscriptionError):
        transcribe(_rich_model(), build_equidistant(0.0, 2.0, 4, 2), data=TrajectoryData(t, {"y": t}))


def test_evaluation_error_names_the_node():
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [ad.log(x[0])])
    nlp = transcribe(model, build_equidistant(0.0, 1.0, 3, 2))
    z = np.ones(nlp.n)
    z[4] = -1.0
    with pytest.raises(ad.EvaluationError) as info:
        nlp.eval_all(z)
    assert info.value.node == 4


def test_dump_is_json_friendly():
    import json
    nlp = transcribe(DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [-x[0]]),
                     build_equidistant(0.0, 1.0, 2, 2))
    out = nlp.dump(np.ones(nlp.n))
    text = json.dumps(out)
    assert '"var_count": 5' in text and out["con_count"] == 4
