import numpy as np
import pytest

from penode.mesh import build_equidistant
from penode.model import DynamicModel
from penode.solver import DenseNLP, SolverOptions, solve
from penode.transcription import TrajectoryData, transcribe


def _qp(Q, q, A, b):
    n = Q.shape[0]
    return DenseNLP(n, f=lambda x: 0.5 * x @ Q @ x + q @ x, grad=lambda x: Q @ x + q,
                    c=lambda x: A @ x, jac=lambda x: A, hess=lambda x, y, s: s * Q,
                    c_lower=b, c_upper=b)


def test_equality_qp_matches_dense_kkt():
    rng = np.random.default_rng(0)
    n, m = 8, 3
    M = rng.normal(size=(n, n))
    Q = M @ M.T + np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([-q, b]))
    sol = solve(_qp(Q, q, A, b), np.zeros(n))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, ref[:n], atol=1e-8)
    # multipliers of the Lagrangian f + y.c
    np.testing.assert_allclose(sol.multipliers, ref[n:], atol=1e-6)


def test_nonconvex_qp_uses_inertia_correction():
    # indefinite Hessian, but positive definite on the constraint null space
    Q = np.diag([-1.0, 4.0, 3.0])
    A = np.array([[1.0, 0.0, 0.0]])
    sol = solve(_qp(Q, np.array([0.0, 1.0, -3.0]), A, np.array([2.0])), np.ones(3))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [2.0, -0.25, 1.0], atol=1e-8)


def test_rosenbrock():
    f = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2  # noqa: E731
    g = lambda x: np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])  # noqa: E731
    h = lambda x, y, s: s * np.array([[2 - 400 * (x[1] - 3 * x[0] ** 2), -400 * x[0]],  # noqa: E731
                                      [-400 * x[0], 200.0]])
    sol = solve(DenseNLP(2, f, g, hess=h), np.array([-1.2, 1.0]))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-6)


def test_hs071():
    def f(x):
        return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]

    def grad(x):
        return np.array([x[0] * x[3] + x[3] * (x[0] + x[1] + x[2]), x[0] * x[3],
                         x[0] * x[3] + 1.0, x[0] * (x[0] + x[1] + x[2])])

    def c(x):
        return np.array([np.prod(x), np.sum(x * x)])

    def jac(x):
        return np.array([[x[1] * x[2] * x[3], x[0] * x[2] * x[3], x[0] * x[1] * x[3], x[0] * x[1] * x[2]],
                         2 * x])

    def hess(x, y, s):
        H = s * np.array([[2 * x[3], x[3], x[3], 2 * x[0] + x[1] + x[2]],
                          [x[3], 0, 0, x[0]], [x[3], 0, 0, x[0]],
                          [2 * x[0] + x[1] + x[2], x[0], x[0], 0]])
        H += y[0] * np.array([[0, x[2] * x[3], x[1] * x[3], x[1] * x[2]],
                              [x[2] * x[3], 0, x[0] * x[3], x[0] * x[2]],
                              [x[1] * x[3], x[0] * x[3], 0, x[0] * x[1]],
                              [x[1] * x[2], x[0] * x[2], x[0] * x[1], 0]])
        H += y[1] * 2 * np.eye(4)
        return H

    nlp = DenseNLP(4, f, grad, c, jac, hess, c_lower=[25.0, 40.0], c_upper=[np.inf, 40.0],
                   x_lower=np.ones(4), x_upper=np.full(4, 5.0))
    sol = solve(nlp, np.array([1.0, 5.0, 5.0, 1.0]))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 4.74299964, 3.82114998, 1.37940829], atol=1e-6)
    assert sol.objective == pytest.approx(17.0140173, rel=1e-7)


def test_active_bound():
    nlp = DenseNLP(1, lambda x: (x[0] - 2) ** 2, lambda x: np.array([2 * (x[0] - 2)]),
                   hess=lambda x, y, s: s * np.array([[2.0]]), x_upper=np.array([1.0]))
    sol = solve(nlp, np.array([0.0]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.z_upper[0] == pytest.approx(2.0, rel=1e-5)


def test_infeasible_problem():
    nlp = DenseNLP(1, lambda x: 0.0 * x[0], lambda x: np.zeros(1), c=lambda x: np.array([x[0] ** 2]),
                   jac=lambda x: np.array([[2 * x[0]]]), hess=lambda x, y, s: np.array([[2 * y[0]]]),
                   c_lower=[-1.0], c_upper=[-1.0])
    sol = solve(nlp, np.array([1.0]), SolverOptions(max_iterations=50))
    assert not sol.success
    assert sol.status in ("infeasible", "max_iter")


def test_evaluation_failure_at_start():
    def f(x):
        if x[0] < 0:
            raise FloatingPointError("negative")
        return x[0]

    nlp = DenseNLP(1, f, lambda x: np.ones(1), hess=lambda x, y, s: np.zeros((1, 1)))
    sol = solve(nlp, np.array([-1.0]))
    assert sol.status == "eval_failure"


def test_options_validated():
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)


def test_tiny_linear_transcription_matches_dense_kkt():
    # x' = -x + 1 on one 2-stage interval, least squares to data, x(0) free
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [1.0 - x[0]],
                         lagrange=lambda x, u, t, p, d: (x[0] - d["y"]) ** 2)
    t = np.linspace(0.0, 1.0, 5)
    nlp = transcribe(model, build_equidistant(0.0, 1.0, 1, 2), data=TrajectoryData(t, {"y": 2 * t}))
    z0 = np.zeros(nlp.n)
    ev = nlp.eval_all(z0, np.zeros(nlp.m))
    H = nlp.hessian_matrix(ev["hessian"]).toarray()
    J = nlp.jacobian_matrix(ev["jacobian"]).toarray()
    K = np.block([[H, J.T], [J, np.zeros((nlp.m, nlp.m))]])
    ref = np.linalg.solve(K, np.concatenate([-ev["gradient"], -ev["constraints"]]))
    sol = solve(nlp, z0)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, ref[:nlp.n], atol=1e-8)


def test_history_and_timings():
    rng = np.random.default_rng(2)
    Q = np.eye(3)
    sol = solve(_qp(Q, rng.normal(size=3), np.ones((1, 3)), np.array([1.0])), np.zeros(3))
    assert sol.history[0]["iter"] == 0 and len(sol.history) == sol.iterations + 1
    assert set(sol.times) == {"total", "callbacks", "solver_core"}
    assert sol.times["total"] >= sol.times["callbacks"] >= 0
