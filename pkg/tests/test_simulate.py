import numpy as np
import pytest
from scipy.integrate import solve_ivp

from penode.mesh import build_equidistant
from penode.model import DynamicModel
from penode.problems.vdp import reference_model
from penode.simulate import SimulationError, ode_solve, simulate


def _decay():
    return DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [-x[0]])


@pytest.mark.parametrize("m", [2, 3])
def test_convergence_order(m):
    model = _decay()
    steps = np.array([0.5, 0.25, 0.125, 0.0625])
    errs = []
    for h in steps:
        sim = simulate(model, [], [1.0], 0.0, 1.0, int(round(1 / h)), m)
        errs.append(abs(sim.final_state[0] - np.exp(-1.0)))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert abs(slope - (2 * m - 1)) <= 0.1 * (2 * m - 1)


def test_polynomial_solution_is_exact():
    # x' = 3 t^2 has solution t^3, a polynomial of degree m = 3
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [3.0 * t * t])
    sim = simulate(model, [], [0.0], 0.0, 2.0, 3, 3)
    np.testing.assert_allclose(sim.states[:, 0], sim.times ** 3, atol=1e-12)
    t = np.linspace(0, 2, 17)
    np.testing.assert_allclose(sim.interpolate(t)[:, 0], t ** 3, atol=1e-12)


def test_vdp_against_scipy():
    model = reference_model(1.0)
    sim = simulate(model, [], [2.0, 0.0], 0.0, 7.0, 200, 5)
    ref = solve_ivp(lambda t, x: [x[1], x[1] * (1 - x[0] ** 2) - x[0]], (0, 7), [2.0, 0.0],
                    method="DOP853", rtol=1e-12, atol=1e-12, dense_output=True)
    np.testing.assert_allclose(sim.states, ref.sol(sim.times).T, atol=1e-7)


def test_parameters_and_time_dependence():
    model = DynamicModel(d_x=1, d_p=1, dynamics=lambda x, u, t, p: [p[0] * x[0] + t])
    sim = simulate(model, [-2.0], [1.0], 0.0, 1.0, 20, 4)
    # x' = -2 x + t, x(0) = 1
    exact = lambda t: 1.25 * np.exp(-2 * t) + t / 2 - 0.25  # noqa: E731
    np.testing.assert_allclose(sim.states[:, 0], exact(sim.times), atol=1e-10)


def test_interpolation_hits_nodes_and_rejects_outside():
    sim = simulate(_decay(), [], [1.0], 0.0, 1.0, 4, 3)
    np.testing.assert_allclose(sim.interpolate(sim.times), sim.states, atol=1e-15)
    with pytest.raises(SimulationError):
        sim.interpolate([1.5])


def test_non_equidistant_mesh():
    from penode.mesh import Mesh
    mesh = Mesh.from_boundaries([0.0, 0.1, 0.4, 1.0], [2, 5, 3])
    sim = ode_solve(_decay(), [], [1.0], mesh)
    at_bounds = np.isin(sim.times, mesh.boundaries)
    assert at_bounds.sum() == 4
    # interval endpoints carry the high order, interior stages only the stage order
    np.testing.assert_allclose(sim.states[at_bounds, 0], np.exp(-sim.times[at_bounds]), atol=5e-6)
    np.testing.assert_allclose(sim.states[:, 0], np.exp(-sim.times), atol=1e-4)


def test_finite_time_blow_up_raises():
    model = DynamicModel(d_x=1, d_p=0, dynamics=lambda x, u, t, p: [x[0] * x[0]])
    with pytest.raises(SimulationError):
        ode_solve(model, [], [1.0], build_equidistant(0.0, 2.0, 4, 2))
