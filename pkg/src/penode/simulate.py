"""Fixed-step Radau IIA initial-value solver on a collocation mesh."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .autodiff import EvaluationError, state_jacobian
from .collocation import barycentric_weights, scheme
from .mesh import Mesh, build_equidistant, node_times


class SimulationError(RuntimeError):
    pass


@dataclass
class SimOutput:
    """Node times and states; dense output uses each interval's collocation polynomial."""

    mesh: Mesh
    times: np.ndarray      # (node_count,)
    states: np.ndarray     # (node_count, d_x)
    params: np.ndarray
    newton_iterations: int = 0

    @property
    def final_state(self):
        return self.states[-1]

    def interpolate(self, t) -> np.ndarray:
        """States at arbitrary times inside the horizon, shape (len(t), d_x)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        mesh = self.mesh
        if t.size and (t.min() < mesh.t0 - 1e-9 or t.max() > mesh.tf + 1e-9):
            raise SimulationError("interpolation outside the simulated horizon")
        interval = np.clip(np.searchsorted(mesh.boundaries, t, side="right") - 1, 0, mesh.n_intervals - 1)
        out = np.empty((t.size, self.states.shape[1]))
        starts = np.concatenate(([0], np.cumsum(mesh.stages)[:-1]))
        for i in np.unique(interval):
            sel = interval == i
            m = int(mesh.stages[i])
            sch = scheme(m)
            nodes = sch.all_nodes
            w = barycentric_weights(nodes)
            tau = (t[sel] - mesh.boundaries[i]) / (mesh.boundaries[i + 1] - mesh.boundaries[i])
            vals = self.states[starts[i]:starts[i] + m + 1]
            diff = tau[:, None] - nodes[None, :]
            exact = np.isclose(diff, 0.0, atol=1e-15)
            diff[exact] = 1.0
            terms = w[None, :] / diff
            res = (terms @ vals) / terms.sum(axis=1)[:, None]
            hit = exact.any(axis=1)
            if hit.any():
                res[hit] = vals[np.argmax(exact[hit], axis=1)]
            out[sel] = res
        return out


def ode_solve(model, p, x0, mesh: Mesh, schemes=None, tol: float = 1e-10,
              max_newton: int = 50) -> SimOutput:
    """Integrate ``model.dynamics`` from ``x0`` interval by interval.

    Each step solves the stage system sum_k D_jk x_ik = dt f(x_ij) with Newton's
    method (analytic Jacobian, dense LU) and step halving on residual growth.
    """
    d_x = model.d_x
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d_x,):
        raise SimulationError(f"initial state must have length {d_x}")
    p = np.asarray(p, dtype=float)
    plist = list(p)
    times = node_times(mesh)
    states = np.empty((mesh.node_count, d_x))
    states[0] = x0
    k = 1
    total_it = 0
    for i, m in enumerate(mesh.stages):
        m = int(m)
        sch = scheme(m)
        D = sch.diff_matrix
        dt = mesh.boundaries[i + 1] - mesh.boundaries[i]
        t_st = times[k:k + m]
        u = model.inputs_at(t_st)
        x_prev = states[k - 1]
        X, its = _newton_step(model, D, dt, x_prev, u, t_st, plist, tol, max_newton)
        total_it += its
        states[k:k + m] = X
        k += m
    return SimOutput(mesh, times, states, p, total_it)


def _residual(model, D, dt, x_prev, X, u, t, p):
    f, J = state_jacobian(model, X.T, u, t, p)
    R = D[:, 1:] @ X + np.outer(D[:, 0], x_prev) - dt * f.T
    return R, J


def _newton_step(model, D, dt, x_prev, u, t, p, tol, max_newton):
    m, d_x = D.shape[0], x_prev.size
    X = np.tile(x_prev, (m, 1))
    eye = np.eye(d_x)
    try:
        R, J = _residual(model, D, dt, x_prev, X, u, t, p)
    except EvaluationError as exc:
        raise SimulationError(f"right-hand side failed at step start: {exc}") from exc
    norm = np.max(np.abs(R))
    for it in range(1, max_newton + 1):
        scale = max(1.0, np.max(np.abs(X)))
        if norm <= tol * scale:
            return X, it - 1
        A = np.kron(D[:, 1:], eye)
        for j in range(m):
            A[j * d_x:(j + 1) * d_x, j * d_x:(j + 1) * d_x] -= dt * J[:, :, j]
        try:
            dX = sla.lu_solve(sla.lu_factor(A), -R.ravel()).reshape(m, d_x)
        except (ValueError, sla.LinAlgError) as exc:
            raise SimulationError(f"singular Newton matrix: {exc}") from exc
        lam = 1.0
        while True:
            X_t = X + lam * dX
            try:
                R_t, J_t = _residual(model, D, dt, x_prev, X_t, u, t, p)
                n_t = np.max(np.abs(R_t))
            except EvaluationError:
                n_t = np.inf
            if np.isfinite(n_t) and (n_t < norm or n_t <= tol * scale):
                break
            lam *= 0.5
            if lam < 1e-6:
                if np.max(np.abs(dX)) <= 1e-14 * scale and norm <= 1e-8 * scale:
                    return X, it
                raise SimulationError(f"Newton failed to converge at t = {t[-1]:.6g}")
        X, R, J, norm = X_t, R_t, J_t, n_t
        if np.max(np.abs(lam * dX)) <= 1e-15 * max(1.0, np.max(np.abs(X))) and norm <= 1e-8 * scale:
            return X, it
    if norm <= tol * max(1.0, np.max(np.abs(X))):
        return X, max_newton
    raise SimulationError(f"Newton did not converge in {max_newton} iterations at t = {t[-1]:.6g}")


def simulate(model, p, x0, t0, tf, n_intervals, m=5) -> SimOutput:
    """Convenience wrapper on an equidistant mesh."""
    return ode_solve(model, p, x0, build_equidistant(t0, tf, n_intervals, m))


def observe(model, sim: SimOutput, p: Optional[np.ndarray] = None) -> dict:
    """Named observables of ``model`` at every node of ``sim``."""
    if model.outputs is None:
        return {}
    p = sim.params if p is None else np.asarray(p, dtype=float)
    t = sim.times
    u = model.inputs_at(t)
    with np.errstate(all="ignore"):
        out = model.outputs(list(sim.states.T), u, t, list(p))
    return {k: np.broadcast_to(np.asarray(v, dtype=float), t.shape).copy() for k, v in out.items()}
