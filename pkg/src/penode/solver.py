"""Primal-dual interior-point NLP solver with a filter line search.

Problem form::

    min f(x)   s.t.   c_L <= c(x) <= c_U,   x_L <= x <= x_U

Inequality rows get slack variables ``s`` so that all constraints become
equalities ``h(x, s) = 0`` and all inequalities are simple bounds handled by
a logarithmic barrier.  Slacks are eliminated from the Newton system, which
leaves the condensed KKT matrix

    [ W + Sigma_x + delta_w I        J^T         ]
    [ J                         -D (per row) ]

factored by ``linalg.KKTSolver`` on its fixed sparsity pattern.  Search
directions are accepted only from factorizations with inertia (n, m, 0).

The NLP object must provide ``n, m, x_lower, x_upper, c_lower, c_upper``,
``jac_rows, jac_cols, hess_rows, hess_cols`` (lower triangle),
``eval_fg(x) -> (f, c)`` and ``eval_all(x, y, obj_factor) -> dict`` with keys
objective, constraints, gradient, jacobian, hessian.  Optional ``var_block``
and ``con_block`` arrays describe a block-banded structure for the
factorization.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import EvaluationError
from .linalg import FactorizationError, KKTSolver, factorize_kkt  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

EVAL_ERRORS = (EvaluationError, FloatingPointError, OverflowError, ZeroDivisionError)


@dataclass
class SolverOptions:
    max_iterations: int = 200
    tol: float = 1e-7
    constr_tol: float = 1e-8
    mu_init: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    delta_w_floor: float = 1e-20
    # start from the previous regularization instead of trying delta_w = 0
    # while recent iterations needed one
    skip_zero_trial: bool = True
    skip_zero_below: float = 1e-10
    threads: Optional[int] = None
    early_stop_window: int = 0        # 0 disables the no-progress stop
    early_stop_rtol: float = 1e-6
    early_stop_constr_tol: Optional[float] = None   # iterates tracked by the stop rule; None = constr_tol
    polish_steps: int = 8             # Gauss-Newton projections after max_iter / early stop
    max_soc: int = 4
    nlp_scaling: bool = True
    scaling_max_gradient: float = 100.0
    bound_push: float = 1e-2
    max_eval_halvings: int = 30
    refine_steps: int = 3
    print_level: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.tol > 0 and self.constr_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class Solution:
    status: str
    x: np.ndarray
    multipliers: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    iterations: int
    history: list = field(default_factory=list)
    times: dict = field(default_factory=dict)
    inf_pr: float = np.inf
    inf_du: float = np.inf
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "acceptable")


class _EvalFailure(Exception):
    pass


def _sym_matvec(rows, cols, vals, x, n):
    """Product with a symmetric matrix stored as its lower triangle."""
    y = np.bincount(rows, weights=vals * x[cols], minlength=n)
    off = rows != cols
    y += np.bincount(cols[off], weights=vals[off] * x[rows[off]], minlength=n)
    return y


def _fraction_to_boundary(v, dv, tau):
    """Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v for v > 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


class _InteriorPoint:
    def __init__(self, nlp, x0, opts: SolverOptions):
        self.nlp = nlp
        self.o = opts
        self.n, self.m = int(nlp.n), int(nlp.m)
        n, m = self.n, self.m
        self.callback_time = 0.0
        self.t_start = time.perf_counter()
        if opts.threads is not None and hasattr(nlp, "threads"):
            nlp.threads = opts.threads

        cl = np.asarray(nlp.c_lower, dtype=float)
        cu = np.asarray(nlp.c_upper, dtype=float)
        self.eq = cl == cu
        self.ineq_rows = np.flatnonzero(~self.eq)
        self.n_s = self.ineq_rows.size
        self.n_w = n + self.n_s
        self.cl, self.cu = cl, cu

        # KKT pattern: [H lower | x diagonal | J | row diagonal]
        hr = np.asarray(nlp.hess_rows, dtype=np.intp)
        hc = np.asarray(nlp.hess_cols, dtype=np.intp)
        jr = np.asarray(nlp.jac_rows, dtype=np.intp)
        jc = np.asarray(nlp.jac_cols, dtype=np.intp)
        self.jr, self.jc = jr, jc
        self.nh, self.nj = hr.size, jr.size
        self.k_rows = np.concatenate([hr, np.arange(n), n + jr, n + np.arange(m)])
        self.k_cols = np.concatenate([hc, np.arange(n), jc, n + np.arange(m)])
        blocks = None
        vb, cb = getattr(nlp, "var_block", None), getattr(nlp, "con_block", None)
        if vb is not None and cb is not None:
            blocks = np.concatenate([vb, cb])
        self.kkt = KKTSolver(n + m, self.k_rows, self.k_cols, blocks)
        self.target_inertia = (n, m)

        x0 = np.asarray(x0, dtype=float).copy()
        if x0.shape != (n,):
            raise ValueError(f"initial point has length {x0.size}, expected {n}")
        xl = np.asarray(nlp.x_lower, dtype=float)
        xu = np.asarray(nlp.x_upper, dtype=float)
        self.x0 = x0
        self.xl, self.xu = xl, xu

    # ------------------------------------------------------------------
    # callbacks

    def _timed(self, fn, *args):
        t = time.perf_counter()
        try:
            with np.errstate(all="ignore"):
                out = fn(*args)
        except EVAL_ERRORS as exc:
            raise _EvalFailure(str(exc)) from exc
        finally:
            self.callback_time += time.perf_counter() - t
        return out

    def eval_fg(self, x):
        f, c = self._timed(self.nlp.eval_fg, x)
        if not (np.isfinite(f) and np.all(np.isfinite(c))):
            raise _EvalFailure("non-finite objective or constraints")
        return float(f), np.asarray(c, dtype=float)

    def eval_all(self, x, y_unscaled, obj_factor):
        ev = self._timed(self.nlp.eval_all, x, y_unscaled, obj_factor)
        for k in ("gradient", "jacobian", "hessian"):
            if not np.all(np.isfinite(ev[k])):
                raise _EvalFailure(f"non-finite {k}")
        return ev

    # ------------------------------------------------------------------
    # scaled problem pieces

    def h_of(self, c, s):
        h = self.rs * (c - np.where(self.eq, self.cl, 0.0))
        h[self.ineq_rows] -= s
        return h

    def barrier(self, f, w, mu):
        val = self.osc * f
        if self.hasL.any():
            val -= mu * np.sum(np.log(w[self.hasL] - self.wl[self.hasL]))
        if self.hasU.any():
            val -= mu * np.sum(np.log(self.wu[self.hasU] - w[self.hasU]))
        return float(val)

    def grad_barrier(self, g, w, mu):
        gw = np.zeros(self.n_w)
        gw[:self.n] = self.osc * g
        gw[self.hasL] -= mu / (w[self.hasL] - self.wl[self.hasL])
        gw[self.hasU] += mu / (self.wu[self.hasU] - w[self.hasU])
        return gw

    def jt_times(self, jv, y):
        """J_w^T y over w = [x, s] (scaled Jacobian values ``jv``)."""
        out = np.zeros(self.n_w)
        out[:self.n] = np.bincount(self.jc, weights=jv * y[self.jr], minlength=self.n)
        out[self.n:] = -y[self.ineq_rows]
        return out

    def j_times(self, jv, dw):
        out = np.bincount(self.jr, weights=jv * dw[self.jc][:], minlength=self.m)
        out[self.ineq_rows] -= dw[self.n:]
        return out

    # ------------------------------------------------------------------

    def initialize(self):
        o = self.o
        n = self.n
        x = self.x0.copy()
        # scaling from the gradient at the (unpushed) start
        ev = self.eval_all(x, np.zeros(self.m), 1.0)
        self.osc = 1.0
        self.rs = np.ones(self.m)
        if o.nlp_scaling:
            gmax = float(np.max(np.abs(ev["gradient"]))) if n else 0.0
            if gmax > o.scaling_max_gradient:
                self.osc = o.scaling_max_gradient / gmax
            rmax = np.zeros(self.m)
            np.maximum.at(rmax, self.jr, np.abs(ev["jacobian"]))
            self.rs = np.where(rmax > o.scaling_max_gradient, o.scaling_max_gradient / np.maximum(rmax, 1e-300), 1.0)

        # variable bounds over w = [x, s]
        sl = self.rs[self.ineq_rows] * self.cl[self.ineq_rows]
        su = self.rs[self.ineq_rows] * self.cu[self.ineq_rows]
        self.wl = np.concatenate([self.xl, sl])
        self.wu = np.concatenate([self.xu, su])
        self.hasL = np.isfinite(self.wl)
        self.hasU = np.isfinite(self.wu)

        x = self._push(x, self.xl, self.xu)
        f, c = self.eval_fg(x)
        s = self._push(self.rs[self.ineq_rows] * c[self.ineq_rows], sl, su)
        w = np.concatenate([x, s])
        zl = np.where(self.hasL, 1.0, 0.0)
        zu = np.where(self.hasU, 1.0, 0.0)
        self.w, self.zl, self.zu = w, zl, zu
        self.f, self.c = f, c
        self.mu = o.mu_init
        self.y = np.zeros(self.m)
        ev = self.eval_all(x, np.zeros(self.m), self.osc)
        self._set_derivs(ev)
        self.y = self._ls_multipliers()
        h = self.h_of(c, s)
        th0 = float(np.sum(np.abs(h)))
        self.theta_max = 1e4 * max(1.0, th0)
        self.theta_min = 1e-4 * max(1.0, th0)
        self.filter = []
        self.delta_w_last = 0.0
        self.delta_w_prev = 0.0

    def _push(self, v, lo, up):
        k = self.o.bound_push
        v = v.copy()
        both = np.isfinite(lo) & np.isfinite(up)
        pl = np.where(both, np.minimum(k * np.maximum(1, np.abs(lo)), k * (up - lo)),
                      k * np.maximum(1, np.abs(lo)))
        pu = np.where(both, np.minimum(k * np.maximum(1, np.abs(up)), k * (up - lo)),
                      k * np.maximum(1, np.abs(up)))
        fl = np.isfinite(lo)
        fu = np.isfinite(up)
        v[fl] = np.maximum(v[fl], lo[fl] + pl[fl])
        v[fu] = np.minimum(v[fu], up[fu] - pu[fu])
        eq = both & (up - lo <= 0)
        v[eq] = lo[eq]
        return v

    def _set_derivs(self, ev):
        self.g = np.asarray(ev["gradient"], dtype=float)
        self.jv = self.rs[self.jr] * np.asarray(ev["jacobian"], dtype=float)
        self.hv = np.asarray(ev["hessian"], dtype=float)

    def _ls_multipliers(self):
        """Least-squares multiplier estimate; zero if it is too large."""
        n, m = self.n, self.m
        if m == 0:
            return np.zeros(0)
        dx = np.ones(n)
        dr = np.zeros(m)
        dr[self.ineq_rows] = -1.0  # slack block eliminated with unit weight
        vals = np.concatenate([np.zeros(self.nh), dx, self.jv, dr])
        try:
            fac = self.kkt.factorize(vals)
        except FactorizationError:
            return np.zeros(m)
        gw = np.zeros(self.n_w)
        gw[:n] = self.osc * self.g
        gw -= self.zl
        gw += self.zu
        rhs = np.concatenate([-gw[:n], np.zeros(m)])
        rhs[n + self.ineq_rows] += gw[n:]
        sol = fac.solve(rhs)
        y = sol[n:]
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 1e3:
            return np.zeros(m)
        return y

    # ------------------------------------------------------------------
    # optimality measures

    def errors(self, mu):
        w, zl, zu, y = self.w, self.zl, self.zu, self.y
        gw = np.zeros(self.n_w)
        gw[:self.n] = self.osc * self.g
        rd = gw + self.jt_times(self.jv, y) - zl + zu
        h = self.h_of(self.c, w[self.n:])
        inf_du = float(np.max(np.abs(rd))) if rd.size else 0.0
        inf_pr = float(np.max(np.abs(h))) if h.size else 0.0
        cl = np.where(self.hasL, (w - np.where(self.hasL, self.wl, 0)) * zl - mu, 0.0)
        cu = np.where(self.hasU, (np.where(self.hasU, self.wu, 0) - w) * zu - mu, 0.0)
        compl = float(max(np.max(np.abs(cl), initial=0.0), np.max(np.abs(cu), initial=0.0)))
        s_max = 100.0
        nz = int(self.hasL.sum() + self.hasU.sum())
        zsum = float(np.sum(np.abs(zl)) + np.sum(np.abs(zu)))
        s_d = max(s_max, (float(np.sum(np.abs(y))) + zsum) / max(1, self.m + nz)) / s_max
        s_c = max(s_max, zsum / max(1, nz)) / s_max
        return inf_pr, inf_du / s_d, compl / s_c, inf_du

    def constr_viol(self, c=None):
        c = self.c if c is None else c
        v = np.maximum(self.cl - c, 0.0)
        v = np.maximum(v, c - self.cu)
        return float(np.max(v)) if v.size else 0.0

    # ------------------------------------------------------------------
    # Newton system

    def sigmas(self):
        sig = np.zeros(self.n_w)
        sig[self.hasL] += self.zl[self.hasL] / (self.w[self.hasL] - self.wl[self.hasL])
        sig[self.hasU] += self.zu[self.hasU] / (self.wu[self.hasU] - self.w[self.hasU])
        return sig

    def kkt_values(self, sig, delta_w, delta_c):
        n, m = self.n, self.m
        dr = np.full(m, delta_c)
        dr[self.ineq_rows] += 1.0 / (sig[n:] + delta_w)
        return np.concatenate([self.hv, sig[:n] + delta_w, self.jv, -dr])

    def factorize_with_correction(self, sig):
        """Factor the KKT matrix, regularizing until the inertia is (n, m, 0)."""
        o = self.o
        delta_w, delta_c = 0.0, 0.0
        first = True
        if o.skip_zero_trial and self.delta_w_prev / 3.0 >= o.skip_zero_below:
            delta_w = self.delta_w_prev / 3.0
            first = False
        # zero-pivot threshold from the unregularized derivative values only
        ref = max([1.0] + [float(np.max(np.abs(a))) for a in (self.hv, self.jv) if a.size])
        zero_tol = 1e-18 * ref
        while True:
            vals = self.kkt_values(sig, delta_w, delta_c)
            try:
                pos, neg, zero = (fac := self.kkt.factorize(vals, zero_tol=zero_tol)).inertia
            except FactorizationError:
                fac, (pos, neg, zero) = None, (-1, -1, 1)
            if (pos, neg) == self.target_inertia and zero == 0:
                if delta_w > 0:
                    self.delta_w_last = delta_w
                self.delta_w_prev = delta_w
                return fac, vals, delta_w, delta_c
            if zero > 0 and self.m and delta_c == 0.0:
                delta_c = 1e-8 * self.mu ** 0.25
                # regularized pivots are at least about delta_c in magnitude
                zero_tol = min(zero_tol, 1e-3 * delta_c)
            if first:
                first = False
                if self.delta_w_last == 0.0:
                    delta_w = 1e-4
                else:
                    delta_w = max(o.delta_w_floor, self.delta_w_last / 3.0)
            else:
                delta_w *= 100.0 if self.delta_w_last == 0.0 else 8.0
            if delta_w > 1e40:
                raise FactorizationError("inertia correction failed")

    def solve_kkt(self, fac, vals, sig, delta_w, rw, rh):
        """Solve for (dw, dy) given residuals rw (over w) and rh (over rows)."""
        n = self.n
        rhs = np.concatenate([-rw[:n], -rh])
        d_s = sig[n:] + delta_w
        rhs[n + self.ineq_rows] -= rw[n:] / d_s
        K = lambda v: _sym_matvec(self.k_rows, self.k_cols, vals, v, n + self.m)  # noqa: E731
        sol = fac.solve(rhs)
        for _ in range(self.o.refine_steps):
            r = rhs - K(sol)
            if np.max(np.abs(r)) <= 1e-14 * max(1.0, np.max(np.abs(rhs))):
                break
            sol = sol + fac.solve(r)
        dw = np.empty(self.n_w)
        dw[:n] = sol[:n]
        dy = sol[n:]
        dw[n:] = (dy[self.ineq_rows] - rw[n:]) / d_s
        return dw, dy

    def bound_steps(self, dw, sig, mu):
        dzl = np.zeros(self.n_w)
        dzu = np.zeros(self.n_w)
        L, U = self.hasL, self.hasU
        gl = self.w[L] - self.wl[L]
        gu = self.wu[U] - self.w[U]
        dzl[L] = mu / gl - self.zl[L] - self.zl[L] / gl * dw[L]
        dzu[U] = mu / gu - self.zu[U] + self.zu[U] / gu * dw[U]
        return dzl, dzu

    def alpha_max(self, dw, tau):
        a = 1.0
        L, U = self.hasL, self.hasU
        if L.any():
            a = min(a, _fraction_to_boundary(self.w[L] - self.wl[L], dw[L], tau))
        if U.any():
            a = min(a, _fraction_to_boundary(self.wu[U] - self.w[U], -dw[U], tau))
        return a

    def alpha_z(self, dzl, dzu, tau):
        a = 1.0
        L, U = self.hasL, self.hasU
        if L.any():
            a = min(a, _fraction_to_boundary(self.zl[L], dzl[L], tau))
        if U.any():
            a = min(a, _fraction_to_boundary(self.zu[U], dzu[U], tau))
        return a

    # ------------------------------------------------------------------
    # filter

    def in_filter(self, theta, phi):
        return any(theta >= tf and phi >= pf for tf, pf in self.filter)

    def acceptable(self, theta, phi, theta_k, phi_k, gd, alpha):
        """(accepted, f_type)."""
        if theta > self.theta_max:
            return False, False
        switching = gd < 0 and alpha * (-gd) ** 2.3 > 1.0 * theta_k ** 1.1
        if theta_k <= self.theta_min and switching:
            ok = phi <= phi_k + 1e-8 * alpha * gd
            return ok and not self.in_filter(theta, phi), True
        ok = theta <= (1 - 1e-5) * theta_k or phi <= phi_k - 1e-8 * theta_k
        return ok and not self.in_filter(theta, phi), False

    # ------------------------------------------------------------------

    def run(self):
        o = self.o
        history = []
        status, message = "max_iter", ""
        try:
            self.initialize()
        except _EvalFailure as exc:
            return self._finish("eval_failure", f"evaluation failed at the initial point: {exc}", history, 0)
        tau = max(o.tau_min, 1.0 - self.mu)
        best = None
        f_hist = []
        near_tol = o.constr_tol if o.early_stop_constr_tol is None else max(o.constr_tol, o.early_stop_constr_tol)
        it = 0
        while True:
            inf_pr, inf_du, compl, inf_du_raw = self.errors(0.0)
            viol = self.constr_viol()
            history.append({"iter": it, "objective": self.f, "inf_pr": viol, "inf_du": inf_du,
                            "mu": self.mu, "alpha_pr": getattr(self, "_last_alpha", 0.0),
                            "alpha_du": getattr(self, "_last_alpha_z", 0.0),
                            "delta_w": getattr(self, "_last_dw", 0.0)})
            if o.print_level:
                log.info("iter %4d f %.8e inf_pr %.2e inf_du %.2e mu %.1e a %.2e dw %.1e", it, self.f, viol, inf_du, self.mu, history[-1]["alpha_pr"], history[-1]["delta_w"])
            if viol <= near_tol and (best is None or self.f < best[0]):
                best = (self.f, self.w.copy(), self.y.copy(), self.zl.copy(), self.zu.copy(), self.c.copy())
            if inf_du <= o.tol and compl <= o.tol and viol <= o.constr_tol:
                status = "optimal"
                break
            # no new objective record over the last window of iterations
            f_hist.append(self.f)
            win = o.early_stop_window
            if win and len(f_hist) > win and viol <= near_tol:
                before, recent = min(f_hist[:-win]), min(f_hist[-win:])
                if before - recent <= o.early_stop_rtol * max(abs(recent), 1e-12):
                    status, message = "acceptable", "no significant objective improvement"
                    break
            if it >= o.max_iterations:
                status = "max_iter"
                break
            # barrier update
            while True:
                e_mu = max(self.errors(self.mu)[:3])
                if e_mu > o.kappa_eps * self.mu or self.mu <= o.tol / 10:
                    break
                new_mu = max(o.tol / 10, min(o.kappa_mu * self.mu, self.mu ** o.theta_mu))
                if new_mu >= self.mu:
                    break
                self.mu = new_mu
                tau = max(o.tau_min, 1.0 - self.mu)
                self.filter = []
            try:
                ok = self.step(tau)
            except FactorizationError as exc:
                status, message = "infeasible", f"factorization failed: {exc}"
                break
            except _EvalFailure as exc:
                status, message = "eval_failure", str(exc)
                break
            if ok == "eval_failure":
                status, message = "eval_failure", "repeated evaluation failures during line search"
                break
            if ok == "restoration_failed":
                status, message = "infeasible", "restoration phase could not reduce infeasibility"
                break
            it += 1
        if status in ("max_iter", "acceptable"):
            # a nearly feasible last iterate usually beats an old feasible one: project it first
            if self.constr_viol() > o.constr_tol and self.polish():
                message = (message + "; " if message else "") + "feasibility restored by projection"
            if best is not None and (best[0] < self.f or self.constr_viol() > near_tol):
                self.f, self.w, self.y, self.zl, self.zu, self.c = best
                if self.constr_viol() > o.constr_tol and self.polish():
                    message = (message + "; " if message else "") + "feasibility restored by projection"
        return self._finish(status, message, history, it)

    def polish(self) -> bool:
        """Minimum-norm Gauss-Newton projection of x onto c(x) = c_bounds.

        Only for problems whose constraints are all equalities and whose variables
        are unbounded.  Returns True when the violation ends up within constr_tol.
        """
        o = self.o
        n, m = self.n, self.m
        if not m or self.n_s or self.hasL.any() or self.hasU.any() or o.polish_steps <= 0:
            return False
        x, f, c = self.w[:n].copy(), self.f, self.c
        viol = self.constr_viol(c)
        try:
            for _ in range(o.polish_steps):
                if viol <= 0.1 * o.constr_tol:
                    break
                self._set_derivs(self.eval_all(x, np.zeros(m), self.osc))
                vals = np.concatenate([np.zeros(self.nh), np.ones(n), self.jv, np.full(m, -1e-14)])
                sol = self.kkt.factorize(vals).solve(np.concatenate([np.zeros(n), -self.h_of(c, self.w[n:])]))
                dx = sol[:n]
                alpha = 1.0
                while alpha > 1e-4:
                    f_t, c_t = self.eval_fg(x + alpha * dx)
                    v_t = self.constr_viol(c_t)
                    if v_t < viol:
                        break
                    alpha *= 0.5
                else:
                    break
                x, f, c, viol = x + alpha * dx, f_t, c_t, v_t
        except (FactorizationError, _EvalFailure):
            pass
        if viol < self.constr_viol():
            self.w = np.concatenate([x, self.w[n:]])
            self.f, self.c = f, c
        return self.constr_viol() <= o.constr_tol

    def _finish(self, status, message, history, it):
        total = time.perf_counter() - self.t_start
        n = self.n
        w = getattr(self, "w", np.concatenate([self.x0, np.zeros(self.n_s)]))
        rs = getattr(self, "rs", np.ones(self.m))
        osc = getattr(self, "osc", 1.0)
        y = getattr(self, "y", np.zeros(self.m))
        zl = getattr(self, "zl", np.zeros(self.n_w))
        zu = getattr(self, "zu", np.zeros(self.n_w))
        inf_pr = self.constr_viol() if hasattr(self, "c") else np.inf
        inf_du = self.errors(0.0)[1] if hasattr(self, "g") and hasattr(self, "hasL") else np.inf
        return Solution(
            status=status, x=w[:n].copy(), multipliers=y * rs / osc,
            z_lower=zl[:n] / osc, z_upper=zu[:n] / osc,
            objective=float(getattr(self, "f", np.nan)), iterations=it, history=history,
            times={"total": total, "callbacks": self.callback_time,
                   "solver_core": total - self.callback_time},
            inf_pr=inf_pr, inf_du=inf_du, message=message)

    # ------------------------------------------------------------------

    def step(self, tau):
        mu = self.mu
        n = self.n
        sig = self.sigmas()
        fac, vals, delta_w, delta_c = self.factorize_with_correction(sig)
        self._last_dw = delta_w
        gphi = self.grad_barrier(self.g, self.w, mu)
        rw = gphi + self.jt_times(self.jv, self.y)
        h = self.h_of(self.c, self.w[n:])
        dw, dy = self.solve_kkt(fac, vals, sig, delta_w, rw, h)
        dzl, dzu = self.bound_steps(dw, sig, mu)
        a_max = self.alpha_max(dw, tau)
        a_z = self.alpha_z(dzl, dzu, tau)

        theta_k = float(np.sum(np.abs(h)))
        phi_k = self.barrier(self.f, self.w, mu)
        gd = float(gphi @ dw)
        if gd < 0:
            a_min = 0.05 * min(1e-5, 1e-8 * theta_k / (-gd), theta_k ** 1.1 / (-gd) ** 2.3)
        else:
            a_min = 0.05 * 1e-5
        alpha = a_max
        failures = 0
        first = True
        while True:
            w_t = self.w + alpha * dw
            try:
                f_t, c_t = self.eval_fg(w_t[:n])
            except _EvalFailure:
                failures += 1
                if failures > self.o.max_eval_halvings:
                    return "eval_failure"
                alpha *= 0.5
                first = False
                continue
            theta_t = float(np.sum(np.abs(self.h_of(c_t, w_t[n:]))))
            phi_t = self.barrier(f_t, w_t, mu)
            ok, f_type = self.acceptable(theta_t, phi_t, theta_k, phi_k, gd, alpha)
            if ok:
                break
            if first and theta_t >= theta_k and self.o.max_soc:
                soc = self.second_order_correction(fac, vals, sig, delta_w, rw, h, a_max, c_t, w_t,
                                                   tau, theta_k, phi_k, gd, mu)
                if soc is not None:
                    w_t, f_t, c_t, dy_soc, f_type, alpha_soc = soc
                    dw = (w_t - self.w) / max(alpha_soc, 1e-300)
                    dy = dy_soc
                    alpha = alpha_soc
                    dzl, dzu = self.bound_steps(dw, sig, mu)
                    a_z = self.alpha_z(dzl, dzu, tau)
                    break
            first = False
            alpha *= 0.5
            if alpha < a_min:
                if self.soft_restoration(dw, dy, a_max, a_z, dzl, dzu, mu):
                    return "ok"
                return self.restoration(tau)
        self.soft_count = 0
        if not f_type:
            self.filter.append(((1 - 1e-5) * theta_k, phi_k - 1e-8 * theta_k))
        self.accept(w_t, f_t, c_t, alpha, dy, a_z, dzl, dzu, mu)
        return "ok"

    def second_order_correction(self, fac, vals, sig, delta_w, rw, h, a_max, c_t, w_t, tau,
                                theta_k, phi_k, gd, mu):
        n = self.n
        c_soc = a_max * h + self.h_of(c_t, w_t[n:])
        theta_old = theta_k
        for _ in range(self.o.max_soc):
            dw, dy = self.solve_kkt(fac, vals, sig, delta_w, rw, c_soc)
            a_soc = self.alpha_max(dw, tau)
            w_s = self.w + a_soc * dw
            try:
                f_s, c_s = self.eval_fg(w_s[:n])
            except _EvalFailure:
                return None
            h_s = self.h_of(c_s, w_s[n:])
            theta_s = float(np.sum(np.abs(h_s)))
            phi_s = self.barrier(f_s, w_s, mu)
            ok, f_type = self.acceptable(theta_s, phi_s, theta_k, phi_k, gd, a_max)
            if ok:
                return w_s, f_s, c_s, dy, f_type, a_soc
            if theta_s > 0.99 * theta_old:
                return None
            theta_old = theta_s
            c_soc = a_soc * c_soc + h_s
        return None

    def accept(self, w_t, f_t, c_t, alpha, dy, a_z, dzl, dzu, mu):
        n = self.n
        self.w = w_t
        self.f, self.c = f_t, c_t
        self.y = self.y + alpha * dy
        self.zl = self.zl + a_z * dzl
        self.zu = self.zu + a_z * dzu
        k_sig = 1e10
        L, U = self.hasL, self.hasU
        if L.any():
            gl = self.w[L] - self.wl[L]
            self.zl[L] = np.clip(self.zl[L], mu / (k_sig * gl), k_sig * mu / gl)
        if U.any():
            gu = self.wu[U] - self.w[U]
            self.zu[U] = np.clip(self.zu[U], mu / (k_sig * gu), k_sig * mu / gu)
        self._last_alpha, self._last_alpha_z = alpha, a_z
        ev = self.eval_all(self.w[:n], self.y * self.rs, self.osc)
        self._set_derivs(ev)

    def soft_restoration(self, dw, dy, a_max, a_z, dzl, dzu, mu, max_count=10):
        """Take the full step if it reduces the barrier primal-dual error."""
        if getattr(self, "soft_count", 0) >= max_count:
            return False
        e_k = max(self.errors(mu)[:3])
        saved = (self.w, self.f, self.c, self.y, self.zl, self.zu, self.g, self.jv, self.hv,
                 getattr(self, "_last_alpha", 0.0), getattr(self, "_last_alpha_z", 0.0))
        try:
            f_t, c_t = self.eval_fg((self.w + a_max * dw)[:self.n])
            self.accept(self.w + a_max * dw, f_t, c_t, a_max, dy, a_z, dzl, dzu, mu)
        except _EvalFailure:
            (self.w, self.f, self.c, self.y, self.zl, self.zu, self.g, self.jv, self.hv,
             self._last_alpha, self._last_alpha_z) = saved
            return False
        if max(self.errors(mu)[:3]) <= 0.9999 * e_k:
            self.soft_count = getattr(self, "soft_count", 0) + 1
            return True
        (self.w, self.f, self.c, self.y, self.zl, self.zu, self.g, self.jv, self.hv,
         self._last_alpha, self._last_alpha_z) = saved
        return False

    # ------------------------------------------------------------------

    def restoration(self, tau, max_steps=50):
        """Reduce the constraint violation by regularized Gauss-Newton steps."""
        n, m = self.n, self.m
        mu = self.mu
        h = self.h_of(self.c, self.w[n:])
        theta0 = float(np.sum(np.abs(h)))
        phi0 = self.barrier(self.f, self.w, mu)
        if m == 0:
            return "restoration_failed"
        self.filter.append(((1 - 1e-5) * theta0, phi0 - 1e-8 * theta0))
        zeta = np.sqrt(mu)
        for _ in range(max_steps):
            h = self.h_of(self.c, self.w[n:])
            theta = float(np.sum(np.abs(h)))
            sig = self.sigmas()
            dvals = np.concatenate([np.zeros(self.nh), sig[:n] + zeta, self.jv,
                                    -np.full(m, 1e-8)])
            dvals[-m:][self.ineq_rows] -= 1.0 / (sig[n:] + zeta)
            try:
                fac = self.kkt.factorize(dvals)
            except FactorizationError:
                return "restoration_failed"
            rw = np.zeros(self.n_w)
            dw, dy = self.solve_kkt(fac, dvals, sig, zeta, rw, h)
            alpha = self.alpha_max(dw, tau)
            while alpha > 1e-10:
                w_t = self.w + alpha * dw
                try:
                    f_t, c_t = self.eval_fg(w_t[:n])
                except _EvalFailure:
                    alpha *= 0.5
                    continue
                theta_t = float(np.sum(np.abs(self.h_of(c_t, w_t[n:]))))
                if theta_t <= (1 - 1e-4 * alpha) * theta:
                    break
                alpha *= 0.5
            else:
                log.debug("restoration: no decrease from theta %.3e", theta)
                return "restoration_failed"
            phi_t = self.barrier(f_t, w_t, mu)
            log.debug("restoration: theta %.3e -> %.3e (alpha %.2e)", theta, theta_t, alpha)
            self.w, self.f, self.c = w_t, f_t, c_t
            L, U = self.hasL, self.hasU
            self.zl[L] = np.minimum(self.zl[L], 1e10 * mu / (self.w[L] - self.wl[L]))
            self.zu[U] = np.minimum(self.zu[U], 1e10 * mu / (self.wu[U] - self.w[U]))
            if theta_t <= 0.9 * theta0 and not self.in_filter(theta_t, phi_t):
                break
            # relinearize for the next Gauss-Newton step
            self._set_derivs(self.eval_all(self.w[:n], np.zeros(m), self.osc))
        else:
            return "restoration_failed"
        ev = self.eval_all(self.w[:n], np.zeros(m), self.osc)
        self._set_derivs(ev)
        self.y = self._ls_multipliers()
        self._last_alpha, self._last_alpha_z = 0.0, 0.0
        return "ok"


def solve(nlp, initial_point, options: Optional[SolverOptions] = None) -> Solution:
    """Run the interior-point method from ``initial_point``."""
    return _InteriorPoint(nlp, initial_point, options or SolverOptions()).run()


# --------------------------------------------------------------------------


class DenseNLP:
    """Small NLP from dense callables, mainly for tests and examples.

    ``f(x)``, ``grad(x)``, ``c(x)``, ``jac(x)`` (m x n) and
    ``hess(x, y, obj_factor)`` (full n x n Lagrangian Hessian).
    """

    def __init__(self, n, f, grad, c=None, jac=None, hess=None, c_lower=(), c_upper=(),
                 x_lower=None, x_upper=None):
        self.n = int(n)
        self._f, self._grad = f, grad
        self._c = c or (lambda x: np.zeros(0))
        self._jac = jac or (lambda x: np.zeros((0, self.n)))
        self._hess = hess
        self.c_lower = np.asarray(c_lower, dtype=float)
        self.c_upper = np.asarray(c_upper, dtype=float)
        self.m = self.c_lower.size
        self.x_lower = np.full(self.n, -np.inf) if x_lower is None else np.asarray(x_lower, dtype=float)
        self.x_upper = np.full(self.n, np.inf) if x_upper is None else np.asarray(x_upper, dtype=float)
        self.jac_rows, self.jac_cols = [a.ravel() for a in np.indices((self.m, self.n))]
        self.hess_rows, self.hess_cols = np.tril_indices(self.n)

    def eval_fg(self, x):
        return float(self._f(x)), np.asarray(self._c(x), dtype=float).reshape(self.m)

    def eval_all(self, x, y=None, obj_factor=1.0):
        y = np.zeros(self.m) if y is None else y
        H = self._hess(x, y, obj_factor)
        return {"objective": float(self._f(x)), "constraints": self.eval_fg(x)[1],
                "gradient": np.asarray(self._grad(x), dtype=float),
                "jacobian": np.asarray(self._jac(x), dtype=float).reshape(self.m, self.n).ravel(),
                "hessian": np.asarray(H, dtype=float)[self.hess_rows, self.hess_cols]}
