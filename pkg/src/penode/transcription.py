"""Radau IIA transcription of a dynamic optimization problem into a sparse NLP.

Variable order is node-major (all states of node t_00, then t_01, ...)
followed by the parameters.  Constraint rows are grouped per collocation
node as [d_x dynamics rows, d_g path rows]; the boundary rows r come last.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .collocation import scheme
from .mesh import DecisionLayout, Mesh, interval_of_nodes, node_times

THREADS_ENV = "PENODE_THREADS"
CHUNK_SIZE = 1024


class TranscriptionError(ValueError):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TrajectoryData:
    """Sampled reference signals on a common, increasing time grid."""

    times: np.ndarray
    channels: Dict[str, np.ndarray]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise TranscriptionError("sample times must be strictly increasing")
        ch = {}
        for k, v in self.channels.items():
            v = np.asarray(v, dtype=float)
            if v.shape != t.shape:
                raise TranscriptionError(f"channel {k!r} has {v.shape} samples, expected {t.shape}")
            ch[k] = v
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "channels", ch)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def tf(self) -> float:
        return float(self.times[-1])

    def window(self, t0, tf) -> "TrajectoryData":
        """Samples with t0 <= t <= tf."""
        sel = (self.times >= t0 - 1e-12) & (self.times <= tf + 1e-12)
        return TrajectoryData(self.times[sel], {k: v[sel] for k, v in self.channels.items()})

    def std(self, name) -> float:
        return float(np.std(self.channels[name]))


def interpolate_data(data: Optional[TrajectoryData], t) -> Dict[str, np.ndarray]:
    """Piecewise-linear interpolation of every channel at times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if data is None:
        return {}
    slack = 1e-9 * max(1.0, abs(data.tf - data.t0))
    if t.size and (t.min() < data.t0 - slack or t.max() > data.tf + slack):
        raise TranscriptionError(
            f"times [{t.min()}, {t.max()}] outside data horizon [{data.t0}, {data.tf}]")
    tc = np.clip(t, data.t0, data.tf)
    return {k: np.interp(tc, data.times, v) for k, v in data.channels.items()}


@dataclass
class CallbackStats:
    seconds: float = 0.0
    calls: int = 0

    def add(self, dt):
        self.seconds += dt
        self.calls += 1


def _coo_merge(rows, cols):
    """Unique (row, col) pairs in row-major order and the inverse map."""
    n_cols = int(cols.max()) + 1 if cols.size else 1
    key = rows.astype(np.int64) * n_cols + cols
    uniq, inv = np.unique(key, return_inverse=True)
    return (uniq // n_cols).astype(np.intp), (uniq % n_cols).astype(np.intp), inv


class SparseNLP:
    """min f(z) s.t. c_L <= c(z) <= c_U, z_L <= z <= z_U with exact sparse derivatives.

    Jacobian entries are (``jac_rows``, ``jac_cols``); the Lagrangian Hessian
    is stored as its lower triangle (``hess_rows >= hess_cols``).
    """

    def __init__(self, model, mesh: Mesh, data: Optional[TrajectoryData] = None,
                 threads: Optional[int] = None, chunk_size: int = CHUNK_SIZE, block_intervals=None):
        self.model = model
        self.mesh = mesh
        self.data = data
        self.threads = threads or default_threads()
        self.chunk_size = int(chunk_size)
        self.stats = CallbackStats()
        d_x, d_p, d_g, d_r = model.d_x, model.d_p, model.d_g, model.d_r
        self.layout = DecisionLayout(mesh, d_x, d_p)
        lay = self.layout
        self.n = lay.var_count
        n_col = int(mesh.stages.sum())
        self.n_col = n_col
        self.m = n_col * (d_x + d_g) + d_r
        self.objective_scale = 1.0 / (mesh.tf - mesh.t0)

        schemes = {int(m): scheme(int(m)) for m in np.unique(mesh.stages)}
        times = node_times(mesh, schemes)
        self.times = times
        interval, stage = interval_of_nodes(mesh)
        self.node_interval = interval
        dt = mesh.steps[interval]
        self.node_dt = dt
        b = np.array([schemes[int(mesh.stages[i])].weights[j - 1] for i, j in zip(interval, stage)])
        self.quad_weights = dt * b
        t_col = times[1:]
        self.t_col = t_col

        if data is not None and (data.t0 > mesh.t0 + 1e-9 or data.tf < mesh.tf - 1e-9):
            raise TranscriptionError("data horizon shorter than mesh horizon")
        self.node_data = interpolate_data(data, t_col) if data is not None else {}
        u = model.inputs_at(t_col)
        self.node_inputs = np.array(u).reshape(len(u), n_col)

        # collocation stencils (padded to the widest scheme)
        width = int(mesh.stages.max()) + 1
        stencil = np.zeros((n_col, width), dtype=np.intp)
        coef = np.zeros((n_col, width))
        mask = np.zeros((n_col, width), dtype=bool)
        for n, (i, j) in enumerate(zip(interval, stage)):
            mi = int(mesh.stages[i])
            stencil[n, :mi + 1] = lay.node_index(i, np.arange(mi + 1))
            coef[n, :mi + 1] = schemes[mi].diff_matrix[j - 1]
            mask[n, :mi + 1] = True
        self.stencil, self.stencil_coef, self.stencil_mask = stencil, coef, mask

        # patterns
        self.pattern = ad.detect_sparsity(model)
        self.bnd_deps, self.bnd_pairs = ad.detect_boundary_sparsity(model)
        self._build_jacobian_structure()
        self._build_hessian_structure()

        # bounds
        self.x_lower = np.full(self.n, -np.inf)
        self.x_upper = np.full(self.n, np.inf)
        per_node_lo = np.concatenate([np.zeros(d_x), model.g_lower])
        per_node_up = np.concatenate([np.zeros(d_x), model.g_upper])
        self.c_lower = np.concatenate([np.tile(per_node_lo, n_col), model.r_lower])
        self.c_upper = np.concatenate([np.tile(per_node_up, n_col), model.r_upper])

        # block hints for the KKT factorization: groups of intervals, border = -1
        if block_intervals is None:
            block_intervals = max(1, 24 // max(1, int(mesh.stages.max()) * (d_x + d_g)))
        self.block_intervals = block_intervals
        node_block = np.empty(lay.node_count, dtype=np.intp)
        # the initial node joins the border: its states are often only fixed by boundary
        # rows, and each interval block then has a square collocation Jacobian
        node_block[0] = -1
        node_block[1:] = interval // block_intervals
        self.var_block = np.concatenate([np.repeat(node_block, d_x), np.full(d_p, -1)])
        row_block = np.repeat(interval // block_intervals, d_x + d_g)
        self.con_block = np.concatenate([row_block, np.full(d_r, -1)]).astype(np.intp)

    # ------------------------------------------------------------------
    # structure

    def _local_to_global(self, local, node_flat):
        """Global columns for local node variables (states, then params)."""
        d_x = self.model.d_x
        local = np.asarray(local)
        return np.where(local[:, None] < d_x,
                        node_flat[None, :] * d_x + local[:, None],
                        self.layout.param_offset + local[:, None] - d_x)

    def _boundary_to_global(self, local):
        d_x = self.model.d_x
        local = np.asarray(local, dtype=np.intp)
        last = self.layout.node_count - 1
        return np.where(local < d_x, local,
                        np.where(local < 2 * d_x, last * d_x + local - d_x,
                                 self.layout.param_offset + local - 2 * d_x))

    def _build_jacobian_structure(self):
        d_x, d_g = self.model.d_x, self.model.d_g
        n_col = self.n_col
        per = d_x + d_g
        node_flat = np.arange(1, n_col + 1)
        rows, cols = [], []
        # stencil
        ms = self.stencil_mask
        for s in range(d_x):
            r = np.broadcast_to((np.arange(n_col) * per + s)[:, None], ms.shape)[ms]
            c = (self.stencil * d_x + s)[ms]
            rows.append(r)
            cols.append(c)
        self._n_stencil = sum(r.size for r in rows)
        self._stencil_vals = np.concatenate([self.stencil_coef[ms]] * d_x)
        # f and g gradients
        for k in range(d_x + d_g):
            deps = self.pattern.deps[1 + k]
            r = np.broadcast_to(np.arange(n_col) * per + k, (deps.size, n_col))
            rows.append(r.ravel())
            cols.append(self._local_to_global(deps, node_flat).ravel())
        # boundary rows
        r0 = n_col * per
        for k in range(self.model.d_r):
            deps = self.bnd_deps[1 + k]
            rows.append(np.full(deps.size, r0 + k))
            cols.append(self._boundary_to_global(deps))
        rows = np.concatenate(rows).astype(np.intp)
        cols = np.concatenate(cols).astype(np.intp)
        self.jac_rows, self.jac_cols, self._jac_inv = _coo_merge(rows, cols)
        self.jac_nnz = self.jac_rows.size

    def _build_hessian_structure(self):
        d_x = self.model.d_x
        n_col = self.n_col
        node_flat = np.arange(1, n_col + 1)
        po = self.layout.param_offset
        rows, cols = [], []
        npairs = self.pattern.node_pairs
        a = self._local_to_global(npairs[:, 0], node_flat)
        b = self._local_to_global(npairs[:, 1], node_flat)
        rows.append(np.maximum(a, b).ravel())
        cols.append(np.minimum(a, b).ravel())
        pp = self.pattern.param_pairs
        rows.append(po + pp[:, 0] - d_x)
        cols.append(po + pp[:, 1] - d_x)
        ga = self._boundary_to_global(self.bnd_pairs[:, 0])
        gb = self._boundary_to_global(self.bnd_pairs[:, 1])
        rows.append(np.maximum(ga, gb))
        cols.append(np.minimum(ga, gb))
        rows = np.concatenate(rows).astype(np.intp)
        cols = np.concatenate(cols).astype(np.intp)
        self.hess_rows, self.hess_cols, self._hess_inv = _coo_merge(rows, cols)
        self.hess_nnz = self.hess_rows.size

    # ------------------------------------------------------------------
    # helpers

    def split(self, z):
        """(states (node_count, d_x), params (d_p,))."""
        z = np.asarray(z, dtype=float)
        po = self.layout.param_offset
        return z[:po].reshape(self.layout.node_count, self.model.d_x), z[po:]

    def pack(self, states, params):
        return np.concatenate([np.asarray(states, dtype=float).ravel(),
                               np.asarray(params, dtype=float).ravel()])

    def _chunks(self):
        n = self.n_col
        return [slice(s, min(s + self.chunk_size, n)) for s in range(0, n, self.chunk_size)]

    def _map(self, fn, items, threads):
        threads = threads or self.threads
        if threads <= 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    def _chunk_args(self, X, sl):
        x = X[1 + sl.start:1 + sl.stop].T
        u = list(self.node_inputs[:, sl])
        data = {k: v[sl] for k, v in self.node_data.items()}
        return x, u, self.t_col[sl], data

    def _node_error(self, exc, sl):
        if isinstance(exc, ad.EvaluationError) and exc.node is not None:
            exc.node = exc.node + sl.start + 1
        return exc

    def _dyn_part(self, X):
        ms = self.stencil_mask
        dx = np.zeros((self.n_col, self.model.d_x))
        for k in range(ms.shape[1]):
            dx += self.stencil_coef[:, k, None] * X[self.stencil[:, k]]
        return dx

    # ------------------------------------------------------------------
    # evaluation

    def eval_fg(self, z, threads=None):
        """Objective and constraint values."""
        t_start = time.perf_counter()
        try:
            return self._eval_fg(z, threads)
        finally:
            self.stats.add(time.perf_counter() - t_start)

    def _eval_fg(self, z, threads):
        model = self.model
        d_x, d_g = model.d_x, model.d_g
        X, p = self.split(z)
        plist = list(p)

        def work(sl):
            x, u, t, data = self._chunk_args(X, sl)
            try:
                return ad.eval_values(model, x, u, t, plist, data)
            except ad.EvaluationError as exc:
                raise self._node_error(exc, sl)

        vals = np.concatenate(self._map(work, self._chunks(), threads), axis=1)
        bvals = ad.boundary_values(model, X[0], X[-1], p)
        sigma = self.objective_scale
        obj = sigma * (float(np.dot(self.quad_weights, vals[0])) + bvals[0])
        c = np.empty(self.m)
        per = d_x + d_g
        body = c[:self.n_col * per].reshape(self.n_col, per)
        body[:, :d_x] = self._dyn_part(X) - self.node_dt[:, None] * vals[1:1 + d_x].T
        body[:, d_x:] = vals[1 + d_x:].T
        c[self.n_col * per:] = bvals[1:]
        return obj, c

    def objective(self, z):
        return self.eval_fg(z)[0]

    def constraints(self, z):
        return self.eval_fg(z)[1]

    def eval_all(self, z, multipliers=None, obj_factor=1.0, threads=None):
        """Objective, constraints, gradient, Jacobian values and Hessian values.

        The Hessian is that of ``obj_factor * f + multipliers . c`` (lower triangle).
        """
        t_start = time.perf_counter()
        try:
            return self._eval_all(z, multipliers, obj_factor, threads)
        finally:
            self.stats.add(time.perf_counter() - t_start)

    def _eval_all(self, z, lam, obj_factor, threads):
        model = self.model
        d_x, d_g, d_p = model.d_x, model.d_g, model.d_p
        per = d_x + d_g
        n_col = self.n_col
        sigma = self.objective_scale
        lam = np.zeros(self.m) if lam is None else np.asarray(lam, dtype=float)
        lam_body = lam[:n_col * per].reshape(n_col, per)
        X, p = self.split(z)
        plist = list(p)
        pattern = self.pattern
        weights_all = np.empty((1 + per, n_col))
        weights_all[0] = obj_factor * sigma * self.quad_weights
        weights_all[1:1 + d_x] = -self.node_dt * lam_body[:, :d_x].T
        weights_all[1 + d_x:] = lam_body[:, d_x:].T

        def work(sl):
            x, u, t, data = self._chunk_args(X, sl)
            try:
                return ad.eval_bundle(model, x, u, t, plist, data, weights_all[:, sl], pattern)
            except ad.EvaluationError as exc:
                raise self._node_error(exc, sl)

        bundles = self._map(work, self._chunks(), threads)
        vals = np.concatenate([bd.values for bd in bundles], axis=1)
        jac_parts = [np.concatenate([bd.jacobian[k][1] for bd in bundles], axis=1)
                     for k in range(1 + per)]
        hess_node = np.concatenate([bd.hess_node for bd in bundles], axis=1)
        hess_param = np.zeros(self.pattern.param_pairs.shape[0])
        for bd in bundles:
            hess_param += bd.hess_param

        bw = np.concatenate([[obj_factor * sigma], lam[n_col * per:]])
        bvals, bgrads, bhess = ad.eval_boundary(model, X[0], X[-1], p, bw)

        obj = sigma * (float(np.dot(self.quad_weights, vals[0])) + bvals[0])
        c = np.empty(self.m)
        body = c[:n_col * per].reshape(n_col, per)
        body[:, :d_x] = self._dyn_part(X) - self.node_dt[:, None] * vals[1:1 + d_x].T
        body[:, d_x:] = vals[1 + d_x:].T
        c[n_col * per:] = bvals[1:]

        # gradient of the objective
        node_flat = np.arange(1, n_col + 1)
        deps0 = pattern.deps[0]
        grad = np.zeros(self.n)
        if deps0.size:
            gi = self._local_to_global(deps0, node_flat).ravel()
            gv = (jac_parts[0] * (sigma * self.quad_weights)).ravel()
            grad += np.bincount(gi, weights=gv, minlength=self.n)
        grad += np.bincount(self._boundary_to_global(np.arange(bgrads.shape[1])),
                            weights=sigma * bgrads[0], minlength=self.n)

        # Jacobian values in construction order, then merged
        parts = [self._stencil_vals]
        for k in range(per):
            g = jac_parts[1 + k]
            parts.append((g * -self.node_dt if k < d_x else g).ravel())
        for k in range(model.d_r):
            parts.append(bgrads[1 + k, self.bnd_deps[1 + k]])
        jac = np.bincount(self._jac_inv, weights=np.concatenate(parts), minlength=self.jac_nnz)

        bp = self.bnd_pairs
        hparts = [hess_node.ravel(), hess_param, bhess[bp[:, 0], bp[:, 1]]]
        hess = np.bincount(self._hess_inv, weights=np.concatenate(hparts), minlength=self.hess_nnz)
        return {"objective": obj, "constraints": c, "gradient": grad,
                "jacobian": jac, "hessian": hess}

    # ------------------------------------------------------------------
    # sparse views

    def jacobian_matrix(self, values):
        import scipy.sparse as sp
        return sp.csr_matrix((values, (self.jac_rows, self.jac_cols)), shape=(self.m, self.n))

    def hessian_matrix(self, values):
        """Full symmetric Hessian as a sparse matrix."""
        import scipy.sparse as sp
        lower = sp.coo_matrix((values, (self.hess_rows, self.hess_cols)), shape=(self.n, self.n))
        diag = sp.diags(lower.diagonal())
        return (lower + lower.T - diag).tocsr()

    def dump(self, z=None) -> dict:
        """JSON-friendly description: sizes, bounds, sparsity and optionally one evaluation."""
        out = {
            "var_count": self.n, "con_count": self.m,
            "jac_nnz": int(self.jac_nnz), "hess_nnz": int(self.hess_nnz),
            "c_lower": _finite_list(self.c_lower), "c_upper": _finite_list(self.c_upper),
            "jac_rows": self.jac_rows.tolist(), "jac_cols": self.jac_cols.tolist(),
            "hess_rows": self.hess_rows.tolist(), "hess_cols": self.hess_cols.tolist(),
        }
        if z is not None:
            ev = self.eval_all(z)
            out["evaluation"] = {k: (float(v) if np.ndim(v) == 0 else v.tolist()) for k, v in ev.items()}
        return out


def _finite_list(a):
    return [None if not np.isfinite(v) else float(v) for v in a]


def transcribe(model, mesh: Mesh, schemes=None, data: Optional[TrajectoryData] = None,
               **kwargs) -> SparseNLP:
    """Build the sparse NLP for ``model`` on ``mesh``.

    ``schemes`` is accepted for symmetry with ``node_times``; the cached
    schemes from ``collocation.scheme`` are always used.
    """
    return SparseNLP(model, mesh, data, **kwargs)


def eval_all(nlp: SparseNLP, z, multipliers=None, obj_factor=1.0, threads=None):
    return nlp.eval_all(z, multipliers, obj_factor, threads)
