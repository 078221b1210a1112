"""Exact first and second derivatives of node functions, evaluated for many nodes at once.

Two kinds of active values flow through model code written with ordinary
arithmetic and the elementary functions defined here:

``Jet``
    value, gradient and Hessian of an expression with respect to the local
    variables of a node (states first, then parameters).  The value axis is
    the batch of collocation nodes.  Gradients are stored densely over the
    sorted set of variables the expression depends on.  Hessians are never
    materialized: they are kept as a sum of coefficient-weighted symmetric
    outer products of intermediate gradients (one per nonlinear operation),
    and the coefficients are propagated forward.  Outer products reached along
    several paths share one entry whose coefficients add up.

``Dep``
    structural tracer: the set of variables an expression depends on and the
    set of variable pairs on which its Hessian can be nonzero.  Running model
    code on ``Dep`` inputs yields sparsity patterns that do not depend on the
    evaluation point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class EvaluationError(ArithmeticError):
    """A model could not be evaluated at the requested point (invalid trial point)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class Active:
    __slots__ = ()
    __array_ufunc__ = None


# --------------------------------------------------------------------------
# numeric jets


class _Outer:
    """Symmetric outer product 1/2 (u v^T + v u^T) over local index sets."""

    __slots__ = ("iu", "u", "iv", "v")

    def __init__(self, iu, u, iv, v):
        self.iu, self.u, self.iv, self.v = iu, u, iv, v

    @property
    def square(self):
        return self.u is self.v


def _scaled_terms(terms, s):
    return {k: c * s for k, c in terms.items()}


def _merge_terms(parts):
    out = {}
    for s, terms in parts:
        for k, c in terms.items():
            if s is not None:
                c = c * s
            prev = out.get(k)
            out[k] = c if prev is None else prev + c
    return out


def _width(*arrays):
    n = 1
    for a in arrays:
        w = a.shape[-1]
        if w != 1:
            n = w
    return n


class Jet(Active):
    __slots__ = ("val", "idx", "grad", "terms")

    def __init__(self, val, idx, grad, terms):
        self.val = val
        self.idx = idx
        self.grad = grad
        self.terms = terms

    @classmethod
    def variable(cls, value, index, second_order=True):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(value, np.array([index], dtype=np.intp), np.ones((1, 1)),
                   {} if second_order else None)

    @property
    def second_order(self):
        return self.terms is not None

    # -- linear combinations -------------------------------------------
    def _scale(self, s):
        terms = None if self.terms is None else _scaled_terms(self.terms, s)
        return Jet(self.val * s, self.idx, self.grad * s, terms)

    def __neg__(self):
        return self._scale(-1.0)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            return lincomb(((None, self), (None, other)))
        if isinstance(other, Active):
            return NotImplemented
        return Jet(self.val + other, self.idx, self.grad, self.terms)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return lincomb(((None, self), (-1.0, other)))
        if isinstance(other, Active):
            return NotImplemented
        return Jet(self.val - other, self.idx, self.grad, self.terms)

    def __rsub__(self, other):
        out = self._scale(-1.0)
        out.val = out.val + other
        return out

    # -- products ------------------------------------------------------
    def __mul__(self, other):
        if isinstance(other, Jet):
            return _product(self, other)
        if isinstance(other, Active):
            return NotImplemented
        return self._scale(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return _product(self, reciprocal(other))
        if isinstance(other, Active):
            return NotImplemented
        return self._scale(1.0 / other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, n):
        if isinstance(n, Active):
            return NotImplemented
        if n == 2:
            return _product(self, self)
        v = self.val
        return self._unary(v ** n, n * v ** (n - 1), n * (n - 1) * v ** (n - 2))

    def _unary(self, f0, f1, f2):
        grad = self.grad * f1
        if self.terms is None:
            return Jet(f0, self.idx, grad, None)
        terms = _scaled_terms(self.terms, f1)
        terms[_Outer(self.idx, self.grad, self.idx, self.grad)] = f2
        return Jet(f0, self.idx, grad, terms)

    def __repr__(self):
        return f"Jet(n={self.val.shape[-1]}, deps={self.idx.tolist()})"


def _union(idxs):
    if len(idxs) == 1:
        return idxs[0], [np.arange(idxs[0].size)]
    idx = np.unique(np.concatenate(idxs))
    return idx, [np.searchsorted(idx, i) for i in idxs]


def lincomb(items, const=0.0):
    """sum_i s_i * jet_i + const, ``s_i = None`` meaning 1."""
    items = list(items)
    idx, pos = _union([j.idx for _, j in items])
    parts = [j.grad if s is None else j.grad * s for s, j in items]
    grad = np.zeros((idx.size, _width(*parts)))
    val = const
    for (s, j), p, g in zip(items, pos, parts):
        grad[p] += g
        val = val + (j.val if s is None else j.val * s)
    if items[0][1].terms is None:
        terms = None
    else:
        terms = _merge_terms([(s, j.terms) for s, j in items])
    return Jet(np.asarray(val, dtype=float), idx, grad, terms)


def _product(a, b):
    val = a.val * b.val
    if a is b:
        grad = a.grad * (2.0 * a.val)
        if a.terms is None:
            return Jet(val, a.idx, grad, None)
        terms = _scaled_terms(a.terms, 2.0 * a.val)
        terms[_Outer(a.idx, a.grad, a.idx, a.grad)] = 2.0
        return Jet(val, a.idx, grad, terms)
    ga = a.grad * b.val
    gb = b.grad * a.val
    idx, (pa, pb) = _union([a.idx, b.idx])
    grad = np.zeros((idx.size, _width(ga, gb)))
    grad[pa] += ga
    grad[pb] += gb
    if a.terms is None:
        return Jet(val, idx, grad, None)
    terms = _merge_terms([(b.val, a.terms), (a.val, b.terms)])
    terms[_Outer(a.idx, a.grad, b.idx, b.grad)] = 2.0
    return Jet(val, idx, grad, terms)


# --------------------------------------------------------------------------
# structural tracer


def _cross(da, db):
    return frozenset((i, j) if i >= j else (j, i) for i in da for j in db)


class Dep(Active):
    __slots__ = ("deps", "hess")

    def __init__(self, deps, hess=frozenset()):
        self.deps = frozenset(deps)
        self.hess = frozenset(hess)

    @classmethod
    def variable(cls, index):
        return cls((index,))

    def _linear(self, other):
        if isinstance(other, Dep):
            return Dep(self.deps | other.deps, self.hess | other.hess)
        return self

    def _nonlinear(self):
        return Dep(self.deps, self.hess | _cross(self.deps, self.deps))

    def __add__(self, other):
        return self._linear(other)

    __radd__ = __sub__ = __rsub__ = __add__

    def __neg__(self):
        return self

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Dep):
            return Dep(self.deps | other.deps,
                       self.hess | other.hess | _cross(self.deps, other.deps))
        return self

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dep):
            return self * other._nonlinear()
        return self

    def __rtruediv__(self, other):
        return self._nonlinear()

    def __pow__(self, n):
        return self if n == 1 else self._nonlinear()

    def __repr__(self):
        return f"Dep({sorted(self.deps)})"


# --------------------------------------------------------------------------
# elementary functions


def _elementwise(name, f0, derivs):
    def fn(a):
        if isinstance(a, Jet):
            return a._unary(*derivs(a.val))
        if isinstance(a, Dep):
            return a._nonlinear()
        return f0(a)

    fn.__name__ = name
    return fn


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(v, dtype=float)))


def _sigmoid_derivs(v):
    s = _sigmoid(v)
    ds = s * (1.0 - s)
    return s, ds, ds * (1.0 - 2.0 * s)


def _squareplus(v):
    v = np.asarray(v, dtype=float)
    return 0.5 * (v + np.sqrt(1.0 + v * v))


def _squareplus_derivs(v):
    r = np.sqrt(1.0 + v * v)
    return 0.5 * (v + r), 0.5 * (1.0 + v / r), 0.5 / (r * r * r)


def _tanh_derivs(v):
    th = np.tanh(v)
    d1 = 1.0 - th * th
    return th, d1, -2.0 * th * d1


def _exp_derivs(v):
    e = np.exp(v)
    return e, e, e


def _log_derivs(v):
    return np.log(v), 1.0 / v, -1.0 / (v * v)


def _sqrt_derivs(v):
    s = np.sqrt(v)
    return s, 0.5 / s, -0.25 / (s * v)


def _recip_derivs(v):
    r = 1.0 / v
    return r, -r * r, 2.0 * r * r * r


sigmoid = _elementwise("sigmoid", _sigmoid, _sigmoid_derivs)
squareplus = _elementwise("squareplus", _squareplus, _squareplus_derivs)
tanh = _elementwise("tanh", np.tanh, _tanh_derivs)
exp = _elementwise("exp", np.exp, _exp_derivs)
log = _elementwise("log", np.log, _log_derivs)
sqrt = _elementwise("sqrt", np.sqrt, _sqrt_derivs)
sin = _elementwise("sin", np.sin, lambda v: (np.sin(v), np.cos(v), -np.sin(v)))
cos = _elementwise("cos", np.cos, lambda v: (np.cos(v), -np.sin(v), -np.cos(v)))
reciprocal = _elementwise("reciprocal", lambda v: 1.0 / v, _recip_derivs)


def square(a):
    return a * a


def nsum(items, const=0.0):
    """Sum of many terms with a single index union."""
    jets = [x for x in items if isinstance(x, Jet)]
    deps = [x for x in items if isinstance(x, Dep)]
    plain = [x for x in items if not isinstance(x, Active)]
    for x in plain:
        const = const + x
    if deps:
        out = deps[0]
        for d in deps[1:]:
            out = out + d
        return out
    if jets:
        return lincomb([(None, j) for j in jets], const)
    return const


def affine(weights, inputs, bias=0.0):
    """``sum_i weights[i] * inputs[i] + bias``."""
    return nsum([w * x for w, x in zip(weights, inputs)] + [bias])


def value_of(a):
    return a.val if isinstance(a, Jet) else a


# --------------------------------------------------------------------------
# patterns and bundles


@dataclass(frozen=True)
class NodePattern:
    """Structural derivatives of the node function vector psi = [L, f, g].

    Local variable numbering is states ``0..d_x-1`` then parameters.
    ``deps[k]`` is the sorted dependency set of component k; ``hess_pairs``
    holds lower-triangle pairs (a >= b) of the union Hessian pattern.
    """

    d_x: int
    d_p: int
    deps: tuple
    hess_pairs: np.ndarray

    @property
    def n_local(self):
        return self.d_x + self.d_p

    @property
    def node_pairs(self):
        """Pairs touching at least one state (one copy per node)."""
        return self.hess_pairs[self.hess_pairs[:, 1] < self.d_x]

    @property
    def param_pairs(self):
        """Parameter-parameter pairs (shared across nodes)."""
        return self.hess_pairs[self.hess_pairs[:, 1] >= self.d_x]


@dataclass
class DerivativeBundle:
    values: np.ndarray        # (d_psi, N)
    jacobian: list            # per component: (deps, grad (len(deps), N))
    hess_node: np.ndarray     # (len(node_pairs), N), weighted
    hess_param: np.ndarray    # (len(param_pairs),), weighted and summed over nodes


def _pairs_array(pairs):
    if not pairs:
        return np.zeros((0, 2), dtype=np.intp)
    return np.array(sorted(pairs), dtype=np.intp)


def trace(fn, n_vars):
    """Run ``fn(list_of_Dep)`` and return (deps tuple, hessian pairs)."""
    variables = [Dep.variable(i) for i in range(n_vars)]
    outs = fn(variables)
    deps, pairs = [], set()
    for o in outs:
        if isinstance(o, Dep):
            deps.append(np.array(sorted(o.deps), dtype=np.intp))
            pairs |= o.hess
        else:
            deps.append(np.zeros(0, dtype=np.intp))
    return tuple(deps), _pairs_array(pairs)


def detect_sparsity(model) -> NodePattern:
    """Structural pattern of psi = [L, f, g] at a generic node."""
    d_x, d_p = model.d_x, model.d_p
    placeholder_u = [np.zeros(1) for _ in range(model.d_u)]
    t = np.zeros(1)
    data = _PlaceholderData()

    def fn(v):
        return model.node_functions(v[:d_x], placeholder_u, t, v[d_x:], data)

    deps, pairs = trace(fn, d_x + d_p)
    return NodePattern(d_x, d_p, deps, pairs)


def detect_boundary_sparsity(model):
    """(deps, pairs) of [M, r] over the local vector [x0, xf, p]."""
    d_x, d_p = model.d_x, model.d_p

    def fn(v):
        return model.boundary_functions(v[:d_x], v[d_x:2 * d_x], v[2 * d_x:])

    return trace(fn, 2 * d_x + d_p)


class _PlaceholderData(dict):
    def __missing__(self, key):
        return np.zeros(1)


def _as_rows(x, d, n):
    out = np.empty((d, n))
    for k in range(d):
        out[k] = x[k]
    return out


def _check_finite(values, where="node function"):
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(values)))
        node = int(bad[0, -1]) if bad.size else None
        raise EvaluationError(f"non-finite {where} value", node=node)


def eval_values(model, x, u, t, p, data):
    """psi values (d_psi, N) without derivatives."""
    n = np.shape(t)[0]
    with np.errstate(all="ignore"):
        outs = model.node_functions(list(x), list(u), t, p, data)
        vals = np.empty((len(outs), n))
        for k, o in enumerate(outs):
            vals[k] = o
    _check_finite(vals)
    return vals


def _local_jets(x, p, d_x, second_order=True):
    xs = [Jet.variable(x[s], s, second_order) for s in range(d_x)]
    ps = [Jet.variable(p[k], d_x + k, second_order) for k in range(len(p))]
    return xs, ps


def _aligned_grad(jet, deps, n):
    out = np.zeros((deps.size, n))
    if isinstance(jet, Jet) and jet.idx.size:
        out[np.searchsorted(deps, jet.idx)] = jet.grad
    return out


def eval_bundle(model, x, u, t, p, data, weights, pattern: NodePattern) -> DerivativeBundle:
    """Values, Jacobian rows and multiplier-weighted Hessian of psi at N nodes.

    ``weights`` is (d_psi, N): the Hessian returned is sum_k weights[k] * Hess(psi_k)
    (the caller folds objective scaling and constraint multipliers into it).
    """
    d_x, d_p = model.d_x, model.d_p
    n = np.shape(t)[0]
    xs, ps = _local_jets(x, p, d_x)
    with np.errstate(all="ignore"):
        outs = model.node_functions(xs, list(u), t, ps, data)
        values = np.empty((len(outs), n))
        for k, o in enumerate(outs):
            values[k] = value_of(o)
        _check_finite(values)
        jac = [(deps, _aligned_grad(o, deps, n)) for o, deps in zip(outs, pattern.deps)]
        parts = [(weights[k], o.terms) for k, o in enumerate(outs) if isinstance(o, Jet)]
        terms = _merge_terms(parts)
        hss, hsp, hpp = assemble_hessian(terms, d_x, d_p, n)
    for _, g in jac:
        _check_finite(g, "gradient")
    pairs = pattern.node_pairs
    ss = pairs[:, 0] < d_x
    hess_node = np.empty((pairs.shape[0], n))
    hess_node[ss] = hss[pairs[ss, 0], pairs[ss, 1]]
    hess_node[~ss] = hsp[pairs[~ss, 1], pairs[~ss, 0] - d_x]
    pp = pattern.param_pairs - d_x
    hess_param = hpp[pp[:, 0], pp[:, 1]]
    _check_finite(hess_node, "Hessian")
    _check_finite(hess_param, "Hessian")
    return DerivativeBundle(values, jac, hess_node, hess_param)


_PLAN_CACHE: dict = {}


def _hessian_plan(bases, d_x, d_p):
    """Gather plan for a fixed list of outer-product bases.

    Factor rows of all bases are stacked into one array W; state-row Hessian
    entries become a sparse sum of products of W rows and parameter blocks one
    small GEMM per base.
    """
    n_loc = d_x + d_p
    row_off, u_rows, v_rows = 0, [], []
    for b in bases:
        ru = np.arange(row_off, row_off + b.iu.size)
        row_off += b.iu.size
        if b.square:
            rv = ru
        else:
            rv = np.arange(row_off, row_off + b.iv.size)
            row_off += b.iv.size
        u_rows.append(ru)
        v_rows.append(rv)
    ea, eb, et, tgt = [], [], [], []
    pp_terms, pp_tgt = [], []
    for t, b in enumerate(bases):
        iu, iv = b.iu, b.iv
        iv_ = iu if b.square else iv
        for ia, ra, ib, rb in ((iu, u_rows[t], iv_, v_rows[t]), (iv_, v_rows[t], iu, u_rows[t])):
            sa = ia < d_x
            if sa.any():
                A, B = np.meshgrid(np.flatnonzero(sa), np.arange(ib.size), indexing="ij")
                ea.append(ra[A.ravel()])
                eb.append(rb[B.ravel()])
                et.append(np.full(A.size, t))
                tgt.append(ia[A.ravel()] * n_loc + ib[B.ravel()])
        pu, pv = np.flatnonzero(iu >= d_x), np.flatnonzero(iv_ >= d_x)
        if pu.size and pv.size:
            pp_terms.append((t, u_rows[t][pu], v_rows[t][pv]))
            pp_tgt.append(((iu[pu, None] - d_x) * d_p + (iv_[None, pv] - d_x)).ravel())
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)  # noqa: E731
    ea, eb, et, tgt = cat(ea), cat(eb), cat(et), cat(tgt)
    mat = sp.csr_matrix((np.full(tgt.size, 0.5), (tgt, np.arange(tgt.size))),
                        shape=(d_x * n_loc, tgt.size))
    return {"n_rows": row_off, "u_rows": u_rows, "ea": ea, "eb": eb, "et": et, "mat": mat,
            "pp_terms": pp_terms, "pp_tgt": cat(pp_tgt)}


def assemble_hessian(terms, d_x, d_p, n):
    """Accumulate outer-product terms into state-state (d_x, d_x, N),
    state-parameter (d_x, d_p, N) and node-summed parameter (d_p, d_p) blocks."""
    bases = list(terms)
    key = (d_x, d_p) + tuple((b.iu.tobytes(), b.iv.tobytes(), b.square) for b in bases)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        if len(_PLAN_CACHE) > 256:
            _PLAN_CACHE.clear()
        plan = _PLAN_CACHE[key] = _hessian_plan(bases, d_x, d_p)
    rows = []
    for b in bases:
        rows.append(np.broadcast_to(b.u, (b.iu.size, n)))
        if not b.square:
            rows.append(np.broadcast_to(b.v, (b.iv.size, n)))
    W = np.concatenate(rows, axis=0) if rows else np.zeros((0, n))
    C = np.empty((len(bases), n))
    for t, c in enumerate(terms.values()):
        C[t] = c
    n_loc = d_x + d_p
    if plan["ea"].size:
        vals = C[plan["et"]] * W[plan["ea"]] * W[plan["eb"]]
        h_rows = np.asarray(plan["mat"] @ vals).reshape(d_x, n_loc, n)
    else:
        h_rows = np.zeros((d_x, n_loc, n))
    hss = 0.5 * (h_rows[:, :d_x] + h_rows[:, :d_x].transpose(1, 0, 2))
    hsp = np.ascontiguousarray(h_rows[:, d_x:])
    if plan["pp_terms"]:
        blocks = [((C[t] * W[ru]) @ W[rv].T).ravel() for t, ru, rv in plan["pp_terms"]]
        a_pp = np.bincount(plan["pp_tgt"], weights=np.concatenate(blocks),
                           minlength=d_p * d_p).reshape(d_p, d_p)
    else:
        a_pp = np.zeros((d_p, d_p))
    hpp = 0.5 * (a_pp + a_pp.T)
    return hss, hsp, hpp


def dense_hessian(terms, n_local):
    """Dense symmetric Hessian for a single evaluation point (N = 1)."""
    h = np.zeros((n_local, n_local))
    for base, c in terms.items():
        c = float(np.asarray(c).reshape(-1)[0])
        u = base.u.reshape(base.iu.size, -1)[:, :1]
        v = base.v.reshape(base.iv.size, -1)[:, :1]
        h[np.ix_(base.iu, base.iv)] += c * (u @ v.T)
    return 0.5 * (h + h.T)


def eval_boundary(model, x0, xf, p, weights, second_order=True):
    """Values, gradients (dense over [x0, xf, p]) and weighted Hessian of [M, r]."""
    d_x, d_p = model.d_x, model.d_p
    n_local = 2 * d_x + d_p
    z = np.concatenate([x0, xf, p])
    v = [Jet.variable(z[k], k, second_order) for k in range(n_local)]
    with np.errstate(all="ignore"):
        outs = model.boundary_functions(v[:d_x], v[d_x:2 * d_x], v[2 * d_x:])
        values = np.array([float(np.asarray(value_of(o)).reshape(-1)[0]) for o in outs])
        grads = np.zeros((len(outs), n_local))
        for k, o in enumerate(outs):
            if isinstance(o, Jet):
                grads[k, o.idx] = o.grad[:, 0]
        hess = None
        if second_order:
            terms = _merge_terms([(weights[k], o.terms) for k, o in enumerate(outs)
                                  if isinstance(o, Jet)])
            hess = dense_hessian(terms, n_local)
    _check_finite(values, "boundary function")
    return values, grads, hess


def boundary_values(model, x0, xf, p):
    with np.errstate(all="ignore"):
        outs = model.boundary_functions(list(x0), list(xf), list(p))
        values = np.array([float(np.asarray(o).reshape(-1)[0]) for o in outs])
    _check_finite(values, "boundary function")
    return values


def state_jacobian(model, x, u, t, p):
    """f values (d_x, N) and df/dx (d_x, d_x, N) with first-order jets."""
    d_x = model.d_x
    n = np.shape(t)[0]
    xs = [Jet.variable(x[s], s, second_order=False) for s in range(d_x)]
    with np.errstate(all="ignore"):
        f = model.dynamics(xs, list(u), t, list(p))
        vals = np.empty((d_x, n))
        jac = np.zeros((d_x, d_x, n))
        for s, fs in enumerate(f):
            if isinstance(fs, Jet):
                vals[s] = fs.val
                jac[s, fs.idx] = fs.grad
            else:
                vals[s] = fs
    _check_finite(vals, "right-hand side")
    _check_finite(jac, "right-hand side Jacobian")
    return vals, jac
