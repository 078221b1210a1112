"""Evaluable PeN-ODE definitions and the parameter surrogates embedded in them.

Model callables receive states and parameters as lists of scalar-like
expressions (floats, node-batched arrays, ``Jet`` or ``Dep`` objects) and
must combine them with ordinary arithmetic plus the functions in
``penode.autodiff``.  That single code path then yields values, exact
derivatives and sparsity patterns.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Dep, EvaluationError, Jet


class ModelError(ValueError):
    pass


def squareplus(x):
    """(x + sqrt(1 + x^2)) / 2 on floats, arrays or active values."""
    return ad.squareplus(x)


def squareplus_derivatives(x):
    """Value, first and second derivative of squareplus."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(1.0 + x * x)
    return 0.5 * (x + r), 0.5 * (1.0 + x / r), 0.5 / r ** 3


_ACTIVATIONS = {"squareplus": ad.squareplus, "sigmoid": ad.sigmoid, "tanh": ad.tanh}


@dataclass(frozen=True)
class FeedForwardNet:
    """Dense network with smooth hidden activations and a linear output layer.

    ``widths = (1, 5, 5, 1)`` is the 1x5 -> 5x5 -> 5x1 architecture.  Each
    layer stores its weights row-major (out, in) followed by its biases.
    Optional fixed affine maps scale inputs before the first layer
    (``(x - input_shift) / input_scale``) and the output afterwards.
    """

    widths: tuple
    activation: str = "squareplus"
    input_shift: tuple = ()
    input_scale: tuple = ()
    output_scale: float = 1.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ModelError(f"invalid layer widths {self.widths!r}")
        if self.activation not in _ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", widths)
        n_in = widths[0]
        shift = tuple(self.input_shift) or (0.0,) * n_in
        scale = tuple(self.input_scale) or (1.0,) * n_in
        if len(shift) != n_in or len(scale) != n_in:
            raise ModelError("input scaling must match the input width")
        object.__setattr__(self, "input_shift", tuple(float(s) for s in shift))
        object.__setattr__(self, "input_scale", tuple(float(s) for s in scale))

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def layer_slices(self):
        out, k = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            out.append((slice(k, k + a * b), slice(k + a * b, k + a * b + b)))
            k += a * b + b
        return out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        p = np.zeros(self.n_params)
        for (ws, _), a, b in zip(self.layer_slices(), self.widths[:-1], self.widths[1:]):
            lim = np.sqrt(6.0 / (a + b))
            p[ws] = rng.uniform(-lim, lim, a * b)
        return p

    def __call__(self, inputs: Sequence, params: Sequence):
        """Network output(s); a single output is returned unwrapped."""
        if len(inputs) != self.n_inputs:
            raise ModelError(f"expected {self.n_inputs} inputs, got {len(inputs)}")
        if len(params) != self.n_params:
            raise ModelError(f"expected {self.n_params} parameters, got {len(params)}")
        act = _ACTIVATIONS[self.activation]
        h = [(x - s) * (1.0 / c) if (s or c != 1.0) else x
             for x, s, c in zip(inputs, self.input_shift, self.input_scale)]
        slices = self.layer_slices()
        for layer, ((ws, bs), a, b) in enumerate(zip(slices, self.widths[:-1], self.widths[1:])):
            w, bias = params[ws], params[bs]
            z = [ad.affine(w[r * a:(r + 1) * a], h, bias[r]) for r in range(b)]
            h = z if layer == len(slices) - 1 else [act(v) for v in z]
        if self.output_scale != 1.0:
            h = [v * self.output_scale for v in h]
        return h[0] if self.n_outputs == 1 else h


def nn_eval(net: FeedForwardNet, inputs, params):
    """Output value, gradient and Hessian over the concatenation [inputs, params].

    Only single-output networks are supported here; this is the dense
    per-point view used for checks and plots.
    """
    inputs = np.asarray(inputs, dtype=float).ravel()
    params = np.asarray(params, dtype=float).ravel()
    if inputs.size != net.n_inputs or params.size != net.n_params:
        raise ModelError("dimension mismatch in nn_eval")
    if net.n_outputs != 1:
        raise ModelError("nn_eval expects a single-output network")
    return _dense_derivatives(lambda v: net(v[:inputs.size], v[inputs.size:]),
                              np.concatenate([inputs, params]))


def _dense_derivatives(fn, z):
    n = z.size
    v = [Jet.variable(z[k], k) for k in range(n)]
    with np.errstate(all="ignore"):
        out = fn(v)
    if not isinstance(out, Jet):
        return float(np.asarray(out).reshape(-1)[0]), np.zeros(n), np.zeros((n, n))
    grad = np.zeros(n)
    grad[out.idx] = out.grad[:, 0]
    return float(out.val[0]), grad, ad.dense_hessian(out.terms, n)


def chebyshev_basis(s, degree):
    """T_0(s)..T_degree(s) by the three-term recurrence."""
    out = [1.0 + 0.0 * s if not isinstance(s, (Jet, Dep)) else 1.0]
    if degree >= 1:
        out.append(s)
    for _ in range(1, degree):
        out.append(2.0 * s * out[-1] - out[-2])
    return out


@dataclass(frozen=True)
class RationalChebyshev:
    """sum_k omega_k T_k(s) / sum_k theta_k T_k(s) with s = (x - center) / half_width.

    Parameters are laid out as omega_0..omega_N, theta_0..theta_D.
    """

    num_degree: int
    den_degree: int
    center: float = 0.0
    half_width: float = 1.0
    output_scale: float = 1.0
    min_denominator: float = 1e-8

    def __post_init__(self):
        if self.num_degree < 0 or self.den_degree < 0:
            raise ModelError("degrees must be non-negative")
        if not self.half_width > 0:
            raise ModelError("half_width must be positive")

    @property
    def n_inputs(self) -> int:
        return 1

    @property
    def n_params(self) -> int:
        return self.num_degree + self.den_degree + 2

    def init_params(self, rng: Optional[np.random.Generator] = None, scale: float = 0.0):
        """theta_0 = 1; everything else zero or, with ``scale``, small uniform noise."""
        p = np.zeros(self.n_params)
        if rng is not None and scale > 0:
            p[:] = rng.uniform(-scale, scale, self.n_params)
        p[self.num_degree + 1] = 1.0
        return p

    def __call__(self, inputs, params):
        x = inputs[0] if isinstance(inputs, (list, tuple)) else inputs
        if len(params) != self.n_params:
            raise ModelError(f"expected {self.n_params} parameters, got {len(params)}")
        s = (x - self.center) * (1.0 / self.half_width)
        basis = chebyshev_basis(s, max(self.num_degree, self.den_degree))
        omega = params[:self.num_degree + 1]
        theta = params[self.num_degree + 1:]
        num = ad.affine(omega, basis[:self.num_degree + 1])
        den = ad.affine(theta, basis[:self.den_degree + 1])
        if not isinstance(den, Dep):
            dv = np.asarray(ad.value_of(den), dtype=float)
            small = np.abs(dv) < self.min_denominator
            if np.any(small):
                raise EvaluationError("rational surrogate denominator vanishes",
                                      node=int(np.argmax(small.ravel())))
        out = num / den
        return out * self.output_scale if self.output_scale != 1.0 else out


def rational_eval(rc: RationalChebyshev, x, params):
    """Value, gradient and Hessian over [x, params] at a single input."""
    params = np.asarray(params, dtype=float).ravel()
    z = np.concatenate([[float(x)], params])
    return _dense_derivatives(lambda v: rc([v[0]], v[1:]), z)


# --------------------------------------------------------------------------


def _zero(*_):
    return 0.0


def _none_list(*_):
    return []


@dataclass(frozen=True)
class DynamicModel:
    """The tuple (f, L, M, g, r) with dimensions and bounds.

    ``dynamics(x, u, t, p)`` returns d_x expressions, ``lagrange(x, u, t, p, data)``
    a scalar, ``mayer(x0, xf, p)`` a scalar, ``path(x, u, t, p)`` d_g expressions
    and ``boundary(x0, xf, p)`` d_r expressions.  ``input_signal(t)`` maps an
    array of times to a list of d_u arrays.  ``outputs(x, u, t, p)`` optionally
    returns a dict of named observables.
    """

    d_x: int
    d_p: int
    dynamics: Callable
    d_u: int = 0
    lagrange: Optional[Callable] = None
    mayer: Optional[Callable] = None
    path: Callable = _none_list
    g_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    g_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    boundary: Callable = _none_list
    r_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    input_signal: Optional[Callable] = None
    outputs: Optional[Callable] = None
    # optional joint evaluator (x, u, t, p, data) -> [L, f..., g...] sharing work
    joint: Optional[Callable] = None
    state_names: tuple = ()
    name: str = "model"

    def __post_init__(self):
        for lo, up, what in ((self.g_lower, self.g_upper, "g"), (self.r_lower, self.r_upper, "r")):
            lo = np.asarray(lo, dtype=float)
            up = np.asarray(up, dtype=float)
            if lo.shape != up.shape or lo.ndim != 1:
                raise ModelError(f"{what} bounds must be matching vectors")
            if np.any(lo > up):
                raise ModelError(f"{what} bounds must satisfy lower <= upper")
            object.__setattr__(self, f"{what}_lower", lo)
            object.__setattr__(self, f"{what}_upper", up)
        if self.d_u and self.input_signal is None:
            raise ModelError("models with inputs need an input_signal")

    @property
    def d_g(self) -> int:
        return self.g_lower.size

    @property
    def d_r(self) -> int:
        return self.r_lower.size

    def inputs_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.d_u:
            return []
        u = self.input_signal(t)
        return [np.broadcast_to(np.asarray(ui, dtype=float), t.shape) for ui in u]

    def node_functions(self, x, u, t, p, data):
        """psi = [L, f_1..f_dx, g_1..g_dg]."""
        if self.joint is not None:
            return list(self.joint(x, u, t, p, data))
        L = self.lagrange(x, u, t, p, data) if self.lagrange is not None else 0.0
        return [L, *self.dynamics(x, u, t, p), *self.path(x, u, t, p)]

    def boundary_functions(self, x0, xf, p):
        """[M, r_1..r_dr]."""
        M = self.mayer(x0, xf, p) if self.mayer is not None else 0.0
        return [M, *self.boundary(x0, xf, p)]

    def with_boundary(self, fn: Callable, lower, upper) -> "DynamicModel":
        """Append rows ``fn(x0, xf, p)`` (a list) to r with the given bounds."""
        old = self.boundary

        def boundary(x0, xf, p):
            return [*old(x0, xf, p), *fn(x0, xf, p)]

        return dataclasses.replace(
            self, boundary=boundary,
            r_lower=np.concatenate([self.r_lower, np.atleast_1d(lower)]),
            r_upper=np.concatenate([self.r_upper, np.atleast_1d(upper)]))


def zero_crossing_constraint(model: DynamicModel, surrogate, offset: int) -> DynamicModel:
    """Equality row surrogate(0) = 0 on the parameter slice starting at ``offset``."""
    if surrogate.n_inputs != 1:
        raise ModelError("zero-crossing constraints need a scalar-input surrogate")
    sl = slice(offset, offset + surrogate.n_params)

    def row(x0, xf, p):
        return [surrogate([0.0], list(p)[sl])]

    return model.with_boundary(row, 0.0, 0.0)
