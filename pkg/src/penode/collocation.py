"""Radau IIA collocation schemes on flipped Legendre-Gauss-Radau (fLGR) points.

An ``m``-stage scheme lives on the reference interval [0, 1].  Its nodes are
the roots of ``(1 - t) P_{m-1}^{(1,0)}(2t - 1)`` so that the last node is the
right interval end.  Together with the implied node ``c_0 = 0`` they define
the Lagrange basis used for the differentiation matrix.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np


class CollocationError(ValueError):
    pass


def _jacobi_with_derivative(n, alpha, beta, x):
    """Evaluate P_n^{(alpha, beta)} and its derivative by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    dp_prev = np.zeros_like(x)
    if n == 0:
        return p_prev, dp_prev
    ab = alpha + beta
    p = 0.5 * ((ab + 2.0) * x + (alpha - beta))
    dp = np.full_like(x, 0.5 * (ab + 2.0))
    for k in range(1, n):
        s = 2.0 * k + ab
        denom = 2.0 * (k + 1) * (k + ab + 1) * s
        a = (s + 1.0) * (s + 2.0) * s / denom
        b = (s + 1.0) * (alpha * alpha - beta * beta) / denom
        c = 2.0 * (k + alpha) * (k + beta) * (s + 2.0) / denom
        p_next = (a * x + b) * p - c * p_prev
        dp_next = a * p + (a * x + b) * dp - c * dp_prev
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p, dp


def _jacobi_roots(n, alpha, beta, tol=1e-15, max_iter=100):
    """Roots of P_n^{(alpha, beta)} on (-1, 1), ascending.

    Newton iteration with deflation against the roots already found; the
    starting guesses are Chebyshev points.
    """
    if n == 0:
        return np.empty(0)
    guesses = -np.cos((2.0 * np.arange(1, n + 1) - 1.0) * np.pi / (2.0 * n))
    roots = np.empty(n)
    for i, x in enumerate(guesses):
        for _ in range(max_iter):
            p, dp = _jacobi_with_derivative(n, alpha, beta, x)
            deflation = np.sum(1.0 / (x - roots[:i])) if i else 0.0
            step = p / (dp - p * deflation)
            x = x - step
            if abs(step) <= tol * max(1.0, abs(x)):
                break
        else:
            raise CollocationError(f"Jacobi root {i} of degree {n} did not converge")
        roots[i] = x
    roots.sort()
    return roots


def flgr_nodes(m: int) -> np.ndarray:
    """The ``m`` fLGR nodes ``0 < c_1 < ... < c_m = 1``."""
    if int(m) != m or m < 1:
        raise CollocationError(f"stage count must be a positive integer, got {m!r}")
    m = int(m)
    interior = _jacobi_roots(m - 1, 1.0, 0.0)
    nodes = np.empty(m)
    nodes[:-1] = 0.5 * (interior + 1.0)
    nodes[-1] = 1.0
    return nodes


def barycentric_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise CollocationError("collocation nodes must be distinct")
    return 1.0 / np.prod(diff, axis=1)


def differentiation_matrix(nodes) -> np.ndarray:
    """First-derivative matrix of the Lagrange basis over ``nodes`` (``c_0 = 0`` first).

    Returns the rows ``j = 1..m``: ``D[j-1, k] = l_k'(c_j)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise CollocationError("need at least two nodes (c_0 = 0 and c_m = 1)")
    if nodes[0] != 0.0:
        raise CollocationError("first node must be c_0 = 0")
    w = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    full = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(full, 0.0)
    np.fill_diagonal(full, -full.sum(axis=1))
    return full[1:, :]


def _shifted_legendre(k_max, x):
    """Rows P_k(2x - 1) for k = 0..k_max."""
    s = 2.0 * np.asarray(x, dtype=float) - 1.0
    out = np.empty((k_max + 1, s.size))
    out[0] = 1.0
    if k_max >= 1:
        out[1] = s
    for k in range(1, k_max):
        out[k + 1] = ((2 * k + 1) * s * out[k] - k * out[k - 1]) / (k + 1)
    return out


def quadrature_weights(nodes) -> np.ndarray:
    """Weights b_j = integral over [0, 1] of the Lagrange basis on ``nodes``.

    The moment conditions are imposed in the shifted Legendre basis
    (sum_j b_j P_k(2c_j - 1) = delta_k0), which is equivalent to the monomial
    moments but stays well conditioned for large ``m``.
    """
    nodes = np.asarray(nodes, dtype=float)
    m = nodes.size
    lhs = _shifted_legendre(m - 1, nodes)
    rhs = np.zeros(m)
    rhs[0] = 1.0
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:  # distinct nodes make this unreachable
        raise CollocationError("singular moment system for quadrature weights") from exc


@dataclass(frozen=True)
class CollocationScheme:
    m: int
    nodes: np.ndarray        # c_1..c_m
    diff_matrix: np.ndarray  # (m, m + 1), columns over c_0..c_m
    weights: np.ndarray      # b_1..b_m

    @property
    def all_nodes(self) -> np.ndarray:
        return np.concatenate(([0.0], self.nodes))

    @property
    def order(self) -> int:
        return 2 * self.m - 1


@functools.lru_cache(maxsize=None)
def scheme(m: int) -> CollocationScheme:
    """Cached, read-only Radau IIA scheme with ``m`` stages."""
    nodes = flgr_nodes(m)
    D = differentiation_matrix(np.concatenate(([0.0], nodes)))
    b = quadrature_weights(nodes)
    for arr in (nodes, D, b):
        arr.setflags(write=False)
    return CollocationScheme(m=int(m), nodes=nodes, diff_matrix=D, weights=b)
