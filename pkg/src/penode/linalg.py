"""Symmetric indefinite factorization of KKT matrices with block-banded structure.

The matrix is permuted into diagonal blocks ``A_0..A_{K-1}`` that couple only
with their neighbours, plus a dense border (parameters, boundary rows) that
may couple with every block::

    [ A_0  C_0^T            E_0^T ]
    [ C_0  A_1   C_1^T      E_1^T ]
    [      C_1   A_2  ...   ...   ]
    [ E_0  E_1   ...        Z     ]

Blocks are eliminated in order with Bunch-Kaufman (LAPACK ``sytrf``) pivoting
inside each block; the Schur complement updates the next block, its border
coupling and the border itself, which is factored last.  Inertia is read off
the 1x1 / 2x2 pivots.  Without block hints a reverse Cuthill-McKee ordering is
cut into contiguous blocks at least as wide as the bandwidth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee


_ZERO1 = np.zeros(1)


class FactorizationError(RuntimeError):
    pass


def _sytrf(a):
    lu, ipiv, info = lapack.dsytrf(a, lower=1)
    if info < 0:
        raise FactorizationError(f"dsytrf argument error {info}")
    return lu, ipiv


def pivot_inertia(lu, ipiv, zero_tol):
    """(positive, negative, zero) counts of the block-diagonal factor D."""
    n = lu.shape[0]
    sub = np.zeros(n)
    if n > 1:
        sub[:-1] = np.diagonal(lu, -1)
    return _inertia_from_pivots(np.diagonal(lu), sub, np.asarray(ipiv) < 0, zero_tol)


def _inertia_from_pivots(d, sub, neg, zero_tol):
    """Inertia from concatenated pivot data of one or more complete factorizations.

    ``d`` is the diagonal of D, ``sub[k]`` the entry D[k+1, k] and ``neg`` marks
    rows that belong to 2x2 pivots (negative ipiv).
    """
    n = d.size
    neg = neg.copy()
    if n:
        neg[-1] &= n > 1 and neg[-2]
    cs = np.cumsum(neg)
    base = np.maximum.accumulate(np.where(~neg, cs, 0))
    start = neg & ((cs - base) % 2 == 1)
    k = np.flatnonzero(start)
    eig = [d[~neg]]
    if k.size:
        a, b, c = d[k], sub[k], d[k + 1]
        half_tr = 0.5 * (a + c)
        det = a * c - b * b
        disc = np.sqrt(np.maximum(half_tr * half_tr - det, 0.0))
        # larger eigenvalue directly, the smaller one via the determinant (no cancellation)
        big = half_tr + np.where(half_tr >= 0, disc, -disc)
        small = np.divide(det, big, out=np.zeros_like(det), where=big != 0)
        eig += [big, small]
    ev = np.concatenate(eig)
    zero = np.abs(ev) <= zero_tol
    return np.array([np.sum((ev > 0) & ~zero), np.sum((ev < 0) & ~zero), np.sum(zero)], dtype=np.int64)


@dataclass
class Factorization:
    inertia: tuple
    _solver: "KKTSolver"
    _blocks: list
    _border: tuple

    def solve(self, rhs, refine_with=None, refine_steps=0):
        """Solve K x = rhs; optionally refine with the sparse matrix ``refine_with``."""
        x = self._solve(rhs)
        if refine_with is not None:
            for _ in range(refine_steps):
                r = rhs - refine_with @ x
                if np.max(np.abs(r)) <= 1e-15 * max(1.0, np.max(np.abs(rhs))):
                    break
                x = x + self._solve(r)
        return x

    def _solve(self, rhs):
        s = self._solver
        b = np.asarray(rhs, dtype=float)[s.perm].copy()
        starts, sizes = s.block_start, s.block_size
        nb = s.n_border
        bor = slice(s.n_inner, s.n_inner + nb)
        nblk = len(self._blocks)
        w = [None] * nblk
        for k, (lu, ipiv, X) in enumerate(self._blocks):
            sl = slice(starts[k], starts[k] + sizes[k])
            yk = b[sl]
            w[k] = lapack.dsytrs(lu, ipiv, yk, lower=1)[0]
            if X is not None and X.shape[1]:
                upd = X.T @ yk
                nn = X.shape[1] - nb
                if nn:
                    b[starts[k + 1]:starts[k + 1] + nn] -= upd[:nn]
                if nb:
                    b[bor] -= upd[nn:]
        x = np.empty_like(b)
        if nb:
            lu, ipiv = self._border
            x[bor] = lapack.dsytrs(lu, ipiv, b[bor], lower=1)[0]
        for k in range(nblk - 1, -1, -1):
            X = self._blocks[k][2]
            sl = slice(starts[k], starts[k] + sizes[k])
            xk = w[k]
            if X is not None and X.shape[1]:
                nn = X.shape[1] - nb
                nxt = x[starts[k + 1]:starts[k + 1] + nn] if nn else np.zeros(0)
                xk = xk - X @ np.concatenate([nxt, x[bor]])
            x[sl] = xk
        out = np.empty_like(x)
        out[s.perm] = x
        return out


class KKTSolver:
    """Symbolic analysis for a fixed lower-triangle pattern; call ``factorize`` per matrix.

    ``blocks`` optionally assigns each index to a block (``-1`` = border).
    Couplings must only connect equal or consecutive blocks, or the border.
    """

    def __init__(self, n, rows, cols, blocks=None, dense_limit=300):
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        self.n = int(n)
        if blocks is None:
            blocks = _auto_blocks(self.n, rows, cols, dense_limit)
        blocks = np.asarray(blocks, dtype=np.intp)
        inner = blocks >= 0
        # compress block ids to 0..K-1 keeping order
        ids = np.unique(blocks[inner])
        remap = np.full(int(blocks.max()) + 2 if blocks.size else 1, -1, dtype=np.intp)
        remap[ids] = np.arange(ids.size)
        blk = np.where(inner, remap[np.where(inner, blocks, 0)], -1)
        order = np.lexsort((np.arange(self.n), np.where(blk < 0, ids.size, blk)))
        self.perm = order
        pos = np.empty(self.n, dtype=np.intp)
        pos[order] = np.arange(self.n)
        self.n_blocks = ids.size
        sizes = np.bincount(blk[inner], minlength=self.n_blocks) if self.n_blocks else np.zeros(0, int)
        self.block_size = sizes
        self.block_start = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.intp) if sizes.size else np.zeros(0, int)
        self.n_inner = int(sizes.sum())
        self.n_border = self.n - self.n_inner
        nb = self.n_border

        # flat buffer: A_k (s_k^2), C_k (s_{k+1} * s_k), E_k (nb * s_k), Z (nb^2)
        a_off = np.zeros(self.n_blocks, dtype=np.intp)
        c_off = np.zeros(self.n_blocks, dtype=np.intp)
        e_off = np.zeros(self.n_blocks, dtype=np.intp)
        off = 0
        for k in range(self.n_blocks):
            s = sizes[k]
            a_off[k] = off
            off += s * s
            c_off[k] = off
            off += (sizes[k + 1] * s) if k + 1 < self.n_blocks else 0
            e_off[k] = off
            off += nb * s
        z_off = off
        off += nb * nb
        self.buffer_size = off
        self._offsets = (a_off, c_off, e_off, z_off)

        bi, bj = blk[rows], blk[cols]
        li = pos[rows] - np.where(bi >= 0, self.block_start[np.maximum(bi, 0)] if self.n_blocks else 0, self.n_inner)
        lj = pos[cols] - np.where(bj >= 0, self.block_start[np.maximum(bj, 0)] if self.n_blocks else 0, self.n_inner)
        src, dst = [], []
        entries = np.arange(rows.size)

        def add(mask, target):
            src.append(entries[mask])
            dst.append(target)

        sz = sizes if self.n_blocks else np.zeros(1, int)
        both = (bi >= 0) & (bj >= 0)
        same = both & (bi == bj)
        k = bi[same]
        add(same, a_off[k] + li[same] * sz[k] + lj[same])
        m2 = same & (li != lj)
        k = bi[m2]
        add(m2, a_off[k] + lj[m2] * sz[k] + li[m2])
        # C_k[row in k+1, col in k]
        lo = both & (bi == bj + 1)
        k = bj[lo]
        add(lo, c_off[k] + li[lo] * sz[k] + lj[lo])
        hi = both & (bj == bi + 1)
        k = bi[hi]
        add(hi, c_off[k] + lj[hi] * sz[k] + li[hi])
        if np.any(both & (np.abs(bi - bj) > 1)):
            raise FactorizationError("block hints couple non-adjacent blocks")
        # border coupling E_k[border row, block col]
        eb = (bi < 0) & (bj >= 0)
        k = bj[eb]
        add(eb, e_off[k] + li[eb] * sz[k] + lj[eb])
        be = (bi >= 0) & (bj < 0)
        k = bi[be]
        add(be, e_off[k] + lj[be] * sz[k] + li[be])
        zz = (bi < 0) & (bj < 0)
        add(zz, z_off + li[zz] * nb + lj[zz])
        zz2 = zz & (li != lj)
        add(zz2, z_off + lj[zz2] * nb + li[zz2])
        self._src = np.concatenate(src)
        self._dst = np.concatenate(dst)

    def assemble(self, values):
        return np.bincount(self._dst, weights=np.asarray(values, dtype=float)[self._src],
                           minlength=self.buffer_size)

    def factorize(self, values, zero_tol_rel=1e-18, zero_tol=None) -> Factorization:
        """Factor and count inertia; pivots below ``zero_tol`` count as zero.

        Without an absolute ``zero_tol`` it defaults to ``zero_tol_rel * max|values|``.
        """
        values = np.asarray(values, dtype=float)
        buf = self.assemble(values)
        if zero_tol is None:
            scale = float(np.max(np.abs(values))) if values.size else 1.0
            zero_tol = zero_tol_rel * max(scale, 1e-300)
        a_off, c_off, e_off, z_off = self._offsets
        sizes, nb = self.block_size, self.n_border
        K = self.n_blocks
        Z = buf[z_off:z_off + nb * nb].reshape(nb, nb).copy()
        piv_d, piv_s, piv_i = [], [], []
        blocks = []
        pend_e, pend_x, pend_size = [], [], 0
        S = buf[a_off[0]:a_off[0] + sizes[0] ** 2].reshape(sizes[0], sizes[0]).copy() if K else None
        E = buf[e_off[0]:e_off[0] + nb * sizes[0]].reshape(nb, sizes[0]).copy() if K else None
        for k in range(K):
            s = sizes[k]
            lu, ipiv = _sytrf(S)
            piv_d.append(np.diagonal(lu))
            piv_s.append(np.diagonal(lu, -1))
            piv_s.append(_ZERO1)
            piv_i.append(ipiv)
            if k + 1 < K:
                s1 = sizes[k + 1]
                C = buf[c_off[k]:c_off[k] + s1 * s].reshape(s1, s)
                rhs = np.concatenate([C, E], axis=0).T
            else:
                s1 = 0
                C = None
                rhs = E.T
            if rhs.shape[1]:
                X = lapack.dsytrs(lu, ipiv, rhs, lower=1)[0]
                if not np.all(np.isfinite(X)):
                    raise FactorizationError(f"non-finite Schur update in block {k}")
            else:
                X = np.zeros((s, 0))
            blocks.append((lu, ipiv, X))
            if nb:
                pend_e.append(E)
                pend_x.append(X[:, s1:])
                pend_size += s
                if pend_size >= 2048 or k + 1 == K:
                    Z -= np.hstack(pend_e) @ np.vstack(pend_x)
                    pend_e, pend_x, pend_size = [], [], 0
            if k + 1 < K:
                S = buf[a_off[k + 1]:a_off[k + 1] + s1 * s1].reshape(s1, s1) - C @ X[:, :s1]
                S = 0.5 * (S + S.T)
                E_next = buf[e_off[k + 1]:e_off[k + 1] + nb * s1].reshape(nb, s1)
                E = E_next - E @ X[:, :s1] if nb else E_next.copy()
        border = None
        inertia = np.zeros(3, dtype=np.int64)
        if nb:
            Z = 0.5 * (Z + Z.T)
            lu, ipiv = _sytrf(Z)
            inertia += pivot_inertia(lu, ipiv, zero_tol)
            border = (lu, ipiv)
        if piv_d:
            inertia += _inertia_from_pivots(np.concatenate(piv_d), np.concatenate(piv_s),
                                            np.concatenate(piv_i) < 0, zero_tol)
        return Factorization(tuple(int(v) for v in inertia), self, blocks, border)


def _auto_blocks(n, rows, cols, dense_limit):
    """Block ids from an RCM ordering, or all-border for small matrices."""
    if n <= dense_limit:
        return np.full(n, -1, dtype=np.intp)
    A = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    A = (A + A.T).tocsr()
    perm = reverse_cuthill_mckee(A, symmetric_mode=True)
    pos = np.empty(n, dtype=np.intp)
    pos[perm] = np.arange(n)
    bw = int(np.max(np.abs(pos[rows] - pos[cols]))) if rows.size else 0
    width = max(bw, 32)
    return (pos // width).astype(np.intp)


def factorize_kkt(matrix, blocks=None, zero_tol_rel=1e-18) -> Factorization:
    """One-shot factorization of a symmetric matrix (dense or scipy sparse)."""
    if sp.issparse(matrix):
        L = sp.tril(matrix).tocoo()
    else:
        L = sp.coo_matrix(np.tril(np.asarray(matrix, dtype=float)))
    n = matrix.shape[0]
    # keep the diagonal structurally present
    rows = np.concatenate([L.row, np.arange(n)])
    cols = np.concatenate([L.col, np.arange(n)])
    vals = np.concatenate([L.data, np.zeros(n)])
    solver = KKTSolver(n, rows, cols, blocks)
    return solver.factorize(vals, zero_tol_rel)
