"""Numba kernels for the interval dynamic programs.

All tables use half-open intervals ``[i, j)`` of shape ``(n + 1, n + 1)``:

* ``X[i, j]`` -- every structure on ``[i, j)``,
* ``Xb[i, j]`` -- structures where ``i`` pairs with ``j - 1``,
* ``Xx[i, j]`` -- structures where ``i`` does *not* pair with ``j - 1``.

Splitting ``X`` into ``Xb`` and ``Xx`` is what lets the stacking bonus be
credited exactly: a pair ``(i, j-1)`` gains ``e_stack`` only from the ``Xb``
part of its interior.
"""

import numpy as np
from numba import njit

INF = np.int64(1) << np.int64(60)


@njit(cache=True, nogil=True)
def mfe_tables(seq, e_pair, can_pair, e_stack, h_min):
    n = seq.shape[0]
    E = np.full((n + 1, n + 1), INF, dtype=np.int64)
    Ex = np.full((n + 1, n + 1), INF, dtype=np.int64)
    Eb = np.full((n + 1, n + 1), INF, dtype=np.int64)
    C = np.zeros((n + 1, n + 1), dtype=np.int64)
    Cx = np.zeros((n + 1, n + 1), dtype=np.int64)
    Cb = np.zeros((n + 1, n + 1), dtype=np.int64)
    # float shadow of the counts, used by the caller to detect int64 overflow
    F = np.zeros((n + 1, n + 1), dtype=np.float64)
    Fx = np.zeros((n + 1, n + 1), dtype=np.float64)
    Fb = np.zeros((n + 1, n + 1), dtype=np.float64)
    for i in range(n + 1):
        E[i, i] = 0
        Ex[i, i] = 0
        C[i, i] = 1
        Cx[i, i] = 1
        F[i, i] = 1.0
        Fx[i, i] = 1.0
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            # pair (i, j-1)
            if length - 1 > h_min and can_pair[seq[i], seq[j - 1]]:
                a = Ex[i + 1, j - 1]
                b = INF
                if Eb[i + 1, j - 1] < INF:
                    b = Eb[i + 1, j - 1] + e_stack
                best = a if a < b else b
                if best < INF:
                    cnt = np.int64(0)
                    fcnt = 0.0
                    if a == best:
                        cnt += Cx[i + 1, j - 1]
                        fcnt += Fx[i + 1, j - 1]
                    if b == best:
                        cnt += Cb[i + 1, j - 1]
                        fcnt += Fb[i + 1, j - 1]
                    Eb[i, j] = e_pair[seq[i], seq[j - 1]] + best
                    Cb[i, j] = cnt
                    Fb[i, j] = fcnt
            # i unpaired
            best = E[i + 1, j]
            cnt = C[i + 1, j]
            fcnt = F[i + 1, j]
            # i paired with k < j - 1
            for k in range(i + h_min + 1, j - 1):
                if Eb[i, k + 1] >= INF:
                    continue
                v = Eb[i, k + 1] + E[k + 1, j]
                if v < best:
                    best = v
                    cnt = Cb[i, k + 1] * C[k + 1, j]
                    fcnt = Fb[i, k + 1] * F[k + 1, j]
                elif v == best:
                    cnt += Cb[i, k + 1] * C[k + 1, j]
                    fcnt += Fb[i, k + 1] * F[k + 1, j]
            Ex[i, j] = best
            Cx[i, j] = cnt
            Fx[i, j] = fcnt
            if Eb[i, j] < best:
                E[i, j] = Eb[i, j]
                C[i, j] = Cb[i, j]
                F[i, j] = Fb[i, j]
            elif Eb[i, j] == best:
                E[i, j] = best
                C[i, j] = cnt + Cb[i, j]
                F[i, j] = fcnt + Fb[i, j]
            else:
                E[i, j] = best
                C[i, j] = cnt
                F[i, j] = fcnt
    return E, Ex, Eb, C, F


@njit(cache=True, nogil=True)
def inside_tables(seq, w_pair, can_pair, w_stack, h_min, lam):
    """Boltzmann-weighted inside tables, each cell scaled by ``lam**length``."""
    n = seq.shape[0]
    Z = np.zeros((n + 1, n + 1))
    Zx = np.zeros((n + 1, n + 1))
    Zb = np.zeros((n + 1, n + 1))
    lam2 = lam * lam
    for i in range(n + 1):
        Z[i, i] = 1.0
        Zx[i, i] = 1.0
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            if length - 1 > h_min and can_pair[seq[i], seq[j - 1]]:
                Zb[i, j] = w_pair[seq[i], seq[j - 1]] * lam2 * (
                    Zx[i + 1, j - 1] + w_stack * Zb[i + 1, j - 1]
                )
            acc = lam * Z[i + 1, j]
            for k in range(i + h_min + 1, j - 1):
                acc += Zb[i, k + 1] * Z[k + 1, j]
            Zx[i, j] = acc
            Z[i, j] = acc + Zb[i, j]
    return Z, Zx, Zb


@njit(cache=True, nogil=True)
def outside_tables(seq, w_pair, can_pair, w_stack, h_min, lam, Z, Zx, Zb):
    n = seq.shape[0]
    O = np.zeros((n + 1, n + 1))
    Ox = np.zeros((n + 1, n + 1))
    Ob = np.zeros((n + 1, n + 1))
    lam2 = lam * lam
    O[0, n] = 1.0
    for length in range(n, 0, -1):
        for i in range(0, n - length + 1):
            j = i + length
            # Z = Zx + Zb
            o = O[i, j]
            Ox[i, j] += o
            Ob[i, j] += o
            # Zx = lam * Z[i+1, j] + sum_k Zb[i, k+1] * Z[k+1, j]
            ox = Ox[i, j]
            if ox != 0.0:
                O[i + 1, j] += ox * lam
                for k in range(i + h_min + 1, j - 1):
                    Ob[i, k + 1] += ox * Z[k + 1, j]
                    O[k + 1, j] += ox * Zb[i, k + 1]
            # Zb = w * lam^2 * (Zx[i+1, j-1] + s * Zb[i+1, j-1])
            if Zb[i, j] != 0.0:
                c = Ob[i, j] * w_pair[seq[i], seq[j - 1]] * lam2
                Ox[i + 1, j - 1] += c
                Ob[i + 1, j - 1] += c * w_stack
    return O, Ox, Ob


@njit(cache=True, nogil=True)
def pair_matrix(Zb, Ob, total):
    n = Zb.shape[0] - 1
    P = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n + 1):
            if Zb[i, j] != 0.0:
                v = Zb[i, j] * Ob[i, j] / total
                P[i, j - 1] = v
                P[j - 1, i] = v
    return P


@njit(cache=True, nogil=True)
def forced_pair_total(seq, w_pair, can_pair, w_stack, h_min, lam, a, b):
    """Scaled inside total over structures that contain the pair ``(a, b)``.

    ``a`` and ``b`` may neither stay unpaired nor pair elsewhere; intervals
    holding only one of them therefore sum to zero on their own.
    """
    n = seq.shape[0]
    Z = np.zeros((n + 1, n + 1))
    Zx = np.zeros((n + 1, n + 1))
    Zb = np.zeros((n + 1, n + 1))
    lam2 = lam * lam
    for i in range(n + 1):
        Z[i, i] = 1.0
        Zx[i, i] = 1.0
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            k = j - 1
            if length - 1 > h_min and can_pair[seq[i], seq[k]]:
                touches = i == a or i == b or k == a or k == b
                if not touches or (i == a and k == b):
                    Zb[i, j] = w_pair[seq[i], seq[k]] * lam2 * (
                        Zx[i + 1, j - 1] + w_stack * Zb[i + 1, j - 1]
                    )
            acc = 0.0
            if i != a and i != b:
                acc = lam * Z[i + 1, j]
            for k in range(i + h_min + 1, j - 1):
                acc += Zb[i, k + 1] * Z[k + 1, j]
            Zx[i, j] = acc
            Z[i, j] = acc + Zb[i, j]
    return Z[0, n]
