"""Hot numeric kernels with a numba path and a pure-numpy path.

The backend is picked once at import time from ``SICPLN_BACKEND``
(``"numba"`` or ``"numpy"``). Without the variable, numba is used if it
imports. Both implementations stay importable as ``numba_impl`` and
``numpy_impl`` so tests and the benchmark can compare them directly.
"""
from __future__ import annotations

import os
import types

import numpy as np

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    nb = None
    HAVE_NUMBA = False

# ---------------------------------------------------------------------------
# numpy implementations


def _np_exp_mean(O, XB, M, S):
    # callers turn non-finite entries into a NumericError naming the cell
    with np.errstate(over="ignore"):
        return np.exp(O + XB + M + 0.5 * S * S)


def _np_elbo_data(Y, O, XB, M, S, A):
    """sum_ij y (o + xb + m) - a + log s."""
    return float(np.sum(Y * (O + XB + M) - A + np.log(S)))


def _np_gram_blocks(X, A):
    """(p, d, d) stack of X^T diag(A[:, j]) X."""
    G = np.einsum("ik,ij,il->jkl", X, A, X, optimize=True)
    # einsum may sum the two triangles in different orders
    return 0.5 * (G + G.transpose(0, 2, 1))


def _np_column_loglik(Y, XB, O, M, S):
    """Per-column sum_i y (xb) - a: the part of the ELBO that moves with B."""
    A = np.exp(O + XB + M + 0.5 * S * S)
    return np.sum(Y * XB - A, axis=0), A


def _np_row_newton(G, A, Omega):
    """Solve (diag(a_i) + Omega) d_i = g_i for every row i."""
    n, p = G.shape
    H = np.broadcast_to(Omega, (n, p, p)).copy()
    idx = np.arange(p)
    H[:, idx, idx] += A
    return np.linalg.solve(H, G[:, :, None])[:, :, 0]


numpy_impl = types.SimpleNamespace(
    exp_mean=_np_exp_mean,
    elbo_data=_np_elbo_data,
    gram_blocks=_np_gram_blocks,
    column_loglik=_np_column_loglik,
    row_newton=_np_row_newton,
    name="numpy",
)

# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:
    _jit = nb.njit(cache=True, nogil=True)

    @_jit
    def _nb_exp_mean(O, XB, M, S):
        n, p = O.shape
        A = np.empty((n, p))
        for i in range(n):
            for j in range(p):
                s = S[i, j]
                A[i, j] = np.exp(O[i, j] + XB[i, j] + M[i, j] + 0.5 * s * s)
        return A

    @_jit
    def _nb_elbo_data(Y, O, XB, M, S, A):
        n, p = Y.shape
        total = 0.0
        for i in range(n):
            for j in range(p):
                total += Y[i, j] * (O[i, j] + XB[i, j] + M[i, j]) - A[i, j] + np.log(S[i, j])
        return total

    @_jit
    def _nb_gram_blocks(X, A):
        n, d = X.shape
        p = A.shape[1]
        out = np.zeros((p, d, d))
        for j in range(p):
            for i in range(n):
                w = A[i, j]
                for k in range(d):
                    wk = w * X[i, k]
                    for l in range(k, d):
                        out[j, k, l] += wk * X[i, l]
            for k in range(d):
                for l in range(k + 1, d):
                    out[j, l, k] = out[j, k, l]
        return out

    @_jit
    def _nb_column_loglik(Y, XB, O, M, S):
        n, p = Y.shape
        A = np.empty((n, p))
        out = np.zeros(p)
        for i in range(n):
            for j in range(p):
                s = S[i, j]
                a = np.exp(O[i, j] + XB[i, j] + M[i, j] + 0.5 * s * s)
                A[i, j] = a
                out[j] += Y[i, j] * XB[i, j] - a
        return out, A

    @_jit
    def _nb_row_newton(G, A, Omega):
        n, p = G.shape
        out = np.empty((n, p))
        H = np.empty((p, p))
        for i in range(n):
            for k in range(p):
                for l in range(p):
                    H[k, l] = Omega[k, l]
                H[k, k] += A[i, k]
            out[i, :] = np.linalg.solve(H, np.ascontiguousarray(G[i, :]))
        return out

    numba_impl = types.SimpleNamespace(
        exp_mean=_nb_exp_mean,
        elbo_data=lambda *a: float(_nb_elbo_data(*a)),
        gram_blocks=_nb_gram_blocks,
        column_loglik=_nb_column_loglik,
        row_newton=_nb_row_newton,
        name="numba",
    )
else:  # pragma: no cover
    numba_impl = None


def _select():
    want = os.environ.get("SICPLN_BACKEND", "").strip().lower()
    if want == "numpy" or not HAVE_NUMBA:
        return numpy_impl
    if want not in ("", "numba"):
        raise ValueError(f"SICPLN_BACKEND must be 'numba' or 'numpy', got {want!r}")
    return numba_impl


backend = _select()
