"""Poisson log-normal model: data containers, ELBO, gradients, predictions.

Variational means are *residuals* about the fixed effect. The latent layer
is ``Z = O + X B + W`` with ``W_i ~ N(0, Sigma)`` and the variational
posterior is ``q(W_i) = N(m_i, diag(s_i^2))``. Under this convention

    A      = exp(O + X B + M + S^2 / 2)
    J      = sum_ij [y (o + x'b + m) - a + log s] + n/2 log|Omega|
             - 1/2 tr(Omega [M'M + diag(1'S^2)]) - sum_ij log y! + n p / 2
    dJ/dM  = Y - A - M Omega
    dJ/dS  = 1/S - S * A - S * diag(Omega)
    dJ/dB  = X'(Y - A)

The additive constant makes ``J`` a genuine lower bound on ``log p(Y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from . import _kernels
from .exceptions import DataError, NumericError

__all__ = [
    "CountDataset",
    "ModelParams",
    "VariationalParams",
    "mean_matrix",
    "elbo",
    "grad_M",
    "grad_S",
    "grad_B",
    "update_sigma",
    "predict_variational",
    "predict_marginal",
]

_EXP_LIMIT = 700.0


def _as_matrix(a, name):
    arr = np.ascontiguousarray(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise DataError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class CountDataset:
    """Counts ``Y`` (n x p), covariates ``X`` (n x d, first column ones), offsets ``O``."""

    Y: np.ndarray
    X: np.ndarray
    O: Optional[np.ndarray] = None

    def __post_init__(self):
        Y = _as_matrix(self.Y, "Y")
        X = _as_matrix(self.X, "X")
        O = np.zeros_like(Y) if self.O is None else _as_matrix(self.O, "O")
        n, p = Y.shape
        if n < 1 or p < 1 or X.shape[1] < 1:
            raise DataError("need n >= 1, p >= 1 and d >= 1")
        if X.shape[0] != n or O.shape != Y.shape:
            raise DataError(
                f"row mismatch: Y {Y.shape}, X {X.shape}, O {O.shape}"
            )
        if not np.all(np.isfinite(Y)) or np.any(Y < 0) or np.any(Y != np.round(Y)):
            bad = np.argwhere(~np.isfinite(Y) | (Y < 0) | (Y != np.round(Y)))[0]
            raise DataError(f"counts must be nonnegative integers; bad entry at {tuple(bad)}")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("first column of X must be the all-ones intercept")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(O)):
            raise DataError("X and O must be finite")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "O", O)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _chol(S):
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError:
        return None


@dataclass(frozen=True)
class ModelParams:
    """Regression matrix ``B`` (d x p) and latent covariance ``Sigma``.

    ``Omega`` is filled in from ``Sigma`` when not supplied.
    """

    B: np.ndarray
    Sigma: np.ndarray
    Omega: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        B = _as_matrix(self.B, "B")
        Sigma = _as_matrix(self.Sigma, "Sigma")
        p = Sigma.shape[0]
        if Sigma.shape != (p, p) or B.shape[1] != p:
            raise DataError(f"shape mismatch: B {B.shape}, Sigma {Sigma.shape}")
        scale = max(1.0, float(np.max(np.abs(Sigma))))
        if np.max(np.abs(Sigma - Sigma.T)) > 1e-10 * scale:
            raise NumericError("Sigma is not symmetric")
        L = _chol(Sigma)
        if L is None:
            raise NumericError("Sigma is not positive definite")
        if self.Omega is None:
            Omega = linalg.cho_solve((L, True), np.eye(p))
            Omega = 0.5 * (Omega + Omega.T)
        else:
            Omega = _as_matrix(self.Omega, "Omega")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "_logdet_sigma", 2.0 * float(np.sum(np.log(np.diag(L)))))

    @property
    def logdet_omega(self) -> float:
        return -self._logdet_sigma


@dataclass(frozen=True)
class VariationalParams:
    """Variational means ``M`` and standard deviations ``S`` (both n x p)."""

    M: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        M = _as_matrix(self.M, "M")
        S = _as_matrix(self.S, "S")
        if M.shape != S.shape:
            raise DataError(f"M {M.shape} and S {S.shape} differ in shape")
        if not np.all(S > 0):
            raise DataError("variational standard deviations must be > 0")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "S", S)


def _check_overflow(exponent_fn, A):
    if np.all(np.isfinite(A)):
        return A
    expo = exponent_fn()
    i, j = np.argwhere(~np.isfinite(A))[0]
    raise NumericError(
        f"exp overflow in mean matrix at (i={i}, j={j}): exponent {expo[i, j]:.4g}"
    )


def mean_matrix(data: CountDataset, params: ModelParams, vp: VariationalParams) -> np.ndarray:
    XB = data.X @ params.B
    A = _kernels.backend.exp_mean(data.O, XB, vp.M, vp.S)
    return _check_overflow(lambda: data.O + XB + vp.M + 0.5 * vp.S ** 2, A)


def _log_factorial_sum(Y):
    return float(np.sum(gammaln(Y + 1.0)))


def _kl_quadratic(params, vp):
    """tr(Omega [M'M + diag(1'S^2)])."""
    C = vp.M.T @ vp.M
    C[np.diag_indices_from(C)] += np.sum(vp.S ** 2, axis=0)
    return float(np.sum(params.Omega * C))


def elbo_from_parts(data, params, vp, A, XB) -> float:
    n, p = data.Y.shape
    data_term = _kernels.backend.elbo_data(data.Y, data.O, XB, vp.M, vp.S, A)
    return (
        data_term
        + 0.5 * n * params.logdet_omega
        - 0.5 * _kl_quadratic(params, vp)
        - _log_factorial_sum(data.Y)
        + 0.5 * n * p
    )


def elbo(data: CountDataset, params: ModelParams, vp: VariationalParams) -> float:
    XB = data.X @ params.B
    A = mean_matrix(data, params, vp)
    return elbo_from_parts(data, params, vp, A, XB)


def grad_M(data, params, vp, A=None) -> np.ndarray:
    if A is None:
        A = mean_matrix(data, params, vp)
    return data.Y - A - vp.M @ params.Omega


def grad_S(data, params, vp, A=None) -> np.ndarray:
    if A is None:
        A = mean_matrix(data, params, vp)
    return 1.0 / vp.S - vp.S * A - vp.S * np.diag(params.Omega)[None, :]


def grad_B(data, params, vp, A=None) -> np.ndarray:
    """X'(Y - A) / n."""
    if A is None:
        A = mean_matrix(data, params, vp)
    return data.X.T @ (data.Y - A) / data.n


def update_sigma(data, params, vp) -> np.ndarray:
    """Closed-form maximizer ``(M'M + diag(1'S^2)) / n``, jittered to SPD if needed."""
    n, p = vp.M.shape
    Sigma = vp.M.T @ vp.M
    Sigma[np.diag_indices_from(Sigma)] += np.sum(vp.S ** 2, axis=0)
    Sigma = 0.5 * (Sigma + Sigma.T) / n
    jitter = 1e-10 * max(np.trace(Sigma) / p, np.finfo(float).tiny)
    for _ in range(20):
        # Cholesky alone accepts round-off pivots of a singular matrix
        ev = np.linalg.eigvalsh(Sigma)
        if ev[0] > 1e-12 * ev[-1] and _chol(Sigma) is not None:
            return Sigma
        Sigma[np.diag_indices_from(Sigma)] += jitter
        jitter *= 10.0
    raise NumericError("could not make Sigma positive definite")


def predict_variational(data, params, vp) -> np.ndarray:
    """In-sample prediction ``exp(O + X B + M + S^2/2)``."""
    return mean_matrix(data, params, vp)


def predict_marginal(X_new, O_new, params: ModelParams) -> np.ndarray:
    """Marginal prediction ``exp(O + X B + diag(Sigma)/2)`` (log-normal mean)."""
    X_new = _as_matrix(X_new, "X_new")
    expo = X_new @ params.B + 0.5 * np.diag(params.Sigma)[None, :]
    if O_new is not None:
        expo = expo + _as_matrix(O_new, "O_new")
    if np.any(expo > _EXP_LIMIT):
        i, j = np.argwhere(expo > _EXP_LIMIT)[0]
        raise NumericError(f"exp overflow in marginal prediction at (i={i}, j={j})")
    return np.exp(expo)
