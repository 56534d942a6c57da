"""Sparse PLN estimation: penalized Fisher scoring inside variational EM,
wrapped in an epsilon-telescoping loop.

The maximized objective is

    F(B, Sigma, M, S) = J(B, Sigma, M, S) - lam/2 * sum_{k>=1, j} phi_eps(B_kj)

where ``J`` is the ELBO of :mod:`sicpln.model` and row 0 of ``B`` (the
intercepts) is not penalized. Score and information for ``B`` are reported
per observation, i.e. both the data part and the penalty part are divided
by ``n``; the Newton step is unaffected by that scaling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from . import _kernels
from .exceptions import NumericError
from .model import (
    CountDataset,
    ModelParams,
    VariationalParams,
    elbo_from_parts,
    mean_matrix,
    update_sigma,
)
from .penalty import PenaltyConfig, phi, phi_d1, phi_d2

__all__ = [
    "FitOptions",
    "FitResult",
    "VEMState",
    "penalty_mask",
    "penalized_objective",
    "penalized_score",
    "penalized_information",
    "information_blocks",
    "scoring_step",
    "vm_step",
    "vem",
    "initialize",
    "zero_small",
    "sicpln_fit",
    "pln_fit",
    "fit_linear_sic",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    max_vem_iters: int = 200
    max_scoring_iters: int = 100
    tol_elbo: float = 1e-6
    tol_param: float = 1e-7
    record_path: bool = True
    max_halvings: int = 30

    def __post_init__(self):
        if self.max_vem_iters < 1 or self.max_scoring_iters < 1 or self.max_halvings < 1:
            raise ValueError("iteration caps must be >= 1")
        if not (self.tol_elbo > 0 and self.tol_param > 0):
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class VEMState:
    params: ModelParams
    vp: VariationalParams


@dataclass
class FitResult:
    """Output of :func:`sicpln_fit`.

    ``elbo_trace[t]`` holds the penalized objective after every VEM
    iteration of telescoping stage ``t``; the last entry belongs to the
    refit after post-treatment. ``converged`` is aligned with it.
    """

    params: ModelParams
    vp: VariationalParams
    lam: float
    eps_schedule: np.ndarray
    path: List[Tuple[float, np.ndarray]]
    elbo_trace: List[List[float]]
    converged: List[bool]
    active_set: np.ndarray
    objective_init: float
    objective_final: float

    @property
    def B(self) -> np.ndarray:
        return self.params.B


# ---------------------------------------------------------------------------
# objective, score, information


def penalty_mask(d: int, p: int) -> np.ndarray:
    """Boolean d x p mask of penalized entries (every row but the intercept)."""
    mask = np.ones((d, p), dtype=bool)
    mask[0, :] = False
    return mask


def penalized_objective(data, params, vp, lam, eps) -> float:
    XB = data.X @ params.B
    A = mean_matrix(data, params, vp)
    pen = float(np.sum(phi(params.B[1:], eps)))
    return elbo_from_parts(data, params, vp, A, XB) - 0.5 * lam * pen


def _penalty_parts(B, lam, eps, mask):
    g = np.where(mask, 0.5 * lam * phi_d1(B, eps), 0.0)
    h = np.where(mask, 0.5 * lam * phi_d2(B, eps), 0.0)
    return g, h


def information_blocks(data, params, vp, lam, eps, A=None) -> np.ndarray:
    """(p, d, d) stack of per-feature blocks ``(X'diag(A_j)X + lam/2 Lambda_j) / n``."""
    if A is None:
        A = mean_matrix(data, params, vp)
    _, h = _penalty_parts(params.B, lam, eps, penalty_mask(data.d, data.p))
    H = _kernels.backend.gram_blocks(data.X, A)
    idx = np.arange(data.d)
    H[:, idx, idx] += h.T
    return H / data.n


def penalized_information(data, params, vp, lam, eps) -> np.ndarray:
    """Full dp x dp penalized information, column-stacked (feature-major).

    Block diagonal: features only interact through ``Sigma``, which does
    not enter the B-step.
    """
    return linalg.block_diag(*information_blocks(data, params, vp, lam, eps))


def penalized_score(data, params, vp, lam, eps) -> np.ndarray:
    """``vec(X'(Y - A) - lam/2 Gamma) / n`` with column-major stacking."""
    A = mean_matrix(data, params, vp)
    g, _ = _penalty_parts(params.B, lam, eps, penalty_mask(data.d, data.p))
    G = (data.X.T @ (data.Y - A) - g) / data.n
    return G.flatten(order="F")


# ---------------------------------------------------------------------------
# linear algebra helpers


def _ridge_qr_solve(H, g, ridge0=1e-8, max_tries=40):
    """Solve ``(H + r I) x = g`` with the smallest ridge ``r`` (0, then
    ``ridge0 * scale * 10^k``) that makes the matrix positive definite.
    The solve itself goes through a QR factorization."""
    k = H.shape[0]
    if k == 0:
        return np.zeros(0), 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    ridge = 0.0
    for attempt in range(max_tries):
        Hr = H + ridge * np.eye(k) if ridge else H
        try:
            linalg.cholesky(Hr, lower=True)
        except linalg.LinAlgError:
            ridge = ridge0 * scale * 10.0 ** attempt
            continue
        Q, R = linalg.qr(Hr)
        return linalg.solve_triangular(R, Q.T @ g), ridge
    raise NumericError("ridge escalation failed to produce a positive definite block")


# ---------------------------------------------------------------------------
# B step


def _column_objective(data, B, M, S, lam, eps, mask):
    XB = data.X @ B
    with np.errstate(over="ignore", invalid="ignore"):
        f, A = _kernels.backend.column_loglik(data.Y, XB, data.O, M, S)
    f = f - 0.5 * lam * np.sum(np.where(mask, phi(B, eps), 0.0), axis=0)
    f[~np.isfinite(f)] = -np.inf
    return f, A


def scoring_step(data, params, vp, lam, eps, opts: FitOptions, frozen=None):
    """Penalized Fisher scoring on ``B`` with ``Sigma, M, S`` held fixed.

    Each feature column is an independent problem. Every Newton step is
    followed by step halving on that column's objective, so the objective
    never decreases. ``frozen`` marks entries held at their current value.

    Returns ``(B, info)`` with ``info`` holding ``iterations``,
    ``converged`` and ``line_search_failed``.
    """
    X = data.X
    d, p = params.B.shape
    mask = penalty_mask(d, p)
    free = np.ones((d, p), dtype=bool) if frozen is None else ~frozen
    B = params.B.copy()
    M, S = vp.M, vp.S
    f_old, A = _column_objective(data, B, M, S, lam, eps, mask)
    converged = False
    ls_failed = False
    it = 0
    for it in range(1, opts.max_scoring_iters + 1):
        g_pen, h_pen = _penalty_parts(B, lam, eps, mask)
        G = X.T @ (data.Y - A) - g_pen
        H = _kernels.backend.gram_blocks(X, A)
        idx = np.arange(d)
        H[:, idx, idx] += h_pen.T
        D = np.zeros_like(B)
        for j in range(p):
            fr = free[:, j]
            D[fr, j], _ = _ridge_qr_solve(H[j][np.ix_(fr, fr)], G[fr, j])

        t = np.ones(p)
        pending = np.ones(p, dtype=bool)
        B_new = B.copy()
        A_new = A.copy()
        f_new = f_old.copy()
        for _ in range(opts.max_halvings + 1):
            B_try = B + D * t[None, :]
            f_try, A_try = _column_objective(data, B_try, M, S, lam, eps, mask)
            ok = pending & (f_try >= f_old)
            B_new[:, ok] = B_try[:, ok]
            A_new[:, ok] = A_try[:, ok]
            f_new[ok] = f_try[ok]
            pending &= ~ok
            if not pending.any():
                break
            t[pending] *= 0.5
        if pending.any():
            ls_failed = True
        step = np.max(np.abs(B_new - B)) if B.size else 0.0
        B, A, f_old = B_new, A_new, f_new
        if step < opts.tol_param:
            converged = True
            break
    return B, {"iterations": it, "converged": converged, "line_search_failed": ls_failed}


def shift_step(data, params, vp, lam, eps, opts: FitOptions, frozen=None):
    """Move along ``(B + Delta, M - X Delta)``, which leaves ``A`` unchanged.

    Only the Gaussian prior term and the penalty vary along that direction:

        q(Delta) = -1/2 tr(Omega R'R) - lam/2 sum phi(B + Delta),  R = M - X Delta

    The B-step alone sees curvature ``X'AX``, which for moderate counts
    dwarfs the curvature of this direction, so plain alternation crawls
    along it. ``q`` is maximized by damped Newton iterations on the
    column-stacked ``Delta`` (Hessian ``Omega kron X'X + lam/2 diag(phi'')``).

    Returns ``(B, M)``.
    """
    X = data.X
    d, p = params.B.shape
    mask = penalty_mask(d, p)
    free = np.ones((d, p), dtype=bool) if frozen is None else ~frozen
    fv = free.flatten(order="F")
    Omega = params.Omega
    XtX = X.T @ X
    K = np.kron(Omega, XtX)[np.ix_(fv, fv)]
    B0, M0 = params.B, vp.M
    XtM = X.T @ M0

    def q(Delta):
        # tr(Omega R'R) = tr(Omega M'M) - 2 tr(Omega Delta' X'M) + tr(Omega Delta' X'X Delta)
        cross = np.sum((XtM - 0.5 * XtX @ Delta) @ Omega * Delta)
        pen = np.sum(np.where(mask, phi(B0 + Delta, eps), 0.0))
        return cross - 0.5 * lam * pen

    Delta = np.zeros_like(B0)
    f = q(Delta)
    for _ in range(opts.max_scoring_iters):
        Bc = B0 + Delta
        g_pen, h_pen = _penalty_parts(Bc, lam, eps, mask)
        G = (XtM - XtX @ Delta) @ Omega - g_pen
        H = K + np.diag(h_pen.flatten(order="F")[fv])
        step_v, _ = _ridge_qr_solve(H, G.flatten(order="F")[fv])
        step = np.zeros(d * p)
        step[fv] = step_v
        step = step.reshape((d, p), order="F")
        t = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = Delta + t * step
            fc = q(cand)
            if fc >= f:
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - Delta))
        Delta, f = cand, fc
        if moved < opts.tol_param:
            break
    return B0 + Delta, M0 - X @ Delta


# ---------------------------------------------------------------------------
# VM step


def _row_objective(Y, C, M, S, Omega):
    # sum_j [y m - a] - 1/2 m' Omega m, per row; C = O + XB
    with np.errstate(over="ignore", invalid="ignore"):
        A = np.exp(C + M + 0.5 * S * S)
        r = np.sum(Y * M - A, axis=1) - 0.5 * np.sum((M @ Omega) * M, axis=1)
    r[~np.isfinite(r)] = -np.inf
    return r, A


def _entry_objective(C, T, omega_diag):
    # -a + t/2 - omega_jj e^t / 2 with t = log s^2; C = O + XB + M
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.exp(T)
        A = np.exp(C + 0.5 * v)
        e = -A + 0.5 * T - 0.5 * omega_diag[None, :] * v
    e[~np.isfinite(e)] = -np.inf
    return e, A, v


def vm_step(data, params, vp, max_halvings=30) -> VariationalParams:
    """One safeguarded Newton step on ``M`` (row-wise) then on ``log S^2``
    (entry-wise). Both subproblems are concave."""
    Y = data.Y
    Omega = params.Omega
    C = data.O + data.X @ params.B
    M, S = vp.M, vp.S

    r_old, A = _row_objective(Y, C, M, S, Omega)
    G = Y - A - M @ Omega
    Dm = _kernels.backend.row_newton(G, A, Omega)
    t = np.ones(M.shape[0])
    pending = np.ones(M.shape[0], dtype=bool)
    M_new = M.copy()
    for _ in range(max_halvings + 1):
        M_try = M + Dm * t[:, None]
        r_try, _ = _row_objective(Y, C, M_try, S, Omega)
        ok = pending & (r_try >= r_old)
        M_new[ok] = M_try[ok]
        pending &= ~ok
        if not pending.any():
            break
        t[pending] *= 0.5
    M = M_new

    om = np.diag(Omega).copy()
    CM = C + M
    T = 2.0 * np.log(S)
    e_old, A, v = _entry_objective(CM, T, om)
    g1 = -0.5 * A * v + 0.5 - 0.5 * om[None, :] * v
    g2 = -0.5 * A * v - 0.25 * A * v * v - 0.5 * om[None, :] * v
    Dt = -g1 / g2
    step = np.ones_like(T)
    pending = np.ones(T.shape, dtype=bool)
    T_new = T.copy()
    for _ in range(max_halvings + 1):
        T_try = T + Dt * step
        e_try, _, _ = _entry_objective(CM, T_try, om)
        ok = pending & (e_try >= e_old)
        T_new[ok] = T_try[ok]
        pending &= ~ok
        if not pending.any():
            break
        step[pending] *= 0.5
    S_new = np.exp(0.5 * T_new)
    # keep S strictly positive in floating point
    S_new = np.maximum(S_new, np.finfo(float).tiny)
    return VariationalParams(M=M, S=S_new)


# ---------------------------------------------------------------------------
# VEM and telescoping


def _objective(data, state, lam, eps):
    return penalized_objective(data, state.params, state.vp, lam, eps)


def vem(data, state: VEMState, lam, eps, opts: FitOptions, frozen=None):
    """Alternate B-scoring, the Sigma update and one VM step until the relative
    change of the penalized objective drops below ``opts.tol_elbo``.

    Returns ``(state, trace, converged)``; ``trace[0]`` is the objective at
    the incoming state.
    """
    f = _objective(data, state, lam, eps)
    trace = [f]
    converged = False
    for _ in range(opts.max_vem_iters):
        B, _ = scoring_step(data, state.params, state.vp, lam, eps, opts, frozen)
        B, M = shift_step(data, ModelParams(B=B, Sigma=state.params.Sigma,
                                            Omega=state.params.Omega),
                          state.vp, lam, eps, opts, frozen)
        vp = VariationalParams(M=M, S=state.vp.S)
        Sigma = update_sigma(data, None, vp)
        params = ModelParams(B=B, Sigma=Sigma)
        vp = vm_step(data, params, vp, opts.max_halvings)
        state = VEMState(params, vp)
        f_new = _objective(data, state, lam, eps)
        trace.append(f_new)
        if abs(f_new - f) <= opts.tol_elbo * max(1.0, abs(f)):
            converged = True
            break
        f = f_new
    return state, trace, converged


def initialize(data: CountDataset, s0: float = 0.1) -> VEMState:
    """Least-squares warm start on ``log(1 + Y) - O``."""
    L = np.log1p(data.Y) - data.O
    B0, *_ = linalg.lstsq(data.X, L)
    M0 = L - data.X @ B0
    S0 = np.full_like(M0, s0)
    vp = VariationalParams(M=M0, S=S0)
    return VEMState(ModelParams(B=B0, Sigma=update_sigma(data, None, vp)), vp)


def zero_small(B: np.ndarray, w: float) -> np.ndarray:
    """Copy of ``B`` with every entry of magnitude below ``w`` set to 0.0."""
    out = np.array(B, dtype=float, copy=True)
    out[np.abs(out) < w] = 0.0
    return out


def sicpln_fit(data: CountDataset, opts: Optional[FitOptions] = None,
               init: Optional[VEMState] = None) -> FitResult:
    """Fit a sparse PLN model by epsilon-telescoping.

    For each ``eps_t`` of the schedule the VEM loop is run to convergence,
    warm-started from the previous stage. After the last stage, entries
    with ``|B_kj| < w`` are set to exactly zero and a final VEM pass with
    that zero pattern frozen refreshes the remaining parameters.
    """
    opts = opts or FitOptions()
    pen = opts.penalty
    lam = pen.resolve_lam(data.n)
    schedule = pen.schedule()
    eps_final = float(schedule[-1])

    state = init if init is not None else initialize(data)
    obj_init = _objective(data, state, lam, eps_final)

    path, traces, converged = [], [], []
    for t, eps in enumerate(schedule):
        state, trace, ok = vem(data, state, lam, float(eps), opts)
        traces.append(trace)
        converged.append(ok)
        if opts.record_path:
            path.append((float(eps), state.params.B.copy()))
        if not ok:
            log.info("VEM did not converge at stage %d (eps=%.3g)", t + 1, eps)

    # without a penalty there is no sparsity claim to post-treat
    B = zero_small(state.params.B, pen.zero_threshold) if lam > 0 else state.params.B.copy()
    frozen = B == 0.0
    state = VEMState(ModelParams(B=B, Sigma=state.params.Sigma), state.vp)
    state, trace, ok = vem(data, state, lam, eps_final, opts, frozen=frozen)
    traces.append(trace)
    converged.append(ok)
    B = state.params.B.copy()
    B[frozen] = 0.0
    params = ModelParams(B=B, Sigma=state.params.Sigma, Omega=state.params.Omega)
    obj_final = penalized_objective(data, params, state.vp, lam, eps_final)

    return FitResult(
        params=params,
        vp=state.vp,
        lam=lam,
        eps_schedule=schedule,
        path=path,
        elbo_trace=traces,
        converged=converged,
        active_set=B != 0.0,
        objective_init=obj_init,
        objective_final=obj_final,
    )


def pln_fit(data: CountDataset, opts: Optional[FitOptions] = None) -> FitResult:
    """Unpenalized PLN fit (lam = 0, a single stage, no post-treatment)."""
    opts = opts or FitOptions()
    pen = PenaltyConfig(lam=0.0, eps_start=opts.penalty.eps_start, eps_ratio=0.5,
                        eps_steps=1, zero_threshold=opts.penalty.zero_threshold)
    return sicpln_fit(data, FitOptions(
        penalty=pen, max_vem_iters=opts.max_vem_iters,
        max_scoring_iters=opts.max_scoring_iters, tol_elbo=opts.tol_elbo,
        tol_param=opts.tol_param, record_path=opts.record_path,
        max_halvings=opts.max_halvings))


# ---------------------------------------------------------------------------
# linear-Gaussian SIC


def fit_linear_sic(X, y, lam, penalty: Optional[PenaltyConfig] = None,
                   penalized=None, max_iter=100, tol=1e-10):
    """Minimize ``||y - X beta||^2 + lam * sum_j phi_eps(beta_j)`` by
    epsilon-telescoping Newton iterations started at least squares.

    ``penalized`` is a boolean mask of penalized coefficients (default: all).
    Returns ``beta`` at the final eps of the schedule (no zeroing).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    penalty = penalty or PenaltyConfig(lam=lam)
    mask = np.ones(X.shape[1], dtype=bool) if penalized is None else np.asarray(penalized)
    XtX = X.T @ X
    Xty = X.T @ y
    beta, *_ = linalg.lstsq(X, y)

    def obj(b, eps):
        r = y - X @ b
        return -0.5 * (r @ r) - 0.5 * lam * np.sum(phi(b[mask], eps))

    for eps in penalty.schedule():
        f = obj(beta, eps)
        for _ in range(max_iter):
            g = Xty - XtX @ beta - np.where(mask, 0.5 * lam * phi_d1(beta, eps), 0.0)
            H = XtX + np.diag(np.where(mask, 0.5 * lam * phi_d2(beta, eps), 0.0))
            step, _ = _ridge_qr_solve(H, g)
            t = 1.0
            for _ in range(31):
                cand = beta + t * step
                fc = obj(cand, eps)
                if fc >= f:
                    break
                t *= 0.5
            else:
                break
            delta = np.max(np.abs(cand - beta))
            beta, f = cand, fc
            if delta < tol:
                break
    return beta
