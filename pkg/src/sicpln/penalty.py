"""Smooth L0 penalty ``phi_eps(x) = x^2 / (x^2 + eps^2)`` and related tools.

Contents:

* the penalty and its first two derivatives, plus the approximate L0 norm;
* scalar thresholding rules for SIC, LASSO and SCAD, all minimizing
  ``(s - theta)^2 + lam * pen(theta)`` (no 1/2 factor);
* level sets of the two-dimensional penalty ball;
* the prior density whose MAP estimate is the penalized estimator, its
  proper "spike" component and the normalizing constant between them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .exceptions import QuadratureError

__all__ = [
    "PenaltyConfig",
    "PriorSpec",
    "phi",
    "phi_d1",
    "phi_d2",
    "sic_norm",
    "sic_objective",
    "threshold_sic",
    "threshold_lasso",
    "threshold_scad",
    "ball_contour",
    "prior_density",
    "prior_tilde",
    "prior_norm_const",
    "prior_tilde_tail_mass",
]

QUAD_EPSABS = 1e-9


def _check_eps(eps):
    if not np.all(np.asarray(eps) > 0):
        raise ValueError(f"eps must be strictly positive, got {eps!r}")


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weight, epsilon-telescoping schedule and zeroing threshold.

    ``lam=None`` means "use log(n)" once the sample size is known.
    The default schedule runs 50 geometric steps from 1.0 down to 1e-5.
    """

    lam: Optional[float] = None
    eps_start: float = 1.0
    eps_ratio: float = 1e-5 ** (1.0 / 49.0)
    eps_steps: int = 50
    zero_threshold: float = 1e-5

    def __post_init__(self):
        if self.lam is not None and not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be a finite nonnegative number, got {self.lam!r}")
        if not self.eps_start > 0:
            raise ValueError("eps_start must be > 0")
        if not 0.0 < self.eps_ratio < 1.0:
            raise ValueError("eps_ratio must lie strictly between 0 and 1")
        if int(self.eps_steps) != self.eps_steps or self.eps_steps < 1:
            raise ValueError("eps_steps must be a positive integer")
        if not self.zero_threshold > 0:
            raise ValueError("zero_threshold must be > 0")

    def resolve_lam(self, n: int) -> float:
        return math.log(n) if self.lam is None else float(self.lam)

    def schedule(self) -> np.ndarray:
        """eps_t = eps_start * eps_ratio**(t-1) for t = 1..eps_steps."""
        t = np.arange(int(self.eps_steps), dtype=float)
        return self.eps_start * self.eps_ratio ** t


@dataclass(frozen=True)
class PriorSpec:
    lam: float
    eps: float
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("lam", "eps", "sigma2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite positive number, got {v!r}")

    @property
    def scale(self) -> float:
        """lam / (2 sigma^2), the exponent weight of the prior."""
        return self.lam / (2.0 * self.sigma2)


# ---------------------------------------------------------------------------
# penalty and derivatives


def phi(x, eps):
    _check_eps(eps)
    x2 = np.square(x)
    return x2 / (x2 + np.square(eps))


def phi_d1(x, eps):
    _check_eps(eps)
    e2 = np.square(eps)
    return 2.0 * x * e2 / np.square(np.square(x) + e2)


def phi_d2(x, eps):
    _check_eps(eps)
    e2 = np.square(eps)
    x2 = np.square(x)
    return 2.0 * e2 * (e2 - 3.0 * x2) / (x2 + e2) ** 3


def sic_norm(v, eps) -> float:
    """Approximate L0 norm: the sum of ``phi(v_j, eps)``."""
    return float(np.sum(phi(np.asarray(v, dtype=float), eps)))


# ---------------------------------------------------------------------------
# thresholding rules


def sic_objective(theta, s, lam, eps):
    return np.square(s - theta) + lam * phi(theta, eps)


def _grow_bracket(fun, lo, hi):
    # fun(lo) < 0; push hi out until fun(hi) >= 0
    while fun(hi) < 0:
        lo, hi = hi, 2.0 * hi
    return lo, hi


def threshold_sic(s: float, lam: float, eps: float) -> float:
    """Global minimizer of ``(s - theta)^2 + lam * phi(theta, eps)``.

    The minimizer shares the sign of ``s`` and satisfies ``|theta| <= |s|``.
    On ``[0, |s|]`` the stationarity function
    ``g(theta) = 2 (theta - |s|) + lam * phi_d1(theta)`` has at most two
    turning points (``g'`` decreases on ``(0, eps)`` and increases after), so
    the interval splits into at most three monotone pieces. Every root is
    bracketed and refined with Brent's method; the candidates (roots and
    ``theta = 0``) are then compared by objective value. Exact ties go to
    the candidate with the smallest magnitude.
    """
    _check_eps(eps)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    s = float(s)
    if s == 0.0:
        return 0.0
    if lam == 0.0:
        return s
    sign = 1.0 if s > 0 else -1.0
    a = abs(s)

    def g(t):
        return 2.0 * (t - a) + lam * phi_d1(t, eps)

    def dg(t):
        return 2.0 + lam * phi_d2(t, eps)

    breaks = [0.0]
    if 2.0 - lam / (2.0 * eps * eps) < 0.0:
        # dg(0) > 0 > dg(eps): one turning point below eps, one above
        c1 = optimize.brentq(dg, 0.0, eps, xtol=1e-300, rtol=4 * np.finfo(float).eps)
        lo, hi = _grow_bracket(dg, eps, 2.0 * eps)
        c2 = optimize.brentq(dg, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
        breaks += [c for c in (c1, c2) if c < a]
    breaks.append(a)

    candidates = [0.0]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        glo, ghi = g(lo), g(hi)
        if glo == 0.0:
            candidates.append(lo)
        if ghi == 0.0:
            candidates.append(hi)
        if glo * ghi < 0.0:
            candidates.append(
                optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
            )

    cand = np.array(sorted(set(candidates)))
    obj = sic_objective(cand, a, lam, eps)
    best = obj.min()
    # candidates sorted by magnitude, so argmax picks the smallest on ties
    idx = int(np.argmax(obj <= best + 1e-15 * max(1.0, abs(best))))
    return sign * float(cand[idx])


def threshold_lasso(s: float, lam: float) -> float:
    """Soft thresholding for ``(s - theta)^2 + lam |theta|``: threshold lam/2."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return float(np.sign(s) * max(abs(s) - lam / 2.0, 0.0))


def threshold_scad(s: float, lam: float, a: float = 3.0) -> float:
    """SCAD rule for ``(s - theta)^2 + 2 p_tau(|theta|)`` with ``tau = lam/2``.

    ``p_tau`` is the usual SCAD penalty, so near zero the penalty has the same
    slope ``lam`` as the LASSO term above and the two rules agree for
    ``|s| <= lam``. Beyond ``a * tau`` the estimate is left unshrunk.
    """
    if not a > 2:
        raise ValueError(f"SCAD requires a > 2, got {a!r}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    tau = lam / 2.0
    abs_s = abs(s)
    if abs_s <= 2.0 * tau:
        return float(np.sign(s) * max(abs_s - tau, 0.0))
    if abs_s <= a * tau:
        return float(((a - 1.0) * s - np.sign(s) * a * tau) / (a - 2.0))
    return float(s)


# ---------------------------------------------------------------------------
# geometry


def ball_contour(k: float, eps: float, x: float) -> np.ndarray:
    """Points ``(x, y)`` on the level set ``phi(x) + phi(y) = k``.

    Returns the array ``[y, -y]``, or an empty array when no real ``y``
    exists for this ``x``.
    """
    _check_eps(eps)
    if not k > 0:
        raise ValueError("k must be positive")
    px = float(phi(x, eps))
    num = k - px
    den = 1.0 - k + px
    if num < 0.0 or den <= 0.0:
        return np.empty(0)
    y = eps * math.sqrt(num / den)
    if not math.isfinite(y):
        return np.empty(0)
    return np.array([y, -y])


# ---------------------------------------------------------------------------
# prior


def prior_density(beta, spec: PriorSpec):
    """Unnormalized prior ``exp(-lam/(2 sigma^2) * phi_eps(beta))``."""
    return np.exp(-spec.scale * phi(beta, spec.eps))


def prior_tilde(beta, spec: PriorSpec):
    """Proper spike component ``c * (exp(l eps^2 / (beta^2 + eps^2)) - 1)``."""
    e2 = spec.eps ** 2
    return prior_norm_const(spec) * np.expm1(spec.scale * e2 / (np.square(beta) + e2))


def _tan_integrand(u, l):
    # expm1(l cos^2 u) / cos^2 u, rescaled by exp(-l); bounded on [0, pi/2]
    c2 = math.cos(u) ** 2
    s2 = math.sin(u) ** 2
    if c2 < 1e-300:
        return l * math.exp(-l)
    return -math.exp(-l * s2) * math.expm1(-l * c2) / c2


def _scaled_integral(spec: PriorSpec, u_lo: float) -> float:
    """``exp(-l) * int_{u_lo}^{pi/2} expm1(l cos^2 u) / cos^2 u du``.

    Equal to ``exp(-l) / eps * int expm1(l eps^2/(b^2+eps^2)) db`` over
    ``b >= eps tan(u_lo)`` after the substitution ``b = eps tan u``.
    """
    l = spec.scale
    res = integrate.quad(
        _tan_integrand, u_lo, math.pi / 2, args=(l,),
        epsabs=QUAD_EPSABS, epsrel=1e-12, limit=400, full_output=1,
    )
    value, abserr = res[0], res[1]
    if len(res) > 3 or abserr > max(QUAD_EPSABS, 1e-10 * abs(value)):
        raise QuadratureError(
            "prior normalizing integral did not converge",
            {"value": value, "abserr": abserr, "lam": spec.lam, "eps": spec.eps,
             "sigma2": spec.sigma2, "message": res[3] if len(res) > 3 else ""},
        )
    return value


def prior_norm_const(spec: PriorSpec) -> float:
    """``c(lam, eps) = 1 / int (exp(l eps^2/(b^2+eps^2)) - 1) db``.

    Computed by adaptive quadrature after the tangent substitution, which
    maps the algebraic tails onto a bounded interval. The integral is
    scaled by ``exp(-l)`` so the absolute tolerance (1e-9) stays meaningful.
    """
    scaled = _scaled_integral(spec, 0.0)
    log_c = -math.log(2.0 * spec.eps) - spec.scale - math.log(scaled)
    return math.exp(log_c)


def prior_tilde_tail_mass(delta: float, spec: PriorSpec) -> float:
    """Mass that the spike component places outside ``[-delta, delta]``."""
    if delta <= 0:
        return 1.0
    u_lo = math.atan(delta / spec.eps)
    return _scaled_integral(spec, u_lo) / _scaled_integral(spec, 0.0)
