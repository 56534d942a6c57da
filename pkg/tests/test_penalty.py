import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sicpln.exceptions import QuadratureError
from sicpln.penalty import (
    PenaltyConfig,
    PriorSpec,
    ball_contour,
    phi,
    phi_d1,
    phi_d2,
    prior_density,
    prior_norm_const,
    prior_tilde,
    prior_tilde_tail_mass,
    sic_norm,
    sic_objective,
    threshold_lasso,
    threshold_scad,
    threshold_sic,
)

finite_x = st.floats(-1e3, 1e3, allow_nan=False)
pos_eps = st.floats(1e-3, 10.0)


# --- phi and derivatives -----------------------------------------------------

def test_phi_examples():
    assert phi(0.0, 0.5) == 0.0
    assert phi(0.3, 0.3) == pytest.approx(0.5, abs=1e-15)
    assert abs(phi(1e6, 0.1) - 1.0) < 1e-13


@pytest.mark.parametrize("f", [phi, phi_d1, phi_d2])
@pytest.mark.parametrize("eps", [0.0, -1.0])
def test_nonpositive_eps_rejected(f, eps):
    with pytest.raises(ValueError):
        f(0.5, eps)


def test_phi_d1_examples():
    assert phi_d1(0.0, 1.0) == 0.0
    assert phi_d1(1.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    h = 1e-6
    fd = (phi(0.37 + h, 0.2) - phi(0.37 - h, 0.2)) / (2 * h)
    assert abs(phi_d1(0.37, 0.2) - fd) < 1e-7


def test_phi_d2_examples():
    assert phi_d2(0.0, 1.0) == pytest.approx(2.0, abs=1e-15)
    assert abs(phi_d2(1 / math.sqrt(3), 1.0)) < 1e-12
    h = 1e-6
    fd = (phi_d1(0.8 + h, 0.3) - phi_d1(0.8 - h, 0.3)) / (2 * h)
    assert abs(phi_d2(0.8, 0.3) - fd) < 1e-6


def test_phi_d2_minimum_at_eps():
    # phi''' vanishes at x = eps, where phi'' = -1 / (2 eps^2)
    for eps in (0.01, 0.3, 2.0):
        x = np.linspace(0, 10 * eps, 20001)
        assert phi_d2(x, eps).min() >= -1 / (2 * eps ** 2) - 1e-12
        assert phi_d2(eps, eps) == pytest.approx(-1 / (2 * eps ** 2), rel=1e-12)


@given(finite_x, pos_eps)
def test_phi_range_and_symmetry(x, eps):
    v = phi(x, eps)
    assert 0.0 <= v < 1.0 or (v == 1.0 and abs(x) / eps > 1e7)
    assert v == phi(-x, eps)
    assert phi_d1(-x, eps) == -phi_d1(x, eps)


@given(st.floats(1e-3, 100.0), st.floats(1e-3, 100.0), pos_eps)
def test_phi_increasing_in_magnitude(a, b, eps):
    lo, hi = sorted((a, b))
    assert phi(lo, eps) <= phi(hi, eps)


@given(st.floats(-5.0, 5.0), st.floats(0.05, 5.0))
def test_derivatives_match_central_differences(x, eps):
    h = 1e-6 * max(eps, abs(x))
    fd1 = (phi(x + h, eps) - phi(x - h, eps)) / (2 * h)
    fd2 = (phi_d1(x + h, eps) - phi_d1(x - h, eps)) / (2 * h)
    scale1 = 1.0 / eps  # natural size of phi'
    scale2 = 1.0 / eps ** 2
    assert abs(phi_d1(x, eps) - fd1) <= 1e-5 * scale1
    assert abs(phi_d2(x, eps) - fd2) <= 1e-5 * scale2


# --- approximate L0 norm -----------------------------------------------------

def test_sic_norm_examples():
    assert sic_norm([0, 0, 0], 0.1) == 0.0
    assert sic_norm([1, 1], 1.0) == pytest.approx(1.0)
    assert abs(sic_norm([0.5, -2, 0], 1e-4) - 2.0) < 1e-6


def test_sic_norm_bounds_by_other_norms():
    rng = np.random.default_rng(20240101)
    for _ in range(10_000):
        dim = int(rng.integers(1, 51))
        x = rng.uniform(-10, 10, dim)
        eps = float(rng.uniform(1e-3, 10))
        s = sic_norm(x, eps)
        l2 = np.linalg.norm(x)
        assert s <= l2 ** 2 / eps ** 2 * (1 + 1e-12)
        assert s <= np.abs(x).sum() / (2 * eps) * (1 + 1e-12)
        assert s <= math.sqrt(dim) * l2 / (2 * eps) * (1 + 1e-12)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), pos_eps, pos_eps)
def test_sic_norm_nonincreasing_in_eps(v, e1, e2):
    lo, hi = sorted((e1, e2))
    assert sic_norm(v, hi) <= sic_norm(v, lo) + 1e-12


@given(st.lists(st.floats(-10, 10).filter(lambda t: t == 0 or abs(t) > 1e-3), min_size=1, max_size=20))
def test_sic_norm_tends_to_l0(v):
    assert abs(sic_norm(v, 1e-8) - np.count_nonzero(v)) < 1e-4


# --- thresholding ------------------------------------------------------------

def test_threshold_sic_examples():
    assert threshold_sic(0.0, 3.0, 0.2) == 0.0
    assert abs(threshold_sic(10.0, 1.0, 0.8) - 10.0) < 1e-2
    assert threshold_sic(1.3, 0.0, 0.5) == 1.3


def test_threshold_sic_matches_high_precision_root():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    s, lam, eps = 10, 1, mpmath.mpf("0.8")
    # large-|s| branch: 2 (theta - s) + lam * phi'(theta) = 0 near theta = s
    g = lambda t: 2 * (t - s) + lam * 2 * t * eps ** 2 / (t ** 2 + eps ** 2) ** 2
    root = mpmath.findroot(g, 10)
    assert threshold_sic(10.0, 1.0, 0.8) == pytest.approx(float(root), abs=1e-12)
    # phi'(0) = 0, so below the jump the minimizer is a tiny root, not exactly 0
    small = threshold_sic(-0.4, 1.0, 0.01)
    assert -1e-4 < small < 0
    assert sic_objective(small, -0.4, 1.0, 0.01) < sic_objective(0.0, -0.4, 1.0, 0.01)


def _grid_best(s, lam, eps, n=100_001):
    grid = np.linspace(-abs(s) - 1, abs(s) + 1, n)
    return sic_objective(grid, s, lam, eps).min()


@given(st.floats(-10, 10), st.floats(0, 10), st.floats(0.01, 2))
def test_threshold_sic_beats_grid(s, lam, eps):
    theta = threshold_sic(s, lam, eps)
    assert sic_objective(theta, s, lam, eps) <= _grid_best(s, lam, eps) + 1e-9
    assert abs(theta) <= abs(s)
    assert theta == 0 or np.sign(theta) == np.sign(s)


def test_threshold_sic_hard_threshold_limit():
    # eps -> 0 gives (s - theta)^2 + lam [theta != 0]: keep s iff s^2 > lam
    lam, eps = 4.0, 1e-9
    assert abs(threshold_sic(2.0 * (1 - 1e-6), lam, eps)) < 1e-12
    assert threshold_sic(2.0 * (1 + 1e-6), lam, eps) == pytest.approx(2.0, rel=1e-5)


def test_threshold_sic_odd():
    for s in (0.3, 1.7, 5.0):
        assert threshold_sic(-s, 2.0, 0.3) == -threshold_sic(s, 2.0, 0.3)


def test_lasso_examples():
    assert threshold_lasso(0.0, 1.0) == 0.0
    assert threshold_lasso(2.0, 1.0) == 1.5
    assert threshold_lasso(-0.3, 1.0) == 0.0


@given(st.floats(-10, 10), st.floats(0, 10))
def test_lasso_minimizes_objective(s, lam):
    theta = threshold_lasso(s, lam)
    grid = np.linspace(-abs(s) - 1, abs(s) + 1, 20001)
    best = np.min((s - grid) ** 2 + lam * np.abs(grid))
    assert (s - theta) ** 2 + lam * abs(theta) <= best + 1e-9


def _scad_pen(t, tau, a):
    t = np.abs(t)
    return np.where(
        t <= tau, tau * t,
        np.where(t <= a * tau, (2 * a * tau * t - t ** 2 - tau ** 2) / (2 * (a - 1)),
                 tau ** 2 * (a + 1) / 2),
    )


def test_scad_examples():
    assert threshold_scad(10.0, 1.0, 3.0) == 10.0
    assert threshold_scad(0.2, 1.0) == 0.0
    with pytest.raises(ValueError):
        threshold_scad(1.0, 1.0, a=2.0)


@given(st.floats(-10, 10), st.floats(0.01, 10))
def test_scad_minimizes_objective(s, lam):
    a = 3.7
    tau = lam / 2
    theta = threshold_scad(s, lam, a)
    grid = np.linspace(-abs(s) - 1, abs(s) + 1, 40001)
    obj = (s - grid) ** 2 + 2 * _scad_pen(grid, tau, a)
    val = (s - theta) ** 2 + 2 * _scad_pen(theta, tau, a)
    assert val <= obj.min() + 1e-8


def test_scad_and_lasso_agree_near_zero():
    for s in np.linspace(-1.0, 1.0, 41):
        assert threshold_scad(s, 1.0) == pytest.approx(threshold_lasso(s, 1.0), abs=1e-15)


# --- ball geometry -----------------------------------------------------------

def test_ball_contour_examples():
    np.testing.assert_allclose(ball_contour(0.5, 1.0, 0.0), [1.0, -1.0], atol=1e-15)
    k, eps = 0.4, 0.7
    x = eps * math.sqrt(k / (1 - k))
    np.testing.assert_allclose(ball_contour(k, eps, x), [0.0, 0.0], atol=1e-7)
    assert ball_contour(0.3, 1.0, 5.0).size == 0


@given(st.floats(-2, 2))
def test_ball_contour_plug_back(x):
    k, eps = 0.9, 0.25
    ys = ball_contour(k, eps, x)
    for y in ys:
        assert abs(phi(x, eps) + phi(y, eps) - k) < 1e-10


def test_ball_contour_open_for_large_k():
    # for k >= 1 the level set is unbounded in y once phi(x) <= k - 1
    assert ball_contour(1.5, 1.0, 0.1).size == 0
    assert ball_contour(1.5, 1.0, 3.0).size == 2


# --- prior -------------------------------------------------------------------

SPECS = [PriorSpec(2.0, 0.5, 1.0), PriorSpec(10.0, 0.1, 1.0), PriorSpec(5.0, 1.0, 2.0),
         PriorSpec(60.0, 0.05, 1.0)]


def test_prior_density_examples():
    assert prior_density(0.0, PriorSpec(3.0, 0.2)) == 1.0
    assert abs(prior_density(1e8, PriorSpec(2.0, 0.4, 1.0)) - math.exp(-1)) < 1e-8


@pytest.mark.parametrize("spec", SPECS)
def test_prior_tilde_integrates_to_one(spec):
    # direct quadrature on the original variable, independent of the
    # substitution used inside prior_norm_const
    f = lambda b: prior_tilde(b, spec)
    half = sum(integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=500)[0]
               for lo, hi in [(0, spec.eps), (spec.eps, 1.0), (1.0, np.inf)])
    assert abs(2 * half - 1.0) < 1e-6


@pytest.mark.parametrize("spec", SPECS)
@pytest.mark.parametrize("beta", [0.0, 0.03, 0.7, 4.0, 1e4])
def test_prior_decomposition(spec, beta):
    c = prior_norm_const(spec)
    lhs = prior_density(beta, spec)
    rhs = math.exp(-spec.scale) * (1 + prior_tilde(beta, spec) / c)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_prior_norm_const_closed_form_small_scale():
    # l -> 0: expm1(l e^2/(b^2+e^2)) ~ l e^2/(b^2+e^2), integral ~ l e pi
    spec = PriorSpec(lam=2e-8, eps=0.3)
    assert prior_norm_const(spec) == pytest.approx(1 / (spec.scale * spec.eps * math.pi), rel=1e-7)


def test_prior_norm_const_matches_mpmath():
    mpmath = pytest.importorskip("mpmath")
    spec = PriorSpec(lam=8.0, eps=0.2, sigma2=1.5)
    mpmath.mp.dps = 30
    l, e = spec.scale, spec.eps
    I = 2 * mpmath.quad(lambda b: mpmath.expm1(l * e ** 2 / (b ** 2 + e ** 2)), [0, e, 1, mpmath.inf])
    assert prior_norm_const(spec) == pytest.approx(float(1 / I), rel=1e-9)


def test_prior_norm_const_approaches_limit():
    # eps_n = K sqrt(l) exp(-l), K = 1: c -> 1/sqrt(pi) as lam grows
    target = 1 / math.sqrt(math.pi)
    gaps = []
    for lam in (60.0, 200.0, 1000.0):
        l = lam / 2
        spec = PriorSpec(lam=lam, eps=math.sqrt(l) * math.exp(-l))
        gaps.append(abs(prior_norm_const(spec) - target) / target)
    assert gaps[0] < 0.05
    assert gaps[0] > gaps[1] > gaps[2]


def test_spike_concentrates_as_lam_grows():
    masses = [prior_tilde_tail_mass(0.1, PriorSpec(lam, 0.5)) for lam in (10.0, 50.0, 200.0)]
    assert masses[0] > masses[1] > masses[2]
    assert masses[2] < 0.01


def test_tail_mass_matches_direct_quadrature():
    spec = PriorSpec(10.0, 0.5)
    direct = 2 * integrate.quad(lambda b: prior_tilde(b, spec), 0.1, np.inf, epsabs=1e-12)[0]
    assert prior_tilde_tail_mass(0.1, spec) == pytest.approx(direct, rel=1e-7)


def _flatness(eps, lam=2.0):
    spec = PriorSpec(lam, eps)
    ref = prior_density(3.0, spec)
    beta = np.linspace(-5, 5, 200_001)
    dev = np.abs(prior_density(beta, spec) / ref - 1)
    away = dev[np.abs(beta) >= 0.1].max()
    integrated = dev.sum() * (beta[1] - beta[0])
    return away, integrated, dev.max()


def test_prior_flattens_as_eps_shrinks():
    rows = [_flatness(e) for e in (1e-1, 1e-2, 1e-3)]
    away = [r[0] for r in rows]
    integrated = [r[1] for r in rows]
    assert away[0] > away[1] > away[2] and away[2] < 1e-3
    assert integrated[0] > integrated[1] > integrated[2] and integrated[2] < 1e-2
    # the literal sup over [-5, 5] does not vanish: it sits at beta = 0
    for eps, (_, _, sup) in zip((1e-1, 1e-2, 1e-3), rows):
        assert sup == pytest.approx(math.expm1(phi(3.0, eps)), rel=1e-12)
        assert sup > 1.7


def test_quadrature_failure_reports_diagnostics(monkeypatch):
    import sicpln.penalty as pen

    monkeypatch.setattr(pen, "QUAD_EPSABS", 1e-300)
    monkeypatch.setattr(pen.integrate, "quad", lambda *a, **k: (1.0, 1.0, {}, "limit reached"))
    with pytest.raises(QuadratureError) as exc:
        prior_norm_const(PriorSpec(2.0, 0.5))
    assert exc.value.diagnostics["lam"] == 2.0


def test_prior_spec_validation():
    for bad in [(0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, -1.0), (math.inf, 1.0, 1.0)]:
        with pytest.raises(ValueError):
            PriorSpec(*bad)


# --- config ------------------------------------------------------------------

def test_default_schedule():
    cfg = PenaltyConfig()
    sched = cfg.schedule()
    assert len(sched) == 50
    assert sched[0] == 1.0
    assert sched[-1] == pytest.approx(1e-5, rel=1e-12)
    assert np.all(np.diff(sched) < 0)
    assert cfg.resolve_lam(1000) == pytest.approx(math.log(1000))
    assert PenaltyConfig(lam=2.5).resolve_lam(1000) == 2.5


@pytest.mark.parametrize("kw", [
    {"eps_ratio": 1.0}, {"eps_ratio": 0.0}, {"eps_start": 0.0}, {"eps_steps": 0},
    {"zero_threshold": 0.0}, {"lam": -1.0}, {"eps_steps": 2.5},
])
def test_penalty_config_validation(kw):
    with pytest.raises(ValueError):
        PenaltyConfig(**kw)
