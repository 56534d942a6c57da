"""Synthetic PLN data for simulation studies.

Random streams: every draw comes from a Philox counter-based generator
keyed by ``SeedSequence(seed, spawn_key=(replication, purpose))``. The
purposes are design (0), covariance (1), latent layer (2), counts (3) and
hold-out counts (4). Replications are therefore independent, and each one
can be regenerated on its own.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .exceptions import NumericError
from .model import CountDataset

__all__ = [
    "REFERENCE_PATTERN",
    "SimScenario",
    "SimulatedData",
    "default_b_pattern",
    "rng_for",
    "gen_design",
    "gen_covariance",
    "gen_counts",
    "gen_holdout_counts",
]

STREAMS = {"design": 0, "covariance": 1, "latent": 2, "counts": 3, "holdout": 4}

# covariates x1..x6 (rows) by species 1..4 (columns)
REFERENCE_PATTERN = np.array([
    [0.0, 0.5, 1.0, 1.0],
    [1.0, 0.0, 0.5, 1.0],
    [1.0, 0.0, 0.5, 0.0],
    [1.0, 1.0, 1.0, 0.0],
    [1.0, 1.0, 1.0, 0.5],
    [0.0, 0.0, 0.0, 0.0],
])

STUDY_N = (30, 50, 100, 1000)
STUDY_P = (10, 20, 30, 40)


def default_b_pattern(d: int, p: int) -> np.ndarray:
    """The 6 x 4 species layout above, tiled to ``d`` covariates by ``p`` species."""
    rows = np.arange(d) % REFERENCE_PATTERN.shape[0]
    cols = np.arange(p) % REFERENCE_PATTERN.shape[1]
    return REFERENCE_PATTERN[np.ix_(rows, cols)].copy()


@dataclass(frozen=True)
class SimScenario:
    """One simulation configuration.

    ``d`` counts covariates *excluding* the intercept, so designs have
    ``d + 1`` columns and the true ``B`` has ``d + 1`` rows (intercept first).
    """

    n: int
    p: int
    d: int = 6
    covariance_kind: str = "full"
    b_pattern: Optional[np.ndarray] = None
    intercept: float = 0.0
    offset: float = 0.0
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.d < 0:
            raise ValueError("need n >= 1, p >= 1, d >= 0")
        kind = self.covariance_kind.lower()
        if kind not in ("full", "diagonal"):
            raise ValueError(f"covariance_kind must be 'full' or 'diagonal', got {self.covariance_kind!r}")
        object.__setattr__(self, "covariance_kind", kind)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.b_pattern is not None:
            bp = np.asarray(self.b_pattern, dtype=float)
            if bp.shape != (self.d, self.p):
                raise ValueError(f"b_pattern must be {self.d} x {self.p}, got {bp.shape}")
            object.__setattr__(self, "b_pattern", bp)

    @property
    def scenario_id(self) -> str:
        return f"n{self.n}_p{self.p}_{self.covariance_kind}"

    def on_study_grid(self) -> bool:
        """Whether (n, p) and the coefficient levels match the reference simulation grid."""
        pattern_ok = np.all(np.isin(self.pattern(), (0.0, 0.5, 1.0)))
        return self.n in STUDY_N and self.p in STUDY_P and bool(pattern_ok)

    def pattern(self) -> np.ndarray:
        if self.b_pattern is not None:
            return self.b_pattern
        return default_b_pattern(self.d, self.p)

    def true_B(self) -> np.ndarray:
        B = np.empty((self.d + 1, self.p))
        B[0] = self.intercept
        B[1:] = self.pattern()
        return B


@dataclass(frozen=True)
class SimulatedData:
    dataset: CountDataset
    B: np.ndarray
    Sigma: np.ndarray
    Z: np.ndarray
    scenario: SimScenario


def rng_for(scenario: SimScenario, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(int(scenario.seed),
                                spawn_key=(int(scenario.replication), STREAMS[purpose]))
    return np.random.Generator(np.random.Philox(ss))


def gen_design(scenario: SimScenario) -> np.ndarray:
    rng = rng_for(scenario, "design")
    X = np.ones((scenario.n, scenario.d + 1))
    X[:, 1:] = rng.uniform(0.5, 1.5, size=(scenario.n, scenario.d))
    return X


def gen_covariance(scenario: SimScenario, max_draws: int = 100) -> np.ndarray:
    rng = rng_for(scenario, "covariance")
    p = scenario.p
    if scenario.covariance_kind == "diagonal":
        return np.diag(np.maximum(rng.uniform(0.0, 5.0, size=p), 1e-3))
    for _ in range(max_draws):
        Psi = rng.uniform(-1.5, 1.5, size=(p, p))
        Sigma = Psi.T @ Psi
        ev = np.linalg.eigvalsh(Sigma)
        if ev[0] > 1e-10 * max(ev[-1], 1e-300):
            return Sigma
    raise NumericError(f"no well-conditioned covariance after {max_draws} draws")


def _latent(scenario, X, B, Sigma):
    rng = rng_for(scenario, "latent")
    L = linalg.cholesky(Sigma, lower=True)
    W = rng.standard_normal((scenario.n, scenario.p)) @ L.T
    return scenario.offset + X @ B + W


def _poisson(Z, rng):
    if np.any(Z > 700):
        raise NumericError("latent log-rate overflows exp(); use a smaller b_pattern or intercept")
    return rng.poisson(np.exp(Z)).astype(float)


def gen_counts(scenario: SimScenario) -> SimulatedData:
    """Draw ``Z_i ~ N(o + X_i B, Sigma)`` and ``Y_ij ~ Poisson(exp(Z_ij))``.

    The offset ``o`` is the scenario's constant ``offset`` (0 by default).
    """
    X = gen_design(scenario)
    Sigma = gen_covariance(scenario)
    B = scenario.true_B()
    Z = _latent(scenario, X, B, Sigma)
    Y = _poisson(Z, rng_for(scenario, "counts"))
    data = CountDataset(Y=Y, X=X, O=np.full_like(Y, float(scenario.offset)))
    return SimulatedData(dataset=data, B=B, Sigma=Sigma, Z=Z, scenario=scenario)


def gen_holdout_counts(sim: SimulatedData) -> np.ndarray:
    """Fresh counts for the same design: a new latent draw and new Poisson noise."""
    sc = sim.scenario
    rng = rng_for(sc, "holdout")
    L = linalg.cholesky(sim.Sigma, lower=True)
    Z = sim.dataset.O + sim.dataset.X @ sim.B + rng.standard_normal((sc.n, sc.p)) @ L.T
    return _poisson(Z, rng)
