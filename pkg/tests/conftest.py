import time

import pytest
from hypothesis import settings

from sicpln.fit import pln_fit, sicpln_fit
from sicpln.simulate import SimScenario, gen_counts

settings.register_profile("sicpln", deadline=None, max_examples=60)
settings.load_profile("sicpln")

# Seeds of the desk-scale recovery study (n=1000, p=4, d=6). Fixed up front,
# never tuned.
STUDY_SEEDS = range(20)


class _StudyCache:
    """Lazily fitted recovery-study scenarios shared by every test module."""

    def __init__(self):
        self._fits = {}
        self.seconds = {}

    def get(self, kind, method, seed):
        key = (kind, method, seed)
        if key not in self._fits:
            sim = gen_counts(SimScenario(n=1000, p=4, d=6, covariance_kind=kind, seed=seed))
            fitter = sicpln_fit if method == "sicpln" else pln_fit
            t0 = time.perf_counter()
            self._fits[key] = (sim, fitter(sim.dataset))
            self.seconds[key] = time.perf_counter() - t0
        return self._fits[key]

    def all(self, kind, method):
        return [self.get(kind, method, s) for s in STUDY_SEEDS]

    def fit_seconds(self, kind, method):
        """Fitting time spent on one cell, whoever triggered the fits."""
        return sum(self.seconds[(kind, method, s)] for s in STUDY_SEEDS)


@pytest.fixture(scope="session")
def study():
    return _StudyCache()


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
