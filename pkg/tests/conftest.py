import numpy as np
import pytest

from ihmm.data import CovariateSpec, Dataset, Series, build_covariates

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0].rstrip("abcde"))):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")


def make_series(values, status=None, subject_id="a", day_id="d1", spec=None, microenv=None):
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    status = np.zeros(values.shape, np.int8) if status is None else np.asarray(status, np.int8)
    clock = np.arange(T) / T
    X = build_covariates(clock, spec or CovariateSpec(), microenv)
    vals = np.where(status == 0, values, np.nan)
    return Series(subject_id=subject_id, day_id=day_id, values=vals, status=status, clock_time=clock,
                  covariates=X, time_index=np.arange(T), microenv=microenv)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_state_dataset():
    """Three series alternating between two far-apart states in long runs."""
    rng = np.random.default_rng(7)
    series, truth = [], []
    for i in range(3):
        z = np.repeat([0, 1, 0, 1], [15, 20, 15, 10])
        z = np.roll(z, 5 * i)
        mu = np.array([[-1.5, -1.0], [1.5, 1.0]])
        y = mu[z] + 0.2 * rng.standard_normal((z.size, 2))
        series.append(make_series(y, subject_id=f"s{i}"))
        truth.append(z)
    return Dataset(series=series, lod=np.array([-10.0, -10.0])), truth
