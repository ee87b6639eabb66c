import numpy as np
import pytest
from scipy import stats

from loopsoup.rng import RandomStream


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def stream():
    return RandomStream(20261016)


def _propagate(d, steps, R):
    shape = (2 * R + 1,) * d
    p = np.zeros(shape)
    p[(R,) * d] = 1.0
    out = [1.0]
    for _ in range(steps):
        q = np.zeros(shape)
        for axis in range(d):
            q += np.roll(p, 1, axis=axis) + np.roll(p, -1, axis=axis)
        p = q / (2 * d)
        out.append(p[(R,) * d])
    return np.array(out), p


def lattice_return_table(d, steps):
    """P(S_k = 0), k = 0..steps, for simple random walk on Z^d by brute-force propagation.

    The periodic grid has width steps + 3, so no wrapped path can return to 0.
    """
    return _propagate(d, steps, steps // 2 + 1)


def lattice_distribution(d, steps):
    """Distribution of S_steps on the grid [-R, R]^d with R = steps + 1 (no wrapping)."""
    return _propagate(d, steps, steps + 1)[1]


def chi2_pvalue(observed, expected, min_expected=5.0):
    """Pearson chi-square p-value after pooling bins with small expectation into one."""
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if np.any(observed[expected == 0] > 0):
        return 0.0
    observed, expected = observed[expected > 0], expected[expected > 0]
    big = expected >= min_expected
    obs = list(observed[big]) + ([observed[~big].sum()] if (~big).any() else [])
    exp = list(expected[big]) + ([expected[~big].sum()] if (~big).any() else [])
    obs, exp = np.array(obs), np.array(exp)
    exp = exp * obs.sum() / exp.sum()
    return stats.chisquare(obs, exp).pvalue
