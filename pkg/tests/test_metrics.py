import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from constrained_flow.constraints import Annulus, HalfSpace
from constrained_flow.distributions import builtin_case_study
from constrained_flow.metrics import (
    avg_violation,
    contaminate,
    contaminate_halfspace,
    evaluate_samples,
    mmd,
    mmd_squared,
    support_mismatch_probe,
    violation_rate,
)


def loop_rate(x, c):
    count = 0
    for row in x:
        if c.violation(row) > 0:
            count += 1
    return 100.0 * count / len(x)


def loop_avg(x, c):
    values = []
    for row in x:
        values.append(float(c.violation(row)))
    return math.fsum(values) / len(x)


def loop_mmd2(a, b, sigma=1.0):
    def k(x, y):
        return np.exp(-np.sum((x - y) ** 2) / (2 * sigma**2))

    aa = sum(k(x, y) for x in a for y in a) / len(a) ** 2
    bb = sum(k(x, y) for x in b for y in b) / len(b) ** 2
    ab = sum(k(x, y) for x in a for y in b) / (len(a) * len(b))
    return aa + bb - 2 * ab


@pytest.mark.parametrize("case", [1, 2, 3])
def test_rates_match_loop_oracle(case):
    c = builtin_case_study(case).constraint
    x = np.random.default_rng(case).normal(scale=2.0, size=(2000, 2))
    assert violation_rate(x, c) == loop_rate(x, c)
    assert avg_violation(x, c) == loop_avg(x, c)


def test_rate_examples():
    c = HalfSpace([1.0, 1.0], 0.0)
    x = np.ones((2000, 2))
    x[7] = [-1.0, -1.0]
    assert violation_rate(x, c) == 0.05
    c1 = HalfSpace([1.0], 0.0)
    assert avg_violation(np.array([[1.0], [-0.01]]), c1) == pytest.approx(0.005, rel=1e-12)


def test_empty_input_rejected():
    c = HalfSpace([1.0, 1.0], 0.0)
    with pytest.raises(ValueError):
        violation_rate(np.zeros((0, 2)), c)
    with pytest.raises(ValueError):
        avg_violation(np.zeros((0, 2)), c)
    with pytest.raises(ValueError):
        mmd(np.zeros((0, 2)), np.zeros((3, 2)))


def test_mmd_identical_sets():
    a = np.random.default_rng(0).normal(size=(500, 3))
    assert mmd(a, a) <= 1e-12
    assert mmd_squared(a, a) == pytest.approx(0.0, abs=1e-12)


def test_singleton_closed_form():
    x, y = np.array([[0.3, -1.0]]), np.array([[1.1, 0.4]])
    k = np.exp(-np.sum((x - y) ** 2) / 2.0)
    assert abs(mmd_squared(x, y) - (2 - 2 * k)) <= 1e-12
    assert abs(mmd(x, y) - np.sqrt(2 - 2 * k)) <= 1e-12


def test_mmd_matches_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(30, 2)), rng.normal(loc=0.5, size=(25, 2))
    for sigma in (0.5, 1.0, 2.0):
        assert mmd_squared(a, b, sigma) == pytest.approx(loop_mmd2(a, b, sigma), abs=1e-13)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)), elements=st.floats(-5, 5)),
    arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)), elements=st.floats(-5, 5)),
)
def test_mmd_symmetric_nonnegative(a, b):
    assert mmd(a, b) == mmd(b, a)
    assert mmd_squared(a, b) >= -1e-12


def test_evaluate_samples_report():
    c = Annulus([0.0, 0.0], 1.5, 2.8)
    rng = np.random.default_rng(3)
    x, ref = rng.normal(scale=2, size=(200, 2)), rng.normal(scale=2, size=(200, 2))
    rep = evaluate_samples(x, ref, c, seed=9)
    assert rep.violation_rate_pct == violation_rate(x, c)
    assert rep.mmd_e3 == pytest.approx(1e3 * mmd(x, ref))
    assert rep.n_samples == 200 and rep.as_dict()["seed"] == 9


def test_contamination_moves_requested_fraction():
    c = HalfSpace([1.0, 1.0], 0.0)
    cs = builtin_case_study(1)
    rng = np.random.default_rng(0)
    clean = cs.sample_target(2000, rng)
    dirty = contaminate_halfspace(clean, c, 0.25, 0.5, rng)
    moved = c.violation(dirty) > 0
    assert moved.sum() == 500
    assert np.all(c.violation(dirty[moved]) / np.sqrt(2) >= 0.5 - 1e-12)
    with pytest.raises(TypeError):
        contaminate_halfspace(clean, Annulus([0, 0], 1, 2), 0.1, 0.1, rng)


def test_support_mismatch_probe():
    cs = builtin_case_study(1)
    rng = np.random.default_rng(4)
    ref = cs.sample_target(1000, rng)
    clean = cs.sample_target(1000, rng)
    dirty = contaminate_halfspace(clean, cs.constraint, 0.25, 0.5, rng)
    m_clean, m_dirty = support_mismatch_probe(clean, dirty, ref, cs.constraint)
    assert m_dirty > m_clean
    with pytest.raises(ValueError):
        support_mismatch_probe(clean, dirty, dirty, cs.constraint)


@pytest.mark.parametrize("case", [2, 3])
def test_generic_contamination(case):
    cs = builtin_case_study(case)
    rng = np.random.default_rng(case)
    clean = cs.sample_target(1000, rng)
    dirty = contaminate(clean, cs.constraint, 0.25, 0.3, rng)
    v = cs.constraint.violation(dirty)
    assert (v > 0).sum() == 250 and np.all(v[v > 0] >= 0.3)
    ref = cs.sample_target(1000, rng)
    m_clean, m_dirty = support_mismatch_probe(clean, dirty, ref, cs.constraint)
    assert m_dirty > m_clean
