import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anovarkhs.noise import abs_first_moment
from anovarkhs.probes import (InsufficientDataError, PointSet, concentration_probe, covering_bounds,
                              covering_number, sudakov_probe)
from oracles import brute_force_cover


def test_cover_trivial_cases():
    T = PointSet(np.random.default_rng(0).uniform(size=(15, 3)))
    assert covering_number(T, T.diameter) == 1
    assert covering_number(T, T.diameter * 2) == 1
    D = np.linalg.norm(T.points[:, None] - T.points[None], axis=2)
    dmin = D[D > 0].min()
    assert covering_number(T, 0.5 * dmin) == 15
    with pytest.raises(ValueError):
        covering_number(T, 0.0)


def test_cover_line_example():
    T = PointSet(np.array([[0.0], [1.0], [2.0], [3.0]]))
    b = covering_bounds(T, 1.0)
    assert b.proper <= 2 and b.lower >= 2
    assert b.exact == 2 == brute_force_cover(T.points, 1.0)
    assert covering_number(T, 1.0) == 2


@pytest.mark.parametrize("seed", range(5))
def test_exact_cover_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(size=(9, 2))
    for delta in (0.1, 0.25, 0.5):
        assert covering_bounds(PointSet(P), delta).exact == brute_force_cover(P, delta)


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6), st.integers(1, 10), st.integers(1, 200), st.floats(0.01, 3.0))
def test_cover_sandwich(seed, dim, m, delta):
    T = PointSet(np.random.default_rng(seed).standard_normal((m, dim)))
    b = covering_bounds(T, delta)
    assert 1 <= b.lower <= b.proper <= b.half_lower
    if b.exact is not None:
        assert b.lower <= b.exact <= b.proper


@given(st.integers(0, 10 ** 6), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_cover_monotone_in_delta(seed, d1, d2):
    T = PointSet(np.random.default_rng(seed).uniform(size=(40, 2)))
    lo, hi = sorted((d1, d2))
    # the greedy count follows one traversal, so it is monotone in delta
    assert covering_bounds(T, hi).proper <= covering_bounds(T, lo).proper
    assert covering_number(T, hi) <= covering_number(T, lo)


def test_sudakov_singleton():
    rec = sudakov_probe(PointSet(np.array([[0.3, -0.2]])), 3.0, 2000, [0.1, 1.0, 10.0], seed=0)
    assert all(r["log_N"] == 0.0 for r in rec["rows"])
    assert all(r["finite"] for r in rec["rows"])


def test_sudakov_two_point_matches_abs_moment():
    T = PointSet(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    rec = sudakov_probe(T, 3.0, 50_000, [0.5, 1.0], seed=2)
    assert abs(rec["M"] - abs_first_moment(3.0)) < 3 * rec["M_se"]


def test_sudakov_scaling():
    T = PointSet(np.random.default_rng(0).uniform(size=(10, 4)))
    a = sudakov_probe(T, 3.0, 20_000, [1.0], seed=5)
    b = sudakov_probe(T.scaled(2.0), 3.0, 20_000, [1.0], seed=5)
    assert abs(b["M"] - 2 * a["M"]) < 3 * 2 * a["M_se"]


def test_sudakov_regime_split():
    T = PointSet(np.random.default_rng(1).uniform(size=(12, 3)))
    rec = sudakov_probe(T, 4.0, 5000, [0.01, 0.1, 1.0, 10.0], seed=0)
    for r in rec["rows"]:
        assert r["regime"] == ("power" if r["delta"] <= 2 * rec["M"] else "square")
    with pytest.raises(ValueError):
        sudakov_probe(T, 4.0, 10, [1.0])


def test_concentration_constant_phi():
    rec = concentration_probe(3.0, 20, "constant", 2000)
    assert rec["degenerate"]
    assert all(t == 0.0 for t in rec["tail"])


def test_concentration_max_alpha3():
    rec = concentration_probe(3.0, 50, "max", 10_000, seed=0)
    assert rec["slope"] < 0
    assert rec["r2"] >= 0.9


def test_gaussian_baseline():
    rec = concentration_probe(2.0, 50, "euclidean_norm", 10_000, seed=0)
    assert rec["slope"] <= -0.5 * (1 - 0.2)


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0])
def test_tails_decay_superexponentially(alpha):
    rec = concentration_probe(alpha, 50, "max", 10_000, seed=1)
    assert rec["min_decay_rate"] > 0


def test_softmax_free_is_shifted_max():
    a = concentration_probe(3.0, 30, "max", 5000, seed=4)
    b = concentration_probe(3.0, 30, "softmax_free", 5000, seed=4)
    assert a["tail"] == b["tail"]


def test_concentration_errors():
    with pytest.raises(ValueError):
        concentration_probe(3.0, 10, "mean", 1000)
    with pytest.raises(InsufficientDataError):
        concentration_probe(3.0, 10, "max", 40, min_exceed=30)
