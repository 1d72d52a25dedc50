import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anovarkhs.kernels import (FAMILIES, DegenerateKernelError, GramSet, GroupIndex, InputLaw, KernelSpec,
                               anova_gram, base_kernel, center_kernel, enumerate_groups, gram_spectrum)
from oracles import centered_mean_quad, kernel_mean_quad, raw_kernels


def test_brownian_mean_closed_form():
    k0 = center_kernel(KernelSpec("brownian"), 0)
    assert k0.mean(np.array([0.5]))[0] == pytest.approx(0.375, abs=1e-14)
    xs = np.linspace(0, 1, 11)
    assert np.allclose(k0.mean(xs), xs - xs ** 2 / 2, atol=1e-14)
    assert k0.total_mean == pytest.approx(1 / 3, abs=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
def test_centering_against_scipy_oracle(family):
    k0 = center_kernel(KernelSpec(family), 0)
    raw = raw_kernels()[family]
    for x in (0.0, 0.13, 0.5, 0.91):
        assert k0.mean(np.array([x]))[0] == pytest.approx(kernel_mean_quad(raw, x), abs=1e-12)
        # the oracle's centered integral is itself ~0; ours must be too
        assert abs(centered_mean_quad(raw, x)) < 1e-9
    grid = np.linspace(0, 1, 33)
    u, w = np.polynomial.legendre.leggauss(200)
    # integrate k0(x, u) over [0, x] and [x, 1] separately
    for x in grid:
        tot = 0.0
        for lo, hi in ((0.0, x), (x, 1.0)):
            if hi > lo:
                nodes = lo + (hi - lo) * (u + 1) / 2
                tot += np.sum(w * (hi - lo) / 2 * k0(np.array([x]), nodes)[0])
        assert abs(tot) < 1e-6


def test_centering_monte_carlo():
    rng = np.random.default_rng(3)
    k0 = center_kernel(KernelSpec("matern32"), 0)
    U = rng.uniform(size=200_000)
    for x in rng.uniform(size=5):
        vals = k0(np.array([x]), U)[0]
        assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(U.size)


def test_beta_law_centering():
    law = InputLaw("beta", 0.0, 1.0, a=2.0, b=3.0)
    k0 = center_kernel(KernelSpec("gaussian", input_law=law), 0)
    from scipy import integrate, stats
    for x in (0.2, 0.7):
        val, _ = integrate.quad(lambda t: k0(np.array([x]), np.array([t]))[0, 0] * stats.beta.pdf(t, 2, 3),
                                0, 1, points=[x], epsabs=1e-13)
        assert abs(val) < 1e-8


def test_degenerate_kernel_rejected():
    with pytest.raises(DegenerateKernelError):
        # Brownian kernel on a tiny interval at the origin: E k(U,V) ~ 3e-14
        center_kernel(KernelSpec("brownian", input_law=InputLaw(lower=0.0, upper=1e-13)), 0)


def test_unknown_family():
    with pytest.raises(ValueError):
        KernelSpec("laplace")
    with pytest.raises(ValueError):
        base_kernel("laplace", {}, 0, 1)


def test_sobolev_kernel_reproduces():
    # k(., y) for W^{1,2}[0,1]: -k'' + k = delta_y, Neumann boundary conditions
    k = base_kernel("sobolev1", {}, 0.0, 1.0)
    y = 0.4
    h = 1e-4
    for x in (0.1, 0.7):
        d2 = (k(x + h, y) - 2 * k(x, y) + k(x - h, y)) / h ** 2
        assert d2 == pytest.approx(k(x, y), rel=1e-5)
    jump = ((k(y + h, y) - k(y, y)) - (k(y, y) - k(y - h, y))) / h
    assert jump == pytest.approx(-1.0, rel=1e-3)


def test_enumerate_groups_counts():
    assert len(enumerate_groups(3, 2)) == 6
    assert len(enumerate_groups(4, 4)) == 15
    assert len(enumerate_groups(5, 1)) == 5
    with pytest.raises(ValueError):
        enumerate_groups(3, 4)


def test_group_ordering_and_labels():
    gs = enumerate_groups(3, 2)
    assert [g.label for g in gs] == ["x1", "x2", "x3", "x1:x2", "x1:x3", "x2:x3"]
    assert gs == sorted(gs)
    assert GroupIndex.parse("x1:x2") == GroupIndex((1, 2))
    with pytest.raises(ValueError):
        GroupIndex((2, 1))
    assert GroupIndex((2,)).columns == [1]


@given(st.lists(st.sets(st.integers(1, 6), min_size=1, max_size=3), min_size=1, max_size=12))
def test_graded_lex_order_property(sets):
    groups = sorted(GroupIndex(s) for s in sets)
    keys = [(len(g.members), g.members) for g in groups]
    assert keys == sorted(keys)


def test_spectrum_trivial_cases():
    n, c = 7, 2.5
    s = gram_spectrum(c * np.ones((n, n)))
    assert s[0] == pytest.approx(c, rel=1e-12)
    assert np.allclose(s[1:], 0, atol=1e-14)
    assert np.allclose(gram_spectrum(n * np.eye(n)), 1.0)


def test_spectrum_rejects_bad_input():
    with pytest.raises(ValueError):
        gram_spectrum(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        gram_spectrum(np.diag([1.0, -0.5]))


@given(st.integers(2, 20), st.integers(0, 10_000))
def test_spectrum_trace(n, seed):
    A = np.random.default_rng(seed).standard_normal((n, n))
    K = A @ A.T
    s = gram_spectrum(K)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert s.sum() == pytest.approx(np.trace(K) / n, rel=1e-8)


def test_singleton_group_equals_centered_base():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(9, 2))
    spec = KernelSpec("gaussian")
    gs = anova_gram(spec, X, [GroupIndex((2,))])
    k0 = center_kernel(spec, 1)
    assert np.allclose(gs.grams[0], k0(X[:, 1], X[:, 1]), atol=1e-15)


def test_interaction_is_entrywise_product():
    X = np.array([[0.2, 0.9], [0.6, 0.3]])
    gs = anova_gram(KernelSpec(), X, enumerate_groups(2, 2))
    K1, K2, K12 = gs.grams
    for i, j in itertools.product(range(2), range(2)):
        assert K12[i, j] == pytest.approx(K1[i, j] * K2[i, j], rel=1e-15)


def test_row_permutation_equivariance():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(10, 3))
    perm = rng.permutation(10)
    a = anova_gram(KernelSpec("matern32"), X, enumerate_groups(3, 2))
    b = anova_gram(KernelSpec("matern32"), X[perm], enumerate_groups(3, 2))
    for Ka, Kb in zip(a.grams, b.grams):
        assert np.allclose(Ka[np.ix_(perm, perm)], Kb, atol=1e-14)


def test_tensor_grid_spectrum_factorizes():
    g = (np.arange(4) + 0.5) / 4
    X = np.array([[a, b] for a in g for b in g])
    gs = anova_gram(KernelSpec(), X, enumerate_groups(2, 2))
    s1, s2, s12 = gs.spectra
    # K1 = A kron J and K2 = J kron B on the grid, K12 = A kron B
    prods = np.sort(np.outer(s1[:4], s2[:4]).ravel())[::-1]
    assert np.allclose(s12[:3], prods[:3], rtol=0.1)


def test_empirical_orthogonality_of_groups():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(2048, 2))
    spec = KernelSpec()
    g1 = center_kernel(spec, 0)(X[:, 0], np.array([0.3]))[:, 0]
    g2 = center_kernel(spec, 1)(X[:, 1], np.array([0.7]))[:, 0]
    g1 /= np.sqrt(np.mean(g1 ** 2))
    g2 /= np.sqrt(np.mean(g2 ** 2))
    assert abs(np.mean(g1 * g2)) < 0.05


@given(st.integers(2, 64), st.integers(1, 5), st.sampled_from(FAMILIES), st.integers(0, 10 ** 6))
def test_gram_psd_property(n, d, family, seed):
    X = np.random.default_rng(seed).uniform(size=(n, d))
    gs = anova_gram(KernelSpec(family), X, enumerate_groups(d, min(d, 2)))
    for K in gs.grams:
        assert np.allclose(K, K.T, atol=0)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


def test_design_checks():
    with pytest.raises(IndexError):
        anova_gram(KernelSpec(), np.random.default_rng(0).uniform(size=(5, 2)), [GroupIndex((3,))])
    with pytest.raises(ValueError):
        anova_gram(KernelSpec(), np.full((5, 1), 1.5), [GroupIndex((1,))])


def test_gramset_save_load(tmp_path):
    X = np.random.default_rng(1).uniform(size=(8, 2))
    gs = anova_gram(KernelSpec("sobolev1"), X, enumerate_groups(2, 2))
    gs.save(tmp_path / "g.npz")
    back = GramSet.load(tmp_path / "g.npz")
    assert back.content_hash == gs.content_hash
    for a, b in zip(gs.spectra, back.spectra):
        assert np.array_equal(a, b)


def test_kernelspec_roundtrip():
    spec = KernelSpec(("brownian", "gaussian"), ({}, {"lengthscale": 0.3}),
                      (InputLaw(), InputLaw("beta", 0, 2, 2, 2)))
    again = KernelSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
    assert again.content_hash() == spec.content_hash()
