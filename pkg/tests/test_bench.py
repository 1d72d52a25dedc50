import math

import numpy as np
import pytest
from scipy import integrate

from anovarkhs.bench import (Candidate, Scenario, empirical_risk, l2_risk, make_dataset, make_truth,
                             oracle_gap, rate_sweep, run_replicate, run_scenario, truth_candidates)
from anovarkhs.estimator import FitConfig, MetaModel, predict
from anovarkhs.kernels import GroupIndex, KernelSpec, anova_gram, enumerate_groups
from anovarkhs.rates import TuningTable
from oracles import gg_moment_quad


def _zero_model(groups, n, f0=0.0):
    return MetaModel(f0, list(groups), [np.zeros(n)] * len(groups), [(0.0, 0.0)] * len(groups), [1.0] * len(groups))


def test_noiseless_dataset():
    sc = Scenario(sigma=0.0)
    X, Y, m = make_dataset(sc, 3)
    assert np.array_equal(Y, m)
    assert np.array_equal(m, make_truth(sc.truth, sc.d, sc.kernel)(X))


def test_dataset_determinism():
    sc = Scenario()
    a = make_dataset(sc, 2)
    b = make_dataset(sc, 2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], make_dataset(sc, 3)[0])


def test_noise_variance_in_dataset():
    sc = Scenario(n=10_000, sigma=0.3)
    _, Y, m = make_dataset(sc, 0)
    r = Y - m
    kurt = gg_moment_quad(3.0, 4) / gg_moment_quad(3.0, 2) ** 2
    se = sc.sigma ** 2 * math.sqrt((kurt - 1) / sc.n)
    assert abs(r.var() - sc.sigma ** 2) < 3 * se


def test_truth_components_are_hoeffding():
    spec = KernelSpec()
    t = make_truth("sine_plus_interaction", 2, spec)
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(50, 2))
    total = t.m0 + sum(t.component(w, X) for w in t.component_groups)
    assert np.allclose(total, t(X), atol=1e-12)
    # each component integrates to zero in each of its own coordinates
    w = GroupIndex((1, 2))
    u, wt = np.polynomial.legendre.leggauss(40)
    u = (u + 1) / 2
    for x2 in (0.1, 0.6):
        vals = t.component(w, np.column_stack([u, np.full_like(u, x2)]))
        assert abs(np.sum(wt / 2 * vals)) < 1e-12
    assert set(t.support()) == {GroupIndex((1,)), GroupIndex((2,)), w}


def test_sparse_polynomial_support():
    t = make_truth("sparse_polynomial", 5, KernelSpec())
    assert t.support() == [GroupIndex((1,)), GroupIndex((2, 3))]
    assert abs(t.m0) < 1e-14


def test_empirical_risk_cases():
    X = np.array([[0.2, 0.4], [0.7, 0.1]])
    gs = anova_gram(KernelSpec(), X, enumerate_groups(2, 1))
    zero = _zero_model(gs.groups, 2)
    assert empirical_risk([1.0, 2.0], zero, gs) == 2.5
    assert empirical_risk([1.0, 1.0], zero, gs) == 1.0
    assert empirical_risk([0.0, 0.0], zero, gs) == 0.0


class _ModelTruth:
    """Truth equal to a model's prediction plus a constant."""

    def __init__(self, model, spec, X, c=0.0):
        self.model, self.spec, self.X, self.c = model, spec, X, c

    def __call__(self, U):
        return predict(self.model, self.spec, U, self.X) + self.c


def test_l2_risk_trivial_cases():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(6, 2))
    spec = KernelSpec()
    g = enumerate_groups(2, 1)
    model = MetaModel(0.3, g, [rng.standard_normal(6), np.zeros(6)], [(0, 0)] * 2, [1.0] * 2)
    est, se = l2_risk(_ModelTruth(model, spec, X), model, spec, X)
    assert est == 0.0 and se == 0.0
    est, se = l2_risk(_ModelTruth(model, spec, X, c=0.25), model, spec, X)
    assert est == pytest.approx(0.0625, abs=1e-12)
    with pytest.raises(ValueError):
        l2_risk(_ModelTruth(model, spec, X), model, spec, X, N_mc=10)


def test_l2_risk_zero_model_matches_quadrature():
    spec = KernelSpec()
    t = make_truth("additive_sine", 2, spec)
    X = np.random.default_rng(0).uniform(size=(5, 2))
    zero = _zero_model(enumerate_groups(2, 1), 5)
    est, se = l2_risk(t, zero, spec, X, N_mc=20_000, seed=3)
    exact, _ = integrate.dblquad(lambda y, x: t(np.array([[x, y]]))[0] ** 2, 0, 1, 0, 1)
    assert exact == pytest.approx(0.625, abs=1e-8)
    assert abs(est - exact) < 3 * se


def test_oracle_gap_cases():
    g = enumerate_groups(2, 1)
    tab = TuningTable.constant(g, 0.2, 0.3)
    cands = [Candidate("x1+x2", 0.0, tuple(g)), Candidate("const", 5.0, ())]
    out = oracle_gap(0.1, cands, tab)
    assert out["denominator"] == pytest.approx(2 * (0.2 + 0.09))
    assert out["argmin"] == "x1+x2"
    # f_hat equal to a candidate: numerator is that candidate's bias
    cands = [Candidate("x1", 0.4, (g[0],)), Candidate("const", 1.0, ())]
    assert oracle_gap(0.4, cands, tab)["ratio"] <= 1.0
    with pytest.raises(ValueError):
        oracle_gap(0.1, [], tab)


def test_truth_candidates_cover_subsets():
    spec = KernelSpec()
    t = make_truth("sine_plus_interaction", 2, spec)
    X = np.random.default_rng(1).uniform(size=(30, 2))
    c = truth_candidates(t, X, enumerate_groups(2, 2))
    assert len(c) == 8
    full = [x for x in c if len(x.support) == 3][0]
    assert full.bias_sq < 1e-24


def test_replicate_record_fields():
    rec = run_replicate(Scenario(n=64, radius=10.0), 0)
    for key in ("empirical_risk", "l2_risk", "l2_se", "oracle_ratio", "support", "trace_monotone",
                "decomposable", "binding", "nu_first"):
        assert key in rec
    assert rec["trace_monotone"]


def test_scenario_roundtrip_and_validation():
    sc = Scenario(truth="custom", expressions={"x1": "x1**2", "x1:x2": "x1*x2"}, kernel=KernelSpec("matern32"),
                  fit=FitConfig(max_sweeps=50))
    back = Scenario.from_dict(sc.to_dict())
    assert back == sc
    assert back.content_hash() == sc.content_hash()
    with pytest.raises(ValueError):
        Scenario(alpha=2.0)
    with pytest.raises(ValueError):
        Scenario(tuning_mode="manual")
    with pytest.raises(ValueError):
        Scenario(truth="nope")


def test_degenerate_sweep_flagged():
    sc = Scenario(truth="custom", d=1, max_order=1, sigma=0.0, replicates=1, tuning_mode="manual", mu=0.0,
                  gamma=0.0, radius=1e6, expressions={"x1": "sin(2*pi*x1)"}, n_grid=(16, 32, 64, 128),
                  fit=FitConfig(tol_rel_objective=1e-14, max_sweeps=5000))
    out = rate_sweep(sc)
    assert out["degenerate"]
    assert max(p["mean_risk"] for p in out["per_n"]) < 1e-10
    assert math.isnan(out["risk_slope"])


def test_sweep_needs_four_points():
    with pytest.raises(ValueError):
        rate_sweep(Scenario(n_grid=(64, 128, 256)))


def test_risk_increases_with_sigma():
    means = []
    for s in (0.1, 0.2, 0.4):
        rep = run_scenario(Scenario(n=256, sigma=s, replicates=5, radius=10.0), l2=False)
        means.append(rep.aggregates["empirical_risk"]["mean"])
    assert means[0] < means[1] < means[2]


def test_risk_nonincreasing_in_n():
    sc = Scenario(replicates=10, radius=10.0)
    out = rate_sweep(sc)
    means = [p["mean_risk"] for p in out["per_n"]]
    violations = sum(b > a for a, b in zip(means, means[1:]))
    assert violations <= 1
    assert out["summary"]["all_traces_monotone"]


def test_sparse_support_recovery_baseline():
    # frozen from the calibration run: 13 of 20 replicates (0.65)
    sc = Scenario(truth="sparse_polynomial", d=5, n=512, alpha=3.0, sigma=0.1, replicates=20, radius=10.0)
    rep = run_scenario(sc, l2=False)
    assert rep.aggregates["support_recovery_rate"] >= 0.6
    assert rep.aggregates["support_recovery_rate"] == pytest.approx(0.65)


def test_parallel_matches_serial():
    sc = Scenario(n=64, replicates=3, radius=10.0)
    a = run_scenario(sc, jobs=1, l2=False)
    b = run_scenario(sc, jobs=2, l2=False)
    assert a.rows == b.rows
