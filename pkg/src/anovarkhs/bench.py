"""Synthetic benchmarks: test functions, datasets, risks, rate sweeps, oracle gaps.

Truth functions are sums of raw terms ``g_v(x_v)``. Their Hoeffding
components under the product input law are computed by tensor Gauss-Legendre
quadrature, so ``m_0`` and every ``m_w`` are known exactly enough to do
bias bookkeeping for oracle candidates.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import RNG_ALGORITHM, make_generator
from .estimator import FitConfig, fit, predict, rescale_fit
from .kernels import GramSet, GroupIndex, KernelSpec, anova_gram, enumerate_groups
from .noise import NoiseSpec, sample_errors
from .rates import RateParams, TuningTable, tuning_table

__all__ = [
    "Truth",
    "Scenario",
    "RiskReport",
    "make_truth",
    "make_dataset",
    "empirical_risk",
    "l2_risk",
    "run_replicate",
    "run_scenario",
    "rate_sweep",
    "oracle_gap",
    "truth_candidates",
]

TRUTHS = ("additive_sine", "sine_plus_interaction", "sparse_polynomial", "custom")

_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "arctan", "sinh", "cosh")
}
_SAFE_NAMES.update({"pi": math.pi, "e": math.e})


# ---------------------------------------------------------------------- truths

class Truth:
    """Regression function ``m`` with its Hoeffding decomposition.

    ``terms`` maps a :class:`GroupIndex` to a callable taking an array of
    shape ``(N, |v|)`` (the group's columns).
    """

    def __init__(self, name: str, terms: dict, spec: KernelSpec, d: int, order: int = 24):
        self.name = name
        self.terms = dict(sorted(terms.items()))
        self.spec = spec
        self.d = int(d)
        for g in self.terms:
            if g.members[-1] > self.d:
                raise ValueError(f"truth term {g.label} exceeds d={d}")
        self._nodes, self._weights = np.polynomial.legendre.leggauss(order)
        self.m0 = float(sum(self._conditional_mean(g, f, (), np.zeros((1, 0)))[0]
                            for g, f in self.terms.items()))

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for g, f in self.terms.items():
            out = out + f(X[:, g.columns])
        return out

    def _law_rule(self, a):
        law = self.spec.law_of(a)
        half = 0.5 * (law.upper - law.lower)
        x = law.lower + half * (self._nodes + 1.0)
        return x, half * self._weights * law.pdf(x)

    def _conditional_mean(self, g: GroupIndex, f, keep: tuple, Xkeep) -> np.ndarray:
        """``E[g(X_v) | X_keep]`` at rows of ``Xkeep`` (columns follow ``keep``)."""
        cols = g.columns
        free = [a for a in cols if a not in keep]
        N = Xkeep.shape[0]
        if not free:
            full = np.empty((N, len(cols)))
            for j, a in enumerate(cols):
                full[:, j] = Xkeep[:, keep.index(a)]
            return f(full)
        rules = [self._law_rule(a) for a in free]
        grid = np.array(list(itertools.product(*[r[0] for r in rules])))
        wts = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))), axis=1)
        M = grid.shape[0]
        full = np.empty((N, M, len(cols)))
        for j, a in enumerate(cols):
            if a in keep:
                full[:, :, j] = Xkeep[:, keep.index(a)][:, None]
            else:
                full[:, :, j] = grid[:, free.index(a)][None, :]
        vals = f(full.reshape(N * M, len(cols))).reshape(N, M)
        return vals @ wts

    @property
    def component_groups(self) -> list:
        """Groups that can carry a nonzero Hoeffding component."""
        out = set()
        for g in self.terms:
            for k in range(1, len(g.members) + 1):
                out.update(GroupIndex(c) for c in itertools.combinations(g.members, k))
        return sorted(out)

    def component(self, w: GroupIndex, X) -> np.ndarray:
        """Hoeffding component ``m_w`` at the rows of ``X`` (full ``d`` columns)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for g, f in self.terms.items():
            if not set(w.members) <= set(g.members):
                continue
            for k in range(0, len(w.members) + 1):
                for u in itertools.combinations(w.columns, k):
                    sign = (-1) ** (len(w.members) - k)
                    out = out + sign * self._conditional_mean(g, f, u, X[:, list(u)])
        return out

    def support(self, tol: float = 1e-10, n_check: int = 256) -> list:
        """Groups whose component has mean square above ``tol`` on a fixed check sample."""
        rng = make_generator(12345, 0)
        X = np.column_stack([self.spec.law_of(a).sample(rng, n_check) for a in range(self.d)])
        return [w for w in self.component_groups if np.mean(self.component(w, X) ** 2) > tol]


def _pure_sine(scale, freq=1.0):
    return lambda x: scale * np.sin(2 * np.pi * freq * x[:, 0])


def make_truth(name: str, d: int, spec: KernelSpec, expressions: dict | None = None) -> Truth:
    """Built-in test functions, or ``custom`` terms given as ``{"x1:x2": "x1*x2", ...}``."""
    if name == "additive_sine":
        if d < 2:
            raise ValueError("additive_sine needs d >= 2")
        terms = {GroupIndex((1,)): _pure_sine(1.0), GroupIndex((2,)): _pure_sine(0.5)}
    elif name == "sine_plus_interaction":
        if d < 2:
            raise ValueError("sine_plus_interaction needs d >= 2")
        terms = {
            GroupIndex((1,)): _pure_sine(1.0),
            GroupIndex((2,)): _pure_sine(0.5),
            GroupIndex((1, 2)): lambda x: np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1]),
        }
    elif name == "sparse_polynomial":
        if d < 3:
            raise ValueError("sparse_polynomial needs d >= 3")
        terms = {
            GroupIndex((1,)): lambda x: 4.0 * (x[:, 0] - 0.5) ** 2 - 1.0 / 3.0,
            GroupIndex((2, 3)): lambda x: 4.0 * (x[:, 0] - 0.5) * (x[:, 1] - 0.5),
        }
    elif name == "custom":
        if not expressions:
            raise ValueError("custom truth needs an 'expressions' mapping")
        terms = {GroupIndex.parse(k): _compile_term(GroupIndex.parse(k), v) for k, v in expressions.items()}
    else:
        raise ValueError(f"unknown truth {name!r}; expected one of {TRUTHS}")
    return Truth(name, terms, spec, d)


def _compile_term(group: GroupIndex, expr: str):
    code = compile(expr, f"<truth {group.label}>", "eval")
    allowed = set(_SAFE_NAMES) | {f"x{m}" for m in group.members}
    unknown = set(code.co_names) - allowed
    if unknown:
        raise ValueError(f"expression for {group.label} uses unknown names {sorted(unknown)}")

    def term(x):
        env = dict(_SAFE_NAMES)
        env.update({f"x{m}": x[:, j] for j, m in enumerate(group.members)})
        return np.broadcast_to(eval(code, {"__builtins__": {}}, env), (x.shape[0],)).astype(float)

    return term


# -------------------------------------------------------------------- scenario

@dataclass(frozen=True)
class Scenario:
    """One benchmark setting. ``n_grid`` is used by :func:`rate_sweep`."""

    truth: str = "additive_sine"
    d: int = 2
    n: int = 256
    alpha: float = 3.0
    sigma: float = 0.1
    replicates: int = 10
    seed: int = 0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    max_order: int = 2
    radius: float = 1.0
    n_grid: tuple = (64, 128, 256, 512, 1024)
    tuning_mode: str = "theory"
    delta: float = 1.0
    c1: float | None = None
    lambda_floor: str = "dims"
    mu: float | None = None
    gamma: float | None = None
    n_mc: int = 4000
    expressions: dict | None = None
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("n must be >= 8")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.alpha > 2:
            raise ValueError("alpha must be > 2")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.truth not in TRUTHS:
            raise ValueError(f"unknown truth {self.truth!r}")
        if self.tuning_mode not in ("theory", "manual"):
            raise ValueError("tuning_mode must be 'theory' or 'manual'")
        if self.tuning_mode == "manual" and (self.mu is None or self.gamma is None):
            raise ValueError("manual tuning needs mu and gamma")
        if not 1 <= self.max_order <= self.d:
            raise ValueError("need 1 <= max_order <= d")
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernel"] = self.kernel.to_dict()
        out["n_grid"] = list(self.n_grid)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(data)
        if "kernel" in data and not isinstance(data["kernel"], KernelSpec):
            data["kernel"] = KernelSpec.from_dict(data["kernel"])
        if "fit" in data and not isinstance(data["fit"], FitConfig):
            data["fit"] = FitConfig(**data["fit"])
        if "n_grid" in data:
            data["n_grid"] = tuple(data["n_grid"])
        return cls(**data)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def groups(self) -> list:
        return enumerate_groups(self.d, self.max_order)

    def rate_params(self, n: int) -> RateParams:
        return RateParams(d=self.d, n=n, delta=self.delta, c1=self.c1, lambda_floor=self.lambda_floor)


def make_dataset(scenario: Scenario, replicate: int, n: int | None = None, truth: Truth | None = None):
    """Draw ``(X, Y, m(X))``; deterministic in ``(seed, replicate, n)``."""
    n = scenario.n if n is None else int(n)
    truth = truth or make_truth(scenario.truth, scenario.d, scenario.kernel, scenario.expressions)
    rng = make_generator(scenario.seed, (replicate, n, 0))
    X = np.column_stack([scenario.kernel.law_of(a).sample(rng, n) for a in range(scenario.d)])
    m = truth(X)
    if scenario.sigma == 0:
        return X, m.copy(), m
    eps = sample_errors(NoiseSpec(scenario.alpha), n, scenario.seed, stream=(replicate, n, 1))
    return X, m + scenario.sigma * eps, m


# ----------------------------------------------------------------------- risks

def empirical_risk(m_values, model, grams: GramSet) -> float:
    """``(1/n) sum_i (m(X_i) - f_hat(X_i))^2`` on the training design."""
    m_values = np.asarray(m_values, dtype=float)
    fitted = model.f0 + np.sum(model.group_values(grams), axis=0) if model.groups else model.f0
    return float(np.mean((m_values - fitted) ** 2))


def l2_risk(truth, model, spec: KernelSpec, X_train, N_mc: int = 4000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ``E (m(U) - f_hat(U))^2`` over fresh inputs, with its standard error."""
    if N_mc < 1000:
        raise ValueError("N_mc must be >= 1000")
    X_train = np.asarray(X_train, dtype=float)
    d = X_train.shape[1]
    rng = make_generator(seed, (0xC0FFEE,))
    U = np.column_stack([spec.law_of(a).sample(rng, N_mc) for a in range(d)])
    sq = (truth(U) - predict(model, spec, U, X_train)) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(N_mc))


# ---------------------------------------------------------------- oracle gaps

@dataclass(frozen=True)
class Candidate:
    """A comparison function in F with known in-sample bias and support."""

    label: str
    bias_sq: float
    support: tuple


def truth_candidates(truth: Truth, X, groups) -> list:
    """Sub-sums of the truth's Hoeffding components restricted to fitted groups.

    Each candidate is ``m_0 + sum_{w in S} m_w``; its in-sample bias is
    ``||m - f||_n^2``. Membership in F (``||m_w||_H <= r_w``) is the caller's
    responsibility through the scenario radius.
    """
    X = np.atleast_2d(X)
    m = truth(X)
    comps = {w: truth.component(w, X) for w in truth.support() if w in set(groups)}
    keys = sorted(comps)
    out = []
    for k in range(len(keys) + 1):
        for S in itertools.combinations(keys, k):
            f = truth.m0 + sum((comps[w] for w in S), np.zeros(X.shape[0]))
            out.append(Candidate("+".join(w.label for w in S) or "const", float(np.mean((m - f) ** 2)), S))
    return out


def oracle_gap(risk: float, candidates, tuning: TuningTable, penalty_scale: float = 1.0) -> dict:
    """``risk / min_f (||m - f||_n^2 + sum_{v in S_f} (mu_v + gamma_v^2))``.

    ``penalty_scale`` converts unit-noise penalties to the data scale
    (``mu -> s mu``, ``gamma -> s gamma``).
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list is empty")
    best, best_label = math.inf, None
    for c in candidates:
        pen = sum(penalty_scale * tuning.row(v).mu + (penalty_scale * tuning.row(v).gamma) ** 2
                  for v in c.support)
        val = c.bias_sq + pen
        if val < best:
            best, best_label = val, c.label
    return {"ratio": risk / best if best > 0 else math.inf, "denominator": best, "argmin": best_label}


# -------------------------------------------------------------------- replicate

def _tuning_for(scenario: Scenario, grams: GramSet, n: int) -> TuningTable:
    if scenario.tuning_mode == "manual":
        return TuningTable.constant(grams.groups, scenario.mu, scenario.gamma)
    return tuning_table(grams, scenario.rate_params(n))


def run_replicate(scenario: Scenario, replicate: int, n: int | None = None, l2: bool = True) -> dict:
    """Fit one replicate and collect its risk record."""
    n = scenario.n if n is None else int(n)
    truth = make_truth(scenario.truth, scenario.d, scenario.kernel, scenario.expressions)
    X, Y, m = make_dataset(scenario, replicate, n, truth)
    grams = anova_gram(scenario.kernel, X, scenario.groups)
    tab = _tuning_for(scenario, grams, n)
    sigma = scenario.sigma if scenario.sigma > 0 else 1.0
    if scenario.tuning_mode == "theory":
        res = rescale_fit(Y, sigma, grams, tab, scenario.fit, scenario.radius)
        scale = sigma
    else:
        res = fit(Y, grams, tab, scenario.fit, scenario.radius)
        scale = 1.0
    model = res.model
    risk = empirical_risk(m, model, grams)
    rec = {
        "n": n,
        "replicate": replicate,
        "empirical_risk": risk,
        "support": [g.label for g in res.active_set],
        "support_correct": set(res.active_set) == set(w for w in truth.support() if w in set(grams.groups)),
        "converged": res.converged,
        "sweeps": res.sweeps_used,
        "binding": res.binding,
        "objective": res.objective_trace[-1],
        "trace_monotone": bool(np.all(np.diff(res.objective_trace) <= 1e-12 * max(1.0, abs(res.objective_trace[0])))),
        "nu_first": tab.rows[0].nu,
    }
    if l2:
        est, se = l2_risk(truth, model, scenario.kernel, X, scenario.n_mc, seed=scenario.seed * 1000003 + replicate)
        rec["l2_risk"], rec["l2_se"] = est, se
    cands = truth_candidates(truth, X, grams.groups)
    rec.update({f"oracle_{k}": v for k, v in oracle_gap(risk, cands, tab, scale).items()})
    rec["decomposable"] = _decomposability(truth, X, model, grams, tab, scale)
    rec["tuning"] = tab.to_dict()
    return rec


def _decomposability(truth, X, model, grams, tab, scale):
    """Penalty split check on the fitted model against the data-generating components.

    ``sum_{v not in S} pen_v(f_hat_v) <= 3 sum_{v in S} pen_v(f_hat_v - m_v)``. The
    Hilbert norm of ``f_hat_v - m_v`` uses the minimum-norm interpolant of
    ``m_v`` on the design (eigenvalues below 1e-10 of the largest dropped).
    """
    S = set(w for w in truth.support() if w in set(grams.groups))
    lhs = rhs = 0.0
    vals = model.group_values(grams)
    n = grams.n
    for k, g in enumerate(model.groups):
        mu, gamma = scale * tab.row(g).mu, scale * tab.row(g).gamma
        emp, hil = model.norms[k]
        if g not in S:
            lhs += mu * hil + gamma * emp
            continue
        j = grams.index(g)
        lam = grams.spectra[j] * n
        U = grams.eigvecs[j]
        keep = lam > 1e-10 * lam[0]
        target = truth.component(g, X)
        coef_hat = U[:, keep].T @ vals[k]
        coef_true = U[:, keep].T @ target
        diff_h = float(np.sqrt(np.sum((coef_hat - coef_true) ** 2 / lam[keep])))
        diff_n = float(np.linalg.norm(vals[k] - target) / math.sqrt(n))
        rhs += mu * diff_h + gamma * diff_n
    return bool(lhs <= 3.0 * rhs) if rhs > 0 else bool(lhs == 0.0)


def _job(args):
    scenario, rep, n, l2 = args
    return run_replicate(scenario, rep, n, l2)


def _map(tasks, jobs: int):
    if jobs <= 1:
        return [_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_job, tasks))


# ----------------------------------------------------------------- aggregates

@dataclass
class RiskReport:
    rows: list
    aggregates: dict
    meta: dict

    def csv_rows(self) -> list:
        keys = ["n", "replicate", "empirical_risk", "l2_risk", "l2_se", "oracle_ratio",
                "support", "support_correct", "converged", "sweeps", "binding", "objective",
                "trace_monotone", "decomposable"]
        out = []
        for r in self.rows:
            row = {}
            for k in keys:
                v = r.get(k, "")
                row[k] = ";".join(v) if isinstance(v, list) else v
            out.append(row)
        return out


def _aggregate(rows, key):
    vals = np.array([r[key] for r in rows if key in r], dtype=float)
    if vals.size == 0:
        return {}
    return {
        "mean": float(vals.mean()),
        "median": float(np.median(vals)),
        "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
    }


def _summarize(rows) -> dict:
    out = {}
    for key in ("empirical_risk", "l2_risk", "oracle_ratio"):
        out[key] = _aggregate(rows, key)
    out["support_recovery_rate"] = float(np.mean([r["support_correct"] for r in rows]))
    out["decomposability_rate"] = float(np.mean([r["decomposable"] for r in rows]))
    out["all_traces_monotone"] = bool(all(r["trace_monotone"] for r in rows))
    return out


def _meta(scenario: Scenario) -> dict:
    return {
        "config_hash": scenario.content_hash(),
        "rng": RNG_ALGORITHM,
        "seed": scenario.seed,
        "spectrum_note": "nu uses eigenvalues of K_v/n (empirical surrogate)",
        "l2_note": "empirical norms approximate L2 norms",
    }


def run_scenario(scenario: Scenario, jobs: int = 1, l2: bool = True) -> RiskReport:
    tasks = [(scenario, rep, scenario.n, l2) for rep in range(scenario.replicates)]
    rows = _map(tasks, jobs)
    return RiskReport(rows, _summarize(rows), _meta(scenario))


def _slope(ns, means, sds, reps):
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    # SE of log(mean) by the delta method
    se = np.asarray(sds) / (np.asarray(means) * np.sqrt(reps))
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = max(float(resid @ resid) / dof, float(np.mean(se**2)))
    slope_se = math.sqrt(s2 * cov[0, 0])
    return float(coef[0]), float(coef[1]), slope_se


def rate_sweep(scenario: Scenario, jobs: int = 1, l2: bool = False) -> dict:
    """Fit every ``n`` in ``scenario.n_grid`` and regress log mean risk on log n."""
    grid = list(scenario.n_grid)
    if len(grid) < 4:
        raise ValueError("rate_sweep needs at least 4 grid points")
    tasks = [(scenario, rep, n, l2) for n in grid for rep in range(scenario.replicates)]
    rows = _map(tasks, jobs)
    per_n = []
    for n in grid:
        sub = [r for r in rows if r["n"] == n]
        risks = np.array([r["empirical_risk"] for r in sub])
        per_n.append({
            "n": n,
            "mean_risk": float(risks.mean()),
            "sd_risk": float(risks.std(ddof=1)) if risks.size > 1 else 0.0,
            "median_oracle_ratio": float(np.median([r["oracle_ratio"] for r in sub])),
            "mean_nu": float(np.mean([r["nu_first"] for r in sub])),
            "support_recovery_rate": float(np.mean([r["support_correct"] for r in sub])),
            "tuning": sub[0]["tuning"],
        })
    means = [p["mean_risk"] for p in per_n]
    sds = [p["sd_risk"] for p in per_n]
    # no statistical error left: risks sit at solver tolerance
    degenerate = bool(max(means) <= 1e-10)
    out = {
        "per_n": per_n,
        "rows": rows,
        "degenerate": degenerate,
        "meta": _meta(scenario),
        "summary": _summarize(rows),
    }
    if degenerate or min(means) <= 0:
        out.update({"risk_slope": float("nan"), "risk_slope_se": float("nan"), "risk_slope_ci": [float("nan")] * 2})
    else:
        slope, icpt, se = _slope(grid, means, sds, scenario.replicates)
        out.update({"risk_slope": slope, "risk_intercept": icpt, "risk_slope_se": se,
                    "risk_slope_ci": [slope - 1.96 * se, slope + 1.96 * se]})
    nus = [p["mean_nu"] for p in per_n]
    if scenario.tuning_mode == "theory" and min(nus) > 0:
        out["nu_slope"] = float(np.polyfit(np.log(grid), np.log(nus), 1)[0])
    return out
