"""Critical radii, rate parameters and the rate-driven tuning of the penalties.

For a group with (empirical) kernel eigenvalues ``omega``::

    Q(t)   = sqrt(5/n * sum_l min(t^2, omega_l))
    nu     = inf{t : Q(t) <= delta * t^2}
    lambda = max(nu, floor),  floor = sqrt(d/n)  (or sqrt(2 log d / n))
    mu     = C1 * lambda^2,   gamma = C1 * lambda

with ``C1 > 10 + 4 delta``. Eigenvalues come from ``K_v / n``, so every
``nu`` computed here is an empirical estimate and is labelled
``nu_empirical`` in serialized output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import GramSet, GroupIndex

__all__ = [
    "RateParams",
    "GroupTuning",
    "TuningTable",
    "q_function",
    "critical_radius",
    "tuning",
    "tuning_table",
    "assumption_report",
    "lambda_floor",
]


@dataclass(frozen=True)
class RateParams:
    """Constants of the tuning rule. ``c2``, ``c3`` and ``beta`` only feed diagnostics."""

    d: int
    n: int
    delta: float = 1.0
    c1: float | None = None
    c2: float = 1.0
    c3: float = 1.0
    beta: float | None = None
    lambda_floor: str = "dims"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.c1 is None:
            object.__setattr__(self, "c1", 10.0 + 4.0 * self.delta + 1.0)
        if not self.c1 > 10.0 + 4.0 * self.delta:
            raise ValueError(f"c1 must exceed 10 + 4*delta = {10 + 4 * self.delta}")
        if self.c2 <= 0 or self.c3 <= 0:
            raise ValueError("c2 and c3 must be > 0")
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be >= 1")
        if self.lambda_floor not in ("dims", "log_dims"):
            raise ValueError("lambda_floor must be 'dims' or 'log_dims'")

    @property
    def kappa(self) -> float:
        return 10.0 + 4.0 * self.delta

    def check_beta(self, alpha: float) -> None:
        if self.beta is None:
            raise ValueError("beta must be set for the assumption report")
        if not 0.0 < self.beta < 1.0 / alpha:
            raise ValueError(f"beta must lie in (0, 1/alpha) = (0, {1.0 / alpha})")


def q_function(omega, n: int, t: float) -> float:
    """``sqrt(5/n * sum_l min(t^2, omega_l))``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("eigenvalues must be nonnegative")
    return math.sqrt(5.0 / n * float(np.sum(np.minimum(t * t, omega))))


def critical_radius(omega, n: int, delta: float = 1.0, xtol: float = 1e-9) -> float:
    """Smallest ``t`` with ``Q(t) <= delta t^2``.

    ``Q(t) / t^2`` is non-increasing, so the set is a half line and plain
    bisection on the ratio finds its left end.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("eigenvalues must be nonnegative")
    if not np.any(omega > 0):
        return 0.0
    t_sat = math.sqrt(float(omega.max()))
    q_sat = math.sqrt(5.0 / n * float(omega.sum()))
    lo = 1e-12
    hi = max(t_sat, math.sqrt(q_sat / delta)) * 10.0

    def ok(t):
        return q_function(omega, n, t) <= delta * t * t

    if ok(lo):
        return lo
    if not ok(hi):
        raise RuntimeError("critical radius bracket failed")
    while hi - lo > xtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def lambda_floor(params: RateParams) -> float:
    if params.lambda_floor == "log_dims":
        return math.sqrt(2.0 * math.log(params.d) / params.n) if params.d > 1 else 0.0
    return math.sqrt(params.d / params.n)


def tuning(nu: float, params: RateParams) -> tuple[float, float, float]:
    """Return ``(lambda, mu, gamma)`` for one group."""
    lam = max(float(nu), lambda_floor(params))
    return lam, params.c1 * lam * lam, params.c1 * lam


@dataclass
class GroupTuning:
    group: GroupIndex
    nu: float
    lam: float
    mu: float
    gamma: float
    assumption_nlog: bool = True

    def to_dict(self) -> dict:
        return {
            "group": self.group.label,
            "nu_empirical": self.nu,
            "lambda": self.lam,
            "mu": self.mu,
            "gamma": self.gamma,
            "flags": {"assumption_nlog": self.assumption_nlog},
        }


@dataclass
class TuningTable:
    """Per-group penalties plus the constants they came from."""

    rows: list
    params: RateParams | None = None
    assumption_sparsity: bool | None = None
    notes: list = field(default_factory=list)

    @property
    def groups(self) -> list:
        return [r.group for r in self.rows]

    def row(self, group: GroupIndex) -> GroupTuning:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group.label)

    def mu_for(self, groups) -> np.ndarray:
        return np.array([self.row(g).mu for g in groups])

    def gamma_for(self, groups) -> np.ndarray:
        return np.array([self.row(g).gamma for g in groups])

    def scaled(self, factor: float) -> "TuningTable":
        """Copy with ``mu`` and ``gamma`` multiplied by ``factor``."""
        rows = [
            GroupTuning(r.group, r.nu, r.lam, r.mu * factor, r.gamma * factor, r.assumption_nlog)
            for r in self.rows
        ]
        return TuningTable(rows, self.params, self.assumption_sparsity, list(self.notes))

    def to_dict(self) -> dict:
        out = {
            "groups": [r.to_dict() for r in self.rows],
            "notes": list(self.notes),
        }
        if self.params is not None:
            out["params"] = asdict(self.params)
        if self.assumption_sparsity is not None:
            out["assumption_sparsity"] = self.assumption_sparsity
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TuningTable":
        rows = [
            GroupTuning(
                GroupIndex.parse(r["group"]),
                float(r.get("nu_empirical", r.get("nu", 0.0))),
                float(r["lambda"]),
                float(r["mu"]),
                float(r["gamma"]),
                bool(r.get("flags", {}).get("assumption_nlog", True)),
            )
            for r in data["groups"]
        ]
        params = RateParams(**data["params"]) if "params" in data else None
        return cls(rows, params, data.get("assumption_sparsity"), list(data.get("notes", [])))

    @classmethod
    def constant(cls, groups, mu: float, gamma: float) -> "TuningTable":
        """Manual table with the same ``mu`` and ``gamma`` for every group."""
        rows = [GroupTuning(g, float("nan"), float("nan"), float(mu), float(gamma)) for g in groups]
        return cls(rows, None, None, ["manual penalties"])


def _nlog_holds(lam: float, n: int, c2: float) -> tuple[bool, float]:
    margin = n * lam * lam + c2 * math.log(lam) if lam > 0 else -math.inf
    return margin >= 0.0, margin


def tuning_table(grams: GramSet, params: RateParams) -> TuningTable:
    """Rate-driven penalties for every group of ``grams``."""
    rows = []
    for g, omega in zip(grams.groups, grams.spectra):
        nu = critical_radius(omega, grams.n, params.delta)
        lam, mu, gamma = tuning(nu, params)
        rows.append(GroupTuning(g, nu, lam, mu, gamma, _nlog_holds(lam, params.n, params.c2)[0]))
    notes = ["nu_empirical uses eigenvalues of K_v/n as a surrogate for the integral-operator spectrum"]
    return TuningTable(rows, params, None, notes)


def assumption_report(table: TuningTable, support, params: RateParams, alpha: float,
                      alpha_prime: float) -> dict:
    """Check the theorem hypotheses against a tuning table.

    (a) ``n lambda^2 >= -C2 log lambda`` for every group;
    (b) ``sum_{v in support} lambda^2 <= C3 n^(2 beta - 1)``;
    (c) kernel regularity ``alpha' > (alpha - 2) / 4``.
    """
    params.check_beta(alpha)
    per_group = {}
    all_a = True
    for r in table.rows:
        ok, margin = _nlog_holds(r.lam, params.n, params.c2)
        per_group[r.group.label] = margin
        all_a = all_a and ok
    support = list(support)
    lhs = sum(table.row(g).lam ** 2 for g in support)
    rhs = params.c3 * params.n ** (2.0 * params.beta - 1.0)
    reg_bound = (alpha - 2.0) / 4.0
    return {
        "nlog_holds": all_a,
        "nlog_margins": per_group,
        "sparsity_holds": lhs <= rhs,
        "sparsity_lhs": lhs,
        "sparsity_rhs": rhs,
        "regularity_holds": alpha_prime > reg_bound,
        "regularity_margin": alpha_prime - reg_bound,
    }
