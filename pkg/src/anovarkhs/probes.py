"""Empirical probes: covering numbers, Sudakov-type shape, concentration tails.

These check the observable shape of the ingredients behind the risk bound.
Universal constants are never asserted; probes report fitted ratios.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._rng import make_generator
from .noise import NoiseSpec, abs_first_moment, sample_raw

__all__ = [
    "PointSet",
    "CoverBounds",
    "InsufficientDataError",
    "covering_number",
    "covering_bounds",
    "exact_proper_cover",
    "sudakov_probe",
    "concentration_probe",
    "PHIS",
]


class InsufficientDataError(ValueError):
    """Too few Monte-Carlo exceedances to resolve a tail fit."""


class PointSet:
    """Finite set ``T`` of points in R^n (rows)."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("point set must be nonempty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point set must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def scaled(self, c: float) -> "PointSet":
        return PointSet(c * self.points)

    @property
    def diameter(self) -> float:
        return float(pdist(self.points).max()) if len(self) > 1 else 0.0


@dataclass(frozen=True)
class CoverBounds:
    """Certified bounds around the covering numbers at one ``delta``.

    ``lower`` <= N(delta) <= N_proper(delta) <= ``proper``, and
    ``proper`` <= N(delta / 2) (the greedy centers are delta-separated).
    """

    delta: float
    proper: int
    lower: int
    half_lower: int
    exact: int | None = None


def _greedy_order(D: np.ndarray):
    """Farthest-point traversal from point 0: order and insertion distances."""
    m = D.shape[0]
    order = [0]
    gaps = [math.inf]
    dist = D[0].copy()
    for _ in range(m - 1):
        j = int(np.argmax(dist))
        if dist[j] <= 0:
            break
        order.append(j)
        gaps.append(float(dist[j]))
        dist = np.minimum(dist, D[j])
    return order, gaps


def covering_bounds(T: PointSet, delta: float, exact_limit: int = 20) -> CoverBounds:
    if not delta > 0:
        raise ValueError("delta must be > 0")
    D = cdist(T.points, T.points)
    _, gaps = _greedy_order(D)
    # greedy proper cover: stop once every point is within delta
    proper = next((k for k, g in enumerate(gaps[1:], start=1) if g <= delta), len(gaps))
    # centers inserted at distance > 2 delta form a 2 delta-packing
    lower = next((k for k, g in enumerate(gaps[1:], start=1) if g <= 2 * delta), len(gaps))
    exact = exact_proper_cover(T, delta, D) if len(T) <= exact_limit else None
    return CoverBounds(float(delta), proper, lower, proper, exact)


def exact_proper_cover(T: PointSet, delta: float, D: np.ndarray | None = None) -> int:
    """Smallest proper delta-cover by exhaustive search over center subsets."""
    D = cdist(T.points, T.points) if D is None else D
    m = D.shape[0]
    masks = [sum(1 << j for j in range(m) if D[i, j] <= delta) for i in range(m)]
    full = (1 << m) - 1
    for k in range(1, m + 1):
        for combo in itertools.combinations(range(m), k):
            acc = 0
            for i in combo:
                acc |= masks[i]
            if acc == full:
                return k
    return m


def covering_number(T: PointSet, delta: float, proper: bool = True) -> int:
    """Proper delta-covering count of ``T`` (greedy, exact when ``|T| <= 20``).

    For ``proper=False`` the proper count is returned as an upper surrogate of
    N(delta); see :func:`covering_bounds` for the packing lower bound.
    """
    b = covering_bounds(T, delta)
    return b.exact if b.exact is not None else b.proper


# -------------------------------------------------------------------- sudakov

def sudakov_probe(T: PointSet, alpha: float, n_mc: int, delta_grid, seed: int = 0) -> dict:
    """Estimate ``M = E sup_t sum_i t_i Z_i`` and chart log N(delta) against its bound shape.

    Rows carry ``(2M/delta)^alpha`` for ``delta <= 2M`` and ``(2M/delta)^2``
    above, plus ``log N / bound`` as the implied constant.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    rng = make_generator(seed, 0)
    pts = T.points
    Z = sample_raw(alpha, (n_mc, pts.shape[1]), rng)
    sup = np.max(Z @ pts.T, axis=1)
    M, se = float(sup.mean()), float(sup.std(ddof=1) / math.sqrt(n_mc))
    rows = []
    for delta in delta_grid:
        b = covering_bounds(T, float(delta))
        count = b.exact if b.exact is not None else b.proper
        logN = math.log(count)
        sq = (2 * M / delta) ** 2 if M > 0 else 0.0
        pw = (2 * M / delta) ** alpha if M > 0 else 0.0
        regime = "power" if delta <= 2 * M else "square"
        bound = pw if regime == "power" else sq
        rows.append({
            "delta": float(delta),
            "log_N": logN,
            "log_N_lower": math.log(b.lower),
            "square_term": sq,
            "power_term": pw,
            "regime": regime,
            "bound": bound,
            "implied_constant": logN / bound if bound > 0 else (0.0 if logN == 0 else math.inf),
            "finite": bool(math.isfinite(logN)) or not math.isfinite(bound),
        })
    return {"M": M, "M_se": se, "alpha": float(alpha), "n_mc": int(n_mc), "rows": rows}


# ---------------------------------------------------------------- concentration

def _phi_max(Z):
    return Z.max(axis=1)


def _phi_norm(Z):
    return np.linalg.norm(Z, axis=1)


def _phi_softmax_free(Z):
    # the max with its log-sum-exp gap removed; still 1-Lipschitz and convex
    return Z.max(axis=1) - math.log(Z.shape[1])


def _phi_constant(Z):
    return np.zeros(Z.shape[0])


PHIS = {
    "max": _phi_max,
    "euclidean_norm": _phi_norm,
    "softmax_free": _phi_softmax_free,
    "constant": _phi_constant,
}


def concentration_probe(alpha: float, n: int, phi: str, n_mc: int, seed: int = 0,
                        grid_size: int = 40, min_exceed: int = 30, standardize: bool = True) -> dict:
    """Empirical ``P(|phi(Z) - E phi(Z)| >= u)`` and a least-squares fit of log tail on ``u^2``.

    ``Z`` has i.i.d. coordinates from the error law (unit variance when
    ``standardize``). The u-grid spans the 50th to 99.9th percentiles of the
    deviations; only grid points with at least ``min_exceed`` exceedances
    enter the fit.
    """
    if phi not in PHIS:
        raise ValueError(f"unknown phi {phi!r}; expected one of {sorted(PHIS)}")
    spec = NoiseSpec(alpha, probe=True)
    rng = make_generator(seed, 0)
    Z = sample_raw(alpha, (int(n_mc), int(n)), rng)
    if standardize:
        Z = Z / spec.sigma_alpha
    vals = PHIS[phi](Z)
    dev = np.abs(vals - vals.mean())
    if np.all(dev == 0):
        grid = np.linspace(0.0, 1.0, grid_size)[1:]
        return {"u": grid.tolist(), "tail": [0.0] * grid.size, "slope": 0.0, "intercept": -math.inf,
                "r2": float("nan"), "degenerate": True}
    grid = np.unique(np.quantile(dev, np.linspace(0.5, 0.999, grid_size)))
    counts = np.array([(dev >= u).sum() for u in grid])
    tail = counts / dev.size
    ok = counts >= min_exceed
    if ok.sum() < 3:
        raise InsufficientDataError("fewer than 3 grid points with enough exceedances")
    x, y = grid[ok] ** 2, np.log(tail[ok])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, icpt])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else float("nan")
    steps = -np.diff(y) / np.diff(x)
    return {
        "u": grid.tolist(),
        "tail": tail.tolist(),
        "resolved": ok.tolist(),
        "slope": float(slope),
        "intercept": float(icpt),
        "r2": float(r2),
        "min_decay_rate": float(steps.min()) if steps.size else float("nan"),
        "degenerate": False,
    }


def two_point_sudakov_oracle(alpha: float) -> float:
    """``E|Z|``: the exact value of ``M`` for ``T = {e1, -e1}``."""
    return abs_first_moment(alpha)
