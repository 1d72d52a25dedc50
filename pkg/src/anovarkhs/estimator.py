"""Ridge group sparse estimation over the ANOVA RKHS.

The criterion for ``f = f0 + sum_v f_v`` with ``f_v = sum_i theta_vi k_v(., X_vi)`` is

    (1/n) ||Y - f0 - sum_v K_v theta_v||^2
        + sum_v gamma_v ||f_v||_n + sum_v mu_v ||f_v||_{H_v},

minimized subject to ``||f_v||_{H_v} <= r_v``. With ``K_v = U diag(lam) U^T``
and ``beta = diag(lam)^{1/2} U^T theta`` both norms are Euclidean in
``beta``: ``||f_v||_H = ||beta||`` and ``||f_v||_n = ||lam^{1/2} beta|| / sqrt(n)``.

Blocks are visited cyclically in graded-lex order. Each visit first runs the
exact group-zero test; if the block stays nonzero its minimizer solves

    beta_j = c z_j / ((c + a/p) lam_j + mu/q + kappa),   c = 2/n, a = gamma/sqrt(n)

where ``p = ||lam^{1/2} beta||``, ``q = ||beta||`` and ``kappa >= 0`` is the
ball multiplier. That is a two-unknown fixed point, solved with a hybrid
root finder and backed by majorize-minimize iterations (each one a
monotone descent step).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._rng import make_generator
from .kernels import GramSet, GroupIndex, KernelSpec, center_kernel, group_kernel_matrix
from .rates import TuningTable

__all__ = [
    "MetaModel",
    "FitConfig",
    "FitResult",
    "UndefinedSharesError",
    "objective",
    "fit",
    "predict",
    "support",
    "decompose",
    "rescale_fit",
    "zero_test_margin",
    "block_problem",
]

_RANK_TOL = 1e-12


class UndefinedSharesError(ValueError):
    """Variance shares requested for a model with no active group."""


@dataclass(frozen=True)
class FitConfig:
    tol_rel_objective: float = 1e-7
    max_sweeps: int = 500
    inner_iters: int = 200
    zero_threshold: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_rel_objective", "max_sweeps", "inner_iters", "zero_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class MetaModel:
    """Intercept and per-group representer coefficients.

    ``norms[k] = (||f_v||_n, ||f_v||_{H_v})`` for ``groups[k]``.
    """

    f0: float
    groups: list
    theta: list
    norms: list
    radius: list
    spec_hash: str = ""
    design_hash: str = ""

    def group_values(self, grams: GramSet) -> list:
        """In-sample values ``K_v theta_v`` for each group."""
        return [grams.grams[grams.index(g)] @ th for g, th in zip(self.groups, self.theta)]

    def to_dict(self) -> dict:
        return {
            "intercept": self.f0,
            "groups": [g.label for g in self.groups],
            "theta": [list(map(float, th)) for th in self.theta],
            "norms": [{"empirical": float(a), "hilbert": float(b)} for a, b in self.norms],
            "radius": [float(r) for r in self.radius],
            "kernel_spec_hash": self.spec_hash,
            "design_hash": self.design_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetaModel":
        return cls(
            f0=float(data["intercept"]),
            groups=[GroupIndex.parse(s) for s in data["groups"]],
            theta=[np.asarray(t, dtype=float) for t in data["theta"]],
            norms=[(float(x["empirical"]), float(x["hilbert"])) for x in data["norms"]],
            radius=[float(r) for r in data["radius"]],
            spec_hash=data.get("kernel_spec_hash", ""),
            design_hash=data.get("design_hash", ""),
        )


@dataclass
class FitResult:
    model: MetaModel
    objective_trace: list
    active_set: list
    converged: bool
    sweeps_used: int
    binding: int = 0
    stationarity: dict = field(default_factory=dict)


def design_hash(design) -> str:
    design = np.ascontiguousarray(design, dtype=float)
    return hashlib.sha256(design.tobytes() + str(design.shape).encode()).hexdigest()[:16]


def _norms(K, theta, n):
    Kt = K @ theta
    return float(np.linalg.norm(Kt) / math.sqrt(n)), float(math.sqrt(max(theta @ Kt, 0.0)))


def objective(Y, model: MetaModel, grams: GramSet, mu, gamma) -> float:
    """Value of the penalized criterion at ``model``; ``mu``/``gamma`` follow ``model.groups``."""
    Y = np.asarray(Y, dtype=float)
    n = grams.n
    if Y.shape != (n,):
        raise ValueError(f"Y has shape {Y.shape}, expected ({n},)")
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (len(model.groups),))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (len(model.groups),))
    resid = Y - model.f0
    pen = 0.0
    for k, (g, th) in enumerate(zip(model.groups, model.theta)):
        K = grams.grams[grams.index(g)]
        if th.shape != (n,):
            raise ValueError("theta length does not match the design")
        resid = resid - K @ th
        emp, hil = _norms(K, th, n)
        pen += gamma[k] * emp + mu[k] * hil
    return float(resid @ resid / n + pen)


# ------------------------------------------------------------------ block math

@dataclass
class _Block:
    """Reduced coordinates of one group: ``K_v = B B^T`` with ``B = U_r diag(sqrt(lam_r))``."""

    lam: np.ndarray
    U: np.ndarray

    @classmethod
    def from_grams(cls, grams: GramSet, k: int) -> "_Block":
        vals = grams.spectra[k] * grams.n
        keep = vals > _RANK_TOL * max(vals[0] if vals.size else 0.0, 1e-300)
        return cls(vals[keep], grams.eigvecs[k][:, keep])

    def values(self, beta):
        return self.U @ (np.sqrt(self.lam) * beta)

    def theta(self, beta):
        return self.U @ (beta / np.sqrt(self.lam))

    def beta_of(self, theta):
        return np.sqrt(self.lam) * (self.U.T @ theta)


def block_problem(lam, z, n, gamma, mu):
    """Block objective ``h(beta)`` up to a constant, and its gradient off the origin."""
    c = 2.0 / n
    a = gamma / math.sqrt(n)

    def h(beta):
        return (float(beta @ (lam * beta)) - 2.0 * float(z @ beta)) / n + a * math.sqrt(
            float(beta @ (lam * beta))) + mu * float(np.linalg.norm(beta))

    def grad(beta):
        p = math.sqrt(float(beta @ (lam * beta)))
        q = float(np.linalg.norm(beta))
        g = c * (lam * beta - z)
        if p > 0:
            g = g + a * lam * beta / p
        if q > 0:
            g = g + mu * beta / q
        return g

    return h, grad


def _min_dist_scaled_ball(cvec, s):
    """``min_{||u|| <= 1} ||cvec - s * u||`` for a nonnegative diagonal ``s``."""
    pos = s > 0
    c0 = float(np.sum(cvec[~pos] ** 2))
    cp, sp = cvec[pos], s[pos]
    if cp.size == 0:
        return math.sqrt(c0)
    u = cp / sp
    if float(u @ u) <= 1.0:
        return math.sqrt(c0)

    def excess(tau):
        uu = sp * cp / (sp * sp + tau)
        return float(uu @ uu) - 1.0

    hi = float(np.max(sp * np.abs(cp)))  # ||u(hi)|| <= ||c|| / ... shrinks below 1 after doubling
    while excess(hi) > 0:
        hi *= 2.0
    tau = optimize.brentq(excess, 0.0, hi, xtol=1e-15 * max(hi, 1.0), rtol=1e-15, maxiter=500)
    uu = sp * cp / (sp * sp + tau)
    rem = cp - sp * uu
    return math.sqrt(c0 + float(rem @ rem))


def zero_test_margin(lam, z, n, gamma, mu) -> float:
    """``mu - min_{||u||<=1} ||(2/n) z - (gamma/sqrt(n)) lam^{1/2} u||``.

    Nonnegative exactly when ``beta = 0`` minimizes the block problem.
    """
    cvec = (2.0 / n) * z
    s = (gamma / math.sqrt(n)) * np.sqrt(lam)
    return mu - _min_dist_scaled_ball(cvec, s)


def _ball_solve(num, den, radius):
    """Minimize ``sum den_j b_j^2 / 2 - num_j b_j`` over ``||b|| <= radius`` (den > 0)."""
    b = num / den
    nb = float(np.linalg.norm(b))
    if nb <= radius:
        return b, 0.0

    def excess(kappa):
        return float(np.linalg.norm(num / (den + kappa))) - radius

    hi = float(np.max(np.abs(num))) / radius
    while excess(hi) > 0:
        hi *= 2.0
    kappa = optimize.brentq(excess, 0.0, hi, xtol=1e-14 * max(hi, 1e-300), rtol=1e-15, maxiter=500)
    b = num / (den + kappa)
    nb = float(np.linalg.norm(b))
    if nb > radius:
        b *= radius / nb
    return b, kappa


def _mm_step(beta, lam, z, n, a, mu, radius):
    c = 2.0 / n
    p = math.sqrt(float(beta @ (lam * beta)))
    q = float(np.linalg.norm(beta))
    den = c * lam
    if a > 0:
        den = den + a * lam / p
    if mu > 0:
        den = den + mu / q
    return _ball_solve(c * z, den, radius)[0]


def _exp(x):
    # root finder probes can wander; keep exp finite
    return math.exp(min(max(x, -700.0), 700.0))


def _log(x):
    return math.log(x) if x > 0 else -745.0


def _root(func, x0):
    try:
        with np.errstate(all="ignore"):
            return optimize.root(func, x0, method="hybr", options={"xtol": 1e-14})
    except (ArithmeticError, ValueError):
        return None


def _fixed_point(lam, z, n, a, mu, radius, beta0):
    """Solve the block KKT system in the two norms; ``None`` on failure."""
    c = 2.0 / n

    def beta_of(S, T):
        return c * z / ((c + S) * lam + T)

    def norms(b):
        return math.sqrt(float(b @ (lam * b))), float(np.linalg.norm(b))

    p0, q0 = norms(beta0)
    if not (p0 > 0 and q0 > 0):
        return None

    # unconstrained: unknowns (log p, log q)
    def resid_free(x):
        p, q = _exp(x[0]), _exp(x[1])
        pb, qb = norms(beta_of(a / p, mu / q))
        return [_log(pb) - x[0], _log(qb) - x[1]]

    sol = _root(resid_free, [math.log(p0), math.log(q0)])
    if sol is not None and sol.success and np.all(np.isfinite(sol.x)):
        p, q = np.exp(sol.x)
        b = beta_of(a / p, mu / q)
        if np.linalg.norm(b) <= radius * (1 + 1e-12):
            return b

    # constrained: ||beta|| = radius, unknowns (log p, log T), T = mu/radius + kappa
    t_min = mu / radius

    def resid_ball(x):
        p, T = _exp(x[0]), _exp(x[1])
        pb, qb = norms(beta_of(a / p, T))
        return [_log(pb) - x[0], _log(qb) - math.log(radius)]

    bb = beta0 * min(1.0, radius / q0)
    pb0, _ = norms(bb)
    T0 = max(t_min, 1e-300) + c * float(np.mean(lam)) + 1e-12
    sol = _root(resid_ball, [math.log(pb0), math.log(T0)])
    if sol is not None and sol.success and np.all(np.isfinite(sol.x)):
        p, T = np.exp(sol.x)
        if T >= t_min * (1 - 1e-10):
            return beta_of(a / p, T)
    return None


def _proj_grad_residual(beta, grad, radius):
    step = beta - grad(beta)
    nrm = float(np.linalg.norm(step))
    if nrm > radius:
        step *= radius / nrm
    return float(np.linalg.norm(beta - step))


def _solve_block(lam, z, n, gamma, mu, radius, beta0, inner_iters, rng):
    """Exact minimizer of the block problem; returns (beta, is_zero)."""
    if zero_test_margin(lam, z, n, gamma, mu) >= 0.0:
        return np.zeros_like(lam), True
    a = gamma / math.sqrt(n)
    h, grad = block_problem(lam, z, n, gamma, mu)

    start = beta0 if np.linalg.norm(beta0) > 0 else None
    if start is None:
        # least-squares direction, scaled into the ball
        start = _ball_solve((2.0 / n) * z, (2.0 / n) * lam + mu + 1e-300, radius)[0]
    candidates = []
    beta = start
    for _ in range(min(inner_iters, 20)):
        nxt = _mm_step(beta, lam, z, n, a, mu, radius)
        if not np.all(np.isfinite(nxt)) or np.linalg.norm(nxt) == 0:
            break
        beta = nxt
    candidates.append(beta)
    fp = _fixed_point(lam, z, n, a, mu, radius, beta)
    if fp is not None and np.all(np.isfinite(fp)):
        candidates.append(fp)
    best = min(candidates, key=h)
    tol = 1e-10 * (1.0 + float(np.linalg.norm(best)))
    if _proj_grad_residual(best, grad, radius) > tol:
        # stalled: more MM steps, then random restarts
        beta = best
        for _ in range(inner_iters * 50):
            beta = _mm_step(beta, lam, z, n, a, mu, radius)
        candidates.append(beta)
        for _ in range(10):
            r0 = rng.standard_normal(lam.size)
            r0 *= radius * rng.random() / np.linalg.norm(r0)
            fp = _fixed_point(lam, z, n, a, mu, radius, r0)
            if fp is not None and np.all(np.isfinite(fp)):
                candidates.append(fp)
        best = min(candidates, key=h)
    if h(best) > h(np.zeros_like(best)):
        return np.zeros_like(lam), True
    return best, False


# ------------------------------------------------------------------------- fit

def _validate(Y, grams: GramSet, tuning: TuningTable):
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (grams.n,):
        raise ValueError(f"Y has shape {Y.shape}, expected ({grams.n},)")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    mu = tuning.mu_for(grams.groups)
    gamma = tuning.gamma_for(grams.groups)
    if np.any(mu < 0) or np.any(gamma < 0) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(gamma)):
        raise ValueError("mu and gamma must be finite and nonnegative")
    return Y, mu, gamma


def fit(Y, grams: GramSet, tuning: TuningTable, config: FitConfig | None = None, radius=1.0) -> FitResult:
    """Minimize the ridge group sparse criterion over ``||f_v||_H <= r_v``."""
    config = config or FitConfig()
    Y, mu, gamma = _validate(Y, grams, tuning)
    n, G = grams.n, len(grams.groups)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (G,)).copy()
    if np.any(radius <= 0):
        raise ValueError("radius must be > 0")
    rng = make_generator(config.seed, 7919)

    blocks = [_Block.from_grams(grams, k) for k in range(G)]
    betas = [np.zeros(b.lam.size) for b in blocks]
    values = [np.zeros(n) for _ in blocks]
    f0 = float(np.mean(Y))
    total = np.zeros(n)

    def crit():
        r = Y - f0 - total
        pen = 0.0
        for k, b in enumerate(blocks):
            pen += gamma[k] * np.linalg.norm(values[k]) / math.sqrt(n) + mu[k] * np.linalg.norm(betas[k])
        return float(r @ r / n + pen)

    trace = [crit()]
    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        for k, b in enumerate(blocks):
            if b.lam.size == 0:
                continue
            partial = Y - f0 - (total - values[k])
            z = np.sqrt(b.lam) * (b.U.T @ partial)
            h, _ = block_problem(b.lam, z, n, gamma[k], mu[k])
            new, _ = _solve_block(b.lam, z, n, gamma[k], mu[k], radius[k], betas[k], config.inner_iters, rng)
            if h(new) <= h(betas[k]):
                new_vals = b.values(new)
                total = total - values[k] + new_vals
                values[k] = new_vals
                betas[k] = new
        f0 = float(np.mean(Y - total))
        trace.append(crit())
        prev, cur = trace[-2], trace[-1]
        if prev - cur <= config.tol_rel_objective * max(abs(prev), 1e-300):
            converged = True
            break

    thetas = [b.theta(beta) for b, beta in zip(blocks, betas)]
    norms = [_norms(grams.grams[k], thetas[k], n) for k in range(G)]
    model = MetaModel(
        f0=f0,
        groups=list(grams.groups),
        theta=thetas,
        norms=norms,
        radius=list(radius),
        spec_hash=grams.spec.content_hash(),
        design_hash=design_hash(grams.design),
    )
    binding = int(sum(np.linalg.norm(bt) >= r * (1 - 1e-9) for bt, r in zip(betas, radius)))
    stat = _stationarity(Y, blocks, betas, values, f0, total, n, mu, gamma, radius, grams.groups)
    return FitResult(
        model=model,
        objective_trace=trace,
        active_set=support(model, config.zero_threshold),
        converged=converged,
        sweeps_used=sweeps,
        binding=binding,
        stationarity=stat,
    )


def _stationarity(Y, blocks, betas, values, f0, total, n, mu, gamma, radius, groups):
    out = {}
    for k, b in enumerate(blocks):
        if b.lam.size == 0:
            continue
        partial = Y - f0 - (total - values[k])
        z = np.sqrt(b.lam) * (b.U.T @ partial)
        if np.linalg.norm(betas[k]) == 0:
            out[groups[k].label] = ("zero_margin", zero_test_margin(b.lam, z, n, gamma[k], mu[k]))
        else:
            _, grad = block_problem(b.lam, z, n, gamma[k], mu[k])
            out[groups[k].label] = ("pg_residual", _proj_grad_residual(betas[k], grad, radius[k]))
    return out


def rescale_fit(Y, sigma: float, grams: GramSet, tuning: TuningTable, config: FitConfig | None = None,
                radius=1.0) -> FitResult:
    """Fit ``Y / sigma`` with radii ``r_v / sigma`` and return ``sigma * g_hat``.

    ``tuning`` holds the penalties of the unit-noise problem. The returned
    model minimizes the original-scale criterion with penalties
    ``sigma * gamma_v`` and ``sigma * mu_v`` over ``||f_v||_H <= r_v``, and its
    objective trace is on that scale (``sigma^2`` times the unit-scale one).
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if sigma == 1.0:
        return fit(Y, grams, tuning, config, radius)
    Y = np.asarray(Y, dtype=float)
    radius = np.asarray(radius, dtype=float) / sigma
    res = fit(Y / sigma, grams, tuning, config, radius)
    m = res.model
    model = MetaModel(
        f0=sigma * m.f0,
        groups=m.groups,
        theta=[sigma * th for th in m.theta],
        norms=[(sigma * a, sigma * b) for a, b in m.norms],
        radius=[sigma * r for r in m.radius],
        spec_hash=m.spec_hash,
        design_hash=m.design_hash,
    )
    return FitResult(
        model=model,
        objective_trace=[sigma * sigma * v for v in res.objective_trace],
        active_set=res.active_set,
        converged=res.converged,
        sweeps_used=res.sweeps_used,
        binding=res.binding,
        stationarity=res.stationarity,
    )


# ------------------------------------------------------------------- evaluation

def support(model: MetaModel, threshold: float = 1e-10) -> list:
    """Groups with ``||f_v||_n > threshold``, graded-lex ordered."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return sorted(g for g, (emp, _) in zip(model.groups, model.norms) if emp > threshold)


def predict(model: MetaModel, spec: KernelSpec, X_new, X_train, return_groups: bool = False):
    """Evaluate ``f0 + sum_v sum_i theta_vi k_v(x_v, X_vi)`` at the rows of ``X_new``."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    if X_new.shape[1] != X_train.shape[1]:
        raise ValueError("X_new and X_train have different numbers of columns")
    if any(th.shape != (X_train.shape[0],) for th in model.theta):
        raise ValueError("theta length does not match X_train")
    coords = sorted({a for g in model.groups for a in g.columns})
    centered = {a: center_kernel(spec, a) for a in coords}
    parts = []
    for g, th in zip(model.groups, model.theta):
        if not np.any(th):
            parts.append(np.zeros(X_new.shape[0]))
            continue
        parts.append(group_kernel_matrix(spec, g, X_new, X_train, centered) @ th)
    out = model.f0 + (np.sum(parts, axis=0) if parts else np.zeros(X_new.shape[0]))
    if return_groups:
        return out, parts
    return out


def decompose(model: MetaModel, grams: GramSet | None = None) -> dict:
    """Empirical variance shares ``||f_v||_n^2 / sum_w ||f_w||_n^2``.

    Empirical norms stand in for L2 norms, so shares only approximate the
    population decomposition.
    """
    sq = {g: emp * emp for g, (emp, _) in zip(model.groups, model.norms)}
    total = sum(sq.values())
    if total <= 0:
        raise UndefinedSharesError("all group components are zero")
    return {g: v / total for g, v in sq.items()}
