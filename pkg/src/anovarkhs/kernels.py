"""Base kernels, zero-mean centering under known input laws, ANOVA Gram matrices.

Each coordinate ``a`` carries a base kernel ``k_a`` and a known input law
``P_a`` on a compact interval. The centered kernel

    k0(x, y) = k(x, y) - E_U k(x, U) E_U k(y, U) / E_{U,V} k(U, V)

spans the zero-mean part of the RKHS of ``k_a``. Group kernels are products
of centered kernels over the group members. Expectations under ``P_a`` use
Gauss-Legendre rules; the inner expectation is split at ``x`` because the
Brownian, Matern and Sobolev kernels have a kink on the diagonal.
"""
from __future__ import annotations

import functools
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

__all__ = [
    "FAMILIES",
    "InputLaw",
    "KernelSpec",
    "GroupIndex",
    "GramSet",
    "CenteredKernel",
    "DegenerateKernelError",
    "base_kernel",
    "center_kernel",
    "anova_gram",
    "enumerate_groups",
    "gram_spectrum",
    "group_kernel_matrix",
]

FAMILIES = ("brownian", "gaussian", "matern32", "sobolev1")
_DEFAULT_PARAMS = {
    "brownian": {"scale": 1.0},
    "gaussian": {"scale": 1.0, "lengthscale": 0.5},
    "matern32": {"scale": 1.0, "lengthscale": 0.5},
    "sobolev1": {"scale": 1.0},
}


class DegenerateKernelError(ValueError):
    """Raised when ``E_{U,V} k(U, V)`` vanishes and centering is undefined."""


# ---------------------------------------------------------------- base kernels

def base_kernel(family: str, params: dict, lower: float, upper: float):
    """Return a vectorized ``k(x, y)`` for one coordinate (broadcasting over arrays)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    p = {**_DEFAULT_PARAMS[family], **(params or {})}
    scale = float(p["scale"])
    if scale <= 0:
        raise ValueError("kernel scale must be > 0")

    if family == "brownian":
        if lower < 0:
            raise ValueError("brownian kernel needs a domain inside [0, inf)")

        def k(x, y):
            return scale * np.minimum(x, y)

    elif family == "gaussian":
        ell = float(p["lengthscale"])

        def k(x, y):
            return scale * np.exp(-0.5 * ((x - y) / ell) ** 2)

    elif family == "matern32":
        ell = float(p["lengthscale"])

        def k(x, y):
            r = np.sqrt(3.0) * np.abs(x - y) / ell
            return scale * (1.0 + r) * np.exp(-r)

    else:
        # W^{1,2}[lower, upper] with norm ||f||^2 + ||f'||^2
        width = upper - lower

        def k(x, y):
            lo = np.minimum(x, y) - lower
            hi = upper - np.maximum(x, y)
            return scale * np.cosh(lo) * np.cosh(hi) / np.sinh(width)

    return k


# ------------------------------------------------------------------ input laws

@dataclass(frozen=True)
class InputLaw:
    """Known distribution of one input coordinate on ``[lower, upper]``.

    ``kind`` is ``"uniform"`` or ``"beta"`` (shape ``a, b >= 1`` rescaled to
    the interval).
    """

    kind: str = "uniform"
    lower: float = 0.0
    upper: float = 1.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta"):
            raise ValueError(f"unknown input law {self.kind!r}")
        if not self.upper > self.lower:
            raise ValueError("input law needs lower < upper")
        if self.kind == "beta" and (self.a < 1 or self.b < 1):
            raise ValueError("beta law needs a, b >= 1 (bounded density)")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        width = self.upper - self.lower
        if self.kind == "uniform":
            inside = (x >= self.lower) & (x <= self.upper)
            return np.where(inside, 1.0 / width, 0.0)
        return stats.beta.pdf((x - self.lower) / width, self.a, self.b) / width

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lower, self.upper, size=size)
        return self.lower + (self.upper - self.lower) * rng.beta(self.a, self.b, size=size)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class KernelSpec:
    """Per-coordinate kernel families, parameters and input laws.

    A single family / params / law is broadcast to every coordinate; lists
    give per-coordinate values and must have length ``d``.
    """

    family: object = "brownian"
    params: object = field(default_factory=dict)
    input_law: object = field(default_factory=InputLaw)
    quadrature_order: int = 64

    def __post_init__(self):
        if int(self.quadrature_order) < 8:
            raise ValueError("quadrature_order must be >= 8")
        fams = [self.family] if isinstance(self.family, str) else list(self.family)
        for fam in fams:
            if fam not in FAMILIES:
                raise ValueError(f"unknown kernel family {fam!r}")

    def family_of(self, a: int) -> str:
        return self.family if isinstance(self.family, str) else self.family[a]

    def params_of(self, a: int) -> dict:
        return self.params if isinstance(self.params, dict) else self.params[a]

    def law_of(self, a: int) -> InputLaw:
        return self.input_law if isinstance(self.input_law, InputLaw) else self.input_law[a]

    def to_dict(self) -> dict:
        law = self.input_law
        return {
            "family": self.family if isinstance(self.family, str) else list(self.family),
            "params": self.params if isinstance(self.params, dict) else list(self.params),
            "input_law": law.to_dict() if isinstance(law, InputLaw) else [x.to_dict() for x in law],
            "quadrature_order": int(self.quadrature_order),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        law = data.get("input_law", {})
        if isinstance(law, list):
            law = tuple(InputLaw(**x) for x in law)
        else:
            law = InputLaw(**law)
        family = data.get("family", "brownian")
        params = data.get("params", {})
        return cls(
            family=family if isinstance(family, str) else tuple(family),
            params=params if isinstance(params, dict) else tuple(params),
            input_law=law,
            quadrature_order=int(data.get("quadrature_order", 64)),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -------------------------------------------------------------------- centering

class CenteredKernel:
    """Evaluator for the centered kernel ``k0`` of one coordinate."""

    def __init__(self, kernel, law: InputLaw, order: int = 64):
        self.kernel = kernel
        self.law = law
        self.order = int(order)
        self._nodes, self._weights = np.polynomial.legendre.leggauss(self.order)
        self.total_mean = self._total_mean()
        if self.total_mean <= 1e-12:
            raise DegenerateKernelError(
                f"E k(U, V) = {self.total_mean:.3e} too small to center the kernel"
            )

    def _rule(self, lo, hi):
        """Gauss-Legendre nodes/weights mapped to ``[lo, hi]`` (arrays broadcast)."""
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        half = 0.5 * (hi - lo)
        return lo + half * (self._nodes + 1.0), half * self._weights

    def mean(self, x) -> np.ndarray:
        """``E_U k(x, U)`` for ``U ~ P_a``, split at ``x``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.law.lower, self.law.upper
        total = np.zeros_like(x)
        for a, b in ((np.full_like(x, lo), x), (x, np.full_like(x, hi))):
            u, w = self._rule(a, b)
            total = total + np.sum(w * self.law.pdf(u) * self.kernel(x[..., None], u), axis=-1)
        return total

    def _total_mean(self) -> float:
        u, w = self._rule(self.law.lower, self.law.upper)
        return float(np.sum(w * self.law.pdf(u) * self.mean(u)))

    def __call__(self, x, y) -> np.ndarray:
        """Matrix ``k0(x_i, y_j)`` for 1-d arrays ``x``, ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        mx, my = self.mean(x), self.mean(y)
        return self.kernel(x[:, None], y[None, :]) - np.outer(mx, my) / self.total_mean

    def diag(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.kernel(x, x) - self.mean(x) ** 2 / self.total_mean


def center_kernel(spec: KernelSpec, coordinate: int) -> CenteredKernel:
    """Centered kernel for ``coordinate`` (0-based column index)."""
    law = spec.law_of(coordinate)
    k = base_kernel(spec.family_of(coordinate), spec.params_of(coordinate), law.lower, law.upper)
    return CenteredKernel(k, law, spec.quadrature_order)


# ----------------------------------------------------------------------- groups

@functools.total_ordering
class GroupIndex:
    """A nonempty set of input coordinates, 1-based as in ``x1..xd``.

    Ordering is graded lexicographic: by size, then by members.
    """

    __slots__ = ("members",)

    def __init__(self, members):
        members = tuple(int(m) for m in members)
        if not members:
            raise ValueError("group must be nonempty")
        if any(m < 1 for m in members) or any(b <= a for a, b in zip(members, members[1:])):
            raise ValueError(f"group members must be strictly increasing and >= 1: {members}")
        object.__setattr__(self, "members", members)

    def __setattr__(self, name, value):
        raise AttributeError("GroupIndex is immutable")

    def _key(self):
        return (len(self.members), self.members)

    def __eq__(self, other):
        return isinstance(other, GroupIndex) and self.members == other.members

    def __lt__(self, other):
        return self._key() < other._key()

    def __hash__(self):
        return hash(self.members)

    def __repr__(self):
        return f"GroupIndex({self.members})"

    @property
    def label(self) -> str:
        return ":".join(f"x{m}" for m in self.members)

    @property
    def columns(self) -> list[int]:
        return [m - 1 for m in self.members]

    @classmethod
    def parse(cls, text: str) -> "GroupIndex":
        return cls(int(tok.strip().lstrip("x")) for tok in text.split(":"))

    def __str__(self):
        return self.label


def enumerate_groups(d: int, max_order: int) -> list[GroupIndex]:
    """All nonempty subsets of ``{1..d}`` of size ``<= max_order``, graded-lex ordered."""
    d, max_order = int(d), int(max_order)
    if max_order < 1 or max_order > d:
        raise ValueError(f"need 1 <= max_order <= d, got max_order={max_order}, d={d}")
    return [
        GroupIndex(c)
        for size in range(1, max_order + 1)
        for c in itertools.combinations(range(1, d + 1), size)
    ]


# ------------------------------------------------------------------------ grams

def gram_spectrum(K: np.ndarray, n: int | None = None, return_vectors: bool = False):
    """Descending eigenvalues of ``K / n`` with round-off negatives clipped to 0.

    Raises ``ValueError`` if ``K`` is not symmetric to 1e-10 or has an
    eigenvalue below ``-1e-8 * trace(K)``.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0] if n is None else int(n)
    scale = max(1.0, float(np.max(np.abs(K)))) if K.size else 1.0
    if np.max(np.abs(K - K.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("Gram matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    floor = -1e-8 * max(float(np.trace(K)), 0.0)
    if vals.size and vals[-1] < floor - 1e-300:
        raise ValueError(f"Gram matrix is indefinite: min eigenvalue {vals[-1]:.3e}")
    vals = np.clip(vals, 0.0, None)
    if return_vectors:
        return vals / n, vecs
    return vals / n


def _base_grams(spec: KernelSpec, design: np.ndarray, coords) -> dict:
    out = {}
    for a in coords:
        k0 = center_kernel(spec, a)
        G = k0(design[:, a], design[:, a])
        out[a] = 0.5 * (G + G.T)
    return out


def group_kernel_matrix(spec: KernelSpec, group: GroupIndex, X1, X2, centered=None) -> np.ndarray:
    """Cross-kernel ``k_v(X1_i, X2_j)`` for one group."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    out = np.ones((X1.shape[0], X2.shape[0]))
    for a in group.columns:
        k0 = centered[a] if centered is not None else center_kernel(spec, a)
        out *= k0(X1[:, a], X2[:, a])
    return out


@dataclass(frozen=True, eq=False)
class GramSet:
    """Per-group centered Gram matrices of a design with their eigen-decompositions.

    ``spectra[v]`` holds the eigenvalues of ``K_v / n`` (descending, clipped),
    ``eigvecs[v]`` the matching orthonormal eigenvectors.
    """

    design: np.ndarray
    groups: tuple
    grams: tuple
    spectra: tuple
    eigvecs: tuple
    spec: KernelSpec

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    def index(self, group: GroupIndex) -> int:
        return self.groups.index(group)

    @cached_property
    def content_hash(self) -> str:
        return gram_cache_key(self.design, self.spec, self.groups)

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            design=self.design,
            groups=np.array(json.dumps([g.members for g in self.groups])),
            spec=np.array(json.dumps(self.spec.to_dict())),
            key=np.array(self.content_hash),
            **{f"K{i}": K for i, K in enumerate(self.grams)},
        )

    @classmethod
    def load(cls, path) -> "GramSet":
        with np.load(path) as z:
            design = z["design"]
            groups = [GroupIndex(m) for m in json.loads(str(z["groups"]))]
            spec = KernelSpec.from_dict(json.loads(str(z["spec"])))
            grams = [z[f"K{i}"] for i in range(len(groups))]
        return _assemble(design, groups, grams, spec)


def gram_cache_key(design, spec: KernelSpec, groups) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(design, dtype=float).tobytes())
    h.update(str(np.asarray(design).shape).encode())
    h.update(json.dumps(spec.to_dict(), sort_keys=True).encode())
    h.update(json.dumps([g.members for g in groups]).encode())
    return h.hexdigest()[:16]


def _assemble(design, groups, grams, spec) -> GramSet:
    n = design.shape[0]
    spectra, vecs = [], []
    for K in grams:
        vals, U = gram_spectrum(K, n, return_vectors=True)
        spectra.append(vals)
        vecs.append(U)
    return GramSet(design, tuple(groups), tuple(grams), tuple(spectra), tuple(vecs), spec)


def anova_gram(spec: KernelSpec, design, groups) -> GramSet:
    """Build ``K_v[i, j] = prod_{a in v} k0_a(X_ai, X_aj)`` for every group."""
    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[0] < 2:
        raise ValueError("design must be an n x d matrix with n >= 2")
    n, d = design.shape
    groups = sorted(groups)
    for g in groups:
        if g.members[-1] > d:
            raise IndexError(f"group {g.label} references a coordinate beyond d={d}")
    coords = sorted({a for g in groups for a in g.columns})
    for a in coords:
        if not spec.law_of(a).contains(design[:, a]):
            raise ValueError(f"design column x{a + 1} leaves the input domain")
    base = _base_grams(spec, design, coords)
    grams = []
    for g in groups:
        K = np.ones((n, n))
        for a in g.columns:
            K = K * base[a]
        grams.append(K)
    return _assemble(design, groups, grams, spec)
