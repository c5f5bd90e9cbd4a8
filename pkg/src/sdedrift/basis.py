"""Data-driven domains and finite-dimensional function spaces.

One-dimensional families (piecewise polynomials, clamped B-splines and a
Fourier basis) live on an interval and are combined across dimensions by a
tensor grid product.  Flat basis indices follow C order over the
per-dimension multi-index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDomain

FAMILIES = ("bspline", "pwpoly", "fourier")


@dataclass(frozen=True)
class Domain:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if not a < b:
                raise DegenerateDomain(f"dimension {k} has empty extent [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return len(self.lo)

    def interval(self, k: int) -> tuple[float, float]:
        return self.lo[k], self.hi[k]


def build_domain(ens, padding: float = 0.0) -> Domain:
    """Bounding box of every observed state, widened by ``padding`` times the range."""
    if padding < 0:
        raise ValueError("padding must be nonnegative")
    X = ens.pooled_states() if hasattr(ens, "pooled_states") else np.asarray(ens, dtype=float)
    X = X.reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("no states to build a domain from")
    lo, hi = X.min(axis=0), X.max(axis=0)
    width = hi - lo
    if np.any(width == 0):
        raise DegenerateDomain(f"observed states are constant along dimension {int(np.argmin(width))}")
    return Domain(tuple(lo - padding * width), tuple(hi + padding * width))


def uniform_knots(interval: tuple[float, float], n_intervals: int) -> np.ndarray:
    """``n_intervals + 1`` equally spaced knots covering ``interval``."""
    if n_intervals < 1:
        raise ValueError("n_intervals must be at least 1")
    lo, hi = interval
    return np.linspace(lo, hi, n_intervals + 1)


@dataclass(frozen=True, eq=False)
class BasisSet1D:
    """A one-dimensional basis on ``[knots[0], knots[-1]]``.

    For ``bspline`` and ``pwpoly`` the knots are the distinct breakpoints,
    endpoints included; the clamped B-spline knot vector repeats each endpoint
    ``degree + 1`` times.  ``fourier`` uses ``harmonics`` sine/cosine pairs.
    With ``clamp`` set, points outside the interval are evaluated at the
    nearest endpoint; otherwise they get all-zero rows.
    """

    family: str
    knots: np.ndarray
    degree: int = 2
    harmonics: int = 0
    clamp: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        knots = np.array(self.knots, dtype=float).ravel()
        if knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing with at least two entries")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])

    @property
    def size(self) -> int:
        cells = self.knots.size - 1
        if self.family == "pwpoly":
            return cells * (self.degree + 1)
        if self.family == "bspline":
            return cells + self.degree
        return 1 + 2 * self.harmonics

    def full_knot_vector(self) -> np.ndarray:
        """Clamped knot vector with repeated endpoints (B-spline family)."""
        p = self.degree
        return np.concatenate([[self.lo] * p, self.knots, [self.hi] * p])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        inside = (x >= self.lo) & (x <= self.hi)
        xc = np.clip(x, self.lo, self.hi)
        if self.family == "bspline":
            out = _bspline_values(self.full_knot_vector(), self.degree, xc)
        elif self.family == "pwpoly":
            out = _pwpoly_values(self.knots, self.degree, xc)
        else:
            out = _fourier_values(self.lo, self.hi, self.harmonics, xc)
        if not self.clamp:
            out[~inside] = 0.0
        return out

    def describe(self) -> dict:
        return {"family": self.family, "interval": [self.lo, self.hi], "knots": self.knots.tolist(),
                "degree": self.degree, "harmonics": self.harmonics, "clamp": self.clamp}

    @classmethod
    def from_description(cls, desc: dict) -> "BasisSet1D":
        return cls(desc["family"], desc["knots"], int(desc["degree"]), int(desc.get("harmonics", 0)),
                   bool(desc.get("clamp", True)))


def eval_basis_1d(b: BasisSet1D, x) -> np.ndarray:
    """Values of every basis function at ``x``; shape ``(n1,)`` for a scalar, ``(N, n1)`` otherwise."""
    out = b(x)
    return out[0] if np.ndim(x) == 0 else out


def _bspline_values(U: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    # triangular Cox-de Boor scheme on the nonzero functions of each span
    n = U.size - p - 1
    span = np.clip(np.searchsorted(U, x, side="right") - 1, p, n - 1)
    N = np.zeros((x.size, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((x.size, p + 1))
    right = np.zeros((x.size, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - U[span + 1 - j]
        right[:, j] = U[span + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((x.size, n))
    rows = np.arange(x.size)[:, None]
    out[rows, span[:, None] - p + np.arange(p + 1)] = N
    return out


def _pwpoly_values(knots: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    cells = knots.size - 1
    c = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, cells - 1)
    t = (x - knots[c]) / (knots[c + 1] - knots[c])
    out = np.zeros((x.size, cells * (p + 1)))
    rows = np.arange(x.size)
    for j in range(p + 1):
        out[rows, c * (p + 1) + j] = t ** j
    return out


def _fourier_values(lo: float, hi: float, harmonics: int, x: np.ndarray) -> np.ndarray:
    t = (x - lo) / (hi - lo)
    cols = [np.ones_like(t)]
    for h in range(1, harmonics + 1):
        cols.append(np.sin(2 * np.pi * h * t))
        cols.append(np.cos(2 * np.pi * h * t))
    return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class TensorBasis:
    bases: tuple[BasisSet1D, ...]

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        if not self.bases:
            raise ValueError("a tensor basis needs at least one dimension")

    @property
    def d(self) -> int:
        return len(self.bases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.bases)

    @property
    def n(self) -> int:
        return int(np.prod(self.sizes))

    def multi_index(self, i: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(i, self.sizes))

    def flat_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.sizes))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        out = self.bases[0](X[:, 0])
        for k in range(1, self.d):
            Bk = self.bases[k](X[:, k])
            out = (out[:, :, None] * Bk[:, None, :]).reshape(X.shape[0], -1)
        return out

    def describe(self) -> dict:
        return {"sizes": list(self.sizes), "dimensions": [b.describe() for b in self.bases]}

    @classmethod
    def from_description(cls, desc: dict) -> "TensorBasis":
        tb = cls(tuple(BasisSet1D.from_description(b) for b in desc["dimensions"]))
        if list(tb.sizes) != [int(s) for s in desc.get("sizes", tb.sizes)]:
            raise ValueError("stored tensor sizes do not match the basis descriptors")
        return tb


def eval_tensor(tb: TensorBasis, x) -> np.ndarray:
    """Values of all ``n`` tensor basis functions at a state (or a batch of states)."""
    x = np.asarray(x, dtype=float)
    out = tb(x)
    return out[0] if x.ndim <= 1 and x.size == tb.d else out


def per_dimension_size(n: int, d: int) -> int:
    n1 = int(round(n ** (1.0 / d)))
    for cand in (n1 - 1, n1, n1 + 1):
        if cand > 0 and cand ** d == n:
            return cand
    raise ValueError(f"basis size {n} is not a perfect {d}-th power")


def make_basis_1d(interval: tuple[float, float], family: str, size: int, degree: int = 2,
                  clamp: bool = True) -> BasisSet1D:
    """1D basis of the requested family with exactly ``size`` functions on uniform knots."""
    if family == "bspline":
        interior = size - degree - 1
        if interior < 0:
            raise ValueError(f"a degree-{degree} clamped B-spline needs at least {degree + 1} functions")
        return BasisSet1D(family, uniform_knots(interval, interior + 1), degree, clamp=clamp)
    if family == "pwpoly":
        if size % (degree + 1):
            raise ValueError(f"piecewise-polynomial size {size} is not a multiple of {degree + 1}")
        return BasisSet1D(family, uniform_knots(interval, size // (degree + 1)), degree, clamp=clamp)
    if family == "fourier":
        if size % 2 == 0:
            raise ValueError("a Fourier basis has an odd number of functions")
        return BasisSet1D(family, np.asarray(interval, dtype=float), degree, harmonics=(size - 1) // 2,
                          clamp=clamp)
    raise ValueError(f"unknown basis family {family!r}")


def make_tensor_basis(domain: Domain, family: str, n: int, degree: int = 2, clamp: bool = True) -> TensorBasis:
    """Tensor basis with ``n`` functions in total, the same family in every dimension."""
    n1 = per_dimension_size(n, domain.d)
    return TensorBasis(tuple(make_basis_1d(domain.interval(k), family, n1, degree, clamp)
                             for k in range(domain.d)))
