"""Euler-Maruyama simulation of dx = f(x) dt + dw with state-dependent noise.

Drifts are plain callables mapping an ``(N, d)`` array of states to an
``(N, d)`` array of drift vectors.  Covariance models describe the Brownian
covariance ``D(x)`` per unit time and expose its Cholesky factor, which is
what the integrator multiplies onto the raw normal draws.

Ensembles are generated in fixed-size chunks of trajectories.  Every
trajectory draws from its own counter-based substream keyed by
``(seed, m)``, so the output does not depend on how chunks are spread over
worker threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFinite, NotSPD

Drift = Callable[[np.ndarray], np.ndarray]

CHUNK_SIZE = 256
SPD_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def evaluate_drift(f: Drift, X: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on a batch of states and return an ``(N, d)`` array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.asarray(f(X), dtype=float)
    if out.ndim == 0:
        out = np.full(X.shape, float(out))
    elif out.ndim == 1:
        out = out.reshape(X.shape)
    if out.shape != X.shape:
        raise ValueError(f"drift returned shape {out.shape} for states of shape {X.shape}")
    return out


# ---------------------------------------------------------------------------
# Covariance models
# ---------------------------------------------------------------------------

def _cholesky(D: np.ndarray) -> np.ndarray:
    """Batched lower Cholesky factor of ``(..., d, d)`` SPD matrices.

    Raises NotSPD on asymmetry or on a pivot at or below ``SPD_TOL`` times
    the largest diagonal entry.
    """
    D = np.asarray(D, dtype=float)
    d = D.shape[-1]
    scale = np.max(np.abs(np.diagonal(D, axis1=-2, axis2=-1)), axis=-1)
    if not np.all(np.isfinite(D)):
        raise NotSPD("covariance has non-finite entries")
    if np.any(np.abs(D - np.swapaxes(D, -1, -2)) > SPD_TOL * scale[..., None, None]):
        raise NotSPD("covariance is not symmetric")
    C = np.zeros_like(D)
    for j in range(d):
        s = D[..., j, j] - np.sum(C[..., j, :j] ** 2, axis=-1)
        if np.any(s <= SPD_TOL * scale):
            raise NotSPD(f"non-positive pivot in column {j}")
        C[..., j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            C[..., i, j] = (D[..., i, j] - np.sum(C[..., i, :j] * C[..., j, :j], axis=-1)) / C[..., j, j]
    return C


class CovarianceModel:
    """Noise covariance ``D(x)``; subclasses fill in :meth:`matrix`."""

    d: int
    diagonal: bool = False
    constant: bool = False

    def matrix(self, X: np.ndarray) -> np.ndarray:
        """Covariance at each state, shape ``(N, d, d)``."""
        raise NotImplementedError

    def variances(self, X: np.ndarray) -> np.ndarray:
        """Diagonal of ``D`` at each state, shape ``(N, d)``."""
        return np.diagonal(self.matrix(X), axis1=-2, axis2=-1).copy()

    def factor(self, X: np.ndarray) -> np.ndarray:
        return _cholesky(self.matrix(X))

    def precision(self, X: np.ndarray) -> np.ndarray:
        """``D(x)^{-1}`` at each state, shape ``(N, d, d)``."""
        X = np.atleast_2d(X)
        if self.diagonal:
            v = self.variances(X)
            if np.any(~(v > 0)):
                raise NotSPD("diagonal covariance has non-positive entries")
            out = np.zeros(v.shape + (self.d,))
            idx = np.arange(self.d)
            out[:, idx, idx] = 1.0 / v
            return out
        C = self.factor(X)
        Cinv = np.linalg.inv(C)
        return np.swapaxes(Cinv, -1, -2) @ Cinv

    def scaled(self, c: float) -> "CovarianceModel":
        """The same model with ``D`` multiplied by ``c > 0``."""
        raise NotImplementedError


class ScalarConstant(CovarianceModel):
    diagonal = True
    constant = True

    def __init__(self, variance: float, d: int = 1):
        if not (variance > 0) or not np.isfinite(variance):
            raise NotSPD(f"variance must be positive, got {variance}")
        self.variance = float(variance)
        self.d = int(d)

    def matrix(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self.variance * np.eye(self.d), (n, self.d, self.d)).copy()

    def variances(self, X):
        return np.full((np.atleast_2d(X).shape[0], self.d), self.variance)

    def scaled(self, c):
        return ScalarConstant(self.variance * c, self.d)

    def __repr__(self):
        return f"ScalarConstant(variance={self.variance!r}, d={self.d})"


class DiagonalConstant(CovarianceModel):
    diagonal = True
    constant = True

    def __init__(self, variances: Sequence[float]):
        v = np.asarray(variances, dtype=float).ravel()
        if v.size == 0 or np.any(~(v > 0)) or not np.all(np.isfinite(v)):
            raise NotSPD(f"variances must be positive, got {v}")
        self._v = _frozen(v)
        self.d = v.size

    def matrix(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(np.diag(self._v), (n, self.d, self.d)).copy()

    def variances(self, X):
        return np.broadcast_to(self._v, (np.atleast_2d(X).shape[0], self.d)).copy()

    def scaled(self, c):
        return DiagonalConstant(self._v * c)

    def __repr__(self):
        return f"DiagonalConstant({self._v.tolist()!r})"


class DiagonalFunction(CovarianceModel):
    """Per-coordinate variances ``sigma_k^2(x)`` given as scalar functions of state."""

    diagonal = True

    def __init__(self, funcs: Sequence[Callable[[np.ndarray], np.ndarray]], scale: float = 1.0):
        self.funcs = tuple(funcs)
        self.d = len(self.funcs)
        self.scale = float(scale)

    def variances(self, X):
        X = np.atleast_2d(X)
        cols = [np.broadcast_to(np.asarray(g(X), dtype=float), (X.shape[0],)) for g in self.funcs]
        v = self.scale * np.stack(cols, axis=-1)
        if np.any(~(v > 0)):
            raise NotSPD("state-dependent variance is not positive")
        return v

    def matrix(self, X):
        v = self.variances(X)
        out = np.zeros(v.shape + (self.d,))
        idx = np.arange(self.d)
        out[:, idx, idx] = v
        return out

    def scaled(self, c):
        return DiagonalFunction(self.funcs, self.scale * c)


class FullConstant(CovarianceModel):
    constant = True

    def __init__(self, matrix):
        D = np.atleast_2d(np.asarray(matrix, dtype=float))
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise NotSPD(f"covariance must be square, got shape {D.shape}")
        self._C = _frozen(_cholesky(D))
        self._D = _frozen(D)
        self.d = D.shape[0]
        self.diagonal = bool(np.all(D == np.diag(np.diag(D))))

    def matrix(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self._D, (n, self.d, self.d)).copy()

    def factor(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self._C, (n, self.d, self.d)).copy()

    def scaled(self, c):
        return FullConstant(self._D * c)

    def __repr__(self):
        return f"FullConstant({self._D.tolist()!r})"


class FullFunction(CovarianceModel):
    """SPD-matrix-valued function ``x -> D(x)``; ``func`` maps ``(N, d)`` to ``(N, d, d)``."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], d: int, scale: float = 1.0):
        self.func = func
        self.d = int(d)
        self.scale = float(scale)

    def matrix(self, X):
        X = np.atleast_2d(X)
        D = self.scale * np.asarray(self.func(X), dtype=float)
        return np.broadcast_to(D, (X.shape[0], self.d, self.d)).copy()

    def scaled(self, c):
        return FullFunction(self.func, self.d, self.scale * c)


def covariance_factor(cov: CovarianceModel, x) -> np.ndarray:
    """Lower-triangular ``C`` with ``C @ C.T == D(x)`` for a single state."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return cov.factor(x)[0]


def _apply_factor(C: np.ndarray, z: np.ndarray) -> np.ndarray:
    # explicit row sums keep the arithmetic identical for any batch size
    d = z.shape[-1]
    out = np.empty_like(z)
    for i in range(d):
        acc = C[..., i, 0] * z[..., 0]
        for k in range(1, i + 1):
            acc = acc + C[..., i, k] * z[..., k]
        out[..., i] = acc
    return out


def _advance(x: np.ndarray, fx: np.ndarray, dt: float, increment: np.ndarray) -> np.ndarray:
    return (x + fx * dt) + increment


# ---------------------------------------------------------------------------
# Grids, trajectories and ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    t: np.ndarray

    def __post_init__(self):
        t = _frozen(np.asarray(self.t, dtype=float).ravel())
        if t.size < 2:
            raise ValueError("a time grid needs at least two points")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, T: float, dt: float) -> "TimeGrid":
        if not (T > 0 and dt > 0):
            raise ValueError("T and dt must be positive")
        steps = int(round(T / dt))
        if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"dt={dt} does not divide T={T}")
        return cls(np.linspace(0.0, T, steps + 1))

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def L(self) -> int:
        return self.t.size

    @property
    def steps(self) -> np.ndarray:
        """Step lengths ``t_{l+1} - t_l``."""
        return np.diff(self.t)

    def index_of(self, time: float) -> int:
        """Index of the grid point nearest to ``time``."""
        return int(np.argmin(np.abs(self.t - time)))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash(self.t.tobytes())


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    noise: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``M`` trajectories on a shared grid.

    ``states`` has shape ``(M, L, d)``.  ``noise``, when present, holds the
    realized perturbation ``C(x_l) dw_l`` of every step, shape ``(M, L-1, d)``.
    """

    grid: TimeGrid
    states: np.ndarray
    noise: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        if states.ndim != 3 or states.shape[0] < 1:
            raise ValueError(f"states must have shape (M, L, d), got {states.shape}")
        if states.shape[1] != self.grid.L:
            raise ValueError(f"states have {states.shape[1]} time points, grid has {self.grid.L}")
        object.__setattr__(self, "states", _frozen(states))
        if self.noise is not None:
            noise = np.asarray(self.noise, dtype=float)
            if noise.ndim == 2:
                noise = noise[:, :, None]
            expected = (states.shape[0], states.shape[1] - 1, states.shape[2])
            if noise.shape != expected:
                raise ValueError(f"noise must have shape {expected}, got {noise.shape}")
            object.__setattr__(self, "noise", _frozen(noise))

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def L(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def T(self) -> float:
        return self.grid.T

    def trajectory(self, m: int) -> Trajectory:
        noise = None if self.noise is None else self.noise[m]
        return Trajectory(self.grid, self.states[m], noise)

    def pooled_states(self) -> np.ndarray:
        """All observed states of all trajectories, shape ``(M * L, d)``."""
        return self.states.reshape(-1, self.d)

    def snapshot(self, time: float) -> np.ndarray:
        return self.states[:, self.grid.index_of(time), :]

    def with_noise(self, noise) -> "Ensemble":
        return Ensemble(self.grid, self.states, noise, self.seed)


# ---------------------------------------------------------------------------
# Initial distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformInit:
    """Independent ``Uniform(low, high)`` per component."""

    low: float | Sequence[float]
    high: float | Sequence[float]

    def sample(self, rng: np.random.Generator, m: int, d: int) -> np.ndarray:
        lo = np.broadcast_to(np.asarray(self.low, dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(self.high, dtype=float), (d,))
        return lo + (hi - lo) * rng.random(d)


@dataclass(frozen=True)
class PointsInit:
    """Fixed initial states, cycled over trajectories."""

    points: Sequence[Sequence[float]] = field(default_factory=list)

    def sample(self, rng: np.random.Generator, m: int, d: int) -> np.ndarray:
        pts = np.asarray(self.points, dtype=float).reshape(-1, d)
        return pts[m % pts.shape[0]].copy()


def trajectory_rng(seed: int, m: int) -> np.random.Generator:
    """Counter-based substream for trajectory ``m``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(m),))))


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def em_step(x, f: Drift, cov: CovarianceModel, dt: float, dw) -> np.ndarray:
    """One Euler-Maruyama step ``x + f(x) dt + C(x) dw``.

    ``dw`` is a standard normal draw already scaled by ``sqrt(dt)``.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    dw = np.asarray(dw, dtype=float).reshape(1, -1)
    fx = evaluate_drift(f, x)
    out = _advance(x, fx, dt, _apply_factor(cov.factor(x), dw))
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"Euler-Maruyama step is not finite at x={x[0].tolist()}")
    return out[0]


def _integrate_chunk(f, x0, steps, increments=None, cov=None, normals=None, m0=0):
    """Integrate a block of trajectories; returns states and realized increments.

    Either ``increments`` (replay) or ``cov`` with scaled ``normals`` is given.
    """
    n, d = x0.shape
    L = steps.size + 1
    states = np.empty((n, L, d))
    states[:, 0] = x0
    realized = np.empty((n, L - 1, d)) if increments is None else increments
    const_factor = cov.factor(x0[:1]) if cov is not None and cov.constant else None
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(L - 1):
            fx = evaluate_drift(f, x)
            if increments is None:
                C = const_factor if const_factor is not None else cov.factor(x)
                realized[:, l] = _apply_factor(C, normals[:, l])
            x = _advance(x, fx, steps[l], realized[:, l])
            if not np.all(np.isfinite(x)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
                raise NonFinite(f"trajectory {m0 + bad} is not finite after step {l}")
            states[:, l + 1] = x
    return states, realized


def _run_chunks(job, M, workers):
    starts = list(range(0, M, CHUNK_SIZE))
    if workers is None or workers <= 1 or len(starts) == 1:
        return [job(s) for s in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, starts))


def simulate_ensemble(f: Drift, cov: CovarianceModel, grid: TimeGrid, M: int, init, seed: int,
                      record_noise: bool = True, workers: int = 1) -> Ensemble:
    """Simulate ``M`` Euler-Maruyama trajectories of ``dx = f(x) dt + dw``.

    Trajectory ``m`` first draws its initial state and then ``L - 1`` blocks of
    ``d`` standard normals from its own substream, so results are a pure
    function of the arguments and independent of ``workers``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    d = cov.d
    steps = grid.steps
    sqrt_dt = np.sqrt(steps)[:, None]

    def job(start):
        stop = min(start + CHUNK_SIZE, M)
        x0 = np.empty((stop - start, d))
        normals = np.empty((stop - start, steps.size, d))
        for j, m in enumerate(range(start, stop)):
            rng = trajectory_rng(seed, m)
            x0[j] = init.sample(rng, m, d)
            normals[j] = rng.standard_normal((steps.size, d)) * sqrt_dt
        return _integrate_chunk(f, x0, steps, cov=cov, normals=normals, m0=start)

    parts = _run_chunks(job, M, workers)
    states = np.concatenate([p[0] for p in parts])
    noise = np.concatenate([p[1] for p in parts]) if record_noise else None
    return Ensemble(grid, states, noise, seed)


def replay(f: Drift, ens: Ensemble, workers: int = 1) -> Ensemble:
    """Re-integrate ``f`` from the ensemble's initial states using its recorded increments."""
    steps = ens.grid.steps

    def job(start):
        stop = min(start + CHUNK_SIZE, ens.M)
        return _integrate_chunk(f, ens.states[start:stop, 0].copy(), steps,
                                increments=ens.noise[start:stop], m0=start)

    parts = _run_chunks(job, ens.M, workers)
    return Ensemble(ens.grid, np.concatenate([p[0] for p in parts]), ens.noise, ens.seed)


def quadratic_variation_sigma(ens: Ensemble) -> float:
    """Constant noise level from the realized quadratic variation.

    ``sigma^2 = sum ||x_{l+1} - x_l||^2 / (M T d)``.
    """
    inc = np.diff(ens.states, axis=1)
    qv = float(np.sum(inc * inc)) / (ens.M * ens.T * ens.d)
    return float(np.sqrt(qv))
