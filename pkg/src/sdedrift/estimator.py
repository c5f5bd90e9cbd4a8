"""Drift estimation by minimizing the discretized Girsanov trajectory loss.

For a candidate drift ``g`` the empirical loss over an ensemble is::

    1/(T M) * sum_{m,l} [ 1/2 <g(x), D^{-1}(x) g(x)> dt_l - <g(x), D^{-1}(x) dx_l> ]

evaluated at ``x = x_l^m``.  On a linear basis model ``g = sum_i a_i psi_i``
the loss is quadratic in the coefficients.  With diagonal ``D`` it splits
into ``d`` independent normal systems ``A_k alpha_k = b_k``; otherwise the
coupled quadratic is minimized by gradient descent or Adam.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import TensorBasis
from .dynamics import CHUNK_SIZE, CovarianceModel, Ensemble, _run_chunks, evaluate_drift
from .errors import Diverged, SingularSystem

log = logging.getLogger(__name__)


class BasisDrift:
    """Fitted drift ``f(x) = sum_i a_i psi_i(x)``; ``coef`` is the ``n x d`` coefficient matrix."""

    def __init__(self, basis: TensorBasis, coef, report: dict | None = None):
        coef = np.array(coef, dtype=float).reshape(basis.n, basis.d)
        if not np.all(np.isfinite(coef)):
            raise ValueError("coefficients must be finite")
        coef.flags.writeable = False
        self.basis = basis
        self.coef = coef
        self.report = dict(report or {})

    @property
    def d(self) -> int:
        return self.basis.d

    def __call__(self, X):
        Psi = self.basis(X)
        out = np.zeros((Psi.shape[0], self.d))
        # accumulate term by term so results do not depend on batch size
        for i in range(self.basis.n):
            out += Psi[:, i:i + 1] * self.coef[i]
        return out

    def __repr__(self):
        return f"BasisDrift(n={self.basis.n}, d={self.d})"


@dataclass
class NormalSystem:
    """Per-dimension normal equations: ``A`` is ``(d, n, n)``, ``b`` is ``(d, n)``."""

    A: np.ndarray
    b: np.ndarray
    samples: int = 0

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass
class OptimizerConfig:
    """Settings for iterative fits.

    ``step_size=None`` selects ``1/L`` for gradient descent on a basis model,
    with ``L`` the largest Hessian eigenvalue, and ``1e-3`` for Adam.
    ``iterations`` counts full-gradient steps for basis fits and epochs for
    network training.  ``schedule="cosine"`` anneals the network step size
    to zero over the epoch budget.  For gradient descent on basis models,
    ``precondition`` scales the gradient by the inverse of the per-output
    diagonal Hessian blocks and ``accelerate`` adds Nesterov momentum with
    function-value restarts; the default step is then ``1/L`` for the
    preconditioned Hessian.
    """

    method: str = "gd"
    step_size: float | None = None
    iterations: int = 10000
    tolerance: float = 0.0
    seed: int = 0
    batch_size: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    precondition: bool = True
    accelerate: bool = True

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.method not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def iter_samples(ens: Ensemble, start: int, stop: int):
    """States, increments and step lengths of trajectories ``start:stop``, flattened."""
    X = ens.states[start:stop, :-1].reshape(-1, ens.d)
    dX = np.diff(ens.states[start:stop], axis=1).reshape(-1, ens.d)
    dt = np.tile(ens.grid.steps, stop - start)
    return X, dX, dt


def _chunked_sum(ens: Ensemble, fn, workers: int = 1):
    """Sum ``fn(X, dX, dt)`` over fixed trajectory chunks in chunk order."""
    def job(start):
        return fn(*iter_samples(ens, start, min(start + CHUNK_SIZE, ens.M)))

    parts = _run_chunks(job, ens.M, workers)
    total = parts[0]
    for p in parts[1:]:
        total = tuple(a + b for a, b in zip(total, p)) if isinstance(total, tuple) else total + p
    return total


def _weighted(cov: CovarianceModel, X, V):
    """``D^{-1}(x) v`` for each row."""
    if cov.diagonal:
        return V / cov.variances(X)
    return np.einsum("nij,nj->ni", cov.precision(X), V)


def empirical_loss(f, ens: Ensemble, cov: CovarianceModel, workers: int = 1) -> float:
    """Discretized trajectory loss of drift ``f`` on ``ens``."""
    def part(X, dX, dt):
        F = evaluate_drift(f, X)
        WF = _weighted(cov, X, F)
        return float(np.sum(0.5 * np.sum(F * WF, axis=1) * dt - np.sum(WF * dX, axis=1)))

    return _chunked_sum(ens, part, workers) / (ens.T * ens.M)


def assemble_diagonal_system(ens: Ensemble, tb: TensorBasis, cov: CovarianceModel,
                             workers: int = 1) -> NormalSystem:
    if not cov.diagonal:
        raise ValueError("assemble_diagonal_system needs a diagonal covariance")
    d, n = ens.d, tb.n

    def part(X, dX, dt):
        Psi = tb(X)
        v = cov.variances(X)
        A = np.empty((d, n, n))
        b = np.empty((d, n))
        for k in range(d):
            A[k] = Psi.T @ (Psi * (dt / v[:, k])[:, None])
            b[k] = Psi.T @ (dX[:, k] / v[:, k])
        return A, b

    A, b = _chunked_sum(ens, part, workers)
    scale = 1.0 / (ens.T * ens.M)
    A = A * scale
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    return NormalSystem(A, b * scale, ens.M * (ens.L - 1))


def default_ridge(sys: NormalSystem) -> np.ndarray:
    """Fallback ridge ``1e-10 * trace(A_k) / n`` per dimension."""
    return 1e-10 * np.trace(sys.A, axis1=1, axis2=2) / sys.n


def solve_system(sys: NormalSystem, ridge=0.0) -> np.ndarray:
    """Solve ``(A_k + ridge_k I) alpha_k = b_k`` for every k; returns the ``n x d`` coefficients."""
    ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (sys.d,))
    if np.any(ridge < 0):
        raise ValueError("ridge must be nonnegative")
    coef = np.empty((sys.n, sys.d))
    eye = np.eye(sys.n)
    for k in range(sys.d):
        try:
            c = scipy.linalg.cho_factor(sys.A[k] + ridge[k] * eye, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"normal system for dimension {k} is singular") from exc
        coef[:, k] = scipy.linalg.cho_solve(c, sys.b[k])
    if not np.all(np.isfinite(coef)):
        raise SingularSystem("normal system solution is not finite")
    return coef


def fit_basis_drift(ens: Ensemble, tb: TensorBasis, cov: CovarianceModel, ridge: float = 0.0,
                    workers: int = 1) -> BasisDrift:
    """Closed-form fit for diagonal covariance; retries with the default ridge if singular."""
    sys = assemble_diagonal_system(ens, tb, cov, workers)
    try:
        coef = solve_system(sys, ridge)
        used = np.broadcast_to(float(ridge), (sys.d,))
    except SingularSystem:
        if ridge > 0:
            raise
        used = default_ridge(sys)
        log.info("normal system singular; retrying with ridge %s", used)
        coef = solve_system(sys, used)
    return BasisDrift(tb, coef, {"method": "closed-form", "ridge": [float(r) for r in used]})


def loss_gradient_coefficients(coef, ens: Ensemble, tb: TensorBasis, cov: CovarianceModel,
                               workers: int = 1) -> np.ndarray:
    """Gradient of :func:`empirical_loss` with respect to the ``n x d`` coefficients."""
    coef = np.asarray(coef, dtype=float).reshape(tb.n, ens.d)

    def part(X, dX, dt):
        Psi = tb(X)
        R = _weighted(cov, X, (Psi @ coef) * dt[:, None] - dX)
        return Psi.T @ R

    return _chunked_sum(ens, part, workers) / (ens.T * ens.M)


@dataclass
class QuadraticLoss:
    """The loss of a basis model as ``1/2 v^T H v - v^T beta`` in ``v = vec(coef)``.

    ``v`` stacks the coefficient columns, so block ``(k, k')`` of ``H`` couples
    output dimensions ``k`` and ``k'``.
    """

    H: np.ndarray
    beta: np.ndarray
    n: int
    d: int

    def vec(self, coef) -> np.ndarray:
        return np.asarray(coef, dtype=float).reshape(self.n, self.d).T.ravel()

    def unvec(self, v) -> np.ndarray:
        return np.asarray(v).reshape(self.d, self.n).T.copy()

    def value(self, coef) -> float:
        v = self.vec(coef)
        return float(0.5 * v @ self.H @ v - v @ self.beta)

    def gradient(self, coef) -> np.ndarray:
        return self.unvec(self.H @ self.vec(coef) - self.beta)

    def lipschitz(self) -> float:
        return float(np.linalg.eigvalsh(self.H)[-1])


def assemble_quadratic(ens: Ensemble, tb: TensorBasis, cov: CovarianceModel,
                       workers: int = 1) -> QuadraticLoss:
    d, n = ens.d, tb.n

    def part(X, dX, dt):
        Psi = tb(X)
        W = cov.precision(X)
        WdX = np.einsum("nij,nj->ni", W, dX)
        H = np.empty((d * n, d * n))
        for k in range(d):
            for kp in range(d):
                H[k * n:(k + 1) * n, kp * n:(kp + 1) * n] = Psi.T @ (Psi * (W[:, k, kp] * dt)[:, None])
        beta = (Psi.T @ WdX).T.ravel()
        return H, beta

    H, beta = _chunked_sum(ens, part, workers)
    scale = 1.0 / (ens.T * ens.M)
    H = H * scale
    return QuadraticLoss(0.5 * (H + H.T), beta * scale, n, d)


def _adam(beta1, beta2, eps, lr):
    m = v = None
    t = 0

    def step(params, grad):
        nonlocal m, v, t
        if m is None:
            m, v = np.zeros_like(params), np.zeros_like(params)
        t += 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        return params - lr * mhat / (np.sqrt(vhat) + eps)

    return step


def fit_general(ens: Ensemble, tb: TensorBasis, cov: CovarianceModel, opt: OptimizerConfig | None = None,
                workers: int = 1) -> BasisDrift:
    """Minimize the basis-model loss for any SPD covariance with GD or Adam from zero."""
    opt = opt or OptimizerConfig()
    q = assemble_quadratic(ens, tb, cov, workers)
    return minimize_quadratic(q, tb, opt)


def _block_preconditioner(q: QuadraticLoss) -> np.ndarray:
    """Block-diagonal part of ``H`` with a small ridge so every block factors."""
    n = q.n
    P = np.zeros_like(q.H)
    for k in range(q.d):
        block = q.H[k * n:(k + 1) * n, k * n:(k + 1) * n]
        ridge = 1e-10 * np.trace(block) / n
        P[k * n:(k + 1) * n, k * n:(k + 1) * n] = block + (ridge if ridge > 0 else 1.0) * np.eye(n)
    return P


def minimize_quadratic(q: QuadraticLoss, tb: TensorBasis, opt: OptimizerConfig) -> BasisDrift:
    def value(v):
        return float(0.5 * v @ q.H @ v - v @ q.beta)

    v = np.zeros(q.n * q.d)
    y = v
    k = 0
    if opt.method == "gd":
        if opt.precondition:
            P = _block_preconditioner(q)
            c = scipy.linalg.cho_factor(P, lower=True)
            top = scipy.linalg.eigh(q.H, P, eigvals_only=True)[-1]

            def direction(g):
                return scipy.linalg.cho_solve(c, g)
        else:
            top = q.lipschitz()

            def direction(g):
                return g
        lr = opt.step_size if opt.step_size is not None else float(1.0 / top)

        def update(v, g):
            return v - lr * direction(g)
    else:
        lr = opt.step_size if opt.step_size is not None else 1e-3
        update = _adam(opt.beta1, opt.beta2, opt.eps, lr)
    momentum = opt.method == "gd" and opt.accelerate

    loss = 0.0
    converged = False
    it = 0
    for it in range(1, opt.iterations + 1):
        step = update(y, q.H @ y - q.beta)
        new = value(step)
        if not np.isfinite(new):
            raise Diverged(f"loss became non-finite at iteration {it}; reduce the step size")
        if momentum and k > 0 and new > loss:
            # restart: drop the momentum and retry from the last accepted point
            y, k = v, 0
            continue
        if momentum:
            k += 1
            y = step + (k - 1) / (k + 2) * (step - v)
        else:
            y = step
        v = step
        if abs(loss - new) < opt.tolerance:
            loss, converged = new, True
            break
        loss = new
    else:
        it = opt.iterations
    report = {"method": opt.method, "step_size": lr, "accelerated": momentum,
              "preconditioned": opt.method == "gd" and opt.precondition, "iterations": it,
              "loss": loss, "converged": converged}
    return BasisDrift(tb, q.unvec(v), report)
