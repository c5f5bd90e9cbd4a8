"""Scores for a fitted drift: relative L2(rho) error, paired-noise replay
error and Wasserstein distances between snapshot distributions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dynamics import Ensemble, evaluate_drift, replay
from .errors import MissingNoise, ZeroDenominatorWarning, ZeroTruthNormWarning

N_PROJECTIONS = 64


class TrajectoryError(NamedTuple):
    mean: float
    std: float
    skipped: int = 0


@dataclass
class MetricReport:
    l2_rho: float
    trajectory_mean: float
    trajectory_std: float
    wasserstein: list[tuple[float, float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"relative_l2_rho": self.l2_rho,
                "relative_trajectory_error": {"mean": self.trajectory_mean, "std": self.trajectory_std},
                "wasserstein": [{"t": t, "distance": w} for t, w in self.wasserstein],
                "flags": list(self.flags)}


def occupation_sample(ens: Ensemble) -> np.ndarray:
    """Empirical occupation measure: every state of every trajectory, equally weighted."""
    return ens.pooled_states()


def central_range(occ: np.ndarray, mass: float = 0.9) -> np.ndarray:
    """Pooled states inside the per-dimension central ``mass`` quantile range."""
    occ = np.asarray(occ, dtype=float).reshape(len(occ), -1)
    tail = 0.5 * (1.0 - mass)
    lo, hi = np.quantile(occ, [tail, 1.0 - tail], axis=0)
    keep = np.all((occ >= lo) & (occ <= hi), axis=1)
    return occ[keep]


def l2_rho_error(f_true, f_hat, occ) -> float:
    """Relative ``L2(rho)`` distance between two drifts over pooled states."""
    occ = np.atleast_2d(np.asarray(occ, dtype=float))
    ft = evaluate_drift(f_true, occ)
    diff = ft - evaluate_drift(f_hat, occ)
    num = float(np.sum(diff * diff))
    den = float(np.sum(ft * ft))
    if den == 0.0:
        warnings.warn("true drift vanishes on the sample; returning the absolute error",
                      ZeroTruthNormWarning, stacklevel=2)
        return float(np.sqrt(num / occ.shape[0]))
    return float(np.sqrt(num / den))


def replay_trajectories(f_hat, ens: Ensemble, workers: int = 1) -> Ensemble:
    """Integrate ``f_hat`` from the same initial states under the recorded increments."""
    if ens.noise is None:
        raise MissingNoise("ensemble carries no noise records")
    return replay(f_hat, ens, workers)


def trajectory_error(ens: Ensemble, ens_hat: Ensemble) -> TrajectoryError:
    """Mean and population std over m of ``sum_l |x - x_hat|^2 / sum_l |x|^2``."""
    if ens.states.shape != ens_hat.states.shape or ens.grid != ens_hat.grid:
        raise ValueError("ensembles must share grid, size and dimension")
    diff = ens.states - ens_hat.states
    num = np.sum(diff * diff, axis=(1, 2))
    den = np.sum(ens.states * ens.states, axis=(1, 2))
    ok = den > 0
    skipped = int(np.count_nonzero(~ok))
    if skipped:
        warnings.warn(f"{skipped} trajectories have zero norm and were skipped",
                      ZeroDenominatorWarning, stacklevel=2)
    if not np.any(ok):
        return TrajectoryError(float("nan"), float("nan"), skipped)
    e = num[ok] / den[ok]
    return TrajectoryError(float(np.mean(e)), float(np.std(e)), skipped)


def wasserstein_1d(u, v) -> float:
    """Exact order-1 Wasserstein distance between two 1D empirical distributions."""
    u = np.sort(np.asarray(u, dtype=float).ravel())
    v = np.sort(np.asarray(v, dtype=float).ravel())
    if u.size == v.size:
        return float(np.mean(np.abs(u - v)))
    # unequal sizes: integrate |F_u - F_v| over the merged support
    allv = np.sort(np.concatenate([u, v]))
    deltas = np.diff(allv)
    cu = np.searchsorted(u, allv[:-1], side="right") / u.size
    cv = np.searchsorted(v, allv[:-1], side="right") / v.size
    return float(np.sum(np.abs(cu - cv) * deltas))


def projection_directions(d: int, n: int = N_PROJECTIONS, seed: int = 0) -> np.ndarray:
    """``n`` seeded directions drawn uniformly from the unit sphere in R^d."""
    g = np.random.default_rng(seed).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sliced_wasserstein(u, v, n_projections: int = N_PROJECTIONS, seed: int = 0) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dirs = projection_directions(u.shape[1], n_projections, seed)
    return float(np.mean([wasserstein_1d(u @ w, v @ w) for w in dirs]))


def wasserstein_snapshot(ens: Ensemble, ens_hat: Ensemble, t: float, n_projections: int = N_PROJECTIONS,
                         seed: int = 0) -> float:
    """W1 between the two ensembles' states at the grid point nearest ``t``.

    Exact in 1D; sliced over seeded random projections when ``d >= 2``.
    """
    u, v = ens.snapshot(t), ens_hat.snapshot(t)
    if ens.d == 1:
        return wasserstein_1d(u, v)
    return sliced_wasserstein(u, v, n_projections, seed)


def evaluate(f_true, f_hat, ens: Ensemble, snapshots=(0.25, 0.5, 1.0), workers: int = 1,
             occ=None) -> tuple[MetricReport, Ensemble]:
    """Full metric report for ``f_hat`` and the replayed ensemble it produced."""
    flags = []
    occ = occupation_sample(ens) if occ is None else occ
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        l2 = l2_rho_error(f_true, f_hat, occ) if f_true is not None else float("nan")
        ens_hat = replay_trajectories(f_hat, ens, workers)
        te = trajectory_error(ens, ens_hat)
    flags.extend(type(w.message).__name__ for w in caught)
    ws = [(float(t), wasserstein_snapshot(ens, ens_hat, t)) for t in snapshots]
    return MetricReport(l2, te.mean, te.std, ws, flags), ens_hat
