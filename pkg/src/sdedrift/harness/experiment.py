"""Build model objects from a config and run the simulate-fit-evaluate protocol."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..basis import build_domain, make_tensor_basis
from ..dynamics import (DiagonalConstant, DiagonalFunction, FullConstant, FullFunction, PointsInit,
                        ScalarConstant, TimeGrid, UniformInit, quadratic_variation_sigma, simulate_ensemble)
from ..errors import SdeDriftError
from ..estimator import OptimizerConfig, fit_basis_drift, fit_general
from ..metrics import central_range, evaluate, l2_rho_error, occupation_sample
from ..mlp import MlpDrift, fit_mlp
from .config import ExperimentConfig
from .expression import DriftExpression, ScalarExpression
from .persistence import _jsonable, save_ensemble, save_model, write_histogram, write_overlay

log = logging.getLogger(__name__)


class StageError(SdeDriftError):
    """Wraps a failure with the experiment stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def make_drift(cfg: ExperimentConfig) -> DriftExpression:
    if cfg.drift.preset is not None:
        from .presets import preset_expressions

        return DriftExpression(preset_expressions(cfg.drift.preset), cfg.d)
    return DriftExpression(cfg.drift.expressions, cfg.d)


def make_covariance(cfg: ExperimentConfig):
    c = cfg.covariance
    if c.kind == "scalar":
        return ScalarConstant(c.variance, cfg.d)
    if c.kind == "diagonal":
        if c.variances is not None:
            if len(c.variances) != cfg.d:
                raise ValueError(f"covariance.variances needs {cfg.d} entries")
            return DiagonalConstant(c.variances)
        return DiagonalFunction([ScalarExpression(e, cfg.d) for e in c.expressions])
    if c.matrix is not None:
        return FullConstant(c.matrix)
    entries = [[ScalarExpression(e, cfg.d) for e in row] for row in c.expressions]

    def D(X):
        return np.stack([np.stack([g(X) for g in row], axis=-1) for row in entries], axis=-2)

    return FullFunction(D, cfg.d)


def make_init(cfg: ExperimentConfig):
    if cfg.initial.kind == "points":
        return PointsInit(cfg.initial.points)
    return UniformInit(cfg.initial.low, cfg.initial.high)


def make_grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid.uniform(cfg.T, cfg.dt)


def simulate(cfg: ExperimentConfig):
    return simulate_ensemble(make_drift(cfg), make_covariance(cfg), make_grid(cfg), cfg.M, make_init(cfg),
                             cfg.seed, record_noise=True, workers=cfg.workers)


def fit(cfg: ExperimentConfig, ens):
    """Fit the drift model selected by ``cfg.fit_method`` to ``ens``."""
    cov = make_covariance(cfg)
    method = cfg.fit_method
    f = cfg.fit
    if method == "mlp":
        spec = cfg.mlp
        arch = MlpDrift([cfg.d, *spec.hidden, cfg.d], spec.activation, seed=f.seed, init=spec.init)
        opt = OptimizerConfig("adam", f.step_size or 1e-3, f.iterations if f.iterations is not None else 200,
                              f.tolerance, f.seed, f.batch_size, schedule=f.schedule)
        return fit_mlp(ens, cov, arch, opt)
    tb = make_tensor_basis(build_domain(ens, cfg.basis.padding), cfg.basis.family, cfg.basis.size,
                           cfg.basis.degree, cfg.basis.clamp)
    if method == "closed-form":
        return fit_basis_drift(ens, tb, cov, f.ridge, cfg.workers)
    opt = OptimizerConfig(method, f.step_size, f.iterations if f.iterations is not None else 10000,
                          f.tolerance, f.seed, f.batch_size, schedule=f.schedule,
                          precondition=f.precondition, accelerate=f.accelerate)
    return fit_general(ens, tb, cov, opt, cfg.workers)


def score(cfg: ExperimentConfig, ens, model, reference=None, bands=None):
    """Metric report (as a dict) plus the replayed ensemble."""
    f_true = make_drift(cfg)
    report, ens_hat = evaluate(f_true, model, ens, cfg.snapshots, cfg.workers)
    out = {"metrics": report.as_dict()}
    occ = occupation_sample(ens)
    if isinstance(model, MlpDrift):
        out["metrics"]["relative_l2_rho_central"] = l2_rho_error(f_true, model, central_range(occ, 0.9))
    out["noise_level_qv"] = quadratic_variation_sigma(ens)
    if reference:
        out["reference"] = _jsonable(reference)
    if bands:
        out["bands"] = check_bands(out["metrics"], bands)
    return out, ens_hat


def check_bands(metrics: dict, bands: dict) -> dict:
    checks = {}
    for key, limit in bands.items():
        if key == "wasserstein":
            for w in metrics["wasserstein"]:
                checks[f"wasserstein_t={w['t']:g}"] = _check(w["distance"], limit)
        elif key == "trajectory_mean":
            checks[key] = _check(metrics["relative_trajectory_error"]["mean"], limit)
        else:
            checks[key] = _check(metrics[key], limit)
    return checks


def _check(value, limit):
    return {"value": value, "limit": limit, "pass": bool(value <= limit)}


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (SdeDriftError, ArithmeticError, ValueError) as exc:
        raise StageError(name, exc) from exc


def run_experiment(cfg: ExperimentConfig, out_dir=None, reference=None, bands=None) -> dict:
    """Simulate, fit, replay and score; write data, model, report and plot files to ``out_dir``."""
    log.info("simulating %d trajectories (d=%d)", cfg.M, cfg.d)
    ens = _stage("simulate", simulate, cfg)
    log.info("fitting with %s", cfg.fit_method)
    model = _stage("fit", fit, cfg, ens)
    log.info("evaluating")
    result, ens_hat = _stage("evaluate", score, cfg, ens, model, reference, bands)
    config = cfg.to_dict()
    # the worker count never changes results, so it stays out of the report
    config.pop("workers", None)
    report = {"name": cfg.name, "config": config, **result, "fit": _jsonable(model.report)}
    out_dir = out_dir if out_dir is not None else cfg.output.dir
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.output.save_data:
            save_ensemble(ens, out / "trajectories.csv")
        save_model(model, out / "model.json")
        write_histogram(ens, out / "histogram.csv", cfg.output.histogram_bins)
        write_overlay(ens, ens_hat, out / "overlay.csv", cfg.output.overlay_trajectories)
        write_report(report, out / "report.json")
    return report


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(report), indent=1, sort_keys=True) + "\n")
