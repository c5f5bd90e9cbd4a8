"""Experiment configuration: TOML files mapped onto nested dataclasses.

Every field of :class:`ExperimentConfig` has a key of the same name; nested
specs are TOML tables.  Unknown keys are rejected.  See ``docs/config.md``
for the schema.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..errors import FormatError


def _from_dict(cls, data, where: str):
    if not isinstance(data, dict):
        raise FormatError(f"{where} must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise FormatError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _from_dict(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def _to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = _to_dict(v)
        elif v is not None:
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass
class InitialSpec:
    kind: str = "uniform"
    low: float | list = 0.0
    high: float | list = 10.0
    points: list | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "points"):
            raise ValueError(f"initial.kind must be 'uniform' or 'points', got {self.kind!r}")
        if self.kind == "points" and not self.points:
            raise ValueError("initial.points is required for kind = 'points'")


@dataclass
class DriftSpec:
    preset: str | None = None
    expressions: list | None = None

    def __post_init__(self):
        if (self.preset is None) == (self.expressions is None):
            raise ValueError("give exactly one of drift.preset or drift.expressions")


@dataclass
class CovarianceSpec:
    kind: str = "scalar"
    variance: float | None = None
    variances: list | None = None
    matrix: list | None = None
    expressions: list | None = None

    def __post_init__(self):
        if self.kind not in ("scalar", "diagonal", "full"):
            raise ValueError(f"covariance.kind must be scalar, diagonal or full, got {self.kind!r}")
        if self.kind == "scalar" and self.variance is None:
            raise ValueError("covariance.variance is required for kind = 'scalar'")
        if self.kind == "diagonal" and (self.variances is None) == (self.expressions is None):
            raise ValueError("diagonal covariance needs exactly one of variances or expressions")
        if self.kind == "full" and (self.matrix is None) == (self.expressions is None):
            raise ValueError("full covariance needs exactly one of matrix or expressions")


@dataclass
class BasisSpec:
    family: str = "bspline"
    size: int = 8
    degree: int = 2
    padding: float = 0.0
    clamp: bool = True

    def __post_init__(self):
        if self.family not in ("bspline", "pwpoly", "fourier"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.size < 1 or self.degree < 0 or self.padding < 0:
            raise ValueError("basis size must be positive, degree and padding nonnegative")


@dataclass
class MlpSpec:
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    init: str = "uniform"


@dataclass
class FitSpec:
    method: str | None = None
    ridge: float = 0.0
    step_size: float | None = None
    iterations: int | None = None
    tolerance: float = 0.0
    batch_size: int = 1024
    seed: int = 0
    schedule: str = "constant"
    precondition: bool = True
    accelerate: bool = True

    def __post_init__(self):
        if self.method not in (None, "closed-form", "gd", "adam", "mlp"):
            raise ValueError(f"unknown fit.method {self.method!r}")
        if self.ridge < 0:
            raise ValueError("fit.ridge must be nonnegative")


@dataclass
class OutputSpec:
    dir: str | None = None
    save_data: bool = True
    overlay_trajectories: int = 5
    histogram_bins: int = 50


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    d: int = 1
    T: float = 1.0
    dt: float = 0.001
    M: int = 10000
    workers: int = 1
    snapshots: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    initial: InitialSpec = field(default_factory=InitialSpec)
    drift: DriftSpec = field(default_factory=lambda: DriftSpec(expressions=["0"]))
    covariance: CovarianceSpec = field(default_factory=lambda: CovarianceSpec(variance=0.6))
    basis: BasisSpec = field(default_factory=BasisSpec)
    mlp: MlpSpec | None = None
    fit: FitSpec = field(default_factory=FitSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9:
            raise ValueError(f"dt = {self.dt} does not divide T = {self.T}")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if any(not 0 <= t <= self.T for t in self.snapshots):
            raise ValueError("snapshot times must lie in [0, T]")
        if self.drift.expressions is not None and len(self.drift.expressions) != self.d:
            raise ValueError(f"drift needs {self.d} expressions")

    @property
    def fit_method(self) -> str:
        if self.fit.method:
            return self.fit.method
        if self.mlp is not None:
            return "mlp"
        return "closed-form" if self.covariance.kind != "full" else "gd"

    def to_dict(self) -> dict:
        return _to_dict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, data, "config")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {
    (ExperimentConfig, "initial"): InitialSpec,
    (ExperimentConfig, "drift"): DriftSpec,
    (ExperimentConfig, "covariance"): CovarianceSpec,
    (ExperimentConfig, "basis"): BasisSpec,
    (ExperimentConfig, "mlp"): MlpSpec,
    (ExperimentConfig, "fit"): FitSpec,
    (ExperimentConfig, "output"): OutputSpec,
}


def load_config(path) -> ExperimentConfig:
    """Read a TOML config; a top-level ``preset`` key starts from that preset's config."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    preset = data.pop("preset", None)
    if preset is None:
        return ExperimentConfig.from_dict(data)
    from .presets import get_preset

    base = get_preset(preset).config.to_dict()
    for key, value in data.items():
        # drift and covariance have mutually exclusive variants; replace them whole
        if isinstance(value, dict) and isinstance(base.get(key), dict) and key not in ("drift", "covariance"):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return ExperimentConfig.from_dict(base)

