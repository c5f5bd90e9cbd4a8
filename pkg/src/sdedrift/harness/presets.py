"""Named experiment presets with reference values and desk-scale bands.

Every preset uses T = 1, dt = 1e-3, initial states uniform on [0, 10] per
component and M = 10000 trajectories; ``reproduce --scale`` lowers M.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import FormatError
from .config import BasisSpec, CovarianceSpec, DriftSpec, ExperimentConfig, FitSpec, MlpSpec

SNAPSHOTS = [0.25, 0.5, 1.0]


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    config: ExperimentConfig
    # values reported at M = 10000
    reference: dict = field(default_factory=dict)
    # upper limits checked at desk scale (M = 2000)
    bands: dict = field(default_factory=dict)


def _config(name, d, exprs, cov, basis=None, mlp=None, fit=None):
    return ExperimentConfig(name=name, seed=2024, d=d, T=1.0, dt=0.001, M=10000, snapshots=list(SNAPSHOTS),
                            drift=DriftSpec(expressions=list(exprs)), covariance=cov,
                            basis=basis or BasisSpec(), mlp=mlp, fit=fit or FitSpec())


_D1 = CovarianceSpec(kind="scalar", variance=0.6)
_D2 = CovarianceSpec(kind="diagonal", variances=[0.6, 0.8])

PRESETS = {
    p.name: p for p in [
        Preset(
            "sine-cos-1d",
            "1D drift mixing a linear trend with sine and squared cosine terms",
            _config("sine-cos-1d", 1, ["2 + 0.08*x1 - 0.05*sin(x1) + 0.02*cos(x1)^2"], _D1,
                    BasisSpec("bspline", 8, 2)),
            reference={"relative_l2_rho": 0.007935, "trajectory_mean": 0.0020239, "trajectory_std": 0.002046,
                       "wasserstein": {0.25: 0.0291, 0.5: 0.0319, 1.0: 0.0403}},
            bands={"relative_l2_rho": 0.05, "trajectory_mean": 0.01, "wasserstein": 0.10},
        ),
        Preset(
            "linear-1d-mlp",
            "1D linear drift 0.08 x learned by a tanh network",
            _config("linear-1d-mlp", 1, ["0.08*x1"], _D1, mlp=MlpSpec([64, 64], "tanh"),
                    fit=FitSpec(method="mlp", step_size=1e-3, iterations=10, batch_size=1024,
                                schedule="cosine")),
            reference={},
            bands={"relative_l2_rho_central": 0.2},
        ),
        Preset(
            "poly-1d",
            "1D quadratic drift",
            _config("poly-1d", 1, ["2 + 0.08*x1 - 0.01*x1^2"], _D1, BasisSpec("bspline", 10, 2)),
            reference={"relative_l2_rho": 0.0087649, "trajectory_mean": 0.00199719, "trajectory_std": 0.00682781,
                       "wasserstein": {0.25: 0.0153, 0.5: 0.0154, 1.0: 0.0278}},
            bands={"relative_l2_rho": 0.05, "wasserstein": 0.08},
        ),
        Preset(
            "poly-2d",
            "2D polynomial drift with a quadratic coupling",
            _config("poly-2d", 2, ["0.4*x1 - 0.1*x1*x2", "-0.8*x2 + 0.2*x1^2"], _D2, BasisSpec("bspline", 36, 2)),
            reference={"relative_l2_rho": 0.02118531, "trajectory_mean": 0.00306613,
                       "trajectory_std": 0.00375144, "wasserstein": {0.25: 0.0891, 0.5: 0.0872, 1.0: 0.0853}},
            bands={"relative_l2_rho": 0.08, "trajectory_mean": 0.02, "wasserstein": 0.3},
        ),
        Preset(
            "trig-2d",
            "2D trigonometric drift",
            _config("trig-2d", 2, ["2*sin(0.2*x1) + 1.5*cos(0.1*x2)", "3*sin(0.3*x1)*cos(0.1*x2)"], _D2,
                    BasisSpec("bspline", 36, 2)),
            reference={"relative_l2_rho": 0.02734505, "trajectory_mean": 0.0041613, "trajectory_std": 0.0079917,
                       "wasserstein": {0.25: 0.1011, 0.5: 0.1119, 1.0: 0.1293}},
            bands={"relative_l2_rho": 0.08, "trajectory_mean": 0.02, "wasserstein": 0.3},
        ),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise FormatError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset_expressions(name: str) -> list[str]:
    return list(get_preset(name).config.drift.expressions)
