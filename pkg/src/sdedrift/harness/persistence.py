"""Trajectory CSV files, JSON model files and plot-data emission."""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from ..basis import TensorBasis
from ..dynamics import Ensemble, TimeGrid
from ..errors import FormatError, VersionMismatch
from ..estimator import BasisDrift
from ..mlp import MlpDrift

FORMAT_VERSION = 1
_FMT = "%.17g"


def _header(d: int, noise: bool) -> str:
    cols = ["m", "l", "t"] + [f"x{k + 1}" for k in range(d)]
    if noise:
        cols += [f"dw{k + 1}" for k in range(d)]
    return ",".join(cols)


def save_ensemble(ens: Ensemble, path) -> None:
    """Write one row per ``(m, l)``; the final row of each trajectory leaves ``dw`` empty."""
    M, L, d = ens.states.shape
    has_noise = ens.noise is not None
    l_col = np.arange(L)
    with open(path, "w", newline="") as fh:
        fh.write(_header(d, has_noise) + "\n")
        for m in range(M):
            cols = [np.full(L, m), l_col, ens.grid.t, ens.states[m]]
            if has_noise:
                dw = np.full((L, d), np.nan)
                dw[:-1] = ens.noise[m]
                cols.append(dw)
            block = np.column_stack(cols)
            buf = io.StringIO()
            np.savetxt(buf, block, fmt=["%d", "%d"] + [_FMT] * (block.shape[1] - 2), delimiter=",")
            # states are always finite, so nan only marks the missing final increment
            fh.write(buf.getvalue().replace("nan", ""))


def load_ensemble(path, d: int | None = None) -> Ensemble:
    with open(path) as fh:
        header = fh.readline().strip()
        names = header.split(",")
        if names[:3] != ["m", "l", "t"]:
            raise FormatError(f"{path}:1: header must start with m,l,t")
        xs = [c for c in names[3:] if c.startswith("x")]
        dws = [c for c in names[3:] if c.startswith("dw")]
        dim = len(xs)
        if dim == 0 or xs != [f"x{k + 1}" for k in range(dim)] or dws not in ([], [f"dw{k + 1}" for k in range(dim)]) \
                or len(names) != 3 + len(xs) + len(dws):
            raise FormatError(f"{path}:1: malformed header {header!r}")
        if d is not None and dim != d:
            raise FormatError(f"{path}:1: file has dimension {dim}, expected {d}")
        has_noise = bool(dws)
        ncol = len(names)
        rows, linenos = [], []
        prev = None
        L = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != ncol:
                raise FormatError(f"{path}:{lineno}: expected {ncol} fields, got {len(parts)}")
            try:
                m, l = int(parts[0]), int(parts[1])
                rows.append([float(p) if p != "" else np.nan for p in parts[2:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if prev is None:
                ok = (m, l) == (0, 0)
            elif m == prev[0]:
                ok = l == prev[1] + 1 and (L is None or l < L)
            else:
                ok = m == prev[0] + 1 and l == 0 and (L is None or prev[1] + 1 == L)
                L = prev[1] + 1 if L is None else L
            if not ok:
                raise FormatError(f"{path}:{lineno}: row (m={m}, l={l}) is out of order")
            prev = (m, l)
            linenos.append(lineno)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    L = prev[1] + 1 if L is None else L
    if prev[1] + 1 != L:
        raise FormatError(f"{path}:{linenos[-1]}: last trajectory has {prev[1] + 1} rows, expected {L}")
    M = prev[0] + 1
    data = np.asarray(rows).reshape(M, L, -1)
    t = data[0, :, 0]
    bad = np.nonzero(data[:, :, 0].ravel() != np.tile(t, M))[0]
    if bad.size:
        raise FormatError(f"{path}:{linenos[bad[0]]}: time differs from the first trajectory's grid")
    states = data[:, :, 1:1 + dim]
    if not np.all(np.isfinite(states)):
        raise FormatError(f"{path}: missing or non-finite state values")
    noise = None
    if has_noise:
        dw = data[:, :, 1 + dim:]
        if not np.all(np.isnan(dw[:, -1])) or not np.all(np.isfinite(dw[:, :-1])):
            raise FormatError(f"{path}: noise increments must be present on every row but the last")
        noise = dw[:, :-1]
    try:
        grid = TimeGrid(t)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return Ensemble(grid, states, noise)


def model_to_dict(model) -> dict:
    if isinstance(model, BasisDrift):
        return {"format_version": FORMAT_VERSION, "kind": "basis", "basis": model.basis.describe(),
                "coefficients": model.coef.tolist(), "report": _jsonable(model.report)}
    if isinstance(model, MlpDrift):
        return {"format_version": FORMAT_VERSION, "kind": "mlp", "mlp": model.describe(),
                "weights": model.flat().tolist(), "report": _jsonable(model.report)}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def _field(data, key, where="model"):
    if key not in data:
        raise FormatError(f"{where}: missing field {key!r}")
    return data[key]


def model_from_dict(data: dict):
    if not isinstance(data, dict):
        raise FormatError("model: top level must be an object")
    version = _field(data, "format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model: format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    kind = _field(data, "kind")
    report = data.get("report", {})
    if kind == "basis":
        try:
            tb = TensorBasis.from_description(_field(data, "basis"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"model: invalid field 'basis': {exc}") from None
        try:
            coef = np.asarray(_field(data, "coefficients"), dtype=float)
            return BasisDrift(tb, coef.reshape(tb.n, tb.d), report)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"model: invalid field 'coefficients': {exc}") from None
    if kind == "mlp":
        desc = _field(data, "mlp")
        try:
            return MlpDrift(desc["widths"], desc["activation"], np.asarray(_field(data, "weights"), dtype=float),
                            desc.get("bias", True), desc.get("shift"), desc.get("scale"), report=report)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"model: invalid field 'mlp' or 'weights': {exc}") from None
    raise FormatError(f"model: invalid field 'kind': {kind!r}")


def load_model(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return model_from_dict(data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def density_histogram(ens: Ensemble, bins: int = 50) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-dimension histogram of all pooled states: ``[(edges, counts), ...]``."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    X = ens.pooled_states()
    out = []
    for k in range(ens.d):
        counts, edges = np.histogram(X[:, k], bins=bins)
        out.append((edges, counts))
    return out


def write_histogram(ens: Ensemble, path, bins: int = 50) -> None:
    with open(path, "w") as fh:
        fh.write("dim,left,right,count\n")
        for k, (edges, counts) in enumerate(density_histogram(ens, bins)):
            for j, c in enumerate(counts):
                fh.write(f"{k + 1},{edges[j]:.17g},{edges[j + 1]:.17g},{int(c)}\n")


def write_overlay(ens: Ensemble, ens_hat: Ensemble, path, count: int = 5) -> None:
    """True and replayed paths of the first ``count`` trajectories, for side-by-side plots."""
    d = ens.d
    with open(path, "w") as fh:
        fh.write(",".join(["m", "l", "t"] + [f"x{k + 1}" for k in range(d)]
                          + [f"xhat{k + 1}" for k in range(d)]) + "\n")
        for m in range(min(count, ens.M)):
            block = np.column_stack([np.full(ens.L, m), np.arange(ens.L), ens.grid.t,
                                     ens.states[m], ens_hat.states[m]])
            np.savetxt(fh, block, fmt=["%d", "%d"] + [_FMT] * (block.shape[1] - 2), delimiter=",")
