"""Fully connected drift network trained on the trajectory loss.

The network sees states mapped affinely to ``[-1, 1]`` over the training
domain.  Weights are kept as a list of numpy arrays ``[W1, b1, W2, b2, ...]``
and trained with hand-written backpropagation and Adam on mini-batches of
``(m, l)`` sample pairs.
"""
from __future__ import annotations

import numpy as np

from .dynamics import CovarianceModel, Ensemble
from .errors import Diverged
from .estimator import OptimizerConfig, iter_samples

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(float)),
    "sigmoid": (lambda a: 1.0 / (1.0 + np.exp(-a)), lambda a, h: h * (1.0 - h)),
}


class MlpDrift:
    def __init__(self, widths, activation: str = "tanh", weights=None, bias: bool = True,
                 shift=None, scale=None, seed: int = 0, init: str = "uniform", report: dict | None = None):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or self.widths[0] != self.widths[-1]:
            raise ValueError("widths must start and end with the state dimension")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.bias = bool(bias)
        d = self.widths[0]
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float).reshape(d)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float).reshape(d)
        self.report = dict(report or {})
        if weights is None:
            self.params = self._initial_weights(seed, init)
        elif isinstance(weights, (list, tuple)) and weights and np.ndim(weights[0]) > 0:
            self.params = [np.array(w, dtype=float) for w in weights]
        else:
            self.params = self._unflatten(weights)
        if self.flat().size != self.n_weights:
            raise ValueError(f"expected {self.n_weights} weights, got {self.flat().size}")
        if not np.all(np.isfinite(self.flat())):
            raise ValueError("weights must be finite")

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            out.append((a, b))
            if self.bias:
                out.append((b,))
        return out

    @property
    def n_weights(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))

    def _initial_weights(self, seed, init):
        if init == "zeros":
            return [np.zeros(s) for s in self.shapes]
        rng = np.random.default_rng(seed)
        out = []
        for s in self.shapes:
            if len(s) == 2:
                limit = np.sqrt(6.0 / (s[0] + s[1]))
                out.append(rng.uniform(-limit, limit, size=s))
            else:
                out.append(np.zeros(s))
        return out

    def _unflatten(self, flat):
        flat = np.asarray(flat, dtype=float).ravel()
        out, pos = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(flat[pos:pos + size].reshape(s).copy())
            pos += size
        if pos != flat.size:
            raise ValueError(f"expected {pos} weights, got {flat.size}")
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params]) if self.params else np.zeros(0)

    def with_weights(self, flat) -> "MlpDrift":
        return MlpDrift(self.widths, self.activation, np.asarray(flat, dtype=float), self.bias,
                        self.shift, self.scale, report=self.report)

    def _layers(self):
        step = 2 if self.bias else 1
        for j in range(len(self.widths) - 1):
            W = self.params[step * j]
            b = self.params[step * j + 1] if self.bias else None
            yield W, b

    def forward(self, X):
        act, _ = ACTIVATIONS[self.activation]
        h = (np.asarray(X, dtype=float).reshape(-1, self.d) - self.shift) / self.scale
        cache = [(None, h)]
        layers = list(self._layers())
        for j, (W, b) in enumerate(layers):
            a = h @ W
            if b is not None:
                a = a + b
            h = a if j == len(layers) - 1 else act(a)
            cache.append((a, h))
        return h, cache

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, cache, grad_out) -> np.ndarray:
        """Flat gradient of ``sum(grad_out * output)`` with respect to all weights."""
        _, dact = ACTIVATIONS[self.activation]
        layers = list(self._layers())
        grads = []
        g = grad_out
        for j in range(len(layers) - 1, -1, -1):
            W, b = layers[j]
            a, h = cache[j + 1]
            if j != len(layers) - 1:
                g = g * dact(a, h)
            h_prev = cache[j][1]
            if b is not None:
                grads.append(g.sum(axis=0))
            grads.append(h_prev.T @ g)
            g = g @ W.T
        return np.concatenate([x.ravel() for x in reversed(grads)])

    def describe(self) -> dict:
        return {"widths": list(self.widths), "activation": self.activation, "bias": self.bias,
                "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    def __repr__(self):
        return f"MlpDrift(widths={self.widths}, activation={self.activation!r})"


def _precision_diag(cov, X):
    if not cov.diagonal:
        raise ValueError("network training supports scalar or diagonal covariance only")
    return 1.0 / cov.variances(X)


def _batch_loss_grad(net: MlpDrift, X, dX, dt, w):
    F, cache = net.forward(X)
    loss = float(np.sum(w * (0.5 * F * F * dt[:, None] - F * dX)))
    grad = net.backward(cache, w * (F * dt[:, None] - dX))
    return loss, grad


def mlp_loss_gradient(net: MlpDrift, ens: Ensemble, cov: CovarianceModel):
    """Empirical loss of ``net`` on ``ens`` and its gradient with respect to the flat weights."""
    X, dX, dt = iter_samples(ens, 0, ens.M)
    loss, grad = _batch_loss_grad(net, X, dX, dt, _precision_diag(cov, X))
    norm = ens.T * ens.M
    return loss / norm, grad / norm


def fit_mlp(ens: Ensemble, cov: CovarianceModel, arch: MlpDrift, opt: OptimizerConfig | None = None) -> MlpDrift:
    """Train ``arch`` (used as the initialization) with mini-batch Adam or SGD.

    Inputs are rescaled to ``[-1, 1]`` over the observed range before training.
    ``opt.iterations`` is the number of epochs.
    """
    opt = opt or OptimizerConfig(method="adam", step_size=1e-3, iterations=200)
    X, dX, dt = iter_samples(ens, 0, ens.M)
    w = _precision_diag(cov, X)
    lo, hi = X.min(axis=0), X.max(axis=0)
    shift = 0.5 * (lo + hi)
    scale = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    net = MlpDrift(arch.widths, arch.activation, arch.flat(), arch.bias, shift, scale)

    N = X.shape[0]
    norm = ens.T * ens.M
    lr = opt.step_size if opt.step_size is not None else 1e-3
    params = net.flat()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0
    rng = np.random.default_rng(opt.seed)
    history = []
    prev = None
    total_steps = opt.iterations * -(-N // opt.batch_size)
    epoch = 0
    for epoch in range(1, opt.iterations + 1):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, opt.batch_size):
            idx = np.sort(order[start:start + opt.batch_size])
            loss, grad = _batch_loss_grad(net, X[idx], dX[idx], dt[idx], w[idx])
            total += loss
            grad *= N / (idx.size * norm)
            step_lr = lr
            if opt.schedule == "cosine":
                step_lr = 0.5 * lr * (1.0 + np.cos(np.pi * t / total_steps))
            t += 1
            if opt.method == "adam":
                m = opt.beta1 * m + (1 - opt.beta1) * grad
                v = opt.beta2 * v + (1 - opt.beta2) * grad * grad
                params = params - step_lr * (m / (1 - opt.beta1 ** t)) / (np.sqrt(v / (1 - opt.beta2 ** t)) + opt.eps)
            else:
                params = params - step_lr * grad
            net.params = net._unflatten(params)
        total /= norm
        if not np.isfinite(total) or not np.all(np.isfinite(params)):
            raise Diverged(f"training loss became non-finite in epoch {epoch}")
        history.append(total)
        if prev is not None and abs(prev - total) < opt.tolerance:
            break
        prev = total
    net.report = {"method": opt.method, "step_size": lr, "epochs": epoch,
                  "batch_size": opt.batch_size, "loss_history": history}
    return net
