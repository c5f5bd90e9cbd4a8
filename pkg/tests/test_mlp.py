import numpy as np
import pytest

from sdedrift.dynamics import (DiagonalConstant, Ensemble, FullConstant, ScalarConstant, TimeGrid, UniformInit,
                               simulate_ensemble)
from sdedrift.estimator import OptimizerConfig
from sdedrift.mlp import MlpDrift, fit_mlp, mlp_loss_gradient


def finite_difference(net, ens, cov, h=1e-6):
    w = net.flat()
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (mlp_loss_gradient(net.with_weights(w + e), ens, cov)[0]
                  - mlp_loss_gradient(net.with_weights(w - e), ens, cov)[0]) / (2 * h)
    return out


@pytest.fixture(scope="module")
def small_ensemble():
    return simulate_ensemble(lambda X: 0.08 * X, ScalarConstant(0.6), TimeGrid.uniform(1.0, 0.01), 20,
                             UniformInit(0, 10), 4)


class TestGradient:
    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    def test_three_weight_net(self, small_ensemble, activation):
        net = MlpDrift((1, 1, 1, 1), activation, weights=[0.7, -1.3, 0.9], bias=False, shift=[5.0], scale=[5.0])
        assert net.n_weights == 3
        _, grad = mlp_loss_gradient(net, small_ensemble, ScalarConstant(0.6))
        fd = finite_difference(net, small_ensemble, ScalarConstant(0.6))
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=0)

    def test_wider_net_two_dims(self):
        ens = simulate_ensemble(lambda X: -X, DiagonalConstant([0.6, 0.8]), TimeGrid.uniform(0.5, 0.01), 5,
                                UniformInit(0, 10), 1)
        net = MlpDrift((2, 4, 2), "tanh", seed=3, shift=[5, 5], scale=[5, 5])
        _, grad = mlp_loss_gradient(net, ens, DiagonalConstant([0.6, 0.8]))
        fd = finite_difference(net, ens, DiagonalConstant([0.6, 0.8]))
        assert np.max(np.abs(grad - fd)) <= 1e-4 * np.max(np.abs(fd))


class TestArchitecture:
    def test_weight_count(self):
        net = MlpDrift((1, 64, 64, 1))
        assert net.n_weights == 64 + 64 + 64 * 64 + 64 + 64 + 1

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            MlpDrift((1, 2, 1), weights=np.zeros(3))
        with pytest.raises(ValueError):
            MlpDrift((1, 2, 2))
        with pytest.raises(ValueError):
            MlpDrift((1, 1, 1), weights=[np.nan, 0.0, 0.0, 0.0], bias=True)

    def test_seeded_initialization(self):
        assert np.array_equal(MlpDrift((1, 8, 1), seed=5).flat(), MlpDrift((1, 8, 1), seed=5).flat())
        assert not np.array_equal(MlpDrift((1, 8, 1), seed=5).flat(), MlpDrift((1, 8, 1), seed=6).flat())


class TestTraining:
    def test_zero_weights_zero_data(self):
        grid = TimeGrid.uniform(1.0, 0.1)
        ens = Ensemble(grid, np.tile(np.linspace(0, 5, 8)[:, None, None], (1, grid.L, 1)))
        arch = MlpDrift((1, 4, 1), init="zeros")
        net = fit_mlp(ens, ScalarConstant(0.6), arch, OptimizerConfig("adam", 1e-2, iterations=5, batch_size=16))
        assert np.all(net.flat() == 0.0)
        assert all(v == 0.0 for v in net.report["loss_history"])

    def test_deterministic(self, small_ensemble):
        opt = OptimizerConfig("adam", 1e-2, iterations=3, batch_size=64, seed=9)
        a = fit_mlp(small_ensemble, ScalarConstant(0.6), MlpDrift((1, 8, 1), seed=1), opt)
        b = fit_mlp(small_ensemble, ScalarConstant(0.6), MlpDrift((1, 8, 1), seed=1), opt)
        assert np.array_equal(a.flat(), b.flat())

    def test_loss_decreases(self, small_ensemble):
        cov = ScalarConstant(0.6)
        arch = MlpDrift((1, 8, 1), seed=1)
        net = fit_mlp(small_ensemble, cov, arch, OptimizerConfig("adam", 1e-2, iterations=30, batch_size=128,
                                                                 schedule="cosine"))
        initial = MlpDrift(arch.widths, arch.activation, arch.flat(), shift=net.shift, scale=net.scale)
        start = mlp_loss_gradient(initial, small_ensemble, cov)[0]
        assert mlp_loss_gradient(net, small_ensemble, cov)[0] < start

    def test_full_covariance_rejected(self):
        cov = FullConstant([[0.6, 0.2], [0.2, 0.8]])
        ens = simulate_ensemble(lambda X: -X, cov, TimeGrid.uniform(0.1, 0.01), 3, UniformInit(0, 10), 1)
        with pytest.raises(ValueError):
            fit_mlp(ens, cov, MlpDrift((2, 2, 2)))
