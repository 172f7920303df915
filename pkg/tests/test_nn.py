import math

import numpy as np
import pytest

from safemaze.errors import FormatError
from safemaze.nn import (
    Adam,
    Mlp,
    SquashedGaussianPolicy,
    load_checkpoint,
    sample_squashed,
    save_checkpoint,
    soft_update,
)

ARCHITECTURES = [(5, 16, 3), (4, 12, 8, 2), (3, 24, 1)]


def fd_param_grad(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over a flat parameter vector."""
    g = np.zeros_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        up = loss_fn()
        params[i] = old - h
        down = loss_fn()
        params[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def max_rel_error(a, b):
    scale = np.maximum(np.abs(a) + np.abs(b), 1e-3)
    return float(np.max(np.abs(a - b) / scale))


class TestForwardBackward:
    def test_zeroed_final_layer_gives_zero_output(self):
        net = Mlp((4, 8, 2), rng=np.random.default_rng(0), final_scale=0.0)
        y = net(np.ones(4))
        assert np.all(y == 0)

    def test_single_linear_layer_identity(self):
        net = Mlp((3, 3))
        for i in range(3):
            net._views[0][0][i, i] = 1.0
        x = np.array([0.3, -0.7, 2.0])
        assert np.array_equal(net(x), x)

    def test_width_mismatch_raises(self):
        net = Mlp((4, 8, 2), rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            net(np.ones(5))

    def test_backward_without_forward_raises(self):
        net = Mlp((4, 8, 2), rng=np.random.default_rng(0))
        with pytest.raises(RuntimeError):
            net.backward(np.ones(2))

    @pytest.mark.parametrize("arch", ARCHITECTURES)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("head", ["linear", "tanh", "sigmoid"])
    def test_param_gradients_match_finite_differences(self, arch, seed, head):
        rng = np.random.default_rng(seed)
        net = Mlp(arch, head=head, rng=rng)
        x = rng.standard_normal((7, arch[0]))
        target = rng.standard_normal((7, arch[-1]))

        def loss():
            y = net(x)
            return 0.5 * float(np.sum((y - target) ** 2))

        y = net.forward(x, remember=True)
        net.backward(y - target)
        fd = fd_param_grad(loss, net.params)
        assert max_rel_error(net.grads, fd) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = Mlp((5, 16, 4), rng=rng)
        x = rng.standard_normal(5)
        w = rng.standard_normal(4)

        y = net.forward(x, remember=True)
        gin = net.backward(w)[0]
        h = 1e-6
        fd = np.zeros(5)
        for i in range(5):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd[i] = (float(net(xp) @ w) - float(net(xm) @ w)) / (2 * h)
        assert max_rel_error(gin, fd) < 1e-4

    def test_output_head_ranges(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((64, 6)) * 5
        sig = Mlp((6, 16, 3), head="sigmoid", rng=rng)
        tanh = Mlp((6, 16, 3), head="tanh", rng=rng)
        ys, yt = sig(x), tanh(x)
        assert np.all((ys > 0) & (ys < 1))
        assert np.all((yt > -1) & (yt < 1))

    def test_fixed_seed_reproduces_parameters(self):
        a = Mlp((5, 32, 2), rng=np.random.default_rng(9))
        b = Mlp((5, 32, 2), rng=np.random.default_rng(9))
        assert np.array_equal(a.params, b.params)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        net = Mlp((2, 2), rng=np.random.default_rng(0))
        before = net.params.copy()
        opt = Adam(net.n_params, lr=1e-2)
        opt.step(net.params, np.zeros(net.n_params))
        assert np.array_equal(net.params, before)

    def test_constant_gradient_moves_against_sign(self):
        params = np.zeros(3)
        opt = Adam(3, lr=1e-2)
        g = np.array([1.0, -2.0, 0.5])
        for _ in range(50):
            opt.step(params, g)
        assert np.all(np.sign(params) == -np.sign(g))

    def test_single_step_matches_hand_computation(self):
        # two-parameter linear net y = w*x + b, squared loss at one sample
        net = Mlp((1, 1))
        net.params[:] = [0.5, -0.25]  # w, b
        x, t = 2.0, 1.0
        y = net.forward(np.array([x]), remember=True)
        net.backward(y - np.array([t]))
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        g = net.grads.copy()
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        expected = np.array([0.5, -0.25]) - lr * m_hat / (np.sqrt(v_hat) + eps)
        opt = Adam(2, lr=lr, beta1=b1, beta2=b2, eps=eps)
        opt.step(net.params, net.grads)
        assert np.max(np.abs(net.params - expected)) < 1e-12

    def test_shape_mismatch_raises(self):
        opt = Adam(4)
        with pytest.raises(ValueError):
            opt.step(np.zeros(3), np.zeros(3))


class TestSoftUpdate:
    def test_tau_one_copies_source(self):
        rng = np.random.default_rng(0)
        src, dst = Mlp((3, 8, 2), rng=rng), Mlp((3, 8, 2), rng=rng)
        soft_update(dst, src, 1.0)
        assert np.array_equal(dst.params, src.params)

    def test_tau_zero_keeps_target(self):
        rng = np.random.default_rng(0)
        src, dst = Mlp((3, 8, 2), rng=rng), Mlp((3, 8, 2), rng=rng)
        before = dst.params.copy()
        soft_update(dst, src, 0.0)
        assert np.array_equal(dst.params, before)

    def test_halfway_blend(self):
        src, dst = Mlp((1, 1)), Mlp((1, 1))
        src.params[:] = 2.0
        dst.params[:] = 0.0
        soft_update(dst, src, 0.5)
        assert np.all(dst.params == 1.0)

    def test_architecture_mismatch_raises(self):
        with pytest.raises(ValueError):
            soft_update(Mlp((2, 2)), Mlp((2, 3)), 0.5)


class TestSquashedGaussian:
    def test_vanishing_std_limit_is_tanh_mean(self):
        rng = np.random.default_rng(0)
        pol = SquashedGaussianPolicy(3, 2, (16,), rng=rng)
        # push log_std far below the clamp: sigma collapses to exp(-20)
        pol.net._views[-1][1][2:] = -50.0
        obs = rng.standard_normal(3)
        mu = pol.net.forward(obs)[:2]
        a, _, _ = pol.sample(obs, np.random.default_rng(1))
        assert np.max(np.abs(a - np.tanh(mu))) < 1e-6
        assert np.allclose(pol.mean_action(obs), np.tanh(mu))

    def test_sample_mean_matches_monte_carlo(self):
        # mu=0, sigma=1: E[tanh(u)] = 0 by symmetry
        pol = SquashedGaussianPolicy(1, 1, (4,))
        pol.net.params[:] = 0.0
        # bias of log-std output set to 0 -> sigma = 1; mean output 0
        rng = np.random.default_rng(123)
        obs = np.zeros((100_000, 1))
        a, logp, _ = pol.sample(obs, rng)
        se = float(np.std(a)) / math.sqrt(a.shape[0])
        assert abs(float(np.mean(a))) < 3 * se + 1e-12

    def test_samples_are_strictly_inside_unit_box(self):
        rng = np.random.default_rng(5)
        pol = SquashedGaussianPolicy(4, 3, (16,), rng=rng)
        obs = rng.standard_normal((256, 4)) * 3
        a, _, _ = pol.sample(obs, rng)
        assert np.all((a > -1) & (a < 1))

    def test_log_prob_integrates_to_one(self):
        # quadrature over the squashed support must recover unit mass
        pol = SquashedGaussianPolicy(1, 1, (4,))
        pol.net.params[:] = 0.0
        pol.net._views[-1][1][:] = [0.3, math.log(0.7)]  # mean 0.3, sigma 0.7
        grid = np.linspace(-1 + 1e-9, 1 - 1e-9, 200_001)
        obs = np.zeros((grid.size, 1))
        logp = pol.log_prob(obs, grid[:, None])
        mass = float(np.trapezoid(np.exp(logp), grid))
        assert abs(mass - 1.0) < 1e-3

    def test_sample_logp_consistent_with_log_prob(self):
        rng = np.random.default_rng(8)
        pol = SquashedGaussianPolicy(2, 2, (12,), rng=rng)
        obs = rng.standard_normal(2)
        a, logp, _ = pol.sample(obs, rng)
        assert logp == pytest.approx(pol.log_prob(obs, a), abs=1e-6)

    def test_actor_backprop_matches_finite_differences(self):
        # loss = sum(alpha*logp - q_weights . a), gradient through reparam sample
        rng = np.random.default_rng(21)
        pol = SquashedGaussianPolicy(3, 2, (10,), rng=rng, final_scale=1.0)
        obs = rng.standard_normal((6, 3))
        qw = rng.standard_normal((6, 2))
        alpha = 0.37
        eps_fixed = rng.standard_normal((6, 2))

        class FixedRng:
            def __init__(self, e):
                self.e = e

            def standard_normal(self, shape):
                assert shape == self.e.shape
                return self.e

        def loss():
            a, logp, _ = pol.sample(obs, FixedRng(eps_fixed))
            return float(np.sum(alpha * logp) - np.sum(qw * a))

        a, logp, aux = pol.sample(obs, FixedRng(eps_fixed), remember=True)
        pol.backprop_actor(aux, grad_a=-qw, grad_logp=np.full(6, alpha))
        fd = fd_param_grad(loss, pol.net.params)
        assert max_rel_error(pol.net.grads, fd) < 1e-4

    def test_sample_squashed_helper(self):
        rng = np.random.default_rng(2)
        pol = SquashedGaussianPolicy(2, 2, (8,), rng=rng)
        a, logp = sample_squashed(pol, np.zeros(2), rng)
        assert a.shape == (2,) and np.isfinite(logp)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        nets = {
            "critic": Mlp((10, 32, 1), head="sigmoid", rng=rng),
            "actor": Mlp((6, 32, 4), head="tanh", rng=rng),
        }
        scalars = {"log_alpha": -1.234567890123456}
        meta = {"method": "SRL-VIC"}
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, nets, scalars, meta)
        nets2, scalars2, meta2 = load_checkpoint(path)
        x = rng.standard_normal((5, 10))
        assert np.array_equal(nets2["critic"].params, nets["critic"].params)
        assert np.array_equal(nets2["critic"](x), nets["critic"](x))
        assert scalars2["log_alpha"] == scalars["log_alpha"]
        assert meta2["method"] == "SRL-VIC"

    def test_corrupted_file_raises_format_error(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"this is not a checkpoint")
        with pytest.raises(FormatError):
            load_checkpoint(path)
