import numpy as np
import pytest

from nnd import train_sigmas
from nnd.denoise import NeuralDenoiser, TrainOptions, train
from nnd.denoise.neural import conv3d, conv3d_backward, n_params
from nnd.errors import DivergenceError, ValidationError


@pytest.fixture
def net():
    return NeuralDenoiser(("a", "b"), seed=3, init="random")


@pytest.fixture
def batch():
    gen = np.random.default_rng(0)
    return gen.normal(size=(2, 4, 4, 4, 2)), np.array([0.5, 2.0]), gen.normal(size=(2, 4, 4, 4, 2))


def test_param_count_depends_only_on_channels():
    assert n_params(1) == 27 * 2 * 16 + 16 + 27 * 16 * 16 + 16 + 27 * 16 + 1
    assert NeuralDenoiser(2, seed=0).theta.size == NeuralDenoiser(2, seed=9).theta.size == n_params(2)


def test_zero_parameters_give_zero_output():
    net = NeuralDenoiser(1, theta=np.zeros(n_params(1)))
    out = net.denoise(np.random.default_rng(0).normal(size=(4, 4, 4, 1)), 1.0)
    assert np.all(out == 0)


def test_forward_deterministic(net, batch):
    x, s, _ = batch
    assert np.array_equal(net.denoise(x, s), net.denoise(x, s))


def test_output_shape(net):
    x = np.zeros((5, 6, 7, 2))
    assert net.denoise(x, 1.0).shape == x.shape


def test_identity_init_is_close_to_identity():
    x = np.random.default_rng(1).uniform(-10, 3, (6, 6, 6, 2))
    wired = NeuralDenoiser.init_params(2, seed=0, mode="identity", noise=0.0)
    assert np.max(np.abs(NeuralDenoiser(("a", "b"), theta=wired).denoise(x, 1.0) - x)) < 0.01
    net = NeuralDenoiser(("a", "b"), seed=0, init="identity")
    assert np.sqrt(np.mean((net.denoise(x, 1.0) - x) ** 2)) < 0.2


def test_parameter_gradient_matches_finite_differences(net, batch):
    x, s, target = batch
    _, grad = net.loss_and_grad(x, s, target)
    gen = np.random.default_rng(5)
    idx = gen.choice(net.theta.size, 20, replace=False)
    theta0 = net.theta.copy()
    fd = np.empty(20)
    h = 1e-4
    for j, i in enumerate(idx):
        net.theta = theta0.copy()
        net.theta[i] += h
        lp = net.loss(x, s, target)
        net.theta[i] -= 2 * h
        lm = net.loss(x, s, target)
        fd[j] = (lp - lm) / (2 * h)
    net.theta = theta0
    err = np.linalg.norm(grad[idx] - fd) / np.linalg.norm(fd)
    assert err <= 1e-4


def test_input_vjp_matches_finite_differences(net):
    gen = np.random.default_rng(2)
    x = gen.normal(size=(4, 4, 4, 2))
    v = gen.normal(size=x.shape)
    g = net.vjp(x, 0.7, v)
    idx = gen.choice(x.size, 20, replace=False)
    h = 1e-4
    fd = np.empty(20)
    for j, i in enumerate(idx):
        xp, xm = x.copy().ravel(), x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        fd[j] = (np.sum(v * net.denoise(xp.reshape(x.shape), 0.7))
                 - np.sum(v * net.denoise(xm.reshape(x.shape), 0.7))) / (2 * h)
    assert np.linalg.norm(g.ravel()[idx] - fd) / np.linalg.norm(fd) <= 1e-4


def test_vjp_linear(net):
    gen = np.random.default_rng(4)
    x = gen.normal(size=(4, 4, 4, 2))
    v1, v2 = gen.normal(size=x.shape), gen.normal(size=x.shape)
    lhs = net.vjp(x, 1.0, 2.0 * v1 - 3.0 * v2)
    rhs = 2.0 * net.vjp(x, 1.0, v1) - 3.0 * net.vjp(x, 1.0, v2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-12)


def test_denoise_and_vjp_agree(net):
    x = np.random.default_rng(6).normal(size=(4, 4, 4, 2))
    v = np.ones_like(x)
    out, pullback = net.denoise_and_vjp(x, 0.3)
    assert np.array_equal(out, net.denoise(x, 0.3))
    assert np.array_equal(pullback(v), net.vjp(x, 0.3, v))


def test_conv_adjoint():
    gen = np.random.default_rng(7)
    x = gen.normal(size=(1, 3, 4, 5, 2))
    w = gen.normal(size=(27, 2, 3))
    u = gen.normal(size=(1, 3, 4, 5, 3))
    lhs = np.sum(conv3d(x, w, np.zeros(3)) * u)
    dx, _, _ = conv3d_backward(x, w, u)
    assert lhs == pytest.approx(np.sum(x * dx), rel=1e-12)


def test_replicate_padding_preserves_constants():
    # every tap sees the same value at the borders too
    w = np.ones((27, 1, 1)) / 27
    x = np.full((1, 3, 3, 3, 1), 2.5)
    np.testing.assert_allclose(conv3d(x, w, np.zeros(1)), 2.5, rtol=1e-14)


def test_non_finite_parameters(net):
    net.theta[0] = np.nan
    with pytest.raises(DivergenceError):
        net.denoise(np.zeros((2, 2, 2, 2)), 1.0)


def test_wrong_channel_count(net):
    with pytest.raises(ValidationError):
        net.denoise(np.zeros((2, 2, 2, 3)), 1.0)


def test_adam_decoupled_weight_decay():
    net = NeuralDenoiser(1, seed=0)
    theta0 = net.theta.copy()
    net.adam_step(np.zeros_like(theta0), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(net.theta, theta0 * (1 - 0.05), rtol=1e-15)


def test_save_load_round_trip(tmp_path):
    net = NeuralDenoiser(("lwc", "re"), seed=4, eps=1e-3, scale={"lwc": 2.0, "re": 0.5},
                         sigma_config={"L": 150})
    p = tmp_path / "m.nndm"
    net.save(p)
    back = NeuralDenoiser.load(p)
    assert np.array_equal(back.theta, net.theta)
    assert back.eps == 1e-3 and back.scale.factors == {"lwc": 2.0, "re": 0.5}
    assert back.channel_names == ("lwc", "re")
    assert p.read_bytes()[:8] == b"NNDM0001"


def test_load_requires_metadata(tmp_path):
    import json
    import struct
    header = json.dumps({"channels": ["x"]}).encode()
    p = tmp_path / "bad.nndm"
    p.write_bytes(b"NNDM0001" + struct.pack("<I", len(header)) + header)
    with pytest.raises(ValidationError):
        NeuralDenoiser.load(p)


def small_latents(n=6):
    gen = np.random.default_rng(11)
    return np.log(np.maximum(gen.normal(0.5, 0.5, (n, 4, 4, 4, 1)), 0) + np.exp(-10))


def test_zero_steps_leave_parameters_unchanged():
    net = NeuralDenoiser(1, seed=1)
    theta0 = net.theta.copy()
    train(net, small_latents(), train_sigmas(), TrainOptions(steps=0, batch=2))
    assert np.array_equal(net.theta, theta0)


def test_training_is_reproducible():
    runs = []
    for _ in range(2):
        net = NeuralDenoiser(1, seed=1)
        res = train(net, small_latents(), train_sigmas(), TrainOptions(steps=3, batch=2, seed=5))
        runs.append((net.theta.copy(), res.losses))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_training_on_gaussian_latents_beats_identity():
    # smooth Gaussian-prior latents: the denoiser should learn to shrink at sigma = 1
    gen = np.random.default_rng(0)
    clean = gen.normal(0.0, 1.0, (64, 4, 4, 4, 1))
    net = NeuralDenoiser(1, seed=0)
    train(net, clean, train_sigmas(L=10, sigma_1=0.5, sigma_L=2.0),
          TrainOptions(steps=300, batch=8, lr=1e-2, seed=0))
    held = np.random.default_rng(1).normal(0.0, 1.0, (16, 4, 4, 4, 1))
    noisy = held + np.random.default_rng(2).normal(size=held.shape)
    mse = np.mean((net.denoise(noisy, 1.0) - held) ** 2)
    assert mse < np.mean((noisy - held) ** 2)


def test_non_finite_loss_reports_batch():
    net = NeuralDenoiser(1, seed=1)
    bad = small_latents()
    bad[:] = 1e200
    with pytest.raises(DivergenceError, match="sigma indices"):
        train(net, bad, train_sigmas(), TrainOptions(steps=1, batch=2))
