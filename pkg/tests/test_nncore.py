import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unsupmap.exceptions import CheckpointError, ContractError, NumericError
from unsupmap.nncore import (
    Architecture,
    EncoderDecoderSplit,
    MlpNetwork,
    backward,
    checkpoint_dumps,
    checkpoint_load,
    checkpoint_loads,
    checkpoint_save,
    clip_weights,
    finite_difference_gradient,
    forward,
    lipschitz_upper_bound,
    make_optimizer,
    spectral_norm,
)


def reference_forward(net, x):
    """Layer-by-layer evaluation written independently of the library trace."""
    acts = {
        "tanh": np.tanh,
        "identity": lambda z: z,
        "leaky_relu": lambda z: np.where(z > 0, z, net.arch.slope * z),
    }
    h = np.atleast_2d(x)
    layers = net.layers()
    for k, (w, b) in enumerate(layers):
        z = h @ w.T + b
        last = k == len(layers) - 1
        h = acts[net.arch.output_activation if last else net.arch.activation](z)
    return h


architectures = st.builds(
    lambda i, o, hidden, act, outact: Architecture(i, tuple(hidden), o, activation=act, output_activation=outact),
    st.integers(1, 4),
    st.integers(1, 3),
    st.lists(st.integers(1, 6), max_size=3),
    st.sampled_from(["tanh", "leaky_relu", "identity"]),
    st.sampled_from(["identity", "tanh"]),
)


@given(architectures, st.integers(0, 10_000))
def test_forward_matches_reference(arch, seed):
    rng = np.random.default_rng(seed)
    net = MlpNetwork.initialize(arch, rng)
    net.params += rng.normal(0, 0.1, net.params.size)
    x = rng.normal(size=(5, arch.input_dim))
    np.testing.assert_allclose(forward(net, x), reference_forward(net, x), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(forward(net, x[0]), reference_forward(net, x[0])[0], rtol=1e-12)


def test_affine_layer_gradient_by_hand():
    arch = Architecture(2, (), 1, output_activation="identity")
    net = MlpNetwork.from_layers(arch, [(np.array([[2.0, -1.0]]), np.array([0.5]))])
    grad, grad_x = backward(net, [3.0], np.array([1.0, 4.0]))
    np.testing.assert_allclose(grad, [3.0, 12.0, 3.0])
    np.testing.assert_allclose(grad_x, [6.0, -3.0])


@given(architectures, st.integers(0, 10_000))
def test_backward_matches_finite_differences(arch, seed):
    rng = np.random.default_rng(seed)
    net = MlpNetwork.initialize(arch, rng)
    net.params += rng.normal(0, 0.1, net.params.size)
    x = rng.normal(size=(3, arch.input_dim))
    out_grad = rng.normal(size=(3, arch.output_dim))
    grad, _ = backward(net, out_grad, x)
    fd = finite_difference_gradient(net, out_grad, x)
    scale = max(1.0, float(np.abs(fd).max()))
    assert np.max(np.abs(grad - fd)) / scale < 1e-6


def test_input_gradient_matches_finite_differences(rng):
    arch = Architecture(3, (5, 4), 2)
    net = MlpNetwork.initialize(arch, rng)
    x = rng.normal(size=3)
    seed = rng.normal(size=2)
    _, grad_x = backward(net, seed, x)
    step = 1e-6
    fd = np.array([
        (seed @ forward(net, x + step * e) - seed @ forward(net, x - step * e)) / (2 * step) for e in np.eye(3)
    ])
    np.testing.assert_allclose(grad_x, fd, rtol=1e-6, atol=1e-8)


def test_layer_views_alias_parameters(rng):
    net = MlpNetwork.initialize(Architecture(2, (3,), 2), rng)
    w, b = net.layers()[0]
    w[0, 0] = 7.0
    b[1] = -2.0
    assert net.params[0] == 7.0
    assert net.params[7] == -2.0


def test_parameter_count_and_shape_validation():
    arch = Architecture.mlp(2, 2, 3, 16)
    assert arch.depth == 3
    assert arch.n_params == (2 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2)
    with pytest.raises(ContractError):
        MlpNetwork(arch, np.zeros(3))
    with pytest.raises(NumericError):
        MlpNetwork(arch, np.full(arch.n_params, np.nan))
    with pytest.raises(ContractError):
        forward(MlpNetwork.zeros(arch), np.zeros((2, 3)))
    with pytest.raises(ContractError):
        Architecture.mlp(2, 2, 0, 16)


def test_clip_weights_bounds_every_parameter(rng):
    net = MlpNetwork.initialize(Architecture(2, (8,), 1), rng)
    net.params *= 10
    clip_weights(net, 0.1)
    assert np.abs(net.params).max() <= 0.1


def test_spectral_norm_matches_svd(rng):
    for _ in range(20):
        m = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        assert spectral_norm(m) == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-10)
    assert spectral_norm(np.zeros((3, 3))) == 0.0


@given(st.integers(0, 10_000))
def test_lipschitz_bound_dominates_observed_slopes(seed):
    rng = np.random.default_rng(seed)
    net = MlpNetwork.initialize(Architecture(2, (8, 8), 1, activation="leaky_relu"), rng)
    bound = lipschitz_upper_bound(net)
    a, b = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    ratio = np.abs(forward(net, a) - forward(net, b))[:, 0] / np.linalg.norm(a - b, axis=1)
    assert ratio.max() <= bound + 1e-12


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_optimizers_descend_a_quadratic(kind):
    target = np.array([1.0, -2.0, 0.5])
    params = np.zeros(3)
    opt = make_optimizer(kind, 0.05, 3)
    for _ in range(500):
        opt.step(params, 2 * (params - target))
    np.testing.assert_allclose(params, target, atol=0.06)


def test_optimizer_rejects_bad_settings():
    with pytest.raises(ContractError):
        make_optimizer("lbfgs", 0.1, 3)
    with pytest.raises(ContractError):
        make_optimizer("sgd", 0.0, 3)


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    arch = Architecture(2, (4, 3), 2, activation="leaky_relu", slope=0.3)
    net = MlpNetwork.initialize(arch, rng)
    net.params += rng.normal(size=net.params.size) * 1e-3
    checkpoint_save(net, tmp_path / "h.model")
    loaded = checkpoint_load(tmp_path / "h.model", arch)
    assert loaded.arch == arch
    assert np.array_equal(loaded.params, net.params)


def test_checkpoint_errors_name_the_line(rng):
    net = MlpNetwork.initialize(Architecture(2, (3,), 2), rng)
    text = checkpoint_dumps(net)
    lines = text.splitlines()
    with pytest.raises(CheckpointError) as err:
        checkpoint_loads("\n".join(lines[:-3]) + "\n")
    assert "expected" in str(err.value)
    broken = lines.copy()
    broken[4] = "not-a-number"
    with pytest.raises(CheckpointError) as err:
        checkpoint_loads("\n".join(broken))
    assert err.value.line == 5
    with pytest.raises(ContractError):
        checkpoint_loads(text, Architecture(2, (4,), 2))


def test_encoder_split_partitions_parameters():
    arch = Architecture.mlp(2, 2, 4, 16)
    split = EncoderDecoderSplit(arch, 2)
    assert split.decoder_layers == 2
    assert split.encoder_slice.stop == split.decoder_slice.start
    assert split.decoder_slice.stop == arch.n_params
    with pytest.raises(ContractError):
        EncoderDecoderSplit(arch, 4)
