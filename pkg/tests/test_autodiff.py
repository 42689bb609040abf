import numpy as np
import pytest

from rmloss.autodiff import (SgdConfig, backward, debug_mode, engine as E, init_params, leaf,
                             load_checkpoint, loss_and_grad, save_checkpoint, train,
                             unet_lite_forward)
from rmloss.errors import (ConfigurationError, DimensionError, DivergenceError, NumericError,
                           VersionError)
from rmloss.gradcheck import max_relative_error, numerical_gradient
from rmloss.losses import preset, total_loss


def _check_op(build, inputs, seed=0):
    """Compare analytic vs finite-difference gradients of <build(*nodes), weights>."""
    r = np.random.default_rng(seed)
    nodes = [leaf(x) for x in inputs]
    out = build(*nodes)
    weights = r.normal(size=out.shape)
    backward(out, weights)

    def f():
        return float(np.sum(build(*[leaf(x, requires_grad=False) for x in inputs]).value * weights))

    errs = []
    for x, node in zip(inputs, nodes):
        numeric = numerical_gradient(f, x)
        errs.append(max_relative_error(node.grad, numeric))
    return max(errs)


R = np.random.default_rng(7)
OP_CASES = {
    "conv2d": (lambda x, w: E.conv2d(x, w), [R.normal(size=(2, 3, 5, 6)), R.normal(size=(4, 3, 3, 3))]),
    "conv2d_1x1": (lambda x, w: E.conv2d(x, w), [R.normal(size=(1, 2, 4, 4)), R.normal(size=(3, 2, 1, 1))]),
    "conv3d": (lambda x, w: E.conv3d(x, w), [R.normal(size=(1, 2, 4, 3, 5)), R.normal(size=(2, 2, 3, 3, 3))]),
    "bias_add": (E.bias_add, [R.normal(size=(2, 3, 4, 4)), R.normal(size=3)]),
    "relu": (E.relu, [R.normal(size=(2, 3, 4, 4))]),
    "sigmoid": (E.sigmoid, [R.normal(size=(2, 3, 4))]),
    "softmax": (E.softmax_channels, [R.normal(size=(2, 4, 3, 3))]),
    "maxpool2d": (E.maxpool, [R.normal(size=(2, 2, 4, 6))]),
    "maxpool3d": (E.maxpool, [R.normal(size=(1, 2, 4, 4, 2))]),
    "upsample2d": (E.upsample_nearest, [R.normal(size=(2, 2, 3, 2))]),
    "upsample3d": (E.upsample_nearest, [R.normal(size=(1, 2, 2, 2, 3))]),
    "concat": (E.concat_channels, [R.normal(size=(2, 2, 3, 3)), R.normal(size=(2, 3, 3, 3))]),
    "add": (E.add, [R.normal(size=(2, 3)), R.normal(size=(2, 3))]),
    "add_broadcast": (E.add, [R.normal(size=(2, 3)), R.normal(size=(1, 3))]),
    "mul": (E.mul, [R.normal(size=(3, 4)), R.normal(size=(3, 4))]),
    "sum": (E.sum, [R.normal(size=(3, 4))]),
    "mean": (E.mean, [R.normal(size=(3, 4))]),
    "dropout_train": (lambda x: E.dropout(x, 0.3, True, 11), [R.normal(size=(2, 3, 4))]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    build, inputs = OP_CASES[name]
    assert _check_op(build, [x.copy() for x in inputs]) <= 1e-4


def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    np.testing.assert_array_equal(E.conv2d(leaf(x), leaf(w)).value, x)


def test_relu_negative_input_has_zero_gradient():
    x = leaf(np.array([[-1.0, 2.0, -0.5]]))
    backward(E.relu(x), np.ones((1, 3)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_dropout_off_is_identity():
    x = leaf(np.random.default_rng(0).normal(size=(2, 3)))
    assert E.dropout(x, 0.5, training=False) is x
    assert np.array_equal(E.dropout(x, 0.5, training=False).value, x.value)
    with pytest.raises(ConfigurationError):
        E.dropout(x, 1.0, training=True, rng=0)


def test_backward_is_linear():
    r = np.random.default_rng(3)
    xv = r.normal(size=(4, 4))
    x1 = leaf(xv)
    l1 = E.sum(E.mul(x1, x1))
    l2 = E.sum(E.relu(x1))
    backward(E.add(l1, l2))
    x2 = leaf(xv)
    backward(E.sum(E.mul(x2, x2)))
    backward(E.sum(E.relu(x2)))
    assert np.array_equal(x1.grad, x2.grad)


def test_shape_errors():
    with pytest.raises(DimensionError):
        E.conv2d(leaf(np.zeros((1, 2, 4, 4))), leaf(np.zeros((3, 3, 3, 3))))
    with pytest.raises(ConfigurationError):
        E.maxpool(leaf(np.zeros((1, 1, 5, 4))))
    with pytest.raises(DimensionError):
        E.concat_channels(leaf(np.zeros((1, 1, 4, 4))), leaf(np.zeros((1, 1, 2, 4))))
    with pytest.raises(DimensionError):
        E.bias_add(leaf(np.zeros((1, 2, 4, 4))), leaf(np.zeros(3)))


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_debug_mode_flags_non_finite():
    with debug_mode():
        with pytest.raises(NumericError):
            E.mul(leaf(np.array([np.inf])), leaf(np.array([0.0])))
    E.mul(leaf(np.array([np.inf])), leaf(np.array([0.0])))  # silent outside debug mode


# -- network ----------------------------------------------------------------

def test_param_count_and_shapes():
    p = init_params(1, 3)
    assert 25_000 <= p.n_parameters() <= 35_000
    assert p.widths == (8, 16, 32)


def test_forward_shape_and_determinism():
    p = init_params(1, 3, seed=1)
    x = np.random.default_rng(0).random((2, 1, 64, 64))
    a, _ = unet_lite_forward(p, x, training=False)
    b, _ = unet_lite_forward(p, x, training=False)
    assert a.shape == (2, 3, 64, 64)
    assert np.array_equal(a.value, b.value)


def test_forward_divisibility():
    p = init_params(1, 3)
    with pytest.raises(ConfigurationError):
        unet_lite_forward(p, np.zeros((1, 1, 30, 32)))


def test_forward_3d_shape():
    p = init_params(1, 2, widths=(2, 4, 4), ndim=3)
    logits, _ = unet_lite_forward(p, np.zeros((1, 1, 8, 8, 8)))
    assert logits.shape == (1, 2, 8, 8, 8)


@pytest.mark.parametrize("ndim, name", [(2, "rm-2d-best"), (2, "baseline"), (3, "rm-3d-best")])
def test_end_to_end_gradient_sample(ndim, name):
    cfg = preset(name)
    widths = (4, 8, 8) if ndim == 3 else (8, 16, 32)
    spatial = (8, 8, 8) if ndim == 3 else (16, 16)
    c = 2 if ndim == 3 else 3
    p = init_params(1, c, widths=widths, ndim=ndim, seed=4)
    r = np.random.default_rng(9)
    x = r.random((2, 1) + spatial)
    y = r.integers(0, c, (2,) + spatial)
    _, grads = loss_and_grad(p, x, y, cfg)
    errs = []
    for name_, arr in p.tensors.items():
        k = max(1, arr.size // 100)
        idx = r.choice(arr.size, size=k, replace=False)

        def f():
            logits, _ = unet_lite_forward(p, x)
            return total_loss(logits.value, y, cfg).value

        numeric = numerical_gradient(f, arr, idx)
        errs.append(max_relative_error(grads[name_], numeric, idx))
    assert max(errs) <= 1e-3


def _tiny_data(n=4, size=16, seed=0):
    r = np.random.default_rng(seed)
    x = r.random((n, size, size))
    y = (x > 0.6).astype(np.int64)
    return x, y


def test_train_zero_step_limit():
    x, y = _tiny_data()
    p = init_params(1, 2, widths=(2, 4, 4))
    trained, trace = train(p, x, y, preset("baseline"), SgdConfig(1e-300, 1, 2, 0))
    # weights are bit-identical; zero biases move by at most lr * |g|
    assert all(np.max(np.abs(trained.tensors[k] - p.tensors[k])) < 1e-290 for k in p.tensors)
    assert all(np.array_equal(trained.tensors[k], p.tensors[k]) for k in p.tensors if "weight" in k)
    assert len(trace) == 1


def test_train_determinism():
    x, y = _tiny_data()
    p = init_params(1, 2, widths=(2, 4, 4))
    a, ta = train(p, x, y, preset("rm-2d-best"), SgdConfig(0.01, 5, 2, 42))
    b, tb = train(p, x, y, preset("rm-2d-best"), SgdConfig(0.01, 5, 2, 42))
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    assert [r["loss"] for r in ta] == [r["loss"] for r in tb]


def test_train_reduces_loss_on_synthetic_samples():
    from rmloss.data import SynthConfig2D, gen_2d
    data = gen_2d(SynthConfig2D(count=8, height=32, width=32, seed=3))
    p = init_params(1, 3, widths=(4, 8, 8), seed=0)
    _, trace = train(p, data.images, data.masks, preset("baseline"), SgdConfig(0.05, 200, 4, 0))
    losses = [r["loss"] for r in trace]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_train_divergence_names_iteration():
    x, y = _tiny_data()
    p = init_params(1, 2, widths=(2, 4, 4))
    with pytest.raises(DivergenceError) as err:
        train(p, x, y, preset("rm-2d-best"), SgdConfig(1e200, 3, 2, 0))
    assert err.value.iteration is not None and str(err.value.iteration) in str(err.value)


def test_sgd_config_validation():
    with pytest.raises(ConfigurationError):
        SgdConfig(learning_rate=0)
    with pytest.raises(ConfigurationError):
        SgdConfig(iterations=0)


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(1, 3, seed=5, dropout=0.2)
    path = tmp_path / "model.rmck"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.dropout == 0.2
    assert all(np.array_equal(p.tensors[k], q.tensors[k]) for k in p.tensors)
    raw = path.read_bytes()
    assert raw[:4] == b"RMCK" and int.from_bytes(raw[4:8], "little") == 1
    bad = tmp_path / "bad.rmck"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(VersionError):
        load_checkpoint(bad)
    bad.write_bytes(raw[:100])
    with pytest.raises(VersionError):
        load_checkpoint(bad)
