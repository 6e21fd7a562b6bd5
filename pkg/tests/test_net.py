import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from hyperimage import net
from hyperimage.net import (NetworkSpec, ShapeError, conv, dense, dropout, max_pool, min_pool, concat,
                            build_network, forward, backward, compute_loss, sgd_update, OptimizerState,
                            gradient_check, penultimate_features, propagate, get_spec)
from hyperimage.net.spec import same_padding


def test_dense_weight_shapes():
    spec = NetworkSpec((4,), [dense(1, "linear")])
    p = build_network(spec, 0)
    assert p[0]["W"].shape == (4, 1) and p[0]["b"].shape == (1,)


def test_table5_shapes():
    spec = get_spec("tid-stage-1")
    shapes = propagate(spec)
    assert shapes[0].weight_shape == (50, 7, 7, 3)
    assert shapes[1].out_shape == (1, 1, 50) and shapes[2].out_shape == (1, 1, 50)
    assert shapes[3].out_shape == (1, 1, 100)
    assert shapes[4].weight_shape == (100, 800)
    assert get_spec("tid-stage-1").layers[0].activation == "linear"


@pytest.mark.parametrize("name,shape", [
    ("synthetic-stage-2", (10, 10, 400)),
    ("tid-stage-2", (23, 31, 800)),
    ("live-stage-2", (24, 23, 800)),
    ("forgery-stage-2", (15, 15, 500)),
])
def test_stage2_inputs(name, shape):
    assert get_spec(name).input_shape == shape
    assert propagate(get_spec(name))[-1].out_shape == (1,)


@pytest.mark.parametrize("name,d", [("tid-stage-1", 800), ("live-stage-1", 800), ("synthetic-stage-1", 400),
                                    ("desk-synthetic-stage-1", 100), ("desk-forgery-channel", 125)])
def test_penultimate_width(name, d):
    spec = get_spec(name)
    x = np.random.default_rng(0).random((2,) + spec.input_shape)
    f = penultimate_features(spec, build_network(spec, 0), x)
    assert f.shape == (2, d) and np.all(f >= 0)


def test_penultimate_needs_two_layers():
    with pytest.raises(ShapeError):
        penultimate_features(NetworkSpec((3,), [dense(1)]), build_network(NetworkSpec((3,), [dense(1)]), 0),
                             np.zeros((1, 3)))


def test_shape_error_names_first_bad_layer():
    spec = NetworkSpec((4, 4, 1), [conv(2), max_pool(2), max_pool(2), max_pool(2)])
    with pytest.raises(ShapeError) as e:
        propagate(spec)
    assert e.value.layer_index == 3


def test_same_padding_extra_goes_bottom_right():
    assert same_padding(32, 3, 1) == (1, 1)
    assert same_padding(32, 4, 1) == (1, 2)
    assert same_padding(7, 3, 2) == (1, 1)
    spec = NetworkSpec((7, 7, 1), [conv(1, 7, 2)])
    assert propagate(spec)[0].out_shape == (4, 4, 1)


def test_seed_determinism():
    spec = get_spec("desk-synthetic-stage-1")
    a, b = build_network(spec, 3), build_network(spec, 3)
    for la, lb in zip(a, b):
        for k in la:
            assert np.array_equal(la[k], lb[k])
    for layer, s in zip(a, propagate(spec)):
        if "W" in layer:
            limit = np.sqrt(6.0 / sum(s.fan))
            assert np.all(np.abs(layer["W"]) <= limit) and not layer["b"].any()


def test_relu_and_min_pool_constant():
    spec = NetworkSpec((3,), [dense(3, "relu")])
    p = [{"W": np.eye(3), "b": np.zeros(3)}]
    out = forward(spec, p, np.array([[-1.0, 0.0, 2.0]])).outputs[-1]
    assert out.tolist() == [[0.0, 0.0, 2.0]]
    spec = NetworkSpec((26, 26, 1), [min_pool(26)])
    assert forward(spec, [{}], np.full((1, 26, 26, 1), 3.0)).outputs[-1].reshape(-1).tolist() == [3.0]


def test_identity_kernel_and_conv_oracle():
    rng = np.random.default_rng(1)
    x = rng.random((2, 9, 7, 2))
    spec = NetworkSpec((9, 7, 2), [conv(3, 3, activation="linear")])
    W = np.zeros((3, 3, 3, 2))
    W[0, 1, 1, 0] = 1.0
    W[1:] = rng.normal(size=(2, 3, 3, 2))
    b = np.array([0.0, 0.5, -0.25])
    out = forward(spec, [{"W": W, "b": b}], x).outputs[-1]
    assert np.array_equal(out[..., 0], x[..., 0])
    for n in range(2):
        for f in (1, 2):
            ref = sum(signal.correlate2d(x[n, :, :, c], W[f, :, :, c], mode="same") for c in range(2)) + b[f]
            assert np.allclose(out[n, :, :, f], ref, atol=1e-12)


def test_strided_conv_oracle():
    rng = np.random.default_rng(2)
    x = rng.random((1, 8, 8, 1))
    W = rng.normal(size=(1, 7, 7, 1))
    spec = NetworkSpec((8, 8, 1), [conv(1, 7, 2, activation="linear")])
    out = forward(spec, [{"W": W, "b": np.zeros(1)}], x).outputs[-1][0, :, :, 0]
    # 4 outputs need (4 - 1) * 2 + 7 - 8 = 5 padding: 2 top/left, 3 bottom/right
    padded = np.pad(x[0, :, :, 0], ((2, 3), (2, 3)))
    full = signal.correlate2d(padded, W[0, :, :, 0], mode="valid")
    assert np.allclose(out, full[::2, ::2], atol=1e-12)


def test_pool_tie_break_first_extremum():
    spec = NetworkSpec((2, 2, 1), [max_pool(2)])
    x = np.ones((1, 2, 2, 1))
    tr = forward(spec, [{}], x, "train", np.random.default_rng(0))
    grads, dx = backward(spec, [{}], tr, np.ones((1, 1, 1, 1)), need_input_grad=True)
    assert dx[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]
    spec = NetworkSpec((2, 2, 1), [min_pool(2)])
    x = np.array([[[[2.0], [0.0]], [[1.0], [0.0]]]])
    tr = forward(spec, [{}], x, "train", np.random.default_rng(0))
    _, dx = backward(spec, [{}], tr, np.ones((1, 1, 1, 1)), need_input_grad=True)
    assert dx[0, :, :, 0].tolist() == [[0.0, 1.0], [0.0, 0.0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(2, None), (3, 2), (2, 1)]))
def test_min_pool_is_negated_max_pool(seed, geom):
    size, stride = geom
    x = np.random.default_rng(seed).normal(size=(2, 7, 6, 3))
    mn = forward(NetworkSpec((7, 6, 3), [min_pool(size, stride)]), [{}], x).outputs[-1]
    mx = forward(NetworkSpec((7, 6, 3), [max_pool(size, stride)]), [{}], -x).outputs[-1]
    assert np.array_equal(mn, -mx)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_conv_is_linear(seed, a, c):
    spec = NetworkSpec((5, 5, 2), [conv(3, 3, activation="linear")])
    p = build_network(spec, seed % 1000)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(1, 5, 5, 2)), rng.normal(size=(1, 5, 5, 2))
    f = lambda v: forward(spec, p, v).outputs[-1]
    assert np.allclose(f(a * x + c * y), a * f(x) + c * f(y), atol=1e-10)


def test_dropout_modes():
    spec = NetworkSpec((10000,), [dropout(0.3)])
    x = np.ones((1, 10000))
    assert np.array_equal(forward(spec, [{}], x).outputs[-1], x)
    with pytest.raises(ValueError):
        forward(spec, [{}], x, "train")
    y = forward(spec, [{}], np.ones((4, 10000)), "train", np.random.default_rng(5)).outputs[-1]
    assert abs((y == 0).mean() - 0.3) < 0.01
    assert np.allclose(y[y != 0], 1 / 0.7)
    assert abs(y.mean() - 1.0) < 0.01


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_activation_reports_layer():
    spec = NetworkSpec((2,), [dense(2, "linear"), dense(1, "linear")])
    p = build_network(spec, 0)
    p[1]["W"][:] = 1e308
    with pytest.raises(net.NonFiniteError) as e:
        forward(spec, p, np.full((1, 2), 1e10))
    assert e.value.layer_index == 1


def test_infer_forward_is_pure():
    spec = get_spec("desk-live-stage-1")
    p = build_network(spec, 0)
    x = np.random.default_rng(0).random((3, 32, 32, 1))
    assert np.array_equal(forward(spec, p, x).outputs[-1], forward(spec, p, x).outputs[-1])


def test_backward_zero_gradient_and_replay():
    spec = NetworkSpec((6, 6, 1), [conv(2), max_pool(2), dense(4), dropout(0.5), dense(1, "linear")])
    p = build_network(spec, 0)
    x = np.random.default_rng(0).random((3, 6, 6, 1))
    tr = forward(spec, p, x, "train", np.random.default_rng(9))
    g0, _ = backward(spec, p, tr, np.zeros((3, 1)))
    assert all(not v.any() for layer in g0 for v in layer.values())
    g1, _ = backward(spec, p, tr, np.ones((3, 1)))
    g2, _ = backward(spec, p, tr, np.ones((3, 1)))
    for a, b in zip(g1, g2):
        for k in a:
            assert np.array_equal(a[k], b[k])
    tr.caches.pop()
    with pytest.raises(ValueError):
        backward(spec, p, tr, np.ones((3, 1)))


# -- losses -------------------------------------------------------------------------

def test_loss_examples():
    assert compute_loss("pairwise-rank", np.array([5.0]), np.array([1.0]))[0] == 0.0
    loss, g = compute_loss("pairwise-rank", np.array([0.0]), np.array([1.0]))
    assert loss == 3.0 and g.tolist() == [-1.0]
    assert compute_loss("mae", np.array([4.0]), np.array([5.56]))[0] == pytest.approx(1.56)
    loss, g = compute_loss("bce", np.array([1.0, 0.5]), np.array([0.0, 1.0]))
    assert np.isfinite(loss) and loss == pytest.approx((-np.log(1e-7) + np.log(2)) / 2)
    with pytest.raises(ValueError):
        compute_loss("bce", np.array([0.5]), np.array([0.3]))
    with pytest.raises(ValueError):
        compute_loss("hinge", np.array([0.5]), np.array([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_bce_gradient_matches_difference(ps, seed):
    p = np.array(ps)
    t = np.random.default_rng(seed).integers(0, 2, size=p.size).astype(float)
    _, g = compute_loss("bce", p, t)
    h = 1e-6
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        num = (compute_loss("bce", p + e, t)[0] - compute_loss("bce", p - e, t)[0]) / (2 * h)
        assert g[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_balanced_class_weights():
    w = net.balanced_class_weights(np.array([1, 1, 1, 0]))
    assert w.tolist() == pytest.approx([4 / 6, 4 / 6, 4 / 6, 2.0])
    assert w.sum() == pytest.approx(4.0)


# -- optimiser ----------------------------------------------------------------------

def test_plain_sgd_step():
    p = [{"W": np.array([1.0])}]
    st_ = OptimizerState(lr=0.1, decay=0.0, momentum=0.0)
    sgd_update(p, [{"W": np.array([2.0])}], st_)
    assert p[0]["W"][0] == pytest.approx(0.8) and st_.updates == 1


def test_nesterov_two_steps_by_hand():
    p = [{"W": np.array([1.0])}]
    s = OptimizerState(lr=0.1, decay=0.0, momentum=0.9)
    sgd_update(p, [{"W": np.array([1.0])}], s)
    # v1 = -0.1, theta1 = 1 + 0.9 * -0.1 - 0.1 = 0.81
    assert p[0]["W"][0] == pytest.approx(0.81)
    sgd_update(p, [{"W": np.array([1.0])}], s)
    # v2 = 0.9 * -0.1 - 0.1 = -0.19, theta2 = 0.81 + 0.9 * -0.19 - 0.1 = 0.539
    assert p[0]["W"][0] == pytest.approx(0.539)


def test_zero_gradient_step():
    p = [{"W": np.array([1.0, -2.0])}]
    s = OptimizerState()
    sgd_update(p, [{"W": np.zeros(2)}], s)
    assert p[0]["W"].tolist() == [1.0, -2.0]
    s.velocities[0]["W"][:] = [0.5, -1.0]
    sgd_update(p, [{"W": np.zeros(2)}], s)
    assert s.velocities[0]["W"].tolist() == pytest.approx([0.45, -0.9])


def test_effective_lr_decay_and_plateau():
    s = OptimizerState()
    assert s.effective_lr(100000) == pytest.approx(0.0025)
    lrs = [s.effective_lr(t) for t in range(0, 10**6, 997)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert s.observe_validation(1.0) is False
    reduced = [s.observe_validation(1.0) for _ in range(10)]
    assert reduced == [False] * 9 + [True] and s.reductions == 1
    assert s.effective_lr(0) == pytest.approx(0.0005)
    assert [s.observe_validation(1.0) for _ in range(10)][-1] is True


def test_sgd_rejects_bad_gradients():
    p = [{"W": np.ones(2)}]
    with pytest.raises(FloatingPointError):
        sgd_update(p, [{"W": np.array([np.nan, 0.0])}], OptimizerState())
    with pytest.raises(ValueError):
        sgd_update(p, [{"W": np.ones(3)}], OptimizerState())


# -- gradient checks ------------------------------------------------------------------

KIND_SPECS = {
    "dense-only": NetworkSpec((5,), [dense(4, "tanh"), dense(3, "sigmoid"), dense(1, "linear")]),
    "conv-minpool-concat": NetworkSpec((6, 6, 2), [
        conv(3, 3, name="c"), max_pool(2, inputs=["c"], name="mx"), min_pool(2, inputs=["c"], name="mn"),
        concat("mn", "mx"), dense(3), dense(1, "linear")]),
    "strided-conv-dropout": NetworkSpec((7, 7, 1), [conv(2, 5, 2), dropout(0.3), dense(2), dense(1, "linear")]),
    "bce": NetworkSpec((4,), [dense(3), dense(1, "sigmoid")], loss="bce"),
    "rank": NetworkSpec((4,), [dense(3), dense(1, "linear")], loss="pairwise-rank"),
}


@pytest.mark.parametrize("name", sorted(KIND_SPECS))
def test_gradient_check_layer_kinds(name):
    rep = gradient_check(KIND_SPECS[name], seed=1)
    assert rep.passed, rep.max_rel_error


def test_gradient_check_catches_corrupted_backward():
    def broken(spec, params, trace, g, need_input_grad=False):
        grads, dx = backward(spec, params, trace, g, need_input_grad)
        grads[0]["W"] = grads[0]["W"] * 1.5
        return grads, dx
    rep = gradient_check(KIND_SPECS["dense-only"], seed=1, backward_fn=broken)
    assert not rep.passed
