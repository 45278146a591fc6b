import numpy as np
import numpy.testing as npt
import pytest

from dessilbi.nets import (Network, NonFiniteError, ShapeError, backward,
                           build_network, finite_diff_grad, forward, he_init,
                           loss_and_grad)


def conv_reference(x, w, b):
    """Direct same-padded convolution, nested loops, for cross-checking."""
    n, c_in, h, wid = x.shape
    c_out, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    y = np.zeros((n, c_out, h, wid))
    for bi in range(n):
        for o in range(c_out):
            for i in range(h):
                for j in range(wid):
                    y[bi, o, i, j] = np.sum(
                        xp[bi, :, i : i + k, j : j + k] * w[o]
                    ) + b[o]
    return y


class TestBuildNetwork:
    def test_shapes_fold_through_conv_stack(self):
        net = build_network((1, 8, 8), ("conv:4:3", "relu", "maxpool", "flatten",
                                        "dense:10"), "softmax_cross_entropy")
        assert net.output_shape == (10,)
        assert [l.kind for l in net.layers] == ["conv2d", "activation", "maxpool",
                                                "flatten", "dense"]

    def test_dense_after_spatial_shape_needs_flatten(self):
        with pytest.raises(ShapeError, match="flatten"):
            build_network((1, 4, 4), ("dense:3",), "mse")

    def test_unknown_spec_rejected(self):
        with pytest.raises(ValueError, match="unknown layer spec"):
            build_network((4,), ("linear:3",), "mse")

    def test_even_conv_kernel_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            build_network((1, 4, 4), ("conv:2:2",), "mse")

    def test_unknown_loss_rejected(self):
        with pytest.raises(ValueError, match="unknown loss"):
            build_network((4,), ("dense:2",), "hinge")

    def test_smooth_flag_false_with_relu_or_maxpool(self):
        assert build_network((4,), ("dense:3", "tanh", "dense:2"), "mse").smooth
        assert not build_network((4,), ("dense:3", "relu", "dense:2"), "mse").smooth
        assert not build_network((1, 4, 4), ("conv:2:3", "maxpool", "flatten",
                                             "dense:2"), "mse").smooth

    def test_nobias_suffix_drops_the_bias(self):
        net = build_network((4,), ("dense:2:nobias",), "mse")
        assert len(net.layers[0].params) == 1


class TestLayers:
    def test_dense_forward_is_affine(self, rng):
        net = build_network((3,), ("dense:2",), "mse")
        w = rng.standard_normal((2, 3))
        b = rng.standard_normal(2)
        net.set_param(0, w)
        net.set_param(1, b)
        x = rng.standard_normal((5, 3))
        _, out = forward(net, x, x @ w.T + b)
        npt.assert_allclose(out, x @ w.T + b)

    def test_conv_matches_direct_loop(self, rng):
        net = he_init(build_network((2, 5, 5), ("conv:3:3",), "mse"), 0)
        x = rng.standard_normal((2, 2, 5, 5))
        w, b = net.layers[0].params
        want = conv_reference(x, w, b)
        _, out = forward(net, x, want)
        npt.assert_allclose(out, want, atol=1e-12)

    def test_maxpool_takes_window_max(self):
        net = build_network((1, 2, 4), ("maxpool",), "mse")
        x = np.array([[[[1.0, 2.0, 5.0, 0.0],
                        [3.0, 3.0, -1.0, 4.0]]]])
        _, out = forward(net, x, np.zeros((1, 1, 1, 2)))
        npt.assert_allclose(out, [[[[3.0, 5.0]]]])

    def test_maxpool_ties_route_gradient_to_first_entry(self):
        net = build_network((1, 2, 2), ("maxpool", "flatten", "dense:1:nobias"), "mse")
        net.set_param(0, np.ones((1, 1)))
        x = np.full((1, 1, 2, 2), 2.0)  # four-way tie
        grads = backward(net, x, np.zeros((1, 1)))
        # only the dense weight has parameters; check the tie via finite diff on x
        loss0, _ = forward(net, x, np.zeros((1, 1)))
        bumped = x.copy()
        bumped[0, 0, 0, 0] += 1e-6
        loss1, _ = forward(net, bumped, np.zeros((1, 1)))
        assert loss1 != loss0  # first window entry carries the max
        assert grads[0].shape == (1, 1)

    def test_maxpool_rejects_odd_spatial_dims(self):
        with pytest.raises(ShapeError, match="even"):
            build_network((1, 3, 4), ("maxpool",), "mse")

    def test_softplus_tracks_relu_within_log2_over_sharpness(self, rng):
        for c in (1.0, 2.5, 10.0):
            net = build_network((6,), (f"softplus:{c}",), "mse")
            x = rng.standard_normal((4, 6)) * 3
            _, out = forward(net, x, np.zeros((4, 6)))
            assert np.max(np.abs(out - np.maximum(x, 0.0))) <= np.log(2.0) / c + 1e-12

    def test_sigmoid_and_tanh_values(self):
        net = build_network((2,), ("sigmoid",), "mse")
        _, out = forward(net, np.array([[0.0, 100.0]]), np.zeros((1, 2)))
        npt.assert_allclose(out, [[0.5, 1.0]], atol=1e-12)
        net = build_network((1,), ("tanh",), "mse")
        _, out = forward(net, np.array([[0.5]]), np.zeros((1, 1)))
        npt.assert_allclose(out, np.tanh([[0.5]]))


class TestLosses:
    def test_mse_hand_value(self):
        net = build_network((2,), (), "mse")
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        y = np.array([[0.0, 2.0], [3.0, 2.0]])
        loss, _ = forward(net, x, y)
        assert loss == pytest.approx(0.5 * (1.0 + 4.0) / 2)

    def test_cross_entropy_matches_manual_softmax(self, rng):
        net = build_network((3,), (), "softmax_cross_entropy")
        logits = rng.standard_normal((6, 3)) * 4
        y = rng.integers(0, 3, size=6)
        loss, _ = forward(net, logits, y)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        want = -np.mean(np.log(probs[np.arange(6), y]))
        assert loss == pytest.approx(want, rel=1e-12)

    def test_cross_entropy_stable_for_huge_logits(self):
        net = build_network((2,), (), "softmax_cross_entropy")
        loss, _ = forward(net, np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_cross_entropy_validates_labels(self):
        net = build_network((3,), (), "softmax_cross_entropy")
        x = np.zeros((2, 3))
        with pytest.raises(ShapeError, match="labels"):
            forward(net, x, np.array([0, 3]))
        with pytest.raises(ShapeError, match="integers"):
            forward(net, x, np.array([0.0, 1.0]))

    def test_mse_shape_mismatch_rejected(self):
        net = build_network((2,), (), "mse")
        with pytest.raises(ShapeError, match="mse"):
            forward(net, np.zeros((2, 2)), np.zeros((2, 3)))


class TestGradients:
    def test_backward_matches_finite_differences(self, rng):
        net = he_init(build_network(
            (1, 4, 4),
            ("conv:2:3", "softplus", "maxpool", "flatten", "dense:3"),
            "softmax_cross_entropy"), 5)
        x = rng.standard_normal((4, 1, 4, 4))
        y = rng.integers(0, 3, size=4)
        exact = backward(net, x, y)
        approx = finite_diff_grad(net, x, y, h=1e-6)
        for a, b in zip(exact, approx):
            npt.assert_allclose(a, b, atol=1e-6)

    def test_loss_and_grad_returns_both(self, rng):
        net = he_init(build_network((4,), ("dense:3", "tanh", "dense:2"), "mse"), 1)
        x = rng.standard_normal((5, 4))
        y = rng.standard_normal((5, 2))
        loss, grads = loss_and_grad(net, x, y)
        only_loss, _ = forward(net, x, y)
        assert loss == pytest.approx(only_loss)
        assert len(grads) == 4  # two weights, two biases

    def test_finite_diff_needs_positive_step(self, rng):
        net = he_init(build_network((2,), ("dense:1",), "mse"), 0)
        with pytest.raises(ValueError, match="positive"):
            finite_diff_grad(net, np.ones((1, 2)), np.ones((1, 1)), h=0.0)


class TestHeInit:
    def test_same_seed_is_bit_identical(self):
        spec = ((4,), ("dense:8", "relu", "dense:2"), "mse")
        a = he_init(build_network(*spec), 9)
        b = he_init(build_network(*spec), 9)
        for pa, pb in zip(a.param_arrays(), b.param_arrays()):
            npt.assert_array_equal(pa, pb)
        c = he_init(build_network(*spec), 10)
        assert any((pa != pc).any() for pa, pc in zip(a.param_arrays(), c.param_arrays()))

    def test_biases_start_at_zero_and_weights_scale_with_fan_in(self):
        net = he_init(build_network((1, 16, 16), ("conv:8:5", "flatten", "dense:4"),
                                    "mse"), 3)
        conv_w, conv_b = net.layers[0].params
        assert (conv_b == 0.0).all()
        # fan_in = 1 * 5 * 5; sample std should land near sqrt(2/25)
        assert np.std(conv_w) == pytest.approx(np.sqrt(2.0 / 25.0), rel=0.25)


class TestFiniteness:
    def test_non_finite_input_raises(self):
        net = he_init(build_network((2,), ("dense:2",), "mse"), 0)
        x = np.array([[1.0, np.inf]])
        with pytest.raises(NonFiniteError):
            forward(net, x, np.zeros((1, 2)))

    def test_overflowing_weights_raise_during_forward(self):
        net = build_network((1,), ("dense:1:nobias",), "mse")
        net.set_param(0, np.array([[1e200]]))
        x = np.full((1, 1), 1e200)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            forward(net, x, np.zeros((1, 1)))


class TestNetworkContainer:
    def test_clone_is_deep_for_parameters(self):
        net = he_init(build_network((3,), ("dense:2",), "mse"), 0)
        other = net.clone()
        other.set_param(0, np.zeros((2, 3)))
        assert (net.layers[0].params[0] != 0.0).any()

    def test_param_info_names_layer_and_slot(self):
        net = build_network((3,), ("dense:2", "tanh", "dense:1:nobias"), "mse")
        info = net.param_info()
        assert info == [(0, "W", "dense"), (0, "b", "dense"), (2, "W", "dense")]
        assert net.weight_index(2) == 2

    def test_set_param_validates_shape(self):
        net = build_network((3,), ("dense:2",), "mse")
        with pytest.raises(ShapeError):
            net.set_param(0, np.zeros((3, 2)))
