"""Dense engine tests: every gradient is checked against central
finite differences computed in this file."""

import numpy as np
import pytest

from qadv.errors import DimensionMismatch, TraceMismatch
from qadv.nn import Adam, Mlp, MlpSpec, bce_loss, mse_loss


def fd_param_grads(net, x, y, h=1e-5):
    """Finite-difference d(MSE)/d(param) in eval mode."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = mse_loss(net.predict(x), y)[0]
            flat[k] = orig - h
            dn = mse_loss(net.predict(x), y)[0]
            flat[k] = orig
            gf[k] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return num / den


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            MlpSpec((8,), ("relu",))
        with pytest.raises(ValueError):
            MlpSpec((8, 4), ("relu", "relu"))
        with pytest.raises(ValueError):
            MlpSpec((8, 4), ("swish",))
        with pytest.raises(ValueError):
            MlpSpec((8, 4), ("relu",), (1.0,))
        spec = MlpSpec((8, 4, 2), ("relu", "identity"))
        assert spec.dropout == (0.0, 0.0)
        assert spec.n_layers == 2


class TestForward:
    def test_identity_relu_pinned(self):
        spec = MlpSpec((2, 2), ("relu",))
        net = Mlp(spec, [np.eye(2)], [np.zeros(2)])
        out, _ = net.forward(np.array([[1.0, -1.0]]))
        assert np.allclose(out, [[1.0, 0.0]])

    def test_glorot_bounds_and_zero_bias(self):
        spec = MlpSpec((64, 32, 8), ("relu", "identity"))
        net = Mlp.init(spec, np.random.default_rng(0))
        for w, (fi, fo) in zip(net.weights, [(64, 32), (32, 8)]):
            limit = np.sqrt(6.0 / (fi + fo))
            assert np.all(np.abs(w) <= limit)
            # Not degenerate: draws should fill most of the interval.
            assert w.max() > 0.8 * limit and w.min() < -0.8 * limit
        assert all(np.all(b == 0.0) for b in net.biases)

    def test_init_deterministic(self):
        spec = MlpSpec((8, 4), ("relu",))
        a = Mlp.init(spec, np.random.default_rng(123))
        b = Mlp.init(spec, np.random.default_rng(123))
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))

    def test_bad_input_shape(self):
        net = Mlp.init(MlpSpec((8, 4), ("relu",)), np.random.default_rng(0))
        with pytest.raises(DimensionMismatch):
            net.forward(np.zeros((3, 7)))

    def test_parameter_count(self):
        net = Mlp.init(
            MlpSpec((17, 32, 16, 1), ("relu", "relu", "identity")),
            np.random.default_rng(0),
        )
        assert net.n_parameters() == 576 + 528 + 17


class TestDropout:
    def test_eval_mode_deterministic_no_rng(self):
        spec = MlpSpec((8, 8), ("relu",), (0.5,))
        net = Mlp.init(spec, np.random.default_rng(1))
        x = np.random.default_rng(2).random((4, 8))
        a, trace = net.forward(x)
        b, _ = net.forward(x)
        assert np.array_equal(a, b)
        assert trace.masks == [None]

    def test_train_mode_requires_rng(self):
        spec = MlpSpec((4, 4), ("relu",), (0.25,))
        net = Mlp.init(spec, np.random.default_rng(1))
        with pytest.raises(ValueError):
            net.forward(np.zeros((2, 4)), train=True)

    def test_masks_only_on_dropout_layers(self):
        spec = MlpSpec((4, 4, 4), ("relu", "relu"), (0.0, 0.25))
        net = Mlp.init(spec, np.random.default_rng(1))
        _, trace = net.forward(
            np.ones((2, 4)), train=True, rng=np.random.default_rng(3)
        )
        assert trace.masks[0] is None and trace.masks[1] is not None

    def test_inverted_scaling_unbiased(self):
        # E[mask * a] = a with survivors scaled by 1/(1-p).
        p = 0.25
        rng = np.random.default_rng(11)
        n = 100_000
        masks = (rng.random(n) >= p) / (1.0 - p)
        assert abs(masks.mean() - 1.0) < 0.01

    def test_mask_values(self):
        spec = MlpSpec((4, 256), ("identity",), (0.25,))
        net = Mlp(spec, [np.ones((256, 4))], [np.zeros(256)])
        _, trace = net.forward(
            np.ones((1, 4)), train=True, rng=np.random.default_rng(5)
        )
        mask = trace.masks[0]
        assert set(np.unique(mask)) == {0.0, 1.0 / 0.75}


class TestBackward:
    def test_single_linear_layer_analytic(self):
        rng = np.random.default_rng(7)
        net = Mlp.init(MlpSpec((5, 3), ("identity",)), rng)
        x = rng.standard_normal((6, 5))
        y = rng.standard_normal((6, 3))
        pred, trace = net.forward(x)
        _, d_pred = mse_loss(pred, y)
        grads, _ = net.backward(trace, d_pred)
        n = pred.size
        dw_analytic = (2.0 * (pred - y) / n).T @ x
        db_analytic = (2.0 * (pred - y) / n).sum(axis=0)
        assert np.max(np.abs(grads[0] - dw_analytic)) < 1e-10
        assert np.max(np.abs(grads[1] - db_analytic)) < 1e-10

    def test_random_specs_match_finite_differences(self):
        rng = np.random.default_rng(13)
        acts = ("relu", "sigmoid", "identity")
        for trial in range(15):
            n_layers = int(rng.integers(1, 4))
            dims = tuple(int(rng.integers(1, 33)) for _ in range(n_layers + 1))
            activations = tuple(str(rng.choice(acts)) for _ in range(n_layers))
            net = Mlp.init(MlpSpec(dims, activations), np.random.default_rng(trial))
            x = rng.standard_normal((4, dims[0]))
            # Keep relu pre-activations away from the kink where the
            # finite-difference oracle itself is ill-defined.
            y = rng.standard_normal((4, dims[-1]))
            pred, trace = net.forward(x)
            _, d_pred = mse_loss(pred, y)
            grads, _ = net.backward(trace, d_pred)
            fd = fd_param_grads(net, x, y)
            for g, f in zip(grads, fd):
                assert rel_err(g, f) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        net = Mlp.init(MlpSpec((6, 8, 2), ("sigmoid", "identity")), rng)
        x = rng.standard_normal((3, 6))
        y = rng.standard_normal((3, 2))
        pred, trace = net.forward(x)
        _, d_pred = mse_loss(pred, y)
        _, d_x = net.backward(trace, d_pred)
        h = 1e-6
        fd = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                up, dn = x.copy(), x.copy()
                up[i, j] += h
                dn[i, j] -= h
                fd[i, j] = (
                    mse_loss(net.predict(up), y)[0] - mse_loss(net.predict(dn), y)[0]
                ) / (2 * h)
        assert rel_err(d_x, fd) < 1e-6

    def test_dropout_gradient_uses_stored_mask(self):
        # With a frozen mask the network is deterministic, so finite
        # differences of the replayed masked forward must match.
        spec = MlpSpec((4, 8, 1), ("relu", "identity"), (0.5, 0.0))
        net = Mlp.init(spec, np.random.default_rng(19))
        rng = np.random.default_rng(23)
        x = rng.standard_normal((5, 4))
        y = rng.standard_normal((5, 1))
        pred, trace = net.forward(x, train=True, rng=np.random.default_rng(29))
        _, d_pred = mse_loss(pred, y)
        grads, _ = net.backward(trace, d_pred)
        mask = trace.masks[0]

        def masked_loss():
            a = np.maximum(x @ net.weights[0].T + net.biases[0], 0.0) * mask
            out = a @ net.weights[1].T + net.biases[1]
            return mse_loss(out, y)[0]

        h = 1e-6
        w = net.weights[0]
        fd = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = w[i, j]
                w[i, j] = orig + h
                up = masked_loss()
                w[i, j] = orig - h
                dn = masked_loss()
                w[i, j] = orig
                fd[i, j] = (up - dn) / (2 * h)
        assert rel_err(grads[0], fd) < 1e-5

    def test_trace_mismatch(self):
        a = Mlp.init(MlpSpec((4, 4), ("relu",)), np.random.default_rng(0))
        b = Mlp.init(MlpSpec((4, 4), ("relu",)), np.random.default_rng(1))
        _, trace = a.forward(np.zeros((2, 4)))
        with pytest.raises(TraceMismatch):
            b.backward(trace, np.zeros((2, 4)))

    def test_backward_is_pure(self):
        net = Mlp.init(MlpSpec((4, 3), ("sigmoid",)), np.random.default_rng(3))
        x = np.random.default_rng(4).random((2, 4))
        _, trace = net.forward(x)
        d = np.ones((2, 3))
        g1, _ = net.backward(trace, d)
        g2, _ = net.backward(trace, d)
        assert all(np.array_equal(a, b) for a, b in zip(g1, g2))


class TestLosses:
    def test_mse_value_and_gradient(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        target = np.array([[1.0, 1.0], [1.0, 1.0]])
        loss, grad = mse_loss(pred, target)
        assert abs(loss - (0 + 1 + 4 + 9) / 4) < 1e-15
        assert np.allclose(grad, 2 * (pred - target) / 4)

    def test_mse_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mse_loss(np.zeros((2, 1)), np.zeros((2, 2)))

    def test_bce_half_is_ln2(self):
        loss, _ = bce_loss(np.full((4, 1), 0.5), np.ones((4, 1)))
        assert abs(loss - np.log(2.0)) < 1e-12

    def test_bce_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        pred = rng.uniform(0.05, 0.95, size=(6, 1))
        target = (rng.random((6, 1)) > 0.5).astype(float)
        _, grad = bce_loss(pred, target)
        h = 1e-7
        for i in range(6):
            up, dn = pred.copy(), pred.copy()
            up[i] += h
            dn[i] -= h
            fd = (bce_loss(up, target)[0] - bce_loss(dn, target)[0]) / (2 * h)
            assert abs(grad[i, 0] - fd) < 1e-6

    def test_bce_clamped_extremes_finite(self):
        loss, grad = bce_loss(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]]))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


class TestAdam:
    def test_first_step_pinned(self):
        # theta=0, g=1, lr=1e-3: bias correction gives mhat=vhat=1, so
        # the step is lr/(1+eps) ~ 9.9999999e-4.
        p = [np.zeros(1)]
        Adam(lr=1e-3).step(p, [np.ones(1)])
        assert abs(p[0][0] - (-0.000999999995)) < 1e-11

    def test_sign_flip_symmetry(self):
        rng = np.random.default_rng(37)
        g = [rng.standard_normal((3, 2)), rng.standard_normal(4)]
        p_pos = [np.zeros((3, 2)), np.zeros(4)]
        p_neg = [np.zeros((3, 2)), np.zeros(4)]
        opt_pos, opt_neg = Adam(lr=0.01), Adam(lr=0.01)
        for _ in range(5):
            opt_pos.step(p_pos, g)
            opt_neg.step(p_neg, [-x for x in g])
        for a, b in zip(p_pos, p_neg):
            assert np.allclose(a, -b, atol=1e-15)

    def test_updates_in_place(self):
        net = Mlp.init(MlpSpec((2, 2), ("identity",)), np.random.default_rng(0))
        params = net.parameters()
        before = net.weights[0].copy()
        Adam(lr=0.1).step(params, [np.ones_like(p) for p in params])
        assert not np.array_equal(net.weights[0], before)

    def test_converges_on_quadratic(self):
        # Minimise (p - 3)^2; Adam should get close within 2000 steps.
        p = [np.zeros(1)]
        opt = Adam(lr=0.05)
        for _ in range(2000):
            opt.step(p, [2.0 * (p[0] - 3.0)])
        assert abs(p[0][0] - 3.0) < 1e-3
