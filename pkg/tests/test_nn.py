import json

import numpy as np
import pytest

from varisk.nn import (AdamState, MlpModel, adam_step, compute_gradients, dumps_model, forward,
                       init_model, model_from_dict, mse)


def fd_gradients(m, X, Y, h=1e-5):
    """Central differences over every parameter."""
    params = [p.copy() for p in m.params()]
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = compute_gradients(m.with_params(params), X, Y)[0]
            p[idx] = old - h
            dn = compute_gradients(m.with_params(params), X, Y)[0]
            p[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out.append(g)
    return out


def max_rel_error(a, b):
    return max(float(np.linalg.norm(x - y) / max(np.linalg.norm(x) + np.linalg.norm(y), 1e-12))
               for x, y in zip(a, b))


def random_model(rng, dims, seed):
    m = init_model(dims, seed=seed)
    m.biases = [rng.normal(0, 0.3, b.shape) for b in m.biases]
    m.x_lo, m.x_hi = -np.ones(dims[0]), 2 * np.ones(dims[0])
    m.y_mean, m.y_std = rng.normal(size=dims[-1]), rng.uniform(0.5, 2, dims[-1])
    return m


class TestInit:
    def test_param_count(self):
        # 17*12+12 + 12*8+8 + 8*7+7
        assert init_model([17, 12, 8, 7]).n_params == 383
        assert init_model([15, 12, 8, 13]).n_params == 192 + 104 + 117

    def test_deterministic_and_zero_bias(self):
        a, b = init_model([15, 12, 8, 13], 4), init_model([15, 12, 8, 13], 4)
        for x, y in zip(a.params(), b.params()):
            assert np.array_equal(x, y)
        assert all(not bb.any() for bb in a.biases)
        assert not np.array_equal(a.weights[0], init_model([15, 12, 8, 13], 5).weights[0])

    def test_scales(self):
        m = init_model([400, 300, 200], 0)
        assert m.weights[0].std() == pytest.approx(np.sqrt(2 / 400), rel=0.02)
        lim = np.sqrt(6 / 500)
        assert np.abs(m.weights[1]).max() <= lim
        assert m.weights[1].std() == pytest.approx(lim / np.sqrt(3), rel=0.02)

    @pytest.mark.parametrize("dims", [[3], [3, 0, 2], [0, 1]])
    def test_bad_dims(self, dims):
        with pytest.raises(ValueError):
            init_model(dims)


class TestForward:
    def test_zero_weights(self):
        m = init_model([4, 3, 2], 0)
        m = m.with_params([np.zeros_like(p) for p in m.params()])
        assert np.array_equal(forward(m, np.random.default_rng(0).normal(size=(5, 4))),
                              np.zeros((5, 2)))

    def test_identity_layer(self):
        m = MlpModel([3, 3], [np.eye(3)], [np.zeros(3)], x_lo=np.zeros(3), x_hi=2 * np.ones(3))
        x = np.array([1.0, 2.0, -4.0])
        assert np.array_equal(forward(m, x), x / 2)

    def test_matches_straight_line_oracle(self, rng):
        m = random_model(rng, [5, 4, 3], 1)
        x = rng.normal(size=5)
        xn = [(x[i] - m.x_lo[i]) / (m.x_hi[i] - m.x_lo[i]) for i in range(5)]
        h = [max(0.0, sum(m.weights[0][j, i] * xn[i] for i in range(5)) + m.biases[0][j])
             for j in range(4)]
        out = [sum(m.weights[1][k, j] * h[j] for j in range(4)) + m.biases[1][k] for k in range(3)]
        assert np.allclose(forward(m, x), out, atol=1e-12, rtol=0)
        den = [o * s + mu for o, s, mu in zip(out, m.y_std, m.y_mean)]
        assert np.allclose(forward(m, x, denormalize=True), den, atol=1e-12, rtol=0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_model([4, 2]), np.zeros(3))

    def test_normalization_round_trip(self, rng):
        m = random_model(rng, [3, 4], 0)
        y = rng.normal(size=(10, 4)) * 50
        assert np.allclose(m.denormalize_y(m.normalize_y(y)), y, atol=1e-12, rtol=0)


class TestGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(77)
        worst = 0.0
        for case in range(20):
            dims = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
            m = random_model(rng, dims, case)
            X = rng.uniform(-1, 2, size=(int(rng.integers(1, 8)), dims[0]))
            Y = rng.normal(size=(len(X), dims[-1]))
            _, g = compute_gradients(m, X, Y)
            worst = max(worst, max_rel_error(g, fd_gradients(m, X, Y)))
        assert worst <= 1e-4

    def test_single_linear_unit(self):
        w, b, x, t = 0.7, -0.2, 1.5, 2.0
        m = MlpModel([1, 1], [np.array([[w]])], [np.array([b])])
        loss, (gA, gb) = compute_gradients(m, [[x]], [[t]])
        assert loss == pytest.approx((w * x + b - t) ** 2)
        assert gA[0, 0] == pytest.approx(2 * (w * x + b - t) * x, abs=1e-15)
        assert gb[0] == pytest.approx(2 * (w * x + b - t), abs=1e-15)

    def test_perfect_fit(self, rng):
        m = random_model(rng, [3, 4, 2], 0)
        X = rng.uniform(size=(6, 3))
        Y = forward(m, X, denormalize=True)
        loss, grads = compute_gradients(m, X, Y)
        assert loss == pytest.approx(0.0, abs=1e-28)
        assert all(np.allclose(g, 0.0, atol=1e-14) for g in grads)

    def test_relu_subgradient_zero_at_kink(self):
        m = MlpModel([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
        _, grads = compute_gradients(m, [[0.0]], [[1.0]])
        assert grads[0][0, 0] == 0.0 and grads[1][0] == 0.0

    def test_row_permutation(self, rng):
        m = random_model(rng, [4, 5, 3], 2)
        X, Y = rng.normal(size=(9, 4)), rng.normal(size=(9, 3))
        perm = rng.permutation(9)
        la, ga = compute_gradients(m, X, Y)
        lb, gb = compute_gradients(m, X[perm], Y[perm])
        assert la == pytest.approx(lb, rel=1e-14)
        assert all(np.allclose(a, b, rtol=1e-12, atol=1e-15) for a, b in zip(ga, gb))

    def test_errors(self):
        m = init_model([2, 1])
        with pytest.raises(ValueError):
            compute_gradients(m, np.zeros((0, 2)), np.zeros((0, 1)))
        with pytest.raises(ValueError):
            compute_gradients(m, np.zeros((2, 2)), np.zeros((3, 1)))


class TestAdam:
    def test_zero_gradient(self):
        m = init_model([3, 2], 0)
        m2, s = adam_step(AdamState(), m, [np.zeros_like(p) for p in m.params()])
        assert s.t == 1
        assert all(np.array_equal(a, b) for a, b in zip(m.params(), m2.params()))

    @pytest.mark.parametrize("g", [3.0, -0.02, 0.5])
    def test_first_step_is_sign(self, g):
        m = MlpModel([1, 1], [np.array([[0.5]])], [np.array([0.0])])
        lr = 1e-3
        m2, _ = adam_step(AdamState(lr=lr), m, [np.array([[g]]), np.array([0.0])])
        delta = m2.weights[0][0, 0] - 0.5
        # bias-corrected moments at t=1 are exactly g and g^2
        expected = -lr * g / (abs(g) + 1e-8)
        assert delta == pytest.approx(expected, abs=1e-15)
        assert abs(delta + lr * np.sign(g)) <= 1e-6 * lr

    def test_deterministic(self, rng):
        m = init_model([3, 2], 0)
        grads = [rng.normal(size=p.shape) for p in m.params()]
        a = adam_step(AdamState(), m, grads)[0]
        b = adam_step(AdamState(), m, grads)[0]
        assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))

    def test_inputs_untouched_and_shape_check(self):
        m = init_model([3, 2], 0)
        before = [p.copy() for p in m.params()]
        adam_step(AdamState(), m, [np.ones_like(p) for p in m.params()])
        assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))
        with pytest.raises(ValueError):
            adam_step(AdamState(), m, [np.ones(3)])


def test_model_json_round_trip(rng):
    m = random_model(rng, [5, 4, 3], 3)
    doc = json.loads(dumps_model(m))
    assert doc["format_version"] == 1 and doc["layer_dims"] == [5, 4, 3]
    assert doc["activations"] == {"hidden": "relu", "output": "linear"}
    assert doc["adam"] == {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
    assert doc["weights"][0][:5] == m.weights[0][0].tolist()    # row-major
    back = model_from_dict(doc)
    x = rng.normal(size=(3, 5))
    assert np.array_equal(forward(back, x, True), forward(m, x, True))
    with pytest.raises(ValueError):
        model_from_dict({**doc, "format_version": 2})


def test_mse_empty_is_nan():
    assert np.isnan(mse(init_model([2, 1]), np.zeros((0, 2)), np.zeros((0, 1))))
