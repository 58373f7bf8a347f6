import json

import numpy as np
import pytest

from noan import autodiff as ad
from noan.autodiff import ParamStore, ShapeError, Tensor, TrainingError
from noan.gradcheck import check_graph, random_graph


def leaf(x):
    return Tensor(np.array(x, dtype=float), requires_grad=True)


def central_diff(f, x, h=1e-5):
    """Independent finite-difference oracle: perturbs a copy, never calls backward."""
    g = np.zeros_like(x.value)
    for i in np.ndindex(x.value.shape):
        old = x.value[i]
        x.value[i] = old + h
        up = f()
        x.value[i] = old - h
        down = f()
        x.value[i] = old
        g[i] = (up - down) / (2 * h)
    return g


class TestForward:
    def test_cosine_self(self):
        u = Tensor([0.3, -1.2, 2.0])
        assert ad.cosine_similarity(u, u).item() == pytest.approx(1.0, abs=1e-15)

    def test_cosine_orthogonal(self):
        assert ad.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_cosine_zero_norm(self):
        with pytest.raises(ShapeError, match="zero-norm"):
            ad.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_relu(self):
        np.testing.assert_array_equal(ad.relu(Tensor([-2.0, 3.0])).value, [0.0, 3.0])

    def test_matvec_and_concat_shapes(self):
        w = Tensor(np.ones((3, 4)))
        assert ad.matvec(w, Tensor(np.ones(4))).shape == (3,)
        assert ad.matvec(w, Tensor(np.ones((5, 4)))).shape == (5, 3)
        assert ad.concat(Tensor(np.ones(2)), Tensor(np.ones(2))).shape == (4,)

    @pytest.mark.parametrize("build", [
        lambda: ad.add(Tensor(np.ones(2)), Tensor(np.ones(3))),
        lambda: ad.mul(Tensor(np.ones(2)), Tensor(np.ones(3))),
        lambda: ad.matvec(Tensor(np.ones((3, 4))), Tensor(np.ones(3))),
        lambda: ad.concat(Tensor(np.ones(2)), Tensor(np.ones((2, 2)))),
        lambda: ad.dot(Tensor(np.ones(2)), Tensor(np.ones(3))),
    ])
    def test_shape_mismatch(self, build):
        with pytest.raises(ShapeError):
            build()

    def test_sigmoid_extremes_stable(self):
        s = ad.sigmoid(Tensor([-800.0, 0.0, 800.0])).value
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


class TestBackward:
    def test_dot(self):
        x, y = leaf([1, 2]), leaf([3, 4])
        ad.backward(ad.dot(x, y))
        np.testing.assert_array_equal(x.grad, [3, 4])
        np.testing.assert_array_equal(y.grad, [1, 2])

    def test_relu_subgradient(self):
        x = leaf([-1, 2])
        ad.backward(ad.sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0, 1])

    def test_relu_at_zero_is_zero(self):
        x = leaf([0.0])
        ad.backward(ad.sum(ad.relu(x)))
        assert x.grad[0] == 0.0

    def test_non_scalar_root(self):
        with pytest.raises(ShapeError):
            ad.backward(ad.relu(leaf([1.0, 2.0])))

    def test_shared_subexpression_accumulates(self):
        x = leaf([1.0, -2.0])
        y = ad.mul(x, x)
        ad.backward(ad.sum(ad.add(y, y)))
        np.testing.assert_allclose(x.grad, 4 * x.value)

    def test_three_layer_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        w1, b1 = leaf(rng.normal(size=(5, 4))), leaf(rng.normal(size=5))
        w2, b2 = leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=3))
        w3 = leaf(rng.normal(size=(2, 3)))
        x = leaf(rng.normal(size=4))

        def f():
            h = ad.relu(ad.add(ad.matvec(w1, x), b1))
            h = ad.sigmoid(ad.add(ad.matvec(w2, h), b2))
            return ad.l2_norm_sq(ad.matvec(w3, h))

        ad.backward(f())
        for p in (w1, b1, w2, b2, w3, x):
            num = central_diff(lambda: f().item(), p)
            assert ad.relative_error(p.grad, num) <= 1e-4

    def test_batched_rows_match_finite_differences(self):
        rng = np.random.default_rng(4)
        W = leaf(rng.normal(size=(4, 3)))
        v = leaf(rng.normal(size=3))
        m = leaf(rng.normal(size=(3, 6)))

        def f():
            rows = ad.take_rows(ad.stack_rows([W, v]), [0, 4, 2, 2])
            other = ad.repeat_row(v, 4)
            mixed = ad.matvec(m, ad.concat(rows, other))
            return ad.sum(ad.cosine_similarity(mixed, ad.take_rows(W, [1, 1, 0, 3])))

        ad.backward(f())
        for p in (W, v, m):
            assert ad.relative_error(p.grad, central_diff(lambda: f().item(), p)) <= 1e-4

    def test_take_cols(self):
        w = leaf(np.arange(12.0).reshape(3, 4))
        x = leaf([1.0, -1.0])
        ad.backward(ad.l2_norm_sq(ad.matvec(ad.take_cols(w, 1, 3), x)))
        num = central_diff(lambda: ad.l2_norm_sq(ad.matvec(ad.take_cols(w, 1, 3), x)).item(), w)
        assert ad.relative_error(w.grad, num) <= 1e-6
        assert np.all(w.grad[:, [0, 3]] == 0)
        with pytest.raises(ShapeError):
            ad.take_cols(w, 2, 2)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_graphs(self, seed):
        assert check_graph(seed).max_rel_error <= 1e-4

    def test_random_graph_oracle_is_independent(self):
        # same graph, gradient recomputed with the local oracle
        params, build, _ = random_graph(np.random.default_rng(11))
        ad.backward(build())
        for p in params:
            assert ad.relative_error(p.grad, central_diff(lambda: build().item(), p)) <= 1e-4

    def test_no_grad_records_nothing(self):
        x = leaf([1.0, 2.0])
        with ad.no_grad():
            y = ad.sum(ad.mul(x, x))
        assert not y.requires_grad and y.parents == ()


class TestAdam:
    def test_first_step_magnitude(self):
        store = ParamStore()
        p = store.add("p", np.array([0.5]))
        p.grad = np.array([1.0])
        store.adam_step(lr=0.1)
        assert p.value[0] == pytest.approx(0.5 - 0.1, abs=1e-6)

    def test_zero_gradient_leaves_params(self):
        store = ParamStore()
        p = store.add("p", np.array([0.5, -1.0]))
        store.zero_grad()
        store.adam_step(lr=0.1)
        np.testing.assert_array_equal(p.value, [0.5, -1.0])

    def test_frozen_tensor_unchanged(self):
        store = ParamStore()
        t = store.add("true", np.array([1.0, 2.0]), trainable=False)
        t.grad = np.array([5.0, -5.0])
        store.adam_step(lr=0.1)
        np.testing.assert_array_equal(t.value, [1.0, 2.0])

    def test_gradients_zeroed_after_step(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0]))
        p.grad = np.array([2.0])
        store.adam_step(lr=0.01)
        assert p.grad[0] == 0.0

    def test_nonfinite_gradient_names_parameter(self):
        store = ParamStore()
        p = store.add("and.w1", np.array([1.0]))
        p.grad = np.array([np.nan])
        with pytest.raises(TrainingError, match="and.w1"):
            store.adam_step(lr=0.01)

    def test_matches_reference_update(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0, -2.0]))
        m = v = np.zeros(2)
        x = p.value.copy()
        for t, g in enumerate([np.array([0.3, -1.0]), np.array([0.1, 0.5])], 1):
            p.grad = g.copy()
            store.adam_step(lr=0.05)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.value, x, rtol=1e-14)

    def test_unreachable_param_has_zero_grad(self):
        store = ParamStore()
        a = store.add("a", np.array([1.0]))
        b = store.add("b", np.array([1.0]))
        store.zero_grad()
        ad.backward(ad.sum(ad.mul(a, a)))
        assert b.grad[0] == 0.0 and a.grad[0] == 2.0


def test_checkpoint_roundtrip(tmp_path):
    store = ParamStore()
    store.add("w", np.random.default_rng(0).normal(size=(3, 2)))
    store.add("true", np.array([0.1, 0.2]), trainable=False)
    path = tmp_path / "ck.json"
    store.save(path, {"note": "x"})
    loaded, meta = ParamStore.load(path)
    assert meta == {"note": "x"}
    np.testing.assert_array_equal(loaded["w"].value, store["w"].value)
    assert loaded.trainable == {"w": True, "true": False}
    assert json.loads(path.read_text())["format"] == "noan-params/1"


def test_determinism():
    def run():
        rng = np.random.default_rng(5)
        store = ParamStore()
        w = store.add("w", rng.normal(size=(4, 4)))
        x = Tensor(rng.normal(size=4))
        for _ in range(5):
            ad.backward(ad.l2_norm_sq(ad.relu(ad.matvec(w, x))))
            store.adam_step(0.01)
        return w.value.copy()

    assert np.array_equal(run(), run())


def test_relative_error_floor():
    assert ad.relative_error(np.zeros(3), np.full(3, 1e-12)) == pytest.approx(1e-6)
    assert ad.relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.002])) == pytest.approx(0.002 / 2.002)
