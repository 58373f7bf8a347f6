import numpy as np
import pytest

from noan import autodiff as ad
from noan.autodiff import Tensor
from noan.model import ModelConfig, NoanModel
from noan.regularizers import (
    N_RULES, NumericGuardError, RegularizerWeights, bce_loss, law_scores, logic_regularizers,
    probe_law_scores, total_loss,
)

SIG10 = 1 / (1 + np.exp(-10.0))


def identity_not_model(d=4):
    m = NoanModel(ModelConfig(d=d, hidden=d, seed=0))
    m.store["not.w1"].value[...] = np.eye(d)
    m.store["not.w2"].value[...] = np.eye(d)
    m.store["not.b1"].value[...] = 0.0
    m.store["not.b2"].value[...] = 0.0
    m.store["true"].value[...] = np.abs(m.true.value) + 0.1
    return m


def reference_laws(W, m):
    """Plain numpy restatement of the ten laws."""
    w = {k: t.value for k, t in m.store.items()}
    alpha = m.cfg.alpha

    def mlp(name, x):
        return w[f"{name}.w2"] @ np.maximum(w[f"{name}.w1"] @ x + w[f"{name}.b1"], 0) + w[f"{name}.b2"]

    def sim(u, v):
        return 1 / (1 + np.exp(-alpha * (u @ v) / np.linalg.norm(u) / np.linalg.norm(v)))

    T = w["true"]
    F = mlp("not", T)
    AND = lambda a, b: mlp("and", np.concatenate([a, b]))  # noqa: E731
    OR = lambda a, b: mlp("or", np.concatenate([a, b]))  # noqa: E731
    r = np.zeros(N_RULES)
    for x in list(W) + [T]:
        r[0] += sim(mlp("not", x), x)
    for x in W:
        nx = mlp("not", x)
        r[1] += 1 - sim(mlp("not", nx), x)
        r[2] += 1 - sim(AND(x, T), x)
        r[3] += 1 - sim(AND(x, F), F)
        r[4] += 1 - sim(AND(x, x), x)
        r[5] += 1 - sim(AND(x, nx), F)
        r[6] += 1 - sim(OR(x, F), x)
        r[7] += 1 - sim(OR(x, T), T)
        r[8] += 1 - sim(OR(x, x), x)
        r[9] += 1 - sim(OR(x, nx), T)
    return r


def test_ten_terms_match_reference():
    m = NoanModel(ModelConfig(d=6, seed=2))
    W = np.random.default_rng(0).normal(size=(5, 6))
    got = [r.item() for r in logic_regularizers(Tensor(W), m)]
    assert len(got) == N_RULES
    np.testing.assert_allclose(got, reference_laws(W, m), rtol=0, atol=1e-10)


def test_single_vector_accepted():
    m = NoanModel(ModelConfig(d=4))
    v = np.array([0.2, -0.4, 0.9, 0.1])
    np.testing.assert_allclose(law_scores(Tensor(v), m), reference_laws([v], m), atol=1e-10)


def test_identity_not_double():
    m = identity_not_model()
    W = np.abs(np.random.default_rng(1).normal(size=(3, 4))) + 0.1
    r = law_scores(Tensor(W), m)
    # NOT(w) = w: r1 sums over W and T, r2 over W
    assert r[0] == pytest.approx(4 * 0.9999546, abs=1e-6)
    assert r[1] == pytest.approx(3 * 4.54e-5, abs=1e-6)


def test_finite_and_nonnegative():
    m = NoanModel(ModelConfig(d=8, seed=5))
    r = law_scores(Tensor(np.random.default_rng(2).normal(size=(10, 8))), m)
    assert all(np.isfinite(x) and x >= 0 for x in r)


def test_empty_set_rejected():
    m = NoanModel(ModelConfig(d=4))
    with pytest.raises(ValueError):
        logic_regularizers(Tensor(np.zeros((0, 4))), m)


class TestBCE:
    def test_half(self):
        assert bce_loss(Tensor([0.5]), [1]).item() == pytest.approx(0.6931, abs=1e-4)

    def test_confident_correct(self):
        assert bce_loss(Tensor([SIG10]), [1]).item() == pytest.approx(4.54e-5, abs=1e-7)

    def test_negative_label(self):
        assert bce_loss(Tensor([0.2, 0.9]), [0, 1]).item() == pytest.approx(
            -np.log(0.8) - np.log(0.9), abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_guard(self, p):
        with pytest.raises(NumericGuardError):
            bce_loss(Tensor([p]), [1])

    def test_bad_label(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor([0.5]), [0.5])


def test_length_penalty_unit_vector():
    m = NoanModel(ModelConfig(d=4))
    lb = total_loss(Tensor([0.5]), [1], Tensor(np.array([[1.0, 0, 0, 0]])), m)
    assert lb.len_penalty == 1.0


def test_recomposition():
    m = NoanModel(ModelConfig(d=6, seed=3))
    w = RegularizerWeights(lambda_l=0.3, lambda_len=0.01, lambda_theta=0.002)
    W = Tensor(np.random.default_rng(4).normal(size=(7, 6)))
    lb = total_loss(Tensor([0.3, 0.8]), [0, 1], W, m, w)
    assert lb.total == pytest.approx(lb.recomposed(), abs=1e-12)
    theta = sum(float((t.value ** 2).sum()) for _, t in m.store.trainable_items())
    assert lb.theta_penalty == pytest.approx(theta, rel=1e-12)


def test_not_module_gets_gradient_from_laws_alone():
    m = NoanModel(ModelConfig(d=6, seed=8))
    m.store.zero_grad()
    rs = logic_regularizers(Tensor(np.random.default_rng(5).normal(size=(4, 6))), m)
    total = rs[0]
    for r in rs[1:]:
        total = ad.add(total, r)
    ad.backward(total)
    for name in ("not", "and", "or"):
        assert np.abs(m.store[f"{name}.w1"].grad).sum() > 0
    m.store.zero_grad()


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        RegularizerWeights(lambda_l=-1)


def test_probe_set():
    m = NoanModel(ModelConfig(d=8))
    scores, n = probe_law_scores(m)
    assert len(scores) == N_RULES and n > 156
