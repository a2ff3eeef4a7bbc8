import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moxgate import objective as O
from moxgate import tensor as T
from moxgate.gradcheck import check
from moxgate.objective import FocalLossConfig, OptimizerState, RegularizerConfig, adamw_step
from moxgate.tensor import ParameterError, ShapeError, Tensor


def ce(p):
    return -np.log(np.clip(p, 1e-12, 1.0))


class TestFocalLoss:
    def test_perfect_prediction(self):
        assert O.focal_loss(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1]).item() == 0.0

    def test_half_probability(self):
        # oracle: 0.25 * ln 2
        value = O.focal_loss(Tensor([[0.5, 0.5]]), [0]).item()
        assert value == pytest.approx(0.25 * math.log(2.0), abs=1e-15)
        assert value == pytest.approx(0.173286, abs=1e-6)

    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(0)
        probs = T.softmax(rng.normal(size=(20, 4))).data
        targets = rng.integers(0, 4, size=20)
        got = O.focal_loss(Tensor(probs), targets, FocalLossConfig(gamma=0.0)).item()
        assert abs(got - ce(probs[np.arange(20), targets]).mean()) <= 1e-10

    def test_alpha_weights(self):
        probs = Tensor([[0.5, 0.5], [0.5, 0.5]])
        got = O.focal_loss(probs, [0, 1], FocalLossConfig(alpha=[2.0, 4.0])).item()
        assert got == pytest.approx(3.0 * 0.25 * math.log(2.0), abs=1e-14)

    def test_clamp_keeps_loss_finite(self):
        assert math.isfinite(O.focal_loss(Tensor([[0.0, 1.0]]), [0]).item())

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            O.focal_loss(Tensor([[0.5, 0.5]]), [2])
        with pytest.raises(IndexError):
            O.focal_loss(Tensor([[0.5, 0.5]]), [-1])

    def test_bad_config(self):
        with pytest.raises(ParameterError):
            FocalLossConfig(gamma=-1.0)
        with pytest.raises(ParameterError):
            FocalLossConfig(alpha=[1.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-9, 1.0), st.floats(0.0, 5.0))
    def test_focal_below_cross_entropy(self, p, gamma):
        probs = Tensor([[p, 1.0 - p]])
        assert O.focal_loss(probs, [0], FocalLossConfig(gamma=gamma)).item() <= ce(p) + 1e-15

    def test_strictly_decreasing_in_true_probability(self):
        ps = np.linspace(0.01, 0.99, 99)
        vals = [O.focal_loss(Tensor([[p, 1 - p]]), [0]).item() for p in ps]
        assert np.all(np.diff(vals) < 0)


class TestPenalties:
    def test_balance_uniform(self):
        assert O.weight_balance_penalty(Tensor(np.full(3, 1 / 3))).item() == pytest.approx(4 / 3, abs=1e-15)

    def test_balance_vertex(self):
        assert O.weight_balance_penalty(Tensor([1.0, 0.0, 0.0])).item() == 2.0

    def test_balance_simplex_minimum(self):
        rng = np.random.default_rng(0)
        pts = rng.dirichlet(np.ones(3), size=1000)
        vals = np.array([O.weight_balance_penalty(Tensor(w)).item() for w in pts])
        uniform = O.weight_balance_penalty(Tensor(np.full(3, 1 / 3))).item()
        assert np.all(vals >= uniform - 1e-15)
        # the literal form equals ||w||^2 + (M - 2) on the simplex
        np.testing.assert_allclose(vals, (pts**2).sum(axis=1) + 1.0, atol=1e-12)

    def test_balance_gradient_wrt_logits(self):
        res = check("balance", lambda p: O.weight_balance_penalty(T.softmax(p["z"])), {"z": np.array([0.3, -1.0, 2.0])})
        assert res.max_rel_error < 1e-6

    def test_frobenius(self):
        assert O.frobenius_penalty([Tensor(np.zeros((2, 2)))] * 3).item() == 0.0
        z = Tensor(np.zeros((2, 2)))
        assert O.frobenius_penalty([Tensor([[1.0, 2.0], [3.0, 4.0]]), z, z]).item() == 30.0

    def test_frobenius_homogeneous(self):
        rng = np.random.default_rng(1)
        mats = [rng.normal(size=(3, 3)) for _ in range(3)]
        base = O.frobenius_penalty([Tensor(m) for m in mats]).item()
        scaled = O.frobenius_penalty([Tensor(2.5 * m) for m in mats]).item()
        assert scaled == pytest.approx(6.25 * base, rel=1e-14)

    def test_fusion_matrices(self):
        p = {"cross.W_Q": 1, "cross.W_K": 2, "cross.W_V": 3, "clf.W1": 4}
        assert O.fusion_matrices(p) == [1, 2, 3]
        assert O.fusion_matrices({"concat.P": 5, "clf.W1": 4}) == [5]

    def test_negative_lambda(self):
        with pytest.raises(ParameterError):
            RegularizerConfig(lambda1=-1.0)


class TestTotalLoss:
    def test_no_regularisation_equals_focal(self):
        probs = Tensor([[0.2, 0.8], [0.6, 0.4]])
        w = Tensor([0.7, 0.3])
        mats = [Tensor(np.ones((2, 2)))]
        terms = O.total_loss(probs, [1, 0], w, mats, FocalLossConfig(), RegularizerConfig(0.0, 0.0))
        assert terms.total.item() == O.focal_loss(probs, [1, 0]).item()

    def test_perfect_uniform_zero(self):
        terms = O.total_loss(Tensor([[1.0, 0.0]]), [0], Tensor(np.full(3, 1 / 3)), [Tensor(np.zeros((2, 2)))],
                             FocalLossConfig(), RegularizerConfig(1e-3, 1e-4))
        assert terms.total.item() == pytest.approx(1e-3 * 4 / 3, abs=1e-18)
        assert terms.balance == pytest.approx(4 / 3)

    def test_composition(self):
        probs = Tensor([[0.3, 0.7]])
        w = Tensor([0.5, 0.5])
        mats = [Tensor([[1.0, 2.0], [3.0, 4.0]])]
        terms = O.total_loss(probs, [1], w, mats, FocalLossConfig(), RegularizerConfig(0.5, 0.1))
        expected = terms.focal + 0.5 * 0.5 + 0.1 * 30.0
        assert terms.total.item() == pytest.approx(expected, abs=1e-14)

    def test_gradient(self):
        targets = np.array([0, 2])

        def fn(p):
            probs = T.softmax(p["z"])
            return O.total_loss(probs, targets, T.softmax(p["w"]), [p["c"]], FocalLossConfig(),
                                RegularizerConfig(0.3, 0.2)).total

        rng = np.random.default_rng(2)
        res = check("total", fn, {"z": rng.normal(size=(2, 3)), "w": rng.normal(size=3), "c": rng.normal(size=(2, 2))})
        assert res.max_rel_error < 1e-4


class TestAdamW:
    def test_zero_gradient_zero_decay(self):
        p = {"a": np.array([1.0, -2.0])}
        new, _ = adamw_step(p, {"a": np.zeros(2)}, OptimizerState(weight_decay=0.0))
        np.testing.assert_array_equal(new["a"], p["a"])

    def test_first_step_is_signed_lr(self):
        lr, g, eps = 1e-3, 0.7, 1e-8
        new, state = adamw_step({"a": np.array([0.5])}, {"a": np.array([g])},
                                OptimizerState(lr=lr, weight_decay=0.0))
        # bias-corrected first step: m_hat = g, v_hat = g^2
        assert new["a"][0] == pytest.approx(0.5 - lr * g / (abs(g) + eps), abs=1e-15)
        assert abs(new["a"][0] - (0.5 - lr)) < 1e-10
        assert state.step == 1

    def test_decoupled_decay(self):
        theta = np.array([3.0, -1.0])
        new, _ = adamw_step({"a": theta}, {"a": np.zeros(2)}, OptimizerState(lr=1e-4, weight_decay=0.01))
        np.testing.assert_allclose(new["a"], theta * (1 - 1e-6), rtol=0, atol=1e-15)

    def test_logits_exempt_from_decay(self):
        p = {"fusion.logits": np.array([0.4, -0.4]), "w": np.array([0.4])}
        new, _ = adamw_step(p, {k: np.zeros_like(v) for k, v in p.items()}, OptimizerState(weight_decay=0.5))
        np.testing.assert_array_equal(new["fusion.logits"], p["fusion.logits"])
        assert new["w"][0] < 0.4

    def test_inputs_untouched(self):
        p = {"a": np.array([1.0])}
        state = OptimizerState()
        adamw_step(p, {"a": np.array([1.0])}, state)
        assert p["a"][0] == 1.0 and state.step == 0 and not state.m

    def test_step_increases_and_moments_match(self):
        p = {"a": np.ones((2, 3))}
        state = OptimizerState()
        for i in range(3):
            p, state = adamw_step(p, {"a": np.full((2, 3), 0.1)}, state)
            assert state.step == i + 1
            assert state.m["a"].shape == (2, 3) and state.v["a"].shape == (2, 3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adamw_step({"a": np.ones(2)}, {"a": np.ones(3)}, OptimizerState())

    def test_descends_convex_quadratic(self):
        a = np.diag([1.0, 3.0])
        x = np.array([1.0, -2.0])
        f = lambda v: 0.5 * v @ a @ v  # noqa: E731
        new, _ = adamw_step({"x": x}, {"x": a @ x}, OptimizerState(lr=1e-4))
        assert f(new["x"]) < f(x)
