import numpy as np
import pytest

from moxgate import gradcheck as G
from moxgate import tensor as T


class TestRelativeError:
    def test_exact(self):
        assert G.relative_error(np.ones(3), np.ones(3)) == 0.0

    def test_scaled_by_numeric_max(self):
        assert G.relative_error(np.array([1.0, 2.1]), np.array([1.0, 2.0])) == pytest.approx(0.05, rel=1e-6)

    def test_zero_gradients(self):
        assert G.relative_error(np.zeros(2), np.zeros(2)) == 0.0


class TestChecks:
    def test_numerical_gradient_of_quadratic(self):
        g = G.numerical_gradients(lambda a: float((a["x"] ** 2).sum()), {"x": np.array([1.0, -3.0])})
        np.testing.assert_allclose(g["x"], [2.0, -6.0], atol=1e-8)

    def test_detects_wrong_gradient(self):
        # forward x^2 with a backward that claims 3x
        def broken(x):
            return T._make(x.data**2, (x,), lambda g: (3.0 * x.data * g,), "broken")

        res = G.check("broken", lambda p: T.tensor_sum(broken(p["x"])), {"x": np.array([1.0, 2.0])})
        assert not res.passed
        assert res.max_rel_error == pytest.approx(0.5, rel=1e-6)

    def test_every_op_passes(self):
        results = G.op_checks()
        assert len(results) >= 25
        bad = [(r.name, r.max_rel_error) for r in results if not r.passed]
        assert not bad

    def test_small_model_passes(self):
        res = G.model_check("m", G.small_model_config(), seed=1)
        assert res.passed and res.count > 100

    def test_report(self):
        text = G.report([G.CheckResult("a", 1e-9, 3), G.CheckResult("bb", 1.0, 1)], elapsed=1.5)
        assert "FAIL" in text and "ok" in text and "1.5s" in text
