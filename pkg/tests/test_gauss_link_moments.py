import math

import numpy as np
import pytest
from scipy.special import expit, ndtr

from models.errors import InvalidOrder, NonFiniteIntegral, NonPSDCovariance, UnknownLink
from models.gauss_link_moments import (
    BivariateIndexLaw,
    IndexLaw,
    eval_bivariate,
    eval_fk,
    eval_fk_grad,
    hermite_rule,
    link_moments,
)
from models.links import (
    IDENTITY,
    LOG_LINEAR,
    LOGISTIC,
    PROBIT,
    SHIFTED_LOGISTIC,
    LinkSpec,
    builtin_link_names,
    get_link,
)


class TestClosedForms:

    @pytest.mark.parametrize("lam,gamma2", [(-1.0, 0.5), (0.0, 1.0), (0.7, 2.0), (1.0, 0.25)])
    def test_log_linear_all_orders(self, lam, gamma2):
        values = link_moments(LOG_LINEAR, IndexLaw(lam, gamma2))
        np.testing.assert_allclose(values, math.exp(lam + gamma2 / 2.0), rtol=1e-10)

    def test_probit_mean(self):
        value = eval_fk(PROBIT, 0, IndexLaw(0.5, 2.0))
        assert value == pytest.approx(float(ndtr(0.5 / math.sqrt(3.0))), abs=1e-8)

    @pytest.mark.parametrize("lam,gamma2", [(-1.0, 0.3), (0.5, 2.0), (1.2, 4.0)])
    def test_probit_slope(self, lam, gamma2):
        s = 1.0 + gamma2
        expected = math.exp(-lam * lam / (2.0 * s)) / math.sqrt(2.0 * math.pi * s)
        assert eval_fk(PROBIT, 1, IndexLaw(lam, gamma2)) == pytest.approx(expected, abs=1e-8)

    @pytest.mark.parametrize("gamma2", [0.1, 1.0, 9.0])
    def test_logistic_symmetric_mean(self, gamma2):
        assert eval_fk(LOGISTIC, 0, IndexLaw(0.0, gamma2)) == pytest.approx(0.5, abs=1e-10)

    def test_identity_link(self):
        np.testing.assert_allclose(link_moments(IDENTITY, IndexLaw(0.3, 2.0)), [0.3, 1.0, 0.0, 0.0], atol=1e-12)

    def test_degenerate_variance(self):
        assert eval_fk(LOGISTIC, 0, IndexLaw(0.4, 0.0)) == pytest.approx(float(expit(0.4)), abs=1e-15)
        assert eval_fk(LOGISTIC, 1, IndexLaw(0.4, 1e-10)) == pytest.approx(
            float(expit(0.4) * (1 - expit(0.4))), abs=1e-8
        )

    def test_hermite_weights_normalized(self):
        _, weights = hermite_rule(64)
        assert weights.sum() == pytest.approx(1.0, abs=1e-13)


class TestSteinDerivatives:

    @pytest.mark.parametrize("name", builtin_link_names())
    @pytest.mark.parametrize("k", [0, 1])
    def test_gradient_matches_finite_differences(self, name, k):
        link = get_link(name)
        h = 1e-5
        for lam in np.linspace(-2.0, 2.0, 5):
            for gamma2 in np.linspace(0.05, 4.0, 5):
                d_lam, d_gamma2 = eval_fk_grad(link, k, IndexLaw(lam, gamma2))
                fd_lam = (eval_fk(link, k, IndexLaw(lam + h, gamma2)) - eval_fk(link, k, IndexLaw(lam - h, gamma2))) / (2 * h)
                fd_gamma2 = (eval_fk(link, k, IndexLaw(lam, gamma2 + h)) - eval_fk(link, k, IndexLaw(lam, gamma2 - h))) / (2 * h)
                scale = max(1.0, abs(fd_lam), abs(fd_gamma2))
                assert abs(d_lam - fd_lam) <= 1e-6 * scale
                assert abs(d_gamma2 - fd_gamma2) <= 1e-6 * scale

    def test_gradient_order_out_of_range(self):
        with pytest.raises(InvalidOrder):
            eval_fk_grad(LOGISTIC, 2, IndexLaw(0.0, 1.0))

    def test_order_out_of_range(self):
        with pytest.raises(InvalidOrder):
            link_moments(LOGISTIC, IndexLaw(0.0, 1.0), (4,))


class TestIndexLaw:

    def test_negative_variance_rejected(self):
        with pytest.raises(NonPSDCovariance):
            IndexLaw(0.0, -0.1)

    def test_non_finite_law_rejected(self):
        with pytest.raises(NonFiniteIntegral):
            IndexLaw(float("nan"), 1.0)
        with pytest.raises(NonFiniteIntegral):
            IndexLaw(0.0, float("inf"))

    def test_non_finite_integral(self):
        explode = LinkSpec(
            "explode",
            value=lambda t: np.exp(t * t),
            d1=lambda t: 2 * t * np.exp(t * t),
            d2=lambda t: (2 + 4 * t * t) * np.exp(t * t),
            d3=lambda t: (12 * t + 8 * t ** 3) * np.exp(t * t),
        )
        with pytest.raises(NonFiniteIntegral):
            eval_fk(explode, 0, IndexLaw(0.0, 1.0))


class TestBivariate:

    def test_identity_pair_gives_covariance(self):
        law = BivariateIndexLaw(0.0, 0.0, 1.5, 0.8, 0.4)
        assert eval_bivariate(IDENTITY, IDENTITY, law) == pytest.approx(0.4, abs=1e-10)

    def test_independent_logistic(self):
        law = BivariateIndexLaw(0.0, 0.0, 1.0, 1.0, 0.0)
        assert eval_bivariate(LOGISTIC, LOGISTIC, law) == pytest.approx(0.25, abs=1e-10)

    def test_perfect_correlation_collapse(self):
        law = BivariateIndexLaw(0.3, 0.3, 1.0, 1.0, 1.0)
        nodes, weights = hermite_rule(256)
        expected = float(np.dot(weights, expit(0.3 + math.sqrt(2.0) * nodes) ** 2))
        assert eval_bivariate(LOGISTIC, LOGISTIC, law) == pytest.approx(expected, abs=1e-8)

    def test_slightly_indefinite_is_clipped(self):
        law = BivariateIndexLaw(0.0, 0.0, 1.0, 1.0, 1.0 + 1e-9)
        clipped, changed = law.projected()
        assert changed
        assert clipped.gamma12 == pytest.approx(1.0)

    def test_indefinite_rejected(self):
        with pytest.raises(NonPSDCovariance):
            eval_bivariate(LOGISTIC, LOGISTIC, BivariateIndexLaw(0.0, 0.0, 1.0, 1.0, 1.1))


class TestLinkRegistry:

    def test_lookup_is_case_insensitive(self):
        assert get_link(" Logistic ") is LOGISTIC

    def test_unknown_link(self):
        with pytest.raises(UnknownLink):
            get_link("cauchit")

    def test_shifted_logistic_range(self):
        values = SHIFTED_LOGISTIC.value(np.array([-50.0, 0.0, 50.0]))
        np.testing.assert_allclose(values, [0.1, 0.55, 1.0], atol=1e-12)
        assert SHIFTED_LOGISTIC.is_binary_range
        assert not LOG_LINEAR.is_binary_range
