import math

import numpy as np
import pytest
from scipy.special import ndtr

from models.errors import ConfigInvalid, MissingMoment, NonMonotoneMap
from models.gauss_link_moments import BivariateIndexLaw, IndexLaw, eval_bivariate, eval_fk, link_moments
from models.links import IDENTITY, LOGISTIC, PROBIT, SHIFTED_LOGISTIC, LinkSpec
from models.moment_systems import (
    SolveOptions,
    forward_ce,
    forward_gcm,
    forward_glm,
    forward_glm0,
    forward_glm_moments,
    forward_mar,
    glm_jacobian,
    invert_glm,
    invert_glm0,
    reduce_glm_moments,
    solve_ce,
    solve_gcm,
    solve_mar,
)
from models.ustat_moments import MomentSet
from utils.config import GAMMA2_BOUNDS

SINE = LinkSpec("sine", np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))


class TestZeroMeanSystem:

    def test_zero_signal(self):
        assert forward_glm0(LOGISTIC, 0.0) == 0.0

    @pytest.mark.parametrize("link", [LOGISTIC, PROBIT, IDENTITY])
    @pytest.mark.parametrize("gamma2", [0.2, 1.0, 3.0])
    def test_round_trip(self, link, gamma2):
        report = invert_glm0(link, forward_glm0(link, gamma2))
        assert report["gamma2"] == pytest.approx(gamma2, abs=1e-7)
        assert not report.projected

    def test_above_range_is_projected(self):
        report = invert_glm0(LOGISTIC, 10.0)
        assert report.projected
        assert report["gamma2"] == GAMMA2_BOUNDS[1]

    def test_negative_moment_is_projected(self):
        report = invert_glm0(LOGISTIC, -0.01)
        assert report.projected
        assert report["gamma2"] == GAMMA2_BOUNDS[0]

    def test_non_monotone_link(self):
        # f_1(0, g) = exp(-g / 2), so the map g exp(-g) peaks at g = 1
        with pytest.raises(NonMonotoneMap):
            invert_glm0(SINE, 0.2)

    def test_invalid_options(self):
        with pytest.raises(ConfigInvalid):
            SolveOptions(tol_solve=0.0)
        with pytest.raises(ConfigInvalid):
            SolveOptions(gamma2_bounds=(2.0, 1.0))


class TestGeneralMeanSystem:

    def test_zero_mean_reduction(self):
        m1, m2 = forward_glm(LOGISTIC, IndexLaw(0.0, 1.0))
        assert m1 == pytest.approx(0.5, abs=1e-10)
        assert m2 == pytest.approx(forward_glm0(LOGISTIC, 1.0), rel=1e-12)

    def test_probit_round_trip(self):
        s = 3.0
        f1 = math.exp(-0.25 / (2 * s)) / math.sqrt(2 * math.pi * s)
        report = invert_glm(PROBIT, float(ndtr(0.5 / math.sqrt(s))), f1 * f1 * 2.0)
        assert report["lambda"] == pytest.approx(0.5, abs=1e-7)
        assert report["gamma2"] == pytest.approx(2.0, abs=1e-7)

    @pytest.mark.parametrize("lam", [-1.5, 0.0, 0.8])
    @pytest.mark.parametrize("gamma2", [0.3, 1.0, 2.5])
    def test_logistic_round_trip(self, lam, gamma2):
        report = invert_glm(LOGISTIC, *forward_glm(LOGISTIC, IndexLaw(lam, gamma2)))
        assert report["lambda"] == pytest.approx(lam, abs=1e-7)
        assert report["gamma2"] == pytest.approx(gamma2, abs=1e-7)
        assert report.residual_norm <= 1e-9

    def test_zero_mean_consistency(self):
        gamma2 = 1.7
        zero_mean = invert_glm0(LOGISTIC, forward_glm0(LOGISTIC, gamma2))["gamma2"]
        report = invert_glm(LOGISTIC, eval_fk(LOGISTIC, 0, IndexLaw(0.0, gamma2)), forward_glm0(LOGISTIC, gamma2))
        assert report["lambda"] == pytest.approx(0.0, abs=1e-7)
        assert report["gamma2"] == pytest.approx(zero_mean, abs=1e-7)

    @pytest.mark.parametrize("link", [LOGISTIC, PROBIT])
    def test_jacobian_matches_finite_differences(self, link):
        lam, gamma2, h = 0.4, 1.3, 1e-6
        J = glm_jacobian(link, IndexLaw(lam, gamma2))
        d_lam = (np.array(forward_glm(link, IndexLaw(lam + h, gamma2))) - forward_glm(link, IndexLaw(lam - h, gamma2))) / (2 * h)
        d_gamma2 = (np.array(forward_glm(link, IndexLaw(lam, gamma2 + h))) - forward_glm(link, IndexLaw(lam, gamma2 - h))) / (2 * h)
        np.testing.assert_allclose(J, np.column_stack([d_lam, d_gamma2]), atol=1e-7)

    @pytest.mark.parametrize("lam,gamma2", [(0.0, 0.5), (1.0, 1.0), (-0.7, 3.0)])
    def test_probit_determinant(self, lam, gamma2):
        s = 1.0 + gamma2
        exact = (2 * math.pi * s) ** -1.5 * math.exp(-3 * lam * lam / (2 * s)) / s
        assert np.linalg.det(glm_jacobian(PROBIT, IndexLaw(lam, gamma2))) == pytest.approx(exact, abs=1e-8)

    def test_reduction_gives_squared_slope(self):
        law = IndexLaw(0.4, 1.3)
        f1 = eval_fk(LOGISTIC, 1, law)
        _, m2 = reduce_glm_moments(forward_glm_moments(LOGISTIC, law, 0.5))
        assert m2 == pytest.approx(f1 * f1 * law.gamma2, rel=1e-10)

    def test_missing_moments(self):
        with pytest.raises(MissingMoment):
            reduce_glm_moments(MomentSet.from_values({"m_Y": 0.5}))


class TestStagedSystems:
    M_X2 = 0.5

    @pytest.mark.parametrize("params", [
        {"psi": 0.7, "lambda_alpha": 0.3, "gamma2_alpha": 1.0, "lambda_beta": 0.2, "gamma_alpha_beta": 0.4},
        {"psi": -0.4, "lambda_alpha": -0.5, "gamma2_alpha": 0.6, "lambda_beta": 0.5, "gamma_alpha_beta": -0.2},
    ])
    def test_ce_round_trip(self, params):
        report = solve_ce(forward_ce(LOGISTIC, params, self.M_X2), LOGISTIC)
        for key, value in params.items():
            assert report[key] == pytest.approx(value, abs=1e-7), key
        assert report.linear_condition < 1e12

    def test_ce_gaussian_auxiliaries(self):
        params = {"psi": 0.2, "lambda_alpha": 0.3, "gamma2_alpha": 1.0, "lambda_beta": 0.1, "gamma_alpha_beta": 0.3}
        report = solve_ce(forward_ce(LOGISTIC, params, self.M_X2), LOGISTIC)
        m_a, f1 = link_moments(LOGISTIC, IndexLaw(0.3, 1.0), (0, 1))
        assert report["lambda_alpha_1"] == pytest.approx(0.3 * m_a + f1 * 1.0, abs=1e-7)
        assert report["lambda_beta_1"] == pytest.approx(0.1 * m_a + f1 * 0.3, abs=1e-7)

    def test_ce_needs_all_moments(self):
        with pytest.raises(MissingMoment):
            solve_ce(MomentSet.from_values({"m_A": 0.5, "m_Y": 0.1}), LOGISTIC)

    @pytest.mark.parametrize("params", [
        {"psi": 0.5, "lambda_alpha": 0.3, "gamma2_alpha": 0.8, "gamma_alpha_beta": 0.3},
        {"psi": 0.0, "lambda_alpha": 0.0, "gamma2_alpha": 1.0, "gamma_alpha_beta": 1.0},
    ])
    def test_mar_round_trip(self, params):
        report = solve_mar(forward_mar(SHIFTED_LOGISTIC, params, self.M_X2), SHIFTED_LOGISTIC)
        for key, value in params.items():
            assert report[key] == pytest.approx(value, abs=1e-7), key
        assert report.alt_residual == pytest.approx(0.0, abs=1e-8)

    def test_mar_without_cross_check(self):
        ms = forward_mar(SHIFTED_LOGISTIC, {"psi": 0.1, "lambda_alpha": 0.2, "gamma2_alpha": 1.0, "gamma_alpha_beta": 0.2}, self.M_X2)
        del ms.values["m_XAY_XA"]
        assert solve_mar(ms, SHIFTED_LOGISTIC).alt_residual is None

    def test_mar_cross_check_detects_inconsistency(self):
        ms = forward_mar(SHIFTED_LOGISTIC, {"psi": 0.1, "lambda_alpha": 0.2, "gamma2_alpha": 1.0, "gamma_alpha_beta": 0.2}, self.M_X2)
        ms.put("m_XAY_XA", ms["m_XAY_XA"] + 0.05, 2)
        assert solve_mar(ms, SHIFTED_LOGISTIC).alt_residual == pytest.approx(0.05, abs=1e-7)

    @pytest.mark.parametrize("link_y", [LOGISTIC, IDENTITY])
    def test_gcm_round_trip(self, link_y):
        params = {"lambda_alpha": 0.2, "gamma2_alpha": 1.0, "lambda_beta": -0.3, "gamma2_beta": 0.7, "gamma_alpha_beta": 0.3}
        report = solve_gcm(forward_gcm(LOGISTIC, link_y, params, self.M_X2), LOGISTIC, link_y)
        for key, value in params.items():
            assert report[key] == pytest.approx(value, abs=1e-7), key
        law = BivariateIndexLaw(0.2, -0.3, 1.0, 0.7, 0.3)
        assert report["psi"] == pytest.approx(eval_bivariate(LOGISTIC, link_y, law), abs=1e-7)
        assert not report.notes
