import numpy as np
import pytest

from models.dataset import Dataset, DesignModel
from models.errors import EmptyDataset, IndexOutOfRange, MissingMoment, MissingResponseA, NonFiniteMoment
from models.ustat_moments import (
    Estimand,
    MomentSet,
    beta_name,
    collect_moments,
    mean_norm_floor,
    moment_names,
    naive_collect_moments,
    naive_ustat2_bilinear,
    nu_name,
    ustat1_direction,
    ustat1_mean,
    ustat2_bilinear,
)


def _random_problem(rng, n, p):
    root = rng.normal(size=(p, p))
    sigma = root @ root.T + p * np.eye(p)
    X = rng.normal(size=(n, p)) + 0.5
    A = (rng.random(n) < 0.4).astype(float)
    return Dataset(X=X, Y=rng.normal(size=n), A=A), sigma


class TestBilinear:

    def test_two_point_example(self):
        ds = Dataset(X=np.array([[1.0, 0.0], [1.0, 1.0]]), Y=np.array([1.0, 2.0]))
        value = ustat2_bilinear(ds, ds.Y, ds.Y, DesignModel.identity(2))
        assert value == pytest.approx(2.0, abs=1e-15)

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(3)
        ds, sigma = _random_problem(rng, 40, 5)
        f, g = rng.normal(size=40), rng.normal(size=40)
        fast = ustat2_bilinear(ds, f, g, DesignModel.known(sigma))
        slow = naive_ustat2_bilinear(ds.X, f, g, sigma)
        assert fast == pytest.approx(slow, rel=1e-12, abs=1e-13)

    def test_three_point_instance(self):
        X = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
        ds = Dataset(X=X, Y=np.array([1.0, -2.0, 0.5]))
        # pairs (1,2): 1*(-2)*(-2) = 4, (1,3): 1*5*0.5 = 2.5, (2,3): -2*(-1)*0.5 = 1
        assert ustat2_bilinear(ds, ds.Y, ds.Y, DesignModel.identity(2)) == pytest.approx(7.5 / 3)

    def test_needs_two_rows(self):
        ds = Dataset(X=np.ones((1, 2)), Y=np.ones(1))
        with pytest.raises(EmptyDataset):
            ustat2_bilinear(ds, ds.Y, ds.Y, DesignModel.identity(2))


class TestFirstOrder:

    def test_mean(self):
        assert ustat1_mean([1.0, 2.0, 6.0]) == pytest.approx(3.0)

    def test_empty_mean(self):
        with pytest.raises(EmptyDataset):
            ustat1_mean([])

    def test_direction_identity_design(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(30, 4)), rng.normal(size=30)
        ds = Dataset(X=X, Y=Y)
        assert ustat1_direction(ds, Y, 3, DesignModel.identity(4)) == pytest.approx(float(np.mean(Y * X[:, 2])))

    def test_direction_out_of_range(self):
        ds = Dataset(X=np.ones((3, 2)), Y=np.ones(3))
        with pytest.raises(IndexOutOfRange):
            ustat1_direction(ds, ds.Y, 3, DesignModel.identity(2))


class TestCollectMoments:

    @pytest.mark.parametrize("estimand", list(Estimand))
    def test_fast_path_matches_enumeration(self, estimand):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n, p = int(rng.integers(3, 51)), int(rng.integers(1, 9))
            ds, sigma = _random_problem(rng, n, p)
            coords = (1, p)
            cross_check = estimand == Estimand.MAR
            fast = collect_moments(ds, DesignModel.known(sigma), estimand, coords, cross_check).as_dict()
            slow = naive_collect_moments(ds, sigma, estimand, coords, cross_check)
            assert set(fast) == set(slow)
            for name, value in slow.items():
                assert fast[name] == pytest.approx(value, rel=1e-12, abs=1e-12), name

    def test_names_follow_estimand(self):
        rng = np.random.default_rng(1)
        ds, sigma = _random_problem(rng, 10, 3)
        ms = collect_moments(ds, DesignModel.known(sigma), Estimand.GLM, coords=(2,))
        assert list(ms) == moment_names(Estimand.GLM, (2,))
        assert beta_name(2) in ms and nu_name(2) in ms

    def test_zero_mean_has_no_nu(self):
        names = moment_names(Estimand.GLM0, (1, 2))
        assert names == ["m_XY2", beta_name(1), beta_name(2)]

    def test_cross_check_only_for_mar(self):
        assert "m_XAY_XA" in moment_names(Estimand.MAR, cross_check=True)
        assert "m_XAY_XA" not in moment_names(Estimand.MAR)

    def test_missing_a(self):
        ds = Dataset(X=np.ones((4, 2)), Y=np.arange(4.0))
        with pytest.raises(MissingResponseA):
            collect_moments(ds, DesignModel.identity(2), Estimand.MAR)

    def test_coordinate_out_of_range(self):
        ds = Dataset(X=np.eye(3), Y=np.ones(3))
        with pytest.raises(IndexOutOfRange):
            collect_moments(ds, DesignModel.identity(3), Estimand.GLM, coords=(0,))

    @pytest.mark.parametrize("estimand", list(Estimand))
    def test_row_order_does_not_matter(self, estimand):
        rng = np.random.default_rng(5)
        ds, sigma = _random_problem(rng, 45, 6)
        design = DesignModel.known(sigma)
        base = collect_moments(ds, design, estimand, (1, 6)).as_dict()
        shuffled = collect_moments(ds.rows(rng.permutation(45)), design, estimand, (1, 6)).as_dict()
        for name, value in base.items():
            assert shuffled[name] == pytest.approx(value, rel=1e-12, abs=1e-12), name

    def test_mean_norm_floor(self):
        assert mean_norm_floor(200, 50) == pytest.approx(-2.5e-9)
        rng = np.random.default_rng(6)
        half = rng.normal(size=(20, 3))
        centered = Dataset(X=np.vstack([half, -half]), Y=rng.normal(size=40))
        assert collect_moments(centered, DesignModel.identity(3), Estimand.GLM).notes
        shifted = Dataset(X=rng.normal(size=(40, 3)) + 2.0, Y=rng.normal(size=40))
        assert not collect_moments(shifted, DesignModel.identity(3), Estimand.GLM).notes


class TestMomentSet:

    def test_missing_moment(self):
        with pytest.raises(MissingMoment):
            MomentSet().get("m_Y")

    def test_from_values_orders(self):
        ms = MomentSet.from_values({"m_Y": 0.5, "m_XY2": 0.1})
        assert ms.values["m_Y"].ustat_order == 1
        assert ms.values["m_XY2"].ustat_order == 2
        assert ms["m_XY2"] == 0.1

    def test_non_finite_value_rejected(self):
        with pytest.raises(NonFiniteMoment):
            MomentSet().put("m_XY2", float("nan"), 2)
