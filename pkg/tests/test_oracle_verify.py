import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import delaylyap as dl

from conftest import random_stable_single


@pytest.fixture(scope="module")
def scalar_report(scalar_half):
    return dl.stability_check(scalar_half)


class TestUIntegralOracle:
    def test_scalar_frozen_values(self, scalar_half, w1, scalar_report):
        for tau, want in ((0.0, -8 / 3), (0.5, -2.0), (1.0, -4 / 3), (-1.0, -16 / 3)):
            est = dl.u_integral_oracle(scalar_half, w1, tau, report=scalar_report)
            assert est.tail_bound < 1e-9
            assert est.value[0, 0] == pytest.approx(want, abs=est.tail_bound + 1e-12)

    def test_unstable_rejected(self, ex2b, ex1, w2):
        for vsys in (ex2b, ex1):
            with pytest.raises(dl.NotStable):
                dl.u_integral_oracle(vsys, w2, 0.0)

    def test_horizon_shorter_than_shift_rejected(self, scalar_half, w1, scalar_report):
        with pytest.raises(ValueError):
            dl.u_integral_oracle(scalar_half, w1, -5.0, 3.0, report=scalar_report)

    def test_tail_shrinks_with_horizon(self, scalar_half, w1, scalar_report):
        short = dl.u_integral_oracle(scalar_half, w1, 0.0, 10.0, report=scalar_report)
        long = dl.u_integral_oracle(scalar_half, w1, 0.0, 20.0, report=scalar_report)
        assert long.tail_bound < short.tail_bound
        # value converges onto the known limit as the bound tightens
        assert abs(long.value[0, 0] + 8 / 3) <= long.tail_bound

    def test_truncation_error_within_stated_bound(self, scalar_half, w1, scalar_report):
        for horizon in (5.0, 8.0, 12.0):
            est = dl.u_integral_oracle(scalar_half, w1, 0.5, horizon, report=scalar_report)
            assert abs(est.value[0, 0] + 2.0) <= est.tail_bound

    def test_linearity_in_weight(self, ex2a_half, report_ex2a_half):
        w_a = dl.WeightMatrix(np.array([[2.0, 0.5], [0.5, 1.0]]))
        w_b = dl.WeightMatrix(np.array([[1.0, -0.25], [-0.25, 3.0]]))
        w_sum = dl.WeightMatrix(w_a.matrix + w_b.matrix)
        kwargs = {"report": report_ex2a_half}
        ea = dl.u_integral_oracle(ex2a_half, w_a, 0.7, 30.0, **kwargs)
        eb = dl.u_integral_oracle(ex2a_half, w_b, 0.7, 30.0, **kwargs)
        es = dl.u_integral_oracle(ex2a_half, w_sum, 0.7, 30.0, **kwargs)
        assert np.max(np.abs(es.value - (ea.value + eb.value))) <= 1e-12


class TestDefaultHorizon:
    def test_floor_of_three_periods(self):
        fast = dl.validate(dl.DelaySystem.single(1e-6, 1))
        rep = dl.stability_check(fast)
        assert dl.default_horizon(fast, rep) >= 3.0

    def test_scalar_depth(self, scalar_half, scalar_report):
        # 0.5^T reaches 1e-12 around T = 40
        t = dl.default_horizon(scalar_half, scalar_report)
        assert 35.0 <= t <= 45.0


class TestPIntegralOracle:
    def test_matches_algebraic_p(self, ex2a, w2):
        rep = dl.stability_check(ex2a)
        est = dl.p_integral_oracle(ex2a, w2, report=rep)
        gap = np.max(np.abs(est.value - dl.p_matrix(ex2a, w2)))
        assert gap <= est.tail_bound + 1e-8

    def test_estimate_antisymmetric(self, ex2a_half, w2, report_ex2a_half):
        est = dl.p_integral_oracle(ex2a_half, w2, report=report_ex2a_half)
        asym = np.max(np.abs(est.value + est.value.T))
        assert asym <= 2 * est.tail_bound + 1e-10

    @settings(max_examples=8, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_algebraic_p_random(self, seed):
        vsys = random_stable_single(seed)
        w = dl.WeightMatrix.identity(vsys.n)
        est = dl.p_integral_oracle(vsys, w)
        assert np.max(np.abs(est.value - dl.p_matrix(vsys, w))) <= est.tail_bound + 1e-8


class TestCrossCheck:
    def test_commensurate_build(self, u_ex2a, ex2a, w2):
        rep = dl.cross_check(u_ex2a, ex2a, w2)
        assert rep.passed
        assert rep.max_error <= rep.max_bound + rep.slack
        assert len(rep.grid) == 101
        # per-point errors never exceed their own bounds plus slack
        assert np.all(rep.errors <= rep.bounds + rep.slack)

    def test_single_build(self, u_scalar, scalar_half, w1):
        rep = dl.cross_check(u_scalar, scalar_half, w1)
        assert rep.passed
        assert rep.max_error < 1e-9

    def test_explicit_grid(self, u_scalar, scalar_half, w1):
        rep = dl.cross_check(u_scalar, scalar_half, w1, grid=[-1.0, -0.25, 0.0, 0.25, 1.0])
        assert rep.passed
        assert len(rep.grid) == 5

    def test_unstable_rejected(self, u_ex2b, ex2b, w2):
        with pytest.raises(dl.NotStable):
            dl.cross_check(u_ex2b, ex2b, w2)

    def test_report_dict(self, u_ex2a, ex2a, w2):
        d = dl.cross_check(u_ex2a, ex2a, w2).to_dict()
        for key in ("grid_points", "max_error", "max_bound", "horizon", "slack", "passed"):
            assert key in d
