import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ciglrt import linear as li
from ciglrt import network as nw
from ciglrt import nl
from ciglrt import sensing as se
from ciglrt.errors import (AssumptionViolated, AssumptionWarning, ContractViolation, InvalidInput,
                           NumericalDivergence)

from conftest import THETA_VIC

STABLE = li.LSchedule(12.0, 0.4, b=1.0)


class TestSchedule:
    def test_consensus_gain_defaults_to_a(self):
        s = li.LSchedule(9.1, 0.4)
        assert float(s.beta(0)) == 9.1 and s.alpha0 == 9.1
        assert float(STABLE.beta(3)) == pytest.approx(1 / 4 ** 0.4)

    @pytest.mark.parametrize("kw", [dict(a=0.5, delta2=0.4), dict(a=2, delta2=0.0),
                                    dict(a=2, delta2=1.5), dict(a=2, delta2=0.4, b=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInput):
            li.LSchedule(**kw)

    def test_gain_condition(self):
        with pytest.warns(AssumptionWarning):
            li.LSchedule(9.1, 0.4, c1=0.0596)
        with pytest.raises(AssumptionViolated):
            li.LSchedule(9.1, 0.4, c1=0.0596, strict=True)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            li.LSchedule(10.5, 0.4, c1=0.0596)


class TestEstimate:
    """Estimate recursion of the linear algorithm."""

    def test_zero_noise_fixed_point(self, ring10, pairwise):
        s, w = ring10
        traj = li.simulate_l(pairwise, w, s.laplacian, STABLE,
                             se.TruthConfig("H1", THETA_VIC), 300, [0], 20, theta0=THETA_VIC, zero_noise=True)
        assert float(np.max(traj.err_norm)) < 1e-12

    def test_literal_gains_amplify_roundoff(self, ring10, pairwise):
        # theta* is still an exact fixed point for the first ticks, but the map is expanding
        s, w = ring10
        truth = se.TruthConfig("H1", THETA_VIC)
        traj = li.simulate_l(pairwise, w, s.laplacian, li.LSchedule(9.1, 0.4), truth, 3, [0], 20,
                             theta0=THETA_VIC, zero_noise=True, theta_stride=1)
        assert float(np.max(traj.err_norm)) < 1e-9

    def test_first_step_from_zero(self, ring10, pairwise, rng):
        s, _ = ring10
        y = rng.normal(size=10)
        st0 = li.LState.initial(pairwise, 20)
        new = li.l_step_estimate(st0, pairwise, s.laplacian, STABLE, y)
        expected = 12.0 * pairwise.stacked_operator() @ pairwise.sigma_inv_full() @ y
        np.testing.assert_allclose(new.reshape(-1), expected, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_nonlinear_form(self, seed):
        s = nw.spectrum(nw.build_ring(10))
        m = se.pairwise_linear_model()
        nlm = m.as_nonlinear()
        r = np.random.default_rng(seed)
        theta = r.normal(size=(10, 5))
        sched_l = li.LSchedule(3.0, 0.3, b=0.7)
        sched_nl = nl.NlSchedule(3.0, 0.7, 0.3)
        for t in range(5):
            y = r.normal(size=10)
            a = li.l_step_estimate(li.LState(t, theta, theta, np.zeros(10), np.zeros(10), np.zeros(10), 20),
                                   m, s.laplacian, sched_l, y)
            b = nl.nl_step_estimate(nl.NlState(t, theta, np.zeros(10)), nlm, s.laplacian, sched_nl, y)
            np.testing.assert_allclose(a, b, atol=1e-12)
            theta = a

    def test_literal_schedule_diverges(self, ring10, pairwise):
        s, w = ring10
        with pytest.warns(AssumptionWarning):
            sched = li.LSchedule(9.1, 0.4, c1=se.c1_linear(s, pairwise))
        with pytest.raises(NumericalDivergence) as info:
            li.simulate_l(pairwise, w, s.laplacian, sched, se.TruthConfig("H1", THETA_VIC), 100, [0], 20)
        assert info.value.t < 20


class TestRunningAverage:
    def test_two_values(self):
        s = np.zeros(1)
        for t, y in enumerate([0.0, 2.0]):
            s = li.l_update_running_average(s, np.array([y]), t)
        assert s[0] == 1.0

    def test_constant(self):
        s = np.zeros(3)
        for t in range(100):
            s = li.l_update_running_average(s, np.full(3, 4.25), t)
        np.testing.assert_allclose(s, 4.25, atol=1e-14)

    def test_long_stream_matches_batch_mean(self, rng):
        ys = rng.normal(size=(10_000, 4))
        s = np.zeros(4)
        for t in range(len(ys)):
            s = li.l_update_running_average(s, ys[t], t)
        np.testing.assert_allclose(s, ys.mean(axis=0), atol=1e-12)

    def test_negative_t(self):
        with pytest.raises(InvalidInput):
            li.l_update_running_average(np.zeros(1), np.zeros(1), -1)


class TestRefresh:
    """Refresh schedule and the hold rule."""

    def test_refresh_ticks(self):
        assert [t for t in range(50) if li.is_refresh_tick(t, 20)] == [1, 21, 41]
        assert [t for t in range(4) if li.is_refresh_tick(t, 1)] == [1, 2, 3]

    def test_off_schedule_call(self, ring10, pairwise):
        _, w = ring10
        st2 = li.LState.initial(pairwise, 20)
        with pytest.raises(ContractViolation):
            li.l_refresh_statistic(st2, pairwise, w)

    def test_local_statistic_formula(self, pairwise, rng):
        theta = rng.normal(size=(10, 5))
        s = rng.normal(size=10)
        got = li.local_statistic(pairwise, theta, s)
        for n, h in enumerate(pairwise.H):
            mu = float((h @ theta[n])[0])
            assert got[n] == pytest.approx(mu / 3.0 * (s[n] - mu / 2.0), abs=1e-12)

    def test_hold_rule(self, ring10, pairwise):
        s, w = ring10
        k = 20
        traj = li.simulate_l(pairwise, w, s.laplacian, STABLE, se.TruthConfig("H1", THETA_VIC), 200, [0], k)
        z = traj.z[0, :, 0]
        assert np.all(z[:k] == 0.0)
        for j in range(1, 10):
            window = z[j * k : (j + 1) * k]
            assert np.all(window == window[0])
        assert z[k] != z[2 * k]
        assert list(np.flatnonzero(traj.z_refresh)[:3]) == [k, 2 * k, 3 * k]

    def test_published_value_uses_lagged_state(self, ring10, pairwise):
        s, w = ring10
        k = 20
        truth = se.TruthConfig("H1", THETA_VIC)
        mean = se.observation_mean(pairwise, truth)
        noise = nl.noise_blocks(pairwise, 42, [0], 2 * k + 1)[0]
        state = li.LState.initial(pairwise, k)
        thetas, ys = [state.theta], []
        for t in range(2 * k + 1):
            ys.append(mean + noise[t])
            state = li.l_step(state, pairwise, w, s.laplacian, STABLE, ys[-1])
            thetas.append(state.theta)
        # the value published at tick 2k was computed at refresh tick k+1 from theta(k), s(k)
        s_k = np.mean(ys[: k + 1], axis=0)
        local = li.local_statistic(pairwise, thetas[k], s_k)
        np.testing.assert_allclose(state.z, w.power(k - 1) @ local, atol=1e-10)

    def test_single_round_has_no_consensus(self, pairwise):
        full = nw.spectrum(nw.build_complete(10))
        w = nw.make_weights(full)
        traj = li.simulate_l(pairwise, w, full.laplacian, li.LSchedule(12.0, 0.4, b=0.05), se.TruthConfig("H1", THETA_VIC),
                             30, [0], 1)
        z = traj.z[0]
        assert np.all(z[0] == 0) and np.any(z[2] != z[3])

    def test_rounds_check(self, ring10, pairwise):
        _, w = ring10
        with pytest.raises(AssumptionViolated):
            li.check_rounds(5, 10, w.r)
        with pytest.warns(AssumptionWarning):
            assert li.check_rounds(5, 10, w.r, allow_small_k=True) == 19
        assert li.check_rounds(1, 10, 0.0) == 1

    def test_plug_in_limit(self, ring10, pairwise):
        s, w = ring10
        traj = li.simulate_l(pairwise, w, s.laplacian, STABLE, se.TruthConfig("H1", THETA_VIC),
                             2001, range(100), 20, z_stride=20)
        local = np.array([float(THETA_VIC @ h.T @ h @ THETA_VIC) / 3.0 / 2.0 for h in pairwise.H])
        np.testing.assert_allclose(traj.z[:, -1].mean(axis=0), w.power(19) @ local, atol=0.01)

    def test_h0_statistic_near_zero(self, ring10, pairwise):
        s, w = ring10
        traj = li.simulate_l(pairwise, w, s.laplacian, STABLE, se.TruthConfig("H0", THETA_VIC),
                             2001, range(100), 20, z_stride=20)
        assert abs(float(traj.z[:, -1].mean())) < 0.01


class TestCentral:
    """Fusion-center baseline for the scalar model."""

    def test_gain_condition(self):
        with pytest.raises(AssumptionViolated):
            li.check_central_gain(0.5, 1.0, 1.0)
        li.check_central_gain(0.51, 1.0, 1.0)

    def test_first_ticks(self):
        h, s2 = 2.0, 1.5
        st0 = li.CentralState.initial(1.0, 3)
        y0, y1 = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.5, 2.0])
        st1 = li.central_step(st0, h, s2, y0)
        assert st1.z_c == 0.0
        assert float(st1.theta_c) == pytest.approx(1.0 / (3 * s2) * h * 6.0)
        st2 = li.central_step(st1, h, s2, y1)
        # z_c(2) uses theta_c(0) = 0
        assert float(st2.z_c) == 0.0
        st3 = li.central_step(st2, h, s2, np.zeros(3))
        hp = h * float(st1.theta_c)
        expected = hp / (3 * s2) * (float((y0 + y1).sum()) / 2.0 - hp / 2.0)
        assert float(st3.z_c) == pytest.approx(expected, abs=1e-12)

    def test_fixed_point(self):
        traj = li.simulate_central(1.0, 1.0, 10, 4, 1.0, se.TruthConfig("H1", [2.0]), 50, [0], zero_noise=True)
        assert float(traj.err_norm[0, -1, 0]) < 1e-10
        # h theta / (N1 sigma^2) * (sum_j s_j - h theta / 2) with s_j = 2
        assert float(traj.z[0, -1, 0]) == pytest.approx(2.0 / 4.0 * (8.0 - 1.0), abs=1e-9)
