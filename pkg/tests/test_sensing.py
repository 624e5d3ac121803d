import math
import warnings

import numpy as np
import pytest
from scipy.linalg import block_diag

from ciglrt import network as nw
from ciglrt import sensing as se
from ciglrt.errors import AssumptionWarning, InvalidInput, ModelDegenerate


class TestLinearModel:
    """Shapes, covariance validation and the stacked operators."""

    def test_stacked_operator(self, pairwise):
        gh = pairwise.stacked_operator()
        assert gh.shape == (50, 10)
        np.testing.assert_array_equal(gh[5:10, 1], np.array(se.PAIRWISE_ROWS[1], dtype=float))

    def test_innovation_matrix_is_block_diagonal(self, pairwise):
        q = pairwise.innovation_matrix()
        blocks = [h.T @ h / 3.0 for h in pairwise.H]
        np.testing.assert_allclose(q, block_diag(*blocks), atol=1e-15)

    def test_nonsymmetric_covariance(self):
        with pytest.raises(InvalidInput):
            se.LinearModel((np.eye(2),), [np.array([[1.0, 0.5], [0.0, 1.0]])])

    def test_indefinite_covariance(self):
        with pytest.raises(InvalidInput):
            se.LinearModel((np.eye(2),), [np.array([[1.0, 2.0], [2.0, 1.0]])])

    def test_mismatched_dims(self):
        with pytest.raises(InvalidInput):
            se.LinearModel((np.ones((1, 2)), np.ones((1, 3))), 1.0)

    def test_split_and_offsets(self):
        m = se.LinearModel((np.ones((2, 1)), np.ones((1, 1))), 1.0)
        assert list(m.offsets) == [0, 2, 3]
        parts = m.split(np.arange(3.0))
        np.testing.assert_array_equal(parts[0], [0.0, 1.0])
        np.testing.assert_array_equal(parts[1], [2.0])

    def test_as_nonlinear_agrees(self, pairwise, rng):
        nlm = pairwise.as_nonlinear()
        th = rng.normal(size=(4, 5))
        for n, h in enumerate(pairwise.H):
            np.testing.assert_allclose(nlm.h[n](th), th @ h.T)
            np.testing.assert_allclose(nlm.grad[n](th)[2], h.T)

    def test_from_dict(self):
        m, truth = se.linear_model_from_dict({"H": [[[1.0, 0.0]], [[0.0, 1.0]]], "Sigma": 2.0,
                                              "theta_star": [1.0, 2.0]})
        assert m.n_agents == 2 and truth.hypothesis is se.Hypothesis.H1
        np.testing.assert_allclose(m.sigma[1], [[2.0]])
        with pytest.raises(InvalidInput):
            se.linear_model_from_dict({"H": [[[1.0]]], "Sigma": 1.0, "extra": 1})
        with pytest.raises(InvalidInput):
            se.linear_model_from_dict({"H": [[[1.0]]], "Sigma": 1.0, "theta_star": [1.0, 2.0]})


class TestObservability:
    """Gram matrix and the smallest eigenvalue c1."""

    def test_pairwise_observable_globally(self, pairwise):
        rep = se.check_global_observability(pairwise)
        g = sum(np.outer(r, r) for r in np.array(se.PAIRWISE_ROWS, dtype=float)) / 3.0
        np.testing.assert_allclose(se.gram_matrix(pairwise), g)
        assert rep.observable
        assert rep.min_eigenvalue == pytest.approx(np.linalg.eigvalsh(g)[0])

    def test_single_agent_not_observable(self, pairwise):
        lone = se.LinearModel((pairwise.H[0],), 3.0)
        assert not se.check_global_observability(lone).observable

    def test_c1_two_agent_path(self):
        # L + diag(h^2/sigma^2, 0) = [[2, -1], [-1, 1]]: eigenvalues (3 -+ sqrt 5)/2
        c1 = se.c1_linear(nw.spectrum(nw.build_path(2)), se.scalar_model(2, 1, 1.0, 1.0))
        assert c1 == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-12)

    def test_c1_degenerate(self):
        with pytest.raises(ModelDegenerate):
            se.c1_linear(nw.spectrum(nw.build_path(2)), se.scalar_model(2, 0, 1.0, 1.0))

    def test_c1_agent_mismatch(self, pairwise):
        with pytest.raises(InvalidInput):
            se.c1_linear(nw.spectrum(nw.build_ring(5)), pairwise)


class TestNoise:
    """Per-trial noise streams."""

    def test_block_equals_sequential(self, pairwise):
        a = se.NoiseSampler.for_trial(pairwise, 7, 3)
        b = se.NoiseSampler.for_trial(pairwise, 7, 3)
        seq = np.stack([a.sample() for _ in range(5)])
        np.testing.assert_array_equal(seq, b.block(5))

    def test_trials_independent_of_order(self, pairwise):
        x = se.NoiseSampler.for_trial(pairwise, 1, 9).block(3)
        se.NoiseSampler.for_trial(pairwise, 1, 0).block(100)
        np.testing.assert_array_equal(x, se.NoiseSampler.for_trial(pairwise, 1, 9).block(3))
        assert not np.allclose(x, se.NoiseSampler.for_trial(pairwise, 1, 8).block(3))

    def test_empirical_covariance(self):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        m = se.LinearModel((np.eye(2), np.ones((1, 2))), [cov, 0.5])
        x = se.NoiseSampler(m, 5).block(200_000)
        emp = np.cov(x.T)
        np.testing.assert_allclose(emp, block_diag(cov, 0.5), atol=0.03)

    def test_zero_mode(self, pairwise):
        assert not np.any(se.NoiseSampler(pairwise, 0, zero=True).block(4))

    def test_observation_position_contract(self, pairwise):
        truth = se.TruthConfig("H1", np.ones(5))
        s = se.NoiseSampler(pairwise, 0, zero=True)
        y = se.sample_observation(pairwise, truth, s, 0)
        np.testing.assert_allclose(y, np.full(10, 2.0))
        with pytest.raises(InvalidInput):
            se.sample_observation(pairwise, truth, s, 0)

    def test_h0_mean_is_zero(self, pairwise):
        truth = se.TruthConfig("H0", np.ones(5))
        assert not np.any(se.observation_mean(pairwise, truth))
        np.testing.assert_array_equal(truth.effective_theta, 0.0)

    def test_wrong_theta_length(self, pairwise):
        with pytest.raises(InvalidInput):
            se.observation_mean(pairwise, se.TruthConfig("H1", np.ones(4)))


class TestTrigModel:
    """The ten-agent sine sensing model."""

    def test_gradient_matches_finite_differences(self, rng):
        m = se.trig_model()
        th = rng.uniform(-0.7, 0.7, size=5)
        eps = 1e-6
        for n in range(10):
            fd = np.array([(m.h[n](th + eps * e) - m.h[n](th - eps * e))[0] / (2 * eps) for e in np.eye(5)])
            np.testing.assert_allclose(m.grad[n](th)[:, 0], fd, atol=1e-8)

    def test_lipschitz_constant_bounds_probe(self):
        m = se.trig_model()
        probe = se.lipschitz_probe(m, 2000, seed=1)
        assert np.all(probe <= 5 * math.sqrt(2) + 1e-12)
        assert np.all(probe > 0.5 * 5 * math.sqrt(2))

    def test_box_projection(self):
        m = se.trig_model()
        np.testing.assert_allclose(m.project(np.array([2.0, -2.0, 0.1, 0, 0])),
                                   [math.pi / 4, -math.pi / 4, 0.1, 0, 0])

    def test_monotone_on_box(self):
        assert se.monotonicity_constant_nl(se.trig_model(), 500, seed=2) > 0

    def test_monotonicity_warns_on_wide_box(self):
        with pytest.warns(AssumptionWarning):
            c = se.monotonicity_constant_nl(se.trig_model(), 2000, seed=3, box=(-3.0, 3.0))
        assert c <= 0

    def test_linear_monotonicity_equals_rayleigh_quotient(self, pairwise, rng):
        x, xp = rng.normal(size=(50, 5)), rng.normal(size=(50, 5))
        g = se.gram_matrix(pairwise)
        d = x - xp
        expected = np.einsum("pi,ij,pj->p", d, g, d) / np.einsum("pi,pi->p", d, d)
        np.testing.assert_allclose(se.monotonicity_ratios(pairwise.as_nonlinear(), x, xp), expected)

    def test_too_few_probes(self):
        with pytest.raises(InvalidInput):
            se.monotonicity_constant_nl(se.trig_model(), 10)

    def test_wrong_agent_count(self):
        with pytest.raises(InvalidInput):
            se.trig_model(n_agents=8)


def test_scalar_model_rows():
    m = se.scalar_model(4, 2, 1.5, 2.0)
    assert [float(h[0, 0]) for h in m.H] == [1.5, 1.5, 0.0, 0.0]
    with pytest.raises(InvalidInput):
        se.scalar_model(2, 3, 1.0, 1.0)
