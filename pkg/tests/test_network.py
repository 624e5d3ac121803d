import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ciglrt import network as nw
from ciglrt.errors import GraphNotConnected, InvalidInput, InvalidTopology, ResourceLimit


class TestGraphs:
    """Constructors and basic graph matrices."""

    def test_ring_laplacian_spectrum_closed_form(self):
        n = 10
        s = nw.spectrum(nw.build_ring(n))
        expected = np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(n) / n))
        np.testing.assert_allclose(s.eigenvalues, expected, atol=1e-12)

    def test_laplacian_rows_sum_to_zero(self):
        lap = nw.build_ring(7).laplacian()
        np.testing.assert_allclose(lap.sum(axis=1), 0.0)
        assert np.all(np.diag(lap) == 2)

    def test_small_ring_rejected(self):
        with pytest.raises(InvalidTopology):
            nw.build_ring(2)

    def test_self_loop_rejected(self):
        with pytest.raises(InvalidTopology):
            nw.Graph.from_edges(3, [(1, 1)])

    def test_edge_out_of_range(self):
        with pytest.raises(InvalidTopology):
            nw.Graph.from_edges(3, [(0, 3)])

    def test_neighbors(self):
        g = nw.build_ring(5)
        assert g.neighbors(0) == [1, 4]
        assert list(g.degrees()) == [2] * 5


class TestRandomGeometric:
    """Random geometric graphs: connectivity retry loop and the distance rule."""

    def test_edges_match_distance_rule(self):
        g = nw.build_random_geometric(12, 0.4, seed=3)
        pts = g.positions
        for i in range(12):
            for j in range(i + 1, 12):
                close = np.linalg.norm(pts[i] - pts[j]) <= 0.4
                assert ((i, j) in g.edges) == close
        assert nw.spectrum(g).connected
        assert np.all((pts >= 0) & (pts <= 1))

    def test_seeded(self):
        a = nw.build_random_geometric(10, 0.4, seed=11)
        b = nw.build_random_geometric(10, 0.4, seed=11)
        assert a.edges == b.edges

    def test_two_agents_large_radius(self):
        g = nw.build_random_geometric(2, 1.5, seed=0)
        assert g.edges == frozenset({(0, 1)})

    def test_bad_radius(self):
        with pytest.raises(InvalidInput):
            nw.build_random_geometric(5, 0.0, seed=0)

    def test_retry_budget(self):
        with pytest.raises(ResourceLimit):
            nw.build_random_geometric(5, 0.01, seed=0, max_retries=50)


class TestWeights:
    """Mixing matrix and spectral gap."""

    def test_ring_gap(self, ring10):
        s, w = ring10
        assert w.r == pytest.approx(0.825664, abs=1e-6)
        assert w.r == pytest.approx(nw.spectral_gap_numeric(w.w), abs=1e-12)

    def test_doubly_stochastic(self, ring10):
        _, w = ring10
        np.testing.assert_allclose(w.w.sum(axis=0), 1.0)
        np.testing.assert_allclose(w.w, w.w.T)

    def test_complete_graph_gives_averaging(self):
        w = nw.make_weights(nw.spectrum(nw.build_complete(6)))
        np.testing.assert_allclose(w.w, np.full((6, 6), 1 / 6), atol=1e-12)
        assert w.r == pytest.approx(0.0, abs=1e-12)

    def test_single_agent(self):
        w = nw.make_weights(nw.spectrum(nw.Graph(1, frozenset())))
        assert w.r == 0.0 and w.w.shape == (1, 1)

    def test_disconnected(self):
        g = nw.Graph.from_edges(4, [(0, 1), (2, 3)])
        with pytest.raises(GraphNotConnected):
            nw.make_weights(nw.spectrum(g))

    def test_custom_delta(self, ring10):
        s, _ = ring10
        w = nw.make_weights(s, delta=0.2)
        assert w.r == pytest.approx(nw.spectral_gap_numeric(w.w), abs=1e-12)
        with pytest.raises(InvalidInput):
            nw.make_weights(s, delta=2 / s.lambda_max)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(3, 12), extra=st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=20))
    def test_gap_formula_matches_eigensolve(self, n, extra):
        pairs = [(i, i + 1) for i in range(n - 1)] + [(i % n, j % n) for i, j in extra if i % n != j % n]
        s = nw.spectrum(nw.Graph.from_edges(n, pairs))
        w = nw.make_weights(s)
        assert 0 <= w.r < 1
        assert w.r == pytest.approx(nw.spectral_gap_numeric(w.w), abs=1e-9)


class TestConsensusRounds:
    """Minimum number of consensus rounds."""

    def test_quoted_value(self):
        assert nw.min_consensus_rounds(10, 0.8404) == 20

    def test_ring_value(self, ring10):
        assert nw.min_consensus_rounds(10, ring10[1].r) == 19

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(2, 200), r=st.floats(0.01, 0.99))
    def test_floor_definition(self, n, r):
        x = -3 * math.log(n) / (2 * math.log(r))
        k = nw.min_consensus_rounds(n, r)
        assert k - 1 <= x + 1e-9 < k

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(2, 200), r=st.floats(0.01, 0.99))
    def test_one_extra_round_makes_weights_positive(self, n, r):
        # at k_min itself N sqrt(N) r^(k-1) can still reach 1; one more round always suffices
        k = nw.min_consensus_rounds(n, r) + 1
        assert n * math.sqrt(n) * r ** (k - 1) < 1

    def test_ring_at_k_min_is_borderline(self, ring10):
        r = ring10[1].r
        assert 10 * math.sqrt(10) * r ** 18 >= 1.0

    def test_bad_r(self):
        with pytest.raises(InvalidInput):
            nw.min_consensus_rounds(10, 1.0)


class TestIO:
    def test_edge_list_round_trip(self, tmp_path):
        g = nw.build_random_geometric(8, 0.5, seed=4)
        nw.write_edge_list(g, tmp_path / "e.txt")
        assert nw.read_edge_list(tmp_path / "e.txt", 8).edges == g.edges

    def test_matrix_csv(self, tmp_path, ring10):
        s, w = ring10
        nw.write_matrix_csv(w.w, tmp_path / "w.csv")
        np.testing.assert_array_equal(np.loadtxt(tmp_path / "w.csv", delimiter=","), w.w)

    def test_bad_edge_line(self, tmp_path):
        (tmp_path / "e.txt").write_text("0 1 2\n")
        with pytest.raises(InvalidInput):
            nw.read_edge_list(tmp_path / "e.txt")
