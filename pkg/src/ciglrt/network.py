"""Communication graphs, Laplacian spectra and consensus weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GraphNotConnected, InvalidInput, InvalidTopology, ResourceLimit

# eigenvalues this close to zero count as zero when testing connectivity
ZERO_EIG_TOL = 1e-10
RGG_MAX_RETRIES = 10_000


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph; each edge stored once as ``(i, j)`` with ``i < j``."""

    n_agents: int
    edges: frozenset
    positions: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n_agents < 1:
            raise InvalidTopology(f"graph needs at least one agent, got {self.n_agents}")
        for i, j in self.edges:
            if not (0 <= i < j < self.n_agents):
                raise InvalidTopology(f"bad edge ({i}, {j}) for {self.n_agents} agents")

    @classmethod
    def from_edges(cls, n_agents: int, pairs: Iterable) -> "Graph":
        edges = set()
        for pair in pairs:
            i, j = (int(v) for v in pair)
            if i == j:
                raise InvalidTopology(f"self-loop at agent {i}")
            if not (0 <= i < n_agents and 0 <= j < n_agents):
                raise InvalidTopology(f"edge ({i}, {j}) out of range for {n_agents} agents")
            edges.add((min(i, j), max(i, j)))
        return cls(n_agents, frozenset(edges))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(int)

    def neighbors(self, n: int) -> list[int]:
        return sorted([j for i, j in self.edges if i == n] + [i for i, j in self.edges if j == n])

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class Spectrum:
    laplacian: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.laplacian.shape[0]

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1]) if self.n_agents > 1 else 0.0

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def connected(self) -> bool:
        return self.n_agents == 1 or self.lambda2 > ZERO_EIG_TOL


@dataclass(frozen=True)
class ConsensusWeights:
    w: np.ndarray
    delta: float
    r: float

    @property
    def n_agents(self) -> int:
        return self.w.shape[0]

    def power(self, k: int) -> np.ndarray:
        """``W**k`` by repeated squaring."""
        if k < 0:
            raise InvalidInput("matrix power must be nonnegative")
        return np.linalg.matrix_power(self.w, k)


def build_ring(n: int) -> Graph:
    if n < 3:
        raise InvalidTopology(f"a ring needs at least 3 agents, got {n}")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def build_path(n: int) -> Graph:
    if n < 2:
        raise InvalidTopology(f"a path needs at least 2 agents, got {n}")
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def build_complete(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def build_random_geometric(n: int, radius: float, seed: int,
                           max_retries: int = RGG_MAX_RETRIES) -> Graph:
    """Uniform points on the unit square, edge iff distance <= radius.

    The whole point set is resampled until the graph is connected.
    """
    if n < 2:
        raise InvalidTopology(f"random geometric graph needs n >= 2, got {n}")
    if not radius > 0:
        raise InvalidInput(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        mask = dist[iu] <= radius
        g = Graph.from_edges(n, zip(iu[0][mask], iu[1][mask]))
        if spectrum(g).connected:
            return Graph(g.n_agents, g.edges, positions=pts)
    raise ResourceLimit(f"no connected graph after {max_retries} resamples "
                        f"(n={n}, radius={radius})")


def spectrum(g: Graph) -> Spectrum:
    lap = g.laplacian()
    eig = np.linalg.eigvalsh(lap)
    eig[0] = 0.0
    eig[np.abs(eig) < ZERO_EIG_TOL] = 0.0
    return Spectrum(lap, eig)


def make_weights(s: Spectrum, delta: float | None = None) -> ConsensusWeights:
    """Mixing matrix ``W = I - delta L`` with ``delta = 2/(lambda_2 + lambda_N)`` by default."""
    n = s.n_agents
    if n == 1:
        return ConsensusWeights(np.ones((1, 1)), 1.0, 0.0)
    if not s.connected:
        raise GraphNotConnected(f"lambda_2 = {s.lambda2:.3g}; communication graph is not connected")
    l2, ln = s.lambda2, s.lambda_max
    if delta is None:
        delta = 2.0 / (l2 + ln)
        r = (ln - l2) / (ln + l2)
    else:
        if not 0.0 < delta < 2.0 / ln:
            raise InvalidInput(f"delta must lie in (0, {2.0 / ln:.6g}), got {delta}")
        r = max(abs(1.0 - delta * l2), abs(1.0 - delta * ln))
    w = np.eye(n) - delta * s.laplacian
    return ConsensusWeights(w, float(delta), float(r))


def spectral_gap_numeric(w: np.ndarray) -> float:
    """``||W - J||_2`` from a symmetric eigendecomposition."""
    n = w.shape[0]
    return float(np.max(np.abs(np.linalg.eigvalsh(w - np.full((n, n), 1.0 / n)))))


def min_consensus_rounds(n: int, r: float) -> int:
    """Smallest admissible number of consensus rounds between statistic refreshes."""
    if n < 1:
        raise InvalidInput(f"n must be positive, got {n}")
    if not 0.0 < r < 1.0:
        raise InvalidInput(f"r must lie in (0, 1), got {r}")
    return 1 + math.floor(-3.0 * math.log(n) / (2.0 * math.log(r)))


def write_edge_list(g: Graph, path) -> None:
    lines = [f"{i} {j}" for i, j in g.sorted_edges()]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_edge_list(path, n_agents: int | None = None) -> Graph:
    pairs = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        raw = raw.split("#", 1)[0].strip()
        if not raw:
            continue
        parts = raw.split()
        if len(parts) != 2:
            raise InvalidInput(f"edge-list line must hold two integers: {raw!r}")
        pairs.append((int(parts[0]), int(parts[1])))
    if n_agents is None:
        n_agents = 1 + max((max(p) for p in pairs), default=0)
    return Graph.from_edges(n_agents, pairs)


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    """Dense row-major CSV, no header."""
    rows = [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(matrix)]
    Path(path).write_text("".join(r + "\n" for r in rows), encoding="utf-8")
