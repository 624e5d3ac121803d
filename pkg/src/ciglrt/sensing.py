"""Observation models, Gaussian noise generation and observability diagnostics."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import AssumptionWarning, InvalidInput, ModelDegenerate
from .network import Spectrum

OBSERVABILITY_TOL = 1e-9
C1_TOL = 1e-12


class Hypothesis(str, enum.Enum):
    H0 = "H0"
    H1 = "H1"


def _as_sigma_blocks(sigma, obs_dims: Sequence[int]) -> tuple[np.ndarray, ...]:
    """Accept a scalar (``sigma * I`` for every agent) or a per-agent list."""
    if np.isscalar(sigma):
        return tuple(float(sigma) * np.eye(m) for m in obs_dims)
    if len(sigma) != len(obs_dims):
        raise InvalidInput(f"expected {len(obs_dims)} covariance blocks, got {len(sigma)}")
    blocks = []
    for s, m in zip(sigma, obs_dims):
        s = float(s) * np.eye(m) if np.isscalar(s) else np.atleast_2d(np.asarray(s, dtype=float))
        if s.shape != (m, m):
            raise InvalidInput(f"covariance block has shape {s.shape}, expected {(m, m)}")
        blocks.append(s)
    return tuple(blocks)


def _check_covariances(blocks) -> None:
    for n, s in enumerate(blocks):
        if not np.allclose(s, s.T):
            raise InvalidInput(f"noise covariance of agent {n} is not symmetric")
        if np.linalg.eigvalsh(s)[0] <= 0:
            raise InvalidInput(f"noise covariance of agent {n} is not positive definite")


class _GaussianAgents:
    """Shared covariance bookkeeping for linear and nonlinear models."""

    sigma: tuple

    @property
    def n_agents(self) -> int:
        return len(self.sigma)

    @property
    def obs_dims(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.sigma)

    @property
    def total_obs(self) -> int:
        return int(sum(self.obs_dims))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.obs_dims)]).astype(int)

    @property
    def sigma_inv(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linalg.inv(s) for s in self.sigma)

    @property
    def chol(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linalg.cholesky(s) for s in self.sigma)

    def sigma_inv_full(self) -> np.ndarray:
        return block_diag(*self.sigma_inv)

    def split(self, y: np.ndarray) -> list[np.ndarray]:
        """Split stacked observations ``(..., sum M_n)`` into per-agent pieces."""
        off = self.offsets
        return [y[..., off[n]:off[n + 1]] for n in range(self.n_agents)]


@dataclass(frozen=True, eq=False)
class LinearModel(_GaussianAgents):
    """``y_n = H_n theta + gamma_n`` with ``gamma_n ~ N(0, Sigma_n)``."""

    H: tuple
    sigma: tuple

    def __post_init__(self):
        H = tuple(np.atleast_2d(np.asarray(h, dtype=float)) for h in self.H)
        if not H:
            raise InvalidInput("model needs at least one agent")
        dims = {h.shape[1] for h in H}
        if len(dims) != 1:
            raise InvalidInput(f"observation matrices disagree on parameter dimension: {dims}")
        sigma = _as_sigma_blocks(self.sigma, [h.shape[0] for h in H])
        _check_covariances(sigma)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_rows(cls, H, sigma) -> "LinearModel":
        return cls(tuple(H), sigma)

    @property
    def dim(self) -> int:
        return self.H[0].shape[1]

    def stacked_operator(self) -> np.ndarray:
        """``G_H = blockdiag(H_1^T, ..., H_N^T)`` with shape ``NM x sum M_n``."""
        return block_diag(*[h.T for h in self.H])

    def innovation_matrix(self) -> np.ndarray:
        """``G_H Sigma^-1 G_H^T`` (block diagonal, ``NM x NM``)."""
        gh = self.stacked_operator()
        return gh @ self.sigma_inv_full() @ gh.T

    def mean(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([h @ theta for h in self.H])

    def as_nonlinear(self) -> "NonlinearModel":
        """The same model expressed through sensing maps ``h_n(theta) = H_n theta``."""
        hs, grads, lips = [], [], []
        for h in self.H:
            hs.append(lambda th, h=h: th @ h.T)
            grads.append(lambda th, h=h: np.broadcast_to(h.T, th.shape[:-1] + h.T.shape))
            lips.append(max(float(np.linalg.norm(h, 2)), 1e-300))
        return NonlinearModel(self.dim, tuple(hs), tuple(grads), tuple(lips), self.sigma,
                              name="linear")


@dataclass(frozen=True, eq=False)
class NonlinearModel(_GaussianAgents):
    """``y_n = h_n(theta) + gamma_n``.

    ``h[n]`` maps ``(..., M)`` to ``(..., M_n)``; ``grad[n]`` maps ``(..., M)`` to
    ``(..., M, M_n)`` with entry ``(i, j) = d h_n[j] / d theta[i]``.
    """

    dim: int
    h: tuple
    grad: tuple
    lipschitz: tuple
    sigma: tuple
    box: tuple | None = None
    name: str = "custom"

    def __post_init__(self):
        n = len(self.h)
        if not (n == len(self.grad) == len(self.lipschitz)):
            raise InvalidInput("h, grad and lipschitz must have one entry per agent")
        if np.isscalar(self.sigma):
            probe = np.zeros(self.dim)
            sigma = _as_sigma_blocks(self.sigma, [np.atleast_1d(f(probe)).shape[-1] for f in self.h])
        else:
            sigma = _as_sigma_blocks(self.sigma, [np.atleast_2d(s).shape[0] for s in self.sigma])
        if len(sigma) != n:
            raise InvalidInput(f"{len(sigma)} covariance blocks for {n} agents")
        _check_covariances(sigma)
        if any(k <= 0 for k in self.lipschitz):
            raise InvalidInput("Lipschitz constants must be positive")
        object.__setattr__(self, "sigma", sigma)

    def h_agent(self, n: int, theta_n: np.ndarray) -> np.ndarray:
        return self.h[n](theta_n)

    def h_stack(self, theta: np.ndarray) -> np.ndarray:
        """Stacked ``h_n(theta_n)`` for per-agent estimates ``theta`` of shape ``(..., N, M)``."""
        return np.concatenate([self.h[n](theta[..., n, :]) for n in range(self.n_agents)], axis=-1)

    def h_common(self, theta: np.ndarray) -> np.ndarray:
        """Stacked ``h_n(theta)`` with the same ``theta`` at every agent."""
        return np.concatenate([f(theta) for f in self.h], axis=-1)

    def project(self, theta: np.ndarray) -> np.ndarray:
        if self.box is None:
            return theta
        return np.clip(theta, self.box[0], self.box[1])


@dataclass(frozen=True)
class TruthConfig:
    hypothesis: Hypothesis
    theta_star: np.ndarray

    def __post_init__(self):
        hyp = Hypothesis(self.hypothesis)
        theta = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        object.__setattr__(self, "hypothesis", hyp)
        object.__setattr__(self, "theta_star", theta)

    @property
    def effective_theta(self) -> np.ndarray:
        """Parameter that generates the data: zero under H0."""
        if self.hypothesis is Hypothesis.H0:
            return np.zeros_like(self.theta_star)
        return self.theta_star


def trial_seed_sequence(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Counter-derived per-trial seed; independent of the order trials run in."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))


class NoiseSampler:
    """Sequential stream of stacked noise vectors ``gamma(t)`` for one trial."""

    def __init__(self, model, seed=0, zero: bool = False):
        self._chol = block_diag(*model.chol)
        self.dim = self._chol.shape[0]
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(int(seed))
        self.seed = seed
        self.zero = zero
        self.position = 0
        self._rng = np.random.default_rng(seed)

    @classmethod
    def for_trial(cls, model, master_seed: int, trial: int, zero: bool = False) -> "NoiseSampler":
        return cls(model, trial_seed_sequence(master_seed, trial), zero=zero)

    def block(self, n_ticks: int) -> np.ndarray:
        """The next ``n_ticks`` noise vectors as a ``(n_ticks, sum M_n)`` array."""
        self.position += n_ticks
        if self.zero:
            return np.zeros((n_ticks, self.dim))
        return self._rng.standard_normal((n_ticks, self.dim)) @ self._chol.T

    def sample(self) -> np.ndarray:
        return self.block(1)[0]


def observation_mean(model, truth: TruthConfig) -> np.ndarray:
    theta = truth.effective_theta
    if theta.shape != (model.dim,):
        raise InvalidInput(f"theta_star has shape {theta.shape}, model expects ({model.dim},)")
    if truth.hypothesis is Hypothesis.H0:
        return np.zeros(model.total_obs)
    if isinstance(model, LinearModel):
        return model.mean(theta)
    return model.h_common(theta)


def sample_observation(model, truth: TruthConfig, sampler: NoiseSampler, t: int) -> np.ndarray:
    """Stacked observation ``y(t)``; ``t`` must match the sampler's stream position."""
    if sampler.dim != model.total_obs:
        raise InvalidInput(f"sampler produces {sampler.dim} values, model needs {model.total_obs}")
    if t != sampler.position:
        raise InvalidInput(f"sampler is at t={sampler.position}, requested t={t}")
    return observation_mean(model, truth) + sampler.sample()


def gram_matrix(m: LinearModel) -> np.ndarray:
    """``G = sum_n H_n^T Sigma_n^-1 H_n``."""
    return sum(h.T @ si @ h for h, si in zip(m.H, m.sigma_inv))


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    min_eigenvalue: float


def check_global_observability(m: LinearModel) -> ObservabilityReport:
    lam = float(np.linalg.eigvalsh(gram_matrix(m))[0])
    return ObservabilityReport(lam > OBSERVABILITY_TOL, lam)


def c1_linear(spec: Spectrum, m: LinearModel) -> float:
    """Smallest eigenvalue of ``L (x) I_M + G_H Sigma^-1 G_H^T``."""
    if spec.n_agents != m.n_agents:
        raise InvalidInput(f"graph has {spec.n_agents} agents, model has {m.n_agents}")
    mat = np.kron(spec.laplacian, np.eye(m.dim)) + m.innovation_matrix()
    c1 = float(np.linalg.eigvalsh(mat)[0])
    if c1 <= C1_TOL:
        raise ModelDegenerate(f"c1 = {c1:.3g}: model is not observable over this graph")
    return c1


# Index pairs (0-based) of the ten trigonometric sensing maps 5 sin(theta_i + theta_j).
TRIG_PAIRS = ((0, 1), (2, 1), (2, 3), (3, 4), (0, 4), (0, 2), (3, 1), (2, 4), (0, 3), (0, 4))
TRIG_AMPLITUDE = 5.0
TRIG_BOX = (-math.pi / 4, math.pi / 4)


def trig_model(n_agents: int = 10, sigma2: float = 2.0) -> NonlinearModel:
    """Ten scalar sensors ``5 sin(theta_i + theta_j)`` over a 5-dim parameter."""
    if n_agents != len(TRIG_PAIRS):
        raise InvalidInput(f"the trigonometric model is defined for {len(TRIG_PAIRS)} agents")
    dim = 5
    hs, grads = [], []
    for i, j in TRIG_PAIRS:
        def h(th, i=i, j=j):
            return TRIG_AMPLITUDE * np.sin(th[..., i] + th[..., j])[..., None]

        def grad(th, i=i, j=j):
            out = np.zeros(th.shape[:-1] + (dim, 1))
            c = TRIG_AMPLITUDE * np.cos(th[..., i] + th[..., j])
            out[..., i, 0] = c
            out[..., j, 0] = c
            return out

        hs.append(h)
        grads.append(grad)
    lip = (TRIG_AMPLITUDE * math.sqrt(2.0),) * n_agents
    return NonlinearModel(dim, tuple(hs), tuple(grads), lip, float(sigma2),
                          box=TRIG_BOX, name="trig10")


PAIRWISE_ROWS = (
    (1, 1, 0, 0, 0), (0, 1, 1, 0, 0), (0, 0, 1, 1, 0), (0, 0, 0, 1, 1), (1, 0, 0, 0, 1),
    (1, 0, 1, 0, 0), (0, 1, 0, 1, 0), (0, 0, 1, 0, 1), (1, 0, 0, 1, 0), (0, 1, 0, 0, 1),
)


def pairwise_linear_model(sigma2: float = 3.0) -> LinearModel:
    """Ten agents, each observing the sum of two of five parameter coordinates."""
    return LinearModel(tuple(np.array([row], dtype=float) for row in PAIRWISE_ROWS), sigma2)


def scalar_model(n_agents: int, n_informative: int, h: float, sigma2: float) -> LinearModel:
    """Scalar parameter seen with gain ``h`` by the first ``n_informative`` agents, pure noise elsewhere."""
    if not 0 <= n_informative <= n_agents:
        raise InvalidInput("need 0 <= n_informative <= n_agents")
    H = [np.array([[h if n < n_informative else 0.0]]) for n in range(n_agents)]
    return LinearModel(tuple(H), sigma2)


def monotonicity_ratios(model: NonlinearModel, theta: np.ndarray, theta_p: np.ndarray) -> np.ndarray:
    """Aggregate monotonicity ratio for each probe pair; coincident pairs dropped."""
    theta = np.atleast_2d(theta)
    theta_p = np.atleast_2d(theta_p)
    diff = theta - theta_p
    sq = np.einsum("pm,pm->p", diff, diff)
    keep = sq > 1e-24
    if not np.any(keep):
        raise InvalidInput("every probe pair is degenerate (theta == theta')")
    theta, theta_p, diff, sq = theta[keep], theta_p[keep], diff[keep], sq[keep]
    total = np.zeros(len(sq))
    for h, g, si in zip(model.h, model.grad, model.sigma_inv):
        dh = h(theta) - h(theta_p)
        total += np.einsum("pm,pmk,kl,pl->p", diff, g(theta), si, dh)
    return total / sq


def monotonicity_constant_nl(model: NonlinearModel, probes: int, seed=0,
                             box: tuple | None = None) -> float:
    """Empirical lower envelope of the aggregate strict-monotonicity ratio.

    Probe pairs are drawn uniformly from ``box`` (default: the model's box).  The
    result can refute a positive constant but never certify one.
    """
    if probes < 100:
        raise InvalidInput(f"need at least 100 probes, got {probes}")
    box = box or model.box
    if box is None:
        raise InvalidInput("monotonicity probing needs a parameter box")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(box[0], box[1], size=(probes, model.dim))
    theta_p = rng.uniform(box[0], box[1], size=(probes, model.dim))
    c1 = float(monotonicity_ratios(model, theta, theta_p).min())
    if c1 <= 0:
        warnings.warn(f"monotonicity probe found c1 = {c1:.3g} <= 0", AssumptionWarning, stacklevel=2)
    return c1


def lipschitz_probe(model: NonlinearModel, pairs: int, seed=0, box: tuple | None = None) -> np.ndarray:
    """Largest observed ``||h_n(x) - h_n(x')|| / ||x - x'||`` per agent."""
    box = box or model.box or (-1.0, 1.0)
    rng = np.random.default_rng(seed)
    x = rng.uniform(box[0], box[1], size=(pairs, model.dim))
    xp = rng.uniform(box[0], box[1], size=(pairs, model.dim))
    dist = np.linalg.norm(x - xp, axis=1)
    return np.array([np.max(np.linalg.norm(h(x) - h(xp), axis=1) / dist) for h in model.h])


def linear_model_from_dict(d: dict) -> tuple[LinearModel, TruthConfig | None]:
    """Build a linear model (and optionally the truth) from the JSON config layout."""
    unknown = set(d) - {"H", "Sigma", "theta_star", "hypothesis", "kind"}
    if unknown:
        raise InvalidInput(f"unknown linear-model fields: {sorted(unknown)}")
    if "H" not in d or "Sigma" not in d:
        raise InvalidInput("linear model needs 'H' and 'Sigma'")
    model = LinearModel(tuple(np.atleast_2d(np.asarray(h, dtype=float)) for h in d["H"]), d["Sigma"])
    truth = None
    if "theta_star" in d:
        truth = TruthConfig(Hypothesis(d.get("hypothesis", "H1")), np.asarray(d["theta_star"], dtype=float))
        if truth.theta_star.shape != (model.dim,):
            raise InvalidInput(f"theta_star must have length {model.dim}")
    return model, truth
