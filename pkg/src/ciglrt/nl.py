"""Consensus+innovations GLRT for nonlinear sensing models (CIGLRT-NL)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import block_diag

from .errors import InvalidInput, NumericalDivergence
from .network import ConsensusWeights
from .sensing import Hypothesis, NoiseSampler, NonlinearModel, TruthConfig, observation_mean

DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True)
class NlSchedule:
    """``alpha_t = a/(t+1)``, ``beta_t = b/(t+1)**tau2``."""

    a: float
    b: float
    tau2: float

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidInput(f"a must be positive, got {self.a}")
        if not self.b > 0:
            raise InvalidInput(f"b must be positive, got {self.b}")
        if not 0.0 < self.tau2 < 0.5:
            raise InvalidInput(f"tau2 must lie in (0, 1/2), got {self.tau2}")

    def alpha(self, t):
        return self.a / (np.asarray(t, dtype=float) + 1.0)

    def beta(self, t):
        return self.b / (np.asarray(t, dtype=float) + 1.0) ** self.tau2

    def gain_ok(self, c1: float) -> bool:
        """Whether ``a * c1 >= 1`` for a monotonicity constant ``c1``."""
        return self.a * c1 >= 1.0


@dataclass(frozen=True)
class NlState:
    """Estimates ``theta`` of shape ``(..., N, M)`` and statistics ``z`` of shape ``(..., N)``."""

    t: int
    theta: np.ndarray
    z: np.ndarray

    @classmethod
    def initial(cls, n_agents: int, dim: int, theta0=None, batch: tuple = ()) -> "NlState":
        theta = np.zeros(batch + (n_agents, dim))
        if theta0 is not None:
            theta = theta + np.asarray(theta0, dtype=float)
        return cls(0, theta, np.zeros(batch + (n_agents,)))


def _check_finite(theta: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(theta)):
        raise NumericalDivergence("non-finite estimate", t)
    if np.max(np.abs(theta), initial=0.0) > DIVERGENCE_LIMIT:
        raise NumericalDivergence(f"estimate norm exceeded {DIVERGENCE_LIMIT:g}", t)


def _agent_terms(model: NonlinearModel, theta: np.ndarray, y: np.ndarray):
    """Per-agent ``h_n(theta_n)``, gradients and observation slices."""
    ys = model.split(y)
    hs = [model.h[n](theta[..., n, :]) for n in range(model.n_agents)]
    return hs, ys


def _innovation(model: NonlinearModel, theta: np.ndarray, hs, ys) -> np.ndarray:
    out = np.empty_like(theta)
    for n, si in enumerate(model.sigma_inv):
        g = model.grad[n](theta[..., n, :])
        out[..., n, :] = np.einsum("...mk,kl,...l->...m", g, si, ys[n] - hs[n])
    return out


def nl_step_estimate(state: NlState, model: NonlinearModel, laplacian: np.ndarray,
                     schedule: NlSchedule, y: np.ndarray) -> np.ndarray:
    """One consensus+innovations estimate update; returns ``theta(t+1)``."""
    theta = state.theta
    if theta.shape[-2:] != (model.n_agents, model.dim):
        raise InvalidInput(f"theta has shape {theta.shape}, expected (..., {model.n_agents}, {model.dim})")
    if y.shape[-1] != model.total_obs:
        raise InvalidInput(f"observation has {y.shape[-1]} entries, expected {model.total_obs}")
    hs, ys = _agent_terms(model, theta, y)
    t = state.t
    new = (theta - schedule.beta(t) * np.einsum("nl,...lm->...nm", laplacian, theta)
           + schedule.alpha(t) * _innovation(model, theta, hs, ys))
    _check_finite(new, t)
    return new


def nl_step_estimate_stacked(state: NlState, model: NonlinearModel, laplacian: np.ndarray,
                             schedule: NlSchedule, y: np.ndarray) -> np.ndarray:
    """Same update written with stacked ``NM``-vectors and block operators (single trial)."""
    theta = np.asarray(state.theta)
    n, m = model.n_agents, model.dim
    vec = theta.reshape(n * m)
    grad = block_diag(*[model.grad[i](theta[i]) for i in range(n)])
    h = np.concatenate([model.h[i](theta[i]) for i in range(n)])
    t = state.t
    new = (vec - schedule.beta(t) * np.kron(laplacian, np.eye(m)) @ vec
           + schedule.alpha(t) * grad @ model.sigma_inv_full() @ (y - h))
    new = new.reshape(n, m)
    _check_finite(new, t)
    return new


def nl_llr(model: NonlinearModel, n: int, theta_n: np.ndarray, y_n: np.ndarray) -> np.ndarray:
    """Gaussian log-likelihood ratio of agent ``n`` with ``theta_n`` plugged in."""
    h = model.h[n](np.asarray(theta_n, dtype=float))
    return np.einsum("...k,kl,...l->...", h, model.sigma_inv[n], np.asarray(y_n) - h / 2.0)


def _llr_all(model: NonlinearModel, hs, ys) -> np.ndarray:
    return np.stack([np.einsum("...k,kl,...l->...", hs[n], si, ys[n] - hs[n] / 2.0)
                     for n, si in enumerate(model.sigma_inv)], axis=-1)


def _mix(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("nl,...l->...n", w, z)


def nl_step_statistic(state: NlState, model: NonlinearModel, weights: ConsensusWeights,
                      y: np.ndarray) -> np.ndarray:
    """``z(t+1)`` from ``z(t)``, the pre-update estimate ``theta(t)`` and ``y(t)``."""
    hs, ys = _agent_terms(model, state.theta, y)
    t = state.t
    z = (t / (t + 1.0)) * _mix(state.z, weights.w) + _llr_all(model, hs, ys) / (t + 1.0)
    if not np.all(np.isfinite(z)):
        raise NumericalDivergence("non-finite decision statistic", t)
    return z


def nl_step(state: NlState, model: NonlinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
            schedule: NlSchedule, y: np.ndarray, project: bool = False) -> NlState:
    """One full tick: statistic with ``theta(t)``, then the estimate, both on ``y(t)``."""
    t = state.t
    theta = state.theta
    hs, ys = _agent_terms(model, theta, y)
    z = (t / (t + 1.0)) * _mix(state.z, weights.w) + _llr_all(model, hs, ys) / (t + 1.0)
    new = (theta - schedule.beta(t) * np.einsum("nl,...lm->...nm", laplacian, theta)
           + schedule.alpha(t) * _innovation(model, theta, hs, ys))
    _check_finite(new, t)
    if not np.all(np.isfinite(z)):
        raise NumericalDivergence("non-finite decision statistic", t)
    if project:
        new = model.project(new)
    return NlState(t + 1, new, z)


def decide(z, eta: float):
    """``H1`` iff ``z > eta``; arrays give a boolean H1 mask."""
    if np.ndim(z) == 0:
        return Hypothesis.H1 if z > eta else Hypothesis.H0
    return np.asarray(z) > eta


nl_decide = decide


@dataclass
class Trajectory:
    """Recorded history of a batch of trials (leading axis = trial).

    ``err_norm[b, i, n]`` is ``||theta_n - theta*||`` at ``theta_times[i]``;
    ``z[b, i, n]`` is the statistic at ``z_times[i]``.
    """

    theta_times: np.ndarray
    err_norm: np.ndarray
    z_times: np.ndarray
    z: np.ndarray
    theta_final: np.ndarray
    err_components: np.ndarray | None = None
    z_refresh: np.ndarray | None = None

    @property
    def n_trials(self) -> int:
        return self.err_norm.shape[0]

    def trial(self, b: int) -> "Trajectory":
        sl = slice(b, b + 1)
        return replace(self, err_norm=self.err_norm[sl], z=self.z[sl], theta_final=self.theta_final[sl],
                       err_components=None if self.err_components is None else self.err_components[sl])


def record_times(horizon: int, stride: int) -> np.ndarray:
    """``0, stride, 2*stride, ...`` plus the horizon itself."""
    if stride < 1:
        raise InvalidInput(f"stride must be >= 1, got {stride}")
    times = np.arange(0, horizon + 1, stride)
    if times[-1] != horizon:
        times = np.append(times, horizon)
    return times


class _Recorder:
    def __init__(self, batch, n_agents, dim, horizon, theta_stride, z_stride, components):
        self.theta_times = record_times(horizon, theta_stride)
        self.z_times = record_times(horizon, z_stride)
        self.err = np.empty((batch, len(self.theta_times), n_agents), dtype=np.float32)
        self.comp = (np.empty((batch, len(self.theta_times), n_agents, dim), dtype=np.float32)
                     if components else None)
        self.z = np.empty((batch, len(self.z_times), n_agents))
        self._ti = 0
        self._zi = 0

    def record(self, t, theta, z, theta_star):
        if self._ti < len(self.theta_times) and self.theta_times[self._ti] == t:
            diff = theta - theta_star
            self.err[:, self._ti] = np.linalg.norm(diff, axis=-1)
            if self.comp is not None:
                self.comp[:, self._ti] = np.abs(diff)
            self._ti += 1
        if self._zi < len(self.z_times) and self.z_times[self._zi] == t:
            self.z[:, self._zi] = z
            self._zi += 1


def noise_blocks(model, master_seed: int, trials, horizon: int, zero: bool = False) -> np.ndarray:
    """Stacked noise for the given trial indices, shape ``(len(trials), horizon, sum M_n)``."""
    return np.stack([NoiseSampler.for_trial(model, master_seed, i, zero=zero).block(horizon)
                     for i in trials])


def simulate_nl(model: NonlinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
                schedule: NlSchedule, truth: TruthConfig, horizon: int, trials,
                master_seed: int = 42, theta_stride: int = 10, z_stride: int = 1,
                project: bool = False, theta0=None, zero_noise: bool = False,
                components: bool = False) -> Trajectory:
    """Run the trials with indices ``trials`` side by side (vectorized over the batch)."""
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    trials = list(trials)
    batch = len(trials)
    state = NlState.initial(model.n_agents, model.dim, theta0, batch=(batch,))
    mean = observation_mean(model, truth)
    noise = noise_blocks(model, master_seed, trials, horizon, zero_noise)
    rec = _Recorder(batch, model.n_agents, model.dim, horizon, theta_stride, z_stride, components)
    star = truth.effective_theta
    rec.record(0, state.theta, state.z, star)
    for t in range(horizon):
        state = nl_step(state, model, weights, laplacian, schedule, mean + noise[:, t], project)
        rec.record(t + 1, state.theta, state.z, star)
    return Trajectory(rec.theta_times, rec.err, rec.z_times, rec.z, state.theta, rec.comp)


def nl_run_trial(model: NonlinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
                 schedule: NlSchedule, truth: TruthConfig, horizon: int, seed: int = 42,
                 trial: int = 0, **kwargs) -> Trajectory:
    """A single trial; deterministic in ``(seed, trial)``."""
    return simulate_nl(model, weights, laplacian, schedule, truth, horizon, [trial], seed, **kwargs)


def write_trajectory_csv(traj: Trajectory, path, trial: int = 0) -> None:
    """Columns ``t, agent, err_norm, z`` at the estimate recording times."""
    z_index = {int(t): i for i, t in enumerate(traj.z_times)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        header = ["t", "agent", "err_norm", "z"]
        if traj.z_refresh is not None:
            header.append("z_refresh_tick")
        wr.writerow(header)
        for i, t in enumerate(traj.theta_times):
            zi = z_index.get(int(t))
            for n in range(traj.err_norm.shape[2]):
                z = "" if zi is None else repr(float(traj.z[trial, zi, n]))
                row = [int(t), n, repr(float(traj.err_norm[trial, i, n])), z]
                if traj.z_refresh is not None:
                    row.append(int(bool(traj.z_refresh[zi])) if zi is not None else "")
                wr.writerow(row)


def write_decisions_csv(traj: Trajectory, eta: float, path, trial: int = 0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "agent", "decision"])
        for i, t in enumerate(traj.z_times):
            for n in range(traj.z.shape[2]):
                wr.writerow([int(t), n, decide(traj.z[trial, i, n], eta).value])
