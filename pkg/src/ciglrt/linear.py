"""Consensus+innovations GLRT for linear models (CIGLRT-L) and the fusion-center baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (AssumptionViolated, AssumptionWarning, ContractViolation, InvalidInput,
                     NumericalDivergence)
from .network import ConsensusWeights, min_consensus_rounds
from .nl import Trajectory, _check_finite, _Recorder, decide, noise_blocks
from .sensing import LinearModel, TruthConfig, observation_mean


@dataclass(frozen=True)
class LSchedule:
    """``alpha_t = a/(t+1)``, ``beta_t = b/(t+1)**delta2`` with ``b = a`` unless given.

    When ``c1`` is given the gain condition ``a >= 1/(2 c1) + 2`` is checked; a
    violation warns, or raises when ``strict``.
    """

    a: float
    delta2: float
    c1: float | None = None
    strict: bool = False
    b: float | None = None

    def __post_init__(self):
        if not self.a >= 1.0:
            raise InvalidInput(f"a must be >= 1, got {self.a}")
        if not 0.0 < self.delta2 <= 1.0:
            raise InvalidInput(f"delta2 must lie in (0, 1], got {self.delta2}")
        if self.b is not None and not self.b > 0:
            raise InvalidInput(f"b must be positive, got {self.b}")
        if self.c1 is not None and self.a < 1.0 / (2.0 * self.c1) + 2.0:
            msg = f"a = {self.a} is below 1/(2 c1) + 2 = {1.0 / (2.0 * self.c1) + 2.0:.6g}"
            if self.strict:
                raise AssumptionViolated(msg)
            warnings.warn(msg, AssumptionWarning, stacklevel=3)

    def alpha(self, t):
        return self.a / (np.asarray(t, dtype=float) + 1.0)

    def beta(self, t):
        return self.consensus_gain / (np.asarray(t, dtype=float) + 1.0) ** self.delta2

    @property
    def consensus_gain(self) -> float:
        return float(self.a if self.b is None else self.b)

    @property
    def alpha0(self) -> float:
        return float(self.a)


@dataclass(frozen=True)
class LState:
    """State at tick ``t``.

    ``theta`` is theta(t) and ``theta_prev`` theta(t-1), both ``(..., N, M)``; ``s`` is the
    stacked running average of y(0..t-1), ``(..., sum M_n)``; ``z`` is the held statistic;
    ``z_hat`` the value computed at the last refresh, published at ``publish_at``.
    """

    t: int
    theta: np.ndarray
    theta_prev: np.ndarray
    s: np.ndarray
    z: np.ndarray
    z_hat: np.ndarray
    k: int
    publish_at: int = -1

    @classmethod
    def initial(cls, model: LinearModel, k: int, theta0=None, batch: tuple = ()) -> "LState":
        if k < 1:
            raise InvalidInput(f"k must be >= 1, got {k}")
        theta = np.zeros(batch + (model.n_agents, model.dim))
        if theta0 is not None:
            theta = theta + np.asarray(theta0, dtype=float)
        zeros = np.zeros(batch + (model.n_agents,))
        return cls(0, theta, theta.copy(), np.zeros(batch + (model.total_obs,)), zeros, zeros.copy(), k)


class _LinearOps:
    """Cached stacked operators of a linear model."""

    def __init__(self, model: LinearModel, laplacian: np.ndarray):
        self.model = model
        gh = model.stacked_operator()
        si = model.sigma_inv_full()
        self.gain = gh @ si                      # G_H Sigma^-1
        self.info = self.gain @ gh.T             # G_H Sigma^-1 G_H^T
        self.lap = np.kron(laplacian, np.eye(model.dim))
        self.n, self.m = model.n_agents, model.dim

    def step(self, theta, y, alpha, beta):
        shape = theta.shape
        vec = theta.reshape(shape[:-2] + (self.n * self.m,))
        new = vec - beta * vec @ self.lap.T + alpha * (y @ self.gain.T - vec @ self.info.T)
        return new.reshape(shape)


def l_step_estimate(state: LState, model: LinearModel, laplacian: np.ndarray,
                    schedule: LSchedule, y: np.ndarray, ops: _LinearOps | None = None) -> np.ndarray:
    """``theta(t+1) = theta - beta_t (L x I) theta + alpha_t G_H Sigma^-1 (y - G_H^T theta)``."""
    if state.theta.shape[-2:] != (model.n_agents, model.dim):
        raise InvalidInput(f"theta has shape {state.theta.shape}")
    if y.shape[-1] != model.total_obs:
        raise InvalidInput(f"observation has {y.shape[-1]} entries, expected {model.total_obs}")
    ops = ops or _LinearOps(model, laplacian)
    new = ops.step(state.theta, y, schedule.alpha(state.t), schedule.beta(state.t))
    _check_finite(new, state.t)
    return new


def l_update_running_average(s_prev: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
    """``s(t) = s(t-1) t/(t+1) + y(t)/(t+1)``; ``s(0) = y(0)``."""
    if t < 0:
        raise InvalidInput("t must be nonnegative")
    return s_prev * (t / (t + 1.0)) + y / (t + 1.0)


def local_statistic(model: LinearModel, theta: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Per-agent ``theta_n^T H_n^T Sigma_n^-1 (s_n - H_n theta_n / 2)``."""
    parts = model.split(s)
    out = []
    for n, (h, si) in enumerate(zip(model.H, model.sigma_inv)):
        mean = theta[..., n, :] @ h.T
        out.append(np.einsum("...k,kl,...l->...", mean, si, parts[n] - mean / 2.0))
    return np.stack(out, axis=-1)


def is_refresh_tick(t: int, k: int) -> bool:
    return t >= 1 and (t - 1) % k == 0


def l_refresh_statistic(state: LState, model: LinearModel, weights: ConsensusWeights,
                        w_power: np.ndarray | None = None) -> LState:
    """Refresh at tick ``t = k(j-1) + 1``: mix local values from ``theta(t-1)``, ``s(t-1)``.

    The mixed value becomes ``z_hat`` and is published ``k - 1`` ticks later.
    """
    k = state.k
    if not is_refresh_tick(state.t, k):
        raise ContractViolation(f"refresh called at t={state.t}, allowed only at t = 1 mod {k}")
    if w_power is None:
        w_power = weights.power(k - 1)
    local = local_statistic(model, state.theta_prev, state.s)
    z_hat = np.einsum("nl,...l->...n", w_power, local)
    if not np.all(np.isfinite(z_hat)):
        raise NumericalDivergence("non-finite decision statistic", state.t)
    publish = state.t + k - 1
    z = z_hat if publish == state.t else state.z
    return replace(state, z_hat=z_hat, z=z, publish_at=publish)


l_decide = decide


def l_step(state: LState, model: LinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
           schedule: LSchedule, y: np.ndarray, ops: _LinearOps | None = None,
           w_power: np.ndarray | None = None) -> LState:
    """Consume ``y(t)`` and move to tick ``t+1``, refreshing and publishing on schedule."""
    t = state.t
    theta_new = l_step_estimate(state, model, laplacian, schedule, y, ops)
    s_new = l_update_running_average(state.s, y, t)
    new = replace(state, t=t + 1, theta=theta_new, theta_prev=state.theta, s=s_new)
    if is_refresh_tick(t + 1, state.k):
        new = l_refresh_statistic(new, model, weights, w_power)
    elif new.publish_at == t + 1:
        new = replace(new, z=new.z_hat)
    return new


def check_rounds(k: int, n_agents: int, r: float, allow_small_k: bool = False) -> int:
    """Validate ``k >= k_min``; returns ``k_min``."""
    k_min = 1 if r <= 0.0 else min_consensus_rounds(n_agents, r)
    if k < k_min:
        msg = f"k = {k} is below the minimum {k_min} rounds for N={n_agents}, r={r:.6g}"
        if not allow_small_k:
            raise AssumptionViolated(msg)
        warnings.warn(msg, AssumptionWarning, stacklevel=2)
    return k_min


def simulate_l(model: LinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
               schedule: LSchedule, truth: TruthConfig, horizon: int, trials, k: int,
               master_seed: int = 42, theta_stride: int = 10, z_stride: int = 1,
               theta0=None, zero_noise: bool = False, components: bool = False,
               allow_small_k: bool = False) -> Trajectory:
    """Vectorized batch of CIGLRT-L trials with the given trial indices."""
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    check_rounds(k, model.n_agents, weights.r, allow_small_k)
    trials = list(trials)
    batch = len(trials)
    ops = _LinearOps(model, laplacian)
    w_power = weights.power(k - 1)
    state = LState.initial(model, k, theta0, batch=(batch,))
    mean = observation_mean(model, truth)
    noise = noise_blocks(model, master_seed, trials, horizon, zero_noise)
    rec = _Recorder(batch, model.n_agents, model.dim, horizon, theta_stride, z_stride, components)
    star = truth.effective_theta
    rec.record(0, state.theta, state.z, star)
    for t in range(horizon):
        state = l_step(state, model, weights, laplacian, schedule, mean + noise[:, t], ops, w_power)
        rec.record(t + 1, state.theta, state.z, star)
    refresh = np.array([t >= k and t % k == 0 for t in rec.z_times])
    return Trajectory(rec.theta_times, rec.err, rec.z_times, rec.z, state.theta, rec.comp, refresh)


def l_run_trial(model: LinearModel, weights: ConsensusWeights, laplacian: np.ndarray,
                schedule: LSchedule, truth: TruthConfig, horizon: int, k: int, seed: int = 42,
                trial: int = 0, **kwargs) -> Trajectory:
    return simulate_l(model, weights, laplacian, schedule, truth, horizon, [trial], k, seed, **kwargs)


@dataclass(frozen=True)
class CentralState:
    """Fusion-center state for the scalar model.

    ``s`` is the running average of y(0..t-1) over the informative agents (one entry each).
    """

    t: int
    theta_c: np.ndarray
    theta_prev: np.ndarray
    s: np.ndarray
    z_c: np.ndarray
    g: float

    @classmethod
    def initial(cls, g: float, n_informative: int, theta0: float = 0.0, batch: tuple = ()) -> "CentralState":
        theta = np.full(batch, float(theta0))
        return cls(0, theta, theta.copy(), np.zeros(batch + (n_informative,)), np.zeros(batch), float(g))


def check_central_gain(g: float, h: float, sigma2: float) -> None:
    if not 2.0 * h * h * g > sigma2:
        raise AssumptionViolated(f"fusion gain g={g} violates 2 h^2 g > sigma^2 (h={h}, sigma^2={sigma2})")


def central_step(state: CentralState, h: float, sigma2: float, y: np.ndarray) -> CentralState:
    """One fusion-center tick on the informative agents' observations ``y`` of shape ``(..., N1)``.

    The statistic at ``t+1`` uses ``theta_c(t-1)`` and ``s(t-1)``; it is 0 at ``t+1 = 1``.
    """
    check_central_gain(state.g, h, sigma2)
    t = state.t
    n1 = y.shape[-1]
    if t == 0:
        z = np.zeros_like(state.z_c)
    else:
        # state.s holds s(t-1) for t >= 1
        hp = h * state.theta_prev
        z = hp / (n1 * sigma2) * (state.s.sum(axis=-1) - hp / 2.0)
    kappa = state.g / (t + 1.0)
    theta = state.theta_c + kappa / (n1 * sigma2) * (h * y.sum(axis=-1) - n1 * h * h * state.theta_c)
    if not np.all(np.isfinite(theta)):
        raise NumericalDivergence("non-finite fusion estimate", t)
    # s(t) averages y(0..t); it is consumed by the statistic one tick later
    s_next = l_update_running_average(state.s, y, t)
    return CentralState(t + 1, theta, state.theta_c, s_next, z, state.g)


def simulate_central(h: float, sigma2: float, n_agents: int, n_informative: int, g: float,
                     truth: TruthConfig, horizon: int, trials, master_seed: int = 42,
                     theta_stride: int = 10, z_stride: int = 1, zero_noise: bool = False) -> Trajectory:
    """Fusion-center baseline on the scalar model; recorded as a single pseudo-agent."""
    from .sensing import scalar_model

    check_central_gain(g, h, sigma2)
    model = scalar_model(n_agents, n_informative, h, sigma2)
    trials = list(trials)
    mean = observation_mean(model, truth)[:n_informative]
    noise = noise_blocks(model, master_seed, trials, horizon, zero_noise)[..., :n_informative]
    state = CentralState.initial(g, n_informative, batch=(len(trials),))
    rec = _Recorder(len(trials), 1, 1, horizon, theta_stride, z_stride, False)
    star = truth.effective_theta
    rec.record(0, state.theta_c[:, None, None], state.z_c[:, None], star)
    for t in range(horizon):
        state = central_step(state, h, sigma2, mean + noise[:, t])
        rec.record(t + 1, state.theta_c[:, None, None], state.z_c[:, None], star)
    return Trajectory(rec.theta_times, rec.err, rec.z_times, rec.z, state.theta_c[:, None, None])
