"""Threshold intervals and large-deviations rates for the GLRT detectors.

All exponents are reported as nonnegative decay rates X in P(error) ~ exp(-X t).
A rate that the formulas cannot certify is reported as 0 with a flag set.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInput, ModelDegenerate, ResourceLimit
from .linear import LSchedule
from .network import Spectrum
from .sensing import LinearModel, NonlinearModel, c1_linear, gram_matrix, scalar_model

PT_SIZE_CAP = 4000
BURNIN_SCAN_LIMIT = 10**12


def _nan_to_none(d: dict) -> dict:
    out = {}
    for key, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            out[key] = None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        elif isinstance(v, dict):
            out[key] = _nan_to_none(v)
        else:
            out[key] = v
    return out


# ----------------------------------------------------------------------------
# nonlinear detector


@dataclass(frozen=True)
class NlBounds:
    eta: float
    eta_lo: float
    eta_hi: float
    lambda_star: float
    fa_exponent: float
    feasible: bool
    eta_in_range: bool
    inconclusive_signal: bool
    a_prime: float
    b_prime: float
    total_obs: int

    def LE(self, lam) -> np.ndarray:
        """Chernoff-type objective whose value at ``min(lambda*, 1)`` is the false-alarm rate."""
        lam = np.asarray(lam, dtype=float)
        return (self.eta * lam / self.a_prime
                + 0.5 * self.total_obs * np.log(1.0 - lam * self.b_prime / self.a_prime))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["LE"] = d.pop("fa_exponent")
        return _nan_to_none(d)


def nl_bounds(n_agents: int, obs_dims, r: float, model: NonlinearModel, theta_star, eta: float) -> NlBounds:
    if not 0.0 <= r < 1.0:
        raise InvalidInput(f"r must lie in [0, 1), got {r}")
    n = n_agents
    total = int(sum(obs_dims))
    a_p = 1.0 / n + math.sqrt(n)
    b_p = 1.0 / n + math.sqrt(n) * r
    h = model.h_common(np.asarray(theta_star, dtype=float))
    si = model.sigma_inv_full()
    energy = float(h @ si @ h)
    eta_lo = b_p * total / 2.0
    eta_hi = energy / (2.0 * n)
    lam_star = a_p / b_p - a_p * total / (2.0 * eta) if eta > 0 else -math.inf
    lam = min(lam_star, 1.0)
    if lam > 0:
        fa = eta * lam / a_p + 0.5 * total * math.log(1.0 - lam * b_p / a_p)
    else:
        fa = 0.0
    lam_max = float(np.linalg.eigvalsh(si)[-1])
    inconclusive = float(h @ h) < (1.0 + n * math.sqrt(n) * r) * total / lam_max
    return NlBounds(float(eta), eta_lo, eta_hi, float(lam_star), max(fa, 0.0), eta_hi > eta_lo,
                    eta_lo < eta < eta_hi, bool(inconclusive), a_p, b_p, total)


# ----------------------------------------------------------------------------
# linear detector: burn-in and contraction constants


@dataclass(frozen=True)
class BurnIn:
    t2: int
    t3: int
    t1: int


def _least_true(pred) -> int:
    """Least ``t >= 0`` with ``pred(t)`` for a predicate that is monotone (False..True)."""
    if pred(0):
        return 0
    hi = 1
    while not pred(hi):
        hi *= 2
        if hi > BURNIN_SCAN_LIMIT:
            raise ResourceLimit("burn-in time exceeds scan limit")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def l_burnin_times(spec: Spectrum, model: LinearModel, schedule: LSchedule) -> BurnIn:
    c1 = c1_linear(spec, model)
    q_max = float(np.linalg.eigvalsh(model.innovation_matrix())[-1])
    ln = spec.lambda_max
    # both left-hand sides decrease in t, so the least crossing is the answer
    t2 = _least_true(lambda t: schedule.beta(t) * ln + schedule.alpha(t) * q_max < 1.0)
    t3 = _least_true(lambda t: c1 * schedule.alpha(t) < 1.0)
    return BurnIn(t2, t3, max(t2, t3))


def transition_matrix(spec: Spectrum, model: LinearModel, schedule: LSchedule, u: int) -> np.ndarray:
    """``A(u) = I - beta_u (L x I) - alpha_u G_H Sigma^-1 G_H^T``."""
    m = model.dim
    nm = spec.n_agents * m
    return (np.eye(nm) - schedule.beta(u) * np.kron(spec.laplacian, np.eye(m))
            - schedule.alpha(u) * model.innovation_matrix())


def _norm_sym(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


def log_c3(spec: Spectrum, model: LinearModel, schedule: LSchedule, t1: int) -> float:
    """``log c3`` with ``c3 = sum_{v<t1} alpha_v^2 prod_{u=v+1}^{t1-1} ||A(u)||`` (``-inf`` if t1 = 0)."""
    if t1 <= 0:
        return -math.inf
    lap = np.kron(spec.laplacian, np.eye(model.dim))
    q = model.innovation_matrix()
    eye = np.eye(lap.shape[0])
    log_norms = np.array([math.log(_norm_sym(eye - schedule.beta(u) * lap - schedule.alpha(u) * q))
                          for u in range(1, t1)])
    # suffix[v] = sum_{u=v+1}^{t1-1} log||A(u)||
    suffix = np.concatenate([np.cumsum(log_norms[::-1])[::-1], [0.0]])
    v = np.arange(t1)
    terms = 2.0 * np.log(schedule.alpha(v)) + suffix
    return float(np.logaddexp.reduce(terms))


def _pt_bound_terms(log_c3v: float, c1: float, alpha0: float, t1: int, t: float) -> float:
    """Right-hand side of the ``t ||P_t||`` bound, evaluated in logs where it can overflow."""
    p = 2.0 * c1 * alpha0
    if p - 1.0 <= 0:
        return math.inf
    first = 0.0
    if math.isfinite(log_c3v):
        first = math.exp(min(log_c3v + p * math.log(t1 + 1) - (p - 1.0) * math.log(t), 700.0))
    return first + alpha0 ** 2 / t + alpha0 ** 2 / (p - 1.0)


# ----------------------------------------------------------------------------
# linear detector bounds


@dataclass(frozen=True)
class LBounds:
    eta: float
    k: int
    r: float
    t2: int
    t3: int
    t1: int
    c1: float
    c3: float
    c4: float
    c4_star: float
    eta2: float
    eta_lo: float
    eta_hi: float
    ld0: float
    ld1: float
    ld1_gaussian: float
    ld1_chernoff: float
    feasible: bool
    eta_in_range: bool
    inconclusive_signal: bool
    miss_bound_undefined: bool
    info_norm: float
    theta_energy: float
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["LD0"] = d.pop("ld0")
        d["LD1"] = d.pop("ld1")
        d["flags"] = list(self.flags)
        return _nan_to_none(d)


def _mix_factors(n: int, r: float, k: int):
    rk = r ** (k - 1)
    return 1.0 / n + math.sqrt(n) * rk, n * math.sqrt(n) * rk


def fa_rate(eta: float, b: float, total: float) -> float:
    """False-alarm rate ``eta/b - (S/2)(1 + log(2 eta/(b S)))``; 0 at the floor ``eta = b S/2``."""
    if eta <= b * total / 2.0:
        return 0.0
    x = 2.0 * eta / (b * total)
    return 0.5 * total * (x - 1.0 - math.log(x))


def l_bounds(spec: Spectrum, model: LinearModel, schedule: LSchedule, theta_star, r: float,
             k: int, eta: float) -> LBounds:
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    if not 0.0 <= r < 1.0:
        raise InvalidInput(f"r must lie in [0, 1), got {r}")
    n, m = model.n_agents, model.dim
    total = model.total_obs
    theta = np.asarray(theta_star, dtype=float)
    c1 = c1_linear(spec, model)
    burn = l_burnin_times(spec, model, schedule)
    t1 = burn.t1
    a0 = schedule.alpha0
    q_norm = float(np.linalg.eigvalsh(model.innovation_matrix())[-1])
    energy = float(theta @ gram_matrix(model) @ theta)
    b, nsr = _mix_factors(n, r, k)
    p = 2.0 * c1 * a0
    flags = []
    if p - 1.0 <= 0:
        raise ModelDegenerate(f"2 c1 alpha0 - 1 = {p - 1.0:.3g} <= 0; rates are undefined")

    slack = m * a0 ** 2 * q_norm ** 2 * (1.0 + nsr) / (p - 1.0)
    eta_lo = b * total / 2.0
    eta_hi = energy * (1.0 - nsr) / (2.0 * n) - slack
    feasible = eta_hi > eta_lo
    lam_g = float(np.linalg.eigvalsh(gram_matrix(model))[0])
    inconclusive = float(theta @ theta) < (
        (1.0 + nsr) * total / (lam_g * (1.0 - nsr))
        + 2.0 * m * n * a0 ** 2 * q_norm ** 2 * (1.0 + nsr) / (lam_g * (p - 1.0) * (1.0 - nsr)))
    if nsr >= 1.0:
        flags.append("k_below_minimum")

    lc3 = log_c3(spec, model, schedule, t1)
    c3 = math.exp(lc3) if lc3 < 700 else math.inf
    t1d = max(t1, 1)  # guard: the constant is stated for t1 >= 1
    denom_first = 0.0
    if math.isfinite(lc3):
        log_first = lc3 + p * math.log(t1 + 1) - math.log(k) - (p - 1.0) * math.log(t1d)
        denom_first = math.exp(log_first) if log_first < 700 else math.inf
    c4 = 1.0 / (q_norm * (denom_first + a0 ** 2 / (k * t1d) + a0 ** 2 / (p - 1.0)))

    eta2 = (-2.0 * n * eta + energy * (1.0 - nsr)) / (4.0 * q_norm * (1.0 + nsr))
    c4_star = (p - 1.0) / (a0 ** 2 * q_norm) - n * m / (2.0 * eta2) if eta2 != 0 else -math.inf

    ld0 = fa_rate(eta, b, total)
    if eta <= eta_lo:
        flags.append("eta_at_or_below_fa_floor")

    gauss = (-eta / 4.0 + energy * (1.0 / n - math.sqrt(n) * r ** (k - 1)) / 8.0) ** 2 / (2.0 * energy * b * b)
    undefined, chern = _chernoff(eta2, c4, c4_star, a0 ** 2 * q_norm / (p - 1.0), 0.5 * n * m, flags)
    ld1 = 0.0 if undefined else min(gauss, chern)
    return LBounds(float(eta), int(k), float(r), burn.t2, burn.t3, t1, c1, c3, c4, float(c4_star),
                   float(eta2), eta_lo, eta_hi, ld0, ld1, gauss, chern, feasible,
                   bool(eta_lo < eta < eta_hi), bool(inconclusive), undefined, q_norm, energy,
                   tuple(flags))


def threshold_floor(n_agents: int, total_obs: int, r: float, k: int, epsilon: float = 0.0) -> float:
    """``(1/N + sqrt(N) r^(k-1)) sum M_n / 2 + epsilon``."""
    b, _ = _mix_factors(n_agents, r, k)
    return b * total_obs / 2.0 + epsilon


# ----------------------------------------------------------------------------
# scalar model and fusion center


@dataclass(frozen=True)
class ScalarBounds:
    eta: float
    t1: int
    c1: float
    c3: float
    c4: float
    c4_star: float
    eta2: float
    eta_lo: float
    eta_hi: float
    ld0: float
    ld1: float
    theta_feasible: bool
    miss_bound_undefined: bool
    eta_c: float
    d1_star: float
    eta_lo_c: float
    eta_hi_c: float
    ld0_c: float
    ld1_c: float
    theta_feasible_c: bool
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        for src, dst in (("ld0", "LD0"), ("ld1", "LD1"), ("ld0_c", "LD0_c"), ("ld1_c", "LD1_c")):
            d[dst] = d.pop(src)
        d["flags"] = list(self.flags)
        return _nan_to_none(d)


def central_fa_rate(eta: float, n_informative: int) -> float:
    """``N1 eta - (N1/2)(1 + log 2 eta)``; 0 at the floor ``eta = 1/2``."""
    if eta <= 0.5:
        return 0.0
    return n_informative * eta - 0.5 * n_informative * (1.0 + math.log(2.0 * eta))


def scalar_bounds(n_agents: int, n_informative: int, h: float, sigma2: float, spec: Spectrum,
                  schedule: LSchedule, r: float, k: int, eta: float, theta_star: float,
                  g: float) -> ScalarBounds:
    """Distributed and fusion-center bounds for the scalar model.

    ``g`` is the fusion-center gain; it plays the role of the initial step size there.
    """
    if n_informative < 1 or h == 0:
        raise ModelDegenerate("scalar model is unobservable (needs N1 >= 1 and h != 0)")
    n, n1 = n_agents, n_informative
    model = scalar_model(n, n1, h, sigma2)
    c1 = c1_linear(spec, model)
    burn = l_burnin_times(spec, model, schedule)
    t1 = burn.t1
    a0 = schedule.alpha0
    p = 2.0 * c1 * a0
    if p - 1.0 <= 0:
        raise ModelDegenerate(f"2 c1 alpha0 - 1 = {p - 1.0:.3g} <= 0")
    b, nsr = _mix_factors(n, r, k)
    th2 = float(theta_star) ** 2
    flags = []

    theta_feasible = th2 >= (1.0 + nsr) / (1.0 - nsr) * (
        n * sigma2 / (n1 * h * h) + 2.0 * n * a0 ** 2 * h * h / (n1 * sigma2 * (p - 1.0)))
    eta_lo = b * n1 / 2.0
    eta_hi = (n1 * h * h * th2 * (1.0 - nsr) / (2.0 * n * sigma2)
              - a0 ** 2 * h ** 4 * (1.0 + nsr) / (sigma2 ** 2 * (p - 1.0)))

    lc3 = log_c3(spec, model, schedule, t1)
    c3 = math.exp(lc3) if lc3 < 700 else math.inf
    t1d = max(t1, 1)
    first = 0.0
    if math.isfinite(lc3):
        lf = lc3 + p * math.log(t1 + 1) - math.log(k) - (p - 1.0) * math.log(t1d)
        first = math.exp(lf) if lf < 700 else math.inf
    c4 = sigma2 / (h * h * (first + a0 ** 2 / (k * t1d) + a0 ** 2 / (p - 1.0)))
    eta2 = (-2.0 * n * sigma2 * eta + n1 * h * h * th2 * (1.0 - nsr)) / (4.0 * h * h * (1.0 + nsr))
    c4_star = sigma2 * (p - 1.0) / (a0 ** 2 * h * h) - n / (2.0 * eta2) if eta2 != 0 else -math.inf

    ld0 = fa_rate(eta, b, n1)
    gauss = ((-eta / 4.0 + n1 * h * h * th2 * (1.0 / n - math.sqrt(n) * r ** (k - 1)) / (8.0 * sigma2)) ** 2
             / (2.0 * n1 * h * h * th2 * b * b / sigma2))
    undefined, chern = _chernoff(eta2, c4, c4_star, a0 ** 2 * h * h / (sigma2 * (p - 1.0)), n / 2.0, flags)
    ld1 = 0.0 if undefined else min(gauss, chern)

    # fusion center with kappa_0 = g
    kap = float(g)
    gain = 2.0 * h * h * kap - sigma2
    theta_feasible_c = gain > 0 and th2 >= 2.0 * n1 * h * h * kap ** 2 / gain + n1 * sigma2 / (h * h)
    eta_lo_c = 0.5
    denom = h * h * kap - sigma2
    eta_hi_c = (h * h * th2 / (2.0 * n1 * sigma2)
                - (2.0 * kap ** 2 * h ** 4 / (n1 * sigma2 * denom) if denom > 0 else math.inf))
    if denom <= 0:
        flags.append("central_interval_undefined")
    eta_c = n1 * sigma2 / (h * h) * (-eta / 2.0 + h * h * th2 / (4.0 * n1 * sigma2))
    d1_star = (gain * n1) / (kap ** 2 * h * h) - n1 / (2.0 * eta_c) if eta_c != 0 else -math.inf
    ld0_c = central_fa_rate(eta, n1)
    gauss_c = sigma2 * (-eta / 4.0 + h * h * th2 / (8.0 * sigma2)) ** 2 / (2.0 * h * h * th2)
    cflags = []
    undef_c, chern_c = _chernoff(eta_c, d1_star, d1_star, kap ** 2 * h * h / gain if gain > 0 else math.inf,
                                 float(n1), cflags)
    flags.extend("central_" + f for f in cflags)
    ld1_c = 0.0 if undef_c else min(gauss_c, chern_c)
    return ScalarBounds(float(eta), t1, c1, c3, c4, float(c4_star), float(eta2), eta_lo, eta_hi, ld0, ld1,
                        bool(theta_feasible), undefined, float(eta_c), float(d1_star), eta_lo_c,
                        float(eta_hi_c), ld0_c, ld1_c, bool(theta_feasible_c), tuple(flags))


def _chernoff(eta2, c4, c4_star, slope, mult, flags):
    """``lam eta2 + mult log(1 - lam slope)`` at ``lam = min(c4, c4*)``; returns (undefined, value)."""
    if eta2 <= 0:
        flags.append("eta2_nonpositive")
        return True, 0.0
    if c4_star <= 0:
        flags.append("c4_star_nonpositive")
        return True, 0.0
    lam = min(c4, c4_star)
    arg = 1.0 - lam * slope
    if arg <= 0:
        flags.append("log_argument_nonpositive")
        return True, 0.0
    val = lam * eta2 + mult * math.log(arg)
    if val <= 0:
        flags.append("chernoff_term_nonpositive")
        return True, 0.0
    return False, val


# ----------------------------------------------------------------------------
# P_t diagnostic


@dataclass(frozen=True)
class PtDiagnostic:
    t: int
    t1: int
    pt_norm_times_t: float
    bound: float
    min_eigenvalue: float | None

    @property
    def holds(self) -> bool:
        return self.pt_norm_times_t <= self.bound


def pt_gram(spec: Spectrum, model: LinearModel, schedule: LSchedule, t: int) -> np.ndarray:
    """``sum_i alpha_i^2 Phi_i Phi_i^T`` with ``Phi_i = A(t-1) ... A(i+1)``; shares P_t's nonzero spectrum."""
    nm = spec.n_agents * model.dim
    acc = np.zeros((nm, nm))
    phi = np.eye(nm)
    for i in range(t - 1, -1, -1):
        acc += schedule.alpha(i) ** 2 * phi @ phi.T
        phi = phi @ transition_matrix(spec, model, schedule, i)
    return acc


def pt_matrix(spec: Spectrum, model: LinearModel, schedule: LSchedule, t: int) -> np.ndarray:
    """Dense ``P_t = B^T B`` with ``B = [alpha_0 Phi_0, ..., alpha_{t-1} Phi_{t-1}]``."""
    nm = spec.n_agents * model.dim
    if t < 1:
        raise InvalidInput("horizon t must be >= 1")
    if t * nm > PT_SIZE_CAP:
        raise ResourceLimit(f"P_t would be {t * nm} x {t * nm}; cap is {PT_SIZE_CAP}")
    blocks = [None] * t
    phi = np.eye(nm)
    for i in range(t - 1, -1, -1):
        blocks[i] = schedule.alpha(i) * phi
        phi = phi @ transition_matrix(spec, model, schedule, i)
    b = np.hstack(blocks)
    return b.T @ b


def pt_diagnostic(spec: Spectrum, model: LinearModel, schedule: LSchedule, t: int,
                  dense: bool = True) -> PtDiagnostic:
    nm = spec.n_agents * model.dim
    if t < 1:
        raise InvalidInput("horizon t must be >= 1")
    if t * nm > PT_SIZE_CAP:
        raise ResourceLimit(f"P_t would be {t * nm} x {t * nm}; cap is {PT_SIZE_CAP}")
    c1 = c1_linear(spec, model)
    t1 = l_burnin_times(spec, model, schedule).t1
    lc3 = log_c3(spec, model, schedule, t1)
    bound = _pt_bound_terms(lc3, c1, schedule.alpha0, t1, float(t))
    min_eig = None
    if dense:
        eig = np.linalg.eigvalsh(pt_matrix(spec, model, schedule, t))
        norm, min_eig = float(eig[-1]), float(eig[0])
    else:
        norm = float(np.linalg.eigvalsh(pt_gram(spec, model, schedule, t))[-1])
    return PtDiagnostic(t, t1, t * norm, bound, min_eig)


def write_bounds_json(bounds, path, extra: dict | None = None) -> None:
    payload = bounds.to_dict() if hasattr(bounds, "to_dict") else dict(bounds)
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
