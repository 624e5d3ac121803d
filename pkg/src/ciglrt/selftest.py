"""Quick closed-form checks of every module, run by ``ciglrt selftest``."""

from __future__ import annotations

import math
import sys
import traceback

import numpy as np

from . import bounds as bd
from . import linear as li
from . import network as nw
from . import nl
from . import sensing as se
from .harness import ErrorCurve, fit_exponent


def _ring_weights():
    s = nw.spectrum(nw.build_ring(10))
    return s, nw.make_weights(s)


def check_ring_gap():
    _, w = _ring_weights()
    assert abs(w.r - 0.825664) < 1e-6
    assert abs(w.r - nw.spectral_gap_numeric(w.w)) < 1e-10


def check_min_rounds():
    assert nw.min_consensus_rounds(10, 0.8404) == 20


def check_llr_identity():
    m = se.trig_model()
    th = np.full(5, 0.3)
    h = m.h[0](th)
    assert abs(float(nl.nl_llr(m, 0, th, h)) - float(h @ h) / 4.0) < 1e-12


def check_nl_fixed_point():
    s, w = _ring_weights()
    model = se.pairwise_linear_model().as_nonlinear()
    star = np.array([1.0, 0.9, 1.2, 1.1, 1.5])
    traj = nl.simulate_nl(model, w, s.laplacian, nl.NlSchedule(1.0, 0.1, 0.3),
                          se.TruthConfig("H1", star), 20, [0], theta0=star, zero_noise=True)
    assert float(np.max(traj.err_norm)) < 1e-12


def check_running_average():
    s = np.zeros(1)
    for t, y in enumerate([0.0, 2.0]):
        s = li.l_update_running_average(s, np.array([y]), t)
    assert s[0] == 1.0


def check_decisions():
    assert nl.nl_decide(1.0, 1.0) is se.Hypothesis.H0
    assert li.l_decide(1.0, 1.0) is se.Hypothesis.H0
    assert nl.nl_decide(1.0 + 1e-12, 1.0) is se.Hypothesis.H1


def check_fa_floor():
    floor = bd.threshold_floor(10, 10, 0.8, 20)
    b = 0.1 + math.sqrt(10) * 0.8 ** 19
    assert abs(bd.fa_rate(floor, b, 10)) < 1e-9


def check_p1():
    s = nw.spectrum(nw.build_path(2))
    model = se.scalar_model(2, 1, 1.0, 1.0)
    sched = li.LSchedule(3.5, 0.5)
    d = bd.pt_diagnostic(s, model, sched, 1)
    assert abs(d.pt_norm_times_t - 3.5 ** 2) < 1e-12


def check_exponent_fit():
    t = np.arange(0, 200, 5)
    est = fit_exponent(ErrorCurve(0, "miss", t, np.exp(-0.05 * t), 10**12))
    assert abs(est.slope - 0.05) < 1e-9


CHECKS = [check_ring_gap, check_min_rounds, check_llr_identity, check_nl_fixed_point,
          check_running_average, check_decisions, check_fa_floor, check_p1, check_exponent_fit]


def run(stream=None) -> int:
    stream = stream or sys.stdout
    failed = 0
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            check()
            print(f"PASS {name}", file=stream)
        except Exception:
            failed += 1
            print(f"FAIL {name}", file=stream)
            traceback.print_exc(file=stream)
    print(f"{len(CHECKS) - failed}/{len(CHECKS)} checks passed", file=stream)
    return 1 if failed else 0
