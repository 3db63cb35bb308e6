import numpy as np
import pytest

from kfsi import coupler
from kfsi.config import make_forcing
from kfsi.coupler import (Problem, ProblemData, continue_run, epsilon_sweep, fixed_point,
                          solve_decoupled)
from kfsi.errors import ConfigurationError, SolverError
from kfsi.geometry import FlatChannel, RampBlend
from kfsi.shell_energy import ElasticParams
from kfsi.stress_law import StressLaw

PARAMS = ElasticParams(1.0, 1.0, 0.1, 10.0, 1.0)
LAW = StressLaw(0.05, 1.0, 1.5, 1e-3)


def _forcing(kind, amp, **kw):
    sec = {"g_kind": kind, "g_amplitude": amp, "g_center": 0.5, "g_width": 0.1, "g_t0": 0.1,
           "g_duration": 0.05, "g_wavenumber": 1, "g_speed": 0.0, "g_ramp": kw.get("ramp", 0.0)}
    return make_forcing(sec, "g", 1.0, 2)


def _data(g=None, blend=None, n_s=2, n_f=4):
    return ProblemData(FlatChannel(2, 1.0, 1.0), PARAMS, LAW, n_s=n_s, n_f=n_f, g=g, blend=blend,
                       n_tan=16, n_normal=8)


def test_zero_data_converges_in_one_iteration():
    pr = Problem(_data(), 0.0625)
    res, rep = fixed_point(pr, 0.1, 0.01)
    assert rep.status == "converged" and rep.iterations == 1
    assert np.all(res.coeffs == 0.0)


def test_pulse_fixed_point_contracts():
    pr = Problem(_data(_forcing("gaussian-pulse", 1.0)), 0.0625)
    res, rep = fixed_point(pr, 0.25, 0.01)
    assert rep.status == "converged"
    assert max(rep.contraction) < 0.9
    assert rep.increments[-1] <= 1e-10


def test_decoupled_solve_along_fixed_point_is_self_consistent():
    pr = Problem(_data(_forcing("gaussian-pulse", 1.0)), 0.0625)
    res, rep = fixed_point(pr, 0.2, 0.01)
    again = solve_decoupled(pr, pr.motion(res.times, res.coeffs), 0.2, 0.01)
    assert np.max(np.abs(again.coeffs - res.coeffs)) < 1e-9


def test_omega_validation():
    pr = Problem(_data(), 0.0625)
    with pytest.raises(ConfigurationError):
        fixed_point(pr, 0.1, 0.01, omega=0.0)
    with pytest.raises(ConfigurationError):
        solve_decoupled(pr, pr.motion([0.0], np.zeros((1, 2))), -1.0, 0.01)


def test_strong_load_triggers_window_halving():
    pr = Problem(_data(_forcing("constant", -12.0, ramp=0.05), RampBlend(0.01)), 0.0625)
    res, rep = fixed_point(pr, 0.4, 0.01)
    assert rep.halvings > 0
    assert rep.T < 0.4
    assert any("left D" in e or "injectivity" in e for e in rep.events)


def test_halving_floor_raises():
    pr = Problem(_data(_forcing("constant", -12.0, ramp=0.05), RampBlend(0.01)), 0.0625)
    with pytest.raises(SolverError):
        fixed_point(pr, 0.4, 0.01, T_floor=0.39)


def test_continue_run_reaches_horizon_without_data():
    out = continue_run(Problem(_data(), 0.0625), 0.1, 0.3, 0.01)
    assert out.status == "horizon" and not out.breakdown
    assert out.t_reached == pytest.approx(0.3)
    assert len(out.windows) == 3
    assert len(out.ledger.t) == 31
    assert np.all(np.asarray(out.ledger.energy()) == 0.0)


def test_continue_run_detects_breakdown():
    pr = Problem(_data(_forcing("constant", -6.0, ramp=0.1), RampBlend(0.01)), 0.0625)
    out = continue_run(pr, 0.5, 4.0, 0.01)
    assert out.status == "breakdown"
    assert max(out.ledger.eta_inf) >= 0.95
    # ledger stops at the first crossing
    assert out.ledger.eta_inf[-1] >= 0.95 and all(v < 0.95 for v in out.ledger.eta_inf[:-1])
    d = out.as_dict()
    assert d["breakdown"] and d["windows"][-1]["status"] == "breakdown"


def test_epsilon_sweep_isolates_failures(monkeypatch):
    real = coupler.continue_run

    def flaky(problem, *a, **kw):
        if problem.eps == 0.25:
            raise SolverError("injected failure")
        return real(problem, *a, **kw)

    monkeypatch.setattr(coupler, "continue_run", flaky)
    rep = epsilon_sweep(_data(_forcing("gaussian-pulse", 1.0)), [0.25, 0.125], [1e-3], 0.2, 0.01)
    status = [c["status"] for c in rep["cells"]]
    assert status == ["failed", "horizon"]
    assert rep["eps_term_bound"] > 0
