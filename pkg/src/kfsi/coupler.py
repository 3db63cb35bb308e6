"""Decoupled solves along a prescribed boundary datum, the outer fixed point and continuation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .compat_ops import mollify_initial_data
from .errors import ConfigurationError, GeometryError, KfsiError, SolverError
from .galerkin_core import (CoupledBasis, DomainMotion, EnergyLedger, GalerkinConfig,
                            GalerkinResult, SteklovHistory, energy_identity_residual,
                            project_initial, run_galerkin)
from .geometry import ConstantField, QuinticBlend
from .shell_energy import ElasticParams, build_shell_basis
from .stress_law import StressLaw

log = logging.getLogger(__name__)


@dataclass
class ProblemData:
    """Everything a run needs except the regularization and time grid."""

    surface: object
    params: ElasticParams
    law: StressLaw
    n_s: int = 8
    n_f: int = 32
    eta0: object = None
    eta1: object = None
    u0: Callable | None = None
    f: Callable | None = None
    g: Callable | None = None
    blend: object = None
    n_tan: int = 32
    n_normal: int = 16
    shell_only: bool = False


class Problem:
    """Bases and mollified initial data for one configuration and one eps."""

    def __init__(self, data: ProblemData, eps: float):
        self.data = data
        self.eps = eps
        sf = data.surface
        self.blend = data.blend or QuinticBlend()
        self.shell = build_shell_basis(sf, data.params, data.n_s)
        self.basis = CoupledBasis(self.shell, data.n_f, data.n_tan, data.n_normal, self.blend,
                                  shell_only=data.shell_only)
        eta0 = data.eta0 if data.eta0 is not None else ConstantField(0.0, sf.m)
        eta1 = data.eta1 if data.eta1 is not None else ConstantField(0.0, sf.m)
        self.initial = mollify_initial_data(sf, eta0, eta1, data.u0, max(eps, 1e-12),
                                            self.shell.quad, blend=self.blend)
        self.base = self.initial.eta0.field
        self.kappa = sf.kappa

    def motion(self, times, coeffs):
        return DomainMotion(self.shell, self.base, times, coeffs, self.eps or None, self.blend)

    def initial_state(self):
        mo = self.motion([0.0], np.zeros((1, self.shell.size)))
        u0 = self.initial.u0 if self.data.u0 is not None else None
        a0 = project_initial(self.basis, mo, 0.0, u0, self.initial.eta1)
        return a0, np.zeros(self.shell.size)

    def sup_eta(self, coeffs):
        """|eta|_inf at shell nodes for coefficient rows."""
        c = np.atleast_2d(coeffs)
        vals = self.base(self.shell.quad.u)[None] + c @ self.basis.Wq
        return np.max(np.abs(vals), axis=1)


def _copy_history(h: SteklovHistory | None):
    if h is None:
        return None
    return SteklovHistory(list(h.t), [v.copy() for v in h.v], h.start)


def solve_decoupled(problem: Problem, motion: DomainMotion, T, dt, eps_tilde=None, state=None,
                    t0=0.0, history=None, stop_fraction=None) -> GalerkinResult:
    """Galerkin solution of the regularized system with the domain prescribed by ``motion``."""
    if T <= 0 or dt <= 0:
        raise ConfigurationError("T and dt must be positive")
    law = problem.data.law
    if eps_tilde is not None:
        law = StressLaw(law.mu0, law.delta, law.p, eps_tilde)
    n_steps = int(round(T / dt))
    a0, c0 = problem.initial_state() if state is None else state
    cfg = GalerkinConfig(dt=dt, n_steps=n_steps, eps=problem.eps, law=law, t0=t0,
                         stop_fraction=stop_fraction)
    return run_galerkin(problem.basis, motion, cfg, problem.base, a0, c0, problem.data.f,
                        problem.data.g, _copy_history(history))


@dataclass
class FixedPointReport:
    increments: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    iterations: int = 0
    status: str = "max-iter"           # converged | max-iter | breakdown | failed
    T: float = 0.0
    halvings: int = 0
    bound: float = 0.0
    events: list = field(default_factory=list)

    def as_dict(self):
        return {"increments": [float(x) for x in self.increments],
                "contraction": [float(x) for x in self.contraction],
                "iterations": self.iterations, "status": self.status, "T": self.T,
                "halvings": self.halvings, "bound": self.bound, "events": list(self.events)}


def fixed_point(problem: Problem, T, dt, tol_fp=1e-10, max_iter=30, omega=1.0, state=None,
                t0=0.0, history=None, T_floor=None, eps_tilde=None):
    """Damped Picard iteration delta <- (1 - omega) delta + omega F(delta) on [t0, t0 + T].

    Iterates must stay in D = {|delta|_inf <= (|eta_start|_inf + kappa) / 2}; leaving
    D (or a degenerate domain) halves T and restarts, down to ``T_floor``.
    """
    if not 0.0 < omega <= 1.0:
        raise ConfigurationError("omega must lie in (0, 1]")
    a0, c0 = problem.initial_state() if state is None else state
    start_sup = float(problem.sup_eta(c0)[0])
    bound = 0.5 * (start_sup + problem.kappa)
    T_floor = dt if T_floor is None else T_floor
    report = FixedPointReport(bound=bound)
    while True:
        n_steps = max(1, int(round(T / dt)))
        T = n_steps * dt
        times = t0 + dt * np.arange(n_steps + 1)
        delta = np.tile(c0, (n_steps + 1, 1))
        report.increments, report.contraction = [], []
        exited = False
        result = None
        for it in range(1, max_iter + 1):
            try:
                result = solve_decoupled(problem, problem.motion(times, delta), T, dt, eps_tilde,
                                         (a0, c0), t0, history)
            except (GeometryError, SolverError) as exc:
                report.events.append(f"T={T:.6g} iteration {it}: {exc}")
                exited = True
                break
            new = (1.0 - omega) * delta + omega * result.coeffs
            if np.max(problem.sup_eta(new)) > bound:
                report.events.append(f"T={T:.6g} iteration {it}: iterate left D")
                exited = True
                break
            inc = float(np.max(np.abs((new - delta) @ problem.basis.Wq)))
            report.increments.append(inc)
            if len(report.increments) > 1 and report.increments[-2] > 0:
                report.contraction.append(inc / report.increments[-2])
            delta = new
            report.iterations = it
            if inc <= tol_fp:
                report.status = "converged"
                break
        else:
            report.status = "max-iter"
        if not exited:
            report.T = T
            # the accepted solution is the solve on the last datum
            if report.status == "converged" and omega < 1.0:
                result = solve_decoupled(problem, problem.motion(times, delta), T, dt, eps_tilde,
                                         (a0, c0), t0, history)
            return result, report
        if T / 2.0 < T_floor - 1e-15:
            report.status = "failed"
            report.T = T
            raise SolverError("fixed point left D at the halving floor",
                              {"t0": t0, "T": T, "events": report.events})
        T = T / 2.0
        report.halvings += 1
        log.info("fixed point: halving window to %.6g", T)


@dataclass
class RunOutcome:
    t_reached: float
    breakdown: bool
    status: str                       # horizon | breakdown | failed
    ledger: EnergyLedger
    times: np.ndarray
    alpha: np.ndarray
    coeffs: np.ndarray
    windows: list
    residual: float
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        led = self.ledger
        return {"status": self.status, "breakdown": self.breakdown,
                "t_reached": float(self.t_reached),
                "eta_inf_max": float(max(led.eta_inf)) if led.eta_inf else 0.0,
                "tau_final": float(led.tau[-1]) if led.tau else 1.0,
                "energy_residual": float(self.residual),
                "eps_term": float(led.eps_term[-1]) if led.eps_term else 0.0,
                "windows": [w.as_dict() for w in self.windows],
                "diagnostics": self.diagnostics}


def continue_run(problem: Problem, window, horizon, dt, kappa_fraction=0.95, tol_fp=1e-10,
                 max_iter=30, omega=1.0, eps_tilde=None) -> RunOutcome:
    """Window-by-window fixed points until the horizon or |eta|_inf >= kappa_fraction kappa."""
    a, c = problem.initial_state()
    t = 0.0
    ledger = EnergyLedger()
    hist = SteklovHistory(start=0.0)
    times, alphas, coeffs, windows = [0.0], [a.copy()], [c.copy()], []
    threshold = kappa_fraction * problem.kappa
    status, diag = "horizon", {}
    while t < horizon - 1e-12:
        T = min(window, horizon - t)
        try:
            res, rep = fixed_point(problem, T, dt, tol_fp, max_iter, omega, (a, c), t, hist,
                                   eps_tilde=eps_tilde)
        except KfsiError as exc:
            status = "failed"
            diag = {"t": t, "error": str(exc), **getattr(exc, "diagnostics", {})}
            break
        windows.append(rep)
        if rep.status != "converged":
            status = "failed"
            diag = {"t": t, "error": f"fixed point {rep.status}"}
            break
        led = res.ledger
        cross = [i for i, v in enumerate(led.eta_inf) if v >= threshold]
        last = cross[0] if cross else len(led.t) - 1
        if cross:
            led = _truncate(led, last + 1)
        ledger.extend(led)
        for i in range(1, last + 1):
            times.append(res.times[i])
            alphas.append(res.alpha[i].copy())
            coeffs.append(res.coeffs[i].copy())
            hist.append(res.times[i], res.alpha[i])
        a, c, t = res.alpha[last].copy(), res.coeffs[last].copy(), float(res.times[last])
        if cross:
            status = "breakdown"
            rep.status = "breakdown"
            break
    return RunOutcome(t, status == "breakdown", status, ledger, np.array(times), np.array(alphas),
                      np.array(coeffs), windows, energy_identity_residual(ledger) if ledger.t else 0.0,
                      diag)


def _truncate(led: EnergyLedger, n):
    out = EnergyLedger()
    for k in led.__dataclass_fields__:
        if k != "rate_min":
            setattr(out, k, list(getattr(led, k))[:n])
    out.rate_min = led.rate_min
    return out


def epsilon_sweep(data: ProblemData, eps_values, eps_tilde_values, T, dt, window=None,
                  tol_fp=1e-10, max_iter=30):
    """Coupled runs over an (eps, eps~) grid; failures are recorded and the sweep continues."""
    cells = []
    for e in eps_values:
        for et in eps_tilde_values:
            law = data.law
            d = ProblemData(**{**data.__dict__, "law": StressLaw(law.mu0, law.delta, law.p, et)})
            cell = {"eps": float(e), "eps_tilde": float(et)}
            try:
                out = continue_run(Problem(d, e), window or T, T, dt, tol_fp=tol_fp, max_iter=max_iter)
                led = out.ledger
                cell.update(status=out.status, energy_max=float(np.max(led.energy())),
                            eps_term=float(led.eps_term[-1]), residual=float(out.residual),
                            energy=[float(x) for x in led.energy()], t=[float(x) for x in led.t])
            except KfsiError as exc:
                cell.update(status="failed", error=str(exc))
            cells.append(cell)
    ok = [c for c in cells if c.get("status") != "failed"]
    bound = max((c["eps_term"] for c in ok), default=0.0)
    return {"cells": cells, "eps_term_bound": bound}
