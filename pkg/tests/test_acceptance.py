"""Acceptance criteria 1-10 at their stated tolerances and runtime budgets."""

import time

import numpy as np
import pytest

from kfsi import cli, verify
from kfsi import config as cfgmod
from kfsi.coupler import Problem, continue_run, fixed_point
from kfsi.galerkin_core import gronwall_check
from kfsi.shell_energy import coercivity_estimate

pytestmark = pytest.mark.slow


def _timed(checks):
    t0 = time.perf_counter()
    out = [c() for c in checks]
    return out, time.perf_counter() - t0


def _summary(results):
    return "; ".join(f"{r['name']}={r['measured']:.3g} (limit {r['threshold']:.3g})"
                     for r in results)


def _problem(preset, overrides=None, eps=None):
    cfg = cfgmod.load_config(preset=preset, env={}, overrides=overrides)
    e = float(cfg["regularization"]["eps"]) if eps is None else eps
    return Problem(cfgmod.problem_data(cfg), e), cfg


def _run(preset, overrides=None, eps=None):
    pr, cfg = _problem(preset, overrides, eps)
    tm, sv = cfg["time"], cfg["solver"]
    out = continue_run(pr, tm["window"], tm["horizon"], tm["dt"], sv["kappa_fraction"],
                       sv["tol_fp"], sv["max_iter"], sv["omega"])
    return pr, out


def _rng(k):
    return np.random.default_rng([2024, k])


def test_criterion_01_geometry(report):
    res, sec = _timed([verify.check_kappa_sphere, verify.check_offset_area,
                       lambda: verify.check_gamma_positive(count=1000, rng=_rng(1))])
    ok = all(r["passed"] for r in res) and sec < 30
    report(1, ok, f"{_summary(res)}; {sec:.1f}s")
    assert ok, res


def test_criterion_02_shell(report):
    res, sec = _timed([verify.check_plate_closed_form, verify.check_coercivity,
                       verify.check_eps0_homogeneity])
    ok = all(r["passed"] for r in res) and sec < 60
    report(2, ok, f"{_summary(res)}; {sec:.1f}s")
    assert ok, res


def test_criterion_03_stress(report):
    res, sec = _timed([lambda: verify.check_certify(samples=10_000, rng=_rng(3)),
                       lambda: verify.check_minty(count=100, rng=_rng(4))])
    ok = all(r["passed"] for r in res) and sec < 20
    report(3, ok, f"{_summary(res)}; {sec:.1f}s")
    assert ok, res


def test_criterion_04_transform(report):
    res, sec = _timed([verify.check_divergence_preservation, verify.check_reynolds_order,
                       verify.check_divergence_theorem_order])
    ok = all(r["passed"] for r in res) and sec < 300
    report(4, ok, f"{_summary(res)}; {sec:.1f}s")
    assert ok, res


def test_criterion_05_compat(report):
    res, sec = _timed([lambda: verify.check_gamma_moment(rng=_rng(5)), verify.check_steklov_trace,
                       lambda: verify.check_mollifier_one_sided(count=1000, rng=_rng(6)),
                       verify.check_steklov_order])
    ok = all(r["passed"] for r in res) and sec < 120
    report(5, ok, f"{_summary(res)}; {sec:.1f}s")
    assert ok, res


def test_criterion_06_energy(report):
    res, sec = _timed([verify.check_oscillator_order, verify.check_coupled_energy])
    ratios = res[1]["ratios"]
    ok = all(r["passed"] for r in res) and sec < 600
    report(6, ok, f"{_summary(res)}; halving ratios {[round(x, 2) for x in ratios]}; {sec:.1f}s")
    assert ok, res


def test_criterion_07_a_priori(report):
    t0 = time.perf_counter()
    # Gronwall constant at two time resolutions and two Galerkin resolutions
    consts = {}
    for label, ov in [("dt=0.004", {"time": {"dt": 0.004}}), ("dt=0.002", {}),
                      ("n_s=4,n_f=16", {"basis": {"n_s": 4, "n_f": 16}})]:
        _, out = _run("plate-pulse", ov)
        assert out.status == "horizon"
        consts[label] = gronwall_check(out.ledger).constant
    c_ref = consts["dt=0.002"]
    spread = max(abs(c - c_ref) / c_ref for c in consts.values())

    # eps~-weighted term against the a-priori constant, eps in {2^-3 .. 2^-6}
    terms, caps = [], []
    for k in range(3, 7):
        pr, out = _run("plate-pulse", eps=2.0 ** -k)
        led = out.ledger
        c0 = coercivity_estimate(pr.shell)
        terms.append(led.eps_term[-1])
        caps.append((1.0 + 1.0 / (2.0 * c0)) * (led.energy()[0] + max(led.power)))
    bound = max(caps)
    sec = time.perf_counter() - t0
    ok = spread <= 0.1 and max(terms) <= bound and sec < 900
    report(7, ok, f"C={ {k: round(v, 4) for k, v in consts.items()} } spread={spread:.3g} (limit 0.1); "
                  f"eps-term max={max(terms):.3g} <= {bound:.3g}; {sec:.1f}s")
    assert ok


def test_criterion_08_fixed_point(report):
    t0 = time.perf_counter()
    pr, cfg = _problem("zero")
    _, zero = fixed_point(pr, cfg["time"]["window"], cfg["time"]["dt"])
    _, pulse = _run("plate-pulse")
    ratios = [r for w in pulse.windows for r in w.contraction]
    _, stress = _run("stress")
    halvings = sum(w.halvings for w in stress.windows)
    sec = time.perf_counter() - t0
    ok = (zero.iterations == 1 and zero.status == "converged" and pulse.status == "horizon"
          and max(ratios) < 0.9 and halvings > 0 and stress.status == "horizon" and sec < 600)
    report(8, ok, f"zero iterations={zero.iterations}; max contraction={max(ratios):.3g} (limit 0.9); "
                  f"stress halvings={halvings} status={stress.status}; {sec:.1f}s")
    assert ok


def test_criterion_09_continuation(report):
    t0 = time.perf_counter()
    pr, brk = _run("breakdown")
    eta = max(brk.ledger.eta_inf)
    _, zero = _run("zero")
    sec = time.perf_counter() - t0
    ok = (brk.status == "breakdown" and eta >= 0.95 * pr.kappa and zero.status == "horizon"
          and sec < 300)
    report(9, ok, f"breakdown status={brk.status} |eta|_inf={eta:.4f} >= {0.95 * pr.kappa:.4f} "
                  f"at t={brk.t_reached:.3g}; zero status={zero.status}; {sec:.1f}s")
    assert ok


def test_criterion_10_determinism(tmp_path, report):
    files = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["run", "--preset", "plate-pulse", "--set", "time.horizon=0.1",
                         "--out", str(out)]) == 0
        (ledger,) = sorted(out.glob("ledger-*.csv"))
        files.append(ledger)
    same = files[0].name == files[1].name and files[0].read_bytes() == files[1].read_bytes()
    report(10, same, f"{files[0].name} vs {files[1].name}: "
                     f"{'byte-identical' if same else 'differ'}")
    assert same
