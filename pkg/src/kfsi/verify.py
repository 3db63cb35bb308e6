"""Property suites behind ``kfsi verify``.

Every check returns a dict ``{suite, name, passed, measured, threshold}``.
Sizes are keyword arguments so the test suite can run reduced versions;
the defaults are the full-resolution settings.
"""

from __future__ import annotations

import time

import numpy as np

from .compat_ops import (gamma_moment, mean_correct, orth_correct, space_mollify,
                         time_steklov_field, time_steklov_scalar)
from .errors import KfsiError
from .geometry import (AmbientField, Circle, ConstantField, Cylinder, FlatChannel, FourierField,
                       QuinticBlend, Sphere, gamma_factor, gamma_integral, polynomial_ambient,
                       tubular_radius)
from .shell_energy import ElasticParams, build_shell_basis, coercivity_estimate, koiter_energy
from .stress_law import StressLaw, certify_structure, minty_probe, sequence_with_products
from .transform import (VolumeQuadrature, convergence_order, divergence_theorem_check,
                        pushforward_divergence, reynolds_check)


def result(suite, name, passed, measured, threshold, **extra):
    out = {"suite": suite, "name": name, "passed": bool(passed),
           "measured": measured, "threshold": threshold}
    out.update(extra)
    return out


def _floats(xs):
    return [float(x) for x in xs]


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def check_kappa_sphere(radii=(0.25, 0.5, 1.0, 2.0, 3.7)):
    err = max(abs(tubular_radius(Sphere(R)) - R) for R in radii)
    return result("geometry", "kappa_sphere", err == 0.0, float(err), 0.0)


def _triangulated_area(P, wrap_second=True):
    """Area of the triangulated grid surface P[i, j, :] (second index periodic)."""
    if wrap_second:
        P = np.concatenate([P, P[:, :1]], axis=1)
    a, b = P[:-1, :-1], P[1:, :-1]
    c, d = P[1:, 1:], P[:-1, 1:]
    t1 = np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    t2 = np.linalg.norm(np.cross(c - a, d - a), axis=-1)
    return 0.5 * float(np.sum(t1 + t2))


def _offset_area_oracle(surface, c, n):
    """Richardson-extrapolated triangulated area of q + c nu (second order in h)."""
    def area(k):
        if isinstance(surface, Sphere):
            th = np.linspace(0.0, np.pi, k + 1)
            ph = 2.0 * np.pi * np.arange(k) / k
            pts_u = np.stack(np.meshgrid(th, ph, indexing="ij"), axis=-1)
            return _triangulated_area(surface.embed(pts_u) + c * surface.normal(pts_u))
        if isinstance(surface, Cylinder):
            th = 2.0 * np.pi * np.arange(k) / k
            z = np.linspace(0.0, surface.axial_length, k + 1)
            pts_u = np.stack(np.meshgrid(z, th, indexing="ij"), axis=-1)[..., ::-1]
            return _triangulated_area(surface.embed(pts_u) + c * surface.normal(pts_u))
        if isinstance(surface, Circle):
            th = 2.0 * np.pi * np.arange(k) / k
            P = surface.embed(th[:, None]) + c * surface.normal(th[:, None])
            return float(np.sum(np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=-1)))
        raise TypeError(type(surface).__name__)

    a1, a2 = area(n), area(2 * n)
    return (4.0 * a2 - a1) / 3.0


def check_offset_area(n=128, oracle_n=512):
    cases = [(Sphere(1.0), 0.3), (Sphere(1.0), -0.5), (Sphere(2.0), 0.7),
             (Cylinder(1.0, 2.0), 0.25), (Cylinder(1.5, 1.0), -0.6),
             (Circle(1.0), 0.4), (Circle(2.0), -1.1)]
    worst = 0.0
    rows = []
    for sf, c in cases:
        q = sf.quadrature(n if sf.m == 1 else (n, n))
        lhs = gamma_integral(sf, ConstantField(c, sf.m), q)
        ref = _offset_area_oracle(sf, c, oracle_n)
        rel = abs(lhs - ref) / ref
        worst = max(worst, rel)
        rows.append({"surface": sf.name, "offset": c, "rel": rel})
    return result("geometry", "offset_area", worst <= 1e-4, worst, 1e-4, cases=rows)


def _random_ambient_values(rng, x, scale):
    d = x.shape[-1]
    v = np.zeros(x.shape[:-1])
    for _ in range(4):
        w = rng.normal(size=d) * 2.0 / scale
        v += rng.normal() * np.sin(x @ w + rng.uniform(0, 2 * np.pi))
    return v


def check_gamma_positive(count=1000, n=32, rng=None):
    rng = np.random.default_rng(1) if rng is None else rng
    surfaces = [Sphere(1.0), Cylinder(1.0, 2.0), Circle(1.5), FlatChannel(3, 1.0, 0.5)]
    worst = np.inf
    for i in range(count):
        sf = surfaces[i % len(surfaces)]
        q = sf.quadrature(n if sf.m == 1 else (n, n))
        v = _random_ambient_values(rng, sf.embed(q.u), sf.kappa)
        v *= rng.uniform(0.0, 0.999) * sf.kappa / max(np.max(np.abs(v)), 1e-300)
        worst = min(worst, float(np.min(gamma_factor(sf, v, q.u))))
    return result("geometry", "gamma_positive", worst > 0.0, worst, 0.0)


# ---------------------------------------------------------------------------
# shell
# ---------------------------------------------------------------------------

def check_plate_closed_form(n=64):
    p = ElasticParams(1.3, 0.7, 0.1, 1.0, 1.0)
    worst = 0.0
    for dim, ks in ((2, [(1,), (3,)]), (3, [(1, 0), (1, 2), (3, 1)])):
        L = 1.5
        sf = FlatChannel(dim, L, 1.0)
        q = sf.quadrature(n)
        for k in ks:
            A = 0.2
            eta = FourierField([L] * (dim - 1), [k], [A], [0.0])
            k4 = (2.0 * np.pi / L) ** 4 * float(np.sum(np.square(k))) ** 2
            # K = eps0^3/6 int (a (lap eta)^2 + 4 mu |D^2 eta|^2), both integrals equal here
            exact = p.eps0 ** 3 / 6.0 * (p.a_coef + 4.0 * p.mu) * k4 * A * A * L ** (dim - 1) / 2.0
            rel = abs(koiter_energy(sf, p, eta, q) - exact) / exact
            worst = max(worst, rel)
    return result("shell", "plate_closed_form", worst <= 1e-10, worst, 1e-10)


def check_coercivity(n_s=6):
    p = ElasticParams(1.0, 1.0, 0.1, 1.0, 1.0)
    surfaces = [FlatChannel(2), FlatChannel(3), FlatChannel(2, clamped=True),
                FlatChannel(3, clamped=True), Circle(1.0), Cylinder(1.0, 2.0), Sphere(1.0)]
    vals = {}
    for sf in surfaces:
        key = sf.name + str(sf.dim) + ("c" if getattr(sf, "clamped", False) else "")
        try:
            vals[key] = coercivity_estimate(build_shell_basis(sf, p, n_s))
        except KfsiError:
            vals[key] = 0.0
    worst = min(vals.values())
    return result("shell", "coercivity_positive", worst > 0.0, worst, 0.0, values=vals)


def check_eps0_homogeneity(n_s=6, eps0s=(0.025, 0.05, 0.1, 0.2, 0.4)):
    sf = FlatChannel(3, 1.0, 1.0)
    scaled = [coercivity_estimate(build_shell_basis(sf, ElasticParams(1.0, 1.0, e, 1.0, 1.0), n_s))
              / e ** 3 for e in eps0s]
    spread = (max(scaled) - min(scaled)) / max(scaled)
    return result("shell", "eps0_cubed_homogeneity", spread <= 1e-12, spread, 1e-12)


# ---------------------------------------------------------------------------
# stress
# ---------------------------------------------------------------------------

MODEL_LAWS = [(1.0, 1.0, 1.5), (0.05, 1.0, 1.5), (1.0, 1.0, 2.0), (2.5, 0.5, 3.0), (1.0, 1.0, 1.25)]


def check_certify(samples=10_000, rng=None):
    rng = np.random.default_rng(2) if rng is None else rng
    worst = 0.0
    mono = True
    for mu0, delta, p in MODEL_LAWS:
        rep = certify_structure(StressLaw(mu0, delta, p), samples, rng)
        worst = max(worst, abs(rep.c0 - mu0) / mu0, abs(rep.c1 - mu0) / mu0)
        mono &= rep.monotone
    return result("stress", "certify_c0_c1_equal_mu0", worst <= 1e-12 and mono, worst, 1e-12,
                  pairs=samples)


def check_minty(count=100, rng=None):
    rng = np.random.default_rng(3) if rng is None else rng
    targets = 10.0 ** -np.arange(2, 21, 2)
    converged = 0
    for i in range(count):
        mu0, delta, p = MODEL_LAWS[i % len(MODEL_LAWS)]
        law = StressLaw(mu0, delta, p)
        A = rng.normal(size=(3, 3))
        A = 0.5 * (A + A.T) * 10.0 ** rng.uniform(-1, 1)
        E = rng.normal(size=(3, 3))
        seq = sequence_with_products(law, A, 0.5 * (E + E.T), targets)
        converged += minty_probe(law, A, seq).status == "converged"
    return result("stress", "minty_probe", converged == count, converged, count)


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------

def _curl_fixture(x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    tp = 2.0 * np.pi
    c = np.cos(tp * (X + Y))
    return np.stack([tp * c * Z ** 3 - np.cos(tp * X),
                     2.0 * np.sin(tp * Y) * Z - tp * c * Z ** 3,
                     -tp * np.sin(tp * X) * Z - tp * np.cos(tp * Y) * Z ** 2], axis=-1)


def _curl_fixture_2(x):
    # curl of (z^2 cos(2 pi y), sin(2 pi x) z, 0)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    tp = 2.0 * np.pi
    return np.stack([-np.sin(tp * X), 2.0 * Z * np.cos(tp * Y),
                     tp * np.cos(tp * X) * Z + tp * Z ** 2 * np.sin(tp * Y)], axis=-1)


def check_divergence_preservation(n=64, grid=64, h=2.5e-4):
    sf = FlatChannel(3, 1.0, 1.0)
    g = np.arange(grid) / grid
    gx, gy = np.meshgrid(g, g, indexing="ij")
    samples = 0.2 * np.sin(2 * np.pi * gx) * np.cos(2 * np.pi * gy) + 0.1 * np.cos(4 * np.pi * gx)
    eta = FourierField.from_samples(samples, [1.0, 1.0], tol=1e-13)
    a = (np.arange(n) + 0.5) / n
    X = np.stack(np.meshgrid(np.arange(n) / n, np.arange(n) / n, a, indexing="ij"), axis=-1)
    X = X.reshape(-1, 3)
    from .geometry import HanzawaMap
    y = HanzawaMap(sf, eta).evaluate_cartesian(X)[0]
    worst = 0.0
    for phi in (_curl_fixture, _curl_fixture_2):
        div = pushforward_divergence(sf, eta, phi, y, h)
        worst = max(worst, float(np.max(np.abs(div))))
    return result("transform", "divergence_preservation", worst <= 1e-6, worst, 1e-6,
                  points=int(X.shape[0]))


def _sphere_eta(t):
    coeffs = {(0, 0, 1): 0.15 * np.sin(t) + 0.05, (1, 1, 0): 0.1 * np.cos(t), (1, 0, 0): 0.05}
    return coeffs


def _sphere_deta(t):
    return {(0, 0, 1): 0.15 * np.cos(t), (1, 1, 0): -0.1 * np.sin(t), (1, 0, 0): 0.0}


def check_reynolds_order(dts=(0.2, 0.1, 0.05, 0.025), n_tan=24, n_s=16, t=0.7):
    sf = Sphere(1.0)
    vq = VolumeQuadrature.build(sf, n_tan, n_s, "gauss")
    eta_at = lambda tt: AmbientField(sf, polynomial_ambient(_sphere_eta(tt)))
    deta_at = lambda tt: AmbientField(sf, polynomial_ambient(_sphere_deta(tt)))
    xi = lambda tt, y: np.cos(2.0 * tt) * np.exp(y[..., 0]) + y[..., 1] * y[..., 2] * np.sin(tt)
    dxi = lambda tt, y: -2.0 * np.sin(2.0 * tt) * np.exp(y[..., 0]) + y[..., 1] * y[..., 2] * np.cos(tt)
    errs = [reynolds_check(sf, eta_at, deta_at, xi, dxi, t, dt, vq) for dt in dts]
    orders = convergence_order(dts, errs)
    ok = bool(np.min(orders) >= 1.9)
    return result("transform", "reynolds_order_dt", ok, float(np.min(orders)), 1.9,
                  errors=_floats(errs), orders=_floats(orders))


def check_divergence_theorem_order(ns=(8, 16, 32, 64)):
    sf = Sphere(1.0)
    eta = AmbientField(sf, polynomial_ambient({(0, 0, 1): 0.2, (1, 1, 0): 0.1}))
    phi = lambda y: y * (1.0 + y[..., :1])
    div_phi = lambda y: 3.0 + 4.0 * y[..., 0]
    psi = lambda y: np.exp(y[..., 2]) + y[..., 0] * y[..., 1]
    grad_psi = lambda y: np.stack([y[..., 1], y[..., 0], np.exp(y[..., 2])], axis=-1)
    errs = []
    for n in ns:
        vq = VolumeQuadrature.build(sf, n, n, "midpoint")
        errs.append(divergence_theorem_check(sf, eta, phi, div_phi, psi, grad_psi, vq))
    hs = [1.0 / n for n in ns]
    orders = convergence_order(hs, errs)
    ok = bool(np.min(orders) >= 1.9)
    return result("transform", "divergence_theorem_order_h", ok, float(np.min(orders)), 1.9,
                  errors=_floats(errs), orders=_floats(orders))


# ---------------------------------------------------------------------------
# compat
# ---------------------------------------------------------------------------

def check_gamma_moment(rng=None, count=20):
    rng = np.random.default_rng(4) if rng is None else rng
    worst = 0.0
    for i in range(count):
        sf = [Sphere(1.0), Cylinder(1.0, 2.0), FlatChannel(3), Circle(1.0)][i % 4]
        q = sf.quadrature(32 if sf.m == 1 else (32, 32))
        eta = ConstantField(0.0, sf.m) if sf.name == "flat" else AmbientField(
            sf, polynomial_ambient({(1,) + (0,) * (sf.dim - 1): rng.uniform(-0.3, 0.3),
                                    (0,) * (sf.dim - 1) + (1,): rng.uniform(-0.2, 0.2)}))
        b = _random_ambient_values(rng, sf.embed(q.u), 1.0) + rng.normal()
        g = gamma_factor(sf, eta, q.u)
        norm = np.sqrt(np.sum(q.w * b * b) * np.sum(q.w * g * g))
        for corr in (mean_correct(sf, eta, b, q), orth_correct(sf, eta, b, q)):
            worst = max(worst, abs(gamma_moment(sf, eta, corr, q)) / norm)
    return result("compat", "gamma_moment", worst <= 1e-12, worst, 1e-12)


def _channel_delta(sf):
    def delta_at(s):
        return FourierField([sf.length], [[1], [2]], [0.15 * np.sin(3.0 * s), 0.05],
                            [0.05 * np.cos(2.0 * s), 0.0])
    return delta_at


def check_steklov_trace(eps=0.1, t=0.6, n=16):
    sf = FlatChannel(2, 1.0, 1.0)
    delta_at = _channel_delta(sf)
    b = lambda s, u: np.cos(2 * np.pi * u[..., 0]) * (1.0 + s) + np.sin(5.0 * s)

    def phi(s, y):
        u, _ = sf.project(y)
        top = sf.height + delta_at(s)(u)
        out = np.zeros(y.shape)
        out[..., 1] = b(s, u) * y[..., 1] / top
        return out

    u = (np.arange(n) / n)[:, None]
    x_ref = sf.embed(u)
    r0 = time_steklov_field(sf, delta_at, eps, phi, t, x_ref).values
    r1 = time_steklov_scalar(sf, delta_at, eps, b, t, u).values
    res = float(np.max(np.abs(r0 - r1[:, None] * sf.normal(u))))
    return result("compat", "steklov_trace", res <= 1e-8, res, 1e-8)


def check_mollifier_one_sided(count=1000, rng=None):
    rng = np.random.default_rng(5) if rng is None else rng
    sf = FlatChannel(2, 1.0, 1.0)
    u = sf.quadrature(256).u
    worst = np.inf
    for _ in range(count):
        K = int(rng.integers(4, 40))
        ks = np.arange(1, K + 1)[:, None]
        decay = 1.0 / ks[:, 0] ** rng.uniform(0.5, 2.0)
        a, b = rng.normal(size=K) * decay, rng.normal(size=K) * decay
        amp = rng.uniform(0.05, 0.4) / max(np.max(np.abs(FourierField([1.0], ks, a, b)(u))), 1e-300)
        f = FourierField([1.0], ks, a * amp, b * amp)
        eps = 2.0 ** -rng.integers(3, 7)
        m = space_mollify(sf, f, eps, nodes=u)
        worst = min(worst, float(np.min(m(u) - f(u))))
    return result("compat", "mollifier_one_sided", worst >= 0.0, worst, 0.0)


def check_steklov_order(eps_values=(0.2, 0.1, 0.05, 0.025), t=1.0, n=12):
    sf = FlatChannel(2, 1.0, 1.0)
    delta_at = _channel_delta(sf)

    def phi(s, y):
        return np.stack([np.sin(2 * np.pi * y[..., 0]) * np.cos(s) * y[..., 1],
                         np.cos(2 * np.pi * y[..., 0]) * np.exp(-s) * y[..., 1] ** 2], axis=-1)

    g = (np.arange(n) + 0.5) / n
    x_ref = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    errs = []
    for eps in eps_values:
        r = time_steklov_field(sf, delta_at, eps, phi, t, x_ref)
        errs.append(float(np.max(np.abs(r.values - phi(t, r.points)))))
    orders = convergence_order(eps_values, errs)
    ok = bool(np.min(orders) >= 0.9)
    return result("compat", "steklov_order_eps", ok, float(np.min(orders)), 0.9,
                  errors=errs, orders=_floats(orders))


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def check_oscillator_order(dts=(0.02, 0.01, 0.005, 0.0025), T=1.0, eps=0.05):
    """Shell-only oscillator with the parabolic regularization switched on.

    With eps = 0 the midpoint rule conserves the discrete energy to round-off and
    no order is measurable, so the damped oscillator is used.
    """
    from . import config as cfgmod
    from .coupler import Problem, solve_decoupled

    cfg = cfgmod.load_config(preset="oscillator", env={},
                             overrides={"regularization": {"eps": eps}})
    pr = Problem(cfgmod.problem_data(cfg), eps)
    mo = pr.motion([0.0], np.zeros((1, pr.shell.size)))
    from .galerkin_core import energy_identity_residual
    errs = [energy_identity_residual(solve_decoupled(pr, mo, T, dt).ledger) for dt in dts]
    orders = convergence_order(dts, errs)
    ok = bool(np.min(orders) >= 1.9)
    return result("energy", "oscillator_order", ok, float(np.min(orders)), 1.9,
                  residuals=_floats(errs), orders=_floats(orders))


def coupled_refinement(levels=(250, 500, 1000, 2000), fixed_point_steps=250, preset="plate-pulse",
                       overrides=None):
    """Energy residuals of the coupled channel preset under dt refinement.

    The boundary datum is the fixed point of the coarsest level; the finer
    levels re-solve the fluid and shell along that datum.
    """
    from . import config as cfgmod
    from .coupler import Problem, fixed_point, solve_decoupled
    from .galerkin_core import energy_identity_residual

    cfg = cfgmod.load_config(preset=preset, env={}, overrides=overrides)
    T = float(cfg["time"]["horizon"])
    pr = Problem(cfgmod.problem_data(cfg), float(cfg["regularization"]["eps"]))
    fp, rep = fixed_point(pr, T, T / fixed_point_steps, tol_fp=cfg["solver"]["tol_fp"])
    motion = pr.motion(fp.times, fp.coeffs)
    residuals, seconds = [], []
    for n in levels:
        t0 = time.perf_counter()
        res = solve_decoupled(pr, motion, T, T / n)
        seconds.append(time.perf_counter() - t0)
        residuals.append(energy_identity_residual(res.ledger))
    return {"T": T, "levels": list(levels), "residuals": residuals, "seconds": seconds,
            "fixed_point": rep.as_dict()}


def check_coupled_energy(levels=(250, 500, 1000, 2000), bound=1e-4, min_ratio=2.0 ** 1.9):
    out = coupled_refinement(levels)
    r = out["residuals"]
    ratios = [r[i] / r[i + 1] for i in range(len(r) - 1)]
    ok = r[-1] <= bound and min(ratios) >= min_ratio
    return result("energy", "coupled_channel_residual", ok, float(r[-1]), bound,
                  residuals=_floats(r), ratios=_floats(ratios), min_ratio=min_ratio)


SUITES = {
    "geometry": [check_kappa_sphere, check_offset_area, check_gamma_positive],
    "shell": [check_plate_closed_form, check_coercivity, check_eps0_homogeneity],
    "stress": [check_certify, check_minty],
    "transform": [check_divergence_preservation, check_reynolds_order,
                  check_divergence_theorem_order],
    "compat": [check_gamma_moment, check_steklov_trace, check_mollifier_one_sided,
               check_steklov_order],
    "energy": [check_oscillator_order, check_coupled_energy],
}


def run_suite(name, seed=0):
    """Run one suite (or ``all``); checks that take an rng get one seeded from ``seed``."""
    names = list(SUITES) if name == "all" else [name]
    if any(n not in SUITES for n in names):
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    out = []
    for n in names:
        for k, check in enumerate(SUITES[n]):
            kw = {}
            if "rng" in check.__code__.co_varnames[:check.__code__.co_argcount]:
                kw["rng"] = np.random.default_rng([seed, k, len(n)])
            t0 = time.perf_counter()
            try:
                r = check(**kw)
            except KfsiError as exc:
                r = result(n, check.__name__.removeprefix("check_"), False, str(exc), None)
            r["seconds"] = time.perf_counter() - t0
            out.append(r)
    return out
