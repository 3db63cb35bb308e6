"""Compatibility projectors, mollifiers and moving-domain Steklov means."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DomainDegenerationError
from .geometry import (Circle, ConstantField, CombinationField, Cylinder, FlatChannel,
                       FourierField, HanzawaMap, Sphere, SurfaceField, ChartField,
                       gamma_factor, gauss_curvature, mean_curvature, sup_norm, tubular_radius)


def bump_center(surface):
    """Ambient point at the middle of the elastic part M."""
    if isinstance(surface, FlatChannel):
        return surface.embed(np.full(surface.m, 0.5 * surface.length))
    if isinstance(surface, Circle):
        return np.array([surface.radius, 0.0])
    if isinstance(surface, Cylinder):
        return np.array([surface.radius, 0.0, 0.5 * surface.axial_length])
    if isinstance(surface, Sphere):
        return np.array([0.0, 0.0, surface.radius])
    raise ConfigurationError(f"no bump center for {type(surface).__name__}")


def default_bump(surface, width=None):
    """Gaussian bump psi >= 0 centered in M, as a callable on chart nodes."""
    c = bump_center(surface)
    if width is None:
        width = 0.25 * (surface.length if isinstance(surface, FlatChannel) else surface.radius)

    def psi(u):
        x = surface.embed(u)
        return np.exp(-np.sum((x - c) ** 2, axis=-1) / width ** 2)

    return psi


@dataclass
class RegularizerConfig:
    eps: float
    eps_tilde: float = 0.0
    bump: Callable | None = None
    cutoff: int | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if self.eps_tilde < 0:
            raise ConfigurationError("eps_tilde must be nonnegative")


def _samples(b, u):
    if isinstance(b, SurfaceField):
        return b(u)
    if callable(b):
        return np.asarray(b(u), dtype=float)
    return np.asarray(b, dtype=float)


def gamma_moment(surface, eta, b, quad):
    """a(b, eta) = int b gamma(eta) dA."""
    return float(np.sum(quad.w * _samples(b, quad.u) * gamma_factor(surface, eta, quad.u)))


def mean_correct(surface, eta, b, quad, bump=None):
    """M_eta b = b - psi a(b, eta) / a(psi, eta), sampled at quad nodes."""
    psi = _samples(bump or default_bump(surface), quad.u)
    bv = _samples(b, quad.u)
    g = gamma_factor(surface, eta, quad.u)
    den = float(np.sum(quad.w * psi * g))
    if den == 0.0:
        raise ConfigurationError("bump has zero gamma moment")
    return bv - psi * (float(np.sum(quad.w * bv * g)) / den)


def orth_correct(surface, eta, b, quad):
    """M_eta^perp b = b - gamma <b, gamma> / <gamma, gamma>, the L^2 projection off gamma."""
    bv = _samples(b, quad.u)
    g = gamma_factor(surface, eta, quad.u)
    return bv - g * (float(np.sum(quad.w * bv * g)) / float(np.sum(quad.w * g * g)))


def spectral_project(basis, k, b):
    """L^2(dA) projection onto the first k shell modes; returns (samples, coefficients)."""
    if not 0 <= k <= basis.size:
        raise ConfigurationError(f"projection rank {k} outside [0, {basis.size}]")
    bv = _samples(b, basis.quad.u)
    if k == 0:
        return np.zeros_like(bv), np.zeros(0)
    V = basis.values()[:k]
    G = (V * basis.quad.w) @ V.T
    rhs = V @ (basis.quad.w * bv)
    c = linalg.solve(G, rhs, assume_a="pos")
    return c @ V, c


# ---------------------------------------------------------------------------
# space mollifier
# ---------------------------------------------------------------------------

@dataclass
class Mollified:
    field: SurfaceField
    smooth: SurfaceField
    shift: float
    cutoff: int

    def __call__(self, u):
        return self.field(u)


def _truncate_fourier(f: FourierField, K: int) -> FourierField:
    keep = np.all(np.abs(f.kvecs) <= K, axis=1) if f.kvecs.size else np.zeros(0, bool)
    return FourierField(f.lengths, f.kvecs[keep], f.ccos[keep], f.csin[keep], f.const)


def _check_nodes(surface, nodes):
    if nodes is not None:
        return np.asarray(nodes, dtype=float)
    if isinstance(surface, FlatChannel):
        return surface.quadrature(64).u
    if isinstance(surface, Sphere):
        return surface.quadrature((48, 64), region="shell").u
    return surface.quadrature(64 if surface.m == 1 else (64, 64)).u


def space_mollify(surface, eta0, eps, nodes=None, basis=None, kappa=None):
    """R_eps eta0: spectral truncation at |k| <= ceil(1/eps) plus the minimal upward shift.

    ``eta0`` is a FourierField, a ConstantField, or a coefficient vector for
    ``basis`` (then the first ceil(1/eps) modes are kept).  The shift is the
    smallest constant with R_eps eta0 >= eta0 at every check node.
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    K = int(np.ceil(1.0 / eps))
    if basis is not None:
        c = np.asarray(eta0, dtype=float)
        kk = min(c.size, K)
        raw = basis.field(c)
        smooth = basis.field(np.concatenate([c[:kk], np.zeros(c.size - kk)]))
    elif isinstance(eta0, FourierField):
        raw, smooth = eta0, _truncate_fourier(eta0, K)
    elif isinstance(eta0, ConstantField):
        raw = smooth = eta0
    else:
        raise ConfigurationError("space_mollify needs a Fourier, constant or basis field")
    u = _check_nodes(surface, nodes)
    target = raw(u)
    base = smooth(u)
    shift = max(0.0, float(np.max(target - base))) if target.size else 0.0
    # ulp-safe enforcement of the one-sided bound
    while np.any(base + shift < target):
        shift = float(np.nextafter(shift, np.inf))
    m = surface.m
    out = CombinationField([smooth, ConstantField(shift, m)], [1.0, 1.0]) if shift else smooth
    kap = tubular_radius(surface) if kappa is None else kappa
    if sup_norm(out, u) >= kap:
        raise DomainDegenerationError(f"mollified displacement reaches kappa = {kap:.6g}")
    return Mollified(out, smooth, float(shift), K)


# ---------------------------------------------------------------------------
# Steklov means on moving domains
# ---------------------------------------------------------------------------

@dataclass
class SteklovResult:
    values: np.ndarray
    points: np.ndarray
    zero_extended: bool
    window: tuple = field(default=(0.0, 0.0))


def _window_nodes(t, eps, n):
    lo = t - eps
    a = max(lo, 0.0)
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (t - a) * (x + 1.0) + a
    return s, 0.5 * (t - a) * w, lo < 0.0


def time_steklov_field(surface, delta_at, eps, phi, t, x_ref, n_time=8, blend=None):
    """R^0_eps phi(t) = T_{delta(t)} (1/eps) int_{t-eps}^t T^{-1}_{delta(s)} phi(s) ds.

    ``delta_at(s)`` returns the (already mollified) SurfaceField at time s;
    ``phi(s, y)`` is a vector callable on physical points of the domain at s.
    Integrands before t = 0 are extended by zero.  Values are returned at
    the images of the reference points ``x_ref`` at time t.
    """
    s_nodes, w, ext = _window_nodes(t, eps, n_time)
    acc = np.zeros(np.shape(x_ref))
    for s, ws in zip(s_nodes, w):
        hz = HanzawaMap(surface, delta_at(s), blend)
        y, jac, det = hz.evaluate_cartesian(x_ref)
        acc += ws * np.linalg.solve(jac, phi(s, y)[..., None])[..., 0] * det[..., None]
    acc /= eps
    hz = HanzawaMap(surface, delta_at(t), blend)
    y, jac, det = hz.evaluate_cartesian(x_ref)
    vals = np.einsum("...ij,...j->...i", jac, acc) / det[..., None]
    return SteklovResult(vals, y, ext, (t - eps, t))


def time_steklov_scalar(surface, delta_at, eps, b, t, u, n_time=8):
    """R^1_eps b(t) = (1/(eps gamma(delta(t)))) int_{t-eps}^t gamma(delta(s)) b(s) ds.

    This is the boundary companion of R^0: tr R^0 phi = (R^1 b) nu when tr phi = b nu.
    """
    s_nodes, w, ext = _window_nodes(t, eps, n_time)
    acc = np.zeros(np.shape(u)[:-1])
    for s, ws in zip(s_nodes, w):
        acc += ws * gamma_factor(surface, delta_at(s), u) * np.asarray(b(s, u), dtype=float)
    vals = acc / (eps * gamma_factor(surface, delta_at(t), u))
    return SteklovResult(vals, surface.embed(u), ext, (t - eps, t))


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def gamma_field(surface, eta: SurfaceField) -> SurfaceField:
    """gamma(eta) as a SurfaceField; catalog surfaces have constant H and G."""
    if not getattr(surface, "catalog", False):
        raise ConfigurationError("gamma_field needs a catalog surface")
    # any regular chart point will do; u = 0 is the pole of the sphere chart
    probe = np.full((1, surface.m), 0.7)
    H = float(mean_curvature(surface, probe)[0])
    G = float(gauss_curvature(surface, probe)[0])

    def f(u):
        v, dv, ddv = eta.evaluate(u)
        g = 1.0 - 2.0 * H * v + G * v * v
        dg = (-2.0 * H + 2.0 * G * v)[..., None] * dv
        ddg = (-2.0 * H + 2.0 * G * v)[..., None, None] * ddv + 2.0 * G * dv[..., :, None] * dv[..., None, :]
        return g, dg, ddg

    return ChartField(f)


@dataclass
class InitialData:
    eta0: Mollified
    eta1: SurfaceField
    u0: Callable
    u0_ref: Callable
    compat_residual: float


def mollify_initial_data(surface, eta0, eta1, u0, eps, quad, tol=1e-10, blend=None):
    """Smoothed (R_eps eta0, eta1^eps, u0^eps) satisfying the gamma-compatibility.

    ``eta0`` and ``eta1`` are Fourier or constant fields; ``u0(y)`` is a
    divergence-free vector callable on Omega_{eta0} or None for rest.
    ``u0^eps`` is u0 transported to Omega_{R eta0} by T_{R eta0} T_{eta0}^{-1}.
    """
    g0 = gamma_factor(surface, eta0, quad.u)
    e1 = eta1(quad.u)
    raw = float(np.sum(quad.w * e1 * g0))
    scale = max(1.0, float(np.sqrt(np.sum(quad.w * e1 * e1))))
    if abs(raw) > tol * scale:
        raise ConfigurationError(f"initial velocity violates the gamma-compatibility ({raw:.3e})")
    R0 = space_mollify(surface, eta0, eps, nodes=quad.u)
    K = int(np.ceil(1.0 / eps))
    if isinstance(eta1, FourierField):
        e1s = _truncate_fourier(eta1, K)
    elif isinstance(eta1, (ConstantField, CombinationField, ChartField)):
        e1s = eta1
    else:
        raise ConfigurationError("eta1 must be a surface field")
    gR = gamma_field(surface, R0.field)
    gv = gR(quad.u)
    c = float(np.sum(quad.w * e1s(quad.u) * gv)) / float(np.sum(quad.w * gv * gv))
    eta1_eps = CombinationField([e1s, gR], [1.0, -c]) if c else e1s
    resid = abs(float(np.sum(quad.w * eta1_eps(quad.u) * gv)))
    if u0 is None:
        zero = lambda y: np.zeros(np.shape(y))
        return InitialData(R0, eta1_eps, zero, zero, resid)
    hz0 = HanzawaMap(surface, eta0, blend)
    hzR = HanzawaMap(surface, R0.field, blend)

    def u0_ref(x):
        y, jac, det = hz0.evaluate_cartesian(x)
        return np.linalg.solve(jac, u0(y)[..., None])[..., 0] * det[..., None]

    def u0_eps(y):
        x = hzR.inverse(y)
        _, jac, det = hzR.evaluate_cartesian(x)
        return np.einsum("...ij,...j->...i", jac, u0_ref(x)) / det[..., None]

    return InitialData(R0, eta1_eps, u0_eps, u0_ref, resid)
