"""Pullback quadrature on deformed domains and the Piola-type pushforward.

No mesh of the deformed domain is ever built: every integral over
Omega_eta is evaluated at reference nodes with the weight det dPsi_eta.
Vector fields are callables ``phi(x) -> values [..., d]`` (optionally with
a Jacobian), evaluated at reference or physical points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .geometry import (HanzawaMap, QuinticBlend, SurfaceField, boundary_map, fiber_jacobian,
                       fiber_point, gamma_factor, line_rule, metric, tubular_radius)


@dataclass
class VolumeQuadrature:
    """Reference nodes in normal-fiber coordinates (u, s), s in [-kappa, 0]."""

    surface: object
    u: np.ndarray
    s: np.ndarray
    x: np.ndarray
    w: np.ndarray
    surface_quad: object

    @classmethod
    def build(cls, surface, n_tan, n_s, rule="gauss", blend=None, depth=None):
        blend = blend or QuinticBlend()
        kap = tubular_radius(surface)
        depth = kap if depth is None else depth
        sq = surface.quadrature(n_tan, rule)
        brk = [kap * b for b in getattr(blend, "breakpoints", ())]
        s1, ws = line_rule(-depth, 0.0, n_s, rule, brk)
        N, S = sq.u.shape[0], s1.size
        u = np.repeat(sq.u, S, axis=0)
        s = np.tile(s1, N)
        jl = np.abs(np.linalg.det(fiber_jacobian(surface, u, s)))
        j0 = np.abs(np.linalg.det(fiber_jacobian(surface, u, np.zeros_like(s))))
        w = np.repeat(sq.w, S) * np.tile(ws, N) * jl / j0
        return cls(surface, u, s, fiber_point(surface, u, s), w, sq)

    @property
    def size(self):
        return self.w.size

    def bind(self, eta, blend=None):
        return DeformedQuadrature.from_map(self, HanzawaMap(self.surface, eta, blend))


@dataclass
class DeformedQuadrature:
    """Reference quadrature with cached Psi_eta images, Jacobians and determinants."""

    ref: VolumeQuadrature
    hanzawa: HanzawaMap
    y: np.ndarray
    jac: np.ndarray
    det: np.ndarray

    @classmethod
    def from_map(cls, ref, hz):
        hz.check(ref.u)
        y, jac, det = hz.evaluate(ref.u, ref.s)
        if np.any(det <= 0):
            i = int(np.argmin(det))
            raise GeometryError(f"det dPsi <= 0 at node {i} (det={det[i]:.3g})")
        return cls(ref, hz, y, jac, det)

    @property
    def weights(self):
        return self.ref.w * self.det

    def pushforward(self, phi_ref):
        """Values of T_eta phi at the image nodes y, given phi at reference nodes."""
        return np.einsum("...ij,...j->...i", self.jac, phi_ref) / self.det[..., None]

    def pullback(self, vals_phys):
        """Values of T_eta^{-1} v at reference nodes, given v at the images y."""
        return np.linalg.solve(self.jac, vals_phys[..., None])[..., 0] * self.det[..., None]

    def integrate(self, f_phys):
        """int_{Omega_eta} f dx for f sampled at the image nodes."""
        return float(np.sum(self.weights * f_phys))


def pushforward(surface, eta, phi, x_ref, blend=None):
    """T_eta phi at the images of reference points x_ref; phi is a callable."""
    hz = HanzawaMap(surface, eta, blend)
    y, jac, det = hz.evaluate_cartesian(x_ref)
    vals = phi(x_ref)
    vals = vals[0] if isinstance(vals, tuple) else vals
    return y, np.einsum("...ij,...j->...i", jac, vals) / det[..., None]


def pullback(surface, eta, v, x_ref, blend=None):
    """T_eta^{-1} v at reference points; v is a callable on physical points."""
    hz = HanzawaMap(surface, eta, blend)
    y, jac, det = hz.evaluate_cartesian(x_ref)
    vals = v(y)
    vals = vals[0] if isinstance(vals, tuple) else vals
    return np.linalg.solve(jac, vals[..., None])[..., 0] * det[..., None]


def pushed_field(surface, eta, phi, blend=None):
    """Callable y -> T_eta phi(y) evaluated through Newton inversion of Psi."""
    hz = HanzawaMap(surface, eta, blend)

    def field(y):
        X = hz.inverse(y)
        _, jac, det = hz.evaluate_cartesian(X)
        vals = phi(X)
        vals = vals[0] if isinstance(vals, tuple) else vals
        return np.einsum("...ij,...j->...i", jac, vals) / det[..., None]

    return field


def divergence_fd(field, y, h=1e-3):
    """Fourth-order central-difference divergence of a vector callable."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    div = np.zeros(y.shape[:-1])
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fp2, fp1 = field(y + 2 * e)[..., i], field(y + e)[..., i]
        fm1, fm2 = field(y - e)[..., i], field(y - 2 * e)[..., i]
        div += (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
    return div


def pushforward_divergence(surface, eta, phi, y, h=1e-3, blend=None):
    """div T_eta phi at physical points y, by differencing the pushed field."""
    return divergence_fd(pushed_field(surface, eta, phi, blend), y, h)


def volume_integral(dq: DeformedQuadrature, f):
    """int_{Omega_eta} f dx; f is a callable on physical points or samples at dq.y."""
    vals = f(dq.y) if callable(f) else np.asarray(f)
    return dq.integrate(vals)


def surface_integral(surface, eta, b, quad):
    """int_{dOmega} b gamma(eta) dA; b is a callable on chart nodes or samples."""
    vals = b(quad.u) if callable(b) else np.asarray(b)
    return float(np.sum(quad.w * vals * gamma_factor(surface, eta, quad.u)))


def oriented_area_vector(surface, tang, u):
    """n dA_t per unit chart measure from the tangent map of Phi_eta."""
    t0 = surface.tangents(u)
    if surface.m == 1:
        rot = lambda t: np.stack([-t[..., 1, 0], t[..., 0, 0]], axis=-1)
    else:
        rot = lambda t: np.cross(t[..., :, 0], t[..., :, 1])
    sign = np.sign(np.sum(rot(t0) * surface.normal(u), axis=-1))
    return rot(tang) * sign[..., None]


def chart_measure(surface, quad):
    """Quadrature weights without the sqrt(det g) factor."""
    return quad.w / np.sqrt(np.linalg.det(metric(surface, quad.u)))


def divergence_theorem_check(surface, eta, phi, div_phi, psi, grad_psi, vq: VolumeQuadrature):
    """|int phi.grad psi + int div(phi) psi - int b gamma tr psi dA| on Omega_eta.

    ``phi`` must satisfy tr phi = b nu on the deformed boundary; b is read off
    as phi . nu at the boundary images.
    """
    dq = vq.bind(eta)
    y = dq.y
    lhs = dq.integrate(np.sum(phi(y) * grad_psi(y), axis=-1))
    vol = dq.integrate(div_phi(y) * psi(y))
    sq = vq.surface_quad
    pts, _ = boundary_map(surface, eta, sq.u)
    b = np.sum(phi(pts) * surface.normal(sq.u), axis=-1)
    bnd = float(np.sum(sq.w * b * gamma_factor(surface, eta, sq.u) * psi(pts)))
    return abs(lhs + vol - bnd)


def reynolds_check(surface, eta_at, deta_at, xi, dxi_dt, t, dt, vq: VolumeQuadrature, blend=None):
    """Residual of the transport identity at time t with a central difference in time.

    ``eta_at(t)`` and ``deta_at(t)`` return SurfaceFields; ``xi(t, y)`` and
    ``dxi_dt(t, y)`` are scalar callables on physical points.
    """
    def total(tt):
        dq = DeformedQuadrature.from_map(vq, HanzawaMap(surface, eta_at(tt), blend))
        return dq.integrate(xi(tt, dq.y))

    ddt = (total(t + dt) - total(t - dt)) / (2.0 * dt)
    dq = DeformedQuadrature.from_map(vq, HanzawaMap(surface, eta_at(t), blend))
    inner = dq.integrate(dxi_dt(t, dq.y))
    sq = vq.surface_quad
    pts, tang = boundary_map(surface, eta_at(t), sq.u)
    ndA = oriented_area_vector(surface, tang, sq.u)
    vel = deta_at(t)(sq.u)[..., None] * surface.normal(sq.u)
    flux = float(np.sum(chart_measure(surface, sq) * np.sum(vel * ndA, axis=-1) * xi(t, pts)))
    return abs(ddt - inner - flux)


def convergence_order(hs, errs):
    """Pairwise observed orders log(e_i/e_{i+1}) / log(h_i/h_{i+1})."""
    hs, errs = np.asarray(hs, dtype=float), np.asarray(errs, dtype=float)
    return np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
