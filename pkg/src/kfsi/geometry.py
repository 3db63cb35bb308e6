"""Reference surfaces, tubular coordinates and the Hanzawa map.

Chart parameters ``u`` are arrays of shape ``(..., m)`` with ``m = d - 1``.
All surfaces use the outer unit normal, and the second fundamental form is
``h_ab = d_a d_b X . nu``.  With this convention the unit sphere has
``H = -1`` and ``G = 1``, so ``gamma(eta) = (1 + eta)**2`` there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainDegenerationError, GeometryError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# blending profiles on [-1, 0]
# ---------------------------------------------------------------------------

def _smoothstep(x):
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _smoothstep_d1(x):
    return 30.0 * x * x * (1.0 - x) ** 2


def _smoothstep_d2(x):
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)


def _smoothstep_int(x):
    # antiderivative vanishing at 0, equals 1/2 at 1
    return x ** 4 * (2.5 - 3.0 * x + x * x)


class QuinticBlend:
    """beta(t) = smoothstep(t + 1), the default profile.

    beta(0) = 1, beta(-1) = 0 and beta', beta'' vanish at both ends.
    """

    name = "quintic"
    breakpoints: tuple = ()

    @property
    def max_slope(self) -> float:
        return 15.0 / 8.0

    def __call__(self, t, order=0):
        x = np.clip(np.asarray(t, dtype=float) + 1.0, 0.0, 1.0)
        if order == 0:
            return _smoothstep(x)
        if order == 1:
            return _smoothstep_d1(x)
        if order == 2:
            return _smoothstep_d2(x)
        raise ValueError("order must be 0, 1 or 2")


class RampBlend:
    """Nearly linear profile with smooth quintic corners of width ``w``.

    beta' rises from 0 to c = 1/(1-w) on [-1, -1+w], stays at c and drops back
    to 0 on [-w, 0].  Its slope bound c is close to 1, so the Hanzawa map stays
    injective for inward displacements up to kappa/c.
    """

    name = "ramp"

    def __init__(self, width: float = 0.01):
        if not 0.0 < width < 0.5:
            raise ValueError("ramp width must lie in (0, 0.5)")
        self.width = float(width)
        self.c = 1.0 / (1.0 - self.width)

    @property
    def breakpoints(self):
        return (-1.0 + self.width, -self.width)

    @property
    def max_slope(self) -> float:
        return self.c

    def __call__(self, t, order=0):
        w, c = self.width, self.c
        x = np.clip(np.asarray(t, dtype=float) + 1.0, 0.0, 1.0)
        lo = x < w
        hi = x > 1.0 - w
        yl = np.where(lo, x / w, 0.0)
        yh = np.where(hi, (1.0 - x) / w, 0.0)
        if order == 0:
            mid = c * (0.5 * w + (x - w))
            out = np.where(lo, c * w * _smoothstep_int(yl), mid)
            return np.where(hi, 1.0 - c * w * _smoothstep_int(yh), out)
        if order == 1:
            out = np.where(lo, c * _smoothstep(yl), c)
            return np.where(hi, c * _smoothstep(yh), out)
        if order == 2:
            out = np.where(lo, c * _smoothstep_d1(yl) / w, 0.0)
            return np.where(hi, -c * _smoothstep_d1(yh) / w, out)
        raise ValueError("order must be 0, 1 or 2")


def make_blend(name: str = "quintic", width: float = 0.01):
    if name == "quintic":
        return QuinticBlend()
    if name == "ramp":
        return RampBlend(width)
    raise ValueError(f"unknown blend profile {name!r}")


# ---------------------------------------------------------------------------
# 1-D rules
# ---------------------------------------------------------------------------

def line_rule(a: float, b: float, n: int, rule: str = "gauss",
              breakpoints: Sequence[float] = ()):
    """Nodes and weights on [a, b]; composite over the given breakpoints."""
    cuts = [a] + [p for p in sorted(breakpoints) if a < p < b] + [b]
    xs, ws = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if rule == "gauss":
            x, w = np.polynomial.legendre.leggauss(n)
            xs.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * w)
        elif rule == "midpoint":
            h = (hi - lo) / n
            xs.append(lo + h * (np.arange(n) + 0.5))
            ws.append(np.full(n, h))
        else:
            raise ValueError(f"unknown rule {rule!r}")
    return np.concatenate(xs), np.concatenate(ws)


def periodic_rule(length: float, n: int):
    return length * np.arange(n) / n, np.full(n, length / n)


@dataclass(frozen=True)
class SurfaceQuadrature:
    """Tensor-product rule on a chart; ``w`` already contains sqrt(det g)."""

    u: np.ndarray
    w: np.ndarray
    shape: tuple

    @property
    def size(self) -> int:
        return self.w.size


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------

class ReferenceSurface:
    """Base class; subclasses provide the analytic chart."""

    dim: int = 3
    kappa: float = 1.0
    name: str = "surface"
    catalog: bool = True
    periodic: tuple = ()

    @property
    def m(self) -> int:
        return self.dim - 1

    # chart data, overridden
    def embed(self, u):
        raise NotImplementedError

    def tangents(self, u):
        raise NotImplementedError

    def second_derivatives(self, u):
        raise NotImplementedError

    def normal(self, u):
        raise NotImplementedError

    def normal_derivatives(self, u):
        raise NotImplementedError

    def project(self, x):
        """Closest-point chart parameter and signed normal distance."""
        raise NotImplementedError

    def quadrature(self, n, rule="gauss", region="surface") -> SurfaceQuadrature:
        raise NotImplementedError

    def in_shell(self, u):
        return np.ones(np.shape(u)[:-1], dtype=bool)

    def volume(self) -> float:
        raise NotImplementedError

    def sample(self, n, rule="gauss", region="surface") -> "SurfaceSamples":
        q = self.quadrature(n, rule, region)
        return SurfaceSamples.from_surface(self, q)


def _tensor_grid(axes, weights):
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*weights, indexing="ij")
    u = np.stack([a.ravel() for a in mesh], axis=-1)
    w = np.prod(np.stack([a.ravel() for a in wmesh], axis=-1), axis=-1)
    return u, w, mesh[0].shape


def _as_pair(n):
    if np.isscalar(n):
        return int(n), int(n)
    return int(n[0]), int(n[1])


class FlatChannel(ReferenceSurface):
    """Plate on top of a box of height ``height``; rigid bottom wall.

    The plate parameter domain is [0, length)^m, periodic unless ``clamped``
    (then the plate is clamped along the edges of [0, length]^m).  Normal rays
    are parallel, so the tubular radius is the height.
    """

    name = "flat"

    def __init__(self, dim=2, length=1.0, height=1.0, clamped=False):
        if dim not in (2, 3):
            raise GeometryError("flat channel needs dim 2 or 3")
        if length <= 0 or height <= 0:
            raise GeometryError("channel length and height must be positive")
        self.dim = dim
        self.length = float(length)
        self.height = float(height)
        self.clamped = bool(clamped)
        self.kappa = self.height
        self.periodic = (not clamped,) * (dim - 1)

    def embed(self, u):
        u = np.asarray(u, dtype=float)
        top = np.full(u.shape[:-1] + (1,), self.height)
        return np.concatenate([u, top], axis=-1)

    def tangents(self, u):
        u = np.asarray(u, dtype=float)
        t = np.zeros(u.shape[:-1] + (self.dim, self.m))
        for a in range(self.m):
            t[..., a, a] = 1.0
        return t

    def second_derivatives(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1] + (self.dim, self.m, self.m))

    def normal(self, u):
        u = np.asarray(u, dtype=float)
        nu = np.zeros(u.shape[:-1] + (self.dim,))
        nu[..., -1] = 1.0
        return nu

    def normal_derivatives(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1] + (self.dim, self.m))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        u = x[..., :-1]
        if not self.clamped:
            u = np.mod(u, self.length)
        return u, x[..., -1] - self.height

    def quadrature(self, n, rule="gauss", region="surface"):
        axes, weights = [], []
        nn = (n,) * self.m if np.isscalar(n) else tuple(n)
        for k in range(self.m):
            if self.clamped:
                x, w = line_rule(0.0, self.length, nn[k], rule)
            else:
                x, w = periodic_rule(self.length, nn[k])
            axes.append(x)
            weights.append(w)
        u, w, shape = _tensor_grid(axes, weights)
        return SurfaceQuadrature(u, w, shape)

    def volume(self):
        return self.length ** self.m * self.height

    def shell_area(self):
        return self.length ** self.m


class Circle(ReferenceSurface):
    """Boundary of the disk of radius R (d = 2), parametrized by angle."""

    name = "circle"
    dim = 2

    def __init__(self, radius=1.0):
        if radius <= 0:
            raise GeometryError("radius must be positive")
        self.radius = float(radius)
        self.kappa = self.radius
        self.periodic = (True,)
        self.length = TWO_PI

    def embed(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangents(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return self.radius * np.stack([-np.sin(th), np.cos(th)], axis=-1)[..., None]

    def second_derivatives(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return -self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)[..., None, None]

    def normal(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def normal_derivatives(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return np.stack([-np.sin(th), np.cos(th)], axis=-1)[..., None]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        th = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
        return th[..., None], r - self.radius

    def quadrature(self, n, rule="gauss", region="surface"):
        n = int(n if np.isscalar(n) else n[0])
        th, w = periodic_rule(TWO_PI, n)
        return SurfaceQuadrature(th[:, None], w * self.radius, (n,))

    def volume(self):
        return np.pi * self.radius ** 2

    def shell_area(self):
        return TWO_PI * self.radius


class Cylinder(ReferenceSurface):
    """Circular cylinder of radius R, periodic in the axial direction."""

    name = "cylinder"
    dim = 3

    def __init__(self, radius=1.0, length=1.0):
        if radius <= 0 or length <= 0:
            raise GeometryError("radius and length must be positive")
        self.radius = float(radius)
        self.axial_length = float(length)
        self.kappa = self.radius
        self.periodic = (True, True)

    def embed(self, u):
        u = np.asarray(u, dtype=float)
        th, z = u[..., 0], u[..., 1]
        return np.stack([self.radius * np.cos(th), self.radius * np.sin(th), z], axis=-1)

    def tangents(self, u):
        u = np.asarray(u, dtype=float)
        th = u[..., 0]
        t = np.zeros(u.shape[:-1] + (3, 2))
        t[..., 0, 0] = -self.radius * np.sin(th)
        t[..., 1, 0] = self.radius * np.cos(th)
        t[..., 2, 1] = 1.0
        return t

    def second_derivatives(self, u):
        u = np.asarray(u, dtype=float)
        th = u[..., 0]
        t = np.zeros(u.shape[:-1] + (3, 2, 2))
        t[..., 0, 0, 0] = -self.radius * np.cos(th)
        t[..., 1, 0, 0] = -self.radius * np.sin(th)
        return t

    def normal(self, u):
        u = np.asarray(u, dtype=float)
        th = u[..., 0]
        return np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=-1)

    def normal_derivatives(self, u):
        u = np.asarray(u, dtype=float)
        th = u[..., 0]
        t = np.zeros(u.shape[:-1] + (3, 2))
        t[..., 0, 0] = -np.sin(th)
        t[..., 1, 0] = np.cos(th)
        return t

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        th = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
        z = np.mod(x[..., 2], self.axial_length)
        return np.stack([th, z], axis=-1), r - self.radius

    def quadrature(self, n, rule="gauss", region="surface"):
        n1, n2 = _as_pair(n)
        a, wa = periodic_rule(TWO_PI, n1)
        b, wb = periodic_rule(self.axial_length, n2)
        u, w, shape = _tensor_grid([a, b], [wa, wb])
        return SurfaceQuadrature(u, w * self.radius, shape)

    def volume(self):
        return np.pi * self.radius ** 2 * self.axial_length

    def shell_area(self):
        return TWO_PI * self.radius * self.axial_length


class Sphere(ReferenceSurface):
    """Sphere of radius R, chart (polar angle, azimuth).

    The elastic part M is the polar cap ``theta <= cap_angle``; the shell is
    clamped along its rim.
    """

    name = "sphere"
    dim = 3

    def __init__(self, radius=1.0, cap_angle=np.pi / 3):
        if radius <= 0:
            raise GeometryError("radius must be positive")
        if not 0.0 < cap_angle <= np.pi:
            raise GeometryError("cap angle must lie in (0, pi]")
        self.radius = float(radius)
        self.cap_angle = float(cap_angle)
        self.kappa = self.radius
        self.periodic = (False, True)

    def embed(self, u):
        u = np.asarray(u, dtype=float)
        th, ph = u[..., 0], u[..., 1]
        st = np.sin(th)
        return self.radius * np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)

    def tangents(self, u):
        u = np.asarray(u, dtype=float)
        th, ph = u[..., 0], u[..., 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        t_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
        t_ph = np.stack([-st * sp, st * cp, np.zeros_like(th)], axis=-1)
        return self.radius * np.stack([t_th, t_ph], axis=-1)

    def second_derivatives(self, u):
        u = np.asarray(u, dtype=float)
        th, ph = u[..., 0], u[..., 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        z = np.zeros_like(th)
        tt = np.stack([-st * cp, -st * sp, -ct], axis=-1)
        tp = np.stack([-ct * sp, ct * cp, z], axis=-1)
        pp = np.stack([-st * cp, -st * sp, z], axis=-1)
        row0 = np.stack([tt, tp], axis=-1)
        row1 = np.stack([tp, pp], axis=-1)
        return self.radius * np.stack([row0, row1], axis=-2)

    def normal(self, u):
        return self.embed(u) / self.radius

    def normal_derivatives(self, u):
        return self.tangents(u) / self.radius

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        th = np.arccos(np.clip(x[..., 2] / safe, -1.0, 1.0))
        ph = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
        return np.stack([th, ph], axis=-1), r - self.radius

    def quadrature(self, n, rule="gauss", region="surface"):
        n1, n2 = _as_pair(n)
        top = self.cap_angle if region == "shell" else np.pi
        a, wa = line_rule(0.0, top, n1, rule)
        b, wb = periodic_rule(TWO_PI, n2)
        u, w, shape = _tensor_grid([a, b], [wa, wb])
        return SurfaceQuadrature(u, w * self.radius ** 2 * np.sin(u[:, 0]), shape)

    def in_shell(self, u):
        return np.asarray(u)[..., 0] <= self.cap_angle

    def volume(self):
        return 4.0 / 3.0 * np.pi * self.radius ** 3

    def shell_area(self):
        return TWO_PI * self.radius ** 2 * (1.0 - np.cos(self.cap_angle))


# ---------------------------------------------------------------------------
# differential geometry of a chart
# ---------------------------------------------------------------------------

def metric(surface, u):
    t = surface.tangents(u)
    return np.einsum("...ia,...ib->...ab", t, t)


def second_form(surface, u):
    return np.einsum("...iab,...i->...ab", surface.second_derivatives(u), surface.normal(u))


def shape_operator(surface, u):
    """S = g^{-1} h (mixed second fundamental form)."""
    return np.linalg.solve(metric(surface, u), second_form(surface, u))


def mean_curvature(surface, u):
    s = shape_operator(surface, u)
    return 0.5 * np.trace(s, axis1=-2, axis2=-1)


def gauss_curvature(surface, u):
    if surface.m == 1:
        return np.zeros(np.shape(u)[:-1])
    return np.linalg.det(shape_operator(surface, u))


def third_form(surface, u):
    """k = h g^{-1} h."""
    h = second_form(surface, u)
    return h @ np.linalg.solve(metric(surface, u), h)


def christoffel(surface, u):
    """Gamma^c_ab with layout [..., c, a, b]."""
    t = surface.tangents(u)
    low = np.einsum("...iab,...ic->...cab", surface.second_derivatives(u), t)
    ginv = np.linalg.inv(metric(surface, u))
    return np.einsum("...cd,...dab->...cab", ginv, low)


def principal_curvatures(surface, u):
    return np.sort(np.real(np.linalg.eigvals(shape_operator(surface, u))), axis=-1)


@dataclass
class SurfaceSamples:
    """Discretized middle surface with all curvature data at the nodes."""

    u: np.ndarray
    X: np.ndarray
    nu: np.ndarray
    g: np.ndarray
    h: np.ndarray
    k: np.ndarray
    H: np.ndarray
    G: np.ndarray
    weights: np.ndarray
    shell_mask: np.ndarray
    kappa: float
    shape: tuple

    @classmethod
    def from_surface(cls, surface, quad: SurfaceQuadrature):
        u = quad.u
        return cls(u=u, X=surface.embed(u), nu=surface.normal(u), g=metric(surface, u),
                   h=second_form(surface, u), k=third_form(surface, u),
                   H=mean_curvature(surface, u), G=gauss_curvature(surface, u),
                   weights=quad.w, shell_mask=surface.in_shell(u),
                   kappa=tubular_radius(surface), shape=quad.shape)


# ---------------------------------------------------------------------------
# scalar fields on the surface
# ---------------------------------------------------------------------------

class SurfaceField:
    """Scalar field on a chart with first and second parameter derivatives."""

    def evaluate(self, u):
        """Return (value, gradient [..., m], hessian [..., m, m])."""
        raise NotImplementedError

    def __call__(self, u):
        return self.evaluate(u)[0]

    def __add__(self, other):
        return CombinationField([self, other], [1.0, 1.0])

    def __mul__(self, c):
        return CombinationField([self], [float(c)])

    __rmul__ = __mul__


class ConstantField(SurfaceField):
    def __init__(self, value: float, m: int):
        self.value = float(value)
        self.m = m

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        lead = u.shape[:-1]
        return (np.full(lead, self.value), np.zeros(lead + (self.m,)),
                np.zeros(lead + (self.m, self.m)))


class CombinationField(SurfaceField):
    def __init__(self, fields, coeffs):
        self.fields = list(fields)
        self.coeffs = [float(c) for c in coeffs]

    def evaluate(self, u):
        out = None
        for f, c in zip(self.fields, self.coeffs):
            v = f.evaluate(u)
            if out is None:
                out = [c * x for x in v]
            else:
                out = [o + c * x for o, x in zip(out, v)]
        return tuple(out)


class ChartField(SurfaceField):
    """Wraps a callable ``u -> (value, grad, hess)``."""

    def __init__(self, func: Callable):
        self.func = func

    def evaluate(self, u):
        return self.func(np.asarray(u, dtype=float))


class FourierField(SurfaceField):
    """Real trigonometric sum on a periodic box.

    value = const + sum_j [a_j cos(theta_j) + b_j sin(theta_j)],
    theta_j = sum_a 2 pi k_ja u_a / L_a.
    """

    def __init__(self, lengths, kvecs, ccos, csin, const=0.0):
        self.lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
        self.kvecs = np.asarray(kvecs, dtype=float).reshape(-1, self.lengths.size)
        self.ccos = np.asarray(ccos, dtype=float).ravel()
        self.csin = np.asarray(csin, dtype=float).ravel()
        self.const = float(const)

    @property
    def m(self):
        return self.lengths.size

    @property
    def wavevectors(self):
        return TWO_PI * self.kvecs / self.lengths

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        kw = self.wavevectors
        th = u @ kw.T
        c, s = np.cos(th), np.sin(th)
        v = self.const + c @ self.ccos + s @ self.csin
        dcoef = -s * self.ccos + c * self.csin
        dv = dcoef @ kw
        hcoef = -(c * self.ccos + s * self.csin)
        ddv = np.einsum("...j,ja,jb->...ab", hcoef, kw, kw)
        return v, dv, ddv

    def max_wavenumber(self):
        return 0 if self.kvecs.size == 0 else int(np.max(np.abs(self.kvecs)))

    @classmethod
    def from_samples(cls, values, lengths, tol=0.0):
        """Spectral interpolant of samples on a uniform periodic grid.

        Modes with amplitude at most ``tol`` times the largest one are dropped.
        """
        values = np.asarray(values, dtype=float)
        lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
        shape = values.shape
        spectrum = np.fft.fftn(values) / values.size
        freqs = np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in shape], indexing="ij")
        kv = np.stack([f.ravel() for f in freqs], axis=-1)
        coef = spectrum.ravel()
        const = float(np.real(coef[np.all(kv == 0, axis=1)][0]))
        kvecs, ccos, csin = [], [], []
        for k, c in zip(kv, coef):
            # Nyquist modes are dropped; each +-k pair is represented once
            if any(2 * abs(k[a]) == shape[a] for a in range(len(shape))):
                continue
            nz = k[k != 0]
            if nz.size == 0 or nz[0] < 0:
                continue
            if tol > 0 and abs(c) <= tol * np.max(np.abs(coef)):
                continue
            kvecs.append(k)
            ccos.append(2.0 * np.real(c))
            csin.append(-2.0 * np.imag(c))
        return cls(lengths, np.array(kvecs).reshape(-1, len(shape)), ccos, csin, const)


class AmbientField(SurfaceField):
    """Restriction to the surface of an ambient function f(x).

    ``func(x)`` returns (value, gradient [..., d], hessian [..., d, d]).
    """

    def __init__(self, surface, func):
        self.surface = surface
        self.func = func

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        s = self.surface
        x = s.embed(u)
        t = s.tangents(u)
        tt = s.second_derivatives(u)
        v, gr, he = self.func(x)
        dv = np.einsum("...i,...ia->...a", gr, t)
        ddv = np.einsum("...ia,...ij,...jb->...ab", t, he, t) + np.einsum("...i,...iab->...ab", gr, tt)
        return v, dv, ddv


def polynomial_ambient(coeffs: dict, scale: float = 1.0):
    """Ambient polynomial sum c * prod (x_i/scale)^e_i, keys are exponent tuples."""
    items = [(np.asarray(k, dtype=int), float(c)) for k, c in coeffs.items()]
    d = items[0][0].size

    def func(x):
        y = np.asarray(x, dtype=float) / scale
        lead = y.shape[:-1]
        v = np.zeros(lead)
        gr = np.zeros(lead + (d,))
        he = np.zeros(lead + (d, d))
        for e, c in items:
            pw = [y[..., i] ** e[i] for i in range(d)]
            v += c * np.prod(pw, axis=0)
            for i in range(d):
                if e[i] == 0:
                    continue
                di = [pw[a] if a != i else e[i] * y[..., i] ** (e[i] - 1) for a in range(d)]
                gr[..., i] += c * np.prod(di, axis=0) / scale
                for j in range(d):
                    if j == i:
                        if e[i] < 2:
                            continue
                        dij = [pw[a] if a != i else e[i] * (e[i] - 1) * y[..., i] ** (e[i] - 2)
                               for a in range(d)]
                    else:
                        if e[j] == 0:
                            continue
                        dij = [di[a] if a != j else e[j] * y[..., j] ** (e[j] - 1) for a in range(d)]
                    he[..., i, j] += c * np.prod(dij, axis=0) / scale ** 2
        return v, gr, he

    return func


def sup_norm(eta, u) -> float:
    """Maximum of |eta| over the given chart nodes (field or samples)."""
    vals = eta(u) if isinstance(eta, SurfaceField) else np.asarray(eta)
    return float(np.max(np.abs(vals))) if np.size(vals) else 0.0


# ---------------------------------------------------------------------------
# tubular radius, gamma, tau
# ---------------------------------------------------------------------------

class GridSurface(ReferenceSurface):
    """User-supplied closed surface sampled on a tensor grid.

    Only ``tubular_radius`` style queries are supported; derivatives come from
    central differences on the grid.
    """

    catalog = False
    name = "grid"

    def __init__(self, points, periodic=(True, True), shifts=None):
        pts = np.asarray(points, dtype=float)
        self.points = pts
        # translation added when wrapping around an axis (periodic cylinders)
        self.shifts = [np.zeros(pts.shape[-1]) if sh is None else np.asarray(sh, dtype=float)
                       for sh in (shifts or [None] * (pts.ndim - 1))]
        self.dim = pts.shape[-1]
        self.periodic = tuple(periodic)
        if pts.ndim != self.dim:
            raise GeometryError("grid must have one axis per chart direction")
        flat = pts.reshape(-1, self.dim)
        uniq = np.unique(np.round(flat, 14), axis=0)
        if uniq.shape[0] < flat.shape[0]:
            raise GeometryError("degenerate grid: repeated nodes")
        self.kappa = estimate_tubular_radius(self)

    def _roll(self, p, k, a):
        out = np.roll(p, k, axis=a)
        idx = [slice(None)] * p.ndim
        idx[a] = -1 if k < 0 else 0
        out[tuple(idx)] += self.shifts[a] if k < 0 else -self.shifts[a]
        return out

    def grid_derivatives(self):
        p = self.points
        tans, secs = [], []
        for a in range(self.dim - 1):
            if not self.periodic[a]:
                raise GeometryError("grid surfaces must be closed (periodic axes)")
            fwd, bwd = self._roll(p, -1, a), self._roll(p, 1, a)
            tans.append(0.5 * (fwd - bwd))
            secs.append(fwd - 2.0 * p + bwd)
        return tans, secs


def estimate_tubular_radius(surface: GridSurface) -> float:
    """min(1/max|principal curvature|, distance to the inner medial axis).

    The medial distance along the inward ray from X_i is the smallest
    t = |d|^2 / (2 d.nu_i) over nodes X_j with d = X_i - X_j, d.nu_i > 0,
    i.e. the first point of the ray equidistant to another surface node.
    """
    p = surface.points
    tans, secs = surface.grid_derivatives()
    m = surface.dim - 1
    if m == 1:
        t = tans[0]
        nrm = np.linalg.norm(t, axis=-1)
        if np.any(nrm == 0):
            raise GeometryError("degenerate grid: zero tangent")
        nu = np.stack([t[..., 1], -t[..., 0]], axis=-1) / nrm[..., None]
    else:
        c = np.cross(tans[0], tans[1])
        nrm = np.linalg.norm(c, axis=-1)
        if np.any(nrm == 0):
            raise GeometryError("degenerate grid: zero tangent")
        nu = c / nrm[..., None]
    centroid = p.reshape(-1, surface.dim).mean(axis=0)
    if np.mean(np.sum((p - centroid) * nu, axis=-1)) < 0:
        nu = -nu
    # curvature from the grid second fundamental form
    g = np.stack([np.stack([np.sum(tans[a] * tans[b], -1) for b in range(m)], -1)
                  for a in range(m)], -2)
    mixed = []
    for a in range(m):
        row = []
        for b in range(m):
            if a == b:
                row.append(np.sum(secs[a] * nu, -1))
            else:
                r = surface._roll
                ab = 0.25 * (r(r(p, -1, a), -1, b) - r(r(p, -1, a), 1, b)
                             - r(r(p, 1, a), -1, b) + r(r(p, 1, a), 1, b))
                row.append(np.sum(ab * nu, -1))
        mixed.append(np.stack(row, -1))
    h = np.stack(mixed, -2)
    shape_op = np.linalg.solve(g, h)
    kmax = float(np.max(np.abs(np.linalg.eigvals(shape_op))))
    curv_bound = np.inf if kmax == 0 else 1.0 / kmax
    X = p.reshape(-1, surface.dim)
    N = nu.reshape(-1, surface.dim)
    best = np.inf
    for start in range(0, X.shape[0], 256):
        xi = X[start:start + 256]
        ni = N[start:start + 256]
        d = xi[:, None, :] - X[None, :, :]
        dn = np.einsum("ijk,ik->ij", d, ni)
        dd = np.sum(d * d, axis=-1)
        ok = dn > 1e-12 * np.sqrt(np.maximum(dd, 1e-300))
        tvals = np.where(ok, dd / np.where(ok, 2.0 * dn, 1.0), np.inf)
        best = min(best, float(np.min(tvals)))
    return float(min(curv_bound, best))


def tubular_radius(surface: ReferenceSurface) -> float:
    """Maximal radius kappa of the tubular map q + s nu(q)."""
    if getattr(surface, "catalog", False):
        return float(surface.kappa)
    return estimate_tubular_radius(surface)


def tau(eta, kappa: float) -> float:
    """Degeneracy monitor (1 - |eta|_inf/kappa)^-1, ``inf`` once |eta|_inf >= kappa."""
    s = float(np.max(np.abs(eta))) if np.ndim(eta) else abs(float(eta))
    if s >= kappa:
        return float("inf")
    return 1.0 / (1.0 - s / kappa)


def _eta_values(eta, u):
    if isinstance(eta, SurfaceField):
        return eta(u)
    return np.asarray(eta, dtype=float)


def gamma_factor(surface, eta, u=None, check=True):
    """gamma(eta) = 1 - 2 H eta + G eta^2 at chart nodes ``u``.

    ``eta`` is a SurfaceField or an array of samples at ``u``.
    """
    if u is None:
        raise ValueError("chart nodes are required")
    e = _eta_values(eta, u)
    kap = tubular_radius(surface)
    if check:
        s = float(np.max(np.abs(e))) if e.size else 0.0
        if s >= kap:
            raise DomainDegenerationError(
                f"|eta|_inf = {s:.6g} reaches kappa = {kap:.6g}", tau=float("inf"))
    H = mean_curvature(surface, u)
    G = gauss_curvature(surface, u)
    return 1.0 - 2.0 * H * e + G * e * e


def gamma_integral(surface, eta, quad: SurfaceQuadrature):
    return float(np.sum(quad.w * gamma_factor(surface, eta, quad.u)))


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

def boundary_map(surface, eta, u):
    """Phi_eta(q) = q + eta nu and its tangent map [..., d, m]."""
    if isinstance(eta, SurfaceField):
        v, dv, _ = eta.evaluate(u)
    else:
        v = np.asarray(eta, dtype=float)
        dv = None
    nu = surface.normal(u)
    pts = surface.embed(u) + v[..., None] * nu
    if dv is None:
        return pts, None
    tang = (surface.tangents(u) + nu[..., :, None] * dv[..., None, :]
            + v[..., None, None] * surface.normal_derivatives(u))
    return pts, tang


def fiber_jacobian(surface, u, s):
    """d Lambda(u, s) with columns (d_a X + s d_a nu, nu)."""
    s = np.asarray(s, dtype=float)
    cols = surface.tangents(u) + s[..., None, None] * surface.normal_derivatives(u)
    return np.concatenate([cols, surface.normal(u)[..., :, None]], axis=-1)


def fiber_point(surface, u, s):
    return surface.embed(u) + np.asarray(s, dtype=float)[..., None] * surface.normal(u)


class HanzawaMap:
    """Psi_eta(q + s nu) = q + (s + eta(q) beta(s/kappa)) nu on S_kappa, identity elsewhere."""

    def __init__(self, surface, eta, blend=None, kappa=None):
        self.surface = surface
        self.eta = eta
        self.blend = blend if blend is not None else QuinticBlend()
        self.kappa = float(kappa) if kappa is not None else tubular_radius(surface)

    def _eta(self, u):
        if isinstance(self.eta, SurfaceField):
            return self.eta.evaluate(u)
        raise TypeError("Hanzawa map needs a SurfaceField displacement")

    def check(self, u):
        """Raise if the sufficient injectivity bound fails at any node."""
        v = self._eta(u)[0]
        sup = float(np.max(np.abs(v))) if v.size else 0.0
        if sup >= self.kappa:
            raise DomainDegenerationError(
                f"|eta|_inf = {sup:.6g} reaches kappa = {self.kappa:.6g}", tau=float("inf"))
        margin = 1.0 - np.abs(v) * self.blend.max_slope / self.kappa
        bad = np.argmin(margin)
        if margin.flat[bad] <= 0.0:
            raise GeometryError(
                f"injectivity bound violated at node {int(bad)} "
                f"(u={np.asarray(u).reshape(-1, self.surface.m)[bad].tolist()}, "
                f"margin {float(margin.flat[bad]):.3g})")
        return float(np.min(margin))

    def evaluate(self, u, s):
        """Image, Jacobian [..., d, d] and determinant at fiber nodes (u, s)."""
        sf = self.surface
        s = np.asarray(s, dtype=float)
        v, dv, _ = self._eta(u)
        t = s / self.kappa
        inside = t >= -1.0
        b = np.where(inside, self.blend(t), 0.0)
        b1 = np.where(inside, self.blend(t, 1), 0.0)
        nu = sf.normal(u)
        shift = s + v * b
        img = sf.embed(u) + shift[..., None] * nu
        cols = (sf.tangents(u) + shift[..., None, None] * sf.normal_derivatives(u)
                + (b[..., None] * dv)[..., None, :] * nu[..., :, None])
        last = (1.0 + v * b1 / self.kappa)[..., None] * nu
        jpl = np.concatenate([cols, last[..., :, None]], axis=-1)
        jl = fiber_jacobian(sf, u, s)
        jac = jpl @ np.linalg.inv(jl)
        det = np.linalg.det(jpl) / np.linalg.det(jl)
        return img, jac, det

    def evaluate_cartesian(self, x):
        u, s = self.surface.project(x)
        return self.evaluate(u, s)

    def inverse(self, y, tol=1e-14, maxit=50):
        """Newton inversion of Psi at physical points y."""
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(maxit):
            img, jac, _ = self.evaluate_cartesian(x)
            r = img - y
            sf = self.surface
            if isinstance(sf, FlatChannel) and not sf.clamped:
                # images come back wrapped into the periodic cell
                r[..., :-1] -= sf.length * np.round(r[..., :-1] / sf.length)
            x = x - np.linalg.solve(jac, r[..., None])[..., 0]
            if np.max(np.abs(r)) < tol:
                break
        return x
