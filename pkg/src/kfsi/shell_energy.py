"""Koiter energy for transverse displacements, shell bases and coercivity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigurationError
from .geometry import (Circle, CombinationField, Cylinder, FlatChannel, FourierField,
                       SurfaceField, ChartField, Sphere, AmbientField, christoffel,
                       metric, second_form, third_form, polynomial_ambient)


@dataclass(frozen=True)
class ElasticParams:
    lam: float = 1.0
    mu: float = 1.0
    eps0: float = 0.1
    rho_s: float = 1.0
    rho_f: float = 1.0

    def __post_init__(self):
        for name in ("lam", "mu", "eps0", "rho_s", "rho_f"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def a_coef(self) -> float:
        """Coefficient 4 lam mu / (lam + 2 mu) of g (x) g in C."""
        return 4.0 * self.lam * self.mu / (self.lam + 2.0 * self.mu)

    @property
    def bending_coefficient(self) -> float:
        """eps0^3 8 mu (lam + mu) / (3 (lam + 2 mu)), the flat bilaplacian factor."""
        return self.eps0 ** 3 * 8.0 * self.mu * (self.lam + self.mu) / (3.0 * (self.lam + 2.0 * self.mu))

    @property
    def density_ratio(self) -> float:
        """rho_F / (eps0 rho_S); the model equations assume it equals one."""
        return self.rho_f / (self.eps0 * self.rho_s)


def _eval(eta, u):
    if isinstance(eta, SurfaceField):
        return eta.evaluate(u)
    raise TypeError("expected a SurfaceField")


def strain_sigma(surface, eta, u):
    """Membrane strain sigma(eta) = -h eta."""
    v = _eval(eta, u)[0]
    return -second_form(surface, u) * v[..., None, None]


def covariant_hessian(surface, eta, u):
    v, dv, ddv = _eval(eta, u)
    gam = christoffel(surface, u)
    return ddv - np.einsum("...cab,...c->...ab", gam, dv)


def strain_xi(surface, eta, u):
    """Bending strain xi(eta) = nabla^2 eta - k eta."""
    v = _eval(eta, u)[0]
    return covariant_hessian(surface, eta, u) - third_form(surface, u) * v[..., None, None]


def _contract_C(params, ginv, A, B):
    """<C, A (x) B> with all indices raised by g^{-1}."""
    Am = ginv @ A
    Bm = ginv @ B
    trA = np.trace(Am, axis1=-2, axis2=-1)
    trB = np.trace(Bm, axis1=-2, axis2=-1)
    return params.a_coef * trA * trB + 4.0 * params.mu * np.einsum("...ab,...ba->...", Am, Bm)


def koiter_density(surface, params, eta, zeta, u):
    ginv = np.linalg.inv(metric(surface, u))
    se, sz = strain_sigma(surface, eta, u), strain_sigma(surface, zeta, u)
    xe, xz = strain_xi(surface, eta, u), strain_xi(surface, zeta, u)
    return 0.5 * (params.eps0 * _contract_C(params, ginv, se, sz)
                  + params.eps0 ** 3 / 3.0 * _contract_C(params, ginv, xe, xz))


def koiter_form(surface, params, eta, zeta, quad):
    """K(eta, zeta) by quadrature over the shell region."""
    return float(np.sum(quad.w * koiter_density(surface, params, eta, zeta, quad.u)))


def koiter_energy(surface, params, eta, quad):
    return koiter_form(surface, params, eta, eta, quad)


def _strain_stack(surface, fields, u):
    sig = np.stack([strain_sigma(surface, f, u) for f in fields])
    xi = np.stack([strain_xi(surface, f, u) for f in fields])
    return sig, xi


def koiter_matrix(surface, params, fields, quad):
    """Matrix K(W_i, W_j) for a list of fields."""
    ginv = np.linalg.inv(metric(surface, quad.u))
    sig, xi = _strain_stack(surface, fields, quad.u)

    def block(A):
        Am = ginv[None] @ A
        tr = np.trace(Am, axis1=-2, axis2=-1)
        t1 = np.einsum("iq,jq,q->ij", tr, tr, quad.w)
        t2 = np.einsum("iqab,jqba,q->ij", Am, Am, quad.w)
        return params.a_coef * t1 + 4.0 * params.mu * t2

    K = 0.5 * (params.eps0 * block(sig) + params.eps0 ** 3 / 3.0 * block(xi))
    return 0.5 * (K + K.T)


def mass_matrix(fields, quad):
    vals = np.stack([f(quad.u) for f in fields])
    M = np.einsum("iq,jq,q->ij", vals, vals, quad.w)
    return 0.5 * (M + M.T)


def h2_gram(surface, fields, quad):
    """Gram matrix of int eta zeta + <grad, grad>_g + <hess, hess>_g dA."""
    u = quad.u
    ginv = np.linalg.inv(metric(surface, u))
    vals, grads, hess = [], [], []
    for f in fields:
        v, dv, _ = f.evaluate(u)
        vals.append(v)
        grads.append(dv)
        hess.append(covariant_hessian(surface, f, u))
    vals, grads, hess = np.stack(vals), np.stack(grads), np.stack(hess)
    G0 = np.einsum("iq,jq,q->ij", vals, vals, quad.w)
    G1 = np.einsum("iqa,qab,jqb,q->ij", grads, ginv, grads, quad.w)
    Hm = ginv[None] @ hess
    G2 = np.einsum("iqab,jqba,q->ij", Hm, Hm, quad.w)
    G = G0 + G1 + G2
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# clamped beam modes
# ---------------------------------------------------------------------------

def clamped_beam_roots(n: int):
    """First n positive roots of cos(b) cosh(b) = 1."""
    f = lambda b: np.cos(b) - 1.0 / np.cosh(b)
    return np.array([optimize.brentq(f, (k + 0.5) * np.pi - 0.5, (k + 0.5) * np.pi + 0.5)
                     for k in range(1, n + 1)])


class BeamMode:
    """Clamped-clamped beam eigenfunction on [0, L] with derivatives."""

    def __init__(self, root: float, length: float):
        self.b = root / length
        self.length = length
        bl = root
        S, s, c = np.sinh(bl), np.sin(bl), np.cos(bl)
        denom = S - s
        self.sig = (np.cosh(bl) - c) / denom
        self.one_minus_sig = (-np.exp(-bl) - s + c) / denom

    def __call__(self, x, order=0):
        b, sg, oms = self.b, self.sig, self.one_minus_sig
        ep = np.exp(b * (x - self.length))  # scaled to avoid overflow
        em = np.exp(-b * x)
        big = np.exp(b * self.length)
        # cosh - sig sinh = ((1 - sig) e^{bx} + (1 + sig) e^{-bx}) / 2
        hyp = [0.5 * (oms * big * ep + (1.0 + sg) * em),
               0.5 * b * (oms * big * ep - (1.0 + sg) * em)]
        hyp.append(b * b * hyp[0])
        trig = [-np.cos(b * x) + sg * np.sin(b * x),
                b * (np.sin(b * x) + sg * np.cos(b * x)),
                b * b * (np.cos(b * x) - sg * np.sin(b * x))]
        return hyp[order] + trig[order]


# ---------------------------------------------------------------------------
# shell bases
# ---------------------------------------------------------------------------

@dataclass
class ShellBasis:
    """Modes W_k on M with their mass, Koiter stiffness and H^2 Gram."""

    surface: object
    modes: list
    quad: object
    mass: np.ndarray
    stiffness: np.ndarray
    gram_h2: np.ndarray
    params: ElasticParams
    labels: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.modes)

    def values(self, u=None):
        u = self.quad.u if u is None else u
        return np.stack([f(u) for f in self.modes])

    def field(self, coeffs) -> SurfaceField:
        return CombinationField(self.modes, coeffs)


def fourier_modes(lengths, count, include_constant=False, normalize=True):
    """Real Fourier modes ordered by |k|, cos before sin."""
    lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
    m = lengths.size
    area = float(np.prod(lengths))
    kmax = int(np.ceil(np.sqrt(count))) + 2
    rng = range(-kmax, kmax + 1)
    vecs = []
    if m == 1:
        vecs = [(k,) for k in range(1, count + 2)]
    else:
        for a in rng:
            for b in rng:
                if (a, b) == (0, 0):
                    continue
                if a > 0 or (a == 0 and b > 0):
                    vecs.append((a, b))
        vecs.sort(key=lambda k: (sum((ki / li) ** 2 for ki, li in zip(k, lengths)), k))
    modes, labels = [], []
    if include_constant:
        modes.append(FourierField(lengths, np.zeros((0, m)), [], [], 1.0 / np.sqrt(area) if normalize else 1.0))
        labels.append("const")
    scale = np.sqrt(2.0 / area) if normalize else 1.0
    for k in vecs:
        for kind in ("cos", "sin"):
            if len(modes) >= count:
                break
            cc, cs = (scale, 0.0) if kind == "cos" else (0.0, scale)
            modes.append(FourierField(lengths, [k], [cc], [cs]))
            labels.append(f"{kind}{list(k)}")
        if len(modes) >= count:
            break
    return modes, labels


def _beam_modes(length, count, m):
    roots = clamped_beam_roots(count + 2)
    beams = [BeamMode(r, length) for r in roots]
    if m == 1:
        out = []
        for bm in beams[:count]:
            def f(u, bm=bm):
                x = u[..., 0]
                return bm(x), bm(x, 1)[..., None], bm(x, 2)[..., None, None]
            out.append(ChartField(f))
        return out, [f"beam{i}" for i in range(count)]
    pairs = sorted(((i, j) for i in range(len(beams)) for j in range(len(beams))),
                   key=lambda p: (roots[p[0]] ** 4 + roots[p[1]] ** 4, p))
    out, labels = [], []
    for i, j in pairs[:count]:
        bi, bj = beams[i], beams[j]

        def f(u, bi=bi, bj=bj):
            x, y = u[..., 0], u[..., 1]
            X0, X1, X2 = bi(x), bi(x, 1), bi(x, 2)
            Y0, Y1, Y2 = bj(y), bj(y, 1), bj(y, 2)
            v = X0 * Y0
            dv = np.stack([X1 * Y0, X0 * Y1], axis=-1)
            ddv = np.stack([np.stack([X2 * Y0, X1 * Y1], -1), np.stack([X1 * Y1, X0 * Y2], -1)], -2)
            return v, dv, ddv
        out.append(ChartField(f))
        labels.append(f"beam{i}x{j}")
    return out, labels


def _cap_modes(surface: Sphere, count):
    """(z - z_c)^2 x^a y^b on the polar cap; clamped along the rim."""
    R = surface.radius
    zc = np.cos(surface.cap_angle)
    out, labels = [], []
    deg = 0
    while len(out) < count:
        for a in range(deg, -1, -1):
            b = deg - a
            if len(out) >= count:
                break
            # (z/R - zc)^2 = z^2/R^2 - 2 zc z/R + zc^2
            coeffs = {(a, b, 2): 1.0, (a, b, 1): -2.0 * zc, (a, b, 0): zc * zc}
            out.append(AmbientField(surface, polynomial_ambient(coeffs, scale=R)))
            labels.append(f"cap{a},{b}")
        deg += 1
    return out, labels


def _orthonormalize(fields, quad):
    M = mass_matrix(fields, quad)
    L = linalg.cholesky(M, lower=True)
    T = linalg.solve_triangular(L, np.eye(len(fields)), lower=True)
    return [CombinationField(fields, T[i, : i + 1].tolist() + [0.0] * (len(fields) - i - 1))
            for i in range(len(fields))]


def default_shell_quadrature(surface, n=None):
    if isinstance(surface, FlatChannel):
        return surface.quadrature(n or 64)
    if isinstance(surface, Circle):
        return surface.quadrature(n or 64)
    if isinstance(surface, Cylinder):
        return surface.quadrature(n or (48, 32))
    if isinstance(surface, Sphere):
        return surface.quadrature(n or (32, 48), region="shell")
    raise ConfigurationError(f"no shell quadrature for {type(surface).__name__}")


def build_shell_basis(surface, params: ElasticParams, n_s: int, quad=None) -> ShellBasis:
    """Catalog modal basis on the shell region of ``surface``.

    flat periodic: zero-mean Fourier modes; flat clamped: clamped beam products;
    circle and cylinder: Fourier modes including the constant; sphere: clamped
    polynomial modes on the polar cap, orthonormalized.
    """
    if n_s < 1:
        raise ConfigurationError("n_s must be positive")
    quad = quad or default_shell_quadrature(surface)
    if isinstance(surface, FlatChannel):
        if surface.clamped:
            modes, labels = _beam_modes(surface.length, n_s, surface.m)
            modes = _orthonormalize(modes, quad)
        else:
            modes, labels = fourier_modes([surface.length] * surface.m, n_s)
    elif isinstance(surface, Circle):
        modes, labels = fourier_modes([2.0 * np.pi], n_s, include_constant=True)
        modes = [m * (1.0 / np.sqrt(surface.radius)) for m in modes]
    elif isinstance(surface, Cylinder):
        modes, labels = fourier_modes([2.0 * np.pi, surface.axial_length], n_s, include_constant=True)
        modes = [m * (1.0 / np.sqrt(surface.radius)) for m in modes]
    elif isinstance(surface, Sphere):
        modes, labels = _cap_modes(surface, n_s)
        modes = _orthonormalize(modes, quad)
    else:
        raise ConfigurationError(f"no catalog basis for {type(surface).__name__}")
    mass = mass_matrix(modes, quad)
    stiff = koiter_matrix(surface, params, modes, quad)
    gram = h2_gram(surface, modes, quad)
    return ShellBasis(surface, modes, quad, mass, stiff, gram, params, labels)


def coercivity_estimate(basis: ShellBasis) -> float:
    """min K(eta)/|eta|^2_{H^2} over the span of the basis."""
    w = linalg.eigh(basis.stiffness, basis.gram_h2, eigvals_only=True)
    c0 = float(w[0])
    if not c0 > 0.0:
        raise ConfigurationError(f"non-positive coercivity estimate {c0:.3e}; check clamping/quadrature")
    return c0


def l2_gradient_apply(basis: ShellBasis, coeffs):
    """Riesz representative r of 2K(eta, .) in L^2(dA), returned as coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    try:
        cf = linalg.cho_factor(basis.mass)
    except linalg.LinAlgError as exc:
        raise ConfigurationError("singular shell mass matrix") from exc
    return linalg.cho_solve(cf, 2.0 * basis.stiffness @ coeffs)


def export_matrices(basis: ShellBasis, stream):
    """Write mass and stiffness as 'name i j value' coordinate lines."""
    for name, mat in (("mass", basis.mass), ("stiffness", basis.stiffness)):
        for i, j in zip(*np.nonzero(np.abs(mat) > 0)):
            stream.write(f"{name} {i} {j} {mat[i, j]:.17g}\n")
