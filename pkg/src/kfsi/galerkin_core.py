"""Coupled Galerkin system on the flat channel: basis, assembly, time stepping, energy ledger.

Fluid fields are fixed divergence-free fields V_j on the reference channel
[0, L)^m x (0, H), pushed forward along the moving domain by the Piola-type
map dPsi V / det dPsi.  The first n_s unknowns pair a shell mode W_k with a
lifting field whose trace is W_k nu, so tr u = d_t eta nu holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Legendre, Polynomial
from scipy import linalg

from .errors import ConfigurationError, DomainDegenerationError, SolverError
from .geometry import (ConstantField, FlatChannel, FourierField, HanzawaMap, QuinticBlend, SurfaceField,
                       tau as tau_monitor)
from .shell_energy import ShellBasis, fourier_modes, h2_gram, koiter_form
from .stress_law import StressLaw
from .transform import VolumeQuadrature


# ---------------------------------------------------------------------------
# reference fields
# ---------------------------------------------------------------------------

def _profile(kind, p, H):
    """Vertical profiles as polynomials in y on [0, H]."""
    y = Polynomial([0.0, 1.0])
    leg = Legendre.basis(p).convert(kind=Polynomial)(Polynomial([-1.0, 2.0 / H]))
    if kind == "lift":
        return 3.0 * (y / H) ** 2 - 2.0 * (y / H) ** 3
    if kind == "bubble":
        return y ** 2 * (H - y) ** 2 * leg
    if kind == "shear":
        return y * (H - y) * leg
    raise ValueError(kind)


def _single_wave(mode):
    if not isinstance(mode, FourierField) or mode.kvecs.shape[0] != 1 or mode.const != 0.0:
        raise ConfigurationError("lifting needs single-wave zero-mean Fourier modes")
    kw = mode.wavevectors[0]
    return float(kw @ kw)


class ReferenceField:
    """Divergence-free field on the reference channel; ``evaluate(x)`` -> (V, dV)."""

    label = ""

    def evaluate(self, x):
        raise NotImplementedError


class PotentialField(ReferenceField):
    """V' = chi'(y) grad' W / k^2, V_d = chi(y) W, so div V = 0 for Delta' W = -k^2 W."""

    def __init__(self, mode, prof, label):
        self.mode, self.prof, self.label = mode, prof, label
        self.k2 = _single_wave(mode)
        self.d1, self.d2 = prof.deriv(1), prof.deriv(2)

    def evaluate(self, x):
        xp, y = x[..., :-1], x[..., -1]
        W, dW, hW = self.mode.evaluate(xp)
        c0, c1, c2 = self.prof(y), self.d1(y), self.d2(y)
        m = xp.shape[-1]
        V = np.concatenate([c1[..., None] * dW / self.k2, (c0 * W)[..., None]], axis=-1)
        dV = np.zeros(x.shape + (m + 1,))
        dV[..., :m, :m] = c1[..., None, None] * hW / self.k2
        dV[..., :m, m] = c2[..., None] * dW / self.k2
        dV[..., m, :m] = c0[..., None] * dW
        dV[..., m, m] = c1 * W
        return V, dV


class ShearField(ReferenceField):
    """(a(y) e_c, 0) with a vanishing at both walls."""

    def __init__(self, prof, direction, m, label):
        self.prof, self.c, self.m, self.label = prof, direction, m, label
        self.d1 = prof.deriv(1)

    def evaluate(self, x):
        y = x[..., -1]
        V = np.zeros(x.shape)
        dV = np.zeros(x.shape + (self.m + 1,))
        V[..., self.c] = self.prof(y)
        dV[..., self.c, self.m] = self.d1(y)
        return V, dV


class ToroidalField(ReferenceField):
    """a(y) (d_2 e, -d_1 e, 0) in three dimensions."""

    def __init__(self, mode, prof, label):
        self.mode, self.prof, self.label = mode, prof, label
        self.d1 = prof.deriv(1)

    def evaluate(self, x):
        xp, y = x[..., :-1], x[..., -1]
        _, de, he = self.mode.evaluate(xp)
        a, a1 = self.prof(y), self.d1(y)
        V = np.zeros(x.shape)
        dV = np.zeros(x.shape + (3,))
        V[..., 0], V[..., 1] = a * de[..., 1], -a * de[..., 0]
        dV[..., 0, :2] = a[..., None] * he[..., 1, :]
        dV[..., 1, :2] = -a[..., None] * he[..., 0, :]
        dV[..., 0, 2], dV[..., 1, 2] = a1 * de[..., 1], -a1 * de[..., 0]
        return V, dV


def interior_fields(surface: FlatChannel, count: int):
    """First ``count`` interior fields ordered by (wavenumber + degree, family, label)."""
    if count <= 0:
        return []
    H, m = surface.height, surface.m
    L = [surface.length] * m
    waves, wl = fourier_modes(L, 4 * count + 8)
    cands = []
    for p in range(count + 1):
        for c in range(m):
            cands.append(((p, 0, c), lambda p=p, c=c: ShearField(_profile("shear", p, H), c, m,
                                                                 f"shear{c}p{p}")))
    for i, (w, lab) in enumerate(zip(waves, wl)):
        level = int(np.ceil(np.sqrt(_single_wave(w)) * surface.length / (2 * np.pi) - 1e-9))
        for p in range(count + 1):
            cands.append(((level + p, 1, i, p), lambda w=w, p=p, lab=lab: PotentialField(
                w, _profile("bubble", p, H), f"bubble{lab}p{p}")))
            if m == 2:
                cands.append(((level + p, 2, i, p), lambda w=w, p=p, lab=lab: ToroidalField(
                    w, _profile("shear", p, H), f"toroidal{lab}p{p}")))
    cands.sort(key=lambda kv: kv[0])
    return [make() for _, make in cands[:count]]


# ---------------------------------------------------------------------------
# domain motion
# ---------------------------------------------------------------------------

@dataclass
class MotionState:
    d0: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    t0: np.ndarray | None = None
    t1: np.ndarray | None = None


class DomainMotion:
    """Boundary datum R_eps delta(t) = base + sum_k c_k(t) W_k + shift(t), linear in time.

    ``base`` is the mollified initial displacement; ``coeffs`` are shell
    coefficients at ``times``.  Modes with wavenumber above ceil(1/eps) are
    truncated and the minimal upward shift restores R_eps delta >= delta.
    """

    def __init__(self, shell: ShellBasis, base: SurfaceField, times, coeffs, eps=None,
                 blend=None):
        self.shell = shell
        self.surface = shell.surface
        self.base = base
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(self.times.size, shell.size)
        self.blend = blend or QuinticBlend()
        self.kappa = self.surface.kappa
        self.mask = np.ones(shell.size, dtype=bool)
        if eps is not None:
            K = int(np.ceil(1.0 / eps))
            self.mask = np.array([m.max_wavenumber() <= K if isinstance(m, FourierField) else True
                                  for m in shell.modes])
        u = shell.quad.u
        self._nodes = u
        self._Wq = shell.values(u)
        bq = base(u)
        if self.mask.all():
            self.shift = np.zeros(self.times.size)
        else:
            full = bq[None] + self.coeffs @ self._Wq
            trunc = bq[None] + (self.coeffs * self.mask) @ self._Wq
            self.shift = np.maximum(0.0, np.max(full - trunc, axis=1))
        self._cache_key = None

    @classmethod
    def static(cls, shell, base, eps=None, blend=None):
        return cls(shell, base, [0.0], np.zeros((1, shell.size)), eps, blend)

    def _segment(self, t):
        ts = self.times
        if ts.size == 1 or t <= ts[0]:
            return 0, 0.0, 0.0
        if t >= ts[-1]:
            return ts.size - 2, 1.0, 0.0
        i = int(np.searchsorted(ts, t, side="right") - 1)
        h = ts[i + 1] - ts[i]
        return i, (t - ts[i]) / h, 1.0 / h

    def coefficients(self, t):
        """(masked coefficients, their rate, shift, shift rate) at time t."""
        i, th, rh = self._segment(t)
        if self.times.size == 1:
            c = self.coeffs[0] * self.mask
            return c, np.zeros_like(c), self.shift[0], 0.0
        c0, c1 = self.coeffs[i] * self.mask, self.coeffs[i + 1] * self.mask
        s0, s1 = self.shift[i], self.shift[i + 1]
        return ((1 - th) * c0 + th * c1, rh * (c1 - c0), (1 - th) * s0 + th * s1, rh * (s1 - s0))

    def field(self, t) -> SurfaceField:
        c, _, s, _ = self.coefficients(t)
        out = self.base + self.shell.field(c)
        if s:
            out = out + ConstantField(s, self.surface.m)
        return out

    def _mode_cache(self, xp):
        key = (id(xp), xp.shape)
        if self._cache_key != key:
            ev = [m.evaluate(xp) for m in self.shell.modes]
            self._cache = (self.base.evaluate(xp), np.stack([e[0] for e in ev]),
                           np.stack([e[1] for e in ev]), np.stack([e[2] for e in ev]))
            self._cache_key = key
            self._cache_xp = xp
        return self._cache

    def state(self, t, xp, rate=False) -> MotionState:
        (b0, b1, b2), W0, W1, W2 = self._mode_cache(xp)
        c, ct, s, st = self.coefficients(t)
        d0 = b0 + np.tensordot(c, W0, 1) + s
        d1 = b1 + np.tensordot(c, W1, 1)
        d2 = b2 + np.tensordot(c, W2, 1)
        if not rate:
            return MotionState(d0, d1, d2)
        return MotionState(d0, d1, d2, np.tensordot(ct, W0, 1) + st, np.tensordot(ct, W1, 1))

    def sup(self, t):
        c, _, s, _ = self.coefficients(t)
        return float(np.max(np.abs(self.base(self._nodes) + c @ self._Wq + s)))

    def check(self, t):
        """Raise DomainDegenerationError / GeometryError when R_eps delta(t) is inadmissible."""
        hz = HanzawaMap(self.surface, self.field(t), self.blend, self.kappa)
        return hz.check(self._nodes)


# ---------------------------------------------------------------------------
# coupled basis and pushforward frames
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    """Pushed fields at the volume nodes for one time instant."""

    F: np.ndarray           # (n, N, d) values
    G: np.ndarray           # (n, N, d, d) physical gradients, G[..., i, j] = d_j W_i
    J: np.ndarray           # (N,) det dPsi
    y: np.ndarray           # (N, d) physical points
    Ft: np.ndarray | None = None
    Jt: np.ndarray | None = None
    v: np.ndarray | None = None   # node velocity (N, d)

    _sym: np.ndarray | None = None

    @property
    def sym(self):
        if self._sym is None:
            self._sym = 0.5 * (self.G + np.swapaxes(self.G, -1, -2))
        return self._sym


def _gram(X, Y, w):
    """sum_N w_N <X_j(N), Y_k(N)> for field stacks [n, N, ...]."""
    n, N = X.shape[:2]
    Xw = (X.reshape(n, N, -1) * w[None, :, None]).reshape(n, -1)
    return Xw @ Y.reshape(Y.shape[0], -1).T


class CoupledBasis:
    """Shell modes paired with lifting fields plus interior divergence-free fields."""

    def __init__(self, shell: ShellBasis, n_f: int, n_tan=32, n_s=16, blend=None,
                 shell_only=False):
        sf = shell.surface
        if not isinstance(sf, FlatChannel) or sf.clamped:
            raise ConfigurationError("the coupled solver supports the periodic flat channel")
        self.shell = shell
        self.surface = sf
        self.blend = blend or QuinticBlend()
        self.shell_only = bool(shell_only)
        self.n_s = shell.size
        self.n_f = 0 if shell_only else int(n_f)
        self.d = sf.dim
        H = sf.height
        if shell_only:
            self.fields = []
        else:
            lift = _profile("lift", 0, H)
            self.fields = [PotentialField(w, lift, f"lift{lab}") for w, lab in zip(shell.modes, shell.labels)]
            self.fields += interior_fields(sf, self.n_f)
        self.labels = list(shell.labels) + [f.label for f in self.fields[self.n_s:]]
        self.vq = VolumeQuadrature.build(sf, n_tan, n_s, "gauss", self.blend)
        self.x = self.vq.x
        self.w = self.vq.w
        self.xp = np.ascontiguousarray(self.x[:, :-1])
        if self.fields:
            ev = [f.evaluate(self.x) for f in self.fields]
            self.V = np.stack([e[0] for e in ev])
            self.dV = np.stack([e[1] for e in ev])
            # interior fields are rescaled to unit reference L^2 norm
            for j in range(self.n_s, len(self.fields)):
                nrm = np.sqrt(np.sum(self.w * np.sum(self.V[j] ** 2, axis=-1)))
                self.V[j] /= nrm
                self.dV[j] /= nrm
                self.fields[j].scale = 1.0 / nrm
        else:
            self.V = np.zeros((0, self.x.shape[0], self.d))
            self.dV = np.zeros((0, self.x.shape[0], self.d, self.d))
        self.mass_shell = shell.mass
        self.stiff = shell.stiffness
        self.q = shell.quad
        self.Wq = shell.values()

    @property
    def size(self):
        return self.n_s + (0 if self.shell_only else self.n_f)

    def ref_values(self, x):
        """Reference fields (with interior scaling) at arbitrary reference points."""
        vals, grads = [], []
        for f in self.fields:
            V, dV = f.evaluate(x)
            s = getattr(f, "scale", 1.0)
            vals.append(V * s)
            grads.append(dV * s)
        return np.stack(vals), np.stack(grads)

    def _profile(self, y):
        H = self.surface.height
        t = (y - H) / H
        return (self.blend(t), self.blend(t, 1) / H, self.blend(t, 2) / H ** 2)

    def push(self, V, dV, x, st: MotionState) -> Frame:
        """Pushforward of reference fields by Psi for the motion state at x' = x[..., :-1]."""
        m = self.d - 1
        y = x[..., -1]
        b, b1, b2 = self._profile(y)
        d0, d1, d2 = st.d0, st.d1, st.d2
        J = 1.0 + d0 * b1
        if np.any(J <= 0):
            raise DomainDegenerationError("det dPsi <= 0 on the volume nodes")
        gJ = np.concatenate([d1 * b1[..., None], (d0 * b2)[..., None]], axis=-1)
        Vp, Vd = V[..., :m], V[..., m]
        P = np.einsum("...i,n...i->n...", d1, Vp)
        dP = np.einsum("...i,n...ij->n...j", d1, dV[..., :m, :])
        dP[..., :m] += np.einsum("...ij,n...i->n...j", d2, Vp)
        F = np.empty_like(V)
        F[..., :m] = Vp / J[..., None]
        F[..., m] = Vd + b * P / J
        dF = np.empty_like(dV)
        dF[..., :m, :] = dV[..., :m, :] / J[..., None, None] - Vp[..., :, None] * gJ[..., None, :] / (J ** 2)[..., None, None]
        gb = np.zeros(gJ.shape)
        gb[..., m] = b1
        dF[..., m, :] = (dV[..., m, :] + gb * (P / J)[..., None] + b[..., None] * dP / J[..., None]
                         - (b * P)[..., None] * gJ / (J ** 2)[..., None])
        G = dF.copy()
        G[..., :m] = dF[..., :m] - dF[..., m:m + 1] * (b[..., None] * d1 / J[..., None])[..., None, :]
        G[..., m] = dF[..., m] / J[..., None]
        ypos = x.copy()
        ypos[..., m] = y + d0 * b
        fr = Frame(F, G, J, ypos)
        if st.t0 is not None:
            Jt = st.t0 * b1
            Pt = np.einsum("...i,n...i->n...", st.t1, Vp)
            Ft = np.empty_like(V)
            Ft[..., :m] = -Vp * (Jt / J ** 2)[..., None]
            Ft[..., m] = b * Pt / J - b * P * Jt / J ** 2
            vel = np.zeros(x.shape)
            vel[..., m] = st.t0 * b
            fr.Ft, fr.Jt, fr.v = Ft, Jt, vel
        return fr

    def frame(self, motion: DomainMotion, t, rate=False) -> Frame:
        st = motion.state(t, self.xp, rate)
        return self.push(self.V, self.dV, self.x, st)

    def frame_at(self, motion: DomainMotion, t, x, rate=False) -> Frame:
        V, dV = self.ref_values(x)
        st = motion.state(t, np.ascontiguousarray(x[..., :-1]), rate)
        return self.push(V, dV, x, st)

    def trace_residual(self, motion: DomainMotion, t, n=16):
        """max |tr W_j - W_j nu| over boundary points, for the lifting fields."""
        if not self.fields:
            return 0.0
        m = self.d - 1
        u = self.surface.quadrature(n).u
        x = np.concatenate([u, np.full((u.shape[0], 1), self.surface.height)], axis=-1)
        fr = self.frame_at(motion, t, x)
        W = self.shell.values(u)
        target = np.zeros(fr.F.shape)
        target[: self.n_s, :, m] = W
        return float(np.max(np.abs(fr.F - target)))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _pad(basis: CoupledBasis, block):
    n = basis.size
    out = np.zeros((n, n))
    out[: basis.n_s, : basis.n_s] = block
    return out


def assemble_fluid_mass(basis, fr: Frame):
    if basis.shell_only or fr.F.shape[0] == 0:
        return np.zeros((basis.size, basis.size))
    return _gram(fr.F, fr.F, basis.w * fr.J)


def assemble_mass(basis: CoupledBasis, fr: Frame):
    """A_jk = int W_k . W_j dx + int_M W_k W_j dA."""
    return assemble_fluid_mass(basis, fr) + _pad(basis, basis.mass_shell)


def assemble_rate(basis: CoupledBasis, fr: Frame):
    """Q with Q + Q^T = dA/dt at quadrature level.

    Q = int d_t W_k . W_j dx + 1/2 int_M W_k W_j d_t delta dA, written as the
    reference-frame part plus the skew part of the node-velocity convection.
    """
    n = basis.size
    if basis.shell_only or fr.F.shape[0] == 0:
        return np.zeros((n, n))
    w = basis.w
    Qr = _gram(fr.F, fr.Ft, w * fr.J) + 0.5 * _gram(fr.F, fr.F, w * fr.Jt)
    Gv = np.einsum("kNil,Nl->kNi", fr.G, fr.v, optimize=True)
    conv = _gram(fr.F, Gv, w * fr.J)
    return Qr - 0.5 * (conv - conv.T)


def assemble_transport(basis: CoupledBasis, fr: Frame, gamma=None):
    """E_jkl = int (W_l (x) W_k) : grad W_j dx - 1/2 int_M W_l W_k W_j gamma dA.

    Convention (a (x) b) : grad phi = a_i b_m d_i phi_m, so sum_jkl E a_j a_k a_l
    vanishes for divergence-free u by integration by parts.
    """
    n = basis.size
    if basis.shell_only:
        return np.zeros((n, n, n))
    wJ = basis.w * fr.J
    E = np.einsum("lNi,kNm,jNmi,N->jkl", fr.F, fr.F, fr.G, wJ, optimize=True)
    q = basis.q
    g = np.ones(q.w.shape) if gamma is None else gamma
    W = basis.Wq
    Eb = np.einsum("lN,kN,jN,N->jkl", W, W, W, q.w * g)
    E[: basis.n_s, : basis.n_s, : basis.n_s] -= 0.5 * Eb
    return E


def oseen_matrix(basis, fr: Frame, ubar):
    """Skew part of O_jl = int ubar_i W_l,m d_i W_j,m dx at the given convecting field."""
    Gu = np.einsum("jNmi,Ni->jNm", fr.G, ubar, optimize=True)
    X = _gram(Gu, fr.F, basis.w * fr.J)
    return 0.5 * (X - X.T)


def viscous_matrix(basis, fr: Frame, nu):
    D = fr.sym
    return _gram(D, D, basis.w * fr.J * nu)


def forcing_vector(basis, fr: Frame, t, f=None, g=None):
    """int f . W_j dx + int_M g W_j dA and the squared data norms."""
    n = basis.size
    out = np.zeros(n)
    fn = gn = 0.0
    if f is not None and fr is not None:
        fv = f(t, fr.y)
        out += fr.F.reshape(n, -1) @ (fv * (basis.w * fr.J)[:, None]).ravel()
        fn = float(np.sum(basis.w * fr.J * np.sum(fv * fv, axis=-1)))
    if g is not None:
        gv = g(t, basis.q.u)
        out[: basis.n_s] += basis.Wq @ (basis.q.w * gv)
        gn = float(np.sum(basis.q.w * gv * gv))
    return out, fn + gn


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------

LEDGER_HEADER = ("t", "E_kin_fluid", "E_kin_shell", "E_koiter", "dissipation", "power",
                 "residual", "eta_inf", "tau")


@dataclass
class EnergyLedger:
    t: list = field(default_factory=list)
    e_fluid: list = field(default_factory=list)
    e_shell: list = field(default_factory=list)
    e_koiter: list = field(default_factory=list)
    viscous: list = field(default_factory=list)      # cumulative int int S(Du):Du
    parab: list = field(default_factory=list)        # cumulative 2 eps int K(d_t eta)
    power: list = field(default_factory=list)        # cumulative external work
    eta_inf: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    h2: list = field(default_factory=list)           # |eta|_{H^2}^2
    data: list = field(default_factory=list)         # cumulative int |f|^2 + |g|^2
    eps_term: list = field(default_factory=list)     # cumulative eps~ |Du|^p0 + eps |d_t eta|_{H^2}^2
    rate_min: float = 0.0                            # smallest per-step dissipation

    def append(self, **kw):
        for k, v in kw.items():
            getattr(self, k).append(float(v))

    def energy(self):
        return np.array(self.e_fluid) + np.array(self.e_shell) + np.array(self.e_koiter)

    def dissipation(self):
        return np.array(self.viscous) + np.array(self.parab)

    def residuals(self):
        E = self.energy()
        if E.size == 0:
            return E
        scale = float(np.max(np.abs(E)))
        r = np.abs(E - E[0] + self.dissipation() - np.array(self.power))
        return r / scale if scale > 0 else r

    def rows(self):
        res = self.residuals()
        D = self.dissipation()
        for i in range(len(self.t)):
            yield (self.t[i], self.e_fluid[i], self.e_shell[i], self.e_koiter[i], D[i],
                   self.power[i], res[i], self.eta_inf[i], self.tau[i])

    def extend(self, other: "EnergyLedger", offsets=True):
        """Append ``other`` (a later window), shifting its cumulative columns."""
        if not self.t:
            for k in self.__dataclass_fields__:
                if k != "rate_min":
                    setattr(self, k, list(getattr(other, k)))
            self.rate_min = other.rate_min
            return self
        base = {k: getattr(self, k)[-1] for k in ("viscous", "parab", "power", "data", "eps_term")}
        for i in range(1, len(other.t)):
            for k in self.__dataclass_fields__:
                if k == "rate_min":
                    continue
                v = getattr(other, k)[i]
                getattr(self, k).append(v + base[k] if (offsets and k in base) else v)
        self.rate_min = min(self.rate_min, other.rate_min)
        return self


def energy_identity_residual(ledger: EnergyLedger, t1=None, t2=None):
    """max |E(t) - E(t1) + Diss(t1,t) - Pow(t1,t)| / max E over [t1, t2]."""
    t = np.asarray(ledger.t)
    if t.size == 0:
        return 0.0
    lo = 0 if t1 is None else int(np.searchsorted(t, t1 - 1e-12))
    hi = t.size if t2 is None else int(np.searchsorted(t, t2 + 1e-12))
    E = ledger.energy()[lo:hi]
    D = ledger.dissipation()[lo:hi]
    P = np.asarray(ledger.power)[lo:hi]
    r = np.abs(E - E[0] + (D - D[0]) - (P - P[0]))
    scale = float(np.max(np.abs(E)))
    if scale == 0.0:
        return float(np.max(r))
    return float(np.max(r) / scale)


@dataclass
class GronwallReport:
    constant: float
    passed: bool
    log_slope: float
    lhs: np.ndarray
    rhs: np.ndarray


def gronwall_check(ledger: EnergyLedger):
    """Measured C in LHS(t) <= C e^t RHS(t) for the a-priori estimate.

    LHS = |u|^2 + |d_t eta|^2 + |eta|_{H^2}^2 + int int S(Du):Du,
    RHS = |u0|^2 + |eta1|^2 + |eta0|_{H^2}^2 + int |f|^2 + |g|^2.
    """
    t = np.asarray(ledger.t)
    kin = 2.0 * (np.asarray(ledger.e_fluid) + np.asarray(ledger.e_shell))
    lhs = kin + np.asarray(ledger.h2) + np.asarray(ledger.viscous)
    rhs = kin[0] + ledger.h2[0] + np.asarray(ledger.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / (np.exp(t - t[0]) * rhs), np.where(lhs > 0, np.inf, 0.0))
    C = float(np.max(ratio)) if ratio.size else 0.0
    half = ratio.size // 2
    if ratio.size > 2 and np.all(ratio[half:] > 0) and np.all(np.isfinite(ratio)):
        slope = float(np.polyfit(t[half:], np.log(ratio[half:]), 1)[0])
    else:
        slope = 0.0
    return GronwallReport(C, bool(np.isfinite(C)), slope, lhs, rhs)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

@dataclass
class GalerkinConfig:
    dt: float
    n_steps: int
    eps: float = 0.0
    law: StressLaw = field(default_factory=StressLaw)
    tol_picard: float = 1e-10
    max_picard: int = 500
    damping: float = 1.0
    t0: float = 0.0
    stop_fraction: float | None = None   # stop once |eta|_inf >= fraction * kappa


@dataclass
class GalerkinResult:
    times: np.ndarray
    alpha: np.ndarray
    coeffs: np.ndarray
    ledger: EnergyLedger
    picard_iterations: list
    stopped: bool = False
    zero_extended: bool = False

    def eta_coeffs(self):
        return self.coeffs


class SteklovHistory:
    """Piecewise-linear coefficient history for the backward window mean; zero before its start."""

    def __init__(self, times=None, values=None, start=0.0):
        self.t = [] if times is None else list(times)
        self.v = [] if values is None else [np.asarray(a, dtype=float) for a in values]
        self.start = start

    def append(self, t, a):
        self.t.append(float(t))
        self.v.append(np.asarray(a, dtype=float))

    def integral(self, a, b, size):
        """int_a^b of the piecewise-linear history (zero before the first node)."""
        out = np.zeros(size)
        if not self.t or b <= a:
            return out
        ts = self.t
        j = int(np.searchsorted(ts, a, side="right")) - 1
        j = max(j, 0)
        while j < len(ts) - 1 and ts[j] < b:
            lo, hi = max(a, ts[j]), min(b, ts[j + 1])
            if hi > lo:
                h = ts[j + 1] - ts[j]
                sa, sb = (lo - ts[j]) / h, (hi - ts[j]) / h
                th = 0.5 * (sa + sb)
                out += (hi - lo) * ((1 - th) * self.v[j] + th * self.v[j + 1])
            j += 1
        return out


def _koiter_data(shell: ShellBasis, base: SurfaceField):
    """K(base), K(base, W_j) and H^2 pairings of the base displacement."""
    surf, q = shell.surface, shell.quad
    k00 = koiter_form(surf, shell.params, base, base, q)
    k0 = np.array([koiter_form(surf, shell.params, base, m, q) for m in shell.modes])
    gram = h2_gram(surf, [base] + list(shell.modes), q)
    return k00, k0, gram[0, 0], gram[0, 1:]


def run_galerkin(basis: CoupledBasis, motion: DomainMotion, cfg: GalerkinConfig, base: SurfaceField,
                 alpha0=None, coeffs0=None, f=None, g=None, history: SteklovHistory | None = None,
                 on_step: Callable | None = None) -> GalerkinResult:
    """Implicit-midpoint integration of the Galerkin system with damped Picard iteration.

    The midpoint unknown m solves
      [(2/dt) A + Q + (2 eps + dt) S + V(nu(m)) - O(ubar(m))] m
          = (2/dt) A alpha^n - 2 S c^n + F - 2 K(base, W),
    then alpha^{n+1} = 2 m - alpha^n and c^{n+1} = c^n + dt m_s.
    """
    n, ns = basis.size, basis.n_s
    dt, eps, law = cfg.dt, cfg.eps, cfg.law
    alpha = np.zeros(n) if alpha0 is None else np.asarray(alpha0, dtype=float).copy()
    c = np.zeros(ns) if coeffs0 is None else np.asarray(coeffs0, dtype=float).copy()
    S = _pad(basis, basis.stiff)
    Gh2 = basis.shell.gram_h2
    k00, k0, n00, n0 = _koiter_data(basis.shell, base)
    k0p = np.zeros(n)
    k0p[:ns] = k0
    Wq, qw = basis.Wq, basis.q.w
    base_q = base(basis.q.u)
    kap = basis.surface.kappa
    p0 = law.p0
    hist = history if history is not None else SteklovHistory(start=cfg.t0)
    if not hist.t or hist.t[-1] < cfg.t0:
        hist.append(cfg.t0, alpha)
    zero_ext = False

    def node_frame(t):
        motion.check(t)
        return basis.frame(motion, t) if not basis.shell_only else None

    def mass(fr):
        A = assemble_mass(basis, fr) if fr is not None else _pad(basis, basis.mass_shell)
        return A

    def koiter_energy(cc):
        return k00 + 2.0 * cc @ k0 + cc @ basis.stiff @ cc

    def ledger_row(t, fr, A, visc, parab, power, data, epst):
        eta = base_q + c @ Wq
        Af = A - _pad(basis, basis.mass_shell)
        led.append(t=t, e_fluid=0.5 * alpha @ Af @ alpha,
                   e_shell=0.5 * alpha[:ns] @ basis.mass_shell @ alpha[:ns],
                   e_koiter=koiter_energy(c), viscous=visc, parab=parab, power=power,
                   eta_inf=float(np.max(np.abs(eta))), tau=tau_monitor(eta, kap),
                   h2=n00 + 2.0 * c @ n0 + c @ Gh2 @ c, data=data, eps_term=epst)

    def node_rates(tn, fr):
        """Viscous, parabolic, power, data-norm and eps-term rates at a node."""
        a_s = alpha[:ns]
        F, dn = forcing_vector(basis, fr, tn, f, g)
        par = 2.0 * eps * (a_s @ basis.stiff @ a_s)
        et = eps * (a_s @ Gh2 @ a_s)
        vr = 0.0
        if fr is not None:
            Du = np.tensordot(alpha, fr.sym, 1)
            nD = np.sqrt(np.einsum("Nab,Nab->N", Du, Du))
            wJ = basis.w * fr.J
            SD = np.where(nD > 0, law.viscosity(nD) * nD * nD, 0.0)
            vr = float(np.sum(wJ * SD))
            et += law.eps_tilde * float(np.sum(wJ * nD ** p0))
        return vr, par, float(alpha @ F), dn, et

    led = EnergyLedger()
    t = cfg.t0
    fr_n = node_frame(t)
    A_n = mass(fr_n)
    _spd(A_n, t)
    ledger_row(t, fr_n, A_n, 0.0, 0.0, 0.0, 0.0, 0.0)
    times, alphas, cs, its = [t], [alpha.copy()], [c.copy()], []
    visc = parab = power = data = epst = 0.0
    rates = node_rates(t, fr_n)
    rate_min = rates[0]
    stopped = False
    for step in range(cfg.n_steps):
        tm = t + 0.5 * dt
        t1 = t + dt
        if basis.shell_only:
            fr_m = None
            A_m = mass(None)
            Q = np.zeros((n, n))
        else:
            motion.check(tm)
            fr_m = basis.frame(motion, tm, rate=True)
            A_m = mass(fr_m)
            Q = assemble_rate(basis, fr_m)
        _spd(A_m, tm)
        F, dnorm = forcing_vector(basis, fr_m, tm, f, g)
        rhs = (2.0 / dt) * A_m @ alpha - 2.0 * S[:, :ns] @ c + F - 2.0 * k0p
        L0 = (2.0 / dt) * A_m + Q + (2.0 * eps + dt) * S
        # Steklov window mean of alpha at tm: history part + current half step
        a = tm - eps
        if eps > 0:
            if a < hist.t[0] - 1e-15 and hist.t[0] == 0.0:
                zero_ext = True
            s0 = max(a, t)
            hpart = hist.integral(a, t, n)
            Lc = tm - s0
            th = 0.5 * ((s0 - t) / (0.5 * dt) + 1.0)
            cA, cM = Lc * (1 - th) / eps, Lc * th / eps
        else:
            hpart, cA, cM = np.zeros(n), 0.0, 1.0
        hpart = hpart / eps if eps > 0 else hpart
        m = alpha.copy()
        ratios, it = [], 0
        r_prev = None
        theta = cfg.damping
        newtonian = law.p == 2.0 and law.eps_tilde == 0.0
        Vconst = viscous_matrix(basis, fr_m, np.full(fr_m.J.shape, law.mu0)) if (newtonian and fr_m is not None) else None
        while True:
            if fr_m is not None:
                abar = hpart + cA * alpha + cM * m
                ubar = np.tensordot(abar, fr_m.F, 1)
                O = oseen_matrix(basis, fr_m, ubar)
                if Vconst is not None:
                    V = Vconst
                else:
                    Du = np.tensordot(m, fr_m.sym, 1)
                    nu = law.viscosity(np.sqrt(np.einsum("Nab,Nab->N", Du, Du)))
                    V = viscous_matrix(basis, fr_m, nu)
                L = L0 + V - O
            else:
                L = L0
            res = L @ m - rhs
            scale = max(np.linalg.norm(rhs), np.linalg.norm(L0 @ m))
            r = float(np.linalg.norm(res) / scale) if scale > 0 else 0.0
            if r <= cfg.tol_picard:
                break
            if r_prev is not None and r_prev > 0:
                ratios.append(r / r_prev)
                if r > r_prev:
                    # oscillating Kacanov iterates: relax harder
                    theta = max(0.5 * theta, 1.0 / 64.0)
                if len(ratios) >= 50 and min(ratios[-50:]) >= 0.99:
                    raise SolverError("Picard iteration stagnated",
                                      {"t": t, "step": step, "residual": r, "iterations": it})
            if it >= cfg.max_picard:
                raise SolverError("Picard iteration did not converge",
                                  {"t": t, "step": step, "residual": r, "iterations": it})
            r_prev = r
            try:
                m_new = linalg.solve(L, rhs)
            except linalg.LinAlgError as exc:
                raise SolverError("singular midpoint system", {"t": t, "step": step}) from exc
            m = m + theta * (m_new - m)
            it += 1
        its.append(it)
        alpha = 2.0 * m - alpha
        c = c + dt * m[:ns]
        t = cfg.t0 + (step + 1) * dt
        hist.append(t, alpha)
        fr_n = node_frame(t)
        A_n = mass(fr_n)
        _spd(A_n, t)
        new = node_rates(t, fr_n)
        rate_min = min(rate_min, new[0])
        visc, parab, power, data, epst = (acc + 0.5 * dt * (a + b) for acc, a, b in
                                          zip((visc, parab, power, data, epst), rates, new))
        rates = new
        ledger_row(t, fr_n, A_n, visc, parab, power, data, epst)
        times.append(t)
        alphas.append(alpha.copy())
        cs.append(c.copy())
        if on_step is not None:
            on_step(t, alpha, c)
        if cfg.stop_fraction is not None and led.eta_inf[-1] >= cfg.stop_fraction * kap:
            stopped = True
            break
    led.rate_min = float(rate_min) if np.isfinite(rate_min) else 0.0
    return GalerkinResult(np.array(times), np.array(alphas), np.array(cs), led, its, stopped, zero_ext)


def _spd(A, t):
    try:
        linalg.cho_factor(A)
    except linalg.LinAlgError as exc:
        lam = float(np.min(np.linalg.eigvalsh(0.5 * (A + A.T))))
        raise SolverError("mass matrix is not positive definite", {"t": t, "min_eig": lam}) from exc


def project_initial(basis: CoupledBasis, motion: DomainMotion, t, u0=None, eta1=None):
    """Coefficients of the A-orthogonal projection of (eta1, u0) onto the coupled basis."""
    n = basis.size
    b = np.zeros(n)
    if basis.shell_only:
        A = _pad(basis, basis.mass_shell)
    else:
        fr = basis.frame(motion, t)
        A = assemble_mass(basis, fr)
        if u0 is not None:
            b += np.einsum("jNi,Ni,N->j", fr.F, u0(fr.y), basis.w * fr.J)
    if eta1 is not None:
        b[: basis.n_s] += basis.Wq @ (basis.q.w * eta1(basis.q.u))
    if not np.any(b):
        return np.zeros(n)
    return linalg.solve(A, b, assume_a="pos")


def gram_condition(basis: CoupledBasis, motion: DomainMotion, t=0.0, limit=1e12):
    """Condition number of A(t); raises ConfigurationError above ``limit``."""
    fr = basis.frame(motion, t) if not basis.shell_only else None
    A = assemble_mass(basis, fr) if fr is not None else _pad(basis, basis.mass_shell)
    cond = float(np.linalg.cond(A))
    if cond > limit:
        raise ConfigurationError(f"basis Gram condition number {cond:.3e} exceeds {limit:.0e}")
    return cond
