"""Generalized Newtonian extra stress with a p-structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationFailure, ConfigurationError


def frob(D):
    return np.sqrt(np.einsum("...ij,...ij->...", D, D))


def ddot(A, B):
    return np.einsum("...ij,...ij->...", A, B)


@dataclass(frozen=True)
class StressLaw:
    """S(D) = mu0 (delta + |D|)^(p-2) D + eps_tilde |D|^2 D."""

    mu0: float = 1.0
    delta: float = 1.0
    p: float = 2.0
    eps_tilde: float = 0.0

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ConfigurationError("mu0 must be positive")
        if self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        if not self.p > 6.0 / 5.0:
            raise ConfigurationError("p must exceed 6/5")
        if self.eps_tilde < 0:
            raise ConfigurationError("eps_tilde must be nonnegative")

    @property
    def p0(self) -> float:
        return max(self.p, 4.0)

    def viscosity(self, norm):
        """Secant viscosity nu(|D|) with S(D) = nu(|D|) D."""
        norm = np.asarray(norm, dtype=float)
        base = self.delta + norm
        if self.p == 2.0:
            core = np.full_like(base, self.mu0)
        else:
            with np.errstate(divide="ignore"):
                core = self.mu0 * np.where(base > 0, base, 1.0) ** (self.p - 2.0)
            # delta = 0, p < 2: D = 0 is a removable point of S, not of nu
            core = np.where(base > 0, core, np.inf if self.p < 2 else 0.0)
        return core + self.eps_tilde * norm * norm

    def eval(self, D):
        D = np.asarray(D, dtype=float)
        n = frob(D)
        nu = self.viscosity(n)
        nu = np.where(n > 0, nu, 0.0)
        return nu[..., None, None] * D

    __call__ = eval

    def model_part(self, D):
        return StressLaw(self.mu0, self.delta, self.p, 0.0).eval(D)

    def scale(self, norm):
        """(delta + |D|)^(p-2) |D|, the growth profile of the model law."""
        norm = np.asarray(norm, dtype=float)
        base = self.delta + norm
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(norm > 0, np.where(base > 0, base, 1.0) ** (self.p - 2.0) * norm, 0.0)
        return out


def random_symmetric(rng, count, dim=3, lo=1e-8, hi=1e8):
    """Symmetric matrices with Frobenius norm log-uniform in [lo, hi]."""
    A = rng.standard_normal((count, dim, dim))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    A /= frob(A)[:, None, None]
    mag = np.exp(rng.uniform(np.log(lo), np.log(hi), size=count))
    return A * mag[:, None, None]


@dataclass
class CertificationReport:
    c0: float
    c1: float
    samples: int
    pairs: int
    monotone: bool
    extremes: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)

    def as_dict(self):
        return {"c0": self.c0, "c1": self.c1, "samples": self.samples, "pairs": self.pairs,
                "monotone": self.monotone, "extremes": self.extremes}


def certify_structure(law, sample_count=10_000, rng=None, dim=3, pairs=None):
    """Empirical growth/coercivity constants and a monotonicity scan.

    Returns c0 = max |S(D)| / scale(|D|) and c1 = min S(D):D / (scale(|D|)|D|).
    Raises CertificationFailure with witness pairs when (S(D)-S(E)):(D-E) <= 0.
    """
    if sample_count < 10_000:
        raise ConfigurationError("certification needs at least 10^4 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    D = random_symmetric(rng, sample_count, dim)
    n = frob(D)
    S = law.eval(D) if hasattr(law, "eval") else law(D)
    sc = StressLaw(1.0, getattr(law, "delta", 1.0), getattr(law, "p", 2.0)).scale(n)
    growth = frob(S) / sc
    coerc = ddot(S, D) / (sc * n)
    npairs = sample_count if pairs is None else pairs
    E = random_symmetric(rng, npairs, dim)
    D2 = D[:npairs]
    SE = law.eval(E) if hasattr(law, "eval") else law(E)
    mono = ddot(S[:npairs] - SE, D2 - E)
    bad = np.nonzero(~(mono > 0))[0]
    report = CertificationReport(
        c0=float(np.max(growth)), c1=float(np.min(coerc)), samples=sample_count, pairs=npairs,
        monotone=bad.size == 0,
        extremes={"growth_argmax_norm": float(n[np.argmax(growth)]),
                  "coercivity_argmin_norm": float(n[np.argmin(coerc)])})
    if bad.size:
        report.witnesses = [(D2[i].tolist(), E[i].tolist(), float(mono[i])) for i in bad[:5]]
        raise CertificationFailure(f"monotonicity violated on {bad.size} pairs", report.witnesses)
    if not report.c1 > 0:
        raise CertificationFailure("coercivity constant is not positive")
    return report


@dataclass
class MintyReport:
    status: str  # converged | inconclusive | failed
    products: list
    distances: list
    converged_at: int | None = None


def minty_probe(law, A, sequence, premise_tol=1e-16, tol=1e-6):
    """Check that (S(A_n)-S(A)):(A_n-A) -> 0 forces A_n -> A along a sequence.

    ``inconclusive`` when the last duality product is above ``premise_tol``;
    ``converged`` when the distances stay below ``tol`` from some index on.
    """
    A = np.asarray(A, dtype=float)
    seq = np.asarray(sequence, dtype=float)
    SA = law.eval(A)
    Sn = law.eval(seq)
    prod = ddot(Sn - SA, seq - A)
    dist = frob(seq - A)
    if prod[-1] > premise_tol:
        return MintyReport("inconclusive", prod.tolist(), dist.tolist())
    above = np.nonzero(dist > tol)[0]
    conv = 0 if above.size == 0 else int(above[-1]) + 1
    if conv >= dist.size:
        return MintyReport("failed", prod.tolist(), dist.tolist())
    return MintyReport("converged", prod.tolist(), dist.tolist(), conv)


def sequence_with_products(law, A, direction, targets):
    """A_n = A + t_n E with (S(A_n)-S(A)):(A_n-A) equal to the targets.

    t_n is found by bisection; the product is increasing in t for monotone S.
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(direction, dtype=float)
    E = E / frob(E)
    SA = law.eval(A)

    def prod(t):
        B = A + t * E
        return float(ddot(law.eval(B) - SA, B - A))

    out = []
    for target in targets:
        lo, hi = 0.0, 1.0
        while prod(hi) < target:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if prod(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-300 + 1e-15 * hi:
                break
        out.append(A + hi * E)
    return np.array(out)
