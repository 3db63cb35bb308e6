import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kfsi.errors import CertificationFailure, ConfigurationError
from kfsi.stress_law import (StressLaw, certify_structure, ddot, frob, minty_probe,
                             random_symmetric, sequence_with_products)

sym = arrays(np.float64, (3, 3), elements=st.floats(-1e3, 1e3)).map(lambda a: 0.5 * (a + a.T))


def test_parameter_validation():
    with pytest.raises(ConfigurationError):
        StressLaw(p=1.2)
    with pytest.raises(ConfigurationError):
        StressLaw(mu0=0.0)
    assert StressLaw(p=3.0).p0 == 4.0
    assert StressLaw(p=5.0).p0 == 5.0


def test_newtonian_case():
    D = np.diag([1.0, -2.0, 1.0])
    np.testing.assert_allclose(StressLaw(0.7, 1.0, 2.0).eval(D), 0.7 * D)


def test_zero_strain_gives_zero_stress():
    for p in (1.5, 2.0, 3.0):
        assert np.all(StressLaw(1.0, 0.0, p).eval(np.zeros((3, 3))) == 0.0)


@given(sym, st.floats(1.25, 4.0), st.floats(0.0, 2.0))
def test_model_law_formula(D, p, delta):
    n = frob(D)
    law = StressLaw(1.3, delta, p, 0.01)
    if n == 0 or delta + n == 0:
        return
    expect = (1.3 * (delta + n) ** (p - 2) + 0.01 * n * n) * D
    np.testing.assert_allclose(law.eval(D), expect, rtol=1e-12, atol=1e-300)


@given(sym, sym, st.floats(1.25, 4.0))
def test_strict_monotonicity(D, E, p):
    law = StressLaw(1.0, 1.0, p)
    if frob(D - E) < 1e-6:
        return
    assert ddot(law.eval(D) - law.eval(E), D - E) > 0


def test_certify_recovers_mu0():
    rep = certify_structure(StressLaw(0.05, 1.0, 1.5), 10_000, np.random.default_rng(0))
    assert rep.c0 == pytest.approx(0.05, rel=1e-12)
    assert rep.c1 == pytest.approx(0.05, rel=1e-12)
    assert rep.monotone


class _Bad:
    """Non-monotone law: S(D) = -D."""

    def eval(self, D):
        return -np.asarray(D)


def test_certify_reports_witnesses():
    with pytest.raises(CertificationFailure) as exc:
        certify_structure(_Bad(), 10_000)
    assert exc.value.witnesses


def test_certify_needs_enough_samples():
    with pytest.raises(ConfigurationError):
        certify_structure(StressLaw(), 100)


def test_random_symmetric_norm_range():
    A = random_symmetric(np.random.default_rng(1), 500, 3, 1e-2, 1e2)
    n = frob(A)
    np.testing.assert_allclose(A, np.swapaxes(A, 1, 2))
    assert n.min() >= 1e-2 * (1 - 1e-12) and n.max() <= 1e2 * (1 + 1e-12)


def test_minty_probe_statuses():
    law = StressLaw(1.0, 1.0, 1.5)
    A = np.diag([1.0, 0.0, -1.0])
    E = np.eye(3)
    seq = sequence_with_products(law, A, E, 10.0 ** -np.arange(2, 21, 2))
    prods = ddot(law.eval(seq) - law.eval(A), seq - A)
    np.testing.assert_allclose(prods, 10.0 ** -np.arange(2, 21, 2), rtol=1e-6)
    assert minty_probe(law, A, seq).status == "converged"
    assert minty_probe(law, A, seq[:3]).status == "inconclusive"
