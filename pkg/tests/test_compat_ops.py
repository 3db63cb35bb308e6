import numpy as np
import pytest
from hypothesis import given, strategies as st

from kfsi import verify
from kfsi.compat_ops import (RegularizerConfig, default_bump, gamma_field, gamma_moment,
                             mean_correct, mollify_initial_data, orth_correct, space_mollify,
                             spectral_project, time_steklov_scalar)
from kfsi.errors import ConfigurationError
from kfsi.geometry import ConstantField, FlatChannel, FourierField, Sphere, gamma_factor
from kfsi.shell_energy import ElasticParams, build_shell_basis


@given(st.floats(-0.5, 0.5), st.floats(-2, 2), st.floats(-2, 2))
def test_corrections_remove_gamma_moment_and_are_idempotent(c, a, b):
    sf = Sphere(1.0)
    q = sf.quadrature((16, 16))
    eta = ConstantField(c, 2)
    bv = a + b * np.cos(q.u[:, 0]) + np.sin(q.u[:, 1])
    for corr in (lambda x: mean_correct(sf, eta, x, q), lambda x: orth_correct(sf, eta, x, q)):
        once = corr(bv)
        assert abs(gamma_moment(sf, eta, once, q)) <= 1e-12 * (1 + np.max(np.abs(bv)))
        np.testing.assert_allclose(corr(once), once, atol=1e-13)


def test_orth_correct_is_l2_projection():
    sf = FlatChannel(2)
    q = sf.quadrature(32)
    eta = ConstantField(0.0, 1)
    bv = 1.0 + np.cos(2 * np.pi * q.u[:, 0])
    np.testing.assert_allclose(orth_correct(sf, eta, bv, q), np.cos(2 * np.pi * q.u[:, 0]), atol=1e-14)


def test_bump_is_positive_and_peaks_in_middle():
    sf = FlatChannel(2)
    u = sf.quadrature(64).u
    psi = default_bump(sf)(u)
    assert np.all(psi > 0)
    assert u[np.argmax(psi), 0] == pytest.approx(0.5)


def test_spectral_project_idempotent():
    basis = build_shell_basis(FlatChannel(2), ElasticParams(), 6)
    b = lambda u: np.cos(2 * np.pi * u[..., 0]) + u[..., 0] ** 2
    s1, c1 = spectral_project(basis, 4, b)
    s2, c2 = spectral_project(basis, 4, s1)
    np.testing.assert_allclose(c1, c2, atol=1e-12)
    with pytest.raises(ConfigurationError):
        spectral_project(basis, 9, b)


@given(st.integers(0, 2 ** 31), st.sampled_from([0.125, 0.0625, 0.03125]))
def test_space_mollifier_is_one_sided(seed, eps):
    rng = np.random.default_rng(seed)
    sf = FlatChannel(2)
    K = 30
    ks = np.arange(1, K + 1)[:, None]
    f = FourierField([1.0], ks, 0.02 * rng.normal(size=K) / ks[:, 0], 0.02 * rng.normal(size=K) / ks[:, 0])
    u = sf.quadrature(128).u
    m = space_mollify(sf, f, eps, nodes=u)
    assert np.all(m(u) >= f(u))
    assert m.cutoff == int(np.ceil(1 / eps))


def test_space_mollifier_keeps_band_limited_data():
    sf = FlatChannel(2)
    f = FourierField([1.0], [[1], [3]], [0.1, 0.02], [0.0, 0.0])
    m = space_mollify(sf, f, 0.25)
    assert m.shift == 0.0


def test_regularizer_validation():
    with pytest.raises(ConfigurationError):
        RegularizerConfig(eps=0.0)
    with pytest.raises(ConfigurationError):
        space_mollify(FlatChannel(2), ConstantField(0.0, 1), -1.0)


def test_steklov_boundary_mean_of_constant_is_constant():
    sf = FlatChannel(2)
    u = sf.quadrature(8).u
    d = lambda s: ConstantField(0.1 * s, 1)
    r = time_steklov_scalar(sf, d, 0.2, lambda s, uu: np.full(len(uu), 3.0), 1.0, u)
    np.testing.assert_allclose(r.values, 3.0, rtol=1e-14)
    assert not r.zero_extended
    assert time_steklov_scalar(sf, d, 0.2, lambda s, uu: np.ones(len(uu)), 0.1, u).zero_extended


def test_steklov_trace_compatibility():
    r = verify.check_steklov_trace()
    assert r["passed"], r


def test_steklov_order_in_eps():
    r = verify.check_steklov_order()
    assert r["passed"], r


def test_gamma_field_matches_gamma_factor():
    sf = Sphere(1.0)
    eta = ConstantField(0.2, 2)
    u = sf.quadrature((6, 6)).u
    np.testing.assert_allclose(gamma_field(sf, eta)(u), gamma_factor(sf, eta, u))


def test_initial_data_compatibility():
    sf = FlatChannel(2)
    q = sf.quadrature(64)
    eta0 = FourierField([1.0], [[1], [40]], [0.1, 0.01], [0.0, 0.0])
    eta1 = FourierField([1.0], [[2]], [0.3], [0.0])
    data = mollify_initial_data(sf, eta0, eta1, None, 0.125, q)
    assert data.compat_residual < 1e-12
    assert np.all(data.eta0(q.u) >= eta0(q.u))
    with pytest.raises(ConfigurationError):
        mollify_initial_data(sf, eta0, ConstantField(0.5, 1), None, 0.125, q)
