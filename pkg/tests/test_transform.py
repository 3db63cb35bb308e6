import numpy as np
import pytest
from hypothesis import given, strategies as st

from kfsi import verify
from kfsi.errors import GeometryError
from kfsi.geometry import (AmbientField, ConstantField, FlatChannel, FourierField, HanzawaMap, Sphere,
                           polynomial_ambient)
from kfsi.transform import (DeformedQuadrature, VolumeQuadrature, convergence_order, divergence_fd,
                            pullback, pushforward, surface_integral)


@pytest.mark.parametrize("c", [-0.4, 0.0, 0.35])
def test_constant_offset_ball_volume(c):
    vq = VolumeQuadrature.build(Sphere(1.0), 12, 12)
    dq = vq.bind(ConstantField(c, 2))
    assert dq.integrate(np.ones(vq.size)) == pytest.approx(4 / 3 * np.pi * (1 + c) ** 3, rel=1e-13)


def test_channel_volume_under_zero_mean_displacement():
    sf = FlatChannel(2, 1.0, 1.0)
    vq = VolumeQuadrature.build(sf, 32, 8)
    dq = vq.bind(FourierField([1.0], [[1]], [0.3], [0.1]))
    assert dq.integrate(np.ones(vq.size)) == pytest.approx(1.0, rel=1e-13)


def test_degenerate_map_raises():
    sf = FlatChannel(2, 1.0, 1.0)
    vq = VolumeQuadrature.build(sf, 16, 4)
    with pytest.raises(GeometryError):
        vq.bind(ConstantField(0.9, 1))


@given(st.floats(-0.3, 0.3), st.floats(0.05, 0.95), st.floats(0.0, 1.0))
def test_pushforward_pullback_roundtrip(a, z, x):
    sf = FlatChannel(2, 1.0, 1.0)
    eta = FourierField([1.0], [[1]], [a], [0.1])
    X = np.array([[x, z]])
    phi = lambda p: np.stack([np.sin(p[..., 0]), p[..., 1] ** 2], axis=-1)
    y, v = pushforward(sf, eta, phi, X)
    back = pullback(sf, eta, lambda q: v, X)
    np.testing.assert_allclose(back, phi(X), atol=1e-12)


def test_piola_flux_through_boundary_equals_reference_flux():
    # int_{Gamma_eta} T phi . n dA_t = int_Gamma phi . n dA for the Piola map
    sf = FlatChannel(2, 1.0, 1.0)
    eta = FourierField([1.0], [[1]], [0.2], [0.0])
    vq = VolumeQuadrature.build(sf, 64, 16)
    dq = vq.bind(eta)
    phi = lambda p: np.stack([np.zeros_like(p[..., 0]), p[..., 1] * np.cos(2 * np.pi * p[..., 0]) + p[..., 1]], axis=-1)
    div_phi = lambda p: np.cos(2 * np.pi * p[..., 0]) + 1.0
    ref = float(np.sum(vq.w * div_phi(vq.x)))
    tv = dq.pushforward(phi(vq.x))
    assert tv.shape == (vq.size, 2)
    # div T phi = div(phi)/det, so the deformed volume integral equals the reference one
    assert dq.integrate(div_phi(vq.x) / dq.det) == pytest.approx(ref, rel=1e-12)


def test_divergence_fd_is_fourth_order():
    f = lambda y: np.stack([np.sin(3 * y[..., 0]), np.cos(2 * y[..., 1])], axis=-1)
    y = np.array([[0.3, 0.4]])
    exact = 3 * np.cos(0.9) - 2 * np.sin(0.8)
    errs = [abs(divergence_fd(f, y, h)[0] - exact) for h in (0.04, 0.02, 0.01)]
    assert np.min(convergence_order([0.04, 0.02, 0.01], errs)) > 3.8


def test_surface_integral_with_gamma():
    sf = Sphere(1.0)
    q = sf.quadrature((24, 24))
    assert surface_integral(sf, ConstantField(0.5, 2), lambda u: np.ones(len(u)), q) == \
        pytest.approx(4 * np.pi * 2.25, rel=1e-12)


def test_divergence_preservation_small_grid():
    r = verify.check_divergence_preservation(n=12)
    assert r["passed"], r


def test_divergence_theorem_midpoint_order():
    r = verify.check_divergence_theorem_order(ns=(8, 16, 32))
    assert r["passed"], r


def test_divergence_theorem_gauss_is_exact_to_roundoff():
    from kfsi.transform import divergence_theorem_check
    sf = Sphere(1.0)
    eta = AmbientField(sf, polynomial_ambient({(0, 0, 1): 0.2}))
    vq = VolumeQuadrature.build(sf, 24, 16, "gauss")
    err = divergence_theorem_check(sf, eta, lambda y: y, lambda y: 3.0 + 0 * y[..., 0],
                                   lambda y: 1.0 + y[..., 2], lambda y: np.stack(
                                       [0 * y[..., 0], 0 * y[..., 0], 1 + 0 * y[..., 0]], -1), vq)
    assert err < 1e-10


def test_reynolds_order_reduced():
    r = verify.check_reynolds_order(dts=(0.2, 0.1, 0.05), n_tan=16, n_s=12)
    assert r["passed"], r


def test_convergence_order_helper():
    np.testing.assert_allclose(convergence_order([1, 0.5, 0.25], [1, 0.25, 0.0625]), [2, 2])
