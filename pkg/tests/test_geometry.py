import numpy as np
import pytest
from hypothesis import given, strategies as st

from kfsi.errors import DomainDegenerationError, GeometryError
from kfsi.geometry import (AmbientField, Circle, ConstantField, Cylinder, FlatChannel, FourierField,
                           HanzawaMap, QuinticBlend, RampBlend, Sphere, boundary_map,
                           gamma_factor, gamma_integral, gauss_curvature, make_blend,
                           mean_curvature, metric, polynomial_ambient, tau, tubular_radius)


@pytest.mark.parametrize("R", [0.3, 1.0, 2.5])
def test_sphere_curvatures_and_kappa(R):
    sf = Sphere(R)
    u = sf.quadrature((6, 6)).u
    assert tubular_radius(sf) == R
    np.testing.assert_allclose(mean_curvature(sf, u), -1.0 / R, rtol=1e-13)
    np.testing.assert_allclose(gauss_curvature(sf, u), 1.0 / R ** 2, rtol=1e-13)


def test_cylinder_and_circle_curvatures():
    cyl = Cylinder(2.0, 3.0)
    u = cyl.quadrature((5, 5)).u
    np.testing.assert_allclose(mean_curvature(cyl, u), -0.25, rtol=1e-13)
    np.testing.assert_allclose(gauss_curvature(cyl, u), 0.0, atol=1e-14)
    c = Circle(0.5)
    u = c.quadrature(7).u
    np.testing.assert_allclose(mean_curvature(c, u), -1.0, rtol=1e-13)


@given(st.floats(-0.95, 0.95))
def test_gamma_is_area_ratio_of_offset_sphere(c):
    sf = Sphere(1.0)
    u = sf.quadrature((4, 4)).u
    np.testing.assert_allclose(gamma_factor(sf, ConstantField(c, 2), u), (1.0 + c) ** 2, rtol=1e-13)


def test_gamma_integral_matches_exact_offset_areas():
    q = Sphere(1.5).quadrature((48, 48))
    assert gamma_integral(Sphere(1.5), ConstantField(0.3, 2), q) == pytest.approx(4 * np.pi * 1.8 ** 2, rel=1e-12)
    cyl = Cylinder(1.0, 2.0)
    q = cyl.quadrature((32, 8))
    assert gamma_integral(cyl, ConstantField(-0.4, 2), q) == pytest.approx(2 * np.pi * 0.6 * 2.0, rel=1e-13)


def test_gamma_rejects_eta_at_kappa():
    sf = Circle(1.0)
    with pytest.raises(DomainDegenerationError):
        gamma_factor(sf, ConstantField(1.0, 1), sf.quadrature(8).u)


def test_tau_monitor():
    assert tau(0.0, 1.0) == 1.0
    assert tau(np.array([0.5, -0.75]), 1.0) == pytest.approx(4.0)
    assert tau(1.0, 1.0) == float("inf")


@pytest.mark.parametrize("blend", [QuinticBlend(), RampBlend(0.05)])
def test_blend_endpoints(blend):
    assert blend(np.array(0.0)) == pytest.approx(1.0)
    assert blend(np.array(-1.0)) == pytest.approx(0.0)
    assert blend(np.array(0.0), 1) == pytest.approx(0.0, abs=1e-12)
    t = np.linspace(-1, 0, 2001)
    slope = np.max(np.abs(np.gradient(blend(t), t)))
    assert slope <= blend.max_slope * (1 + 1e-3)


def test_make_blend_rejects_unknown():
    with pytest.raises(ValueError):
        make_blend("cubic")


def test_fourier_field_derivatives_match_finite_differences(rng):
    f = FourierField([1.0, 2.0], [[1, 0], [2, 1]], rng.normal(size=2), rng.normal(size=2), 0.3)
    u = rng.uniform(0, 1, size=(5, 2))
    v, dv, ddv = f.evaluate(u)
    h = 1e-5
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        np.testing.assert_allclose((f(u + e) - f(u - e)) / (2 * h), dv[:, a], atol=1e-8)
        np.testing.assert_allclose((f.evaluate(u + e)[1] - f.evaluate(u - e)[1]) / (2 * h),
                                   ddv[:, a], atol=1e-7)


def test_from_samples_recovers_band_limited_field():
    g = np.arange(32) / 32
    X, Y = np.meshgrid(g, g, indexing="ij")
    vals = 0.2 * np.sin(2 * np.pi * X) * np.cos(4 * np.pi * Y) + 0.05
    f = FourierField.from_samples(vals, [1.0, 1.0], tol=1e-12)
    assert f.kvecs.shape[0] == 2
    u = np.random.default_rng(0).uniform(0, 1, (20, 2))
    exact = 0.2 * np.sin(2 * np.pi * u[:, 0]) * np.cos(4 * np.pi * u[:, 1]) + 0.05
    np.testing.assert_allclose(f(u), exact, atol=1e-14)


def test_ambient_field_restricts_polynomial():
    sf = Sphere(1.0)
    f = AmbientField(sf, polynomial_ambient({(0, 0, 1): 2.0, (1, 1, 0): 1.0}))
    u = sf.quadrature((5, 5)).u
    x = sf.embed(u)
    np.testing.assert_allclose(f(u), 2 * x[:, 2] + x[:, 0] * x[:, 1], atol=1e-14)


def test_boundary_map_is_offset_along_normal():
    sf = Cylinder(1.0, 1.0)
    u = sf.quadrature((6, 3)).u
    pts, tang = boundary_map(sf, ConstantField(0.2, 2), u)
    np.testing.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), 1.2, rtol=1e-14)
    assert tang.shape == (u.shape[0], 3, 2)


def test_hanzawa_identity_for_zero_displacement():
    sf = Sphere(1.0)
    hz = HanzawaMap(sf, ConstantField(0.0, 2))
    x = np.array([[0.1, 0.2, 0.3], [0.0, 0.5, -0.4]])
    y, jac, det = hz.evaluate_cartesian(x)
    np.testing.assert_allclose(y, x, atol=1e-15)
    np.testing.assert_allclose(det, 1.0, atol=1e-13)


def test_hanzawa_maps_reference_boundary_to_deformed_boundary():
    sf = FlatChannel(2, 1.0, 1.0)
    eta = FourierField([1.0], [[1]], [0.2], [0.0])
    hz = HanzawaMap(sf, eta)
    u = np.linspace(0, 1, 9, endpoint=False)[:, None]
    y, _, det = hz.evaluate(u, np.zeros(9))
    np.testing.assert_allclose(y[:, 1], 1.0 + eta(u), atol=1e-15)
    assert np.all(det > 0)


@given(st.floats(0.0, 0.99), st.floats(0.0, 0.99), st.floats(0.02, 0.98), st.floats(-0.3, 0.3))
def test_hanzawa_inverse_roundtrip(x, yv, z, amp):
    sf = FlatChannel(3, 1.0, 1.0)
    eta = FourierField([1.0, 1.0], [[1, 0], [1, 1]], [amp, 0.1], [0.0, 0.05])
    hz = HanzawaMap(sf, eta)
    X = np.array([[x, yv, z]])
    img = hz.evaluate_cartesian(X)[0]
    back = hz.inverse(img)
    np.testing.assert_allclose(np.mod(back[:, :2], 1.0), X[:, :2], atol=1e-12)
    np.testing.assert_allclose(back[:, 2], X[:, 2], atol=1e-12)


def test_hanzawa_inverse_across_periodic_seam():
    sf = FlatChannel(3, 1.0, 1.0)
    eta = FourierField([1.0, 1.0], [[1, 0]], [0.2], [0.0])
    hz = HanzawaMap(sf, eta)
    y = hz.evaluate_cartesian(np.array([[0.0, 0.0, 0.5]]))[0] - np.array([[1e-3, 0.0, 0.0]])
    x = hz.inverse(y)
    d = hz.evaluate_cartesian(x)[0] - y
    d[:, :2] -= np.round(d[:, :2])
    np.testing.assert_allclose(d, 0.0, atol=1e-13)


def test_hanzawa_check_rejects_steep_blend():
    sf = FlatChannel(2, 1.0, 1.0)
    with pytest.raises(GeometryError):
        HanzawaMap(sf, ConstantField(0.6, 1)).check(sf.quadrature(8).u)
    HanzawaMap(sf, ConstantField(0.6, 1), RampBlend(0.01)).check(sf.quadrature(8).u)


def test_metric_of_sphere_chart():
    sf = Sphere(2.0)
    u = np.array([[0.7, 1.1]])
    g = metric(sf, u)[0]
    np.testing.assert_allclose(g, np.diag([4.0, 4.0 * np.sin(0.7) ** 2]), atol=1e-14)


def test_invalid_surfaces_raise():
    with pytest.raises(GeometryError):
        Sphere(-1.0)
    with pytest.raises(GeometryError):
        FlatChannel(4)
