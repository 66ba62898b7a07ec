import numpy as np
import pytest
from numpy.testing import assert_allclose

from qcurv.barycenter import Barycenter
from qcurv.bubbles import TestMapConfig as MapConfig
from qcurv.bubbles import (BubbleConfig, big_phi, bubble, bubble_mass, chi_delta,
                           eigen_pairing_decay, energy_slope, estimate_suite, phi_s)
from qcurv.functional import energy
from qcurv.geometry import ScalarField
from qcurv.paneitz import q_curvature, spectrum, synthetic_curvature

NORTH = np.array([0, 0, 0, 0, 1.0])
LAMS = [50, 100, 200, 400, 800]
PI2 = np.pi**2


@pytest.fixture(scope="module")
def north(sphere):
    return Barycenter(sphere, [NORTH], [1.0])


@pytest.fixture(scope="module")
def torus_atom(torus):
    return Barycenter(torus, [np.ones(4)], [1.0])


def test_chi_delta():
    d = 0.1
    assert chi_delta(0.0, d) == 0.0
    assert_allclose(chi_delta(3 * d, d), 2 * d)
    t = np.linspace(0, 3 * d, 3001)
    assert_allclose(chi_delta(t[t <= d], d), t[t <= d])
    assert np.all(chi_delta(t, d, 1) >= 0)
    # C^2: second derivative continuous across the spline knots
    for knot in (d, 2 * d):
        lo, hi = chi_delta(knot - 1e-12, d, 2), chi_delta(knot + 1e-12, d, 2)
        assert abs(lo - hi) < 1e-6


def test_bubble_values(sphere, north):
    cfg = BubbleConfig(north, 200, 0.1)
    u = bubble(cfg)
    assert_allclose(u.evaluate(NORTH[None]), np.log(400), rtol=1e-12)
    far = np.log(400 / (1 + 4 * 200**2 * 0.01))
    assert_allclose(cfg.far_field, far, rtol=1e-14)
    assert_allclose(u.evaluate(-NORTH[None]), far, atol=1e-10)


def test_bubble_mass(north):
    assert_allclose(bubble_mass(BubbleConfig(north, 200, 0.2)), 8 * PI2 / 3, rtol=0.05)


def test_bubble_config_rejects(sphere, north):
    with pytest.raises(ValueError):
        BubbleConfig(north, -1.0, 0.1)
    with pytest.raises(ValueError):
        BubbleConfig(north, 100, 2.0)
    close = Barycenter(sphere, [NORTH, [np.sin(0.2), 0, 0, 0, np.cos(0.2)]], [0.5, 0.5])
    with pytest.raises(ValueError):
        BubbleConfig(close, 100, 0.1)


def test_mass_additivity(sphere, north):
    y = np.array([1.0, 0, 0, 0, 0])
    sigma = Barycenter(sphere, [NORTH, y], [0.3, 0.7])
    single = bubble_mass(BubbleConfig(north, 400, 0.1))
    assert_allclose(bubble_mass(BubbleConfig(sigma, 400, 0.1)), single, rtol=0.02)


def test_phi_s(synth_torus, torus):
    sp = spectrum(synth_torus, synth_torus.kbar)
    assert np.all(phi_s(synth_torus, [0.0, 0.0], 5.0).values == 0)
    assert_allclose(phi_s(synth_torus, [1.0, 0.0], 10.0).values, 10 * sp.fields[0].values, atol=1e-12)
    s = np.array([0.6, -0.3])
    f = phi_s(synth_torus, s, 10.0)
    assert abs(f.mean()) < 1e-12
    quad = synth_torus.pairing(f, f)
    assert_allclose(quad, 100 * np.sum(sp.negative_eigenvalues * s**2), atol=1e-9)
    assert quad <= -abs(sp.negative_eigenvalues[-1]) * np.sum(s**2) * 100 + 1e-9
    with pytest.raises(ValueError):
        phi_s(synth_torus, [1.0], 1.0)


def test_phi_s_needs_negative_space(torus_op):
    with pytest.raises(ValueError):
        phi_s(torus_op, [], 1.0)


def test_big_phi_branches(synth_torus, torus, torus_atom, rng):
    lam_bar = 300.0
    u0 = big_phi(synth_torus, MapConfig(5.0, lam_bar, (0.0, 0.0)), torus_atom, 0.1)
    ref = bubble(BubbleConfig(torus_atom, lam_bar, 0.1))
    pts = torus.random_points(200, rng)
    assert_allclose(u0.evaluate(pts), ref.evaluate(pts), atol=1e-12)
    e = np.array([0.6, 0.8])
    for seam in (0.25, 0.5):
        lo = big_phi(synth_torus, MapConfig(5.0, lam_bar, tuple(e * (seam - 1e-13))), torus_atom, 0.1)
        hi = big_phi(synth_torus, MapConfig(5.0, lam_bar, tuple(e * (seam + 1e-13))), torus_atom, 0.1)
        assert_allclose(lo.evaluate(pts), hi.evaluate(pts), atol=1e-9)
    one = big_phi(synth_torus, MapConfig(5.0, lam_bar, tuple(e)), None)
    assert_allclose(one.evaluate(pts), phi_s(synth_torus, e, 5.0).evaluate(pts), atol=1e-12)
    with pytest.raises(ValueError):
        MapConfig(1.0, 10.0, (1.0, 1.0))


def test_estimate_suite_torus(torus_op, torus, torus_atom):
    rep = estimate_suite(torus_op, q_curvature(torus), torus_atom, 0.1, LAMS)
    assert rep["q_slope"] == 0.0
    with pytest.raises(ValueError):
        estimate_suite(torus_op, q_curvature(torus), torus_atom, 0.1, [100])


def test_estimate_suite_sphere_q_slope(sphere_op, sphere_q, north):
    rep = estimate_suite(sphere_op, sphere_q, north, 0.1, LAMS)
    assert_allclose(rep["q_slope"], -8 * PI2, rtol=0.1)


def test_estimate_suite_logmass_drift(sphere_op, sphere_q, north):
    rep = estimate_suite(sphere_op, sphere_q, north, 0.1, LAMS)
    assert rep["logmass_drift"] <= 0.5


@pytest.mark.parametrize("k", [1, 2])
def test_energy_slope_sphere(sphere_op, sphere, north, k):
    sigma = north if k == 1 else Barycenter(sphere, [NORTH, -NORTH], [0.5, 0.5])
    ratio = energy_slope(sphere_op, sigma, 0.1, LAMS) / (32 * k * PI2)
    assert 0.8 <= ratio <= 1.1


def test_energy_slope_torus(torus_op, torus_atom):
    ratio = energy_slope(torus_op, torus_atom, 0.1, LAMS) / (32 * PI2)
    assert 0.8 <= ratio <= 1.1


def test_energy_slope_rejects(sphere_op, sphere, north):
    with pytest.raises(ValueError):
        energy_slope(sphere_op, north, 0.1, [100, 200, 400])
    near = Barycenter(sphere, [NORTH, [np.sin(0.5), 0, 0, 0, np.cos(0.5)]], [0.5, 0.5])
    with pytest.raises(ValueError):
        energy_slope(sphere_op, near, 0.1, LAMS)
    light = Barycenter(sphere, [NORTH, -NORTH], [0.95, 0.05])
    with pytest.raises(ValueError):
        energy_slope(sphere_op, light, 0.1, LAMS)


def test_eigen_pairing_decay(torus_op, synth_torus, torus_atom):
    assert eigen_pairing_decay(torus_op, torus_atom, 100, 0.1) == 0.0
    deltas = np.array([0.05, 0.1, 0.2])
    vals = np.array([eigen_pairing_decay(synth_torus, torus_atom, 100, d) for d in deltas])
    slope = np.polyfit(np.log(deltas), np.log(vals), 1)[0]
    assert abs(slope - 4) <= 0.7
    a, b = (eigen_pairing_decay(synth_torus, torus_atom, lam, 0.1) for lam in (100, 1000))
    assert max(a, b) / min(a, b) <= 2


def test_energy_decreases_in_lambda_bar(synth_torus, torus, torus_atom):
    cd = synthetic_curvature(torus, 12 * PI2)
    lams = np.exp(np.linspace(8, 16, 9))
    e = [energy(synth_torus, cd, big_phi(synth_torus, MapConfig(1.0, lam, (0.0, 0.0)), torus_atom, 0.1)).total
         for lam in lams]
    slopes = np.diff(e) / np.diff(np.log(lams))
    assert np.all(slopes[-4:] <= -0.5 * (4 * 12 * PI2 - 32 * PI2))


def test_bubble_field_matches_grid(torus, torus_atom):
    # composite field and its grid sampling agree at the nodes
    u = bubble(BubbleConfig(torus_atom, 2.0, 0.4))
    f = u.to_field(project=False)
    assert isinstance(f, ScalarField)
    assert_allclose(f.values.ravel(), u.evaluate(torus.nodes()), atol=1e-12)
