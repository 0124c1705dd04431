import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nearfield.geometry import wavelength_m
from nearfield.propagator import Grid, IntensityImage
from nearfield.simulator import (
    Material,
    ThicknessMap,
    acquire_stack,
    add_noise,
    default_scenario,
    disk_phantom,
    distance_for_fresnel,
    exit_wave,
    random_spheres,
    siemens_star,
    sphere_projection,
    thickness_for_phase,
)

LAM = wavelength_m(17.0)


def test_star_sector_parity():
    n, p = 128, 1e-6
    g = Grid(n, p)
    t = siemens_star(g, spokes=4, thickness=2e-6)
    c = (n - 1) / 2
    half = n * p / 2
    r_mid = (0.1 + 0.8) / 2 * half / p
    # polar angle slightly above 0 (rows grow downwards, arctan2 uses +row)
    y, x = c + 3, c + r_mid
    assert t.values[int(round(y)), int(round(x))] == pytest.approx(2e-6)
    a = np.pi / 4 + 0.1
    y, x = c + r_mid * np.sin(a), c + r_mid * np.cos(a)
    assert t.values[int(round(y)), int(round(x))] == 0


def test_star_area_fraction():
    n, p = 512, 1e-6
    t = siemens_star(Grid(n, p), spokes=16, thickness=1.0)
    half = n * p / 2
    r_in, r_out = 0.1 * half / p, 0.8 * half / p
    annulus = np.pi * (r_out**2 - r_in**2)
    assert t.values.sum() / annulus == pytest.approx(0.5, abs=0.01)


def test_star_edge_cases():
    g = Grid(32, 1e-6)
    assert not siemens_star(g, r_inner=5e-6, r_outer=5e-6).values.any()
    with pytest.raises(ValueError):
        siemens_star(g, spokes=5)
    with pytest.raises(ValueError):
        siemens_star(g, r_inner=10e-6, r_outer=5e-6)
    with pytest.raises(ValueError):
        siemens_star(g, r_outer=1.0)


def test_disks():
    n, p = 64, 1e-6
    g = Grid(n, p)
    one = disk_phantom(g, [((0.0, 0.0), n * p / 4, 3e-6)]).values
    assert one[n // 2, n // 2] == pytest.approx(3e-6)
    assert one[0, 0] == 0
    a = ((-15e-6, -15e-6), 6e-6, 1e-6)
    b = ((15e-6, 15e-6), 6e-6, 2e-6)
    both = disk_phantom(g, [a, b]).values
    np.testing.assert_allclose(both, disk_phantom(g, [a]).values + disk_phantom(g, [b]).values)
    overlap = disk_phantom(g, [((0.0, 0.0), 8e-6, 1e-6), ((2e-6, 0.0), 8e-6, 1e-6)]).values
    assert overlap[n // 2, n // 2] == pytest.approx(2e-6)
    with pytest.raises(ValueError):
        disk_phantom(g, [((0.0, 0.0), 0.0, 1e-6)])


def test_thickness_map_validation():
    with pytest.raises(ValueError):
        ThicknessMap(np.full((4, 4), -1.0), 1e-6)
    with pytest.raises(ValueError):
        Material(-1e-6, 0.0)
    with pytest.raises(ValueError):
        Material(0.0, 0.0)
    assert Material(1e-6, 0.0).delta_beta == math.inf


def test_exit_wave_examples():
    zero = ThicknessMap(np.zeros((8, 8)), 1e-6)
    w, phi, b = exit_wave(zero, Material(1e-6, 1e-8), LAM)
    assert np.all(w.values == 1)
    t = ThicknessMap(np.full((8, 8), 1e-6), 1e-6)
    w, phi, b = exit_wave(t, Material(1e-6, 0.0), 0.1e-9)
    np.testing.assert_allclose(np.abs(w.values), 1.0, atol=1e-15)
    # -(2 pi / 1e-10 m) * 1e-6 * 1e-6 m
    assert phi[0, 0] == pytest.approx(-0.06283185307179587, rel=1e-12)


@given(st.floats(1e-8, 1e-5), st.floats(1e-10, 1e-6))
def test_exit_wave_invariants(delta, beta):
    t = siemens_star(Grid(16, 1e-6), spokes=4, thickness=2e-6)
    w, phi, b = exit_wave(t, Material(delta, beta), LAM)
    amp = np.abs(w.values)
    assert np.all((amp > 0) & (amp <= 1))
    inside = t.values > 0
    assert np.all(amp[~inside] == 1)
    np.testing.assert_allclose(b[inside] / -phi[inside], beta / delta, rtol=1e-12)


def test_acquire_contact_plane():
    t = siemens_star(Grid(32, 1e-6), spokes=8, thickness=1e-6)
    m = Material(1e-6, 1e-7)
    s = acquire_stack(t, m, 17.0, [(math.inf, 0.0)])
    np.testing.assert_allclose(s.images[0].values, np.exp(-2 * s.b), atol=1e-14)
    s = acquire_stack(t, Material(1e-6, 0.0), 17.0, [(math.inf, 0.0)])
    np.testing.assert_allclose(s.images[0].values, 1.0, atol=1e-14)


def test_acquire_sorted_and_distinct():
    t = siemens_star(Grid(32, 1e-6), spokes=8, thickness=1e-6)
    m = Material(1e-6, 1e-8)
    s = acquire_stack(t, m, 17.0, [(math.inf, 0.1), (math.inf, 0.01), (math.inf, 0.05)])
    assert list(s.distances) == [0.01, 0.05, 0.1]
    with pytest.raises(ValueError):
        acquire_stack(t, m, 17.0, [(math.inf, 0.1), (math.inf, 0.1)])
    with pytest.raises(ValueError):
        acquire_stack(t, m, 17.0, [])


def test_contrast_grows_toward_holographic():
    sc = default_scenario(size=128)
    lam = sc.wavelength
    d_hi = distance_for_fresnel(10, 1e-6, lam)
    d_lo = distance_for_fresnel(0.1, 1e-6, lam)
    s = acquire_stack(sc.thickness, sc.material, sc.energy, [(math.inf, d_hi), (math.inf, d_lo)])
    assert s.images[1].values.std() > s.images[0].values.std()


def test_acquire_cone_beam_resample():
    t = siemens_star(Grid(64, 0.5e-6), spokes=8, thickness=1e-6)
    m = Material(1e-6, 1e-8)
    s = acquire_stack(t, m, 17.0, [(0.1, 0.1), (0.2, 0.1)], detector_pixel=1e-6, resample=True)
    # sorted by effective distance: D = 0.05 (M = 2) before D = 0.0667 (M = 1.5)
    assert [g.magnification for g in s.geometries] == pytest.approx([2.0, 1.5])
    assert s.images[0].pixel == pytest.approx(1e-6 / 2.0)
    assert len(s.truth) == 2
    with pytest.raises(ValueError):
        acquire_stack(t, m, 17.0, [(0.1, 0.1)], resample=True)


def test_noise():
    img = IntensityImage(np.full((64, 64), 0.8), 1e-6, 0.05, LAM)
    hi = add_noise(img, 1e8, seed=3).values
    assert np.sqrt(np.mean((hi - 0.8) ** 2)) / 0.8 < 2e-4
    a = add_noise(img, 1000, seed=7).values
    assert np.array_equal(a, add_noise(img, 1000, seed=7).values)
    assert not np.array_equal(a, add_noise(img, 1000, seed=8).values)
    sigma = np.sqrt(0.8 / 1000 / a.size)
    assert abs(a.mean() - 0.8) < 3 * sigma
    with pytest.raises(ValueError):
        add_noise(img, 0, seed=1)


def test_default_scenario():
    sc = default_scenario()
    w, phi, _ = exit_wave(sc.thickness, sc.material, sc.wavelength)
    assert phi.min() == pytest.approx(-0.1, rel=1e-12)
    assert sc.material.delta_beta == pytest.approx(100)
    chi_nyq = [np.pi * sc.wavelength * d / (4 * 1e-12) for _, d in sc.positions]
    assert 0.5 <= min(chi_nyq) and max(chi_nyq) <= 6
    assert thickness_for_phase(0.1, sc.material, sc.wavelength) == pytest.approx(
        sc.thickness.values.max())


def test_distance_for_fresnel_roundtrip():
    from nearfield.geometry import fresnel_number

    d = distance_for_fresnel(2.0, 1e-6, LAM)
    assert fresnel_number(1e-6, LAM, d) == pytest.approx(2.0)


def test_sphere_projection():
    n, p = 64, 1e-6
    g = Grid(n, p)
    r = 10e-6
    t = sphere_projection(g, [((0.0, 0.0, 0.0), r)], 0.3).values
    assert t.max() == pytest.approx(2 * r, rel=0.02)
    # projected volume equals the sphere volume
    assert t.sum() * p**2 == pytest.approx(4 / 3 * np.pi * r**3, rel=0.01)
    off = [((12e-6, 0.0, 5e-6), 6e-6)]
    a = sphere_projection(g, off, 0.0).values
    b = sphere_projection(g, off, np.pi).values
    np.testing.assert_allclose(a, b[:, ::-1], atol=1e-12)


def test_random_spheres_deterministic():
    g = Grid(64, 1e-6)
    s1 = random_spheres(g, 5, seed=4)
    assert s1 == random_spheres(g, 5, seed=4)
    half = 32e-6
    for (x, y, z), r in s1:
        assert np.hypot(x, z) + r <= 0.8 * half + 1e-18
