import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nearfield.propagator import (
    AliasingWarning,
    Grid,
    IntensityImage,
    IntensityStack,
    WaveField,
    apply_filter,
    check_sampling,
    ctf_forward,
    fresnel_transfer,
    frequency_grid,
    intensity,
    propagate,
    spectral_phase,
    tie_forward,
)

LAM = 7.293188e-11
PIXEL = 1e-6


def random_field(seed, n=64):
    r = np.random.default_rng(seed)
    return WaveField(r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)), PIXEL, LAM)


def single_mode(n, k, eps):
    x = np.arange(n)
    f0 = k / (n * PIXEL)
    return eps * np.cos(2 * np.pi * k * x / n)[None, :] * np.ones((n, 1)), f0


def test_frequency_grid_examples():
    fx, fy = frequency_grid(Grid(2, 1.0))
    assert list(fx[0]) == [0.0, -0.5]
    assert list(fy[:, 0]) == [0.0, -0.5]
    fx, _ = frequency_grid(Grid(4, 0.5))
    assert list(fx[0]) == [0.0, 0.5, -1.0, -0.5]
    fx, fy = frequency_grid(Grid(8, 2e-6))
    assert np.abs(fx).max() == pytest.approx(1 / (2 * 2e-6))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1, 1.0)
    with pytest.raises(ValueError):
        Grid(4, 0.0)
    assert Grid((4, 6), 1.0).shape == (4, 6)


def test_transfer_function_properties():
    g = Grid(32, PIXEL)
    h = fresnel_transfer(LAM, 0.05, g)
    assert h[0, 0] == 1
    np.testing.assert_allclose(np.abs(h), 1.0, rtol=0, atol=1e-15)
    assert np.all(fresnel_transfer(LAM, 0.0, g) == 1)


def test_chi_at_nyquist():
    g = Grid(64, PIXEL)
    chi = spectral_phase(LAM, 0.1, g)
    assert chi[0, 32] == pytest.approx(np.pi * LAM * 0.1 / (4 * PIXEL**2), rel=1e-12)
    assert chi.min() == 0 and chi[0, 0] == 0


def test_propagate_identity_and_plane_wave():
    w = random_field(0)
    np.testing.assert_allclose(propagate(w, 0.0).values, w.values, atol=1e-12)
    plane = WaveField(np.full((32, 32), 0.7 - 0.2j), PIXEL, LAM)
    np.testing.assert_allclose(propagate(plane, 0.3).values, plane.values, atol=1e-14)


@given(st.integers(0, 2**31), st.floats(-0.2, 0.2))
def test_unitarity(seed, d):
    w = random_field(seed, 32)
    before = np.sum(np.abs(w.values) ** 2)
    after = np.sum(np.abs(propagate(w, d).values) ** 2)
    assert abs(after - before) / before <= 1e-12


@given(st.integers(0, 2**31), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
def test_semigroup_and_inverse(seed, d1, d2):
    w = random_field(seed, 32)
    both = propagate(propagate(w, d1), d2).values
    direct = propagate(w, d1 + d2).values
    assert np.linalg.norm(both - direct) / np.linalg.norm(direct) <= 1e-10
    back = propagate(propagate(w, d1), -d1).values
    assert np.linalg.norm(back - w.values) / np.linalg.norm(w.values) <= 1e-10


def test_propagate_tracks_distance_and_padding():
    w = random_field(3, 32)
    out = propagate(w, 0.02, pad="auto")
    assert out.values.shape == (32, 32)
    assert out.distance == pytest.approx(0.02)


def test_apply_filter_shape_error():
    with pytest.raises(ValueError):
        apply_filter(np.ones((4, 4)), np.ones((8, 8)))


def test_aliasing_warning():
    with pytest.warns(AliasingWarning):
        check_sampling(1e-10, 10.0, Grid(64, 1e-6))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_sampling(LAM, 0.01, Grid(64, 1e-6))


def test_intensity():
    assert np.all(intensity(WaveField(np.ones((4, 4)), 1.0, LAM)).values == 1)
    phi = np.random.default_rng(0).uniform(-3, 3, (8, 8))
    np.testing.assert_allclose(intensity(WaveField(np.exp(1j * phi), 1.0, LAM)).values, 1.0,
                               atol=1e-15)
    w = random_field(5, 16)
    assert intensity(w).values.sum() == pytest.approx(np.sum(np.abs(w.values) ** 2), rel=1e-15)


def test_ctf_forward_null_object():
    z = np.zeros((16, 16))
    assert np.all(ctf_forward(z, z, LAM, 0.05, PIXEL).values == 1)


def test_ctf_forward_single_mode():
    n, eps = 64, 1e-3
    phi, f0 = single_mode(n, 5, eps)
    d = 0.05
    chi = np.pi * LAM * d * f0**2
    out = ctf_forward(phi, None, LAM, d, PIXEL).values
    expected = 1 + 2 * eps * np.sin(chi) * phi / eps
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_ctf_forward_mean_and_linearity(rng):
    phi1, phi2 = rng.standard_normal((2, 32, 32)) * 0.01
    b = rng.uniform(0, 0.01, (32, 32))
    out = ctf_forward(phi1, b, LAM, 0.05, PIXEL).values
    assert out.mean() == pytest.approx(1 - 2 * b.mean(), abs=1e-14)
    lhs = ctf_forward(2 * phi1 - 3 * phi2, None, LAM, 0.05, PIXEL).values - 1
    rhs = 2 * (ctf_forward(phi1, None, LAM, 0.05, PIXEL).values - 1) \
        - 3 * (ctf_forward(phi2, None, LAM, 0.05, PIXEL).values - 1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-15)


def test_ctf_forward_matches_fresnel_for_weak_object():
    n, eps = 64, 1e-3
    phi, _ = single_mode(n, 9, eps)
    d = 0.08
    linear = ctf_forward(phi, None, LAM, d, PIXEL).values - 1
    full = intensity(propagate(WaveField(np.exp(1j * phi), PIXEL, LAM), d)).values - 1
    # compare the first-harmonic sideband, second harmonics are O(eps^2)
    a = np.fft.fft2(linear)[0, 9]
    b = np.fft.fft2(full)[0, 9]
    assert abs(a - b) / abs(a) < 1e-4


def test_tie_forward_examples():
    n = 64
    assert np.allclose(tie_forward(np.full((n, n), 0.3), None, LAM, 0.05, PIXEL).values, 1.0)
    i0 = 1 + 0.1 * np.random.default_rng(0).random((n, n))
    np.testing.assert_allclose(tie_forward(np.zeros((n, n)), i0, LAM, 0.05, PIXEL).values, i0)
    eps = 1e-3
    phi, f0 = single_mode(n, 4, eps)
    out = tie_forward(phi, None, LAM, 0.05, PIXEL).values
    expected = 1 + 2 * np.pi * LAM * 0.05 * f0**2 * phi
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_tie_agrees_with_ctf_at_small_chi(rng):
    n = 64
    from scipy.ndimage import gaussian_filter

    phi = gaussian_filter(rng.standard_normal((n, n)), 3, mode="wrap") * 0.05
    f_max = np.sqrt(2) / (2 * PIXEL)
    d = 0.2 / (np.pi * LAM * f_max**2)
    tie = tie_forward(phi, None, LAM, d, PIXEL).values - 1
    ctf = ctf_forward(phi, None, LAM, d, PIXEL).values - 1
    assert np.linalg.norm(tie - ctf) / np.linalg.norm(ctf) < 0.02


def test_intensity_stack():
    imgs = [IntensityImage(np.ones((8, 8)), PIXEL, d, LAM) for d in (0.1, 0.05)]
    s = IntensityStack(imgs)
    assert len(s) == 2 and s.shape == (8, 8) and s.data.shape == (2, 8, 8)
    assert list(s.distances) == [0.1, 0.05]
    with pytest.raises(ValueError):
        IntensityStack([])
    with pytest.raises(ValueError):
        IntensityStack([imgs[0], IntensityImage(np.ones((4, 4)), PIXEL, 0.2, LAM)])
    mixed = IntensityStack([imgs[0], IntensityImage(np.ones((8, 8)), 2 * PIXEL, 0.2, LAM)])
    assert mixed.pixel is None
    with pytest.raises(ValueError):
        mixed.grid
    with pytest.raises(ValueError):
        IntensityStack(mixed.images, pixel=PIXEL)
    s2 = IntensityStack.from_arrays(np.ones((8, 8)), [0.1], PIXEL, LAM)
    assert len(s2) == 1
