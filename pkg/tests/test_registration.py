import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from nearfield.metrics import nrmse
from nearfield.propagator import IntensityImage, IntensityStack
from nearfield.registration import (
    RegistrationError,
    align_stack,
    mutual_information,
    read_shift_table,
    register_translation,
    rescale_image,
    rescale_to_common,
    shift_table,
)
from nearfield.simulator import acquire_stack, default_scenario

LAM = 7.293188e-11


def textured(seed, n=96):
    rng = np.random.default_rng(seed)
    return gaussian_filter(rng.standard_normal((n, n)), 2.0, mode="wrap")


def blob(n=64, sigma=8.0):
    y, x = np.mgrid[:n, :n] - (n - 1) / 2
    return np.exp(-(x**2 + y**2) / (2 * sigma**2))


def img(values, pixel=1e-6, d=0.01):
    return IntensityImage(values, pixel, d, LAM)


def test_rescale_identity_constant_and_roundtrip():
    b = blob()
    assert rescale_image(img(b), 1e-6).values is b
    const = rescale_image(img(np.full((32, 32), 0.37)), 0.5e-6).values
    assert np.all(const == 0.37)
    # magnifying keeps the array shape, so the blob must fit the central half
    small = blob(sigma=4.0)
    up = rescale_image(img(small), 0.5e-6)
    back = rescale_image(up, 1e-6)
    assert nrmse(back.values, small) < 0.02
    assert up.meta["scale"] == 2.0


def test_rescale_rejects_suspicious_factor():
    with pytest.raises(RegistrationError):
        rescale_image(img(blob()), 1e-6 / 9)
    with pytest.raises(RegistrationError):
        rescale_image(img(blob()), 0.0)


def test_rescale_to_common():
    a = img(blob(), 1e-6)
    b = IntensityImage(blob(), 2e-6, 0.02, LAM)
    mixed = IntensityStack([a, b])
    assert mixed.pixel is None
    with pytest.raises(ValueError):
        mixed.grid
    out = rescale_to_common(mixed, 1e-6)
    assert out.pixel == 1e-6 and all(im.pixel == 1e-6 for im in out)


def test_register_identity():
    a = textured(0)
    r = register_translation(a, a, radius=5)
    assert r.shift == (0.0, 0.0)
    assert isinstance(r.shift[0], float)
    assert r.score == pytest.approx(mutual_information(a, a))


@pytest.mark.parametrize("metric", ["mutual_information", "phase_correlation"])
def test_register_circular_shift(metric):
    a = textured(1)
    moved = np.roll(a, (3, -2), axis=(0, 1))
    r = register_translation(a, moved, metric=metric, radius=6)
    assert r.shift[0] == pytest.approx(3, abs=0.25)
    assert r.shift[1] == pytest.approx(-2, abs=0.25)
    assert r.metric == metric


def test_register_contrast_inversion_mi():
    a = textured(2)
    moved = 1 - np.roll(a, (3, -2), axis=(0, 1))
    r = register_translation(a, moved, metric="mi", radius=6)
    assert abs(r.shift[0] - 3) <= 0.5 and abs(r.shift[1] + 2) <= 0.5


@given(st.integers(-4, 4), st.integers(-4, 4), st.integers(0, 1000))
def test_antisymmetry(dy, dx, seed):
    a = textured(seed, 64)
    b = np.roll(a, (dy, dx), axis=(0, 1))
    ab = register_translation(a, b, radius=5).shift
    ba = register_translation(b, a, radius=5).shift
    assert abs(ab[0] + ba[0]) <= 0.5 and abs(ab[1] + ba[1]) <= 0.5


@given(st.integers(0, 1000))
def test_mi_invariant_under_monotone_remap(seed):
    a = textured(seed, 64)
    b = np.roll(a, (2, 1), axis=(0, 1))
    plain = register_translation(a, b, radius=4).shift
    remapped = register_translation(a, np.exp(3 * b), radius=4).shift
    assert np.round(plain).tolist() == np.round(remapped).tolist() == [2, 1]


def test_register_errors():
    a = textured(0, 32)
    with pytest.raises(RegistrationError):
        register_translation(a, a[:16], radius=2)
    with pytest.raises(RegistrationError):
        register_translation(a, a, radius=0)
    with pytest.raises(RegistrationError):
        register_translation(a, a, radius=20)
    with pytest.raises(RegistrationError):
        register_translation(a, a, metric="ssd", radius=2)


def test_tie_break_prefers_small_shift():
    const = np.ones((32, 32))
    assert register_translation(const, const, radius=3).shift == (0.0, 0.0)


def test_mutual_information_basics():
    a = textured(4)
    assert mutual_information(a, a) > mutual_information(a, textured(5))
    assert mutual_information(np.ones((8, 8)), a[:8, :8]) == pytest.approx(0.0, abs=1e-12)


@pytest.fixture(scope="module")
def sim_stack():
    sc = default_scenario(size=128)
    return sc.acquire().stack


def test_align_clean_stack(sim_stack):
    _, results = align_stack(sim_stack, radius=5)
    assert len(results) == 3
    for r in results:
        assert abs(r.shift[0]) < 0.3 and abs(r.shift[1]) < 0.3


def test_align_injected_shifts(sim_stack):
    rng = np.random.default_rng(11)
    shifts = rng.integers(-5, 6, size=(3, 2))
    images = [sim_stack[0]]
    for im, s in zip(sim_stack.images[1:], shifts):
        images.append(im.with_values(np.roll(im.values, tuple(s), axis=(0, 1))))
    stack = IntensityStack(images)
    aligned, results = align_stack(stack, radius=7)
    for r, s in zip(results, shifts):
        assert np.all(np.abs(np.asarray(r.shift) - s) < 0.3)
    assert aligned[0] is stack[0]
    assert aligned[1].meta["shift"] == results[0].shift


def test_align_single_image(sim_stack):
    single = IntensityStack([sim_stack[0]])
    out, results = align_stack(single)
    assert out is single and results == []


def test_align_rescales_magnified_images():
    sc = default_scenario(size=96)
    sim = acquire_stack(sc.thickness, sc.material, sc.energy, [(0.1, 0.005), (0.1, 0.012)],
                        detector_pixel=1.05e-6, resample=True)
    aligned, results = align_stack(sim.stack, radius=4)
    ref_pixel = sim.images[0].pixel
    assert all(math.isclose(im.pixel, ref_pixel) for im in aligned)
    assert results[0].scale == pytest.approx(sim.images[1].pixel / ref_pixel)
    assert np.all(np.abs(results[0].shift) < 0.5)


def test_shift_table_roundtrip():
    rows = [{"projection": 0, "position": 1, "dy": 0.25, "dx": -1.5, "scale": 1.0,
             "score": 0.8, "metric": "mutual_information"}]
    text = shift_table(rows)
    assert text.splitlines()[0].split("\t")[0] == "projection"
    assert read_shift_table(text) == rows
