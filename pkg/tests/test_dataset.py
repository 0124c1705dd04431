import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nearfield.dataset import (
    CorruptImageError,
    DatasetError,
    IncompleteDatasetError,
    ManifestError,
    Position,
    ProjectionDataset,
    QualityError,
    corrected_image,
    flat_dark_correct,
    load_image,
    manifest_dict,
    read_image,
    read_manifest,
    store_image,
    write_image,
    write_manifest,
)
from nearfield.propagator import IntensityImage

MINIMAL = """
energy = 17.0
detector_pixel = 1e-6
n_projections = 1
shape = [4, 6]

[[positions]]
z1 = inf
z2 = 0.05
raw = "raw/{index:05d}.f32"
"""


def make_dataset(root, n_proj=3, positions=2, encoding="raw", flats=False):
    ext = ".tif" if encoding == "tiff" else ".f32"
    pos = []
    for p in range(positions):
        extra = {"flat": f"flat/p{p}{ext}", "dark": f"dark/p{p}{ext}"} if flats else {}
        pos.append(Position(0.5, 0.01 * (p + 1), f"raw/p{p}/{{index:05d}}{ext}", **extra))
    ds = ProjectionDataset(root, 17.0, 1e-6, n_proj, (8, 10), pos, encoding,
                           truth={"phase": "truth/{index:05d}.f32"}, extra={"seed": 1})
    write_manifest(ds)
    rng = np.random.default_rng(0)
    for p in range(positions):
        for i in range(n_proj):
            store_image(ds, p, i, "raw", rng.random((8, 10)))
        if flats:
            store_image(ds, p, 0, "flat", 1 + rng.random((8, 10)))
            store_image(ds, p, 0, "dark", 0.01 * rng.random((8, 10)))
    for i in range(n_proj):
        write_image(ds.truth_path("phase", i), rng.random((8, 10)))
    return ds


def test_raw_roundtrip_bit_exact(tmp_path, rng):
    a = rng.standard_normal((7, 5)).astype(np.float32)
    write_image(tmp_path / "a.f32", a)
    b = read_image(tmp_path / "a.f32", (7, 5))
    assert b.dtype == np.float32 and np.array_equal(a.view(np.uint32), b.view(np.uint32))
    assert (tmp_path / "a.f32").stat().st_size == 7 * 5 * 4


@pytest.mark.parametrize("compression", [None, "deflate"])
def test_tiff_roundtrip_and_matches_raw(tmp_path, rng, compression):
    a = rng.standard_normal((9, 4)).astype(np.float32)
    write_image(tmp_path / "a.tif", a, compression=compression)
    write_image(tmp_path / "a.f32", a)
    t = read_image(tmp_path / "a.tif")
    assert np.array_equal(t, a)
    assert np.array_equal(t, read_image(tmp_path / "a.f32", (9, 4)))


def test_corrupt_images(tmp_path):
    (tmp_path / "short.f32").write_bytes(b"\0" * 10)
    with pytest.raises(CorruptImageError):
        read_image(tmp_path / "short.f32", (2, 2))
    (tmp_path / "bad.tif").write_bytes(b"not a tiff")
    with pytest.raises(CorruptImageError):
        read_image(tmp_path / "bad.tif")
    with pytest.raises(ValueError):
        write_image(tmp_path / "x.f32", np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        write_image(tmp_path / "x.f32", np.zeros((2, 2)), compression="deflate")


def test_minimal_manifest(tmp_path):
    (tmp_path / "dataset.toml").write_text(MINIMAL)
    write_image(tmp_path / "raw/00000.f32", np.ones((4, 6)))
    ds = read_manifest(tmp_path)
    assert not ds.is_corrected
    assert ds.shape == (4, 6) and ds.positions[0].z1 == math.inf
    img = load_image(ds, 0, 0)
    assert img.distance == 0.05 and img.values.shape == (4, 6)


def test_missing_file_reported(tmp_path):
    (tmp_path / "dataset.toml").write_text(MINIMAL)
    with pytest.raises(IncompleteDatasetError) as err:
        read_manifest(tmp_path)
    assert "raw/00000.f32" in str(err.value)
    assert err.value.missing == [tmp_path / "raw/00000.f32"]
    assert read_manifest(tmp_path, check_files=False).n_projections == 1


def test_manifest_parse_error_has_location(tmp_path):
    (tmp_path / "dataset.toml").write_text("energy = \n")
    with pytest.raises(ManifestError, match="line 1"):
        read_manifest(tmp_path)


@pytest.mark.parametrize("edit,msg", [
    (("energy = 17.0", ""), "energy"),
    (("energy = 17.0", "energy = -1.0"), "positive"),
    (("energy = 17.0", 'energy = "x"'), "energy"),
    (("n_projections = 1", "n_projections = 0"), "n_projections"),
    (("shape = [4, 6]", "shape = [4]"), "shape"),
    (("z1 = inf", "z1 = 0.0"), "z1"),
    (('raw = "raw/{index:05d}.f32"', 'raw = "raw/{frame}.f32"'), "template"),
    (("shape = [4, 6]", 'shape = [4, 6]\nencoding = "png"'), "encoding"),
    (("shape = [4, 6]", "shape = [4, 6]\nangles = [0.0, 1.0]"), "angles"),
])
def test_manifest_validation(tmp_path, edit, msg):
    (tmp_path / "dataset.toml").write_text(MINIMAL.replace(*edit))
    with pytest.raises(ManifestError, match=msg):
        read_manifest(tmp_path, check_files=False)


def test_simulated_metadata_roundtrip(tmp_path):
    ds = make_dataset(tmp_path, flats=True)
    back = read_manifest(tmp_path)
    assert back == ds
    assert manifest_dict(back) == manifest_dict(ds)
    write_manifest(back)
    assert read_manifest(tmp_path) == ds


@given(st.floats(1.0, 100.0), st.floats(1e-7, 1e-4), st.integers(1, 50),
       st.lists(st.tuples(st.one_of(st.just(math.inf), st.floats(0.01, 10.0)),
                          st.floats(0.0, 5.0)), min_size=1, max_size=4))
def test_manifest_idempotent(tmp_path_factory, energy, pixel, n, zs):
    root = tmp_path_factory.mktemp("m")
    pos = [Position(z1, z2, f"raw/p{i}/{{index}}.f32") for i, (z1, z2) in enumerate(zs)]
    ds = ProjectionDataset(root, energy, pixel, n, (4, 4), pos)
    write_manifest(ds)
    assert read_manifest(root, check_files=False) == ds


def test_load_image_geometry_and_errors(tmp_path):
    ds = make_dataset(tmp_path)
    img = load_image(ds, 1, 2)
    eff = ds.effective(1)
    assert img.pixel == eff.effective_pixel and img.distance == eff.effective_distance
    assert img.meta["magnification"] == pytest.approx((0.5 + 0.02) / 0.5)
    assert not img.values.flags.writeable
    assert np.array_equal(load_image(ds, 1, 2).values, img.values)
    with pytest.raises(IndexError):
        load_image(ds, 2, 0)
    with pytest.raises(IndexError):
        load_image(ds, 0, 3)
    with pytest.raises(DatasetError):
        load_image(ds, 0, 0, "flat")
    with pytest.raises(DatasetError):
        load_image(ds, 0, 0, "gain")


def test_cache_is_bounded_and_shared(tmp_path):
    ds = make_dataset(tmp_path, n_proj=5, positions=1)
    ds.cache_size = 2
    a = ds.read_cached(ds.path(0, 0))
    assert ds.read_cached(ds.path(0, 0)) is a
    for i in range(1, 4):
        ds.read_cached(ds.path(0, i))
    assert len(ds._cache) == 2
    ds.clear_cache()
    b = ds.read_cached(ds.path(0, 0))
    assert b is not a and np.array_equal(a, b)


def test_concurrent_reads(tmp_path):
    ds = make_dataset(tmp_path, n_proj=6, positions=2)
    ds.cache_size = 3
    expected = {(p, i): np.array(load_image(ds, p, i).values) for p in range(2) for i in range(6)}
    errors = []

    def worker(seed):
        r = np.random.default_rng(seed)
        for _ in range(50):
            p, i = int(r.integers(2)), int(r.integers(6))
            if not np.array_equal(load_image(ds, p, i).values, expected[p, i]):
                errors.append((p, i))

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_tiff_dataset(tmp_path):
    ds = make_dataset(tmp_path, encoding="tiff", positions=1, n_proj=1)
    assert read_manifest(tmp_path).encoding == "tiff"
    assert load_image(ds, 0, 0).values.shape == (8, 10)


def test_flat_dark_examples(rng):
    flat = 1 + rng.random((16, 16))
    dark = 0.05 * rng.random((16, 16))
    out, n = flat_dark_correct(flat, flat)
    assert n == 0 and np.allclose(out, 1.0)
    out, _ = flat_dark_correct(dark, flat, dark)
    assert np.all(out == 0)
    truth = rng.uniform(0.5, 1.5, (16, 16))
    out, _ = flat_dark_correct((flat - dark) * truth + dark, flat, dark)
    assert np.max(np.abs(out - truth) / truth) <= 1e-6


def test_flat_dark_repairs_few_bad_pixels(rng):
    flat = 1 + 0.01 * rng.random((32, 32))
    flat[5, 7] = 0.0
    flat[20, 3] = -1.0
    out, n = flat_dark_correct(flat.copy(), flat)
    assert n == 2 and np.all(np.isfinite(out))
    assert out[5, 7] == 0.0
    img = IntensityImage(np.ones((32, 32)), 1e-6, 0.01)
    res, _ = flat_dark_correct(img, np.ones((32, 32)))
    assert isinstance(res, IntensityImage)


def test_flat_dark_quality_error(rng):
    flat = np.ones((10, 10))
    flat[0, :2] = 0
    with pytest.raises(QualityError):
        flat_dark_correct(np.ones((10, 10)), flat)
    with pytest.raises(ValueError):
        flat_dark_correct(np.ones((4, 4)), np.ones((5, 5)))


def test_corrected_image(tmp_path):
    ds = make_dataset(tmp_path, flats=True)
    raw = read_image(ds.path(1, 2), ds.shape)
    flat = read_image(ds.path(1, 0, "flat"), ds.shape)
    dark = read_image(ds.path(1, 0, "dark"), ds.shape)
    out = corrected_image(ds, 1, 2)
    np.testing.assert_allclose(out.values, (raw - dark) / (flat - dark.astype(float)), rtol=1e-6)
    plain = make_dataset(tmp_path / "noflat")
    assert np.array_equal(corrected_image(plain, 0, 0).values, read_image(plain.path(0, 0), (8, 10)))
