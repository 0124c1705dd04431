"""Manifest-backed projection datasets.

A dataset is a directory with a ``dataset.toml`` manifest::

    format = "nearfield-dataset"
    version = 1
    energy = 17.0              # keV
    detector_pixel = 1e-06     # m
    n_projections = 4
    shape = [256, 256]         # rows, cols
    encoding = "raw"           # default encoding for written images: raw | tiff
    corrected = false          # true when raw images are already flat/dark corrected
    angles = [0.0, 0.785]      # optional, radians; default uniform on [0, pi)

    [[positions]]              # one table per sample position
    z1 = inf                   # source-sample distance, inf for a parallel beam
    z2 = 0.01                  # sample-detector distance
    raw = "raw/p0/{index:05d}.f32"
    flat = "flat/p0.f32"       # optional; may also contain {index}
    dark = "dark/p0.f32"       # optional

    [truth]                    # optional simulator ground truth
    phase = "truth/phase_{index:05d}.f32"

Paths are relative to the dataset directory and ``{index}`` is the
projection index. Images are row-major with the origin at the top-left.
``.tif``/``.tiff`` files are single-image 32-bit float TIFFs (uncompressed or
deflate); anything else is headerless little-endian float32.
"""

from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .geometry import AcquisitionGeometry, effective_geometry, wavelength_m
from .propagator import IntensityImage

log = logging.getLogger(__name__)

MANIFEST = "dataset.toml"
FORMAT = "nearfield-dataset"
KINDS = ("raw", "flat", "dark")
ENCODINGS = ("raw", "tiff")
DENOM_EPS = 1e-9
MAX_DEGENERATE = 0.01
DEFAULT_CACHE = 64


class DatasetError(Exception):
    """Base class for dataset problems."""


class ManifestError(DatasetError):
    pass


class IncompleteDatasetError(DatasetError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"{len(self.missing)} referenced file(s) missing: {shown}{more}")


class CorruptImageError(DatasetError):
    pass


class QualityError(DatasetError):
    pass


# -- image files ------------------------------------------------------------

def _is_tiff(path):
    return Path(path).suffix.lower() in (".tif", ".tiff")


def write_image(path, values, compression=None):
    """Write a 2D image as float32; TIFF when the suffix is .tif/.tiff, raw otherwise.

    ``compression`` may be ``"deflate"`` for TIFF files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    if _is_tiff(path):
        comp = {"deflate": "zlib", None: None, "none": None}[compression]
        tifffile.imwrite(path, arr, compression=comp)
    else:
        if compression not in (None, "none"):
            raise ValueError("raw float32 files are never compressed")
        arr.tofile(path)


def read_image(path, shape=None):
    """Read a float32 image; ``shape`` (rows, cols) is required for raw files."""
    path = Path(path)
    if _is_tiff(path):
        try:
            arr = tifffile.imread(path)
        except Exception as exc:  # tifffile raises assorted error types
            raise CorruptImageError(f"{path}: unreadable TIFF ({exc})") from exc
        if arr.ndim != 2:
            raise CorruptImageError(f"{path}: expected a single 2D image, got {arr.shape}")
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise CorruptImageError(f"{path}: shape {arr.shape}, manifest says {tuple(shape)}")
        return arr.astype(np.float32, copy=False)
    if shape is None:
        raise ValueError("raw images need an explicit shape")
    expected = int(shape[0]) * int(shape[1]) * 4
    size = path.stat().st_size
    if size != expected:
        raise CorruptImageError(f"{path}: {size} bytes, expected {expected} for shape {tuple(shape)}")
    return np.fromfile(path, dtype="<f4").reshape(shape)


# -- manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class Position:
    z1: float
    z2: float
    raw: str
    flat: str | None = None
    dark: str | None = None


@dataclass
class ProjectionDataset:
    root: Path
    energy: float
    detector_pixel: float
    n_projections: int
    shape: tuple
    positions: list
    encoding: str = "raw"
    corrected: bool = False
    angles: list | None = None
    truth: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    cache_size: int = field(default=DEFAULT_CACHE, compare=False, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self.shape = tuple(int(s) for s in self.shape)
        self._cache = OrderedDict()
        self._lock = threading.Lock()
        self._warned = set()

    @property
    def is_corrected(self):
        return self.corrected

    @property
    def wavelength(self):
        return wavelength_m(self.energy)

    @property
    def n_positions(self):
        return len(self.positions)

    def projection_angles(self):
        if self.angles is not None:
            return np.asarray(self.angles, dtype=float)
        return np.arange(self.n_projections) * np.pi / self.n_projections

    def geometry(self, position):
        pos = self.positions[position]
        return AcquisitionGeometry(self.energy, pos.z1, pos.z2, self.detector_pixel)

    def effective(self, position):
        return effective_geometry(self.geometry(position))

    def template(self, position, kind):
        if kind not in KINDS:
            raise DatasetError(f"unknown image kind {kind!r}; use one of {KINDS}")
        return getattr(self.positions[position], kind)

    def path(self, position, projection, kind="raw"):
        self._check_index(position, projection)
        tmpl = self.template(position, kind)
        if tmpl is None:
            raise DatasetError(f"position {position} declares no {kind} images")
        return self.root / tmpl.format(index=projection)

    def truth_path(self, key, projection):
        if key not in self.truth:
            raise DatasetError(f"dataset has no ground truth {key!r}")
        return self.root / self.truth[key].format(index=projection)

    def _check_index(self, position, projection):
        if not 0 <= position < len(self.positions):
            raise IndexError(f"position {position} out of range [0, {len(self.positions)})")
        if not 0 <= projection < self.n_projections:
            raise IndexError(f"projection {projection} out of range [0, {self.n_projections})")

    def referenced_files(self):
        files = []
        for p, pos in enumerate(self.positions):
            for kind in KINDS:
                tmpl = getattr(pos, kind)
                if tmpl is None:
                    continue
                names = {tmpl.format(index=i) for i in range(self.n_projections)}
                files.extend(sorted(names))
        return [self.root / f for f in dict.fromkeys(files)]

    def missing_files(self):
        return [f for f in self.referenced_files() if not f.exists()]

    def read_cached(self, path):
        key = str(path)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        arr = read_image(path, self.shape)
        arr.setflags(write=False)
        with self._lock:
            self._cache[key] = arr
            while len(self._cache) > max(self.cache_size, 0):
                self._cache.popitem(last=False)
        return arr

    def clear_cache(self):
        with self._lock:
            self._cache.clear()


def _require(table, key, types, where):
    if key not in table:
        raise ManifestError(f"{where}: missing required field '{key}'")
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, types):
        names = "/".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        raise ManifestError(f"{where}: field '{key}' must be {names}, got {value!r}")
    return value


def _template_ok(tmpl, where):
    try:
        tmpl.format(index=0)
    except (KeyError, IndexError, ValueError) as exc:
        raise ManifestError(f"{where}: bad file template {tmpl!r} ({exc})") from exc


def parse_manifest(data, root):
    """Validate a decoded manifest table and build a :class:`ProjectionDataset`."""
    where = str(Path(root) / MANIFEST)
    fmt = data.get("format", FORMAT)
    if fmt != FORMAT:
        raise ManifestError(f"{where}: unknown format {fmt!r}")
    energy = float(_require(data, "energy", (int, float), where))
    pixel = float(_require(data, "detector_pixel", (int, float), where))
    n_proj = _require(data, "n_projections", int, where)
    shape = _require(data, "shape", list, where)
    if energy <= 0 or pixel <= 0:
        raise ManifestError(f"{where}: energy and detector_pixel must be positive")
    if n_proj < 1:
        raise ManifestError(f"{where}: n_projections must be >= 1, got {n_proj}")
    if len(shape) != 2 or not all(isinstance(s, int) and s >= 2 for s in shape):
        raise ManifestError(f"{where}: shape must be [rows, cols] with each >= 2, got {shape}")
    encoding = data.get("encoding", "raw")
    if encoding not in ENCODINGS:
        raise ManifestError(f"{where}: encoding must be one of {ENCODINGS}, got {encoding!r}")
    corrected = data.get("corrected", False)
    if not isinstance(corrected, bool):
        raise ManifestError(f"{where}: 'corrected' must be true or false")
    raw_positions = _require(data, "positions", list, where)
    if not raw_positions:
        raise ManifestError(f"{where}: at least one [[positions]] entry is required")
    positions = []
    for i, tbl in enumerate(raw_positions):
        pw = f"{where}: positions[{i}]"
        if not isinstance(tbl, dict):
            raise ManifestError(f"{pw}: expected a table")
        z1 = float(_require(tbl, "z1", (int, float), pw))
        z2 = float(_require(tbl, "z2", (int, float), pw))
        if not (z1 > 0) or not (z2 >= 0) or math.isinf(z2):
            raise ManifestError(f"{pw}: need z1 > 0 (inf for parallel beam) and finite z2 >= 0")
        raw = _require(tbl, "raw", str, pw)
        _template_ok(raw, pw)
        opt = {}
        for kind in ("flat", "dark"):
            if kind in tbl:
                opt[kind] = _require(tbl, kind, str, pw)
                _template_ok(opt[kind], pw)
        positions.append(Position(z1, z2, raw, **opt))
    angles = data.get("angles")
    if angles is not None:
        if not isinstance(angles, list) or len(angles) != n_proj:
            raise ManifestError(f"{where}: 'angles' must list {n_proj} values")
        angles = [float(a) for a in angles]
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ManifestError(f"{where}: 'angles' must be strictly increasing")
    truth = data.get("truth", {})
    if not isinstance(truth, dict) or not all(isinstance(v, str) for v in truth.values()):
        raise ManifestError(f"{where}: [truth] must map names to file templates")
    extra = data.get("extra", {})
    return ProjectionDataset(Path(root), energy, pixel, n_proj, tuple(shape), positions,
                             encoding, corrected, angles, dict(truth), dict(extra))


def read_manifest(path, check_files=True):
    """Open a dataset from its directory or its ``dataset.toml``.

    Raises
    ------
    ManifestError
        Unparsable TOML (with the parser's line/column) or invalid fields.
    IncompleteDatasetError
        Referenced files are missing (``check_files=True``).
    """
    path = Path(path)
    manifest = path / MANIFEST if path.is_dir() else path
    if not manifest.exists():
        raise ManifestError(f"no manifest at {manifest}")
    try:
        with open(manifest, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{manifest}: {exc}") from exc
    ds = parse_manifest(data, manifest.parent)
    if check_files:
        missing = ds.missing_files()
        if missing:
            raise IncompleteDatasetError(missing)
    return ds


def manifest_dict(ds):
    data = {
        "format": FORMAT,
        "version": 1,
        "energy": float(ds.energy),
        "detector_pixel": float(ds.detector_pixel),
        "n_projections": int(ds.n_projections),
        "shape": [int(s) for s in ds.shape],
        "encoding": ds.encoding,
        "corrected": bool(ds.corrected),
    }
    if ds.angles is not None:
        data["angles"] = [float(a) for a in ds.angles]
    data["positions"] = []
    for pos in ds.positions:
        tbl = {"z1": float(pos.z1), "z2": float(pos.z2), "raw": pos.raw}
        if pos.flat is not None:
            tbl["flat"] = pos.flat
        if pos.dark is not None:
            tbl["dark"] = pos.dark
        data["positions"].append(tbl)
    if ds.truth:
        data["truth"] = dict(ds.truth)
    if ds.extra:
        data["extra"] = dict(ds.extra)
    return data


def write_manifest(ds):
    ds.root.mkdir(parents=True, exist_ok=True)
    path = ds.root / MANIFEST
    with open(path, "wb") as fh:
        tomli_w.dump(manifest_dict(ds), fh)
    return path


# -- loading and correction -------------------------------------------------

def store_image(ds, position, projection, kind, values, compression=None):
    path = ds.path(position, projection, kind)
    write_image(path, values, compression)
    return path


def load_image(ds, position, projection, kind="raw"):
    """Decode one image and attach the position's effective geometry.

    The returned array is read-only (it may be shared with the dataset's
    image cache).
    """
    path = ds.path(position, projection, kind)
    values = ds.read_cached(path)
    eff = ds.effective(position)
    return IntensityImage(values, eff.effective_pixel, eff.effective_distance, ds.wavelength,
                          meta={"position": position, "projection": projection, "kind": kind,
                                "magnification": eff.magnification})


def flat_dark_correct(raw, flat, dark=None):
    """``(raw - dark) / (flat - dark)`` with degenerate denominators repaired.

    Denominator pixels ``<= 1e-9`` are replaced by the 3x3 median of the
    denominator. Accepts arrays or :class:`IntensityImage` objects and
    returns ``(corrected, n_replaced)`` with ``corrected`` of the same kind
    as ``raw``.

    Raises
    ------
    QualityError
        More than 1% of the denominator pixels are degenerate.
    """
    from scipy.ndimage import median_filter

    r = np.asarray(getattr(raw, "values", raw), dtype=float)
    f = np.asarray(getattr(flat, "values", flat), dtype=float)
    d = np.zeros_like(r) if dark is None else np.asarray(getattr(dark, "values", dark), float)
    if not r.shape == f.shape == d.shape:
        raise ValueError(f"shape mismatch: raw {r.shape}, flat {f.shape}, dark {d.shape}")
    denom = f - d
    bad = ~(denom > DENOM_EPS)
    n_bad = int(bad.sum())
    if n_bad > MAX_DEGENERATE * denom.size:
        raise QualityError(
            f"{n_bad} of {denom.size} flat-dark pixels are <= {DENOM_EPS:g} (limit 1%)"
        )
    if n_bad:
        med = median_filter(denom, size=3, mode="nearest")
        fill = np.where(med > DENOM_EPS, med, np.median(denom[~bad]))
        denom = np.where(bad, fill, denom)
        log.info("flat/dark correction replaced %d degenerate pixels", n_bad)
    out = (r - d) / denom
    if isinstance(raw, IntensityImage):
        return raw.with_values(out), n_bad
    return out, n_bad


def corrected_image(ds, position, projection):
    """Flat/dark corrected intensity for one position and projection."""
    raw = load_image(ds, position, projection, "raw")
    pos = ds.positions[position]
    if ds.corrected or pos.flat is None:
        if not ds.corrected and position not in ds._warned:
            ds._warned.add(position)
            log.warning("position %d has no flat field; using raw intensities", position)
        return raw.with_values(np.array(raw.values, dtype=float))
    flat = load_image(ds, position, projection, "flat")
    dark = load_image(ds, position, projection, "dark") if pos.dark is not None else None
    out, _ = flat_dark_correct(raw, flat, dark)
    return out
