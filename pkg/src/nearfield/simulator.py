"""Synthetic phantoms and multi-distance acquisitions.

Phantom coordinates are measured in meters from the grid centre, which sits
at ``((rows - 1) / 2, (cols - 1) / 2)`` in pixel units; ``y`` increases with
the row index and polar angles are ``atan2(y, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._interp import zoom_about_center
from .geometry import AcquisitionGeometry, effective_geometry, wavelength_m
from .propagator import (
    Grid,
    IntensityImage,
    IntensityStack,
    WaveField,
    intensity,
    propagate,
)

OVERSAMPLE = 4


@dataclass(frozen=True)
class Material:
    delta: float
    beta: float

    def __post_init__(self):
        if self.delta < 0 or self.beta < 0:
            raise ValueError("delta and beta must be non-negative")
        if self.delta == 0 and self.beta == 0:
            raise ValueError("delta and beta cannot both be zero (vacuum)")

    @property
    def delta_beta(self):
        return self.delta / self.beta if self.beta > 0 else math.inf


@dataclass(frozen=True)
class ThicknessMap:
    """Projected thickness in m sampled on ``grid``."""

    values: np.ndarray
    pixel: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("thickness must be finite and non-negative")

    @property
    def grid(self):
        return Grid.like(self.values, self.pixel)


def _subpixel_coords(grid, oversample=OVERSAMPLE):
    """Sample coordinates of shape (rows, cols, k*k) in meters from the centre."""
    rows, cols = grid.shape
    off = (np.arange(oversample) + 0.5) / oversample - 0.5
    y = np.arange(rows) - (rows - 1) / 2
    x = np.arange(cols) - (cols - 1) / 2
    yy = (y[:, None, None, None] + off[None, None, :, None]) * grid.pixel
    xx = (x[None, :, None, None] + off[None, None, None, :]) * grid.pixel
    yy, xx = np.broadcast_arrays(yy, xx)
    return yy.reshape(rows, cols, -1), xx.reshape(rows, cols, -1)


def siemens_star(grid, spokes=16, r_inner=None, r_outer=None, thickness=1e-6):
    """Siemens-star thickness map with 4x4 sub-pixel area sampling.

    Sectors with ``angle mod (2 pi / spokes) < pi / spokes`` are filled with
    ``thickness`` between ``r_inner`` and ``r_outer`` (m).
    """
    half = min(grid.shape) * grid.pixel / 2
    r_inner = 0.1 * half if r_inner is None else r_inner
    r_outer = 0.8 * half if r_outer is None else r_outer
    if spokes < 4 or spokes % 2:
        raise ValueError(f"spokes must be even and >= 4, got {spokes}")
    if not (0 <= r_inner <= r_outer <= half * (1 + 1e-12)):
        raise ValueError(
            f"need 0 <= r_inner <= r_outer <= {half:g} m, got {r_inner:g}, {r_outer:g}"
        )
    yy, xx = _subpixel_coords(grid)
    r = np.hypot(yy, xx)
    theta = np.mod(np.arctan2(yy, xx), 2 * np.pi / spokes)
    inside = (r >= r_inner) & (r < r_outer) & (theta < np.pi / spokes)
    return ThicknessMap(thickness * inside.mean(axis=-1), grid.pixel)


def disk_phantom(grid, disks):
    """Sum of anti-aliased disks.

    ``disks`` is an iterable of ``((y, x), radius, thickness)`` with the
    centre in meters from the grid centre.
    """
    yy, xx = _subpixel_coords(grid)
    out = np.zeros(grid.shape)
    for (cy, cx), radius, thickness in disks:
        if not radius > 0:
            raise ValueError(f"disk radius must be positive, got {radius!r}")
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        out += thickness * inside.mean(axis=-1)
    return ThicknessMap(out, grid.pixel)


def sphere_projection(grid, spheres, angle):
    """Projected thickness of a set of spheres after rotating by ``angle``.

    ``spheres`` holds ``((x, y, z), radius)`` in meters with ``y`` along the
    rotation axis (image rows). A sphere projects to a disk at horizontal
    offset ``x cos(angle) + z sin(angle)`` with chord length
    ``2 sqrt(r^2 - rho^2)``; the tomography module uses the same convention.
    """
    yy, xx = _subpixel_coords(grid)
    out = np.zeros(grid.shape)
    c, s = np.cos(angle), np.sin(angle)
    for (x0, y0, z0), radius in spheres:
        if not radius > 0:
            raise ValueError(f"sphere radius must be positive, got {radius!r}")
        u = x0 * c + z0 * s
        rho2 = (xx - u) ** 2 + (yy - y0) ** 2
        out += (2 * np.sqrt(np.maximum(radius**2 - rho2, 0.0))).mean(axis=-1)
    return ThicknessMap(out, grid.pixel)


def random_spheres(grid, count, seed, radius_range=(0.04, 0.1)):
    """Non-overlapping spheres inside the reconstruction cylinder.

    Radii are fractions of the half field of view. Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    half = min(grid.shape) * grid.pixel / 2
    spheres = []
    for _ in range(1000 * count):
        if len(spheres) == count:
            break
        r = rng.uniform(*radius_range) * half
        x, z = rng.uniform(-0.7 * half, 0.7 * half, size=2)
        y = rng.uniform(-0.6 * half, 0.6 * half)
        if np.hypot(x, z) + r > 0.8 * half:
            continue
        if all(np.linalg.norm(np.subtract((x, y, z), c)) > r + rc + 0.02 * half
               for c, rc in spheres):
            spheres.append(((float(x), float(y), float(z)), float(r)))
    if len(spheres) < count:
        raise ValueError(f"could not place {count} spheres")
    return spheres


def exit_wave(t, material, wavelength):
    """Projection-approximation exit wave of a homogeneous object.

    Returns
    -------
    wave : WaveField
    phi : ndarray
        ``-(2 pi delta / wavelength) T`` (radians, <= 0)
    b : ndarray
        ``(2 pi beta / wavelength) T`` (>= 0)
    """
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    k = 2 * np.pi / wavelength
    values = np.asarray(t.values, dtype=float)
    phi = -k * material.delta * values
    b = k * material.beta * values
    return WaveField(np.exp(-b + 1j * phi), t.pixel, wavelength), phi, b


@dataclass
class SimulatedStack:
    images: list
    geometries: list
    phi: np.ndarray
    b: np.ndarray
    thickness: ThicknessMap
    material: Material
    wavelength: float
    truth_pixel: float
    # per-image ground truth when images were resampled to their own grid
    truth: list = field(default_factory=list)

    @property
    def stack(self):
        return IntensityStack(self.images, self.wavelength)

    @property
    def distances(self):
        return np.array([im.distance for im in self.images])


def acquire_stack(t, material, energy, positions, detector_pixel=None, resample=False, pad=0):
    """Simulate intensities at several sample positions.

    Parameters
    ----------
    t : ThicknessMap
    material : Material
    energy : float
        keV.
    positions : sequence of (z1, z2)
        Source-sample and sample-detector distances in m; ``z1 = inf`` is a
        parallel beam.
    detector_pixel : float, optional
        Physical detector pixel. Defaults to the thickness-map pixel.
    resample : bool
        If False every image is simulated on the thickness-map grid and only
        labelled with its geometry. If True the thickness map is resampled to
        each position's effective pixel (zero outside) before propagation, as
        a magnifying setup would record it.
    pad : int or "auto"
        Propagation padding, see :func:`propagate`.

    Returns
    -------
    SimulatedStack
        Images sorted by increasing effective distance.
    """
    if not positions:
        raise ValueError("need at least one sample position")
    if resample and detector_pixel is None:
        raise ValueError("resampling needs the detector pixel size")
    det_pixel = t.pixel if detector_pixel is None else detector_pixel
    lam = wavelength_m(energy)
    geoms = [effective_geometry(AcquisitionGeometry(energy, z1, z2, det_pixel))
             for z1, z2 in positions]
    order = np.argsort([g.effective_distance for g in geoms], kind="stable")
    geoms = [geoms[i] for i in order]
    dists = [g.effective_distance for g in geoms]
    if any(b <= a for a, b in zip(dists, dists[1:])):
        raise ValueError(f"effective distances must be distinct, got {dists}")

    wave, phi, b = exit_wave(t, material, lam)
    images, truth = [], []
    for g in geoms:
        if resample:
            factor = t.pixel / g.effective_pixel
            tv = zoom_about_center(t.values, factor, mode="constant", cval=0.0)
            tm = ThicknessMap(np.maximum(tv, 0.0), g.effective_pixel)
            w, p_, b_ = exit_wave(tm, material, lam)
            truth.append((p_, b_))
        else:
            w = wave
        out = intensity(propagate(w, g.effective_distance, pad=pad))
        images.append(IntensityImage(out.values, w.pixel, g.effective_distance, lam,
                                     meta={"magnification": g.magnification}))
    return SimulatedStack(images, geoms, phi, b, t, material, lam, t.pixel, truth)


def add_noise(img, photons_per_pixel, seed):
    """Poisson noise for ``photons_per_pixel`` incident photons, deterministic in ``seed``."""
    if not photons_per_pixel > 0:
        raise ValueError("photons_per_pixel must be positive")
    rng = np.random.default_rng(seed)
    values = np.asarray(img.values, dtype=float)
    noisy = rng.poisson(np.clip(values, 0, None) * photons_per_pixel) / photons_per_pixel
    return img.with_values(noisy)


# Default test scenario: 256^2, 17 keV, delta/beta = 100, Siemens star and
# four parallel-beam distances with chi(f_Nyquist) between 0.57 and 5.7 rad.
DEFAULT_ENERGY = 17.0
DEFAULT_PIXEL = 1e-6
DEFAULT_SIZE = 256
DEFAULT_DISTANCES = (0.01, 0.025, 0.05, 0.1)
DEFAULT_MATERIAL = Material(delta=1e-6, beta=1e-8)
DEFAULT_MAX_PHASE = 0.1


@dataclass
class Scenario:
    grid: Grid
    energy: float
    material: Material
    thickness: ThicknessMap
    positions: list

    @property
    def wavelength(self):
        return wavelength_m(self.energy)

    def acquire(self, **kwargs):
        return acquire_stack(self.thickness, self.material, self.energy, self.positions,
                             **kwargs)


def thickness_for_phase(max_phase, material, wavelength):
    """Thickness giving a peak phase shift of ``max_phase`` radians."""
    return max_phase * wavelength / (2 * np.pi * material.delta)


def default_scenario(size=DEFAULT_SIZE, pixel=DEFAULT_PIXEL, energy=DEFAULT_ENERGY,
                     distances=DEFAULT_DISTANCES, material=DEFAULT_MATERIAL,
                     max_phase=DEFAULT_MAX_PHASE, spokes=16):
    grid = Grid(size, pixel)
    lam = wavelength_m(energy)
    t = siemens_star(grid, spokes, thickness=thickness_for_phase(max_phase, material, lam))
    return Scenario(grid, energy, material, t, [(math.inf, float(d)) for d in distances])


def distance_for_fresnel(fresnel, pixel, wavelength):
    """Propagation distance giving a pixel-scale Fresnel number ``pixel**2 / (wavelength D)``."""
    return pixel**2 / (wavelength * fresnel)
