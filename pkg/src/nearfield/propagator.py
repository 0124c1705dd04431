"""Fresnel propagation and the linearised intensity models built on it.

Conventions
-----------
The refractive index is ``n = 1 - delta + i beta`` and the exit wave is
``u = exp(-B + i phi)`` with ``phi = -(2 pi / wavelength) * delta * T <= 0``
and ``B = (2 pi / wavelength) * beta * T >= 0``. Free-space propagation over
a distance ``D`` multiplies the spectrum by ``exp(-i chi)`` with
``chi = pi * wavelength * D * |f|**2``.

The DFT is unnormalised forward and ``1 / N`` inverse (``numpy.fft``);
frequencies are laid out in standard DFT order with zero at index 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np


class AliasingWarning(UserWarning):
    """The Fresnel kernel is undersampled near the Nyquist frequency."""


def fft2(a):
    return np.fft.fft2(a)


def ifft2(a):
    return np.fft.ifft2(a)


@dataclass(frozen=True)
class Grid:
    """Square (or rectangular) sampling grid.

    ``n`` is the side length, or a ``(rows, cols)`` tuple; ``pixel`` in m.
    """

    n: int | tuple
    pixel: float

    def __post_init__(self):
        if min(self.shape) < 2:
            raise ValueError(f"grid needs at least 2 samples per axis, got {self.n!r}")
        if not self.pixel > 0:
            raise ValueError(f"pixel size must be positive, got {self.pixel!r}")

    @property
    def shape(self):
        if isinstance(self.n, (tuple, list)):
            return tuple(int(v) for v in self.n)
        return (int(self.n), int(self.n))

    @classmethod
    def like(cls, array, pixel):
        return cls(tuple(np.shape(array)[-2:]), pixel)


@dataclass(frozen=True)
class WaveField:
    """Complex field sampled on a grid; ``distance`` tracks how far it has been propagated."""

    values: np.ndarray
    pixel: float
    wavelength: float
    distance: float = 0.0

    @property
    def grid(self):
        return Grid.like(self.values, self.pixel)


@dataclass(frozen=True)
class IntensityImage:
    values: np.ndarray
    pixel: float
    distance: float
    wavelength: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def grid(self):
        return Grid.like(self.values, self.pixel)

    def with_values(self, values):
        return replace(self, values=values)


def frequency_grid(grid):
    """Spatial-frequency coordinates ``(fx, fy)`` in cycles/m, DFT order.

    ``fx`` varies along the column axis (axis 1), ``fy`` along rows.
    """
    rows, cols = grid.shape
    fy = np.fft.fftfreq(rows, d=grid.pixel)
    fx = np.fft.fftfreq(cols, d=grid.pixel)
    return np.meshgrid(fx, fy, indexing="xy")


def frequency_squared(grid):
    fx, fy = frequency_grid(grid)
    return fx**2 + fy**2


def spectral_phase(wavelength, distance, grid):
    """``chi(f) = pi * wavelength * distance * |f|**2`` on the DFT grid."""
    return np.pi * wavelength * distance * frequency_squared(grid)


def check_sampling(wavelength, distance, grid):
    """Warn when chi changes by more than pi between the last two on-axis samples.

    Returns the largest on-axis step of chi (radians).
    """
    steps = []
    for n in grid.shape:
        f_nyq = (n // 2) / (n * grid.pixel)
        f_prev = (n // 2 - 1) / (n * grid.pixel)
        steps.append(np.pi * wavelength * abs(distance) * (f_nyq**2 - f_prev**2))
    step = max(steps)
    if step > np.pi:
        warnings.warn(
            f"Fresnel kernel undersampled: chi jumps {step:.2f} rad between "
            f"Nyquist-region samples (D={distance:g} m, pixel={grid.pixel:g} m)",
            AliasingWarning,
            stacklevel=3,
        )
    return step


def fresnel_transfer(wavelength, distance, grid):
    """Transfer function ``H(f) = exp(-i chi(f))`` of free-space propagation."""
    return np.exp(-1j * spectral_phase(wavelength, distance, grid))


def apply_filter(values, h):
    if np.shape(values)[-2:] != np.shape(h)[-2:]:
        raise ValueError(
            f"field shape {np.shape(values)} does not match filter shape {np.shape(h)}"
        )
    return ifft2(fft2(values) * h)


def pad_edge(values, pad):
    if pad <= 0:
        return values
    return np.pad(values, pad, mode="edge")


def crop(values, pad):
    if pad <= 0:
        return values
    return values[..., pad:-pad, pad:-pad]


def resolve_pad(pad, shape):
    """``"auto"`` pads to twice the image size; an int is the width per side."""
    if pad == "auto":
        return max(shape) // 2
    return int(pad or 0)


def propagate(w, distance, pad=0):
    """Propagate a wave field by ``distance`` (negative means back-propagation).

    Parameters
    ----------
    w : WaveField
    distance : float
        Propagation distance in m.
    pad : int or "auto"
        Edge-replication padding per side applied before the FFT and cropped
        after; ``0`` (default) gives the exactly unitary periodic propagator.

    Returns
    -------
    WaveField
    """
    values = np.asarray(w.values, dtype=complex)
    p = resolve_pad(pad, values.shape)
    padded = pad_edge(values, p)
    grid = Grid.like(padded, w.pixel)
    check_sampling(w.wavelength, distance, grid)
    h = fresnel_transfer(w.wavelength, distance, grid)
    out = crop(apply_filter(padded, h), p)
    return replace(w, values=out, distance=w.distance + distance)


def intensity(w):
    """Detected intensity ``|u|**2`` of a wave field."""
    return IntensityImage(np.abs(w.values) ** 2, w.pixel, w.distance, w.wavelength)


def ctf_forward(phi, b, wavelength, distance, pixel):
    """Weak-object (contrast transfer function) intensity model.

    ``FT[I - 1] = 2 sin(chi) FT[phi] - 2 cos(chi) FT[B]``; the mean intensity
    is ``1 - 2 mean(B)``.
    """
    phi = np.asarray(phi, dtype=float)
    b = np.zeros_like(phi) if b is None else np.asarray(b, dtype=float)
    chi = spectral_phase(wavelength, distance, Grid.like(phi, pixel))
    spectrum = 2 * np.sin(chi) * fft2(phi) - 2 * np.cos(chi) * fft2(b)
    return IntensityImage(1 + ifft2(spectrum).real, pixel, distance, wavelength)


def _gradient(values, fx, fy):
    spec = fft2(values)
    gx = ifft2(2j * np.pi * fx * spec).real
    gy = ifft2(2j * np.pi * fy * spec).real
    return gx, gy


def tie_forward(phi, i0, wavelength, distance, pixel):
    """Transport-of-intensity model ``I = I0 - (wavelength D / 2 pi) div(I0 grad phi)``.

    ``div(I0 grad phi)`` is expanded as ``I0 lap(phi) + grad(I0) . grad(phi)``
    with every derivative taken spectrally.
    """
    phi = np.asarray(phi, dtype=float)
    i0 = np.ones_like(phi) if i0 is None else np.broadcast_to(np.asarray(i0, float), phi.shape)
    grid = Grid.like(phi, pixel)
    fx, fy = frequency_grid(grid)
    lap = ifft2(-4 * np.pi**2 * (fx**2 + fy**2) * fft2(phi)).real
    px, py = _gradient(phi, fx, fy)
    ix, iy = _gradient(i0, fx, fy)
    div = i0 * lap + ix * px + iy * py
    return IntensityImage(i0 - wavelength * distance / (2 * np.pi) * div, pixel, distance,
                          wavelength)


class IntensityStack:
    """Registered, flat-corrected images of one projection at several distances.

    All images share shape and wavelength. Before registration the effective
    pixel sizes may differ, in which case ``pixel`` is None and ``grid``
    raises; retrievals need a common pixel. Images are kept in the order
    given; retrieval code never assumes a particular order.
    """

    def __init__(self, images, wavelength=None, pixel=None):
        images = list(images)
        if not images:
            raise ValueError("an intensity stack needs at least one image")
        shape = np.shape(images[0].values)
        for im in images:
            if np.shape(im.values) != shape:
                raise ValueError(f"image shapes differ: {np.shape(im.values)} vs {shape}")
        self.images = images
        self.wavelength = wavelength if wavelength is not None else images[0].wavelength
        if self.wavelength is None:
            raise ValueError("wavelength unknown: pass it explicitly or set it on the images")
        common = all(np.isclose(im.pixel, images[0].pixel, rtol=1e-9) for im in images)
        if pixel is not None:
            if not all(np.isclose(im.pixel, pixel, rtol=1e-9) for im in images):
                raise ValueError("images in a stack must share the effective pixel size")
            self.pixel = pixel
        else:
            self.pixel = images[0].pixel if common else None

    @classmethod
    def from_arrays(cls, data, distances, pixel, wavelength):
        data = np.asarray(data, dtype=float)
        if data.ndim == 2:
            data = data[None]
        if len(data) != len(distances):
            raise ValueError(f"{len(data)} images but {len(distances)} distances")
        return cls([IntensityImage(d, pixel, float(z), wavelength)
                    for d, z in zip(data, distances)], wavelength, pixel)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]

    def __iter__(self):
        return iter(self.images)

    @property
    def shape(self):
        return np.shape(self.images[0].values)

    @property
    def grid(self):
        if self.pixel is None:
            raise ValueError("images have different pixel sizes; rescale or align them first")
        return Grid(self.shape, self.pixel)

    @property
    def distances(self):
        return np.array([im.distance for im in self.images], dtype=float)

    @property
    def data(self):
        return np.stack([np.asarray(im.values, dtype=float) for im in self.images])
