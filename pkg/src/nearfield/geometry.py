"""Beam and acquisition geometry.

All lengths are in meters except where a function name says otherwise.
A parallel beam is encoded as ``z_source_sample = math.inf``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

# CODATA hc in keV nm
HC_KEV_NM = 1.23984198

DEFAULT_REGIME_THRESHOLD = 0.1


class GeometryError(ValueError):
    """Raised for physically meaningless or degenerate geometry."""


class Regime(str, enum.Enum):
    EDGE_ENHANCEMENT = "edge_enhancement"
    HOLOGRAPHIC = "holographic"


def wavelength_from_energy(energy):
    """Photon wavelength in nanometres for an energy given in keV."""
    if not energy > 0:
        raise GeometryError(f"photon energy must be positive, got {energy!r} keV")
    return HC_KEV_NM / energy


def wavelength_m(energy):
    """Photon wavelength in meters for an energy given in keV."""
    return wavelength_from_energy(energy) * 1e-9


@dataclass(frozen=True)
class EffectiveGeometry:
    magnification: float
    effective_distance: float
    effective_pixel: float


@dataclass(frozen=True)
class AcquisitionGeometry:
    """One sample position in a point-source (or parallel) beam.

    Parameters
    ----------
    energy : float
        Photon energy in keV.
    z_source_sample : float
        Focus-to-sample distance z1 in m, ``math.inf`` for a parallel beam.
    z_sample_detector : float
        Sample-to-detector distance z2 in m.
    detector_pixel : float
        Physical detector pixel size in m.
    """

    energy: float
    z_source_sample: float
    z_sample_detector: float
    detector_pixel: float

    def __post_init__(self):
        if not self.energy > 0:
            raise GeometryError(f"energy must be positive, got {self.energy!r}")
        if not self.z_source_sample > 0:
            raise GeometryError(
                f"source-sample distance must be > 0 or inf, got {self.z_source_sample!r}"
            )
        if not self.z_sample_detector >= 0 or math.isinf(self.z_sample_detector):
            raise GeometryError(
                f"sample-detector distance must be finite and >= 0, got {self.z_sample_detector!r}"
            )
        if not self.detector_pixel > 0:
            raise GeometryError(f"detector pixel must be positive, got {self.detector_pixel!r}")

    @property
    def wavelength(self):
        return wavelength_m(self.energy)

    @property
    def is_parallel(self):
        return math.isinf(self.z_source_sample)


def effective_geometry(g):
    """Map a cone-beam position onto its equivalent parallel-beam geometry.

    Returns magnification ``(z1 + z2) / z1``, effective propagation distance
    ``z1 z2 / (z1 + z2)`` and the demagnified pixel size.
    """
    z1, z2 = g.z_source_sample, g.z_sample_detector
    if z1 == 0:
        raise GeometryError("source-sample distance of zero is degenerate")
    if math.isinf(z1):
        return EffectiveGeometry(1.0, float(z2), float(g.detector_pixel))
    total = z1 + z2
    m = total / z1
    return EffectiveGeometry(m, z1 * z2 / total, g.detector_pixel / m)


def fresnel_number(feature_size, wavelength, distance):
    """Fresnel number a**2 / (wavelength * distance); all lengths in the same unit."""
    for name, v in (("feature_size", feature_size), ("wavelength", wavelength),
                    ("distance", distance)):
        if not v > 0:
            raise GeometryError(f"{name} must be positive, got {v!r}")
    return feature_size**2 / (wavelength * distance)


def regime_classify(fresnel, threshold=DEFAULT_REGIME_THRESHOLD):
    """Classify a Fresnel number as edge-enhancement (F >= threshold) or holographic."""
    if not fresnel > 0:
        raise GeometryError(f"Fresnel number must be positive, got {fresnel!r}")
    if fresnel >= threshold:
        return Regime.EDGE_ENHANCEMENT
    return Regime.HOLOGRAPHIC
