"""Align images of one projection angle recorded at several distances.

Images at different effective pixel sizes are first brought to a common
pixel by magnification-ratio rescaling, then translated. The translation is
found by exhaustive integer search maximising mutual information (robust to
the contrast changes between distances) or the phase-correlation peak, with
parabolic sub-pixel refinement.

Shift convention: ``moving[y, x] = reference[y - dy, x - dx]``, i.e. a
reported shift ``(dy, dx)`` means the content of ``moving`` sits ``dy`` rows
below and ``dx`` columns right of where it is in ``reference``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from ._interp import shift_image, zoom_about_center
from .propagator import IntensityImage, IntensityStack, fft2, ifft2

MI_BINS = 64
DEFAULT_RADIUS = 20
MIN_OVERLAP = 0.25
SCALE_LIMITS = (1 / 8, 8)


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True)
class RegistrationResult:
    shift: tuple
    scale: float
    score: float
    metric: str


def rescale_image(img, target_pixel):
    """Resample ``img`` (an IntensityImage) to ``target_pixel`` about its centre."""
    if not target_pixel > 0:
        raise RegistrationError("target pixel must be positive")
    factor = img.pixel / target_pixel
    if not SCALE_LIMITS[0] <= factor <= SCALE_LIMITS[1]:
        raise RegistrationError(
            f"suspicious rescaling factor {factor:.4g} (pixel {img.pixel:g} -> {target_pixel:g})"
        )
    if factor == 1:
        return img
    values = zoom_about_center(img.values, factor, mode="edge")
    meta = dict(img.meta, scale=factor)
    return replace(img, values=values, pixel=target_pixel, meta=meta)


def rescale_to_common(stack, target_pixel):
    images = [rescale_image(im, target_pixel) for im in stack]
    return IntensityStack(images, stack.wavelength, target_pixel)


def _quantize(values, bins):
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(v.shape, dtype=np.intp)
    q = ((v - lo) / (hi - lo) * bins).astype(np.intp)
    return np.minimum(q, bins - 1)


def _overlap(shape, dy, dx):
    """Slices into reference and moving for ``moving[y + dy, x + dx] ~ reference[y, x]``."""
    rows, cols = shape
    r_ref = slice(max(0, -dy), rows - max(0, dy))
    c_ref = slice(max(0, -dx), cols - max(0, dx))
    r_mov = slice(max(0, dy), rows - max(0, -dy))
    c_mov = slice(max(0, dx), cols - max(0, -dx))
    return (r_ref, c_ref), (r_mov, c_mov)


def mutual_information(a, b, bins=MI_BINS):
    """Mutual information (nats) of two equally shaped images from a joint histogram."""
    qa = _quantize(a, bins).ravel()
    qb = _quantize(b, bins).ravel()
    return _mi_from_bins(qa, qb, bins)


def _mi_from_bins(qa, qb, bins):
    joint = np.bincount(qa * bins + qb, minlength=bins * bins).astype(float)
    joint /= joint.sum()
    joint = joint.reshape(bins, bins)
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    outer = pa[:, None] * pb[None, :]
    return float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))


def _mi_surface(reference, moving, radius, bins):
    qa = _quantize(reference, bins)
    qb = _quantize(moving, bins)
    n = 2 * radius + 1
    scores = np.empty((n, n))
    for i, dy in enumerate(range(-radius, radius + 1)):
        for j, dx in enumerate(range(-radius, radius + 1)):
            (rr, rc), (mr, mc) = _overlap(reference.shape, dy, dx)
            scores[i, j] = _mi_from_bins(qa[rr, rc].ravel(), qb[mr, mc].ravel(), bins)
    return scores


def _phase_correlation_surface(reference, moving, radius):
    fa = fft2(reference - reference.mean())
    fb = fft2(moving - moving.mean())
    cross = np.conj(fa) * fb
    mag = np.abs(cross)
    cross = np.where(mag > 0, cross / np.where(mag > 0, mag, 1), 0)
    corr = ifft2(cross).real
    idx = np.arange(-radius, radius + 1)
    return corr[np.ix_(idx % corr.shape[0], idx % corr.shape[1])]


def _pick_peak(scores, radius):
    """Argmax with ties broken by smallest |shift|, then lexicographic (dy, dx)."""
    best = scores.max()
    cand = np.argwhere(scores == best) - radius
    order = sorted(map(tuple, cand), key=lambda s: (s[0] ** 2 + s[1] ** 2, s[0], s[1]))
    return order[0]


def _parabolic(sm, s0, sp):
    denom = sm - 2 * s0 + sp
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))


def register_translation(reference, moving, metric="mutual_information", radius=DEFAULT_RADIUS,
                         bins=MI_BINS):
    """Find the translation of ``moving`` relative to ``reference``.

    Parameters
    ----------
    reference, moving : IntensityImage or ndarray
        Same shape.
    metric : {"mutual_information", "phase_correlation"}
    radius : int
        Search over integer shifts in ``[-radius, radius]`` on both axes.

    Returns
    -------
    RegistrationResult
    """
    a = np.asarray(getattr(reference, "values", reference), dtype=float)
    b = np.asarray(getattr(moving, "values", moving), dtype=float)
    if a.shape != b.shape:
        raise RegistrationError(f"shape mismatch {a.shape} vs {b.shape}")
    radius = int(radius)
    if radius < 1:
        raise RegistrationError("search radius must be >= 1")
    rows, cols = a.shape
    if (rows - radius) * (cols - radius) < MIN_OVERLAP * rows * cols:
        raise RegistrationError(
            f"search radius {radius} leaves less than {MIN_OVERLAP:.0%} overlap on {a.shape}"
        )
    if metric in ("mutual_information", "mi"):
        metric = "mutual_information"
        scores = _mi_surface(a, b, radius, bins)
    elif metric in ("phase_correlation", "pc"):
        metric = "phase_correlation"
        scores = _phase_correlation_surface(a, b, radius)
    else:
        raise RegistrationError(f"unknown metric {metric!r}")

    dy, dx = _pick_peak(scores, radius)
    i, j = dy + radius, dx + radius
    sub_y = _parabolic(scores[i - 1, j], scores[i, j], scores[i + 1, j]) if 0 < i < 2 * radius else 0.0
    sub_x = _parabolic(scores[i, j - 1], scores[i, j], scores[i, j + 1]) if 0 < j < 2 * radius else 0.0
    return RegistrationResult((float(dy + sub_y), float(dx + sub_x)), 1.0, float(scores[i, j]), metric)


def align_stack(stack, metric="mutual_information", radius=DEFAULT_RADIUS, reference="shortest"):
    """Rescale and translate every image onto the reference image's grid.

    The reference is the shortest-distance image by default (``"longest"``
    or an integer index also work). Returns the aligned stack and one
    :class:`RegistrationResult` per non-reference image, in stack order.
    """
    if len(stack) == 0:
        raise RegistrationError("empty stack")
    if len(stack) == 1:
        return stack, []
    if reference == "shortest":
        ref_idx = int(np.argmin(stack.distances))
    elif reference == "longest":
        ref_idx = int(np.argmax(stack.distances))
    else:
        ref_idx = int(reference)
    ref = stack[ref_idx]
    images, results = [], []
    for k, im in enumerate(stack):
        if k == ref_idx:
            images.append(ref)
            continue
        scaled = rescale_image(im, ref.pixel)
        res = register_translation(ref, scaled, metric, radius)
        res = replace(res, scale=im.pixel / ref.pixel)
        dy, dx = res.shift
        moved = shift_image(scaled.values, (-dy, -dx), mode="edge")
        images.append(IntensityImage(moved, ref.pixel, im.distance, im.wavelength,
                                     meta=dict(im.meta, shift=res.shift)))
        results.append(res)
    return IntensityStack(images, stack.wavelength, ref.pixel), results


def shift_table(rows):
    """Delimiter-separated audit table.

    ``rows`` are dicts with keys projection, position, dy, dx, scale, score, metric.
    """
    buf = io.StringIO()
    fields = ["projection", "position", "dy", "dx", "scale", "score", "metric"]
    writer = csv.DictWriter(buf, fieldnames=fields, delimiter="\t", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in fields})
    return buf.getvalue()


def read_shift_table(text):
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    out = []
    for r in reader:
        out.append({"projection": int(r["projection"]), "position": int(r["position"]),
                    "dy": float(r["dy"]), "dx": float(r["dx"]), "scale": float(r["scale"]),
                    "score": float(r["score"]), "metric": r["metric"]})
    return out
