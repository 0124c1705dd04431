"""Closed-form (Fourier-space) phase retrieval: WTIE, TIE-HOM, CTF and pure-phase CTF."""

from __future__ import annotations

import numpy as np

from ..propagator import Grid, IntensityStack, crop, fft2, frequency_squared, ifft2, pad_edge, resolve_pad
from .params import RetrievalError, RetrievalParams, RetrievalResult

LOG_FLOOR = 1e-10
DET_FLOOR = 1e-15


def _as_stack(data):
    if isinstance(data, IntensityStack):
        return data
    return IntensityStack([data])


def _padded_grid(stack, p):
    pad = resolve_pad(p.pad, stack.shape)
    shape = tuple(s + 2 * pad for s in stack.shape)
    stack.grid  # raises for mixed pixel sizes
    return pad, Grid(shape, stack.pixel)


def _contrast_spectra(stack, pad, incident=1.0):
    """DFT of ``I / I0 - 1`` per image, after edge padding."""
    out = []
    for im in stack:
        c = np.asarray(im.values, dtype=float) / incident - 1.0
        out.append(fft2(pad_edge(c, pad)))
    return np.stack(out)


def alpha_map(p, f2, wavelength, distances):
    """Regularisation as a scalar, or a two-band array when ``alpha_high`` is set."""
    if p.alpha_high is None:
        return p.alpha
    if p.crossover is not None:
        fc2 = p.crossover**2
    else:
        positive = [d for d in distances if d > 0]
        if not positive:
            raise RetrievalError("two-band alpha needs a positive distance for the crossover")
        fc2 = 1.0 / (wavelength * min(positive))
    return np.where(f2 < fc2, p.alpha, p.alpha_high)


def _finish(spectrum, pad):
    spectrum[..., 0, 0] = 0.0
    return crop(ifft2(spectrum).real, pad)


def wtie(stack, p=None, incident=1.0):
    """Weak-object, pure-phase TIE inversion from a single image.

    ``phi(f) = FT[I/I0 - 1](f) / (2 pi wavelength D |f|^2 + alpha)``, zero mean.
    """
    p = p or RetrievalParams()
    stack = _as_stack(stack)
    if len(stack) != 1:
        raise RetrievalError(f"WTIE uses a single distance, got {len(stack)} images")
    d = stack[0].distance
    if d == 0:
        raise RetrievalError("WTIE needs a non-zero propagation distance (no contrast at D=0)")
    pad, grid = _padded_grid(stack, p)
    f2 = frequency_squared(grid)
    spec = _contrast_spectra(stack, pad, incident)[0]
    alpha = alpha_map(p, f2, stack.wavelength, [d])
    denom = 2 * np.pi * stack.wavelength * d * f2 + alpha
    denom[0, 0] = 1.0
    return RetrievalResult(_finish(spec / denom, pad), info={"method": "wtie"})


def tie_hom(img, p=None, wavelength=None, distance=None, incident=1.0):
    """Single-distance homogeneous-object retrieval (Paganin filter).

    The low-pass ``1 / (1 + pi wavelength D (delta/beta) |f|^2)`` is applied to
    ``I / I0`` and the result is log-transformed. Returns ``b`` (half the
    attenuation exponent), ``phi = -(delta/beta) b`` and, when ``p.beta`` is
    known, the projected thickness ``T = 2 b / mu`` with ``mu = 4 pi beta / wavelength``.
    """
    p = p or RetrievalParams()
    if p.delta_beta is None:
        raise RetrievalError("TIE-HOM requires delta_beta")
    img = img[0] if isinstance(img, IntensityStack) else img
    lam = wavelength if wavelength is not None else img.wavelength
    d = distance if distance is not None else img.distance
    if lam is None:
        raise RetrievalError("wavelength unknown")
    values = np.asarray(img.values, dtype=float) / incident
    pad = resolve_pad(p.pad, values.shape)
    padded = pad_edge(values, pad)
    f2 = frequency_squared(Grid.like(padded, img.pixel))
    filt = 1.0 + np.pi * lam * d * p.delta_beta * f2
    filtered = crop(ifft2(fft2(padded) / filt).real, pad)
    clamped = int(np.count_nonzero(filtered < LOG_FLOOR))
    b = -0.5 * np.log(np.maximum(filtered, LOG_FLOOR))
    result = RetrievalResult(-p.delta_beta * b, b, info={"method": "tiehom", "clamped": clamped})
    if p.beta is not None:
        mu = 4 * np.pi * p.beta / lam
        result.thickness = 2 * b / mu
    return result


def ctf_pure_phase(stack, p=None, incident=1.0):
    """Multi-distance CTF inversion assuming a pure-phase weak object.

    ``phi(f) = sum_D sin(chi_D) I_D(f) / (2 sum_D sin^2(chi_D) + alpha)``.
    """
    p = p or RetrievalParams()
    stack = _as_stack(stack)
    if len(stack) == 0:
        raise RetrievalError("empty stack")
    pad, grid = _padded_grid(stack, p)
    f2 = frequency_squared(grid)
    spec = _contrast_spectra(stack, pad, incident)
    lam = stack.wavelength
    num = np.zeros(grid.shape, dtype=complex)
    den = np.zeros(grid.shape)
    for d, s in zip(stack.distances, spec):
        sin_chi = np.sin(np.pi * lam * d * f2)
        num += sin_chi * s
        den += sin_chi**2
    den = 2 * den + alpha_map(p, f2, lam, stack.distances)
    den[0, 0] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_hat = np.where(den > 0, num / den, 0.0)
    return RetrievalResult(_finish(phi_hat, pad), info={"method": "ctfpurephase"})


def ctf(stack, p=None, incident=1.0):
    """Multi-distance CTF inversion for phase and attenuation.

    Solves the regularised 2x2 normal equations per frequency in closed form,
    with ``s_D = 2 sin(chi_D)`` and ``c_D = -2 cos(chi_D)``. Frequencies whose
    determinant falls below ``1e-15`` use the pure-phase formula; their count
    is reported in ``info["fallback"]``.
    """
    p = p or RetrievalParams()
    stack = _as_stack(stack)
    if len(stack) < 2:
        raise RetrievalError(f"CTF needs at least 2 distances, got {len(stack)}")
    pad, grid = _padded_grid(stack, p)
    f2 = frequency_squared(grid)
    spec = _contrast_spectra(stack, pad, incident)
    lam = stack.wavelength
    a11 = np.zeros(grid.shape)
    a12 = np.zeros(grid.shape)
    a22 = np.zeros(grid.shape)
    r1 = np.zeros(grid.shape, dtype=complex)
    r2 = np.zeros(grid.shape, dtype=complex)
    for d, i_hat in zip(stack.distances, spec):
        chi = np.pi * lam * d * f2
        s = 2 * np.sin(chi)
        c = -2 * np.cos(chi)
        a11 += s * s
        a12 += s * c
        a22 += c * c
        r1 += s * i_hat
        r2 += c * i_hat
    alpha = alpha_map(p, f2, lam, stack.distances)
    a11 = a11 + alpha
    a22 = a22 + alpha
    det = a11 * a22 - a12 * a12
    ok = det >= DET_FLOOR
    ok[0, 0] = True
    safe = np.where(ok & (det > 0), det, 1.0)
    phi_hat = np.where(ok, (a22 * r1 - a12 * r2) / safe, 0.0)
    b_hat = np.where(ok, (a11 * r2 - a12 * r1) / safe, 0.0)
    bad = ~ok
    if bad.any():
        denom = np.where(a11[bad] > 0, a11[bad], 1.0)
        phi_hat[bad] = np.where(a11[bad] > 0, r1[bad] / denom, 0.0)
    # zero frequency: phase undetermined, attenuation from the mean contrast
    phi_hat[0, 0] = 0.0
    mean_contrast = spec[:, 0, 0].real.mean() / spec[0].size
    b_hat[0, 0] = -mean_contrast / 2 * spec[0].size
    phi = crop(ifft2(phi_hat).real, pad)
    b = crop(ifft2(b_hat).real, pad)
    return RetrievalResult(phi, b, info={"method": "ctf", "fallback": int(bad.sum())})
