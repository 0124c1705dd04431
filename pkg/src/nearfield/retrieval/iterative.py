"""Iterative retrieval: nonlinear gradient descent and HIO/ER alternating projections."""

from __future__ import annotations

import numpy as np

from ..propagator import IntensityStack, fft2, fresnel_transfer, ifft2
from .params import DivergenceError, RetrievalError, RetrievalParams, RetrievalResult

MAGNITUDE_FLOOR = 1e-12
MAX_HALVINGS = 60
SET_TOL = 1e-12


def _filters(stack):
    return np.stack([fresnel_transfer(stack.wavelength, d, stack.grid) for d in stack.distances])


def _objective_and_gradient(phi, b, intensities, filters, need_grad=True):
    u = np.exp(-b + 1j * phi)
    u_d = ifft2(filters * fft2(u)[None])
    r = np.abs(u_d) ** 2 - intensities
    e = float(np.sum(r * r))
    if not need_grad:
        return e, None, None
    g = ifft2(np.sum(np.conj(filters) * fft2(r * u_d), axis=0))
    w = np.conj(g) * u
    return e, -4 * w.imag, -4 * w.real


def gd_objective(phi, b, stack):
    """``E = sum_D sum_x (|P_D exp(-B + i phi)|^2 - I_D)^2``."""
    e, _, _ = _objective_and_gradient(phi, b, stack.data, _filters(stack), need_grad=False)
    return e


def gd_gradient(phi, b, stack):
    """Gradient ``(dE/dphi, dE/dB)`` of :func:`gd_objective`."""
    _, gp, gb = _objective_and_gradient(phi, b, stack.data, _filters(stack))
    return gp, gb


def gradient_descent(stack, init, p=None):
    """Minimise the multi-distance intensity misfit over (phi, B).

    Starts from ``init`` (a :class:`RetrievalResult`; ``b=None`` means zero
    attenuation). With ``step_rule="backtracking"`` each step is halved until
    the Armijo condition holds, so ``residual_history`` (``E`` before the
    first and after every iteration) never increases. Accepted steps double
    the trial step for the next iteration. ``pure_phase`` freezes ``B``.
    """
    p = p or RetrievalParams()
    if not isinstance(stack, IntensityStack):
        stack = IntensityStack([stack])
    intensities = stack.data
    filters = _filters(stack)
    phi = np.array(init.phi, dtype=float)
    b = np.zeros_like(phi) if init.b is None else np.array(init.b, dtype=float)
    if phi.shape != stack.shape:
        raise RetrievalError(f"initial phase shape {phi.shape} != data shape {stack.shape}")

    e, gp, gb = _objective_and_gradient(phi, b, intensities, filters)
    if not np.isfinite(e):
        raise DivergenceError("objective is not finite at the initial point")
    if p.pure_phase:
        gb = np.zeros_like(gb)
    history = [e]
    tau = p.step
    stopped = None
    for it in range(p.max_iter):
        gnorm2 = float(np.sum(gp * gp) + np.sum(gb * gb))
        if gnorm2 == 0:
            stopped = "zero gradient"
            break
        accepted = False
        for _ in range(MAX_HALVINGS):
            phi_t = phi - tau * gp
            b_t = b - tau * gb
            e_t, gp_t, gb_t = _objective_and_gradient(phi_t, b_t, intensities, filters)
            if not np.isfinite(e_t):
                if p.step_rule == "fixed":
                    last = RetrievalResult(phi, b, residual_history=history)
                    raise DivergenceError(f"objective diverged at iteration {it + 1}", last)
                tau /= 2
                continue
            if p.step_rule == "fixed" or e_t <= e - p.armijo * tau * gnorm2:
                accepted = True
                break
            tau /= 2
        if not accepted:
            stopped = "line search failed"
            break
        phi, b, e = phi_t, b_t, e_t
        gp, gb = gp_t, (np.zeros_like(gb_t) if p.pure_phase else gb_t)
        history.append(e)
        if p.step_rule == "backtracking":
            tau *= 2
    info = {"method": "gd", "iterations": len(history) - 1, "final_step": tau}
    if stopped:
        info["stopped"] = stopped
    return RetrievalResult(phi, b, residual_history=history, info=info)


# -- alternating projections -------------------------------------------------

def magnitude_projection(u_d, amplitude):
    """Replace the modulus of ``u_d`` by ``amplitude``, keeping its phase.

    Where ``|u_d| < 1e-12`` the phase is undefined and zero phase is used.
    """
    mag = np.abs(u_d)
    small = mag < MAGNITUDE_FLOOR
    scale = np.where(small, 0.0, amplitude / np.where(small, 1.0, mag))
    return np.where(small, amplitude + 0j, u_d * scale)


def in_object_set(u, phase_max=np.pi, max_amplitude=1.0, support=None):
    """Pointwise membership of the object constraint set.

    The set is ``|u| <= max_amplitude`` with phase in ``[-phase_max, 0]``,
    and ``u = 1`` outside ``support`` when a support mask is given.
    """
    theta = np.angle(u)
    # tolerance so points projected onto the boundary test as members
    mag_ok = np.abs(u) <= max_amplitude * (1 + SET_TOL)
    ok = mag_ok & (theta <= SET_TOL) & (theta >= -phase_max - SET_TOL)
    if phase_max >= np.pi:
        ok |= mag_ok & (theta >= np.pi - SET_TOL)
    if support is not None:
        ok &= support | (u == 1)
    return ok


def project_object(u, phase_max=np.pi, max_amplitude=1.0, support=None):
    """Nearest point of the object constraint set, pixel by pixel.

    Inside the phase range the modulus is clamped to ``max_amplitude``.
    Outside it the point is projected onto the nearer bounding ray
    (angle 0 or ``-phase_max``), which may land on the origin.
    """
    u = np.asarray(u, dtype=complex)
    theta = np.angle(u)
    mag = np.abs(u)
    in_range = (theta <= 0) & (theta >= -phase_max)
    inside = np.where(mag > max_amplitude, u * (max_amplitude / np.where(mag > 0, mag, 1)), u)

    edge0 = 1.0 + 0j
    edge1 = np.exp(-1j * phase_max)
    t0 = np.clip((u * np.conj(edge0)).real, 0, max_amplitude)
    t1 = np.clip((u * np.conj(edge1)).real, 0, max_amplitude)
    p0 = t0 * edge0
    p1 = t1 * edge1
    outside = np.where(np.abs(u - p0) <= np.abs(u - p1), p0, p1)
    out = np.where(in_range, inside, outside)
    if support is not None:
        out = np.where(support, out, 1.0 + 0j)
    return out


def _random_init(rng, shape, phase_max):
    return np.exp(1j * rng.uniform(-phase_max, 0.0, size=shape))


def hio_er(img, init=None, p=None):
    """Single-distance HIO / ER iterations between detector and object planes.

    Parameters
    ----------
    img : IntensityImage
        Flat-corrected intensity at distance ``img.distance``.
    init : WaveField or ndarray, optional
        Starting object-plane field; random phase in ``[-phase_max, 0]``
        (seeded by ``p.seed``) when omitted.
    p : RetrievalParams
        ``schedule`` is run ``cycles`` times. With ``averaging="sequential"``
        the cycles continue from one another; with ``"restarts"`` every cycle
        starts from a fresh random field. The returned (phi, B) is the
        pixelwise mean over the cycle endpoints.

    Returns
    -------
    RetrievalResult
        ``residual_history[k]`` is ``|| |P u_k| - sqrt(I) ||_2`` for the
        object estimate after ``k`` iterations (``k = 0`` is the start).
        ``info["kinds"][k-1]`` names the iteration that produced ``u_k``
        ("HIO", "ER", or "INIT" for a restart).
    """
    p = p or RetrievalParams()
    if isinstance(img, IntensityStack):
        if len(img) != 1:
            raise RetrievalError("HIO/ER works on one image at a time; see hio_er_stack")
        img = img[0]
    data = np.asarray(img.values, dtype=float)
    if np.any(data < 0):
        raise RetrievalError("intensity has negative values")
    if img.wavelength is None:
        raise RetrievalError("wavelength unknown")
    amplitude = np.sqrt(data)
    h = fresnel_transfer(img.wavelength, img.distance, img.grid)
    hc = np.conj(h)
    rng = np.random.default_rng(p.seed)
    constraint = dict(phase_max=p.phase_max, max_amplitude=p.max_amplitude, support=p.support)

    if init is None:
        u = _random_init(rng, data.shape, p.phase_max)
    else:
        u = np.array(getattr(init, "values", init), dtype=complex)
        if u.shape != data.shape:
            raise RetrievalError(f"initial field shape {u.shape} != data shape {data.shape}")

    u_d = ifft2(h * fft2(u))
    history = [float(np.linalg.norm(np.abs(u_d) - amplitude))]
    kinds, endpoints = [], []
    for cycle in range(p.cycles):
        if cycle > 0 and p.averaging == "restarts":
            u = _random_init(rng, data.shape, p.phase_max)
            u_d = ifft2(h * fft2(u))
            history.append(float(np.linalg.norm(np.abs(u_d) - amplitude)))
            kinds.append("INIT")
        for method, count in p.schedule:
            for _ in range(count):
                u_prime = ifft2(hc * fft2(magnitude_projection(u_d, amplitude)))
                if method == "ER":
                    u = project_object(u_prime, **constraint)
                else:
                    keep = in_object_set(u_prime, **constraint)
                    violation = u_prime - project_object(u_prime, **constraint)
                    u = np.where(keep, u_prime, u - p.hio_beta * violation)
                u_d = ifft2(h * fft2(u))
                history.append(float(np.linalg.norm(np.abs(u_d) - amplitude)))
                kinds.append(method)
        endpoints.append(u.copy())

    phis = [np.angle(e) for e in endpoints]
    bs = [-np.log(np.maximum(np.abs(e), MAGNITUDE_FLOOR)) for e in endpoints]
    info = {"method": "hioer", "kinds": kinds, "cycles": p.cycles, "averaging": p.averaging}
    return RetrievalResult(np.mean(phis, axis=0), np.mean(bs, axis=0),
                           residual_history=history, info=info)


def hio_er_stack(stack, p=None):
    """Run :func:`hio_er` separately on every image and average the results."""
    results = [hio_er(im, None, p) for im in stack]
    phi = np.mean([r.phi for r in results], axis=0)
    b = np.mean([r.b for r in results], axis=0)
    return RetrievalResult(phi, b, residual_history=results[-1].residual_history,
                           info={"method": "hioer", "per_image": [r.residual_history for r in results]})
