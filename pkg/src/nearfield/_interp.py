"""Bilinear sampling helpers shared by registration, simulation and tomography."""

import numpy as np


def bilinear(image, rows, cols, mode="edge", cval=0.0):
    """Sample ``image`` at fractional ``(rows, cols)``.

    ``mode="edge"`` replicates border pixels, ``mode="constant"`` treats
    everything outside the image as ``cval``. Interpolation is written as
    ``a + t (b - a)`` so a constant image is reproduced exactly.
    """
    img = np.asarray(image, dtype=float)
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    if mode == "constant":
        img = np.pad(img, 1, constant_values=cval)
        rows = rows + 1
        cols = cols + 1
    elif mode != "edge":
        raise ValueError(f"unknown boundary mode {mode!r}")
    nr, nc = img.shape
    r = np.clip(rows, 0, nr - 1)
    c = np.clip(cols, 0, nc - 1)
    r0 = np.minimum(np.floor(r).astype(np.intp), nr - 2)
    c0 = np.minimum(np.floor(c).astype(np.intp), nc - 2)
    tr = r - r0
    tc = c - c0
    a = img[r0, c0]
    b = img[r0, c0 + 1]
    lo = img[r0 + 1, c0]
    d = img[r0 + 1, c0 + 1]
    top = a + tc * (b - a)
    bottom = lo + tc * (d - lo)
    return top + tr * (bottom - top)


def zoom_about_center(image, factor, mode="edge", cval=0.0):
    """Magnify ``image`` by ``factor`` about its centre, keeping the array shape."""
    img = np.asarray(image, dtype=float)
    nr, nc = img.shape
    cr, cc = (nr - 1) / 2, (nc - 1) / 2
    rr, cc_ = np.meshgrid(np.arange(nr, dtype=float), np.arange(nc, dtype=float),
                          indexing="ij")
    return bilinear(img, cr + (rr - cr) / factor, cc + (cc_ - cc) / factor, mode, cval)


def shift_image(image, shift, mode="edge", cval=0.0):
    """Translate so that ``out[y, x] = image[y - dy, x - dx]``."""
    img = np.asarray(image, dtype=float)
    dy, dx = shift
    if dy == 0 and dx == 0:
        return img.copy()
    nr, nc = img.shape
    rr, cc = np.meshgrid(np.arange(nr, dtype=float), np.arange(nc, dtype=float),
                         indexing="ij")
    return bilinear(img, rr - dy, cc - dx, mode, cval)
