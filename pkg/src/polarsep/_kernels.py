"""Hot per-pixel kernels.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version. ``POLARSEP_NUMBA=0`` in the environment (read at
import time) forces the numpy path; so does a missing numba install. Both
paths perform the same floating point operations in the same order, so they
agree to the last few ulps (transcendentals may differ by one ulp between
libm builds).
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

USE_NUMBA = njit is not None and os.environ.get("POLARSEP_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)

HALF_PI = 0.5 * math.pi
QUARTER_PI = 0.25 * math.pi
# Below this squared amplitude (summed over channels) the canonical phase is undefined.
PHASE_EPS2 = 1e-24


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _maybe_njit(fn):
    if njit is None:
        return fn
    return njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# bilinear resampling with edge clamping
# ---------------------------------------------------------------------------


def _bilinear_sample_loop(img, src_y, src_x):
    h, w, c = img.shape
    oh, ow = src_y.shape
    out = np.empty((oh, ow, c), dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            y = src_y[i, j]
            x = src_x[i, j]
            if y < 0.0:
                y = 0.0
            elif y > h - 1:
                y = float(h - 1)
            if x < 0.0:
                x = 0.0
            elif x > w - 1:
                x = float(w - 1)
            y0 = int(math.floor(y))
            x0 = int(math.floor(x))
            y1 = min(y0 + 1, h - 1)
            x1 = min(x0 + 1, w - 1)
            fy = y - y0
            fx = x - x0
            for k in range(c):
                top = img[y0, x0, k] * (1.0 - fx) + img[y0, x1, k] * fx
                bot = img[y1, x0, k] * (1.0 - fx) + img[y1, x1, k] * fx
                out[i, j, k] = top * (1.0 - fy) + bot * fy
    return out


_bilinear_sample_numba = _maybe_njit(_bilinear_sample_loop)


def bilinear_sample_numpy(img, src_y, src_x):
    h, w, _ = img.shape
    y = np.clip(src_y, 0.0, h - 1)
    x = np.clip(src_x, 0.0, w - 1)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_sample_numba(img, src_y, src_x):
    return _bilinear_sample_numba(img, src_y, src_x)


def bilinear_sample(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W, C) at fractional rows/cols, clamping to the border."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    src_y = np.ascontiguousarray(src_y, dtype=np.float64)
    src_x = np.ascontiguousarray(src_x, dtype=np.float64)
    if USE_NUMBA:
        return bilinear_sample_numba(img, src_y, src_x)
    return bilinear_sample_numpy(img, src_y, src_x)


# ---------------------------------------------------------------------------
# canonical phase: (mean, c1, c2) per channel -> I_perp, I_par, phi_perp
#
# Per channel the observation model is  I(phi) = m + c1 cos 2phi + c2 sin 2phi
# with c1 + i c2 = A exp(2i phi_perp).  The phase is shared by all channels and
# only defined modulo pi/2 (the sign of A absorbs the rest), so it is taken
# from the summed squared phasors, which is insensitive to per-channel sign.
# ---------------------------------------------------------------------------


def _canonical_phase_loop(mean, c1, c2):
    h, w, c = mean.shape
    i_perp = np.empty((h, w, c), dtype=np.float64)
    i_par = np.empty((h, w, c), dtype=np.float64)
    phi = np.empty((h, w), dtype=np.float64)
    undefined = np.zeros((h, w), dtype=np.bool_)
    for i in range(h):
        for j in range(w):
            re = 0.0
            im = 0.0
            mag = 0.0
            for k in range(c):
                a = c1[i, j, k]
                b = c2[i, j, k]
                re += a * a - b * b
                im += 2.0 * a * b
                mag += a * a + b * b
            if mag <= PHASE_EPS2:
                p = 0.0
                undefined[i, j] = True
            else:
                p = 0.25 * math.atan2(im, re)
                p = p - HALF_PI * math.floor((p + QUARTER_PI) / HALF_PI)
            phi[i, j] = p
            cs = math.cos(2.0 * p)
            sn = math.sin(2.0 * p)
            for k in range(c):
                amp = c1[i, j, k] * cs + c2[i, j, k] * sn
                m = mean[i, j, k]
                v = m + amp
                i_perp[i, j, k] = v if v > 0.0 else 0.0
                v = m - amp
                i_par[i, j, k] = v if v > 0.0 else 0.0
    return i_perp, i_par, phi, undefined


_canonical_phase_numba = _maybe_njit(_canonical_phase_loop)


def canonical_phase_numpy(mean, c1, c2):
    re = np.sum(c1 * c1 - c2 * c2, axis=-1)
    im = np.sum(2.0 * c1 * c2, axis=-1)
    mag = np.sum(c1 * c1 + c2 * c2, axis=-1)
    undefined = mag <= PHASE_EPS2
    p = 0.25 * np.arctan2(im, re)
    p = p - HALF_PI * np.floor((p + QUARTER_PI) / HALF_PI)
    p[undefined] = 0.0
    amp = c1 * np.cos(2.0 * p)[..., None] + c2 * np.sin(2.0 * p)[..., None]
    i_perp = np.maximum(mean + amp, 0.0)
    i_par = np.maximum(mean - amp, 0.0)
    return i_perp, i_par, p, undefined


def canonical_phase_numba(mean, c1, c2):
    return _canonical_phase_numba(mean, c1, c2)


def canonical_phase(mean: np.ndarray, c1: np.ndarray, c2: np.ndarray):
    """Return ``(i_perp, i_par, phi_perp, undefined)`` from sinusoid coefficients.

    ``phi_perp`` lies in [-pi/4, pi/4); ``undefined`` flags pixels whose
    polarization amplitude vanishes (phase set to 0 there).
    """
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    c1 = np.ascontiguousarray(c1, dtype=np.float64)
    c2 = np.ascontiguousarray(c2, dtype=np.float64)
    if USE_NUMBA:
        return canonical_phase_numba(mean, c1, c2)
    return canonical_phase_numpy(mean, c1, c2)
