"""Inversion: canonical projection, residual recombination and closed-form separation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import AoiField
from .imagecore import ImageError, as_image, check_same_shape
from .optics import OpticalConfig, PolarStack, fresnel

QUARTER_PI = 0.25 * math.pi
COND_EPS = 1e-3
# realized angles closer than this to exact pi/4 spacing take the closed form
SPACING_TOL = 1e-12


class SingularityError(ArithmeticError):
    """The 2x2 Fresnel system is ill-conditioned at some image columns."""

    def __init__(self, columns, message: str | None = None):
        self.columns = [int(c) for c in columns]
        shown = ", ".join(str(c) for c in self.columns[:20])
        more = "" if len(self.columns) <= 20 else f", ... ({len(self.columns)} total)"
        super().__init__(message or f"|r_s - r_p| below threshold at columns {shown}{more}")


@dataclass(frozen=True)
class CanonicalPair:
    i_perp: np.ndarray
    i_par: np.ndarray
    phi_perp: np.ndarray  # (H, W, 1) radians in [-pi/4, pi/4)
    undefined: np.ndarray | None = None  # (H, W) bool, phase undefined (I_perp == I_par)

    def __post_init__(self):
        i_perp = as_image(self.i_perp, "i_perp")
        i_par = as_image(self.i_par, "i_par")
        check_same_shape(i_perp, i_par, "canonical pair")
        phi = as_image(self.phi_perp, "phi_perp")
        if phi.shape != i_perp.shape[:2] + (1,):
            raise ImageError(f"phi_perp must be single-channel {i_perp.shape[:2]}, got {phi.shape}")
        object.__setattr__(self, "i_perp", i_perp)
        object.__setattr__(self, "i_par", i_par)
        object.__setattr__(self, "phi_perp", phi)


@dataclass(frozen=True)
class ResidualFields:
    r_tilde: np.ndarray
    t_tilde: np.ndarray
    xi_perp: np.ndarray
    xi_par: np.ndarray

    def __post_init__(self):
        r = as_image(self.r_tilde, "r_tilde")
        t = as_image(self.t_tilde, "t_tilde")
        check_same_shape(r, t, "residual images")
        for name in ("xi_perp", "xi_par"):
            xi = as_image(getattr(self, name), name)
            if xi.shape != r.shape[:2] + (1,):
                raise ImageError(f"{name} must be single-channel {r.shape[:2]}, got {xi.shape}")
            object.__setattr__(self, name, np.clip(xi, 0.0, 1.0))
        object.__setattr__(self, "r_tilde", r)
        object.__setattr__(self, "t_tilde", t)


def _is_exact_spacing(angles) -> bool:
    return len(angles) == 3 and all(
        abs(angles[i] - angles[0] - i * QUARTER_PI) <= SPACING_TOL for i in range(3)
    )


def sinusoid_coefficients(images, angles):
    """Per-pixel (mean, c1, c2) with I(phi) = mean + c1 cos 2phi + c2 sin 2phi.

    Three observations at exact pi/4 spacing use the closed form
    S = I0 + I2, x = I0 - S/2, y = S/2 - I1. Any other set of at least three
    angles goes through a least-squares solve on the basis (1, cos 2phi,
    sin 2phi), which is exact when there are three.
    """
    if len(images) < 3 or len(images) != len(angles):
        raise ImageError(f"need at least three observations with angles, got {len(images)}")
    imgs = [as_image(im, f"observation {i}") for i, im in enumerate(images)]
    for im in imgs[1:]:
        check_same_shape(imgs[0], im, "observations")
    if _is_exact_spacing(angles):
        i0, i1, i2 = imgs
        s = i0 + i2
        x = i0 - s / 2
        y = s / 2 - i1
        c, sn = math.cos(2 * angles[0]), math.sin(2 * angles[0])
        # (x - i y) * exp(2i phi0)
        return s / 2, x * c + y * sn, x * sn - y * c
    phis = np.asarray(angles, dtype=np.float64)
    basis = np.stack([np.ones_like(phis), np.cos(2 * phis), np.sin(2 * phis)], axis=1)
    if np.linalg.matrix_rank(basis, tol=1e-9) < 3:
        raise ImageError(f"polarizer angles {list(angles)} do not determine the sinusoid")
    solve = np.linalg.pinv(basis)  # (3, n)
    stacked = np.stack(imgs, axis=0)
    coef = np.tensordot(solve, stacked, axes=(1, 0))
    return coef[0], coef[1], coef[2]


def canonical_solve(stack: PolarStack | None = None, *, images=None, angles=None) -> CanonicalPair:
    """Project polarizer observations onto the canonical s/p directions.

    Accepts a PolarStack, or ``images`` and realized ``angles`` directly.
    Negative canonical values (from quantization) are clamped to zero.
    """
    if stack is not None:
        images, angles = stack.images, stack.angles
    if images is None or angles is None:
        raise ImageError("canonical_solve needs a stack or images and angles")
    mean, c1, c2 = sinusoid_coefficients(list(images), [float(a) for a in angles])
    i_perp, i_par, phi, undefined = _kernels.canonical_phase(mean, c1, c2)
    return CanonicalPair(i_perp, i_par, phi[..., None], undefined)


def combine_residuals(canon: CanonicalPair, res: ResidualFields):
    """R = xi_perp R~ + (1 - xi_perp) I_perp,  T = xi_par T~ + (1 - xi_par) I_par."""
    check_same_shape(canon.i_perp, res.r_tilde, "canonical vs residual")
    out = []
    for xi, resid, base in (
        (res.xi_perp, res.r_tilde, canon.i_perp),
        (res.xi_par, res.t_tilde, canon.i_par),
    ):
        blend = xi * resid + (1.0 - xi) * base
        # rounding guard: a convex blend never leaves its endpoints' interval
        out.append(np.clip(blend, np.minimum(resid, base), np.maximum(resid, base)))
    return out[0], out[1]


def _column_reflectances(aoi, width: int, cfg: OpticalConfig):
    theta = np.asarray(getattr(aoi, "theta", aoi), dtype=np.float64)
    if theta.ndim == 0:
        theta = np.full(width, float(theta))
    if theta.shape != (width,):
        raise ImageError(f"AOI field has {theta.shape} columns, image width is {width}")
    rs, rp, _ = fresnel(theta, cfg)
    return rs, rp


def singular_columns(aoi, width: int, cfg: OpticalConfig = OpticalConfig(), eps: float = COND_EPS):
    rs, rp = _column_reflectances(aoi, width, cfg)
    return np.flatnonzero(np.abs(rs - rp) < eps)


def fresnel_inverse_separate(
    canon: CanonicalPair,
    aoi: AoiField | np.ndarray | float,
    cfg: OpticalConfig = OpticalConfig(),
    eps: float = COND_EPS,
    allow_singular: bool = False,
):
    """Invert the per-column 2x2 Fresnel mixing for the reflected and transmitted layers.

    Parameters
    ----------
    canon : CanonicalPair
        Output of ``canonical_solve``.
    aoi : AoiField, array of per-column angles, or scalar angle
        Angle of incidence for every image column.
    eps : float
        Minimum |r_s - r_p|; columns below it raise SingularityError.
    allow_singular : bool
        Zero the offending columns instead of raising.

    Returns
    -------
    (R_hat, T_hat), both clipped to [0, 1].
    """
    i_perp, i_par = canon.i_perp, canon.i_par
    width = i_perp.shape[1]
    rs, rp = _column_reflectances(aoi, width, cfg)
    det = rs - rp
    bad = np.abs(det) < eps
    if np.any(bad) and not allow_singular:
        raise SingularityError(np.flatnonzero(bad))
    safe = np.where(bad, 1.0, det)[None, :, None]
    rs = rs[None, :, None]
    rp = rp[None, :, None]
    i_r = 2.0 * ((1.0 - rp) * i_perp - (1.0 - rs) * i_par) / safe
    i_t = 2.0 * (rs * i_par - rp * i_perp) / safe
    r_hat = np.clip(i_r, 0.0, 1.0)
    t_hat = np.clip(i_t, 0.0, 1.0)
    if np.any(bad):
        r_hat[:, bad] = 0.0
        t_hat[:, bad] = 0.0
    return r_hat, t_hat


def canonical_baseline_separate(canon: CanonicalPair):
    """Geometry-free estimate: R = 2 (I_perp - I_par), T = 2 I_par (qualitative)."""
    r_hat = np.clip(2.0 * (canon.i_perp - canon.i_par), 0.0, 1.0)
    t_hat = np.clip(2.0 * canon.i_par, 0.0, 1.0)
    return r_hat, t_hat


def quantization_error_bound(aoi, cfg: OpticalConfig = OpticalConfig(), bits: int = 8) -> np.ndarray:
    """Worst-case per-column error of Fresnel-inverse layers from observation rounding.

    Each observation is off by at most half a level q. At exact pi/4 spacing
    the mean moves by at most q and the single-channel amplitude by at most
    sqrt(5) q, so canonical images err by at most (1 + sqrt 5) q; the 2x2
    inverse then scales that by 2 (2 - r_s - r_p) / (r_s - r_p). Valid for
    single-channel stacks away from the phi_perp = +-pi/4 label swap.
    """
    theta = np.atleast_1d(np.asarray(getattr(aoi, "theta", aoi), dtype=np.float64))
    rs, rp, _ = fresnel(theta, cfg)
    q = 0.5 / (2**bits - 1)
    return 2.0 * (1.0 + math.sqrt(5.0)) * q * (2.0 - rs - rp) / np.abs(rs - rp)
