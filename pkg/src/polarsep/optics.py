"""Single-interface Fresnel optics and polarized image formation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .imagecore import ImageError, as_image, check_same_shape


@dataclass(frozen=True)
class OpticalConfig:
    n1: float = 1.0
    n2: float = 1.5

    def __post_init__(self):
        if not (self.n2 > self.n1 >= 1.0):
            raise ValueError(f"need n2 > n1 >= 1, got n1={self.n1}, n2={self.n2}")


class FresnelCoeffs(NamedTuple):
    r_s: np.ndarray | float
    r_p: np.ndarray | float
    theta: np.ndarray | float


def _check_theta(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t >= 0.5 * math.pi):
        raise ValueError("angle of incidence must lie in [0, pi/2)")
    return t


def fresnel(theta, cfg: OpticalConfig = OpticalConfig()) -> FresnelCoeffs:
    """Power reflectances (r_s, r_p) of a dielectric interface n1 -> n2.

    ``theta`` may be a scalar or an array of incidence angles in [0, pi/2).
    """
    t = _check_theta(theta)
    ci = np.cos(t)
    st = (cfg.n1 / cfg.n2) * np.sin(t)
    ct = np.sqrt(1.0 - st * st)
    n1, n2 = cfg.n1, cfg.n2
    rs = ((n1 * ci - n2 * ct) / (n1 * ci + n2 * ct)) ** 2
    rp = ((n1 * ct - n2 * ci) / (n1 * ct + n2 * ci)) ** 2
    if t.ndim == 0:
        return FresnelCoeffs(float(rs), float(rp), float(t))
    return FresnelCoeffs(rs, rp, t)


def brewster(cfg: OpticalConfig = OpticalConfig()) -> float:
    return math.atan2(cfg.n2, cfg.n1)


def mixing_alpha(theta, phi_perp, phi, cfg: OpticalConfig = OpticalConfig()):
    """Reflected-radiance weight of a polarizer-filtered observation.

    alpha = r_s cos^2(phi - phi_perp) + r_p sin^2(phi - phi_perp); arguments
    broadcast against each other.
    """
    rs, rp, _ = fresnel(theta, cfg)
    d = np.asarray(phi, dtype=np.float64) - np.asarray(phi_perp, dtype=np.float64)
    c2 = np.cos(d) ** 2
    out = rs * c2 + rp * (1.0 - c2)
    return float(out) if np.ndim(out) == 0 else out


def _theta_columns(aoi, width: int) -> np.ndarray:
    theta = np.asarray(getattr(aoi, "theta", aoi), dtype=np.float64)
    if theta.ndim == 0:
        return np.full(width, float(theta))
    if theta.shape != (width,):
        raise ImageError(f"AOI field has {theta.shape[0]} columns, image has {width}")
    return theta


def canonical_images(I_R, I_T, aoi, cfg: OpticalConfig = OpticalConfig()):
    """I_perp, I_par seen by a polarizer aligned with the s and p directions."""
    I_R = as_image(I_R, "I_R")
    I_T = as_image(I_T, "I_T")
    check_same_shape(I_R, I_T, "canonical_images")
    rs, rp, _ = fresnel(_theta_columns(aoi, I_R.shape[1]), cfg)
    rs = rs[None, :, None]
    rp = rp[None, :, None]
    i_perp = rs * I_R / 2 + (1.0 - rs) * I_T / 2
    i_par = rp * I_R / 2 + (1.0 - rp) * I_T / 2
    return i_perp, i_par


def observe(I_R, I_T, aoi, phi_perp, phi, cfg: OpticalConfig = OpticalConfig()) -> np.ndarray:
    """Render the observation through a linear polarizer at angle ``phi``.

    ``aoi`` is an AoiField, a per-column theta array or a scalar. The result
    is unclipped linear radiance.
    """
    I_R = as_image(I_R, "I_R")
    I_T = as_image(I_T, "I_T")
    check_same_shape(I_R, I_T, "observe")
    theta = _theta_columns(aoi, I_R.shape[1])
    alpha = np.asarray(mixing_alpha(theta, phi_perp, phi, cfg))
    if alpha.ndim == 1:
        alpha = alpha[None, :, None]
    elif alpha.ndim == 2:
        alpha = alpha[..., None]
    return alpha * I_R / 2 + (1.0 - alpha) * I_T / 2


def malus_project(I_perp, I_par, phi_perp_field, phi: float) -> np.ndarray:
    """I_perp cos^2(phi - phi_perp) + I_par sin^2(phi - phi_perp), per pixel."""
    I_perp = as_image(I_perp, "I_perp")
    I_par = as_image(I_par, "I_par")
    check_same_shape(I_perp, I_par, "malus_project")
    field = np.asarray(phi_perp_field, dtype=np.float64)
    if field.ndim == 3:
        if field.shape[2] != 1:
            raise ImageError("phi_perp field must be single-channel")
        field = field[..., 0]
    if field.ndim == 2 and field.shape != I_perp.shape[:2]:
        raise ImageError(f"phi_perp field {field.shape} vs images {I_perp.shape[:2]}")
    c2 = np.cos(phi - field) ** 2
    if c2.ndim == 2:
        c2 = c2[..., None]
    return I_perp * c2 + I_par * (1.0 - c2)


@dataclass(frozen=True)
class PolarStack:
    """Co-registered observations and the polarizer angles they were taken at.

    ``angles`` are the realized (possibly noisy) angles; nominally
    angles[i] = nominal_phi0 + i * pi/4.
    """

    images: tuple
    angles: tuple
    nominal_phi0: float = 0.0

    def __post_init__(self):
        if len(self.images) != len(self.angles):
            raise ImageError("one polarizer angle per observation required")
        if len(self.images) < 3:
            raise ImageError(f"need at least three observations, got {len(self.images)}")
        imgs = tuple(as_image(im, f"observation {i}") for i, im in enumerate(self.images))
        for im in imgs[1:]:
            check_same_shape(imgs[0], im, "stack observations")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

    def max_angle_deviation(self) -> float:
        nominal = self.nominal_phi0 + 0.25 * math.pi * np.arange(len(self.angles))
        return float(np.max(np.abs(np.asarray(self.angles) - nominal)))
