"""Synthetic training-sample generation.

Pipeline per sample, in order: random patch crop, dynamic-range manipulation,
optional threshold masking of one layer, optional per-observation non-rigid
warp of the reflection, surface geometry (or a uniform angle of incidence),
polarizer angle noise, polarized rendering and sensor quantization.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .fileio import atomic_write_bytes, encode_pfm, encode_png, read_image
from .geometry import (
    AoiField,
    GeometryRanges,
    SurfaceGeometry,
    aoi_field,
    sample_surface,
    uniform_aoi,
)
from .imagecore import ImageError, as_image, check_same_shape, clip_quantize, gamma_expand
from .optics import OpticalConfig, PolarStack, observe

SCHEMA_VERSION = 1
STAGES = ("dr", "nrd", "lcg")


class ConfigError(ValueError):
    pass


def _strict_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def parse_stages(spec) -> frozenset:
    if isinstance(spec, str):
        items = [s.strip().lower() for s in spec.split(",") if s.strip()]
    else:
        items = [str(s).lower() for s in spec]
    bad = [s for s in items if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stage(s) {bad}; choose from {', '.join(STAGES)}")
    return frozenset(items)


@dataclass(frozen=True)
class SynthConfig:
    beta_max: float = 2.8
    gamma_exponent: float = 2.2
    mask_probability: float = 0.3
    nrd_probability: float = 0.5
    nrd_sigma_max: float = 4.0
    nrd_grid_spacing: int = 16
    nrd_warp_transmission: bool = False
    angle_noise_deg: float = 4.0
    theta_range: tuple[float, float] = (0.1, 1.4)
    observation_bits: int = 8
    patch_size: int = 128
    stages: frozenset = frozenset(STAGES)
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    geometry_ranges: GeometryRanges = field(default_factory=GeometryRanges)

    def __post_init__(self):
        object.__setattr__(self, "stages", parse_stages(self.stages))
        object.__setattr__(self, "theta_range", tuple(float(t) for t in self.theta_range))
        if self.beta_max < 1:
            raise ConfigError(f"beta_max must be >= 1, got {self.beta_max}")
        if self.gamma_exponent <= 0:
            raise ConfigError("gamma_exponent must be positive")
        for name in ("mask_probability", "nrd_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.nrd_sigma_max < 0:
            raise ConfigError("nrd_sigma_max must be >= 0")
        if self.nrd_grid_spacing < 2:
            raise ConfigError("nrd_grid_spacing must be >= 2")
        if self.angle_noise_deg < 0:
            raise ConfigError("angle_noise_deg must be >= 0")
        lo, hi = self.theta_range
        if not (0 <= lo <= hi < 0.5 * math.pi):
            raise ConfigError("theta_range must satisfy 0 <= lo <= hi < pi/2")
        if self.observation_bits not in (0, 8, 16):
            raise ConfigError("observation_bits must be 0 (float), 8 or 16")
        if self.patch_size < 16:
            raise ConfigError("patch_size must be >= 16")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["stages"] = sorted(self.stages)
        d["theta_range"] = list(self.theta_range)
        d["optics"] = asdict(self.optics)
        d["geometry_ranges"] = self.geometry_ranges.to_dict()
        return {"schema": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        schema = d.pop("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {schema!r}")
        _strict_keys(d, [f.name for f in fields(cls)], "synth config")
        kw = dict(d)
        try:
            if "optics" in kw:
                _strict_keys(kw["optics"], ["n1", "n2"], "optics")
                kw["optics"] = OpticalConfig(**kw["optics"])
            if "geometry_ranges" in kw:
                g = kw["geometry_ranges"]
                _strict_keys(g, [f.name for f in fields(GeometryRanges)], "geometry_ranges")
                kw["geometry_ranges"] = GeometryRanges(
                    **{k: tuple(v) if isinstance(v, list) else v for k, v in g.items()}
                )
            if "theta_range" in kw:
                kw["theta_range"] = tuple(kw["theta_range"])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **kw) -> "SynthConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class SampleRecord:
    stack: PolarStack
    gt_reflection: np.ndarray
    gt_transmission: np.ndarray
    phi_perp: float
    aoi: AoiField
    provenance: dict


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def dynamic_range(I_R, I_T, beta: float, gamma_exponent: float):
    """Boost the reflection by beta and attenuate the transmission by 1/beta.

    Both layers are gamma-expanded (s -> s**gamma_exponent) first. Outputs are
    not clipped.
    """
    if beta < 1:
        raise ImageError(f"beta must be >= 1, got {beta}")
    r = gamma_expand(I_R, gamma_exponent)
    t = gamma_expand(I_T, gamma_exponent)
    return beta * r, t / beta


def threshold_mask(layer, other) -> np.ndarray:
    """Zero the pixels of ``layer`` darker than mean(layer + other)."""
    layer = as_image(layer, "layer")
    other = as_image(other, "other")
    check_same_shape(layer, other, "threshold_mask")
    t = float(np.mean(np.mean(layer + other, axis=2)))
    keep = np.mean(layer, axis=2, keepdims=True) >= t
    return np.where(keep, layer, 0.0)


def anchor_grid_shape(height: int, width: int, grid_spacing: int) -> tuple[int, int]:
    return (
        int(math.ceil((height - 1) / grid_spacing)) + 1,
        int(math.ceil((width - 1) / grid_spacing)) + 1,
    )


def warp_with_anchors(img, anchors: np.ndarray, grid_spacing: int) -> np.ndarray:
    """Backward-warp ``img`` by anchor displacements (ny, nx, 2) = (dy, dx).

    Anchors sit every ``grid_spacing`` pixels starting at (0, 0); the dense
    field is their bilinear interpolation and output pixel (y, x) samples
    the input at (y + dy, x + dx), clamped at the border.
    """
    img = as_image(img)
    h, w, _ = img.shape
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.shape != anchor_grid_shape(h, w, grid_spacing) + (2,):
        raise ImageError(f"anchor grid {anchors.shape} does not fit image {img.shape}")
    gy, gx = np.meshgrid(
        np.arange(h, dtype=np.float64) / grid_spacing,
        np.arange(w, dtype=np.float64) / grid_spacing,
        indexing="ij",
    )
    disp = _kernels.bilinear_sample(anchors, gy, gx)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return _kernels.bilinear_sample(img, yy + disp[..., 0], xx + disp[..., 1])


def nonrigid_warp(img, grid_spacing: int, sigma: float, rng: np.random.Generator, anchors=None):
    """Local non-rigid deformation from Gaussian-perturbed grid anchors.

    Anchor offsets are N(0, sigma^2) per axis, clamped to +-3 sigma. Passing
    ``anchors`` bypasses the draw (used to force known displacements).
    """
    img = as_image(img)
    if sigma < 0:
        raise ImageError("sigma must be >= 0")
    if grid_spacing < 2:
        raise ImageError("grid_spacing must be >= 2")
    if anchors is None:
        if sigma == 0:
            return img.copy()
        shape = anchor_grid_shape(img.shape[0], img.shape[1], grid_spacing) + (2,)
        anchors = np.clip(rng.normal(0.0, sigma, size=shape), -3 * sigma, 3 * sigma)
    return warp_with_anchors(img, anchors, grid_spacing)


def perturb_angles(phi0: float, noise_deg: float, rng: np.random.Generator) -> tuple:
    """Nominal phi0 + i*pi/4 plus independent uniform noise within +-noise_deg."""
    if noise_deg < 0:
        raise ValueError("noise_deg must be >= 0")
    bound = math.radians(noise_deg)
    u = rng.uniform(-bound, bound, size=3) if bound > 0 else np.zeros(3)
    return tuple(float(phi0 + i * 0.25 * math.pi + u[i]) for i in range(3))


def _crop(img: np.ndarray, size: int, rng: np.random.Generator):
    h, w, _ = img.shape
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    return img[y0 : y0 + size, x0 : x0 + size], [y0, x0]


def _layer(img: np.ndarray) -> np.ndarray:
    # stored ground truth is float32; keep rendering consistent with it
    return np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)


def _match_channels(a: np.ndarray, b: np.ndarray):
    if a.shape[2] == b.shape[2]:
        return a, b
    if a.shape[2] == 1:
        return np.repeat(a, 3, axis=2), b
    return a, np.repeat(b, 3, axis=2)


def render_observations(R_layers, T_layers, aoi, phi_perp, angles, cfg: SynthConfig):
    obs = []
    for r, t, phi in zip(R_layers, T_layers, angles):
        o = observe(r, t, aoi, phi_perp, phi, cfg.optics)
        if cfg.observation_bits:
            o = clip_quantize(o, cfg.observation_bits)
        else:
            # float mode stays float64; on disk (PFM) it is rounded to float32
            o = np.clip(o, 0.0, 1.0)
        obs.append(o)
    return obs


def synthesize_sample(src_R, src_T, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> SampleRecord:
    """Generate one sample deterministically from two source images and a seed."""
    src_R = as_image(src_R, "src_R")
    src_T = as_image(src_T, "src_T")
    p = cfg.patch_size
    for name, im in (("src_R", src_R), ("src_T", src_T)):
        if im.shape[0] < p or im.shape[1] < p:
            raise ImageError(f"{name} is {im.shape[1]}x{im.shape[0]}, smaller than patch {p}")
    if np.any(src_R < 0) or np.any(src_T < 0):
        raise ImageError("source images must be non-negative")
    src_R, src_T = _match_channels(src_R, src_T)
    rng = np.random.default_rng(seed)
    prov: dict = {"schema": SCHEMA_VERSION, "seed": int(seed), "stages": sorted(cfg.stages)}

    r, crop_r = _crop(src_R, p, rng)
    t, crop_t = _crop(src_T, p, rng)
    prov["crop"] = {"reflection": crop_r, "transmission": crop_t}

    beta = float(rng.uniform(1.0, cfg.beta_max)) if "dr" in cfg.stages else 1.0
    r, t = dynamic_range(np.clip(r, 0.0, 1.0), np.clip(t, 0.0, 1.0), beta, cfg.gamma_exponent)
    prov["beta"] = beta
    prov["gamma_exponent"] = cfg.gamma_exponent

    mask = {"applied": False, "layer": None}
    if "dr" in cfg.stages and rng.random() < cfg.mask_probability:
        if rng.random() < 0.5:
            r, mask = threshold_mask(r, t), {"applied": True, "layer": "reflection"}
        else:
            t, mask = threshold_mask(t, r), {"applied": True, "layer": "transmission"}
    prov["mask"] = mask

    R_layers = [r, r, r]
    T_layers = [t, t, t]
    nrd = {"applied": False, "sigma": 0.0, "grid_spacing": cfg.nrd_grid_spacing, "transmission": False}
    if "nrd" in cfg.stages and rng.random() < cfg.nrd_probability:
        sigma = float(rng.uniform(0.0, cfg.nrd_sigma_max))
        R_layers = [nonrigid_warp(r, cfg.nrd_grid_spacing, sigma, rng) for _ in range(3)]
        if cfg.nrd_warp_transmission:
            T_layers = [nonrigid_warp(t, cfg.nrd_grid_spacing, sigma, rng) for _ in range(3)]
        nrd = {
            "applied": True,
            "sigma": sigma,
            "grid_spacing": cfg.nrd_grid_spacing,
            "transmission": bool(cfg.nrd_warp_transmission),
        }
    prov["nrd"] = nrd

    if "lcg" in cfg.stages:
        geom = sample_surface(rng, cfg.geometry_ranges, width=p)
        aoi = aoi_field(geom, p)
        prov["geometry"] = geom.to_dict()
    else:
        lo, hi = cfg.theta_range
        theta = lo if lo == hi else float(rng.uniform(lo, hi))
        aoi = uniform_aoi(theta, p)
        prov["geometry"] = None

    phi_perp = float(rng.uniform(-0.25 * math.pi, 0.25 * math.pi))
    phi0 = float(rng.uniform(0.0, math.pi))
    angles = perturb_angles(phi0, cfg.angle_noise_deg, rng)
    prov["phi_perp"] = phi_perp
    prov["phi0"] = phi0
    prov["angles"] = list(angles)
    prov["theta"] = aoi.to_dict()["theta"]
    prov["observation_bits"] = cfg.observation_bits

    R = _layer(r)
    T = _layer(t)
    R_obs = [_layer(x) for x in R_layers] if nrd["applied"] else [R, R, R]
    T_obs = [_layer(x) for x in T_layers] if nrd["transmission"] else [T, T, T]
    obs = render_observations(R_obs, T_obs, aoi, phi_perp, angles, cfg)
    stack = PolarStack(tuple(obs), angles, phi0)
    return SampleRecord(stack, R, T, phi_perp, aoi, prov)


def rerender(record: SampleRecord, cfg: SynthConfig | None = None) -> list:
    """Re-render a record's observations from its stored layers and parameters."""
    bits = record.provenance.get("observation_bits", 8)
    cfg = replace(cfg or SynthConfig(), observation_bits=bits)
    R, T = record.gt_reflection, record.gt_transmission
    return render_observations(
        [R, R, R], [T, T, T], record.aoi, record.phi_perp, record.stack.angles, cfg
    )


# ---------------------------------------------------------------------------
# on-disk layout: <index:06>/obs_{0,1,2}.png, gt_R.pfm, gt_T.pfm, meta.json
# ---------------------------------------------------------------------------


def obs_filename(i: int, bits: int) -> str:
    return f"obs_{i}.pfm" if bits == 0 else f"obs_{i}.png"


def json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def record_files(record: SampleRecord) -> dict:
    """Serialize a record into {filename: bytes}."""
    bits = record.provenance.get("observation_bits", 8)
    files = {}
    for i, im in enumerate(record.stack.images):
        files[obs_filename(i, bits)] = encode_pfm(im) if bits == 0 else encode_png(im, bits)
    files["gt_R.pfm"] = encode_pfm(record.gt_reflection)
    files["gt_T.pfm"] = encode_pfm(record.gt_transmission)
    files["meta.json"] = json_bytes(record.provenance)
    return files


def write_record(directory, record: SampleRecord) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, data in record_files(record).items():
        atomic_write_bytes(directory / name, data)


def load_record(directory) -> SampleRecord:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    bits = meta.get("observation_bits", 8)
    obs = tuple(read_image(directory / obs_filename(i, bits)) for i in range(3))
    R = read_image(directory / "gt_R.pfm")
    T = read_image(directory / "gt_T.pfm")
    aoi = AoiField(np.asarray(meta["theta"], dtype=np.float64))
    stack = PolarStack(obs, tuple(meta["angles"]), meta["phi0"])
    return SampleRecord(stack, R, T, float(meta["phi_perp"]), aoi, meta)


def geometry_from_meta(meta: dict):
    g = meta.get("geometry")
    return None if g is None else SurfaceGeometry.from_dict(g)
