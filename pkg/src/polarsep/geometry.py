"""Parabolic semi-reflector cross-sections and per-column angle-of-incidence fields.

The surface lives in a 2-D cross-section. In world coordinates the parabola is

    y = P_S.y + convexity * a * (x - P_S.x)**2

with its vertex at the surface point P_S, and the imaged segment covers
x in [P_S.x - l/2, P_S.x + l/2], sampled uniformly in x at one point per
image column (left to right). The surface normal at local offset u is
(-2 s a u, 1) / norm, and the camera must sit on the +y side of every tangent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MAX_RESAMPLE = 1000


class GeometryError(ValueError):
    """The camera sees part of the segment at or beyond grazing incidence."""


class GeometryConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceGeometry:
    camera: tuple[float, float]
    surface_point: tuple[float, float] = (0.0, 0.0)
    length: float = 1.0
    convexity: int = 1
    curvature: float = 0.0

    def __post_init__(self):
        if not self.length > 0:
            raise GeometryConfigError(f"segment length must be positive, got {self.length}")
        if self.convexity not in (-1, 1):
            raise GeometryConfigError(f"convexity must be +1 or -1, got {self.convexity}")
        if self.curvature < 0:
            raise GeometryConfigError(f"curvature must be >= 0, got {self.curvature}")

    def to_dict(self) -> dict:
        return {
            "camera": [float(v) for v in self.camera],
            "surface_point": [float(v) for v in self.surface_point],
            "length": float(self.length),
            "convexity": int(self.convexity),
            "curvature": float(self.curvature),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceGeometry":
        return cls(
            camera=tuple(float(v) for v in d["camera"]),
            surface_point=tuple(float(v) for v in d["surface_point"]),
            length=float(d["length"]),
            convexity=int(d["convexity"]),
            curvature=float(d["curvature"]),
        )


@dataclass(frozen=True)
class AoiField:
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("AOI field must be a non-empty 1-D array")
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t >= 0.5 * math.pi):
            raise ValueError("AOI values must lie in [0, pi/2)")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def width(self) -> int:
        return self.theta.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.theta == self.theta[0]))

    def to_dict(self) -> dict:
        return {"theta": [float(v) for v in self.theta]}

    @classmethod
    def from_dict(cls, d: dict) -> "AoiField":
        return cls(np.asarray(d["theta"], dtype=np.float64))


def uniform_aoi(theta: float, width: int) -> AoiField:
    """Constant field: camera at infinity in front of a flat pane."""
    return AoiField(np.full(int(width), float(theta)))


def surface_samples(geom: SurfaceGeometry, width: int):
    """Sample positions (x, y) and unit normals along the segment."""
    if width < 1:
        raise ValueError("width must be >= 1")
    if width == 1:
        u = np.zeros(1)
    else:
        u = np.linspace(-0.5 * geom.length, 0.5 * geom.length, width)
    s = geom.convexity * geom.curvature
    px = geom.surface_point[0] + u
    py = geom.surface_point[1] + s * u * u
    nx = -2.0 * s * u
    ny = np.ones_like(u)
    norm = np.hypot(nx, ny)
    return px, py, nx / norm, ny / norm


def aoi_field(geom: SurfaceGeometry, width: int) -> AoiField:
    """Per-column angle of incidence of the camera rays on the parabola.

    Raises GeometryError when any sample is seen at or past grazing
    incidence, i.e. the camera lies on or behind that sample's tangent line.
    """
    px, py, nx, ny = surface_samples(geom, width)
    rx = px - geom.camera[0]
    ry = py - geom.camera[1]
    dist = np.hypot(rx, ry)
    if np.any(dist == 0):
        raise GeometryError("camera lies on the surface segment")
    cos_in = -(rx * nx + ry * ny) / dist  # > 0 when the camera faces the normal side
    if np.any(cos_in <= 0):
        bad = np.flatnonzero(cos_in <= 0)
        raise GeometryError(f"{bad.size} column(s) at or past grazing incidence")
    theta = np.arccos(np.minimum(np.abs(cos_in), 1.0))
    if np.any(theta >= 0.5 * math.pi):
        raise GeometryError("grazing incidence")
    return AoiField(theta)


@dataclass(frozen=True)
class GeometryRanges:
    """Sampling intervals for random surfaces (meters, 1/meters).

    The surface point is fixed at the origin; only the camera's placement
    relative to it matters. Curvature is log-uniform on ``curvature`` unless
    the flat branch (probability ``flat_probability``) is taken.
    """

    camera_distance: tuple[float, float] = (0.3, 3.0)
    lateral_offset: tuple[float, float] = (-2.0, 2.0)
    length: tuple[float, float] = (0.2, 2.0)
    curvature: tuple[float, float] = (1e-4, 1.0)
    flat_probability: float = 0.3
    convexities: tuple[int, ...] = (-1, 1)
    max_retries: int = MAX_RESAMPLE

    def __post_init__(self):
        for name in ("camera_distance", "lateral_offset", "length", "curvature"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise GeometryConfigError(f"{name}: lower bound {lo} exceeds upper {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.camera_distance[0] <= 0:
            raise GeometryConfigError("camera_distance must be positive")
        if self.length[0] <= 0:
            raise GeometryConfigError("length must be positive")
        if self.curvature[0] <= 0:
            raise GeometryConfigError("curvature bounds must be positive (log-uniform)")
        conv = tuple(int(c) for c in self.convexities)
        if not conv or any(c not in (-1, 1) for c in conv):
            raise GeometryConfigError("convexities must be a non-empty subset of (-1, 1)")
        object.__setattr__(self, "convexities", conv)
        if not 0.0 <= self.flat_probability <= 1.0:
            raise GeometryConfigError("flat_probability must be in [0, 1]")
        if self.max_retries < 1:
            raise GeometryConfigError("max_retries must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _draw(rng: np.random.Generator, lo: float, hi: float) -> float:
    # pinned ranges consume no randomness-dependent value
    return lo if lo == hi else float(rng.uniform(lo, hi))


def sample_surface(
    rng: np.random.Generator, ranges: GeometryRanges = GeometryRanges(), width: int = 128
) -> SurfaceGeometry:
    """Draw a random surface whose AOI field at ``width`` columns is valid.

    Invalid draws are discarded and redrawn; after ``ranges.max_retries``
    failures a GeometryConfigError is raised.
    """
    for _ in range(ranges.max_retries):
        d = _draw(rng, *ranges.camera_distance)
        off = _draw(rng, *ranges.lateral_offset)
        length = _draw(rng, *ranges.length)
        conv = ranges.convexities
        convexity = conv[0] if len(conv) == 1 else conv[int(rng.integers(len(conv)))]
        if rng.random() < ranges.flat_probability:
            a = 0.0
        else:
            lo, hi = ranges.curvature
            a = lo if lo == hi else math.exp(rng.uniform(math.log(lo), math.log(hi)))
        geom = SurfaceGeometry(camera=(off, d), length=length, convexity=convexity, curvature=a)
        try:
            aoi_field(geom, width)
        except GeometryError:
            continue
        return geom
    raise GeometryConfigError(
        f"no valid geometry after {ranges.max_retries} draws; check geometry ranges"
    )
