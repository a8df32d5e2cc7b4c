"""Image container conventions, metrics and tone helpers.

Images are plain numpy arrays of shape (H, W, C), float64, linear light, with
C in {1, 3}. ``as_image`` is the single gate that enforces this; every public
function in the package routes its inputs through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 99.0
HIST_BINS = 1024
# channels whose value range is below this (relative) span count as constant
FLAT_RANGE = 1e-12


class ImageError(ValueError):
    """Rejected image input (shape mismatch, non-finite or out-of-domain samples)."""


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate and normalize ``arr`` to a float64 (H, W, C) array.

    2-D input is promoted to a single channel. Raises ImageError for wrong
    rank, unsupported channel count, empty rasters or non-finite samples.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ImageError(f"{name}: expected (H, W[, C]) array, got shape {a.shape}")
    if a.shape[2] not in (1, 3):
        raise ImageError(f"{name}: channel count must be 1 or 3, got {a.shape[2]}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ImageError(f"{name}: empty raster {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ImageError(f"{name}: contains NaN or Inf samples")
    return a


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ImageError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def rmse(a, b) -> float:
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b, "rmse")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr_from_rmse(err: float, peak: float = 1.0) -> float:
    if peak <= 0:
        raise ImageError(f"peak must be positive, got {peak}")
    if err == 0.0:
        return PSNR_CAP_DB
    return 20.0 * math.log10(peak / err)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB.

    Identical images return ``PSNR_CAP_DB`` (99 dB). Any nonzero error gives the
    uncapped value, which can exceed the cap for float-exact reconstructions.
    """
    return psnr_from_rmse(rmse(a, b), peak)


@dataclass
class MetricReport:
    """Per-image and averaged error figures for one image stream."""

    per_image: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, sample_id: str, a, b, clip: bool = True) -> None:
        a = as_image(a, "prediction")
        b = as_image(b, "reference")
        if clip:
            a = np.clip(a, 0.0, 1.0)
            b = np.clip(b, 0.0, 1.0)
        e = rmse(a, b)
        self.per_image.append((sample_id, e, psnr_from_rmse(e)))

    @property
    def rmse(self) -> float:
        # per-image values averaged, never recomputed from pooled pixels
        if not self.per_image:
            return float("nan")
        return float(np.mean([r[1] for r in self.per_image]))

    @property
    def psnr(self) -> float:
        if not self.per_image:
            return float("nan")
        return float(np.mean([r[2] for r in self.per_image]))

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "psnr": self.psnr,
            "count": len(self.per_image),
            "per_image": [
                {"id": sid, "rmse": e, "psnr": p} for sid, e, p in self.per_image
            ],
        }


# ---------------------------------------------------------------------------
# tone helpers
# ---------------------------------------------------------------------------


def gamma_expand(img, exponent: float) -> np.ndarray:
    """Map each sample s to s**exponent (exponent 2.2 linearizes sRGB-like data)."""
    img = as_image(img)
    if exponent <= 0:
        raise ImageError(f"gamma exponent must be positive, got {exponent}")
    if np.any(img < 0):
        raise ImageError("gamma_expand: negative samples")
    return img**exponent


def gamma_compress(img, exponent: float) -> np.ndarray:
    """Inverse of ``gamma_expand``: s -> s**(1/exponent)."""
    img = as_image(img)
    if exponent <= 0:
        raise ImageError(f"gamma exponent must be positive, got {exponent}")
    if np.any(img < 0):
        raise ImageError("gamma_compress: negative samples")
    return img ** (1.0 / exponent)


def clip_quantize(img, bits: int = 8) -> np.ndarray:
    """Clip to [0, 1] and round to 2**bits - 1 levels, returned as floats."""
    if bits not in (8, 16):
        raise ImageError(f"bits must be 8 or 16, got {bits}")
    img = as_image(img)
    levels = float(2**bits - 1)
    return np.round(np.clip(img, 0.0, 1.0) * levels) / levels


# ---------------------------------------------------------------------------
# histogram matching
# ---------------------------------------------------------------------------


def _channel_cdf(values: np.ndarray, bins: int):
    lo = float(values.min())
    hi = float(values.max())
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    cdf = np.concatenate(([0.0], np.cumsum(counts, dtype=np.float64)))
    cdf /= cdf[-1]
    return edges, cdf


def _is_flat(values: np.ndarray) -> bool:
    lo, hi = float(values.min()), float(values.max())
    return hi - lo <= FLAT_RANGE * max(1.0, abs(lo), abs(hi))


def _match_channel(src: np.ndarray, ref: np.ndarray, bins: int) -> np.ndarray:
    if _is_flat(ref):
        return np.full_like(src, float(np.median(ref)))
    ref_edges, ref_cdf = _channel_cdf(ref, bins)
    if _is_flat(src):
        # constant source: every pixel sits at the 50% quantile of the reference
        q = np.array([0.5])
    else:
        src_edges, src_cdf = _channel_cdf(src, bins)
        q = np.interp(src, src_edges, src_cdf)
    # inverse reference CDF over the knots bounding non-empty bins; interior
    # knots of flat (empty-bin) stretches carry no information
    rising = np.diff(ref_cdf) > 0
    keep = np.concatenate((rising, [False])) | np.concatenate(([False], rising))
    out = np.interp(q, ref_cdf[keep], ref_edges[keep])
    return np.broadcast_to(out, src.shape).copy()


def histogram_match(src, ref, bins: int = HIST_BINS) -> np.ndarray:
    """Remap each channel of ``src`` onto the empirical distribution of ``ref``.

    Both CDFs are built from ``bins``-bin histograms spanning each channel's own
    [min, max] and inverted by linear interpolation. A constant source channel
    maps to the reference median.
    """
    src = as_image(src, "src")
    ref = as_image(ref, "ref")
    if src.shape[2] != ref.shape[2]:
        raise ImageError(f"channel mismatch: {src.shape[2]} vs {ref.shape[2]}")
    out = np.empty_like(src)
    for k in range(src.shape[2]):
        out[..., k] = _match_channel(src[..., k], ref[..., k].ravel(), bins)
    return out
