"""Raster tiles and the per-tile normalization chain.

A tile holds a ``(height, width, bands)`` float array plus a per-pixel
nodata mask. Tiles are treated as immutable: every operation returns a
new tile and never writes into its inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from demgan.errors import AlignmentError, ConfigError, DegenerateInputError, DomainError


class ValueDomain(str, enum.Enum):
    RAW = "raw"
    JPEG_0_255 = "jpeg_0_255"
    SIGNED_UNIT = "signed_unit"


@dataclass(frozen=True)
class GeoRegion:
    """Geographic bounding box in degrees with a nominal ground resolution."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    resolution: float = 30.0

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ConfigError(f"lat_min {self.lat_min} must be < lat_max {self.lat_max}")
        if not self.lon_min < self.lon_max:
            raise ConfigError(f"lon_min {self.lon_min} must be < lon_max {self.lon_max}")
        if not self.resolution > 0:
            raise ConfigError(f"resolution must be positive, got {self.resolution}")

    def to_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GeoRegion:
        return cls(
            float(d["lat_min"]),
            float(d["lat_max"]),
            float(d["lon_min"]),
            float(d["lon_max"]),
            float(d.get("resolution", 30.0)),
        )


@dataclass(frozen=True)
class StretchParams:
    """Percentile bounds (0-100) used by :func:`stretch_min_max`."""

    lower_percentile: float = 2.0
    upper_percentile: float = 98.0

    def __post_init__(self):
        if not 0 <= self.lower_percentile < self.upper_percentile <= 100:
            raise ConfigError(
                "need 0 <= lower < upper <= 100, got "
                f"({self.lower_percentile}, {self.upper_percentile})"
            )


@dataclass(frozen=True, eq=False)
class RasterTile:
    values: np.ndarray
    nodata_mask: np.ndarray = None
    value_domain: ValueDomain = ValueDomain.RAW
    georef: GeoRegion | None = None
    units: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise AlignmentError(f"tile values must be 2-D or 3-D, got shape {values.shape}")
        mask = self.nodata_mask
        if mask is None:
            mask = np.zeros(values.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape[:2]:
            raise AlignmentError(f"mask shape {mask.shape} does not match tile {values.shape[:2]}")
        values = values.copy()
        mask = mask.copy()
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata_mask", mask)
        object.__setattr__(self, "value_domain", ValueDomain(self.value_domain))
        self._check_domain()

    def _check_domain(self):
        if self.value_domain is ValueDomain.RAW:
            return
        valid = self.values[~self.nodata_mask]
        if valid.size == 0:
            return
        lo, hi = (0.0, 255.0) if self.value_domain is ValueDomain.JPEG_0_255 else (-1.0, 1.0)
        if valid.min() < lo or valid.max() > hi:
            raise DomainError(
                f"{self.value_domain.value} tile has values outside [{lo}, {hi}]: "
                f"[{valid.min()}, {valid.max()}]"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def valid_count(self) -> int:
        return int((~self.nodata_mask).sum())

    def band(self, b: int) -> np.ndarray:
        return self.values[:, :, b]

    def with_values(self, values, value_domain=None, nodata_mask=None, **kw) -> RasterTile:
        """Copy of this tile with new values (and optionally a new domain or mask)."""
        return replace(
            self,
            values=values,
            value_domain=self.value_domain if value_domain is None else value_domain,
            nodata_mask=self.nodata_mask if nodata_mask is None else nodata_mask,
            **kw,
        )

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Values with nodata pixels replaced by ``fill`` (writeable copy)."""
        out = np.array(self.values)
        out[self.nodata_mask] = fill
        return out

    def equals(self, other: RasterTile) -> bool:
        return (
            self.values.shape == other.values.shape
            and self.value_domain is other.value_domain
            and np.array_equal(self.nodata_mask, other.nodata_mask)
            and np.array_equal(self.values, other.values)
        )


def _require_same_grid(a: RasterTile, b: RasterTile):
    if a.values.shape[:2] != b.values.shape[:2]:
        raise AlignmentError(f"tile grids differ: {a.values.shape[:2]} vs {b.values.shape[:2]}")


def band_percentiles(tile: RasterTile, params: StretchParams) -> list[tuple[float, float]]:
    """Per-band (P_min, P_max) over unmasked pixels, linear interpolation between ranks."""
    valid = ~tile.nodata_mask
    if not valid.any():
        raise DegenerateInputError("cannot stretch a tile with no unmasked pixels")
    out = []
    for b in range(tile.bands):
        v = tile.band(b)[valid]
        lo, hi = np.percentile(v, [params.lower_percentile, params.upper_percentile])
        out.append((float(lo), float(hi)))
    return out


def stretch_values(v: np.ndarray, p_min: float, p_max: float) -> np.ndarray:
    """Linear map of ``[p_min, p_max]`` onto ``[0, 255]`` with clamping.

    A degenerate range (``p_max == p_min``) maps everything to 0.
    """
    v = np.asarray(v, dtype=np.float64)
    if p_max <= p_min:
        return np.zeros_like(v)
    out = 255.0 * ((v - p_min) / (p_max - p_min))
    out[v <= p_min] = 0.0
    out[v >= p_max] = 255.0
    return out


def stretch_min_max(
    tile: RasterTile, params: StretchParams = StretchParams(), strict_jpeg: bool = False
) -> RasterTile:
    """Percentile min-max stretch of each band into the 0-255 range.

    Args:
        tile: Raw tile; every band is stretched independently.
        params: Percentile bounds.
        strict_jpeg: Round the output to integer levels like an 8-bit export.

    Returns:
        A ``jpeg_0_255`` tile with the same nodata mask. Masked pixels are 0.
    """
    bounds = band_percentiles(tile, params)
    out = np.zeros_like(tile.values)
    for b, (lo, hi) in enumerate(bounds):
        out[:, :, b] = stretch_values(tile.band(b), lo, hi)
    if strict_jpeg:
        out = np.rint(out)
    out[tile.nodata_mask] = 0.0
    return tile.with_values(
        out,
        value_domain=ValueDomain.JPEG_0_255,
        metadata={**tile.metadata, "stretch_bounds": bounds},
    )


def scale_to_signed_unit(tile: RasterTile) -> RasterTile:
    """Map a 0-255 tile onto [-1, 1] via ``v / 127.5 - 1``."""
    if tile.value_domain is not ValueDomain.JPEG_0_255:
        raise DomainError(f"expected jpeg_0_255 input, got {tile.value_domain.value}")
    out = tile.values / 127.5 - 1.0
    out = np.where(tile.nodata_mask[:, :, None], 0.0, out)
    return tile.with_values(out, value_domain=ValueDomain.SIGNED_UNIT)


def unscale_from_signed_unit(tile: RasterTile) -> RasterTile:
    if tile.value_domain is not ValueDomain.SIGNED_UNIT:
        raise DomainError(f"expected signed_unit input, got {tile.value_domain.value}")
    out = np.clip((tile.values + 1.0) * 127.5, 0.0, 255.0)
    return tile.with_values(out, value_domain=ValueDomain.JPEG_0_255)


def to_relative_elevation(dem: RasterTile) -> RasterTile:
    """Subtract the tile minimum so the lowest valid pixel sits at 0 m."""
    if dem.bands != 1:
        raise AlignmentError(f"relative elevation needs a single-band DEM, got {dem.bands} bands")
    valid = ~dem.nodata_mask
    if not valid.any():
        raise DegenerateInputError("DEM tile has no unmasked pixels")
    base = dem.values[:, :, 0][valid].min()
    out = dem.values - base
    out[~valid] = 0.0
    return dem.with_values(out)


def _axis_weights(n_in: int, n_out: int):
    # pixel-center alignment; coordinates clamped at the borders
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = x - i0
    return i0, i1, frac


def resample_tile(tile: RasterTile, out_w: int, out_h: int) -> RasterTile:
    """Bilinear resample to ``out_w`` x ``out_h`` ignoring nodata neighbours.

    Each output pixel is the bilinear blend of its four source neighbours
    with masked neighbours given zero weight; pixels whose neighbours are
    all masked become nodata.
    """
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"output size must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (tile.width, tile.height):
        return tile
    r0, r1, fy = _axis_weights(tile.height, out_h)
    c0, c1, fx = _axis_weights(tile.width, out_w)
    valid = (~tile.nodata_mask).astype(np.float64)
    vals = tile.filled(0.0)

    acc = np.zeros((out_h, out_w, tile.bands))
    wsum = np.zeros((out_h, out_w))
    for rows, wy in ((r0, 1.0 - fy), (r1, fy)):
        for cols, wx in ((c0, 1.0 - fx), (c1, fx)):
            w = np.outer(wy, wx) * valid[np.ix_(rows, cols)]
            acc += w[:, :, None] * vals[np.ix_(rows, cols)]
            wsum += w
    mask = wsum <= 0.0
    out = np.where(mask[:, :, None], 0.0, acc / np.where(mask, 1.0, wsum)[:, :, None])
    if tile.value_domain is ValueDomain.JPEG_0_255:
        out = np.clip(out, 0.0, 255.0)
    elif tile.value_domain is ValueDomain.SIGNED_UNIT:
        out = np.clip(out, -1.0, 1.0)
    return tile.with_values(out, nodata_mask=mask)


__all__ = [
    "GeoRegion",
    "RasterTile",
    "StretchParams",
    "ValueDomain",
    "band_percentiles",
    "resample_tile",
    "scale_to_signed_unit",
    "stretch_min_max",
    "stretch_values",
    "to_relative_elevation",
    "unscale_from_signed_unit",
]
