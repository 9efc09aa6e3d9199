"""Cloud-free RGB mosaics from multi-date scene stacks, paired with DEM tiles.

Scene catalog layout (``index.json`` in the catalog directory)::

    {
      "version": 1,
      "regions": [
        {
          "site_id": "...",
          "region": {"lat_min": ..., "lat_max": ..., "lon_min": ..., "lon_max": ...},
          "dem_path": "dem/site.tif",
          "scenes": [
            {"path": "scenes/a.tif", "mask_path": "masks/a.tif",
             "sensor": "primary", "date": "2000-03-01", "cloud_cover": 12.5}
          ]
        }
      ]
    }

Paths are relative to the catalog directory. Mask rasters are single band
with 0 = clear and 1 = cloud or cloud shadow. ``sensor`` is ``primary``
(the prioritised sensor) or ``fallback``.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from demgan.errors import AlignmentError, DataError, DegenerateInputError
from demgan.raster import GeoRegion, RasterTile, ValueDomain

log = logging.getLogger(__name__)

CATALOG_INDEX = "index.json"


class SensorRole(str, enum.Enum):
    PRIMARY = "primary"
    FALLBACK = "fallback"


@dataclass(frozen=True, eq=False)
class SceneRecord:
    sensor: SensorRole
    acquisition_date: dt.date
    scene_cloud_cover: float
    rgb: RasterTile
    quality_mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.quality_mask, dtype=bool)
        if mask.shape != self.rgb.nodata_mask.shape:
            raise AlignmentError(
                f"quality mask {mask.shape} does not match scene {self.rgb.nodata_mask.shape}"
            )
        object.__setattr__(self, "quality_mask", mask)
        object.__setattr__(self, "sensor", SensorRole(self.sensor))


@dataclass(frozen=True)
class ImageStack:
    region: GeoRegion | None
    scenes: tuple[SceneRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        scenes = tuple(self.scenes)
        if scenes:
            shape = scenes[0].rgb.values.shape
            for s in scenes[1:]:
                if s.rgb.values.shape != shape:
                    raise AlignmentError("scenes in a stack must share one pixel grid")
        object.__setattr__(self, "scenes", scenes)

    def __len__(self):
        return len(self.scenes)


def filter_scenes_by_cloud(stack: ImageStack, max_cover: float = 20.0) -> ImageStack:
    """Keep scenes whose cloud cover is strictly below ``max_cover`` percent."""
    kept = tuple(s for s in stack.scenes if s.scene_cloud_cover < max_cover)
    return ImageStack(stack.region, kept)


def apply_quality_mask(scene: SceneRecord) -> SceneRecord:
    """Fold the cloud/shadow mask into the scene's nodata mask."""
    rgb = scene.rgb
    mask = rgb.nodata_mask | scene.quality_mask
    return replace(scene, rgb=rgb.with_values(rgb.filled(0.0) * ~mask[:, :, None], nodata_mask=mask))


def median_composite(stack: ImageStack) -> RasterTile:
    """Per-pixel, per-band median over the unmasked scenes.

    Even counts take the mean of the two middle values. A pixel with no
    unmasked observation becomes nodata.
    """
    if len(stack) == 0:
        raise DegenerateInputError("cannot composite an empty image stack")
    vals = np.stack([s.rgb.values for s in stack.scenes])  # (n, h, w, b)
    masked = np.stack([s.rgb.nodata_mask for s in stack.scenes])  # (n, h, w)
    vals = np.where(masked[..., None], np.inf, vals)
    vals.sort(axis=0)
    count = (~masked).sum(axis=0)  # (h, w)
    lo = np.maximum(count - 1, 0) // 2
    hi = count // 2
    lo_v = np.take_along_axis(vals, lo[None, :, :, None].repeat(vals.shape[3], axis=3), axis=0)[0]
    hi_idx = np.minimum(hi, len(stack) - 1)
    hi_v = np.take_along_axis(vals, hi_idx[None, :, :, None].repeat(vals.shape[3], axis=3), axis=0)[0]
    nodata = count == 0
    odd = (count % 2 == 1)[:, :, None]
    out = np.where(odd, lo_v, (lo_v + hi_v) / 2.0)
    out = np.where(nodata[:, :, None], 0.0, out)
    first = stack.scenes[0].rgb
    return RasterTile(out, nodata, ValueDomain.RAW, georef=first.georef, units=first.units)


def sensor_fallback_merge(primary: RasterTile, fallback: RasterTile, mode: str = "pixel") -> RasterTile:
    """Fill gaps in the primary mosaic from the fallback mosaic.

    ``mode="pixel"`` takes the fallback value wherever the primary pixel is
    nodata. ``mode="region"`` uses the fallback tile only when the primary
    has no valid pixel at all.
    """
    if primary.values.shape != fallback.values.shape:
        raise AlignmentError(
            f"primary {primary.values.shape} and fallback {fallback.values.shape} differ"
        )
    if mode == "region":
        return fallback if primary.valid_count == 0 else primary
    if mode != "pixel":
        raise ValueError(f"unknown fallback mode {mode!r}")
    take_fb = primary.nodata_mask & ~fallback.nodata_mask
    out = np.where(take_fb[:, :, None], fallback.values, primary.values)
    mask = primary.nodata_mask & fallback.nodata_mask
    return primary.with_values(out, nodata_mask=mask)


def empty_like(tile: RasterTile) -> RasterTile:
    return tile.with_values(np.zeros_like(tile.values), nodata_mask=np.ones(tile.nodata_mask.shape, bool))


def build_mosaic(
    scenes: list[SceneRecord], max_cover: float = 20.0, fallback_mode: str = "pixel"
) -> tuple[RasterTile, dict]:
    """Filter, mask and composite per sensor role, then merge with fallback.

    Returns the mosaic and a small stats dict for logging/audit.
    """
    if not scenes:
        raise DegenerateInputError("region has no scenes")
    region = scenes[0].rgb.georef
    stats = {"scenes": len(scenes)}
    mosaics = {}
    for role in SensorRole:
        stack = ImageStack(region, tuple(s for s in scenes if s.sensor is role))
        kept = filter_scenes_by_cloud(stack, max_cover)
        stats[f"{role.value}_kept"] = len(kept)
        if len(kept):
            masked = ImageStack(region, tuple(apply_quality_mask(s) for s in kept.scenes))
            mosaics[role] = median_composite(masked)
        else:
            mosaics[role] = empty_like(scenes[0].rgb)
    merged = sensor_fallback_merge(mosaics[SensorRole.PRIMARY], mosaics[SensorRole.FALLBACK], fallback_mode)
    stats["valid_pixels"] = merged.valid_count
    stats["fallback_pixels"] = int(
        (mosaics[SensorRole.PRIMARY].nodata_mask & ~merged.nodata_mask).sum()
    )
    return merged, stats


# --- catalog -----------------------------------------------------------------


@dataclass(frozen=True)
class CatalogRegion:
    site_id: str
    region: GeoRegion
    dem_path: Path
    scenes: tuple[dict, ...]


def read_catalog(catalog_dir) -> list[CatalogRegion]:
    catalog_dir = Path(catalog_dir)
    index = catalog_dir / CATALOG_INDEX
    if not index.is_file():
        raise DataError(f"scene catalog index not found: {index}")
    try:
        doc = json.loads(index.read_text())
        regions = [
            CatalogRegion(
                site_id=r["site_id"],
                region=GeoRegion.from_dict(r["region"]),
                dem_path=catalog_dir / r["dem_path"],
                scenes=tuple(r.get("scenes", ())),
            )
            for r in doc["regions"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed catalog index {index}: {exc}") from exc
    return regions


def write_catalog(catalog_dir, regions: list[dict]) -> Path:
    catalog_dir = Path(catalog_dir)
    catalog_dir.mkdir(parents=True, exist_ok=True)
    path = catalog_dir / CATALOG_INDEX
    path.write_text(json.dumps({"version": 1, "regions": regions}, indent=1, sort_keys=True) + "\n")
    return path


def load_scenes(catalog_dir, entry: CatalogRegion) -> list[SceneRecord]:
    from demgan.tileio import read_geotiff, read_mask

    catalog_dir = Path(catalog_dir)
    scenes = []
    for s in entry.scenes:
        rgb = read_geotiff(catalog_dir / s["path"])
        mask = read_mask(catalog_dir / s["mask_path"]) if s.get("mask_path") else np.zeros(
            rgb.nodata_mask.shape, bool
        )
        scenes.append(
            SceneRecord(
                sensor=SensorRole(s["sensor"]),
                acquisition_date=dt.date.fromisoformat(s["date"]),
                scene_cloud_cover=float(s["cloud_cover"]),
                rgb=rgb,
                quality_mask=mask,
            )
        )
    return scenes
