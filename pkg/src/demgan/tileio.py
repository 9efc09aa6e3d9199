"""GeoTIFF and PNG tile I/O.

GeoTIFFs are written with the standard georeferencing tags (pixel scale,
tiepoint, a WGS84 geographic GeoKey directory) and the GDAL nodata tag, so
they open in GDAL-based tools. Tile-level attributes that have no GeoTIFF
equivalent (value domain, units, ground resolution) travel as JSON in the
ImageDescription tag.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from demgan.errors import DataError
from demgan.raster import GeoRegion, RasterTile, ValueDomain

NODATA_VALUE = -9999.0

_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEOKEYS = 34735
_TAG_GDAL_NODATA = 42113

# GTModelType=Geographic, GTRasterType=PixelIsArea, GeographicType=WGS84
_GEOKEYS = (1, 1, 0, 3, 1024, 0, 1, 2, 1025, 0, 1, 1, 2048, 0, 1, 4326)


def _atomic_target(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp")


def write_geotiff(path, tile: RasterTile, dtype=np.float32) -> Path:
    """Write ``tile`` to ``path`` atomically; nodata pixels get :data:`NODATA_VALUE`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = tile.filled(NODATA_VALUE).astype(dtype)
    extratags = []
    if np.issubdtype(np.dtype(dtype), np.floating):
        extratags.append((_TAG_GDAL_NODATA, "s", 0, f"{NODATA_VALUE:g}", True))
    if tile.georef is not None:
        g = tile.georef
        sx = (g.lon_max - g.lon_min) / tile.width
        sy = (g.lat_max - g.lat_min) / tile.height
        extratags += [
            (_TAG_PIXEL_SCALE, "d", 3, (sx, sy, 0.0), True),
            (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, g.lon_min, g.lat_max, 0.0), True),
            (_TAG_GEOKEYS, "H", len(_GEOKEYS), _GEOKEYS, True),
        ]
    meta = {
        "value_domain": tile.value_domain.value,
        "units": tile.units,
        "resolution": tile.georef.resolution if tile.georef else None,
    }
    tmp = _atomic_target(path)
    tifffile.imwrite(
        tmp,
        data if tile.bands > 1 else data[:, :, 0],
        photometric="rgb" if tile.bands == 3 else "minisblack",
        planarconfig="contig",
        description=json.dumps(meta, sort_keys=True),
        extratags=extratags,
        metadata=None,
        software="demgan",
        datetime=None,
    )
    os.replace(tmp, path)
    return path


def read_geotiff(path) -> RasterTile:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"raster not found: {path}")
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            data = page.asarray().astype(np.float64)
            tags = page.tags
            nodata = None
            if _TAG_GDAL_NODATA in tags:
                nodata = float(str(tags[_TAG_GDAL_NODATA].value).strip("\x00 "))
            meta = {}
            desc = tags.get(270)
            if desc is not None:
                try:
                    meta = json.loads(desc.value)
                except (TypeError, ValueError):
                    meta = {}
            georef = None
            if _TAG_PIXEL_SCALE in tags and _TAG_TIEPOINT in tags:
                sx, sy, _ = tags[_TAG_PIXEL_SCALE].value
                tp = tags[_TAG_TIEPOINT].value
                lon_min, lat_max = tp[3], tp[4]
                h, w = data.shape[:2]
                georef = GeoRegion(
                    lat_min=lat_max - sy * h,
                    lat_max=lat_max,
                    lon_min=lon_min,
                    lon_max=lon_min + sx * w,
                    resolution=meta.get("resolution") or 30.0,
                )
    except (tifffile.TiffFileError, OSError, ValueError) as exc:
        raise DataError(f"unreadable raster {path}: {exc}") from exc

    if data.ndim == 2:
        data = data[:, :, None]
    if nodata is not None:
        mask = np.any(data == nodata, axis=2)
    else:
        mask = np.zeros(data.shape[:2], dtype=bool)
    data[mask] = 0.0
    return RasterTile(
        data,
        mask,
        value_domain=ValueDomain(meta.get("value_domain", "raw")),
        georef=georef,
        units=meta.get("units", ""),
    )


def read_mask(path) -> np.ndarray:
    """Quality mask raster: 0 = clear, anything else = contaminated."""
    tile = read_geotiff(path)
    return (tile.values[:, :, 0] != 0) | tile.nodata_mask


def write_mask(path, mask: np.ndarray, georef: GeoRegion | None = None) -> Path:
    tile = RasterTile(np.asarray(mask, dtype=np.float64), georef=georef)
    return write_geotiff(path, tile, dtype=np.uint8)


def write_png_preview(path, tile: RasterTile) -> Path:
    """8-bit PNG for eyeballing; each band is rescaled from its domain to 0-255."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = tile.filled(0.0)
    if tile.value_domain is ValueDomain.SIGNED_UNIT:
        v = (v + 1.0) * 127.5
    elif tile.value_domain is ValueDomain.RAW:
        lo = v[~tile.nodata_mask].min() if tile.valid_count else 0.0
        hi = v[~tile.nodata_mask].max() if tile.valid_count else 1.0
        v = (v - lo) / max(hi - lo, 1e-12) * 255.0
    img = np.clip(np.rint(v), 0, 255).astype(np.uint8)
    img[tile.nodata_mask] = 0
    mode = "RGB" if tile.bands == 3 else "L"
    Image.fromarray(img if tile.bands == 3 else img[:, :, 0], mode=mode).save(path)
    return path
