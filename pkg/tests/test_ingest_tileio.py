import datetime as dt

import numpy as np
import pytest

from demgan.errors import AlignmentError, DataError, DegenerateInputError
from demgan.ingest import (
    ImageStack,
    SceneRecord,
    SensorRole,
    build_mosaic,
    filter_scenes_by_cloud,
    load_scenes,
    read_catalog,
    sensor_fallback_merge,
)
from demgan.raster import GeoRegion, RasterTile, ValueDomain
from demgan.sites import SiteCandidate, buffer_site
from demgan.synthetic import write_synthetic_catalog
from demgan.tileio import NODATA_VALUE, read_geotiff, read_mask, write_geotiff, write_mask, write_png_preview

REGION = GeoRegion(10.0, 10.27, 20.0, 20.27)


def scene(value, cover=0.0, sensor="primary", mask=None, shape=(4, 4)):
    rgb = RasterTile(np.full((*shape, 3), float(value)), georef=REGION)
    mask = np.zeros(shape, bool) if mask is None else mask
    return SceneRecord(sensor, dt.date(2000, 1, 1), cover, rgb, mask)


def test_cloud_filter_is_strict():
    stack = ImageStack(REGION, (scene(1, 19.999), scene(2, 20.0), scene(3, 0.0)))
    kept = filter_scenes_by_cloud(stack, 20.0)
    assert [s.scene_cloud_cover for s in kept.scenes] == [19.999, 0.0]


def test_stack_requires_one_grid():
    with pytest.raises(AlignmentError):
        ImageStack(REGION, (scene(1), scene(2, shape=(5, 4))))
    with pytest.raises(AlignmentError):
        SceneRecord("primary", dt.date(2000, 1, 1), 0.0, RasterTile(np.zeros((3, 3))), np.zeros((2, 2), bool))


def test_fallback_fills_only_primary_gaps():
    gap = np.zeros((4, 4), bool)
    gap[0] = True
    primary = RasterTile(np.ones((4, 4, 3)), gap)
    fallback_mask = np.zeros((4, 4), bool)
    fallback_mask[0, 0] = True
    fallback = RasterTile(np.full((4, 4, 3), 5.0), fallback_mask)
    out = sensor_fallback_merge(primary, fallback)
    assert out.values[0, 1, 0] == 5.0 and out.values[1, 1, 0] == 1.0
    assert out.nodata_mask.sum() == 1 and out.nodata_mask[0, 0]
    assert sensor_fallback_merge(primary, fallback, mode="region") is primary
    empty = RasterTile(np.zeros((4, 4, 3)), np.ones((4, 4), bool))
    assert sensor_fallback_merge(empty, fallback, mode="region") is fallback


def test_build_mosaic_masks_clouds_and_uses_fallback():
    cloud = np.zeros((4, 4), bool)
    cloud[:2] = True
    scenes = [
        scene(10, 5.0, mask=cloud),
        scene(30, 5.0, mask=cloud),
        scene(999, 50.0),  # too cloudy, dropped
        scene(7, 0.0, sensor="fallback"),
    ]
    mosaic, stats = build_mosaic(scenes)
    assert np.all(mosaic.values[2:] == 20.0)  # median of 10 and 30
    assert np.all(mosaic.values[:2] == 7.0)  # masked rows filled from fallback
    assert stats["primary_kept"] == 2 and stats["fallback_pixels"] == 8
    assert mosaic.valid_count == 16


def test_build_mosaic_all_cloudy_gives_empty_tile():
    mosaic, stats = build_mosaic([scene(1, 80.0), scene(2, 90.0, sensor="fallback")])
    assert mosaic.valid_count == 0
    with pytest.raises(DegenerateInputError):
        build_mosaic([])


def test_geotiff_roundtrip(tmp_path):
    vals = np.random.default_rng(0).uniform(0, 255, (6, 5, 3))
    mask = np.zeros((6, 5), bool)
    mask[2, 3] = True
    tile = RasterTile(vals, mask, ValueDomain.JPEG_0_255, georef=REGION, units="dn")
    path = write_geotiff(tmp_path / "t.tif", tile)
    back = read_geotiff(path)
    assert np.array_equal(back.nodata_mask, mask)
    assert np.allclose(back.values[~mask], vals[~mask].astype(np.float32))
    assert back.value_domain is ValueDomain.JPEG_0_255 and back.units == "dn"
    assert back.georef.lat_max == pytest.approx(REGION.lat_max)
    assert back.georef.lon_max == pytest.approx(REGION.lon_max)
    assert not list(tmp_path.glob(".*tmp"))
    raw = np.asarray(__import__("tifffile").imread(path))
    assert raw[2, 3, 0] == NODATA_VALUE


def test_mask_roundtrip_and_errors(tmp_path):
    m = np.eye(4, dtype=bool)
    write_mask(tmp_path / "m.tif", m, REGION)
    assert np.array_equal(read_mask(tmp_path / "m.tif"), m)
    with pytest.raises(DataError):
        read_geotiff(tmp_path / "missing.tif")
    (tmp_path / "junk.tif").write_bytes(b"not a tiff")
    with pytest.raises(DataError):
        read_geotiff(tmp_path / "junk.tif")


def test_png_preview(tmp_path):
    tile = RasterTile(np.linspace(0, 255, 48).reshape(4, 4, 3), value_domain=ValueDomain.JPEG_0_255)
    p = write_png_preview(tmp_path / "p.png", tile)
    assert p.read_bytes()[:4] == b"\x89PNG"


def test_synthetic_catalog_loads(tmp_path):
    sites = [SiteCandidate((float(i), 0.0), buffer_site((float(i), 0.0))) for i in range(3)]
    write_synthetic_catalog(tmp_path, sites, seed=1, size=32, n_primary=3, n_fallback=1)
    regions = read_catalog(tmp_path)
    assert [r.site_id for r in regions] == [s.site_id for s in sites]
    scenes = load_scenes(tmp_path, regions[0])
    assert len(scenes) == 4
    assert [s.sensor for s in scenes].count(SensorRole.FALLBACK) == 1
    assert all(s.quality_mask.shape == (32, 32) for s in scenes)
    with pytest.raises(DataError):
        read_catalog(tmp_path / "nowhere")
