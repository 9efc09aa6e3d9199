"""Synthetic RGB/DEM pairs and scene catalogs for desk-scale runs.

Terrain is multi-octave value noise. The RGB rendering is driven by the
terrain (hillshade times an elevation-banded palette, plus seeded sensor
noise), so a model can actually learn elevation from colour and shading.
Values are emitted as Landsat-like surface-reflectance digital numbers.
"""

from __future__ import annotations

import datetime as dt
import math
from pathlib import Path

import numpy as np

from demgan.errors import ConfigError
from demgan.raster import GeoRegion, RasterTile

MIN_SIZE = 16

# Collection-2 surface reflectance: refl = DN * 2.75e-5 - 0.2
_SR_SCALE = 2.75e-5
_SR_OFFSET = -0.2

# (normalised elevation, reflectance RGB)
_PALETTE = np.array(
    [
        [0.00, 0.06, 0.10, 0.14],  # water / wet lowland
        [0.15, 0.08, 0.16, 0.06],  # vegetation
        [0.45, 0.16, 0.20, 0.09],  # dry grass
        [0.70, 0.26, 0.21, 0.15],  # bare soil / rock
        [0.90, 0.33, 0.31, 0.29],  # scree
        [1.00, 0.55, 0.56, 0.58],  # snow
    ]
)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(size: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth lattice noise in [0, 1] with ``cells`` lattice cells across the tile."""
    grid = rng.random((cells + 2, cells + 2))
    coords = np.linspace(0, cells, size, endpoint=False)
    i = np.floor(coords).astype(int)
    f = _fade(coords - i)
    iy, ix = np.meshgrid(i, i, indexing="ij")
    fy, fx = np.meshgrid(f, f, indexing="ij")
    v00 = grid[iy, ix]
    v01 = grid[iy, ix + 1]
    v10 = grid[iy + 1, ix]
    v11 = grid[iy + 1, ix + 1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def fractal_terrain(
    size: int, rng: np.random.Generator, octaves: int = 5, base_cells: int = 2, persistence: float = 0.5
) -> np.ndarray:
    """Sum of value-noise octaves normalised to [0, 1]."""
    total = np.zeros((size, size))
    amp = 1.0
    for o in range(octaves):
        total += amp * value_noise(size, base_cells * 2**o, rng)
        amp *= persistence
    total -= total.min()
    peak = total.max()
    return total / peak if peak > 0 else total


def hillshade(dem: np.ndarray, resolution: float = 30.0, azimuth: float = 315.0, altitude: float = 45.0):
    """Lambertian hillshade in [0, 1] for a 2-D elevation array in metres."""
    dzdy, dzdx = np.gradient(dem, resolution)
    # rows grow southward, so north-facing slope is +dzdy
    slope = np.arctan(np.hypot(dzdx, dzdy))
    aspect = np.arctan2(dzdy, -dzdx)
    az = math.radians(360.0 - azimuth + 90.0)
    alt = math.radians(altitude)
    shade = math.sin(alt) * np.cos(slope) + math.cos(alt) * np.sin(slope) * np.cos(az - aspect)
    return np.clip(shade, 0.0, 1.0)


def palette_colour(norm_elev: np.ndarray) -> np.ndarray:
    stops = _PALETTE[:, 0]
    return np.stack([np.interp(norm_elev, stops, _PALETTE[:, 1 + c]) for c in range(3)], axis=-1)


def render_rgb(
    dem: np.ndarray, rng: np.random.Generator, resolution: float = 30.0, noise: float = 0.01
) -> np.ndarray:
    """Reflectance-DN RGB rendering of a DEM."""
    lo, hi = dem.min(), dem.max()
    norm = (dem - lo) / (hi - lo) if hi > lo else np.zeros_like(dem)
    shade = hillshade(dem, resolution)
    refl = palette_colour(norm) * (0.35 + 0.9 * shade)[:, :, None]
    refl = refl + rng.normal(0.0, noise, refl.shape)
    refl = np.clip(refl, 0.0, 1.0)
    return (refl - _SR_OFFSET) / _SR_SCALE


def synthesize_terrain_pair(
    seed: int,
    size: int = 64,
    flat: bool = False,
    region: GeoRegion | None = None,
    resolution: float = 30.0,
) -> tuple[RasterTile, RasterTile]:
    """Deterministic (rgb, dem) pair for ``seed``.

    The DEM base elevation and relief are drawn per seed (relief roughly
    log-uniform between 5 m and 2.5 km) so elevation-range clusters exist
    in any reasonably sized corpus. ``flat=True`` gives a constant DEM.
    """
    if size < MIN_SIZE:
        raise ConfigError(f"synthetic tiles need size >= {MIN_SIZE}, got {size}")
    rng = np.random.default_rng([seed, 0x5EED])
    base = rng.uniform(0.0, 3000.0)
    if flat:
        dem = np.full((size, size), base)
    else:
        relief = math.exp(rng.uniform(math.log(5.0), math.log(2500.0)))
        octaves = int(rng.integers(3, 6))
        shape = fractal_terrain(size, rng, octaves=octaves, base_cells=int(rng.integers(1, 4)))
        dem = base + relief * shape ** rng.uniform(0.8, 1.8)
    rgb = render_rgb(dem, rng, resolution)
    dem_tile = RasterTile(dem, georef=region, units="m")
    rgb_tile = RasterTile(rgb, georef=region, units="dn")
    return rgb_tile, dem_tile


# --- catalog synthesis ---------------------------------------------------------


def synthesize_cloud_grid(
    seed: int, n_lat: int = 30, n_lon: int = 60, zero_fraction: float = 0.4, month: str = "2000-02"
):
    """Regular global grid of monthly cloud fractions with some exact-zero cells."""
    from demgan.sites import CloudFractionGrid

    rng = np.random.default_rng([seed, 0xC10D])
    lat = np.linspace(-55.0, 65.0, n_lat)
    lon = np.linspace(-175.0, 175.0, n_lon)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    frac = rng.uniform(0.01, 1.0, la.shape)
    frac[rng.random(la.shape) < zero_fraction] = 0.0
    return CloudFractionGrid(la.ravel(), lo.ravel(), frac.ravel(), month)


def _cloud_blobs(size: int, rng: np.random.Generator, cover: float):
    """Cloud mask (target cover fraction) and a shadow mask offset from it."""
    if cover <= 0:
        z = np.zeros((size, size), bool)
        return z, z
    field = value_noise(size, 4, rng)
    thresh = np.quantile(field, 1.0 - cover)
    cloud = field > thresh
    dy, dx = rng.integers(1, max(2, size // 12), size=2)
    shadow = np.roll(np.roll(cloud, dy, axis=0), dx, axis=1) & ~cloud
    return cloud, shadow


def synthesize_site_scenes(
    seed: int,
    rgb: RasterTile,
    n_primary: int = 4,
    n_fallback: int = 2,
    primary_dropout: float = 0.0,
):
    """Multi-date scenes over one site with clouds, shadows and their QA masks.

    Yields dicts with ``sensor``, ``date``, ``cloud_cover``, ``rgb`` (tile)
    and ``mask`` (bool array). ``primary_dropout`` is the probability that
    every primary scene at this site is heavily clouded, forcing fallback.
    """
    rng = np.random.default_rng([seed, 0x5CE])
    size = rgb.height
    base = rgb.values
    all_cloudy = rng.random() < primary_dropout
    scenes = []
    roles = ["primary"] * n_primary + ["fallback"] * n_fallback
    for i, role in enumerate(roles):
        if role == "primary" and all_cloudy:
            cover = rng.uniform(0.3, 0.9)
        else:
            cover = rng.choice([0.0, rng.uniform(0.02, 0.45)], p=[0.3, 0.7])
        cloud, shadow = _cloud_blobs(size, rng, cover)
        gain = rng.normal(1.0, 0.02)
        vals = base * gain + rng.normal(0.0, 60.0, base.shape)
        vals = np.where(cloud[:, :, None], 30000.0 + rng.normal(0, 500, base.shape), vals)
        vals = np.where(shadow[:, :, None], vals * 0.4, vals)
        mask = cloud | shadow
        date = dt.date(2000, 1, 1) + dt.timedelta(days=int(rng.integers(0, 366)))
        scenes.append(
            {
                "sensor": role,
                "date": date.isoformat(),
                "cloud_cover": round(float(mask.mean() * 100.0), 3),
                "rgb": rgb.with_values(vals),
                "mask": mask,
            }
        )
    return scenes


def write_synthetic_catalog(
    catalog_dir,
    sites,
    seed: int,
    size: int = 64,
    n_primary: int = 4,
    n_fallback: int = 2,
    primary_dropout: float = 0.1,
    all_cloudy: bool = False,
) -> Path:
    """Write scene/mask/DEM GeoTIFFs plus ``index.json`` for each site.

    ``all_cloudy=True`` makes every scene exceed the cloud-cover limit.
    """
    from demgan.ingest import write_catalog
    from demgan.tileio import write_geotiff, write_mask

    catalog_dir = Path(catalog_dir)
    regions = []
    for idx, site in enumerate(sites):
        site_seed = int(np.random.default_rng([seed, idx]).integers(2**31))
        rgb, dem = synthesize_terrain_pair(site_seed, size, region=site.region)
        sid = site.site_id
        dem_rel = f"dem/{sid}.tif"
        write_geotiff(catalog_dir / dem_rel, dem)
        entries = []
        scenes = synthesize_site_scenes(site_seed, rgb, n_primary, n_fallback, primary_dropout)
        for j, sc in enumerate(scenes):
            if all_cloudy:
                sc["cloud_cover"] = max(sc["cloud_cover"], 50.0)
            s_rel = f"scenes/{sid}_{j:02d}.tif"
            m_rel = f"masks/{sid}_{j:02d}.tif"
            write_geotiff(catalog_dir / s_rel, sc["rgb"])
            write_mask(catalog_dir / m_rel, sc["mask"], site.region)
            entries.append(
                {
                    "path": s_rel,
                    "mask_path": m_rel,
                    "sensor": sc["sensor"],
                    "date": sc["date"],
                    "cloud_cover": sc["cloud_cover"],
                }
            )
        regions.append(
            {"site_id": sid, "region": site.region.to_dict(), "dem_path": dem_rel, "scenes": entries}
        )
    return write_catalog(catalog_dir, regions)


def corrupt_training_pairs(manifest, fraction: float, seed: int):
    """Point a seeded share of training pairs at another training pair's DEM.

    The share is ``round(fraction * n_train)``. Corrupted entries carry
    ``extra["corrupted"] = donor_id``. Validation and test entries are untouched.
    """
    from demgan.curation import _round_half_up

    out = manifest.copy()
    train = sorted(out.split("train"), key=lambda e: e.pair_id)
    n_bad = _round_half_up(fraction * len(train))
    if n_bad == 0:
        return out
    if len(train) < 2:
        raise ConfigError("corruption needs at least two training pairs")
    rng = np.random.default_rng([seed, 0xBAD])
    victims = rng.choice(len(train), size=n_bad, replace=False)
    originals = [(e.dem_path, e.elevation_range, e.pair_id) for e in train]
    for v in sorted(victims.tolist()):
        donor = int(rng.integers(len(train) - 1))
        donor += donor >= v
        dem_path, er, donor_id = originals[donor]
        train[v].dem_path = dem_path
        train[v].elevation_range = er
        train[v].extra["corrupted"] = donor_id
    return out
