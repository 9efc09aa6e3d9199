"""Cloud-free site mining: zero-cloud cells, buffered regions, spatial clustering."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from demgan.errors import ConfigError, DataError
from demgan.kmeans import ClusterModel, minibatch_kmeans
from demgan.raster import GeoRegion

DEFAULT_BUFFER_DEG = 0.135


@dataclass(frozen=True)
class CloudFractionGrid:
    lat: np.ndarray
    lon: np.ndarray
    cloud_fraction: np.ndarray
    month: str = ""

    def __post_init__(self):
        lat = np.asarray(self.lat, dtype=np.float64).ravel()
        lon = np.asarray(self.lon, dtype=np.float64).ravel()
        frac = np.asarray(self.cloud_fraction, dtype=np.float64).ravel()
        if not (lat.shape == lon.shape == frac.shape):
            raise DataError("cloud grid columns have different lengths")
        if np.any((frac < 0) | (frac > 1)) or not np.all(np.isfinite(frac)):
            raise DataError("cloud fractions must lie in [0, 1]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "cloud_fraction", frac)

    def __len__(self):
        return len(self.lat)


@dataclass(frozen=True)
class SiteCandidate:
    center: tuple[float, float]
    region: GeoRegion
    cluster_id: int | None = None

    @property
    def site_id(self) -> str:
        lat, lon = self.center
        return f"site_{lat:+09.4f}_{lon:+010.4f}"

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "lat": self.center[0],
            "lon": self.center[1],
            "region": self.region.to_dict(),
            "cluster_id": self.cluster_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SiteCandidate:
        return cls(
            center=(float(d["lat"]), float(d["lon"])),
            region=GeoRegion.from_dict(d["region"]),
            cluster_id=d.get("cluster_id"),
        )


def extract_zero_cloud_sites(grid: CloudFractionGrid) -> list[tuple[float, float]]:
    """Cell centres whose cloud fraction is exactly zero, sorted by (lat, lon)."""
    if len(grid) == 0:
        raise DataError("cloud-fraction grid is empty")
    zero = grid.cloud_fraction == 0.0
    pts = sorted(zip(grid.lat[zero].tolist(), grid.lon[zero].tolist()))
    return [(float(a), float(b)) for a, b in pts]


def buffer_site(
    center: tuple[float, float], buffer: float = DEFAULT_BUFFER_DEG, resolution: float = 30.0
) -> GeoRegion:
    """Square region ``center +/- buffer`` degrees on both axes."""
    lat, lon = center
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ConfigError(f"non-finite site centre {center}")
    if not buffer > 0:
        raise ConfigError(f"buffer must be positive, got {buffer}")
    return GeoRegion(lat - buffer, lat + buffer, lon - buffer, lon + buffer, resolution)


def cluster_sites(
    centers: list[tuple[float, float]],
    k: int = 100,
    batch: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 300,
) -> ClusterModel:
    # plain Euclidean distance in degree space; distorted near the poles
    return minibatch_kmeans(
        np.asarray(centers, dtype=np.float64), k=k, batch=batch, seed=seed, tol=tol, max_iter=max_iter
    )


def select_representative_sites(
    model: ClusterModel, candidates: list[SiteCandidate]
) -> list[SiteCandidate]:
    """Pick, for every non-empty cluster, the candidate closest to its centroid.

    Ties go to the lexicographically smallest (lat, lon). The result is
    ordered by cluster index and each candidate carries its cluster id.
    """
    if len(candidates) != len(model.assignments):
        raise ConfigError("model assignments do not match the candidate list")
    out = []
    for j, c in enumerate(model.centroids):
        members = [i for i, a in enumerate(model.assignments) if a == j]
        if not members:
            continue

        def key(i):
            lat, lon = candidates[i].center
            return ((lat - c[0]) ** 2 + (lon - c[1]) ** 2, lat, lon)

        best = min(members, key=key)
        out.append(SiteCandidate(candidates[best].center, candidates[best].region, j))
    return out


def label_candidates(model: ClusterModel, candidates: list[SiteCandidate]) -> list[SiteCandidate]:
    return [
        SiteCandidate(c.center, c.region, int(a)) for c, a in zip(candidates, model.assignments)
    ]


# --- file formats -------------------------------------------------------------


def read_cloud_grid(path, month: str = "") -> CloudFractionGrid:
    """Load a grid from CSV (``lat,lon,fraction`` header) or a single-band GeoTIFF."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cloud-fraction grid not found: {path}")
    if path.suffix.lower() in (".tif", ".tiff"):
        from demgan.tileio import read_geotiff

        tile = read_geotiff(path)
        if tile.georef is None:
            raise DataError(f"{path} has no georeference")
        g = tile.georef
        dlat = (g.lat_max - g.lat_min) / tile.height
        dlon = (g.lon_max - g.lon_min) / tile.width
        rows, cols = np.nonzero(~tile.nodata_mask)
        lat = g.lat_max - (rows + 0.5) * dlat
        lon = g.lon_min + (cols + 0.5) * dlon
        return CloudFractionGrid(lat, lon, tile.values[rows, cols, 0], month)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        lat = [float(r["lat"]) for r in rows]
        lon = [float(r["lon"]) for r in rows]
        frac = [float(r["fraction"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed cloud grid CSV {path}: {exc}") from exc
    return CloudFractionGrid(lat, lon, frac, month)


def write_cloud_grid(path, grid: CloudFractionGrid) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "fraction"])
        for a, b, f in zip(grid.lat, grid.lon, grid.cloud_fraction):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(f))])


def write_sites(csv_path, json_path, sites: list[SiteCandidate], extra: dict | None = None):
    for p in (csv_path, json_path):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    with Path(csv_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "lat", "lon", "lat_min", "lat_max", "lon_min", "lon_max", "cluster_id"])
        for s in sites:
            r = s.region
            w.writerow(
                [s.site_id, s.center[0], s.center[1], r.lat_min, r.lat_max, r.lon_min, r.lon_max,
                 "" if s.cluster_id is None else s.cluster_id]
            )
    doc = {"sites": [s.to_dict() for s in sites], **(extra or {})}
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_sites(json_path) -> list[SiteCandidate]:
    path = Path(json_path)
    if not path.is_file():
        raise DataError(f"site list not found: {path}")
    doc = json.loads(path.read_text())
    return [SiteCandidate.from_dict(d) for d in doc["sites"]]
