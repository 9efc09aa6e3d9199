"""Evaluation metrics and report material.

SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
window fits entirely inside the tile, with stability constants
``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2``. ``L`` defaults to 2, the width
of the signed-unit range. Windows touching a nodata pixel are skipped.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from demgan.errors import AlignmentError, ConfigError, DegenerateInputError, DomainError, EmptyDatasetError
from demgan.kmeans import lloyd_kmeans
from demgan.raster import RasterTile, ValueDomain

log = logging.getLogger(__name__)

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
SIGNED_UNIT_RANGE = 2.0


@dataclass(frozen=True)
class EvalRecord:
    pair_id: str
    ssim: float
    rmse: float
    elevation_range: float
    cluster_id: int | None = None

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if not self.rmse >= 0.0:
            raise ValueError(f"rmse must be non-negative: {self.rmse}")


@dataclass(frozen=True)
class AggregateStats:
    mean_ssim: float
    median_ssim: float
    mean_rmse: float
    median_rmse: float
    count: int


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _plane(a, name: str) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, RasterTile):
        if a.value_domain is not ValueDomain.SIGNED_UNIT:
            raise DomainError(f"{name}: expected signed_unit tile, got {a.value_domain.value}")
        if a.bands != 1:
            raise AlignmentError(f"{name}: expected a single-band tile, got {a.bands} bands")
        return a.values[:, :, 0], a.nodata_mask
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise AlignmentError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    return arr, np.zeros(arr.shape, dtype=bool)


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation with the same taps on both axes
    rows = sliding_window_view(x, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim_map(a, b, data_range: float = SIGNED_UNIT_RANGE, window: int = WINDOW_SIZE,
             sigma: float = WINDOW_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """Local SSIM for every window position plus a boolean map of usable windows."""
    x, mx = _plane(a, "a")
    y, my = _plane(b, "b")
    if x.shape != y.shape:
        raise AlignmentError(f"SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    if x.shape[0] < window or x.shape[1] < window:
        raise ConfigError(f"tile {x.shape} is smaller than the {window}x{window} SSIM window")
    mask = mx | my
    x = np.where(mask, 0.0, x)
    y = np.where(mask, 0.0, y)
    g = gaussian_window(window, sigma)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    usable = ~sliding_window_view(mask, (window, window)).any(axis=(2, 3))
    return num / den, usable


def ssim(a, b, data_range: float = SIGNED_UNIT_RANGE) -> float:
    """Mean local SSIM between two single-band signed-unit tiles, in [-1, 1]."""
    smap, usable = ssim_map(a, b, data_range)
    if not usable.any():
        raise DegenerateInputError("every SSIM window touches a nodata pixel")
    return float(np.clip(smap[usable].mean(), -1.0, 1.0))


def rmse(a, b) -> float:
    """Root mean squared difference over pixels valid in both inputs."""
    if isinstance(a, RasterTile) and isinstance(b, RasterTile):
        if a.values.shape != b.values.shape:
            raise AlignmentError(f"RMSE inputs differ in shape: {a.values.shape} vs {b.values.shape}")
        valid = ~(a.nodata_mask | b.nodata_mask)
        diff = (a.values - b.values)[valid]
    else:
        x = np.asarray(a.values if isinstance(a, RasterTile) else a, dtype=np.float64)
        y = np.asarray(b.values if isinstance(b, RasterTile) else b, dtype=np.float64)
        if x.shape != y.shape:
            raise AlignmentError(f"RMSE inputs differ in shape: {x.shape} vs {y.shape}")
        diff = (x - y).ravel()
    if diff.size == 0:
        raise DegenerateInputError("no overlapping valid pixels for RMSE")
    return float(np.sqrt(np.mean(diff * diff)))


def aggregate_stats(records: list[EvalRecord]) -> AggregateStats:
    if not records:
        raise EmptyDatasetError("cannot aggregate an empty record list")
    s = np.array([r.ssim for r in records])
    e = np.array([r.rmse for r in records])
    return AggregateStats(
        mean_ssim=float(s.mean()),
        median_ssim=float(np.median(s)),
        mean_rmse=float(e.mean()),
        median_rmse=float(np.median(e)),
        count=len(records),
    )


def elevation_range(dem: RasterTile) -> float:
    valid = ~dem.nodata_mask
    if not valid.any():
        raise DegenerateInputError("DEM tile has no unmasked pixels")
    v = dem.values[:, :, 0][valid]
    return float(v.max() - v.min())


def cluster_by_elevation_range(records: list[EvalRecord], k: int = 3, seed: int = 0) -> list[EvalRecord]:
    """1-D k-means on elevation range; cluster 0 is always the flattest.

    Empty clusters are dropped and the survivors renumbered by ascending
    mean range.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(records) < k:
        raise ConfigError(f"need at least k={k} records, got {len(records)}")
    ranges = np.array([r.elevation_range for r in records], dtype=np.float64)
    model = lloyd_kmeans(ranges, k=k, seed=seed)
    used = sorted(set(model.assignments.tolist()), key=lambda j: ranges[model.assignments == j].mean())
    relabel = {old: new for new, old in enumerate(used)}
    return [replace(r, cluster_id=relabel[int(a)]) for r, a in zip(records, model.assignments)]


def ssim_histogram(records: list[EvalRecord], bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts of SSIM scores over ``bins`` uniform bins spanning [-1, 1]."""
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram([r.ssim for r in records], bins=edges)
    return edges, counts


def cluster_summary(records: list[EvalRecord]) -> list[dict]:
    """Box-plot statistics of SSIM per elevation cluster."""
    out = []
    for cid in sorted({r.cluster_id for r in records if r.cluster_id is not None}):
        members = [r for r in records if r.cluster_id == cid]
        s = np.array([r.ssim for r in members])
        er = np.array([r.elevation_range for r in members])
        q1, med, q3 = np.percentile(s, [25, 50, 75])
        out.append(
            {
                "cluster_id": cid,
                "count": len(members),
                "range_min": float(er.min()),
                "range_mean": float(er.mean()),
                "range_max": float(er.max()),
                "ssim_min": float(s.min()),
                "ssim_q1": float(q1),
                "ssim_median": float(med),
                "ssim_q3": float(q3),
                "ssim_max": float(s.max()),
                "ssim_mean": float(s.mean()),
            }
        )
    return out


# --- report files -----------------------------------------------------------------


def write_records_csv(path, records: list[EvalRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "ssim", "rmse", "elevation_range", "cluster_id"])
        for r in records:
            w.writerow([r.pair_id, repr(r.ssim), repr(r.rmse), repr(r.elevation_range),
                        "" if r.cluster_id is None else r.cluster_id])
    return path


def read_records_csv(path) -> list[EvalRecord]:
    with Path(path).open(newline="") as fh:
        return [
            EvalRecord(
                row["pair_id"],
                float(row["ssim"]),
                float(row["rmse"]),
                float(row["elevation_range"]),
                int(row["cluster_id"]) if row["cluster_id"] else None,
            )
            for row in csv.DictReader(fh)
        ]


def write_aggregate_json(path, stats: AggregateStats, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {**asdict(stats), **(extra or {})}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_histogram_csv(path, edges: np.ndarray, counts: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return path


def write_cluster_csv(path, summary: list[dict]) -> Path:
    path = Path(path)
    cols = ["cluster_id", "count", "range_min", "range_mean", "range_max", "ssim_min", "ssim_q1",
            "ssim_median", "ssim_q3", "ssim_max", "ssim_mean"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(summary)
    return path


def render_svgs(out_dir, records: list[EvalRecord], edges, counts) -> list[Path]:
    """Histogram and per-cluster box plot as SVG (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    paths = []
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k")
    ax.set_xlabel("SSIM")
    ax.set_ylabel("count")
    fig.tight_layout()
    p = out_dir / "ssim_histogram.svg"
    fig.savefig(p, metadata={"Date": None})
    plt.close(fig)
    paths.append(p)

    clusters = sorted({r.cluster_id for r in records if r.cluster_id is not None})
    if clusters:
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        for cid in clusters:
            m = [r for r in records if r.cluster_id == cid]
            a1.scatter([r.elevation_range for r in m], [r.ssim for r in m], s=8, label=f"Cluster {cid}")
        a1.set_xlabel("elevation range (m)")
        a1.set_ylabel("SSIM")
        a1.legend(fontsize=7)
        a2.boxplot([[r.ssim for r in records if r.cluster_id == c] for c in clusters])
        a2.set_xticks(range(1, len(clusters) + 1), [str(c) for c in clusters])
        a2.set_xlabel("cluster")
        fig.tight_layout()
        p = out_dir / "ssim_clusters.svg"
        fig.savefig(p, metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
