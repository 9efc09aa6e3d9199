"""Quality flags, dataset manifest, split assignment and SSIM refinement filter.

The manifest is line-delimited JSON, one pair per line, rewritten by whole
file atomic replace. Writers take an advisory lock next to the file so two
commands never mutate the same manifest at once.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from demgan.errors import ConfigError, DataError, EmptyDatasetError, PreconditionError
from demgan.raster import RasterTile, ValueDomain

log = logging.getLogger(__name__)

MIN_UNIQUE_VALUES = 20
MAX_DOMINANT_SHARE = 0.20
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class QualityFlags:
    low_unique_values: tuple[bool, ...]
    dominant_value_excess: bool
    degenerate: bool = False

    @property
    def excluded(self) -> bool:
        return self.degenerate or any(self.low_unique_values) or self.dominant_value_excess

    def to_dict(self) -> dict:
        return {
            "low_unique_values": list(self.low_unique_values),
            "dominant_value_excess": self.dominant_value_excess,
            "degenerate": self.degenerate,
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> QualityFlags:
        return cls(tuple(bool(v) for v in d["low_unique_values"]), bool(d["dominant_value_excess"]),
                   bool(d.get("degenerate", False)))


def spectral_diversity_flags(
    rgb: RasterTile,
    min_unique: int = MIN_UNIQUE_VALUES,
    max_share: float = MAX_DOMINANT_SHARE,
    per_band_share: bool = False,
) -> QualityFlags:
    """Flag tiles with too few distinct levels or one over-represented value.

    Values are rounded to 8-bit levels first. A band is low-diversity when
    it has fewer than ``min_unique`` distinct levels. The dominant-value
    flag fires when one level makes up more than ``max_share`` of all
    (pixel, band) samples pooled together, or, with ``per_band_share``, of
    any single band.
    """
    if rgb.value_domain is not ValueDomain.JPEG_0_255:
        raise ConfigError(f"quality flags expect a jpeg_0_255 tile, got {rgb.value_domain.value}")
    valid = ~rgb.nodata_mask
    if not valid.any():
        return QualityFlags(tuple(True for _ in range(rgb.bands)), True, degenerate=True)
    levels = np.clip(np.rint(rgb.values[valid]), 0, 255).astype(np.int64)  # (n, bands)
    low = tuple(bool(len(np.unique(levels[:, b])) < min_unique) for b in range(rgb.bands))
    if per_band_share:
        share = max(np.bincount(levels[:, b], minlength=256).max() / len(levels) for b in range(rgb.bands))
    else:
        share = np.bincount(levels.ravel(), minlength=256).max() / levels.size
    return QualityFlags(low, bool(share > max_share))


@dataclass
class ManifestEntry:
    pair_id: str
    rgb_path: str
    dem_path: str
    region: dict | None = None
    flags: QualityFlags | None = None
    split: str | None = None
    ssim_score: float | None = None
    elevation_range: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = self.flags.to_dict() if self.flags is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ManifestEntry:
        d = dict(d)
        if d.get("flags") is not None:
            d["flags"] = QualityFlags.from_dict(d["flags"])
        return cls(**d)

    @property
    def usable(self) -> bool:
        return self.flags is not None and not self.flags.excluded


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.pair_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate pair ids in manifest: {dupes[:5]}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name and e.usable]

    def usable(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.usable]

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.pair_id: e for e in self.entries}

    def copy(self) -> DatasetManifest:
        return DatasetManifest([replace(e, extra=dict(e.extra)) for e in self.entries])

    def split_counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}


def manifest_lines(manifest: DatasetManifest) -> list[str]:
    return [json.dumps(e.to_dict(), sort_keys=True) for e in manifest.entries]


def save_manifest(path, manifest: DatasetManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text("".join(line + "\n" for line in manifest_lines(manifest)))
    os.replace(tmp, path)
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise DataError(f"{path}:{n}: bad manifest line: {exc}") from exc
    return DatasetManifest(entries)


@contextmanager
def manifest_lock(path, timeout: float = 10.0):
    """Advisory lock guarding writers of ``path``."""
    lock = FileLock(str(Path(path)) + ".lock", timeout=timeout)
    try:
        with lock:
            yield
    except Timeout as exc:
        raise DataError(f"manifest {path} is locked by another command") from exc


def exclude_flagged_pairs(manifest: DatasetManifest) -> tuple[DatasetManifest, int]:
    """Drop flagged pairs from split enumeration; returns (manifest, retained count)."""
    missing = [e.pair_id for e in manifest if e.flags is None]
    if missing:
        raise PreconditionError(f"quality flags missing for {len(missing)} pairs: {missing[:5]}")
    out = manifest.copy()
    retained = 0
    for e in out:
        if e.flags.excluded:
            e.split = None
        else:
            retained += 1
    log.info("quality filter retained %d of %d pairs", retained, len(out))
    return out, retained


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_fractions(fractions):
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError(f"need three non-negative split fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")


def split_sizes(n: int, fractions=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    """(train, val, test) sizes: val and test rounded half-up, train takes the rest."""
    _check_fractions(fractions)
    n_val = _round_half_up(fractions[1] * n)
    n_test = _round_half_up(fractions[2] * n)
    if n_val + n_test > n:
        raise ConfigError(f"val+test ({n_val}+{n_test}) exceed {n} entries")
    return n - n_val - n_test, n_val, n_test


def split_dataset(manifest: DatasetManifest, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetManifest:
    """Seeded shuffle of usable entries into train/val/test."""
    _check_fractions(fractions)
    out = manifest.copy()
    usable = sorted((e for e in out if e.usable), key=lambda e: e.pair_id)
    if len(usable) == 0:
        raise EmptyDatasetError("no usable entries to split")
    if len(usable) < 3:
        raise EmptyDatasetError(f"need at least 3 usable entries to split, got {len(usable)}")
    n_train, n_val, n_test = split_sizes(len(usable), fractions)
    order = np.random.default_rng(seed).permutation(len(usable))
    for rank, idx in enumerate(order):
        e = usable[idx]
        if rank < n_val:
            e.split = "val"
        elif rank < n_val + n_test:
            e.split = "test"
        else:
            e.split = "train"
    for e in out:
        if not e.usable:
            e.split = None
    return out


def ssim_filter_removals(manifest: DatasetManifest, threshold: float) -> list[ManifestEntry]:
    """Training entries whose stage-1 score is strictly below ``threshold``."""
    train = manifest.split("train")
    unscored = [e.pair_id for e in train if e.ssim_score is None]
    if unscored:
        raise PreconditionError(
            f"{len(unscored)} training pairs have no stage-1 SSIM score: {unscored[:10]}"
        )
    return [e for e in train if e.ssim_score < threshold]


def filter_training_by_ssim(manifest: DatasetManifest, threshold: float) -> DatasetManifest:
    """Remove low-scoring training pairs; validation and test entries are untouched."""
    if not -1.0 <= threshold <= 1.0:
        raise ConfigError(f"SSIM threshold must lie in [-1, 1], got {threshold}")
    removed = {e.pair_id for e in ssim_filter_removals(manifest, threshold)}
    out = manifest.copy()
    out.entries = [e for e in out.entries if e.pair_id not in removed]
    log.info("SSIM filter < %.3f removed %d training pairs: %s", threshold, len(removed), sorted(removed))
    return out


# --- audit logs ------------------------------------------------------------------


def write_exclusion_audit(path, manifest: DatasetManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "low_unique_bands", "dominant_value_excess", "degenerate", "excluded"])
        for e in manifest:
            f = e.flags
            if f is None:
                continue
            bands = "".join("RGB"[i] if i < 3 else str(i) for i, v in enumerate(f.low_unique_values) if v)
            w.writerow([e.pair_id, bands, int(f.dominant_value_excess), int(f.degenerate), int(f.excluded)])
    return path


def write_refinement_audit(path, manifest: DatasetManifest, threshold: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    removed = {e.pair_id for e in ssim_filter_removals(manifest, threshold)}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "ssim_score", "threshold", "removed"])
        for e in manifest.split("train"):
            w.writerow([e.pair_id, repr(e.ssim_score), threshold, int(e.pair_id in removed)])
    return path
