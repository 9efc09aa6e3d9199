"""Load manifest pairs into in-memory signed-unit tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from demgan.curation import DatasetManifest, ManifestEntry
from demgan.errors import DataError, EmptyDatasetError
from demgan.raster import RasterTile, ValueDomain, scale_to_signed_unit
from demgan.tileio import read_geotiff


def _to_signed(tile: RasterTile) -> RasterTile:
    if tile.value_domain is ValueDomain.SIGNED_UNIT:
        return tile
    return scale_to_signed_unit(tile)


def check_files(entries: list[ManifestEntry], root) -> None:
    """Raise one error listing every missing tile file."""
    root = Path(root)
    missing = [
        f"{e.pair_id}: {p}"
        for e in entries
        for p in (e.rgb_path, e.dem_path)
        if not (root / p).is_file()
    ]
    if missing:
        raise DataError(f"{len(missing)} tile file(s) missing:\n  " + "\n  ".join(missing))


def load_pair(entry: ManifestEntry, root) -> tuple[RasterTile, RasterTile]:
    root = Path(root)
    rgb = _to_signed(read_geotiff(root / entry.rgb_path))
    dem = _to_signed(read_geotiff(root / entry.dem_path))
    return rgb, dem


def load_split_arrays(manifest: DatasetManifest, split: str, root) -> tuple[list[str], np.ndarray, np.ndarray]:
    """``(pair_ids, rgb (n,3,h,w), dem (n,1,h,w))`` as float32, nodata filled with 0."""
    entries = manifest.split(split)
    if not entries:
        raise EmptyDatasetError(f"split {split!r} is empty")
    return load_entries(entries, root)


def load_entries(entries: list[ManifestEntry], root):
    check_files(entries, root)
    ids, rgbs, dems = [], [], []
    for e in entries:
        rgb, dem = load_pair(e, root)
        ids.append(e.pair_id)
        rgbs.append(rgb.filled(0.0).transpose(2, 0, 1))
        dems.append(dem.filled(0.0).transpose(2, 0, 1))
    return ids, np.stack(rgbs).astype(np.float32), np.stack(dems).astype(np.float32)


def as_tensor(a: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
