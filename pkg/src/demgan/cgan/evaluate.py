"""Deterministic per-sample evaluation of a generator."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from demgan.cgan.data import as_tensor, load_entries
from demgan.cgan.train import ModelCheckpoint
from demgan.curation import DatasetManifest, ManifestEntry
from demgan.errors import EmptyDatasetError
from demgan.metrics import EvalRecord, rmse, ssim

# (n, 3, h, w) signed-unit RGB -> (n, 1, h, w) signed-unit DEM
Predictor = Callable[[np.ndarray], np.ndarray]


class CheckpointPredictor:
    """Generator from a checkpoint, run with dropout disabled."""

    def __init__(self, ckpt: ModelCheckpoint, batch_size: int = 32):
        self.gen = ckpt.build_generator()
        self.batch_size = batch_size

    @torch.no_grad()
    def __call__(self, rgb: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(rgb), self.batch_size):
            x = as_tensor(rgb[i : i + self.batch_size])
            out.append(self.gen(x, stochastic=False).numpy())
        return np.concatenate(out).astype(np.float64)


def score_entries(predict: Predictor, entries: list[ManifestEntry], root) -> list[EvalRecord]:
    ids, rgb, dem = load_entries(entries, root)
    pred = predict(rgb)
    by_id = {e.pair_id: e for e in entries}
    records = []
    for pid, p, t in zip(ids, pred, dem):
        t = t[0].astype(np.float64)
        p = np.clip(p[0], -1.0, 1.0)
        er = by_id[pid].elevation_range
        records.append(EvalRecord(pid, ssim(p, t), rmse(p, t), float(er) if er is not None else float("nan")))
    return records


def evaluate_model(model, manifest: DatasetManifest, split: str, *, root) -> list[EvalRecord]:
    """SSIM/RMSE per pair of ``split``; ``model`` is a checkpoint or a predictor callable."""
    entries = manifest.split(split)
    if not entries:
        raise EmptyDatasetError(f"split {split!r} is empty")
    predict = CheckpointPredictor(model) if isinstance(model, ModelCheckpoint) else model
    return score_entries(predict, entries, root)
