"""Stage training loop and checkpoints."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from demgan.cgan.data import as_tensor, load_split_arrays
from demgan.cgan.losses import discriminator_loss, generator_loss
from demgan.cgan.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UNetGenerator,
    init_weights,
)
from demgan.curation import DatasetManifest
from demgan.errors import ConfigError, DataError, TrainingDivergedError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
LOG_COLUMNS = ("step", "gen_total", "gan_term", "l1_term", "disc_total")


@dataclass(frozen=True)
class TrainingStageConfig:
    learning_rate: float = 2e-4
    steps: int = 5000
    batch_size: int = 8
    lambda_l1: float = 100.0
    seed: int = 0
    stage: str = "stage1"
    beta1: float = 0.5
    beta2: float = 0.999
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.stage not in ("stage1", "stage2"):
            raise ConfigError(f"stage must be stage1 or stage2, got {self.stage!r}")


def config_hash(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig) -> str:
    blob = json.dumps({"generator": gen_cfg.to_dict(), "discriminator": disc_cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelCheckpoint:
    generator_state: dict
    discriminator_state: dict
    optimizer_state: dict
    step: int
    gen_cfg: GeneratorConfig
    disc_cfg: DiscriminatorConfig
    stage_cfg: dict = field(default_factory=dict)
    stages: list[str] = field(default_factory=list)
    config_hash: str = ""
    format_version: int = CHECKPOINT_FORMAT

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.gen_cfg, self.disc_cfg)

    def build_generator(self) -> UNetGenerator:
        gen = UNetGenerator(self.gen_cfg)
        gen.load_state_dict(self.generator_state)
        gen.eval()
        return gen

    def build_discriminator(self) -> PatchDiscriminator:
        disc = PatchDiscriminator(self.disc_cfg)
        disc.load_state_dict(self.discriminator_state)
        disc.eval()
        return disc


def save_checkpoint(path, ckpt: ModelCheckpoint) -> Path:
    """Atomic write: serialise to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ckpt.format_version,
        "config_hash": ckpt.config_hash,
        "step": ckpt.step,
        "gen_cfg": ckpt.gen_cfg.to_dict(),
        "disc_cfg": ckpt.disc_cfg.to_dict(),
        "stage_cfg": ckpt.stage_cfg,
        "stages": ckpt.stages,
        "generator": ckpt.generator_state,
        "discriminator": ckpt.discriminator_state,
        "optimizer": ckpt.optimizer_state,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {payload.get('format_version')}")
    gen_cfg = GeneratorConfig(**payload["gen_cfg"])
    disc_cfg = DiscriminatorConfig(**payload["disc_cfg"])
    expected = config_hash(gen_cfg, disc_cfg)
    if payload["config_hash"] != expected:
        raise DataError(f"{path}: config hash mismatch ({payload['config_hash']} != {expected})")
    return ModelCheckpoint(
        generator_state=payload["generator"],
        discriminator_state=payload["discriminator"],
        optimizer_state=payload["optimizer"],
        step=int(payload["step"]),
        gen_cfg=gen_cfg,
        disc_cfg=disc_cfg,
        stage_cfg=payload["stage_cfg"],
        stages=list(payload["stages"]),
        config_hash=payload["config_hash"],
    )


def write_training_log(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(r[c]) for c in LOG_COLUMNS[1:]])
    return path


def _snapshot(gen, disc, opt_g, opt_d, step, gen_cfg, disc_cfg, cfg, stages) -> ModelCheckpoint:
    clone = lambda sd: {k: v.detach().clone() if torch.is_tensor(v) else v for k, v in sd.items()}  # noqa: E731
    return ModelCheckpoint(
        generator_state=clone(gen.state_dict()),
        discriminator_state=clone(disc.state_dict()),
        optimizer_state=copy.deepcopy({"generator": opt_g.state_dict(), "discriminator": opt_d.state_dict()}),
        step=step,
        gen_cfg=gen_cfg,
        disc_cfg=disc_cfg,
        stage_cfg=asdict(cfg),
        stages=stages,
    )


def train_on_arrays(
    rgb: np.ndarray,
    dem: np.ndarray,
    cfg: TrainingStageConfig,
    init: ModelCheckpoint | None = None,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
    checkpoint_path=None,
    dtype=torch.float32,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Alternate discriminator and generator Adam updates on in-memory pairs.

    ``rgb`` is ``(n, 3, h, w)`` and ``dem`` is ``(n, 1, h, w)``, both signed
    unit. With ``init`` the networks, optimiser moments and step counter
    continue from the checkpoint; the learning rate is always ``cfg``'s.
    """
    if len(rgb) == 0:
        raise DataError("no training pairs")
    torch.manual_seed(cfg.seed)
    if init is not None:
        gen_cfg, disc_cfg = init.gen_cfg, init.disc_cfg
    gen = UNetGenerator(gen_cfg).to(dtype)
    disc = PatchDiscriminator(disc_cfg).to(dtype)
    init_weights(gen)
    init_weights(disc)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    step = 0
    stages: list[str] = []
    if init is not None:
        gen.load_state_dict(init.generator_state)
        disc.load_state_dict(init.discriminator_state)
        if init.optimizer_state:
            opt_g.load_state_dict(init.optimizer_state["generator"])
            opt_d.load_state_dict(init.optimizer_state["discriminator"])
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = cfg.learning_rate
                group["betas"] = (cfg.beta1, cfg.beta2)
        step = init.step
        stages = list(init.stages)
    stages.append(cfg.stage)
    gen.train()
    disc.train()

    x_all = as_tensor(rgb, dtype)
    y_all = as_tensor(dem, dtype)
    n = len(x_all)
    batch = min(cfg.batch_size, n)
    order_rng = torch.Generator().manual_seed(cfg.seed)
    perm = torch.randperm(n, generator=order_rng)
    cursor = 0
    rows = []
    t0 = time.perf_counter()
    for i in range(cfg.steps):
        if cursor + batch > n:
            perm = torch.randperm(n, generator=order_rng)
            cursor = 0
        idx = perm[cursor : cursor + batch]
        cursor += batch
        x, y = x_all[idx], y_all[idx]

        fake = gen(x, stochastic=True)

        opt_d.zero_grad(set_to_none=True)
        d_total, _, _ = discriminator_loss(disc(x, y), disc(x, fake.detach()))
        if not math.isfinite(d_total.item()):
            raise TrainingDivergedError(f"non-finite discriminator loss at step {step + 1}")
        d_total.backward()
        opt_d.step()

        opt_g.zero_grad(set_to_none=True)
        g_total, gan, l1 = generator_loss(disc(x, fake), fake, y, cfg.lambda_l1)
        if not math.isfinite(g_total.item()):
            raise TrainingDivergedError(f"non-finite generator loss at step {step + 1}")
        g_total.backward()
        opt_g.step()

        step += 1
        values = [g_total.item(), gan.item(), l1.item(), d_total.item()]
        rows.append(dict(zip(LOG_COLUMNS, [step, *values])))
        if cfg.checkpoint_every and checkpoint_path and step % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, _snapshot(gen, disc, opt_g, opt_d, step, gen_cfg, disc_cfg, cfg, stages))
        if (i + 1) % 500 == 0:
            log.info("%s step %d: gen %.4f (l1 %.4f) disc %.4f [%.1fs]", cfg.stage, step,
                     values[0], values[2], values[3], time.perf_counter() - t0)

    ckpt = _snapshot(gen, disc, opt_g, opt_d, step, gen_cfg, disc_cfg, cfg, stages)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, rows


def train_stage(
    manifest: DatasetManifest,
    cfg: TrainingStageConfig,
    init: ModelCheckpoint | None = None,
    *,
    root,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
    checkpoint_path=None,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Train on the manifest's train split (tiles resolved against ``root``)."""
    _, rgb, dem = load_split_arrays(manifest, "train", root)
    return train_on_arrays(rgb, dem, cfg, init, gen_cfg, disc_cfg, checkpoint_path)
