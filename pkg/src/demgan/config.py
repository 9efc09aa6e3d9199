"""Pipeline configuration: one YAML file, optional ``section.key=value`` overrides.

Relative paths resolve against ``paths.workdir``, which itself resolves
against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from demgan.cgan.models import DiscriminatorConfig, GeneratorConfig
from demgan.cgan.train import TrainingStageConfig
from demgan.errors import ConfigError
from demgan.raster import StretchParams


def derive_seed(root: int, label: str) -> int:
    """Stable per-module seed from the root seed and a fixed label."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class Paths:
    workdir: str = "run"
    cloud_grid: str = "inputs/cloud_grid.csv"
    catalog: str = "inputs/catalog"
    sites: str = "sites/sites.json"
    tiles: str = "dataset/tiles"
    manifest: str = "dataset/manifest.jsonl"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


@dataclass
class SiteParams:
    buffer_deg: float = 0.135
    k: int = 100
    batch: int = 100
    tol: float = 1e-6
    max_iter: int = 300
    # "representatives": one site per cluster; "candidates": every buffered zero-cloud cell
    mode: str = "representatives"


@dataclass
class IngestParams:
    max_cloud_cover: float = 20.0
    fallback_mode: str = "pixel"
    tile_size: int = 256
    strict_jpeg: bool = False


@dataclass
class QualityParams:
    min_unique_values: int = 20
    max_dominant_share: float = 0.20
    per_band_share: bool = False


@dataclass
class EvalParams:
    histogram_bins: int = 20
    cluster_k: int = 3
    svg: bool = False


@dataclass
class SyntheticParams:
    n_pairs: int = 300
    n_lat: int = 30
    n_lon: int = 60
    zero_fraction: float = 0.4
    n_primary: int = 4
    n_fallback: int = 2
    primary_dropout: float = 0.1
    all_cloudy: bool = False
    # share of training pairs whose DEM is swapped for another pair's (refinement experiments)
    corrupt_fraction: float = 0.0


def _stage1_default():
    return TrainingStageConfig(learning_rate=2e-4, steps=5000, batch_size=8, stage="stage1")


def _stage2_default():
    return TrainingStageConfig(learning_rate=1e-4, steps=2500, batch_size=8, stage="stage2")


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    stretch: StretchParams = field(default_factory=StretchParams)
    sites: SiteParams = field(default_factory=SiteParams)
    ingest: IngestParams = field(default_factory=IngestParams)
    quality: QualityParams = field(default_factory=QualityParams)
    split_fractions: tuple = (0.8, 0.1, 0.1)
    generator: GeneratorConfig = field(default_factory=lambda: GeneratorConfig(depth=6, base_channels=32))
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    stage1: TrainingStageConfig = field(default_factory=_stage1_default)
    stage2: TrainingStageConfig = field(default_factory=_stage2_default)
    ssim_filter_threshold: float = 0.2
    eval: EvalParams = field(default_factory=EvalParams)
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    base_dir: str = "."

    def path(self, name: str) -> Path:
        workdir = Path(self.paths.workdir)
        if not workdir.is_absolute():
            workdir = Path(self.base_dir) / workdir
        if name == "workdir":
            return workdir
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else workdir / p

    def seed_for(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def stage_config(self, stage: int) -> TrainingStageConfig:
        base = self.stage1 if stage == 1 else self.stage2
        return dataclasses.replace(base, seed=self.seed_for(f"train.stage{stage}"), stage=f"stage{stage}")

    def validate(self) -> PipelineConfig:
        if not self.sites.buffer_deg > 0:
            raise ConfigError("sites.buffer_deg must be positive")
        if self.sites.mode not in ("representatives", "candidates"):
            raise ConfigError(f"sites.mode must be representatives or candidates, got {self.sites.mode!r}")
        if not 0 <= self.ingest.max_cloud_cover <= 100:
            raise ConfigError("ingest.max_cloud_cover must lie in [0, 100]")
        if self.ingest.fallback_mode not in ("pixel", "region"):
            raise ConfigError("ingest.fallback_mode must be pixel or region")
        if self.ingest.tile_size % 2**self.generator.depth:
            raise ConfigError(
                f"tile_size {self.ingest.tile_size} must be divisible by 2**generator.depth"
            )
        if not 0 < self.quality.max_dominant_share <= 1 or self.quality.min_unique_values < 1:
            raise ConfigError("quality thresholds out of range")
        if not -1 <= self.ssim_filter_threshold <= 1:
            raise ConfigError("ssim_filter_threshold must lie in [-1, 1]")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise ConfigError("split_fractions must be three numbers summing to 1")
        if not 0 <= self.synthetic.corrupt_fraction < 1:
            raise ConfigError("synthetic.corrupt_fraction must lie in [0, 1)")
        return self


def _build(default, data, where: str):
    """New instance of ``type(default)`` with ``data`` merged over ``default``'s fields."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(default)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        current = getattr(default, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(current, value, f"{where}.{key}")
        elif key == "split_fractions":
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = value
    try:
        return dataclasses.replace(default, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _set_dotted(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted}: {k} is not a section")
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides: list[str] | None = None) -> PipelineConfig:
    doc: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base_dir = path.resolve().parent
    for item in overrides or []:
        _set_dotted(doc, *parse_override(item))
    doc.setdefault("base_dir", str(base_dir))
    return _build(PipelineConfig(), doc, "config").validate()


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["split_fractions"] = list(cfg.split_fractions)
    d.pop("base_dir", None)
    return d


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
