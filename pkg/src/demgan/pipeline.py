"""Pipeline commands: sites, build, curate, train, eval, report (plus synthetic inputs).

Every command reads its inputs from the locations in :class:`PipelineConfig`
and writes deterministic outputs next to them, so re-running with the same
config and seed reproduces the same files.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from demgan import curation, metrics
from demgan.cgan.evaluate import CheckpointPredictor, evaluate_model, score_entries
from demgan.cgan.train import (
    ModelCheckpoint,
    load_checkpoint,
    save_checkpoint,
    train_stage,
    write_training_log,
)
from demgan.config import PipelineConfig
from demgan.curation import DatasetManifest, ManifestEntry
from demgan.errors import DataError, EmptyDatasetError, PreconditionError
from demgan.ingest import build_mosaic, load_scenes, read_catalog
from demgan.raster import (
    RasterTile,
    resample_tile,
    stretch_min_max,
    to_relative_elevation,
)
from demgan.sites import (
    SiteCandidate,
    buffer_site,
    cluster_sites,
    extract_zero_cloud_sites,
    label_candidates,
    read_cloud_grid,
    read_sites,
    select_representative_sites,
    write_sites,
)
from demgan.tileio import read_geotiff, write_geotiff

log = logging.getLogger(__name__)


# --- artifact locations ---------------------------------------------------------


def stage1_checkpoint_path(cfg: PipelineConfig) -> Path:
    return cfg.path("checkpoints") / "stage1.pt"


def scored_manifest_path(cfg: PipelineConfig) -> Path:
    m = cfg.path("manifest")
    return m.with_name(f"{m.stem}.stage1_scored.jsonl")


def _threshold_tag(threshold: float) -> str:
    return f"t{threshold:g}"


def stage2_checkpoint_path(cfg: PipelineConfig, threshold: float) -> Path:
    return cfg.path("checkpoints") / f"stage2_{_threshold_tag(threshold)}.pt"


def stage2_manifest_path(cfg: PipelineConfig, threshold: float) -> Path:
    m = cfg.path("manifest")
    return m.with_name(f"{m.stem}.stage2_{_threshold_tag(threshold)}.jsonl")


def tiles_root(cfg: PipelineConfig) -> Path:
    """Manifest tile paths are relative to the manifest's directory."""
    return cfg.path("manifest").parent


# --- synthetic inputs -------------------------------------------------------------


def cmd_synth_grid(cfg: PipelineConfig) -> Path:
    from demgan.sites import write_cloud_grid
    from demgan.synthetic import synthesize_cloud_grid

    s = cfg.synthetic
    grid = synthesize_cloud_grid(cfg.seed_for("synthetic.grid"), s.n_lat, s.n_lon, s.zero_fraction)
    path = cfg.path("cloud_grid")
    write_cloud_grid(path, grid)
    log.info("wrote synthetic cloud grid with %d cells (%d cloud-free) to %s",
             len(grid), int((grid.cloud_fraction == 0).sum()), path)
    return path


def cmd_synth_catalog(cfg: PipelineConfig) -> Path:
    from demgan.synthetic import write_synthetic_catalog

    sites = read_sites(cfg.path("sites"))
    s = cfg.synthetic
    path = write_synthetic_catalog(
        cfg.path("catalog"),
        sites,
        seed=cfg.seed_for("synthetic.catalog"),
        size=cfg.ingest.tile_size,
        n_primary=s.n_primary,
        n_fallback=s.n_fallback,
        primary_dropout=s.primary_dropout,
        all_cloudy=s.all_cloudy,
    )
    log.info("wrote synthetic scene catalog for %d sites to %s", len(sites), path)
    return path


def cmd_synth_pairs(cfg: PipelineConfig) -> DatasetManifest:
    """Render ``synthetic.n_pairs`` terrain pairs straight into tiles and a manifest.

    Skips scene compositing; the pairs go through the same resample,
    relative-elevation and stretch steps as ``build``.
    """
    from demgan.synthetic import synthesize_terrain_pair

    n = cfg.synthetic.n_pairs
    if n < 1:
        raise EmptyDatasetError("synthetic.n_pairs must be at least 1")
    root = tiles_root(cfg)
    tiles_dir = cfg.path("tiles")
    base = cfg.seed_for("synthetic.pairs")
    entries = []
    for i in range(n):
        pid = f"pair_{i:05d}"
        rgb_raw, dem_m = synthesize_terrain_pair(base + i, cfg.ingest.tile_size)
        rgb, dem, er = prepare_pair(rgb_raw, dem_m, cfg)
        rgb_path = write_geotiff(tiles_dir / f"{pid}_rgb.tif", rgb)
        dem_path = write_geotiff(tiles_dir / f"{pid}_dem.tif", dem)
        entries.append(
            ManifestEntry(pid, os.path.relpath(rgb_path, root), os.path.relpath(dem_path, root),
                          elevation_range=er, extra={"synthetic_seed": base + i})
        )
    manifest = DatasetManifest(entries)
    path = cfg.path("manifest")
    with curation.manifest_lock(path):
        curation.save_manifest(path, manifest)
    log.info("wrote %d synthetic pairs into %s", n, path)
    return manifest


# --- sites --------------------------------------------------------------------------


def cmd_sites(cfg: PipelineConfig) -> list[SiteCandidate]:
    grid = read_cloud_grid(cfg.path("cloud_grid"))
    centers = extract_zero_cloud_sites(grid)
    if not centers:
        raise EmptyDatasetError("no cloud-free cells in the cloud-fraction grid")
    p = cfg.sites
    candidates = [SiteCandidate(c, buffer_site(c, p.buffer_deg)) for c in centers]
    model = cluster_sites(centers, k=p.k, batch=p.batch, seed=cfg.seed_for("sites.kmeans"),
                          tol=p.tol, max_iter=p.max_iter)
    if p.mode == "representatives":
        sites = select_representative_sites(model, candidates)
    else:
        sites = label_candidates(model, candidates)
    out_json = cfg.path("sites")
    extra = {
        "n_candidates": len(candidates),
        "n_clusters": int(len(set(model.assignments.tolist()))),
        "centroids": model.centroids.tolist(),
        "inertia": model.inertia,
        "mode": p.mode,
    }
    write_sites(out_json.with_suffix(".csv"), out_json, sites, extra)
    log.info("selected %d sites from %d cloud-free candidates (%d clusters)",
             len(sites), len(candidates), extra["n_clusters"])
    return sites


# --- build ----------------------------------------------------------------------------


def prepare_pair(rgb_raw: RasterTile, dem_m: RasterTile, cfg: PipelineConfig):
    """Resample, relative elevation, percentile stretch. Returns (rgb, dem, elevation_range)."""
    size = cfg.ingest.tile_size
    rgb_raw = resample_tile(rgb_raw, size, size)
    dem_m = resample_tile(dem_m, size, size)
    dem_rel = to_relative_elevation(dem_m)
    er = metrics.elevation_range(dem_rel)
    rgb = stretch_min_max(rgb_raw, cfg.stretch, strict_jpeg=cfg.ingest.strict_jpeg)
    dem = stretch_min_max(dem_rel, cfg.stretch, strict_jpeg=cfg.ingest.strict_jpeg)
    return rgb, dem, er


def cmd_build(cfg: PipelineConfig) -> DatasetManifest:
    catalog_dir = cfg.path("catalog")
    regions = read_catalog(catalog_dir)
    if not regions:
        raise EmptyDatasetError(f"scene catalog {catalog_dir} lists no regions")
    root = tiles_root(cfg)
    tiles_dir = cfg.path("tiles")
    entries = []
    skipped = []
    for reg in regions:
        scenes = load_scenes(catalog_dir, reg)
        try:
            mosaic, stats = build_mosaic(scenes, cfg.ingest.max_cloud_cover, cfg.ingest.fallback_mode)
            if mosaic.valid_count == 0:
                raise DataError("no clear pixels after masking")
            dem = read_geotiff(reg.dem_path)
            rgb, dem_n, er = prepare_pair(mosaic, dem, cfg)
        except DataError as exc:
            skipped.append(reg.site_id)
            log.warning("skipping %s: %s", reg.site_id, exc)
            continue
        rgb_path = write_geotiff(tiles_dir / f"{reg.site_id}_rgb.tif", rgb)
        dem_path = write_geotiff(tiles_dir / f"{reg.site_id}_dem.tif", dem_n)
        entries.append(
            ManifestEntry(
                pair_id=reg.site_id,
                rgb_path=os.path.relpath(rgb_path, root),
                dem_path=os.path.relpath(dem_path, root),
                region=reg.region.to_dict(),
                elevation_range=er,
                extra={"mosaic": stats},
            )
        )
    if not entries:
        log.warning("build produced zero pairs (%d regions skipped)", len(skipped))
    manifest = DatasetManifest(entries)
    path = cfg.path("manifest")
    with curation.manifest_lock(path):
        curation.save_manifest(path, manifest)
    log.info("built %d pairs (%d regions skipped) into %s", len(entries), len(skipped), path)
    return manifest


# --- curate -----------------------------------------------------------------------------


def cmd_curate(cfg: PipelineConfig) -> DatasetManifest:
    path = cfg.path("manifest")
    root = tiles_root(cfg)
    q = cfg.quality
    with curation.manifest_lock(path):
        manifest = curation.load_manifest(path)
        if len(manifest) == 0:
            raise EmptyDatasetError(f"manifest {path} has no entries")
        for e in manifest:
            rgb = read_geotiff(root / e.rgb_path)
            e.flags = curation.spectral_diversity_flags(
                rgb, q.min_unique_values, q.max_dominant_share, q.per_band_share
            )
            e.split = None
            e.ssim_score = None
        manifest, retained = curation.exclude_flagged_pairs(manifest)
        curation.write_exclusion_audit(cfg.path("reports") / "exclusion_audit.csv", manifest)
        if retained == 0:
            curation.save_manifest(path, manifest)
            raise EmptyDatasetError("every pair was excluded by the quality filter")
        manifest = curation.split_dataset(manifest, cfg.split_fractions, cfg.seed_for("curation.split"))
        if cfg.synthetic.corrupt_fraction > 0:
            from demgan.synthetic import corrupt_training_pairs

            manifest = corrupt_training_pairs(
                manifest, cfg.synthetic.corrupt_fraction, cfg.seed_for("synthetic.corrupt")
            )
        curation.save_manifest(path, manifest)
    log.info("curated manifest: %s", manifest.split_counts())
    return manifest


# --- train ----------------------------------------------------------------------------------


def _log_path(ckpt_path: Path) -> Path:
    return ckpt_path.with_name(f"{ckpt_path.stem}_log.csv")


def score_training_split(ckpt: ModelCheckpoint, manifest: DatasetManifest, root) -> DatasetManifest:
    """Stage-1 SSIM for every training pair, stored in ``ssim_score``."""
    records = score_entries(CheckpointPredictor(ckpt), manifest.split("train"), root)
    scores = {r.pair_id: r.ssim for r in records}
    out = manifest.copy()
    for e in out:
        if e.pair_id in scores:
            e.ssim_score = scores[e.pair_id]
    return out


def cmd_train(cfg: PipelineConfig, stage: int, ssim_filter: float | None = None) -> ModelCheckpoint:
    root = tiles_root(cfg)
    stage_cfg = cfg.stage_config(stage)
    if stage == 1:
        manifest = curation.load_manifest(cfg.path("manifest"))
        if not manifest.split("train"):
            raise EmptyDatasetError("manifest has no training split; run curate first")
        ckpt_path = stage1_checkpoint_path(cfg)
        ckpt, rows = train_stage(
            manifest, stage_cfg, None, root=root, gen_cfg=cfg.generator, disc_cfg=cfg.discriminator,
            checkpoint_path=ckpt_path,
        )
        write_training_log(_log_path(ckpt_path), rows)
        scored = score_training_split(ckpt, manifest, root)
        with curation.manifest_lock(scored_manifest_path(cfg)):
            curation.save_manifest(scored_manifest_path(cfg), scored)
        return ckpt
    if stage != 2:
        raise PreconditionError(f"unknown stage {stage}")

    threshold = cfg.ssim_filter_threshold if ssim_filter is None else ssim_filter
    missing = [str(p) for p in (stage1_checkpoint_path(cfg), scored_manifest_path(cfg)) if not p.is_file()]
    if missing:
        raise PreconditionError("stage 2 needs stage-1 artifacts; missing:\n  " + "\n  ".join(missing))
    init = load_checkpoint(stage1_checkpoint_path(cfg))
    scored = curation.load_manifest(scored_manifest_path(cfg))
    filtered = curation.filter_training_by_ssim(scored, threshold)
    curation.write_refinement_audit(
        cfg.path("reports") / f"refinement_audit_{_threshold_tag(threshold)}.csv", scored, threshold
    )
    m_path = stage2_manifest_path(cfg, threshold)
    with curation.manifest_lock(m_path):
        curation.save_manifest(m_path, filtered)
    log.info("stage 2 (threshold %g): %d -> %d training pairs", threshold,
             len(scored.split("train")), len(filtered.split("train")))
    ckpt_path = stage2_checkpoint_path(cfg, threshold)
    ckpt, rows = train_stage(filtered, stage_cfg, init, root=root, checkpoint_path=ckpt_path)
    write_training_log(_log_path(ckpt_path), rows)
    return ckpt


# --- eval ---------------------------------------------------------------------------------------


def _test_ids(manifest: DatasetManifest) -> list[str]:
    return sorted(e.pair_id for e in manifest.split("test"))


def check_test_split_consistency(cfg: PipelineConfig) -> None:
    """All manifests derived from the curated one must carry the same test split."""
    base = curation.load_manifest(cfg.path("manifest"))
    ref = _test_ids(base)
    others = [scored_manifest_path(cfg)] + sorted(
        cfg.path("manifest").parent.glob(f"{cfg.path('manifest').stem}.stage2_*.jsonl")
    )
    for p in others:
        if p.is_file() and _test_ids(curation.load_manifest(p)) != ref:
            raise DataError(f"test split in {p} differs from the curated manifest")


def cmd_eval(cfg: PipelineConfig, checkpoint=None, label: str | None = None, predictor=None,
             untrained: bool = False) -> dict:
    """Evaluate on the test split and write the report bundle under ``reports/<label>``.

    ``checkpoint`` is a path (default: the stage-1 checkpoint). ``untrained``
    scores the stage-1 initialisation instead; ``predictor`` overrides the
    model with any callable (used for stubs).
    """
    check_test_split_consistency(cfg)
    manifest = curation.load_manifest(cfg.path("manifest"))
    meta: dict = {}
    if untrained:
        model = initial_checkpoint(cfg)
        label = label or "untrained"
        meta = {"checkpoint": None, "step": 0}
    elif predictor is None:
        ckpt_path = Path(checkpoint) if checkpoint else stage1_checkpoint_path(cfg)
        if not ckpt_path.is_file():
            raise PreconditionError(f"checkpoint not found: {ckpt_path}")
        model = load_checkpoint(ckpt_path)
        label = label or ckpt_path.stem
        meta = {"checkpoint": ckpt_path.name, "step": model.step, "stages": model.stages,
                "learning_rate": model.stage_cfg.get("learning_rate")}
    else:
        model = predictor
        label = label or "custom"
    records = evaluate_model(model, manifest, "test", root=tiles_root(cfg))
    if len(records) >= cfg.eval.cluster_k:
        records = metrics.cluster_by_elevation_range(records, cfg.eval.cluster_k, cfg.seed_for("metrics.clusters"))
    stats = metrics.aggregate_stats(records)
    out = cfg.path("reports") / label
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_records_csv(out / "records.csv", records)
    metrics.write_aggregate_json(out / "aggregate.json", stats, {"label": label, **meta})
    edges, counts = metrics.ssim_histogram(records, cfg.eval.histogram_bins)
    metrics.write_histogram_csv(out / "ssim_histogram.csv", edges, counts)
    summary = metrics.cluster_summary(records)
    metrics.write_cluster_csv(out / "clusters.csv", summary)
    if cfg.eval.svg:
        metrics.render_svgs(out, records, edges, counts)
    log.info("%s: mean SSIM %.4f, mean RMSE %.4f over %d test pairs", label, stats.mean_ssim,
             stats.mean_rmse, stats.count)
    return {"label": label, "records": records, "stats": stats, "dir": out}


# --- report -----------------------------------------------------------------------------------------

REPORT_COLUMNS = ("run", "mean_ssim", "median_ssim", "mean_rmse", "median_rmse", "count")


def _run_order(label: str):
    if label == "untrained":
        return (-1, 0.0, label)
    if label.startswith("stage1"):
        return (0, 0.0, label)
    if label.startswith("stage2_t"):
        try:
            return (1, float(label[len("stage2_t"):]), label)
        except ValueError:
            pass
    return (2, 0.0, label)


def cmd_report(cfg: PipelineConfig, labels: list[str] | None = None) -> list[dict]:
    """One row per evaluated run, stage 1 first, then stage-2 runs by threshold."""
    reports = cfg.path("reports")
    if labels is None:
        labels = sorted((p.parent.name for p in reports.glob("*/aggregate.json")), key=_run_order)
    if not labels:
        raise PreconditionError(f"no evaluation reports under {reports}; run eval first")
    rows = []
    for label in labels:
        p = reports / label / "aggregate.json"
        if not p.is_file():
            raise PreconditionError(f"missing evaluation report {p}")
        doc = json.loads(p.read_text())
        rows.append({"run": label, **{k: doc[k] for k in REPORT_COLUMNS[1:]}})
    with (reports / "comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    (reports / "comparison.txt").write_text(format_table(rows))
    return rows


def format_table(rows: list[dict]) -> str:
    head = f"{'Run':<20} | {'SSIM mean':>9} {'median':>9} | {'RMSE mean':>9} {'median':>9} | {'n':>5}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['run']:<20} | {r['mean_ssim']:>9.4f} {r['median_ssim']:>9.4f} | "
            f"{r['mean_rmse']:>9.4f} {r['median_rmse']:>9.4f} | {r['count']:>5d}"
        )
    return "\n".join(lines) + "\n"


def initial_checkpoint(cfg: PipelineConfig, stage: int = 1) -> ModelCheckpoint:
    """Untrained networks exactly as stage ``stage`` would initialise them."""
    from demgan.cgan.train import train_on_arrays

    stage_cfg = cfg.stage_config(stage)
    size = cfg.ingest.tile_size
    dummy_rgb = np.zeros((1, 3, size, size), np.float32)
    dummy_dem = np.zeros((1, 1, size, size), np.float32)
    ckpt, _ = train_on_arrays(dummy_rgb, dummy_dem, replace(stage_cfg, steps=0), None,
                              cfg.generator, cfg.discriminator)
    return ckpt


def save_initial_checkpoint(cfg: PipelineConfig) -> Path:
    path = cfg.path("checkpoints") / "init.pt"
    save_checkpoint(path, initial_checkpoint(cfg))
    return path

