import csv
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from demgan.curation import (
    DatasetManifest,
    ManifestEntry,
    QualityFlags,
    exclude_flagged_pairs,
    filter_training_by_ssim,
    load_manifest,
    manifest_lock,
    save_manifest,
    spectral_diversity_flags,
    split_dataset,
    split_sizes,
    write_exclusion_audit,
    write_refinement_audit,
)
from demgan.errors import ConfigError, DataError, EmptyDatasetError, PreconditionError
from demgan.raster import RasterTile, ValueDomain

OK = QualityFlags((False, False, False), False)
BAD = QualityFlags((True, False, False), False)


def entries(n, flags=OK):
    return [ManifestEntry(f"p{i:04d}", f"t/{i}_rgb.tif", f"t/{i}_dem.tif", flags=flags) for i in range(n)]


def jpeg(vals, mask=None):
    return RasterTile(np.asarray(vals, float), mask, ValueDomain.JPEG_0_255)


def test_flags_round_to_8bit_levels_first():
    # 0.4 and 0.3 both round to level 0, so only 19 distinct levels remain
    band = np.concatenate([[0.4, 0.3], np.arange(1, 19)] * 50).reshape(40, 25)
    flags = spectral_diversity_flags(jpeg(np.stack([band] * 3, -1)))
    assert flags.low_unique_values == (True, True, True)


def test_flags_ignore_masked_pixels_and_degenerate_tiles():
    vals = np.tile(np.arange(25.0), (25, 1))
    mask = np.zeros((25, 25), bool)
    mask[:, 20:] = True  # only 20 distinct levels remain visible
    f = spectral_diversity_flags(jpeg(np.stack([vals] * 3, -1), mask))
    assert f.low_unique_values == (False, False, False) and not f.excluded
    d = spectral_diversity_flags(jpeg(np.zeros((3, 3, 3)), np.ones((3, 3), bool)))
    assert d.degenerate and d.excluded


def test_pooled_versus_per_band_share():
    # band 0 is 40% zeros, pooled over three bands that is 13.3%
    band0 = np.where(np.arange(1000) < 400, 0, 1 + np.arange(1000) % 200)
    other = 1 + np.arange(1000) % 200
    tile = jpeg(np.stack([band0, other, other], -1).reshape(25, 40, 3))
    assert not spectral_diversity_flags(tile).dominant_value_excess
    assert spectral_diversity_flags(tile, per_band_share=True).dominant_value_excess


def test_flags_reject_wrong_domain():
    with pytest.raises(ConfigError):
        spectral_diversity_flags(RasterTile(np.zeros((2, 2, 3))))


def test_manifest_roundtrip_and_duplicates(tmp_path):
    m = DatasetManifest(entries(3))
    m.entries[0].ssim_score = 0.25
    m.entries[1].extra["k"] = [1, 2]
    path = save_manifest(tmp_path / "m.jsonl", m)
    back = load_manifest(path)
    assert [e.to_dict() for e in back] == [e.to_dict() for e in m]
    with pytest.raises(DataError):
        DatasetManifest(entries(2) + entries(1))


def test_manifest_lock_blocks_second_writer(tmp_path):
    path = tmp_path / "m.jsonl"
    with manifest_lock(path):
        result = {}

        def other():
            try:
                with manifest_lock(path, timeout=0.1):
                    result["got"] = True
            except DataError:
                result["got"] = False

        t = threading.Thread(target=other)
        t.start()
        t.join()
    assert result["got"] is False


def test_exclusion_keeps_entries_but_marks_them(tmp_path):
    m = DatasetManifest(entries(3) + [ManifestEntry("bad", "a", "b", flags=BAD)])
    out, retained = exclude_flagged_pairs(m)
    assert retained == 3 and len(out) == 4
    assert not out.by_id()["bad"].usable
    rows = list(csv.DictReader(write_exclusion_audit(tmp_path / "a.csv", out).open()))
    assert [r["excluded"] for r in rows] == ["0", "0", "0", "1"]
    assert rows[-1]["low_unique_bands"] == "R"


def test_split_sizes_rounding():
    assert split_sizes(12357) == (9885, 1236, 1236)
    assert split_sizes(10) == (8, 1, 1)
    assert split_sizes(5) == (3, 1, 1)  # 0.5 rounds up
    assert split_sizes(4) == (4, 0, 0)
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.3, 0.3))


@given(st.integers(3, 3000), st.integers(0, 2**31))
def test_split_partition_properties(n, seed):
    m = split_dataset(DatasetManifest(entries(n)), seed=seed)
    counts = m.split_counts()
    assert (counts["train"], counts["val"], counts["test"]) == split_sizes(n)
    assert sum(counts.values()) == n


def test_split_is_seeded_and_skips_excluded():
    m = DatasetManifest(entries(50) + [ManifestEntry("zz", "a", "b", flags=BAD)])
    a, b = split_dataset(m, seed=3), split_dataset(m, seed=3)
    assert [e.split for e in a] == [e.split for e in b]
    assert a.by_id()["zz"].split is None
    c = split_dataset(m, seed=4)
    assert [e.split for e in a] != [e.split for e in c]
    # input order does not matter, only the pair ids
    rev = split_dataset(DatasetManifest(list(reversed(m.entries))), seed=3)
    assert {e.pair_id: e.split for e in rev} == {e.pair_id: e.split for e in a}
    with pytest.raises(EmptyDatasetError):
        split_dataset(DatasetManifest(entries(2)))


def scored(scores):
    m = split_dataset(DatasetManifest(entries(40)), seed=1)
    train = m.split("train")
    for e, s in zip(train, scores):
        e.ssim_score = s
    return m


def test_ssim_filter_removes_strictly_below_threshold(tmp_path):
    scores = np.linspace(-0.5, 0.9, 32)
    scores[5] = 0.2
    m = scored(scores.tolist())
    out = filter_training_by_ssim(m, 0.2)
    kept = {e.pair_id: e.ssim_score for e in out.split("train")}
    assert all(s >= 0.2 for s in kept.values()) and 0.2 in kept.values()
    assert len(kept) == sum(scores >= 0.2)
    assert [e.pair_id for e in out.split("test")] == [e.pair_id for e in m.split("test")]
    rows = list(csv.DictReader(write_refinement_audit(tmp_path / "r.csv", m, 0.2).open()))
    assert sum(r["removed"] == "1" for r in rows) == sum(scores < 0.2)


def test_ssim_filter_needs_scores():
    m = scored([0.5] * 31)  # one training pair left unscored
    with pytest.raises(PreconditionError):
        filter_training_by_ssim(m, 0.2)
    with pytest.raises(ConfigError):
        filter_training_by_ssim(scored([0.5] * 32), 1.5)
