import itertools

import numpy as np
import pytest

from demgan.errors import ConfigError, DataError, DegenerateInputError
from demgan.kmeans import assign, lloyd_kmeans, minibatch_kmeans
from demgan.raster import GeoRegion
from demgan.sites import (
    CloudFractionGrid,
    SiteCandidate,
    buffer_site,
    cluster_sites,
    extract_zero_cloud_sites,
    label_candidates,
    read_cloud_grid,
    read_sites,
    select_representative_sites,
    write_cloud_grid,
    write_sites,
)
from demgan.tileio import write_geotiff
from demgan.raster import RasterTile


def blobs(seed=0, n=60, centres=((0, 0), (10, 0), (0, 10))):
    rng = np.random.default_rng(seed)
    pts = [rng.normal(c, 0.5, (n, 2)) for c in centres]
    return np.concatenate(pts)


def exhaustive_two_means(x):
    """Optimal 2-means inertia of 1-D data by trying every split of the sorted values."""
    s = np.sort(x)
    best = np.inf
    for i in range(1, len(s)):
        a, b = s[:i], s[i:]
        best = min(best, ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum())
    return best


def test_minibatch_recovers_separated_blobs():
    x = blobs()
    m = minibatch_kmeans(x, k=3, batch=50, seed=1)
    centres = sorted(map(tuple, np.round(m.centroids)))
    assert centres == [(0.0, 0.0), (0.0, 10.0), (10.0, 0.0)]
    assert m.converged
    # each blob ends up in a single cluster
    for i in range(3):
        assert len(set(m.assignments[i * 60 : (i + 1) * 60])) == 1


def test_minibatch_inertia_never_increases():
    x = np.random.default_rng(2).uniform(-50, 50, (400, 2))
    m = minibatch_kmeans(x, k=20, batch=30, seed=3, max_iter=100)
    assert all(b <= a for a, b in zip(m.inertia_trace, m.inertia_trace[1:]))
    assert m.inertia == pytest.approx(assign(x, m.centroids)[1])


def test_minibatch_is_deterministic_per_seed():
    x = blobs(4)
    a = minibatch_kmeans(x, 5, batch=20, seed=9)
    b = minibatch_kmeans(x, 5, batch=20, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.assignments, b.assignments)


def test_effective_k_is_capped_by_distinct_points():
    x = np.array([[1.0, 1.0]] * 5 + [[2.0, 2.0]] * 5)
    m = minibatch_kmeans(x, k=100, batch=100)
    assert m.n_effective == 2 and m.inertia == 0.0


def test_kmeans_input_validation():
    with pytest.raises(ConfigError):
        minibatch_kmeans(np.ones((3, 2)), 0)
    with pytest.raises(DegenerateInputError):
        minibatch_kmeans(np.empty((0, 2)), 2)
    with pytest.raises(DegenerateInputError):
        lloyd_kmeans([1.0, np.nan], 2)


@pytest.mark.parametrize("seed", range(5))
def test_lloyd_matches_exhaustive_two_means(seed):
    x = np.random.default_rng(seed).exponential(3.0, 25)
    m = lloyd_kmeans(x, 2, seed=seed)
    assert m.inertia == pytest.approx(exhaustive_two_means(x), rel=1e-9)


def test_zero_cloud_extraction_is_sorted_and_exact():
    grid = CloudFractionGrid([5, 1, 1, 3], [0, 9, -2, 4], [0.0, 0.0, 0.0, 1e-9])
    assert extract_zero_cloud_sites(grid) == [(1.0, -2.0), (1.0, 9.0), (5.0, 0.0)]
    with pytest.raises(DataError):
        CloudFractionGrid([0], [0], [1.5])


def test_buffer_site():
    r = buffer_site((10.0, 20.0))
    assert (r.lat_min, r.lat_max, r.lon_min, r.lon_max) == pytest.approx((9.865, 10.135, 19.865, 20.135))
    with pytest.raises(ConfigError):
        buffer_site((0, 0), buffer=0)


def test_representatives_are_nearest_to_centroids():
    centres = [tuple(p) for p in blobs(5, n=10)]
    cands = [SiteCandidate(c, buffer_site(c)) for c in centres]
    model = cluster_sites(centres, k=3, batch=30, seed=2)
    reps = select_representative_sites(model, cands)
    assert len(reps) == 3
    for rep in reps:
        cen = model.centroids[rep.cluster_id]
        members = [c for c, a in zip(centres, model.assignments) if a == rep.cluster_id]
        d = [(m[0] - cen[0]) ** 2 + (m[1] - cen[1]) ** 2 for m in members]
        assert (rep.center[0] - cen[0]) ** 2 + (rep.center[1] - cen[1]) ** 2 == min(d)
    labelled = label_candidates(model, cands)
    assert [c.cluster_id for c in labelled] == model.assignments.tolist()


def test_cloud_grid_csv_and_geotiff_roundtrip(tmp_path):
    grid = CloudFractionGrid([1.5, -2.25], [3.0, 4.0], [0.0, 0.5], "2000-02")
    write_cloud_grid(tmp_path / "g.csv", grid)
    back = read_cloud_grid(tmp_path / "g.csv")
    assert np.array_equal(back.lat, grid.lat) and np.array_equal(back.cloud_fraction, grid.cloud_fraction)

    vals = np.array([[0.0, 0.25], [0.75, 0.0]])  # float32-exact
    write_geotiff(tmp_path / "g.tif", RasterTile(vals, georef=GeoRegion(0, 2, 10, 12)))
    g = read_cloud_grid(tmp_path / "g.tif")
    assert sorted(zip(g.lat, g.lon, g.cloud_fraction)) == sorted(
        [(1.5, 10.5, 0.0), (1.5, 11.5, 0.25), (0.5, 10.5, 0.75), (0.5, 11.5, 0.0)]
    )
    (tmp_path / "bad.csv").write_text("lat,lon\n1,2\n")
    with pytest.raises(DataError):
        read_cloud_grid(tmp_path / "bad.csv")


def test_sites_roundtrip(tmp_path):
    sites = [SiteCandidate(c, buffer_site(c), i) for i, c in enumerate(itertools.product([1.0, -3.5], [7.25]))]
    write_sites(tmp_path / "s.csv", tmp_path / "s.json", sites, {"mode": "x"})
    assert read_sites(tmp_path / "s.json") == sites
    assert sites[1].site_id == "site_-003.5000_+0007.2500"
    assert (tmp_path / "s.csv").read_text().count("\n") == 3
