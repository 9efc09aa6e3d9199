import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demgan.errors import AlignmentError, ConfigError, DegenerateInputError, DomainError
from demgan.raster import (
    GeoRegion,
    RasterTile,
    StretchParams,
    ValueDomain,
    band_percentiles,
    resample_tile,
    scale_to_signed_unit,
    stretch_min_max,
    to_relative_elevation,
    unscale_from_signed_unit,
)


def brute_percentile(v, p):
    s = sorted(v)
    rank = p / 100 * (len(s) - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (rank - lo)


def brute_bilinear(img, out_h, out_w):
    """Pixel-centre bilinear resample of a fully valid 2-D array, one pixel at a time."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y = min(max((i + 0.5) * h / out_h - 0.5, 0), h - 1)
        for j in range(out_w):
            x = min(max((j + 0.5) * w / out_w - 0.5, 0), w - 1)
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = (
                img[y0, x0] * (1 - fy) * (1 - fx)
                + img[y0, x1] * (1 - fy) * fx
                + img[y1, x0] * fy * (1 - fx)
                + img[y1, x1] * fy * fx
            )
    return out


def test_tile_is_read_only_and_shapes_checked():
    t = RasterTile(np.ones((4, 5)))
    assert (t.height, t.width, t.bands) == (4, 5, 1)
    with pytest.raises(ValueError):
        t.values[0, 0, 0] = 3
    with pytest.raises(AlignmentError):
        RasterTile(np.ones((4, 5)), np.zeros((5, 4), bool))
    with pytest.raises(AlignmentError):
        RasterTile(np.ones(4))


def test_domain_bounds_enforced_on_valid_pixels_only():
    with pytest.raises(DomainError):
        RasterTile(np.full((2, 2), 1.5), value_domain=ValueDomain.SIGNED_UNIT)
    mask = np.array([[True, False], [False, False]])
    vals = np.array([[9.0, 0.0], [0.5, -1.0]])
    RasterTile(vals, mask, ValueDomain.SIGNED_UNIT)  # masked 9.0 is ignored


def test_georegion_validation_and_roundtrip():
    g = GeoRegion(1.0, 2.0, 3.0, 4.0)
    assert GeoRegion.from_dict(g.to_dict()) == g
    with pytest.raises(ConfigError):
        GeoRegion(2.0, 1.0, 3.0, 4.0)
    with pytest.raises(ConfigError):
        StretchParams(98, 2)


def test_percentiles_match_brute_force_over_unmasked_pixels():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(9, 7, 3))
    mask = rng.random((9, 7)) < 0.3
    got = band_percentiles(RasterTile(vals, mask), StretchParams(5, 90))
    for b, (lo, hi) in enumerate(got):
        v = vals[:, :, b][~mask].tolist()
        assert lo == pytest.approx(brute_percentile(v, 5), abs=1e-12)
        assert hi == pytest.approx(brute_percentile(v, 90), abs=1e-12)


def test_stretch_masks_and_metadata():
    vals = np.arange(100.0).reshape(10, 10)
    mask = np.zeros((10, 10), bool)
    mask[0, 0] = True
    out = stretch_min_max(RasterTile(vals, mask))
    assert out.value_domain is ValueDomain.JPEG_0_255
    assert out.values[0, 0, 0] == 0.0 and out.nodata_mask[0, 0]
    assert out.values.max() == 255.0 and out.values.min() == 0.0
    assert len(out.metadata["stretch_bounds"]) == 1


def test_stretch_constant_band_is_zero():
    out = stretch_min_max(RasterTile(np.full((3, 3, 2), 7.0)))
    assert np.all(out.values == 0.0)
    assert np.all(scale_to_signed_unit(out).values == -1.0)


def test_stretch_all_masked_raises():
    with pytest.raises(DegenerateInputError):
        stretch_min_max(RasterTile(np.ones((2, 2)), np.ones((2, 2), bool)))


def test_strict_jpeg_rounds():
    out = stretch_min_max(RasterTile(np.linspace(0, 1, 49).reshape(7, 7)), strict_jpeg=True)
    assert np.array_equal(out.values, np.rint(out.values))


def test_signed_unit_requires_jpeg_domain_and_round_trips():
    with pytest.raises(DomainError):
        scale_to_signed_unit(RasterTile(np.zeros((2, 2))))
    j = RasterTile(np.array([[0.0, 127.5], [255.0, 51.0]]), value_domain=ValueDomain.JPEG_0_255)
    s = scale_to_signed_unit(j)
    assert s.values[:, :, 0].tolist() == [[-1.0, 0.0], [1.0, 51 / 127.5 - 1]]
    assert np.allclose(unscale_from_signed_unit(s).values, j.values)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(-1e6, 1e6)))
def test_stretch_output_always_within_range(vals):
    out = scale_to_signed_unit(stretch_min_max(RasterTile(vals))).values
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_relative_elevation():
    dem = RasterTile(np.array([[100.0, 150.0], [5000.0, 120.0]]), np.array([[False, False], [True, False]]))
    rel = to_relative_elevation(dem)
    assert rel.values[:, :, 0].tolist() == [[0.0, 50.0], [0.0, 20.0]]
    with pytest.raises(AlignmentError):
        to_relative_elevation(RasterTile(np.zeros((2, 2, 3))))


@pytest.mark.parametrize("shape", [(8, 8, 16, 16), (10, 7, 4, 5), (5, 9, 13, 6)])
def test_resample_matches_brute_force(shape):
    h, w, oh, ow = shape
    img = np.random.default_rng(1).normal(size=(h, w))
    out = resample_tile(RasterTile(img), ow, oh)
    assert np.allclose(out.values[:, :, 0], brute_bilinear(img, oh, ow), atol=1e-12)


def test_resample_identity_and_nodata():
    t = RasterTile(np.ones((4, 4)))
    assert resample_tile(t, 4, 4) is t
    mask = np.zeros((4, 4), bool)
    mask[:2, :2] = True
    vals = np.where(mask, 999.0, 3.0)
    out = resample_tile(RasterTile(vals, mask), 8, 8)
    # masked neighbours get no weight, so no 999 leaks in
    assert np.allclose(out.values[~out.nodata_mask], 3.0)
    assert out.nodata_mask[0, 0] and not out.nodata_mask[7, 7]
    with pytest.raises(ConfigError):
        resample_tile(t, 0, 4)
