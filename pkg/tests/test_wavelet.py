import numpy as np
import pytest

from haarmae.rasters import Raster
from haarmae.wavelet.filters import HAAR, WaveletFilter
from haarmae.wavelet.transform import (
    DecompositionSet,
    active_backend,
    analyze_level_f64,
    available_backends,
    dwt1d,
    dwt2d_level,
    dwt_multi,
    idwt2d_level,
    idwt_multi,
    synthesize_level_f64,
    use_backend,
)

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def quad_oracle(x):
    """Single level from first principles: for each 2x2 block with
    entries a b / c d, low pass sums and high pass differences, width
    before height, each tap scaled by 1/sqrt(2)."""
    c, h, w = x.shape
    ll = np.zeros((c, h // 2, w // 2))
    lh = np.zeros_like(ll)
    hl = np.zeros_like(ll)
    hh = np.zeros_like(ll)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                a = x[ch, 2 * i, 2 * j]
                b = x[ch, 2 * i, 2 * j + 1]
                cc = x[ch, 2 * i + 1, 2 * j]
                d = x[ch, 2 * i + 1, 2 * j + 1]
                ll[ch, i, j] = (a + b + cc + d) / 2.0
                lh[ch, i, j] = (a - b + cc - d) / 2.0
                hl[ch, i, j] = (a + b - cc - d) / 2.0
                hh[ch, i, j] = (a - b - cc + d) / 2.0
    return ll, lh, hl, hh


def test_dwt1d_known_sequence():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
    lo, hi = dwt1d(x)
    assert np.allclose(lo, np.array([4.0, 5.0, 14.0, 8.0]) * INV_SQRT2)
    assert np.allclose(hi, np.array([2.0, 3.0, -4.0, -4.0]) * INV_SQRT2)


def test_dwt1d_rejects_odd_length():
    with pytest.raises(ValueError):
        dwt1d(np.zeros(5))


def test_dwt1d_preserves_float32():
    lo, hi = dwt1d(np.zeros(4, dtype=np.float32))
    assert lo.dtype == np.float32 and hi.dtype == np.float32


def test_single_level_matches_quad_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4, 4))
    got = dwt2d_level(x)
    for g, want in zip(got, quad_oracle(x)):
        assert np.allclose(g, want, atol=1e-12)


def test_constant_image_concentrates_in_ll():
    x = np.full((1, 8, 8), 1.0)
    ll, lh, hl, hh = dwt2d_level(x)
    assert np.allclose(ll, 2.0)
    for band in (lh, hl, hh):
        assert np.allclose(band, 0.0)


def test_row_stripes_land_in_hl():
    # 1 on even rows, 0 on odd rows: variation along height only.
    x = np.zeros((1, 8, 8))
    x[:, ::2, :] = 1.0
    ll, lh, hl, hh = dwt2d_level(x)
    assert np.allclose(hl, 1.0)
    assert np.allclose(lh, 0.0) and np.allclose(hh, 0.0)
    assert np.allclose(ll, 1.0)


def test_column_stripes_land_in_lh():
    x = np.zeros((1, 8, 8))
    x[:, :, ::2] = 1.0
    ll, lh, hl, hh = dwt2d_level(x)
    assert np.allclose(lh, 1.0)
    assert np.allclose(hl, 0.0) and np.allclose(hh, 0.0)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-9)])
def test_round_trip(depth, dtype, tol):
    rng = np.random.default_rng(depth)
    x = Raster(rng.normal(size=(4, 64, 64)).astype(dtype))
    back = idwt_multi(dwt_multi(x, depth))
    assert back.values.dtype == dtype
    assert float(np.abs(back.values - x.values).max()) < tol


@pytest.mark.parametrize("depth", [1, 3])
def test_parseval_energy_conserved(depth):
    rng = np.random.default_rng(7)
    x = Raster(rng.normal(size=(2, 32, 32)))
    s = dwt_multi(x, depth)
    e_in = float(np.sum(x.values.astype(np.float64) ** 2))
    e_out = sum(float(np.sum(np.asarray(a, dtype=np.float64) ** 2))
                for a in s.to_ordered())
    assert abs(e_in - e_out) / e_in < 1e-6


def test_linearity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 16, 16))
    y = rng.normal(size=(1, 16, 16))
    sx = dwt_multi(Raster(x), 2).to_ordered()
    sy = dwt_multi(Raster(y), 2).to_ordered()
    sz = dwt_multi(Raster(2.0 * x - 3.0 * y), 2).to_ordered()
    for cx, cy, cz in zip(sx, sy, sz):
        assert np.allclose(cz, 2.0 * cx - 3.0 * cy, atol=1e-10)


def test_channels_transform_independently():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 16, 16))
    full = dwt_multi(Raster(x), 2).to_ordered()
    for ch in range(3):
        single = dwt_multi(Raster(x[ch : ch + 1]), 2).to_ordered()
        for f, s in zip(full, single):
            assert np.array_equal(f[ch : ch + 1], s)


def test_ll_only_synthesis_is_blockwise_constant():
    rng = np.random.default_rng(3)
    depth = 3
    x = Raster(rng.normal(size=(1, 32, 32)))
    s = dwt_multi(x, depth)
    zeros = [np.zeros_like(a) for a in s.to_ordered()[:-1]]
    ll_only = DecompositionSet.from_ordered(depth, zeros + [s.ll])
    back = idwt_multi(ll_only).values
    # Each synthesis level spreads a coefficient over a 2x2 block at
    # 1/2 amplitude, so LL alone becomes 2^depth blocks scaled 2^-depth.
    block = 2 ** depth
    want = np.kron(np.asarray(s.ll), np.ones((block, block))) * 2.0 ** (-depth)
    assert np.allclose(back, want, atol=1e-10)


def test_component_names_and_shapes():
    x = Raster(np.zeros((4, 64, 64), dtype=np.float32))
    s = dwt_multi(x, 3)
    assert s.component_names() == [
        "LH1", "HL1", "HH1", "LH2", "HL2", "HH2", "LH3", "HL3", "HH3", "LL3",
    ]
    parts = s.to_ordered()
    assert len(parts) == 10
    assert parts[0].shape == (4, 32, 32)
    assert parts[3].shape == (4, 16, 16)
    assert parts[-1].shape == (4, 8, 8)


def test_ordered_round_trip():
    rng = np.random.default_rng(4)
    s = dwt_multi(Raster(rng.normal(size=(2, 16, 16))), 2)
    rebuilt = DecompositionSet.from_ordered(s.depth, s.to_ordered())
    for a, b in zip(s.to_ordered(), rebuilt.to_ordered()):
        assert np.array_equal(a, b)


def test_depth_exceeding_halvings_rejected():
    with pytest.raises(ValueError):
        dwt_multi(Raster(np.zeros((1, 8, 8))), 4)


def test_odd_dimensions_rejected():
    with pytest.raises(ValueError):
        dwt2d_level(np.zeros((1, 6, 7)))


def test_decomposition_set_shape_mismatch_rejected():
    s = dwt_multi(Raster(np.zeros((1, 16, 16))), 2)
    parts = s.to_ordered()
    parts[0] = np.zeros((1, 4, 4))
    with pytest.raises(ValueError):
        DecompositionSet.from_ordered(2, parts)


def test_filter_validation():
    with pytest.raises(ValueError):
        WaveletFilter(low=(1.0, 1.0), high=(1.0, -1.0))  # not unit norm
    with pytest.raises(ValueError):
        WaveletFilter(low=(1.0, 0.0), high=(1.0, 0.0))  # not orthogonal
    assert abs(sum(t * t for t in HAAR.low) - 1.0) < 1e-12


needs_compiled = pytest.mark.skipif(
    "compiled" not in available_backends(), reason="compiled backend not built"
)


@needs_compiled
def test_backends_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 64, 64))
    prev = active_backend()
    try:
        use_backend("compiled")
        a = analyze_level_f64(x)
        back_c = synthesize_level_f64(*a)
        use_backend("numpy")
        b = analyze_level_f64(x)
        back_n = synthesize_level_f64(*b)
    finally:
        use_backend(prev)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca, cb)
    assert np.array_equal(back_c, back_n)


@needs_compiled
def test_use_backend_switch_and_report():
    prev = active_backend()
    try:
        assert use_backend("numpy") == "numpy"
        assert active_backend() == "numpy"
        assert use_backend("auto") in available_backends()
    finally:
        use_backend(prev)
    with pytest.raises(ValueError):
        use_backend("gpu")
