import math

import numpy as np
import pytest

from haarmae.rasters import Raster
from haarmae.tokenizer import (
    COMPONENT_CODES,
    EmbedWeights,
    PatchConfig,
    SequenceLayout,
    ape,
    apply_mask,
    build_sequence,
    mask_count,
    patch_embed_level,
    patchify,
    restore,
    tube_mask,
    unpatchify,
)
from haarmae.wavelet.transform import dwt_multi


def make_weights(cfg: PatchConfig, channels: int, dim: int, seed=0):
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for j in range(1, cfg.depth + 1):
        p = cfg.patch_size(j)
        ws.append(rng.normal(size=(channels * p * p, dim)))
        bs.append(rng.normal(size=dim))
    p = cfg.patch_size(cfg.depth)
    return EmbedWeights(
        level_weights=tuple(ws), level_biases=tuple(bs),
        ll_weight=rng.normal(size=(channels * p * p, dim)),
        ll_bias=rng.normal(size=dim),
    )


def test_token_accounting_224():
    cfg = PatchConfig(base_patch=16, depth=4, height=224, width=224)
    layout = SequenceLayout(cfg.grid_h, cfg.grid_w, cfg.depth)
    assert cfg.n_spatial == 196
    assert cfg.total_tokens == 2548
    assert layout.level_slice(4) == slice(2548 - 784, 2548)
    for level in (1, 2, 3):
        sl = layout.level_slice(level)
        assert sl.stop - sl.start == 588


def test_token_accounting_single_level():
    cfg = PatchConfig(base_patch=16, depth=1, height=64, width=64)
    assert cfg.n_components == 4
    assert cfg.total_tokens == 4 * cfg.n_spatial


def test_token_accounting_64():
    cfg = PatchConfig(base_patch=16, depth=3, height=64, width=64)
    assert cfg.n_spatial == 16
    assert cfg.total_tokens == 160


def test_patch_config_validation():
    with pytest.raises(ValueError):
        PatchConfig(base_patch=16, depth=5, height=64, width=64)
    with pytest.raises(ValueError):
        PatchConfig(base_patch=16, depth=2, height=60, width=64)
    cfg = PatchConfig(base_patch=16, depth=2, height=64, width=64)
    assert cfg.patch_size(1) == 8 and cfg.patch_size(2) == 4
    with pytest.raises(ValueError):
        cfg.patch_size(3)


def test_component_order():
    layout = SequenceLayout(2, 2, 2)
    assert layout.component_order() == [
        (1, "LH"), (1, "HL"), (1, "HH"),
        (2, "LH"), (2, "HL"), (2, "HH"), (2, "LL"),
    ]


def test_patchify_unpatchify_round_trip():
    rng = np.random.default_rng(0)
    comp = rng.normal(size=(3, 8, 12))
    flat = patchify(comp, 4)
    assert flat.shape == (2 * 3, 3 * 16)
    back = unpatchify(flat, 4, 3, 2, 3)
    assert np.array_equal(back, comp)


def test_patchify_layout_is_channel_major_row_major():
    # Channel 0 of patch (0, 0) occupies the first p*p entries in row order.
    comp = np.arange(2 * 4 * 4, dtype=np.float64).reshape(2, 4, 4)
    flat = patchify(comp, 2)
    assert flat.shape == (4, 8)
    assert np.array_equal(flat[0], [0.0, 1.0, 4.0, 5.0, 16.0, 17.0, 20.0, 21.0])
    assert np.array_equal(flat[1, :4], [2.0, 3.0, 6.0, 7.0])


def test_embedding_is_affine_in_patches():
    cfg = PatchConfig(base_patch=8, depth=2, height=16, width=16)
    rng = np.random.default_rng(1)
    comp = rng.normal(size=(2, 8, 8))  # level-1 component of a 16x16 image
    w = rng.normal(size=(2 * 16, 5))
    b = rng.normal(size=5)
    got = patch_embed_level(comp, 1, w, b, cfg)
    want = patchify(comp, 4) @ w + b
    assert np.allclose(got, want)
    with pytest.raises(ValueError):
        patch_embed_level(comp, 2, w, b, cfg)  # wrong patch size for level


def test_build_sequence_layout_and_tags():
    cfg = PatchConfig(base_patch=8, depth=2, height=16, width=16)
    x = Raster(np.random.default_rng(2).normal(size=(2, 16, 16)))
    s = dwt_multi(x, 2)
    seq = build_sequence(s, cfg, make_weights(cfg, 2, 6))
    assert seq.tokens.shape == (7 * 4, 6)
    assert np.array_equal(seq.positions, np.arange(28))
    assert list(seq.levels[:12]) == [1] * 12
    assert list(seq.levels[12:]) == [2] * 16
    assert list(seq.components[:4]) == [COMPONENT_CODES["LH"]] * 4
    assert list(seq.components[-4:]) == [COMPONENT_CODES["LL"]] * 4
    assert list(seq.rows[:4]) == [0, 0, 1, 1]
    assert list(seq.cols[:4]) == [0, 1, 0, 1]
    # First token embeds the upper-left patch of LH1.
    w = make_weights(cfg, 2, 6)
    want = patchify(np.asarray(s.details[0].lh), 4)[0] @ w.level_weights[0] + w.level_biases[0]
    assert np.allclose(seq.tokens[0], want)


def test_ape_position_zero_and_one():
    table = ape(16, 4)
    assert np.array_equal(table[0], [0.0, 1.0, 0.0, 1.0])
    want = [math.sin(1.0), math.cos(1.0), math.sin(0.01), math.cos(0.01)]
    assert np.allclose(table[1], want, atol=1e-12)


def test_ape_deterministic_and_distinct():
    a = ape(128, 32)
    b = ape(128, 32)
    assert np.array_equal(a, b)
    # No two positions share a row (injectivity over this range).
    assert np.unique(a, axis=0).shape[0] == 128
    with pytest.raises(ValueError):
        ape(4, 3)


def test_mask_count_half_rounds_down():
    assert mask_count(196, 0.75) == 147
    assert mask_count(4, 0.5) == 2
    assert mask_count(10, 0.25) == 2  # 2.5 rounds down
    assert mask_count(10, 0.35) == 3  # 3.5 rounds down
    assert mask_count(10, 0.36) == 4  # 3.6 rounds up


def test_tube_mask_determinism_and_bounds():
    a = tube_mask(196, 0.75, rng_seed=5)
    b = tube_mask(196, 0.75, rng_seed=5)
    assert np.array_equal(a.masked, b.masked)
    assert len(a) == 147
    assert a.masked.min() >= 0 and a.masked.max() < 196
    assert np.array_equal(a.masked, np.sort(np.unique(a.masked)))
    c = tube_mask(196, 0.75, rng_seed=6)
    assert not np.array_equal(a.masked, c.masked)


def test_tube_mask_frequency():
    n, draws = 49, 4000
    counts = np.zeros(n)
    for seed in range(draws):
        counts[tube_mask(n, 0.75, seed).masked] += 1
    freq = counts / draws
    assert np.all(np.abs(freq - 0.75) < 0.03)


def test_tube_mask_degenerate_rejected():
    with pytest.raises(ValueError):
        tube_mask(4, 0.05, 0)  # would mask zero positions
    with pytest.raises(ValueError):
        tube_mask(16, 1.0, 0)


def test_apply_mask_drops_whole_tubes():
    cfg = PatchConfig(base_patch=8, depth=2, height=32, width=32)
    x = Raster(np.random.default_rng(3).normal(size=(1, 32, 32)))
    seq = build_sequence(dwt_multi(x, 2), cfg, make_weights(cfg, 1, 4))
    m = tube_mask(cfg.n_spatial, 0.5, 7)
    visible, rmap = apply_mask(seq, m)
    n_vis = cfg.n_spatial - len(m)
    assert visible.tokens.shape[0] == cfg.n_components * n_vis
    # No visible token sits at a masked spatial index, in any component.
    assert not np.any(m.bool_grid()[visible.spatial_index])
    # Every component keeps the same visible spatial pattern.
    per_comp = visible.spatial_index.reshape(cfg.n_components, n_vis)
    for row in per_comp[1:]:
        assert np.array_equal(row, per_comp[0])
    assert rmap.visible_positions.size + rmap.masked_positions.size == seq.tokens.shape[0]


def test_restore_round_trip():
    cfg = PatchConfig(base_patch=8, depth=1, height=16, width=16)
    x = Raster(np.random.default_rng(4).normal(size=(1, 16, 16)))
    seq = build_sequence(dwt_multi(x, 1), cfg, make_weights(cfg, 1, 4))
    m = tube_mask(cfg.n_spatial, 0.5, 1)
    visible, rmap = apply_mask(seq, m)
    fill = np.full((4,), -1.0)
    full = restore(visible.tokens, rmap, fill)
    assert full.shape == seq.tokens.shape
    assert np.array_equal(full[rmap.visible_positions], visible.tokens)
    assert np.all(full[rmap.masked_positions] == -1.0)


def test_mask_grid_mismatch_rejected():
    cfg = PatchConfig(base_patch=8, depth=1, height=16, width=16)
    x = Raster(np.zeros((1, 16, 16)))
    seq = build_sequence(dwt_multi(x, 1), cfg, make_weights(cfg, 1, 4))
    with pytest.raises(ValueError):
        apply_mask(seq, tube_mask(16, 0.5, 0))
