"""Multi-level patch embedding, sequence layout, sinusoidal position
table, and tube masking.

Sequence layout is fixed: level-major from shallowest to deepest, within
a level the component order [LH, HL, HH], the deepest level followed by
LL, row-major over the token grid inside each component. Because every
level's patch size halves with its component resolution, each component
contributes the same grid_h*grid_w tokens and token (r, c) of any
component covers the pixels of original-image patch (r, c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .wavelet.transform import DecompositionSet

COMPONENT_CODES = {"LH": 0, "HL": 1, "HH": 2, "LL": 3}
COMPONENT_NAMES = {v: k for k, v in COMPONENT_CODES.items()}


@dataclass(frozen=True)
class PatchConfig:
    """Patch geometry: base patch in original-image pixels, decomposition
    depth, and the raster size the sequence is built for."""

    base_patch: int
    depth: int
    height: int
    width: int

    def __post_init__(self):
        if self.base_patch < 1 or self.depth < 1:
            raise ValueError("base_patch and depth must be positive")
        scale = 2**self.depth
        if self.base_patch % scale != 0:
            raise ValueError(
                f"base_patch {self.base_patch} not divisible by 2^{self.depth}; "
                f"the deepest patch size would be fractional"
            )
        if self.height % self.base_patch != 0 or self.width % self.base_patch != 0:
            raise ValueError(
                f"raster {self.height}x{self.width} not divisible by "
                f"base patch {self.base_patch}"
            )

    def patch_size(self, level: int) -> int:
        """Patch edge in component pixels at the given level (1-based)."""
        if not 1 <= level <= self.depth:
            raise ValueError(f"level {level} outside 1..{self.depth}")
        return self.base_patch // 2**level

    @property
    def grid_h(self) -> int:
        return self.height // self.base_patch

    @property
    def grid_w(self) -> int:
        return self.width // self.base_patch

    @property
    def n_spatial(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_components(self) -> int:
        return 3 * self.depth + 1

    @property
    def total_tokens(self) -> int:
        return self.n_components * self.n_spatial


@dataclass(frozen=True)
class SequenceLayout:
    """Token bookkeeping for one PatchConfig: tag arrays over the full
    sequence, component slices in the fixed order."""

    grid_h: int
    grid_w: int
    depth: int

    @property
    def n_spatial(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_components(self) -> int:
        return 3 * self.depth + 1

    @property
    def total(self) -> int:
        return self.n_components * self.n_spatial

    def component_order(self) -> list[tuple[int, str]]:
        """(level, component name) pairs in sequence order."""
        order = []
        for j in range(1, self.depth + 1):
            order += [(j, "LH"), (j, "HL"), (j, "HH")]
        order.append((self.depth, "LL"))
        return order

    def component_slices(self) -> list[tuple[int, str, slice]]:
        n = self.n_spatial
        return [
            (level, name, slice(k * n, (k + 1) * n))
            for k, (level, name) in enumerate(self.component_order())
        ]

    def level_slice(self, level: int) -> slice:
        """Contiguous slice of all tokens of one level (the deepest
        includes LL, so it is 4 components long)."""
        n = self.n_spatial
        start = (level - 1) * 3 * n
        stop = level * 3 * n + (n if level == self.depth else 0)
        return slice(start, stop)

    def tags(self):
        """Per-token (levels, components, rows, cols) arrays for the full
        sequence."""
        n = self.n_spatial
        rows_g, cols_g = np.divmod(np.arange(n), self.grid_w)
        levels = np.empty(self.total, dtype=np.int64)
        comps = np.empty(self.total, dtype=np.int64)
        rows = np.empty(self.total, dtype=np.int64)
        cols = np.empty(self.total, dtype=np.int64)
        for level, name, sl in self.component_slices():
            levels[sl] = level
            comps[sl] = COMPONENT_CODES[name]
            rows[sl] = rows_g
            cols[sl] = cols_g
        return levels, comps, rows, cols


@dataclass
class TokenSequence:
    """Embedded tokens plus their layout tags. `positions` are indices
    into the full-sequence layout, so a masked subsequence keeps the
    original positions of its survivors."""

    tokens: np.ndarray
    positions: np.ndarray
    levels: np.ndarray
    components: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    layout: SequenceLayout

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ValueError(f"tokens must be (T, D), got {self.tokens.shape}")
        t = self.tokens.shape[0]
        for name in ("positions", "levels", "components", "rows", "cols"):
            arr = getattr(self, name)
            if arr.shape != (t,):
                raise ValueError(f"{name} length {arr.shape} does not match {t} tokens")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def spatial_index(self) -> np.ndarray:
        return self.rows * self.layout.grid_w + self.cols


def patchify(comp: np.ndarray, patch: int) -> np.ndarray:
    """Split a (C, h, w) component into flattened non-overlapping patches:
    (grid_h*grid_w, C*patch*patch), row-major over the grid, channel-major
    within a patch."""
    if comp.ndim != 3:
        raise ValueError(f"expected (C, h, w), got {comp.shape}")
    c, h, w = comp.shape
    if h % patch != 0 or w % patch != 0:
        raise ValueError(f"component {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    t = comp.reshape(c, gh, patch, gw, patch)
    return t.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch * patch)


def unpatchify(tokens: np.ndarray, patch: int, channels: int,
               grid_h: int, grid_w: int) -> np.ndarray:
    """Inverse of patchify: (grid_h*grid_w, C*patch*patch) -> (C, h, w)."""
    if tokens.shape != (grid_h * grid_w, channels * patch * patch):
        raise ValueError(
            f"token block {tokens.shape} does not match grid "
            f"{grid_h}x{grid_w}, patch {patch}, channels {channels}"
        )
    t = tokens.reshape(grid_h, grid_w, channels, patch, patch)
    return t.transpose(2, 0, 3, 1, 4).reshape(
        channels, grid_h * patch, grid_w * patch
    )


@dataclass
class EmbedWeights:
    """Per-level affine patch embeddings: one (C*p_j^2, D) map shared by a
    level's three detail components, plus a separate map for the deepest
    LL (same input size as the deepest level)."""

    level_weights: tuple
    level_biases: tuple
    ll_weight: np.ndarray
    ll_bias: np.ndarray

    def __post_init__(self):
        if len(self.level_weights) != len(self.level_biases):
            raise ValueError("level weight/bias counts differ")
        for w, b in list(zip(self.level_weights, self.level_biases)) + [
            (self.ll_weight, self.ll_bias)
        ]:
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(
                    f"embedding weight {w.shape} / bias {b.shape} inconsistent"
                )

    @property
    def depth(self) -> int:
        return len(self.level_weights)

    @property
    def dim(self) -> int:
        return self.ll_weight.shape[1]


def patch_embed_level(comp: np.ndarray, level: int, weight: np.ndarray,
                      bias: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Affine patch embedding of one component: (grid tokens, D)."""
    p = cfg.patch_size(level)
    flat = patchify(np.asarray(comp, dtype=np.float64), p)
    if flat.shape[1] != weight.shape[0]:
        raise ValueError(
            f"patch size {flat.shape[1]} does not match weight rows "
            f"{weight.shape[0]}"
        )
    return flat @ weight + bias


def build_sequence(s: DecompositionSet, cfg: PatchConfig,
                   weights: EmbedWeights) -> TokenSequence:
    """Embed every component of S in the fixed layout."""
    if s.depth != cfg.depth:
        raise ValueError(f"set depth {s.depth} != config depth {cfg.depth}")
    if weights.depth != cfg.depth:
        raise ValueError(f"weights depth {weights.depth} != config {cfg.depth}")
    if s.image_shape[1:] != (cfg.height, cfg.width):
        raise ValueError(
            f"set resolves to image {s.image_shape[1:]}, config expects "
            f"{(cfg.height, cfg.width)}"
        )
    blocks = []
    for j, det in enumerate(s.details, start=1):
        w, b = weights.level_weights[j - 1], weights.level_biases[j - 1]
        for comp in det:
            blocks.append(patch_embed_level(comp, j, w, b, cfg))
    blocks.append(
        patch_embed_level(s.ll, cfg.depth, weights.ll_weight, weights.ll_bias, cfg)
    )
    tokens = np.concatenate(blocks, axis=0)
    layout = SequenceLayout(cfg.grid_h, cfg.grid_w, cfg.depth)
    levels, comps, rows, cols = layout.tags()
    return TokenSequence(
        tokens=tokens,
        positions=np.arange(layout.total),
        levels=levels,
        components=comps,
        rows=rows,
        cols=cols,
        layout=layout,
    )


def ape(num_positions: int, dim: int) -> np.ndarray:
    """Sinusoidal absolute positional encoding table, interleaved
    sin/cos: row p has sin(p/10000^(2i/dim)) at even column 2i and the
    matching cos at 2i+1."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dim must be even, got {dim}")
    pos = np.arange(num_positions, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.empty((num_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


@dataclass(frozen=True)
class TubeMask:
    """Spatial indices masked identically across every component."""

    masked: np.ndarray
    ratio: float
    n_spatial: int

    def __post_init__(self):
        m = np.asarray(self.masked, dtype=np.int64)
        if m.ndim != 1 or np.unique(m).size != m.size:
            raise ValueError("mask must be a 1D set of distinct indices")
        if m.size and (m.min() < 0 or m.max() >= self.n_spatial):
            raise ValueError("mask index outside the token grid")
        object.__setattr__(self, "masked", np.sort(m))

    def __len__(self) -> int:
        return self.masked.size

    def bool_grid(self) -> np.ndarray:
        out = np.zeros(self.n_spatial, dtype=bool)
        out[self.masked] = True
        return out


def mask_count(n_spatial: int, ratio: float) -> int:
    """|M| = round(ratio * n) with exact halves rounded down."""
    return math.ceil(ratio * n_spatial - 0.5)


def tube_mask(n_spatial: int, ratio: float, rng_seed: int) -> TubeMask:
    """Uniform random spatial mask of exact size round(ratio*n), drawn as
    a seeded shuffle prefix."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    count = mask_count(n_spatial, ratio)
    if count <= 0 or count >= n_spatial:
        raise ValueError(
            f"degenerate mask: ratio {ratio} over {n_spatial} positions "
            f"masks {count}"
        )
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n_spatial)
    return TubeMask(masked=perm[:count], ratio=ratio, n_spatial=n_spatial)


@dataclass(frozen=True)
class RestoreMap:
    """Bookkeeping to re-insert mask tokens: original positions of the
    visible and masked tokens, in full-layout order."""

    visible_positions: np.ndarray
    masked_positions: np.ndarray
    layout: SequenceLayout
    mask: TubeMask

    @property
    def total(self) -> int:
        return self.layout.total


def apply_mask(seq: TokenSequence, m: TubeMask):
    """Drop every token whose spatial index is masked, across all
    components. Returns (visible TokenSequence, RestoreMap)."""
    if m.n_spatial != seq.layout.n_spatial:
        raise ValueError(
            f"mask grid {m.n_spatial} does not match sequence grid "
            f"{seq.layout.n_spatial}"
        )
    hidden = m.bool_grid()[seq.spatial_index]
    keep = ~hidden
    visible = TokenSequence(
        tokens=seq.tokens[keep],
        positions=seq.positions[keep],
        levels=seq.levels[keep],
        components=seq.components[keep],
        rows=seq.rows[keep],
        cols=seq.cols[keep],
        layout=seq.layout,
    )
    rmap = RestoreMap(
        visible_positions=seq.positions[keep],
        masked_positions=seq.positions[hidden],
        layout=seq.layout,
        mask=m,
    )
    return visible, rmap


def restore(visible_tokens: np.ndarray, rmap: RestoreMap,
            fill: np.ndarray) -> np.ndarray:
    """Re-insert a fill vector at every masked slot, producing the full
    (total, D) sequence in layout order."""
    if visible_tokens.shape[0] != rmap.visible_positions.size:
        raise ValueError(
            f"{visible_tokens.shape[0]} visible tokens but restore map has "
            f"{rmap.visible_positions.size} slots"
        )
    full = np.empty((rmap.total, visible_tokens.shape[1]), dtype=visible_tokens.dtype)
    full[rmap.visible_positions] = visible_tokens
    full[rmap.masked_positions] = fill
    return full
