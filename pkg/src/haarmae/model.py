"""Transformer encoder, multi-level decoder with per-component output
heads, the dual reconstruction loss, and gradient checking.

Block internals follow the standard masked-autoencoder convention the
architecture builds on: pre-norm blocks (multi-head softmax attention +
GELU MLP, residuals), a final layer norm after the encoder and decoder
stacks, truncated-normal(0.02) init for projections and the mask token,
zero biases. The geo encoding is added to encoder tokens only; when geo
metadata is absent a zero vector is added through the same code path, so
disabling it is bitwise identical to a zero encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geo import sh_vector, to_spherical
from .rasters import Raster
from .tokenizer import (
    PatchConfig,
    RestoreMap,
    SequenceLayout,
    TubeMask,
    ape,
    patchify,
    tube_mask,
)
from .wavelet.transform import DecompositionSet, dwt_multi


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    dim: int
    heads: int
    mlp_dim: int

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class DecoderConfig:
    depth: int
    dim: int
    heads: int
    mlp_dim: int

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


ENCODER_BASE = EncoderConfig(depth=12, dim=768, heads=12, mlp_dim=3072)
ENCODER_SMALL = EncoderConfig(depth=6, dim=384, heads=6, mlp_dim=1536)
ENCODER_TINY = EncoderConfig(depth=2, dim=64, heads=4, mlp_dim=256)

DECODER_BASE = DecoderConfig(depth=8, dim=512, heads=16, mlp_dim=2048)
DECODER_TINY = DecoderConfig(depth=2, dim=32, heads=4, mlp_dim=128)

MODEL_SIZES = {
    "base": (ENCODER_BASE, DECODER_BASE),
    "small": (ENCODER_SMALL, DECODER_BASE),
    "tiny": (ENCODER_TINY, DECODER_TINY),
}


@dataclass(frozen=True)
class ModelConfig:
    """Full geometry + architecture: the raster shape the model is built
    for, patching, decomposition depth, and both transformer stacks."""

    channels: int
    height: int
    width: int
    levels: int
    encoder: EncoderConfig
    decoder: DecoderConfig
    base_patch: int = 16
    sh_degree: int = 27

    def __post_init__(self):
        self.patch_config()  # validates divisibility

    def patch_config(self) -> PatchConfig:
        return PatchConfig(
            base_patch=self.base_patch,
            depth=self.levels,
            height=self.height,
            width=self.width,
        )

    def layout(self) -> SequenceLayout:
        cfg = self.patch_config()
        return SequenceLayout(cfg.grid_h, cfg.grid_w, cfg.depth)


def model_config(size: str, channels: int, height: int, width: int,
                 levels: int, base_patch: int = 16,
                 sh_degree: int = 27) -> ModelConfig:
    """Named preset ('base', 'small', 'tiny') bound to a raster geometry."""
    key = size.lower()
    if key not in MODEL_SIZES:
        raise ValueError(f"unknown model size {size!r}; one of {sorted(MODEL_SIZES)}")
    enc, dec = MODEL_SIZES[key]
    return ModelConfig(
        channels=channels, height=height, width=width, levels=levels,
        encoder=enc, decoder=dec, base_patch=base_patch, sh_degree=sh_degree,
    )


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with samples outside two standard deviations redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def _block_param_shapes(dim: int, heads: int, mlp_dim: int):
    return {
        "ln1.gamma": (dim,), "ln1.beta": (dim,),
        "attn.wq": (dim, dim), "attn.bq": (dim,),
        "attn.wk": (dim, dim), "attn.bk": (dim,),
        "attn.wv": (dim, dim), "attn.bv": (dim,),
        "attn.wo": (dim, dim), "attn.bo": (dim,),
        "ln2.gamma": (dim,), "ln2.beta": (dim,),
        "mlp.w1": (dim, mlp_dim), "mlp.b1": (mlp_dim,),
        "mlp.w2": (mlp_dim, dim), "mlp.b2": (dim,),
    }


def parameter_shapes(config: ModelConfig) -> dict:
    """Every learnable tensor by name, in the fixed construction order."""
    cfg = config.patch_config()
    c, d, dhat = config.channels, config.encoder.dim, config.decoder.dim
    shapes: dict[str, tuple] = {}
    for j in range(1, config.levels + 1):
        p = cfg.patch_size(j)
        shapes[f"embed.level{j}.weight"] = (c * p * p, d)
        shapes[f"embed.level{j}.bias"] = (d,)
    p_deep = cfg.patch_size(config.levels)
    shapes["embed.ll.weight"] = (c * p_deep * p_deep, d)
    shapes["embed.ll.bias"] = (d,)
    shapes["gpe.weight"] = (config.sh_degree**2, d)
    shapes["gpe.bias"] = (d,)
    for i in range(config.encoder.depth):
        for k, s in _block_param_shapes(d, config.encoder.heads,
                                        config.encoder.mlp_dim).items():
            shapes[f"enc.block{i}.{k}"] = s
    shapes["enc.norm.gamma"] = (d,)
    shapes["enc.norm.beta"] = (d,)
    shapes["dec.proj.weight"] = (d, dhat)
    shapes["dec.proj.bias"] = (dhat,)
    shapes["dec.mask_token"] = (dhat,)
    for i in range(config.decoder.depth):
        for k, s in _block_param_shapes(dhat, config.decoder.heads,
                                        config.decoder.mlp_dim).items():
            shapes[f"dec.block{i}.{k}"] = s
    shapes["dec.norm.gamma"] = (dhat,)
    shapes["dec.norm.beta"] = (dhat,)
    for j in range(1, config.levels + 1):
        p = cfg.patch_size(j)
        for comp in ("lh", "hl", "hh"):
            shapes[f"head.level{j}.{comp}.weight"] = (dhat, c * p * p)
            shapes[f"head.level{j}.{comp}.bias"] = (c * p * p,)
    shapes["head.ll.weight"] = (dhat, c * p_deep * p_deep)
    shapes["head.ll.bias"] = (c * p_deep * p_deep,)
    return shapes


def _init_value(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".bias", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
        return np.zeros(shape)
    return trunc_normal(rng, shape)


@dataclass
class ModelState:
    """All learnable parameters plus optimizer moment buffers."""

    config: ModelConfig
    params: dict
    moments_m: dict
    moments_v: dict
    step: int = 0

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelState":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in parameter_shapes(config).items():
            params[name] = Tensor(_init_value(name, shape, rng), requires_grad=True)
        zeros = {n: np.zeros(p.data.shape) for n, p in params.items()}
        return cls(
            config=config,
            params=params,
            moments_m=zeros,
            moments_v={n: z.copy() for n, z in zeros.items()},
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())


def _affine(x: Tensor, params: dict, prefix: str,
            weight: str = "weight", bias: str = "bias") -> Tensor:
    return ad.matmul(x, params[f"{prefix}.{weight}"]) + params[f"{prefix}.{bias}"]


def _attention(x: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    t, dim = x.shape
    dh = dim // heads
    scale = 1.0 / math.sqrt(dh)

    def split_heads(y: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(y, (t, heads, dh)), (1, 0, 2))

    q = split_heads(ad.matmul(x, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"])
    k = split_heads(ad.matmul(x, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"])
    v = split_heads(ad.matmul(x, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"])
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * scale
    att = ad.softmax_last(scores)
    out = ad.matmul(att, v)
    out = ad.reshape(ad.transpose(out, (1, 0, 2)), (t, dim))
    return ad.matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def _transformer_block(x: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    normed = ad.layer_norm(x, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    x = x + _attention(normed, params, f"{prefix}.attn", heads)
    normed = ad.layer_norm(x, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    mlp = ad.matmul(normed, params[f"{prefix}.mlp.w1"]) + params[f"{prefix}.mlp.b1"]
    mlp = ad.matmul(ad.gelu(mlp), params[f"{prefix}.mlp.w2"]) + params[f"{prefix}.mlp.b2"]
    return x + mlp


def gpe_vector(state: ModelState, geo) -> Tensor:
    """Geo encoding on the tape: projected spherical harmonics for a
    coordinate, or a zero vector when geo is absent. Both cases are added
    to the tokens through the same op, keeping the disabled path bitwise
    identical to a zero encoding."""
    dim = state.config.encoder.dim
    if geo is None:
        return Tensor(np.zeros(dim))
    sh = sh_vector(to_spherical(geo), state.config.sh_degree).coeffs
    row = ad.matmul(Tensor(sh[None, :]), state.params["gpe.weight"])
    return ad.reshape(row, (dim,)) + state.params["gpe.bias"]


def embed_components(state: ModelState, s: DecompositionSet) -> Tensor:
    """Patch-embed every component of S on the tape, concatenated in the
    fixed sequence order: (total tokens, D)."""
    config = state.config
    if s.depth != config.levels:
        raise ValueError(f"set depth {s.depth} != model levels {config.levels}")
    if s.image_shape != (config.channels, config.height, config.width):
        raise ValueError(
            f"set resolves to {s.image_shape}, model expects "
            f"{(config.channels, config.height, config.width)}"
        )
    cfg = config.patch_config()
    blocks = []
    for j, det in enumerate(s.details, start=1):
        p = cfg.patch_size(j)
        for comp in det:
            flat = Tensor(patchify(np.asarray(comp, dtype=np.float64), p))
            blocks.append(_affine(flat, state.params, f"embed.level{j}"))
    p = cfg.patch_size(config.levels)
    flat = Tensor(patchify(np.asarray(s.ll, dtype=np.float64), p))
    blocks.append(_affine(flat, state.params, "embed.ll"))
    return ad.concat_rows(blocks)


def encode(state: ModelState, tokens: Tensor, positions: np.ndarray,
           ape_table: np.ndarray, gpe_vec=None, collect_layers: bool = False):
    """Encoder forward: add the positional encoding rows for the tokens'
    original positions plus one geo encoding vector to every token, run
    the pre-norm blocks, final norm. Returns the latent sequence, or
    (latents, per-block outputs) when collect_layers is set."""
    if tokens.shape[1] != state.config.encoder.dim:
        raise ValueError(
            f"token dim {tokens.shape[1]} != encoder dim {state.config.encoder.dim}"
        )
    if gpe_vec is None:
        gpe_vec = Tensor(np.zeros(state.config.encoder.dim))
    x = tokens + Tensor(ape_table[positions]) + gpe_vec
    collected = []
    for i in range(state.config.encoder.depth):
        x = _transformer_block(x, state.params, f"enc.block{i}",
                               state.config.encoder.heads)
        if collect_layers:
            collected.append(x)
    x = ad.layer_norm(x, state.params["enc.norm.gamma"], state.params["enc.norm.beta"])
    if collect_layers:
        return x, collected
    return x


def decode(state: ModelState, latents: Tensor, rmap: RestoreMap,
           ape_table: np.ndarray) -> list:
    """Decoder forward: project latents to the decoder width, insert the
    learnable mask token at every masked slot, add the decoder's own
    positional table (never the geo encoding), run the blocks, then map
    each component's token block to patch pixels and unpatchify.

    Returns predicted components as Tensors in the fixed sequence order.
    """
    config = state.config
    cfg = config.patch_config()
    layout = rmap.layout
    vis = _affine(latents, state.params, "dec.proj")
    full = ad.assemble_rows(
        vis, state.params["dec.mask_token"],
        rmap.visible_positions, rmap.masked_positions, layout.total,
    )
    x = full + Tensor(ape_table[: layout.total])
    for i in range(config.decoder.depth):
        x = _transformer_block(x, state.params, f"dec.block{i}",
                               config.decoder.heads)
    x = ad.layer_norm(x, state.params["dec.norm.gamma"], state.params["dec.norm.beta"])
    preds = []
    for level, name, sl in layout.component_slices():
        head = "head.ll" if name == "LL" else f"head.level{level}.{name.lower()}"
        block = ad.gather_rows(x, np.arange(sl.start, sl.stop))
        pix = _affine(block, state.params, head)
        p = cfg.patch_size(level)
        grid = ad.reshape(pix, (layout.grid_h, layout.grid_w, config.channels, p, p))
        comp = ad.reshape(
            ad.transpose(grid, (2, 0, 3, 1, 4)),
            (config.channels, layout.grid_h * p, layout.grid_w * p),
        )
        preds.append(comp)
    return preds


def predicted_set(pred_components, depth: int) -> DecompositionSet:
    """Materialize decoder outputs as a DecompositionSet of arrays."""
    arrays = [np.asarray(c.data if isinstance(c, Tensor) else c)
              for c in pred_components]
    return DecompositionSet.from_ordered(depth, arrays)


def masked_pixel_indices(mask: TubeMask, cfg: PatchConfig, channels: int) -> np.ndarray:
    """Flat indices into (C, H, W) of every pixel covered by a masked tube."""
    p = cfg.base_patch
    return _masked_indices(mask, cfg, channels, p, cfg.height, cfg.width)


def masked_component_indices(mask: TubeMask, cfg: PatchConfig, channels: int,
                             level: int) -> np.ndarray:
    """Flat indices into a level's (C, h_j, w_j) component of every entry
    inside a masked tube."""
    p = cfg.patch_size(level)
    scale = 2**level
    return _masked_indices(mask, cfg, channels, p,
                           cfg.height // scale, cfg.width // scale)


def _masked_indices(mask: TubeMask, cfg: PatchConfig, channels: int,
                    patch: int, height: int, width: int) -> np.ndarray:
    rows = mask.masked // cfg.grid_w
    cols = mask.masked % cfg.grid_w
    rr = rows[:, None] * patch + np.arange(patch)
    cc = cols[:, None] * patch + np.arange(patch)
    within = (rr[:, :, None] * width + cc[:, None, :]).reshape(-1)
    chan = np.arange(channels) * (height * width)
    return (chan[:, None] + within[None, :]).reshape(-1)


def loss_rec(x_values: np.ndarray, xbar, mask: TubeMask, cfg: PatchConfig) -> Tensor:
    """Masked-pixel mean squared error between the input image and the
    reconstruction, over all channels of the masked tubes' pixel regions."""
    if len(mask) == 0:
        raise ValueError("empty mask: reconstruction loss undefined")
    xbar = ad.as_tensor(xbar)
    channels = xbar.shape[0]
    idx = masked_pixel_indices(mask, cfg, channels)
    target = np.asarray(x_values, dtype=np.float64).reshape(-1)[idx]
    return ad.mse_mean(ad.take_flat(xbar, idx), target)


SMOOTH_L1_BETA = 1.0


def loss_cmp(s: DecompositionSet, pred_components, mask: TubeMask,
             cfg: PatchConfig) -> Tensor:
    """Smooth-L1 between target and predicted components, averaged over
    every component element inside masked tubes."""
    if len(mask) == 0:
        raise ValueError("empty mask: component loss undefined")
    targets = s.to_ordered()
    if len(pred_components) != len(targets):
        raise ValueError(
            f"{len(pred_components)} predicted components vs {len(targets)} targets"
        )
    channels = s.channels
    parts = []
    target_parts = []
    for k, (target, pred) in enumerate(zip(targets, pred_components)):
        level = s.depth if k == 3 * s.depth else k // 3 + 1
        idx = masked_component_indices(mask, cfg, channels, level)
        parts.append(ad.take_flat(ad.as_tensor(pred), idx))
        target_parts.append(np.asarray(target, dtype=np.float64).reshape(-1)[idx])
    return ad.smooth_l1_mean(
        ad.concat_rows(parts), np.concatenate(target_parts), beta=SMOOTH_L1_BETA
    )


def loss_total(x_values: np.ndarray, s: DecompositionSet, pred_components,
               mask: TubeMask, cfg: PatchConfig):
    """Unweighted sum of the two loss terms; returns (total, rec, cmp)."""
    xbar = ad.idwt_multi_op(pred_components, s.depth)
    rec = loss_rec(x_values, xbar, mask, cfg)
    cmp_ = loss_cmp(s, pred_components, mask, cfg)
    return rec + cmp_, rec, cmp_


@dataclass
class ForwardResult:
    loss_total: Tensor
    loss_rec: Tensor
    loss_cmp: Tensor
    pred_components: list
    mask: TubeMask
    rmap: RestoreMap
    components: DecompositionSet = field(repr=False, default=None)


def masked_forward(state: ModelState, raster: Raster, mask: TubeMask) -> ForwardResult:
    """Full pipeline for one raster: decompose, embed, mask, encode (with
    geo encoding when metadata is present), decode, both losses."""
    config = state.config
    cfg = config.patch_config()
    layout = config.layout()
    if mask.n_spatial != layout.n_spatial:
        raise ValueError(
            f"mask grid {mask.n_spatial} != model token grid {layout.n_spatial}"
        )
    work = raster.astype(np.float64)
    s = dwt_multi(work, config.levels)
    full = embed_components(state, s)
    _, comps, rows, cols = layout.tags()
    spatial = rows * layout.grid_w + cols
    hidden = mask.bool_grid()[spatial]
    vis_pos = np.flatnonzero(~hidden)
    mask_pos = np.flatnonzero(hidden)
    rmap = RestoreMap(
        visible_positions=vis_pos, masked_positions=mask_pos,
        layout=layout, mask=mask,
    )
    visible = ad.gather_rows(full, vis_pos)
    enc_ape = ape(layout.total, config.encoder.dim)
    latents = encode(state, visible, vis_pos, enc_ape, gpe_vector(state, raster.geo))
    dec_ape = ape(layout.total, config.decoder.dim)
    preds = decode(state, latents, rmap, dec_ape)
    tot, rec, cmp_ = loss_total(work.values, s, preds, mask, cfg)
    return ForwardResult(
        loss_total=tot, loss_rec=rec, loss_cmp=cmp_,
        pred_components=preds, mask=mask, rmap=rmap, components=s,
    )


def backward(loss: Tensor, state: ModelState) -> dict:
    """Reverse-mode gradients for every parameter; parameters untouched by
    the loss get zeros. Non-finite gradients raise with the parameter name."""
    ad.backward(loss)
    grads = {}
    for name, p in state.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
        grads[name] = g
    return grads


def gradcheck(state: ModelState, raster: Raster, mask: TubeMask,
              n_samples: int = 200, h: float = 1e-3, seed: int = 0) -> dict:
    """Compare reverse-mode gradients of the total loss against central
    finite differences on randomly sampled parameter entries.

    Relative error per entry is |ad - fd| / max(|ad|, |fd|, 1), so tiny
    gradients are compared absolutely. The raster should be small in
    amplitude: every component error must stay inside the smooth-L1
    quadratic branch or the finite-difference step crosses the kink.
    """
    state.zero_grad()
    result = masked_forward(state, raster, mask)
    max_abs_err = max(
        float(np.max(np.abs(p.data - t)))
        for p, t in zip(result.pred_components, result.components.to_ordered())
    )
    if max_abs_err > 0.8 * SMOOTH_L1_BETA:
        raise ValueError(
            f"component error {max_abs_err:.3f} too close to the smooth-L1 "
            f"transition {SMOOTH_L1_BETA}; use a smaller-amplitude raster"
        )
    grads = backward(result.loss_total, state)
    names = list(state.params)
    sizes = np.array([state.params[n].data.size for n in names])
    bounds = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    flat_choices = rng.choice(int(bounds[-1]), size=n_samples, replace=False)
    worst = {"rel_err": 0.0, "name": None, "index": None, "ad": 0.0, "fd": 0.0}
    for flat in flat_choices:
        k = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[k - 1] if k else 0))
        name = names[k]
        param = state.params[name]
        idx = np.unravel_index(offset, param.data.shape)
        orig = param.data[idx]
        param.data[idx] = orig + h
        up = float(masked_forward(state, raster, mask).loss_total.data)
        param.data[idx] = orig - h
        down = float(masked_forward(state, raster, mask).loss_total.data)
        param.data[idx] = orig
        fd = (up - down) / (2.0 * h)
        adg = float(grads[name][idx])
        rel = abs(adg - fd) / max(abs(adg), abs(fd), 1.0)
        if rel > worst["rel_err"]:
            worst = {"rel_err": rel, "name": name, "index": idx, "ad": adg, "fd": fd}
    return {
        "n_checked": n_samples,
        "max_rel_err": worst["rel_err"],
        "worst": worst,
    }


def random_mask_for(config: ModelConfig, ratio: float, seed: int) -> TubeMask:
    """Tube mask sized for this model's token grid."""
    return tube_mask(config.layout().n_spatial, ratio, seed)
