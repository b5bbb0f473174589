"""Toy-scale pretraining: synthetic geo-tagged data, augmentation,
decoupled-weight-decay Adam, and the fully seeded training loop.

Determinism contract: everything random is drawn from streams spawned
off TrainConfig.seed, so two runs with the same config produce
bitwise-identical parameters, checkpoints, and metric records (timing
fields aside).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .geo import GeoCoord
from .model import ModelState, masked_forward, model_config
from .rasters import Raster
from .tokenizer import tube_mask

CATEGORIES = ("field", "forest", "urban", "water")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    seed: int
    lr: float = 1e-4
    weight_decay: float = 0.05
    mask_ratio: float = 0.75
    levels: int = 4
    model_size: str = "base"
    base_patch: int = 16
    sh_degree: int = 27
    dataset: str | None = None
    checkpoint_every: int = 1  # epochs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay nonnegative")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask ratio must be in (0, 1), got {self.mask_ratio}")
        if self.levels < 1 or self.seed < 0:
            raise ValueError("levels must be >= 1 and seed nonnegative")


@dataclass
class SynthSpec:
    """Synthetic dataset geometry and signal strengths."""

    count: int
    channels: int
    height: int
    width: int
    seed: int
    geo_strength: float = 0.5

    def __post_init__(self):
        if min(self.count, self.channels, self.height, self.width) < 1:
            raise ValueError("count, channels, height, width must be positive")
        if self.height % 2 != 0 or self.width % 2 != 0:
            raise ValueError(
                f"dims must be even for wavelet analysis, got "
                f"{self.height}x{self.width}"
            )


def _upsample_bilinear(field: np.ndarray, height: int, width: int) -> np.ndarray:
    """Separable bilinear resize of a (h, w) array (half-pixel centers)."""
    out = _resize_axis(field, height, axis=0)
    return _resize_axis(out, width, axis=1)


def _resize_axis(arr: np.ndarray, new: int, axis: int) -> np.ndarray:
    old = arr.shape[axis]
    if old == new:
        return arr
    src = (np.arange(new) + 0.5) * (old / new) - 0.5
    i0 = np.clip(np.floor(src).astype(np.int64), 0, old - 1)
    i1 = np.minimum(i0 + 1, old - 1)
    w1 = np.clip(src - i0, 0.0, 1.0)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = new
    w1 = w1.reshape(shape)
    return a * (1.0 - w1) + b * w1


def synth_dataset(spec: SynthSpec) -> list[Raster]:
    """Deterministic synthetic rasters with geolocation and category.

    Each sample is a band-correlated smooth field plus an oriented
    high-frequency texture (orientation tied to the category) plus a
    latitude-dependent per-band bias scaled by geo_strength, clipped to
    [0, 1]. Coordinates are drawn in clusters of < 100 km radius around
    globally uniform centers, so same-cluster samples form close
    (< 200 km) pairs and cross-cluster samples far pairs.
    """
    rng = np.random.default_rng(spec.seed)
    n_clusters = max(4, spec.count // 8)
    centers_lat = np.rad2deg(np.arcsin(rng.uniform(-0.95, 0.95, n_clusters)))
    centers_lon = rng.uniform(-180.0, 180.0, n_clusters)
    band_weights = rng.uniform(0.5, 1.0, spec.channels)
    bias_weights = rng.uniform(-1.0, 1.0, spec.channels)
    out: list[Raster] = []
    yy, xx = np.meshgrid(
        np.arange(spec.height), np.arange(spec.width), indexing="ij"
    )
    for _ in range(spec.count):
        k = int(rng.integers(n_clusters))
        # ~0.45 deg lat, same-scale lon offset: both points of a
        # same-cluster pair stay within 200 km
        lat = float(np.clip(centers_lat[k] + rng.uniform(-0.45, 0.45), -89.9, 89.9))
        coslat = max(0.1, np.cos(np.deg2rad(lat)))
        lon = float(
            ((centers_lon[k] + rng.uniform(-0.45, 0.45) / coslat) + 180.0) % 360.0
            - 180.0
        )
        category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        coarse = rng.standard_normal((spec.height // 8, spec.width // 8))
        smooth = _upsample_bilinear(coarse, spec.height, spec.width)
        smooth = smooth / max(1e-9, np.abs(smooth).max())
        angle = (
            CATEGORIES.index(category) * np.pi / len(CATEGORIES)
            + rng.uniform(-0.2, 0.2)
        )
        freq = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        texture = np.sin(
            freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase
        )
        lat_bias = spec.geo_strength * (lat / 90.0) * bias_weights
        per_band_noise = rng.standard_normal(spec.channels) * 0.05
        values = (
            0.5
            + 0.25 * band_weights[:, None, None] * smooth[None]
            + 0.1 * texture[None]
            + 0.2 * lat_bias[:, None, None]
            + per_band_noise[:, None, None]
        )
        values = np.clip(values, 0.0, 1.0).astype(np.float32)
        out.append(Raster(values, geo=GeoCoord(lat, lon), category=category))
    return out


def augment(x: Raster, seed: int) -> Raster:
    """Normalize to [0, 1], random resized crop back to (H, W) with area
    fraction uniform in [0.2, 1.0] (bilinear), horizontal flip with
    probability 0.5."""
    rng = np.random.default_rng(seed)
    v = np.asarray(x.values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    v = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    c, h, w = v.shape
    side_scale = np.sqrt(rng.uniform(0.2, 1.0))
    ch = max(1, round(h * side_scale))
    cw = max(1, round(w * side_scale))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    crop = v[:, top : top + ch, left : left + cw]
    resized = _resize_axis(_resize_axis(crop, h, axis=1), w, axis=2)
    if rng.uniform() < 0.5:
        resized = resized[:, :, ::-1]
    return Raster(
        np.ascontiguousarray(resized, dtype=x.values.dtype),
        geo=x.geo, category=x.category,
    )


ADAM_EPS = 1e-8


def optimizer_step(state: ModelState, grads: dict, lr: float, wd: float,
                   betas: tuple = (0.9, 0.999)) -> ModelState:
    """Decoupled-weight-decay adaptive-moment update, in place:
    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in state.params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in parameter {name}; step aborted"
            )
        m = state.moments_m[name]
        v = state.moments_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        p.data = p.data - lr * (update + wd * p.data)
    return state


def load_msr_dataset(path: str) -> list[Raster]:
    """All .msr files under a directory, sorted by name."""
    from .msr import read_msr

    files = sorted(Path(path).glob("*.msr"))
    if not files:
        raise FileNotFoundError(f"no .msr files under {path}")
    return [read_msr(f) for f in files]


def pretrain(cfg: TrainConfig, dataset: list[Raster] | None = None,
             out_dir=None) -> tuple[ModelState, dict]:
    """Seeded pretraining loop.

    Per step: augment -> wavelet decomposition -> embed -> tube mask ->
    encode (+positional and geo encodings) -> decode -> both losses ->
    backward -> optimizer step. Batch gradients are averaged by scaling
    each sample's loss by 1/batch before backward.

    Returns (state, summary); summary carries the per-step records also
    written as JSON lines to out_dir/metrics.jsonl. A non-finite loss
    aborts after writing the last finite-state checkpoint.
    """
    if dataset is None:
        if cfg.dataset is None:
            raise ValueError("no dataset given and cfg.dataset unset")
        dataset = load_msr_dataset(cfg.dataset)
    if not dataset:
        raise ValueError("empty dataset")
    shape = dataset[0].values.shape
    for r in dataset:
        if r.values.shape != shape:
            raise ValueError(
                f"dataset rasters disagree in shape: {r.values.shape} vs {shape}"
            )
    c, h, w = shape
    config = model_config(
        cfg.model_size, channels=c, height=h, width=w,
        levels=cfg.levels, base_patch=cfg.base_patch, sh_degree=cfg.sh_degree,
    )
    root = np.random.SeedSequence(cfg.seed)
    ss_init, ss_order, ss_aug, ss_mask = root.spawn(4)
    state = ModelState.init(config, seed=ss_init)
    order_rng = np.random.default_rng(ss_order)
    aug_rng = np.random.default_rng(ss_aug)
    mask_rng = np.random.default_rng(ss_mask)
    n_spatial = config.layout().n_spatial

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(
            json.dumps(
                {"train": dataclass_dict(cfg), "model": dataclass_dict(config)},
                sort_keys=True, indent=2, default=str,
            )
        )
        log_file = (out_path / "metrics.jsonl").open("w")

    records: list[dict] = []
    touched = {name: False for name in state.params}
    epoch_means: list[float] = []
    step = 0
    last_good: bytes | None = None
    try:
        for epoch in range(cfg.epochs):
            order = order_rng.permutation(len(dataset))
            epoch_losses: list[float] = []
            for start in range(0, len(dataset), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                t0 = time.perf_counter()
                state.zero_grad()
                rec_v = cmp_v = tot_v = 0.0
                for i in batch:
                    sample = augment(
                        dataset[i], int(aug_rng.integers(2**63))
                    )
                    mask = tube_mask(
                        n_spatial, cfg.mask_ratio, int(mask_rng.integers(2**63))
                    )
                    res = masked_forward(state, sample, mask)
                    tot_v += float(res.loss_total.data)
                    rec_v += float(res.loss_rec.data)
                    cmp_v += float(res.loss_cmp.data)
                    ad.backward(res.loss_total * (1.0 / len(batch)))
                tot_v /= len(batch)
                rec_v /= len(batch)
                cmp_v /= len(batch)
                if not np.isfinite(tot_v):
                    raise FloatingPointError(
                        f"non-finite loss {tot_v} at step {step}"
                    )
                grads = backward_grads(state, touched)
                optimizer_step(state, grads, cfg.lr, cfg.weight_decay)
                step += 1
                record = {
                    "step": step,
                    "epoch": epoch,
                    "L_rec": rec_v,
                    "L_cmp": cmp_v,
                    "L_tot": tot_v,
                    "wall_ms": (time.perf_counter() - t0) * 1e3,
                }
                records.append(record)
                epoch_losses.append(tot_v)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
            epoch_means.append(float(np.mean(epoch_losses)))
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                last_good = save_checkpoint(
                    state,
                    path=out_path / "checkpoint.ckpt" if out_path else None,
                    rng_state=rng_states(order_rng, aug_rng, mask_rng),
                )
    except FloatingPointError:
        if out_path is not None and last_good is not None:
            (out_path / "last_good.ckpt").write_bytes(last_good)
        raise
    finally:
        if log_file is not None:
            log_file.close()

    summary = {
        "steps": step,
        "epochs": cfg.epochs,
        "epoch_mean_loss": epoch_means,
        "first_epoch_loss": epoch_means[0],
        "final_epoch_loss": epoch_means[-1],
        "dead_params": sorted(n for n, hit in touched.items() if not hit),
        "records": records,
        "checkpoint": str(out_path / "checkpoint.ckpt") if out_path else None,
    }
    if out_path is not None:
        (out_path / "summary.json").write_text(
            json.dumps({k: v for k, v in summary.items() if k != "records"},
                       sort_keys=True, indent=2)
        )
    return state, summary


def backward_grads(state: ModelState, touched: dict) -> dict:
    """Collect accumulated gradients (zeros for untouched parameters),
    flagging parameters that have received any nonzero gradient."""
    grads = {}
    for name, p in state.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not touched[name] and np.any(g != 0.0):
            touched[name] = True
        grads[name] = g
    return grads


def rng_states(order_rng, aug_rng, mask_rng) -> dict:
    return {
        "order": order_rng.bit_generator.state,
        "aug": aug_rng.bit_generator.state,
        "mask": mask_rng.bit_generator.state,
    }


def dataclass_dict(obj) -> dict:
    return dataclasses.asdict(obj)
