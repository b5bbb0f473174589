"""Intrinsic evaluation of the geo encoding (coordinate pairs and image
tuples), multi-layer dense feature extraction, and reconstruction
reporting.

Pair protocol: balanced buckets of close (< 200 km) and far pairs; the
close bucket is built by displacing a uniform anchor along a random
bearing, the far bucket by independent uniform points. Iid uniform pairs
would leave the close bucket empty and the similarity/distance ranks
decorrelated (the truncated harmonic kernel oscillates near zero beyond
a few hundred kilometres).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import GeoCoord, haversine, sh_basis, spearman
from .model import (
    ModelState,
    embed_components,
    encode,
    gpe_vector,
    masked_component_indices,
    masked_pixel_indices,
    predicted_set,
)
from .model import SMOOTH_L1_BETA
from .rasters import Raster
from .tokenizer import ape, tube_mask
from .wavelet.transform import dwt_multi, idwt_multi

CLOSE_KM = 200.0


@dataclass(frozen=True)
class PairSample:
    """Coordinate pair with its great-circle distance and bucket."""

    p1: GeoCoord
    p2: GeoCoord
    distance_km: float
    bucket: str

    def __post_init__(self):
        if self.bucket not in ("close", "far"):
            raise ValueError(f"bucket must be close/far, got {self.bucket!r}")
        want = "close" if self.distance_km < CLOSE_KM else "far"
        if self.bucket != want:
            raise ValueError(
                f"bucket {self.bucket!r} inconsistent with distance "
                f"{self.distance_km:.1f} km"
            )


def _uniform_coord(rng: np.random.Generator) -> GeoCoord:
    lat = math.degrees(math.asin(rng.uniform(-1.0, 1.0)))
    lon = rng.uniform(-180.0, 180.0)
    return GeoCoord(lat, lon)


def _displace(rng: np.random.Generator, origin: GeoCoord,
              dist_km: float) -> GeoCoord:
    """Destination point at a given distance along a uniform bearing."""
    delta = dist_km / 6371.0
    bearing = rng.uniform(0.0, 2.0 * math.pi)
    p1 = math.radians(origin.lat)
    l1 = math.radians(origin.lon)
    p2 = math.asin(
        math.sin(p1) * math.cos(delta)
        + math.cos(p1) * math.sin(delta) * math.cos(bearing)
    )
    l2 = l1 + math.atan2(
        math.sin(bearing) * math.sin(delta) * math.cos(p1),
        math.cos(delta) - math.sin(p1) * math.sin(p2),
    )
    lon = (math.degrees(l2) + 180.0) % 360.0 - 180.0
    return GeoCoord(math.degrees(p2), lon)


def sample_pairs(count: int, seed: int) -> list[PairSample]:
    """Balanced close/far coordinate pairs, half each."""
    if count < 2:
        raise ValueError(f"need at least 2 pairs, got {count}")
    rng = np.random.default_rng(seed)
    pairs: list[PairSample] = []
    n_close = count // 2
    for i in range(count):
        a = _uniform_coord(rng)
        if i < n_close:
            b = _displace(rng, a, rng.uniform(1.0, 0.95 * CLOSE_KM))
        else:
            b = _uniform_coord(rng)
            while haversine(a, b) < CLOSE_KM:
                b = _uniform_coord(rng)
        d = haversine(a, b)
        pairs.append(
            PairSample(a, b, d, "close" if d < CLOSE_KM else "far")
        )
    return pairs


def _sh_matrix(coords: list[GeoCoord], degree: int) -> np.ndarray:
    lats = np.array([c.lat for c in coords])
    lons = np.array([c.lon for c in coords])
    thetas = np.deg2rad(lats + 90.0)
    phis = np.deg2rad(lons + 180.0)
    return sh_basis(thetas, phis, degree)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.sum(a * b, axis=1)
    return num / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


def gpe_pairs_eval(state: ModelState | None, pairs: list[PairSample],
                   projected: bool = True, degree: int | None = None) -> dict:
    """Cosine similarity of geo encodings per pair versus great-circle
    distance: bucket means/stds plus the Spearman coefficient.

    With projected=True the learned projection of `state` is applied;
    otherwise raw harmonic vectors are compared (degree defaults to the
    state's, or 27 without a state).
    """
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs, got {len(pairs)}")
    if projected and state is None:
        raise ValueError("projected evaluation needs a model state")
    if degree is None:
        degree = state.config.sh_degree if state is not None else 27
    v1 = _sh_matrix([p.p1 for p in pairs], degree)
    v2 = _sh_matrix([p.p2 for p in pairs], degree)
    if projected:
        w = state.params["gpe.weight"].data
        b = state.params["gpe.bias"].data
        v1 = v1 @ w + b
        v2 = v2 @ w + b
    sims = _cosine_rows(v1, v2)
    dists = np.array([p.distance_km for p in pairs])
    close = np.array([p.bucket == "close" for p in pairs])
    result = {
        "n_pairs": len(pairs),
        "n_close": int(close.sum()),
        "n_far": int((~close).sum()),
        "spearman": spearman(sims, dists),
    }
    for name, sel in (("close", close), ("far", ~close)):
        result[f"{name}_mean"] = float(sims[sel].mean()) if sel.any() else None
        result[f"{name}_std"] = float(sims[sel].std()) if sel.any() else None
    return result


@dataclass(frozen=True)
class TupleSample:
    """Anchor with positives/negatives by distance and category:
    positive close different-category, easy positive close same-category,
    negative far same-category, easy negative far different-category."""

    anchor: Raster
    positive: Raster
    easy_positive: Raster
    negative: Raster
    easy_negative: Raster

    def __post_init__(self):
        a = self.anchor
        roles = (
            ("positive", self.positive, True, False),
            ("easy_positive", self.easy_positive, True, True),
            ("negative", self.negative, False, True),
            ("easy_negative", self.easy_negative, False, False),
        )
        for name, r, want_close, want_same in roles:
            if a.geo is None or r.geo is None or a.category is None or r.category is None:
                raise ValueError(f"{name}: all tuple members need geo and category")
            d = haversine(a.geo, r.geo)
            if (d < CLOSE_KM) != want_close:
                raise ValueError(
                    f"{name} at {d:.1f} km violates the "
                    f"{'<' if want_close else '>'} {CLOSE_KM:.0f} km constraint"
                )
            if (r.category == a.category) != want_same:
                raise ValueError(
                    f"{name} category {r.category!r} must "
                    f"{'match' if want_same else 'differ from'} {a.category!r}"
                )


def sample_tuples(dataset: list[Raster], count: int, seed: int,
                  max_tries: int = 10000) -> list[TupleSample]:
    """Draw tuples from a geo-tagged, categorized dataset by rejection."""
    usable = [r for r in dataset if r.geo is not None and r.category is not None]
    if len(usable) < 5:
        raise ValueError("need at least 5 geo-tagged categorized rasters")
    rng = np.random.default_rng(seed)
    lats = np.array([r.geo.lat for r in usable])
    lons = np.array([r.geo.lon for r in usable])
    cats = np.array([r.category for r in usable])
    from .geo import haversine_km

    out: list[TupleSample] = []
    tries = 0
    while len(out) < count and tries < max_tries:
        tries += 1
        i = int(rng.integers(len(usable)))
        d = haversine_km(lats[i], lons[i], lats, lons)
        same = cats == cats[i]
        d[i] = np.nan  # the anchor fails both bucket comparisons
        with np.errstate(invalid="ignore"):
            pools = {
                "p": np.flatnonzero((d < CLOSE_KM) & ~same),
                "ep": np.flatnonzero((d < CLOSE_KM) & same),
                "n": np.flatnonzero((d > CLOSE_KM) & same),
                "en": np.flatnonzero((d > CLOSE_KM) & ~same),
            }
        if any(p.size == 0 for p in pools.values()):
            continue
        pick = {k: usable[int(rng.choice(p))] for k, p in pools.items()}
        out.append(
            TupleSample(
                anchor=usable[i], positive=pick["p"], easy_positive=pick["ep"],
                negative=pick["n"], easy_negative=pick["en"],
            )
        )
    if len(out) < count:
        raise ValueError(
            f"built only {len(out)}/{count} tuples after {max_tries} tries; "
            f"dataset lacks close/far category mixtures"
        )
    return out


def image_embedding(state: ModelState, x: Raster,
                    use_geo: bool = True) -> np.ndarray:
    """Mean over encoder output tokens of the full (unmasked) sequence,
    geo encoding included when the raster carries coordinates. Even an
    untrained projection transfers coordinate proximity into embedding
    proximity, so use_geo=False isolates what the encoder learned from
    pixels alone."""
    s = dwt_multi(x.astype(np.float64), state.config.levels)
    tokens = embed_components(state, s)
    layout = state.config.layout()
    positions = np.arange(layout.total)
    table = ape(layout.total, state.config.encoder.dim)
    geo = x.geo if use_geo else None
    latents = encode(state, tokens, positions, table, gpe_vector(state, geo))
    return latents.data.mean(axis=0)


def gpe_embeddings_eval(state: ModelState, tuples: list[TupleSample],
                        use_geo: bool = True) -> dict:
    """Mean cosine distances (1 - cosine similarity) between anchor
    embeddings and each role, plus margin = dist(A,N) - dist(A,P)."""
    if not tuples:
        raise ValueError("no tuples given")
    dists = {"p": [], "ep": [], "n": [], "en": []}
    for t in tuples:
        emb_a = image_embedding(state, t.anchor, use_geo)
        for key, r in (("p", t.positive), ("ep", t.easy_positive),
                       ("n", t.negative), ("en", t.easy_negative)):
            emb = image_embedding(state, r, use_geo)
            sim = float(
                np.dot(emb_a, emb)
                / (np.linalg.norm(emb_a) * np.linalg.norm(emb))
            )
            dists[key].append(1.0 - sim)
    arrays = {k: np.array(v) for k, v in dists.items()}
    return {
        "n_tuples": len(tuples),
        "dist_ap": float(arrays["p"].mean()),
        "dist_aep": float(arrays["ep"].mean()),
        "dist_an": float(arrays["n"].mean()),
        "dist_aen": float(arrays["en"].mean()),
        "margin": float(arrays["n"].mean() - arrays["p"].mean()),
        "per_tuple": {k: v.tolist() for k, v in arrays.items()},
    }


def margin_permutation_pvalue(dist_ap, dist_an, n_perm: int = 2000,
                              seed: int = 0) -> float:
    """Two-sided sign-flip permutation test of mean(dist_an - dist_ap)."""
    diffs = np.asarray(dist_an, dtype=np.float64) - np.asarray(dist_ap, dtype=np.float64)
    obs = abs(diffs.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice((-1.0, 1.0), size=(n_perm, diffs.size))
    perm = np.abs((signs * diffs).mean(axis=1))
    return float((np.sum(perm >= obs) + 1) / (n_perm + 1))


def encoder_layer_indices(depth: int) -> list[int]:
    """Feature layers: {3, 5, 7, 11} for a 12-block encoder, scaled down
    proportionally (floor, clamped to >= 1) for shallower ones."""
    if depth >= 12:
        base = [3, 5, 7, 11]
    else:
        base = sorted({max(1, (l * depth) // 12) for l in (3, 5, 7, 11)})
    return [l for l in base if l <= depth]


def _token_norm(a: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = a.mean(axis=-1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
    return (a - mu) / np.sqrt(var + eps)


def aggregate_layer(tokens: np.ndarray, n_spatial: int, levels: int) -> np.ndarray:
    """Collapse one layer's token sequence (T, D) to a spatial map
    (n_spatial, D): normalize each token, sum the high-frequency
    components per spatial cell (order-invariant), renormalize, add the
    normalized low-pass group, renormalize."""
    n_hf = 3 * levels
    hf = tokens[: n_hf * n_spatial].reshape(n_hf, n_spatial, -1)
    ll = tokens[n_hf * n_spatial :]
    hf_sum = _token_norm(_token_norm(hf).sum(axis=0))
    return _token_norm(_token_norm(ll) + hf_sum)


def extract_features(state: ModelState, x: Raster, layers=None,
                     include_ape: bool = True) -> np.ndarray:
    """Dense feature map (D, f_h, f_w) from an unmasked encoder forward.

    Per selected layer: split tokens into the LL group and the
    high-frequency group, normalize each token along channels, sum the
    high-frequency group over components, renormalize, add the two
    groups, renormalize, reshape onto the token grid; selected layers are
    summed. With include_ape=False positions are not encoded, so a
    constant input yields a spatially constant map.
    """
    config = state.config
    if layers is None:
        layers = encoder_layer_indices(config.encoder.depth)
    if max(layers) > config.encoder.depth:
        raise ValueError(
            f"layer {max(layers)} exceeds encoder depth {config.encoder.depth}"
        )
    s = dwt_multi(x.astype(np.float64), config.levels)
    tokens = embed_components(state, s)
    layout = config.layout()
    positions = np.arange(layout.total)
    table = ape(layout.total, config.encoder.dim)
    if not include_ape:
        table = np.zeros_like(table)
    _, collected = encode(
        state, tokens, positions, table, gpe_vector(state, x.geo),
        collect_layers=True,
    )
    n = layout.n_spatial
    total_map = np.zeros((n, config.encoder.dim))
    for layer in layers:
        total_map += aggregate_layer(collected[layer - 1].data, n, config.levels)
    grid = total_map.reshape(layout.grid_h, layout.grid_w, config.encoder.dim)
    return np.ascontiguousarray(grid.transpose(2, 0, 1))


def _smooth_l1_value(err: np.ndarray, beta: float = SMOOTH_L1_BETA) -> float:
    a = np.abs(err)
    vals = np.where(a < beta, 0.5 * err * err / beta, a - 0.5 * beta)
    return float(vals.mean())


def reconstruction_report(state: ModelState, x: Raster, seed: int,
                          ratio: float = 0.75, override_set=None,
                          out_dir=None, dump: bool = False) -> dict:
    """Masked-region error report: per-component smooth-L1 inside masked
    tubes plus pixel PSNR (peak 1.0) of the reconstruction on masked
    pixels. The pixel reference is the synthesis of the target component
    set, which equals the input up to float rounding and shares the
    prediction's arithmetic path, so passing the ground-truth set as
    override_set gives zero errors and the math.inf PSNR sentinel
    exactly. Deterministic given the seed."""
    from .model import masked_forward

    config = state.config
    cfg = config.patch_config()
    mask = tube_mask(config.layout().n_spatial, ratio, seed)
    target_set = dwt_multi(x.astype(np.float64), config.levels)
    if override_set is not None:
        pred_set = override_set
    else:
        res = masked_forward(state, x, mask)
        pred_set = predicted_set(res.pred_components, config.levels)
    names = target_set.component_names()
    targets = target_set.to_ordered()
    preds = pred_set.to_ordered()
    comp_errors = {}
    for k, (name, tgt, prd) in enumerate(zip(names, targets, preds)):
        level = config.levels if k == 3 * config.levels else k // 3 + 1
        idx = masked_component_indices(mask, cfg, config.channels, level)
        err = np.asarray(prd, dtype=np.float64).reshape(-1)[idx] - np.asarray(
            tgt, dtype=np.float64
        ).reshape(-1)[idx]
        comp_errors[name] = _smooth_l1_value(err)
    xbar = idwt_multi(pred_set).values
    reference = idwt_multi(target_set).values
    pix = masked_pixel_indices(mask, cfg, config.channels)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)[pix]
    mse = float(np.mean((np.asarray(xbar, dtype=np.float64).reshape(-1)[pix] - ref) ** 2))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    report = {
        "seed": seed,
        "ratio": ratio,
        "masked_tubes": len(mask),
        "masked_pixels": int(pix.size),
        "component_smooth_l1": comp_errors,
        "pixel_mse": mse,
        "psnr_db": psnr,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "reconstruction.json").write_text(
            json.dumps(report, sort_keys=True, indent=2)
        )
        if dump:
            from .msr import write_msr

            write_msr(Raster(xbar.astype(np.float32)), out / "reconstruction.msr")
            for name, arr in zip(names, preds):
                write_msr(
                    Raster(np.asarray(arr, dtype=np.float32)),
                    out / f"component_{name}.msr",
                )
    return report
