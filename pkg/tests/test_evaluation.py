import dataclasses
import math

import numpy as np
import pytest

from haarmae.evaluation import (
    CLOSE_KM,
    PairSample,
    TupleSample,
    aggregate_layer,
    encoder_layer_indices,
    extract_features,
    gpe_embeddings_eval,
    gpe_pairs_eval,
    image_embedding,
    margin_permutation_pvalue,
    reconstruction_report,
    sample_pairs,
    sample_tuples,
)
from haarmae.geo import GeoCoord, haversine
from haarmae.model import ModelState, model_config
from haarmae.rasters import Raster
from haarmae.training import SynthSpec, synth_dataset
from haarmae.wavelet.transform import DecompositionSet, dwt_multi


def tiny_state(seed=5):
    cfg = model_config("tiny", channels=2, height=32, width=32, levels=3,
                       sh_degree=7)
    return ModelState.init(cfg, seed=seed)


def tiny_data(count=60, seed=9):
    return synth_dataset(SynthSpec(count=count, channels=2, height=32,
                                   width=32, seed=seed))


def test_sample_pairs_balanced_and_deterministic():
    pairs = sample_pairs(100, seed=3)
    assert len(pairs) == 100
    close = [p for p in pairs if p.bucket == "close"]
    assert len(close) == 50
    for p in close:
        assert p.distance_km < CLOSE_KM
        assert abs(haversine(p.p1, p.p2) - p.distance_km) < 1e-9
    again = sample_pairs(100, seed=3)
    assert all(a.p1 == b.p1 and a.p2 == b.p2 for a, b in zip(pairs, again))


def test_pair_sample_bucket_consistency():
    a, b = GeoCoord(0.0, 0.0), GeoCoord(0.0, 1.0)  # about 111 km apart
    d = haversine(a, b)
    PairSample(a, b, d, "close")
    with pytest.raises(ValueError):
        PairSample(a, b, d, "far")
    with pytest.raises(ValueError):
        PairSample(a, b, d, "near")


def test_pairs_eval_direction_raw():
    pairs = sample_pairs(400, seed=1)
    r = gpe_pairs_eval(None, pairs, projected=False, degree=27)
    assert r["spearman"] < -0.5
    assert r["close_mean"] > r["far_mean"]
    assert r["n_close"] == r["n_far"] == 200


def test_pairs_eval_rotation_invariant_raw():
    """Raw-vector similarities depend only on relative geometry, so a
    global longitude rotation leaves the whole report unchanged (up to
    float noise)."""
    pairs = sample_pairs(60, seed=2)

    def rot(c, delta=73.0):
        return GeoCoord(c.lat, (c.lon + delta + 180.0) % 360.0 - 180.0)

    rotated = [
        PairSample(rot(p.p1), rot(p.p2), p.distance_km, p.bucket)
        for p in pairs
    ]
    a = gpe_pairs_eval(None, pairs, projected=False, degree=12)
    b = gpe_pairs_eval(None, rotated, projected=False, degree=12)
    assert a["spearman"] == b["spearman"]
    assert abs(a["close_mean"] - b["close_mean"]) < 1e-9
    assert abs(a["far_mean"] - b["far_mean"]) < 1e-9


def test_pairs_eval_projected_uses_state():
    state = tiny_state()
    pairs = sample_pairs(50, seed=4)
    r = gpe_pairs_eval(state, pairs, projected=True)
    assert r["n_pairs"] == 50
    with pytest.raises(ValueError):
        gpe_pairs_eval(None, pairs, projected=True)
    with pytest.raises(ValueError):
        gpe_pairs_eval(state, pairs[:1])


def test_tuple_sample_constraints():
    def raster(lat, lon, cat):
        return Raster(np.zeros((1, 8, 8), dtype=np.float32),
                      geo=GeoCoord(lat, lon), category=cat)

    anchor = raster(10.0, 10.0, "water")
    good = TupleSample(
        anchor=anchor,
        positive=raster(10.5, 10.0, "field"),
        easy_positive=raster(9.5, 10.0, "water"),
        negative=raster(40.0, 10.0, "water"),
        easy_negative=raster(40.0, 40.0, "field"),
    )
    assert good.anchor.category == "water"
    with pytest.raises(ValueError):  # positive too far away
        dataclasses.replace(good, positive=raster(50.0, 10.0, "field"))
    with pytest.raises(ValueError):  # positive must differ in category
        dataclasses.replace(good, positive=raster(10.5, 10.0, "water"))
    with pytest.raises(ValueError):  # negative must share the category
        dataclasses.replace(good, negative=raster(40.0, 10.0, "forest"))
    with pytest.raises(ValueError):  # easy negative too close
        dataclasses.replace(good, easy_negative=raster(10.2, 10.0, "field"))
    with pytest.raises(ValueError):  # geo mandatory
        dataclasses.replace(good, negative=Raster(np.zeros((1, 8, 8)),
                                                  category="water"))


def test_sample_tuples_deterministic_and_valid():
    data = tiny_data()
    a = sample_tuples(data, 10, seed=2)
    b = sample_tuples(data, 10, seed=2)
    assert len(a) == 10
    for ta, tb in zip(a, b):
        assert ta.anchor.geo == tb.anchor.geo
        assert np.array_equal(ta.positive.values, tb.positive.values)


def test_sample_tuples_needs_metadata():
    bare = [Raster(np.zeros((1, 8, 8), dtype=np.float32)) for _ in range(10)]
    with pytest.raises(ValueError):
        sample_tuples(bare, 2, seed=0)


def test_sample_tuples_impossible_dataset():
    # All rasters share one category: no close different-category partner.
    data = [
        Raster(np.zeros((1, 8, 8), dtype=np.float32),
               geo=GeoCoord(float(i), 0.0), category="water")
        for i in range(-30, 30, 2)
    ]
    with pytest.raises(ValueError):
        sample_tuples(data, 2, seed=0, max_tries=200)


def test_image_embedding_geo_switch():
    state = tiny_state()
    x = tiny_data(count=1)[0]
    with_geo = image_embedding(state, x, use_geo=True)
    without = image_embedding(state, x, use_geo=False)
    assert with_geo.shape == (state.config.encoder.dim,)
    assert not np.array_equal(with_geo, without)
    stripped = dataclasses.replace(x, geo=None)
    assert np.array_equal(image_embedding(state, stripped, use_geo=True), without)


def test_untrained_margin_null_without_geo():
    """Without geo conditioning an untrained encoder cannot order
    positives against negatives: the sign-flip permutation test must not
    reject a zero margin."""
    state = tiny_state()
    tuples = sample_tuples(tiny_data(), 20, seed=2)
    ev = gpe_embeddings_eval(state, tuples, use_geo=False)
    p = margin_permutation_pvalue(ev["per_tuple"]["p"], ev["per_tuple"]["n"],
                                  seed=0)
    assert p > 0.05
    assert abs(ev["margin"]) < 0.01


def test_untrained_margin_positive_with_geo():
    """Geo conditioning is a proximity prior even at initialization:
    close pairs share similar harmonic vectors, so the margin is already
    positive before any training."""
    state = tiny_state()
    tuples = sample_tuples(tiny_data(), 20, seed=2)
    ev = gpe_embeddings_eval(state, tuples, use_geo=True)
    p = margin_permutation_pvalue(ev["per_tuple"]["p"], ev["per_tuple"]["n"],
                                  seed=0)
    assert ev["margin"] > 0.0
    assert p < 0.05
    assert ev["n_tuples"] == 20
    for key in ("dist_ap", "dist_aep", "dist_an", "dist_aen"):
        assert 0.0 <= ev[key] <= 2.0


def test_encoder_layer_indices():
    assert encoder_layer_indices(12) == [3, 5, 7, 11]
    assert encoder_layer_indices(6) == [1, 2, 3, 5]
    assert encoder_layer_indices(2) == [1]


def test_aggregate_layer_component_permutation_invariant():
    rng = np.random.default_rng(0)
    n, levels, dim = 4, 2, 8
    tokens = rng.normal(size=((3 * levels + 1) * n, dim))
    base = aggregate_layer(tokens, n, levels)
    hf = tokens[: 3 * levels * n].reshape(3 * levels, n, dim)
    perm = rng.permutation(3 * levels)
    shuffled = np.concatenate([hf[perm].reshape(-1, dim),
                               tokens[3 * levels * n :]])
    assert np.allclose(aggregate_layer(shuffled, n, levels), base, atol=1e-12)


def test_extract_features_shape_and_layers():
    state = tiny_state()
    x = tiny_data(count=1)[0]
    fm = extract_features(state, x)
    assert fm.shape == (64, 2, 2)
    with pytest.raises(ValueError):
        extract_features(state, x, layers=[3])  # deeper than the encoder


def test_extract_features_constant_input():
    state = tiny_state()
    const = Raster(np.full((2, 32, 32), 0.25, dtype=np.float32))
    fm = extract_features(state, const, include_ape=False)
    spread = float(np.ptp(fm.reshape(fm.shape[0], -1), axis=1).max())
    assert spread < 1e-9
    with_ape = extract_features(state, const, include_ape=True)
    assert float(np.ptp(with_ape.reshape(64, -1), axis=1).max()) > 1e-6


def test_reconstruction_report_oracle_and_determinism():
    state = tiny_state()
    x = tiny_data(count=1)[0]
    rep = reconstruction_report(state, x, seed=4)
    assert rep == reconstruction_report(state, x, seed=4)
    assert set(rep["component_smooth_l1"]) == {
        "LH1", "HL1", "HH1", "LH2", "HL2", "HH2", "LH3", "HL3", "HH3", "LL3",
    }
    truth = dwt_multi(x.astype(np.float64), 3)
    oracle = reconstruction_report(state, x, seed=4, override_set=truth)
    assert oracle["psnr_db"] == math.inf
    assert all(v == 0.0 for v in oracle["component_smooth_l1"].values())


def test_reconstruction_report_zero_model_closed_form():
    state = tiny_state()
    x = tiny_data(count=1)[0]
    truth = dwt_multi(x.astype(np.float64), 3)
    zeros = DecompositionSet.from_ordered(
        3, [np.zeros_like(np.asarray(a)) for a in truth.to_ordered()])
    rep = reconstruction_report(state, x, seed=4, override_set=zeros)
    # Predicting zeros scores the masked pixels' own mean square.
    from haarmae.model import masked_pixel_indices
    from haarmae.tokenizer import tube_mask
    from haarmae.wavelet.transform import idwt_multi

    cfg = state.config
    mask = tube_mask(cfg.layout().n_spatial, 0.75, 4)
    pix = masked_pixel_indices(mask, cfg.patch_config(), cfg.channels)
    ref = idwt_multi(truth).values.reshape(-1)[pix]
    want = 10.0 * math.log10(1.0 / float(np.mean(ref ** 2)))
    assert abs(rep["psnr_db"] - want) < 1e-9


def test_reconstruction_report_writes_artifacts(tmp_path):
    state = tiny_state()
    x = tiny_data(count=1)[0]
    reconstruction_report(state, x, seed=1, out_dir=tmp_path, dump=True)
    assert (tmp_path / "reconstruction.json").exists()
    assert (tmp_path / "reconstruction.msr").exists()
    assert (tmp_path / "component_LL3.msr").exists()
