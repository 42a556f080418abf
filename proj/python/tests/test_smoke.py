import json

import numpy as np
import pytest

import earsr


def test_defaults_match_published_settings():
    cfg = json.loads(earsr.default_config())
    assert cfg["training"]["lambda_rec"] == 10
    assert cfg["training"]["lambda_adv"] == 1
    assert cfg["training"]["batch_size"] == 5
    assert cfg["patch"]["size"] == 256
    assert cfg["patch"]["stride"] == 128
    assert cfg["inference"]["mc_passes"] == 100


def test_hu_distance_is_zero_for_identical_images_and_translation_invariant():
    rng = np.random.default_rng(0)
    img = np.zeros((64, 64))
    img[20:40, 10:30] = rng.uniform(0.5, 1.0, (20, 20))
    shifted = np.roll(img, (5, 7), axis=(0, 1))
    assert earsr.hum_distance(img, img) == 0.0
    assert earsr.hum_distance(img, shifted) < 1e-9
    report = earsr.m_hum([img, shifted], [img])
    assert report["m_hum"] == 0.0


def test_rank_sum_separated_groups():
    r = earsr.wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    assert r["exact"]
    assert r["p_two_sided"] == pytest.approx(0.1, abs=1e-12)


def test_histogram_match_and_patch_round_trip():
    rng = np.random.default_rng(1)
    src = rng.uniform(size=(32, 32))
    ref = rng.normal(0.5, 0.1, (32, 32)).clip(0, 1)
    out = earsr.histogram_match(src, ref)
    assert earsr.cdf_gap(out, ref) <= 2 / 256
    assert np.array_equal(np.argsort(out, axis=None, kind="stable"), np.argsort(src, axis=None, kind="stable"))

    img = rng.uniform(size=(48, 48))
    patches, origins = earsr.extract_patches(img, 16, 16)
    assert len(patches) == 9 and origins[4] == (16, 16)
    back = earsr.reconstruct_slice(patches, [], 48, 48, 16, 16, post=False)
    assert np.array_equal(back, img)


def test_mc_dropout_statistics():
    g = earsr.Generator(base_width=4, res_blocks=1, dropout_rate=0.5, seed=3)
    x = np.random.default_rng(2).uniform(size=(16, 16))
    mean, var = g.mc_infer(x, passes=8, seed=5)
    mean2, var2 = g.mc_infer(x, passes=8, seed=5, jobs=2)
    assert np.array_equal(mean, mean2) and np.array_equal(var, var2)
    assert var.min() >= 0 and var.max() > 0
    assert mean.shape == x.shape
    quiet = earsr.Generator(base_width=4, res_blocks=1, dropout_rate=0.0, seed=3)
    m0, v0 = quiet.mc_infer(x, passes=4)
    assert v0.max() == 0.0
    assert np.allclose(m0, quiet.forward(x), atol=1e-12)
    m, v = earsr.summarize_passes([np.full((2, 2), 0.2), np.full((2, 2), 0.4)])
    assert np.allclose(m, 0.3) and np.allclose(v, 0.01)


def test_phantom_pair_and_errors():
    hr, lr = earsr.generate_phantom_pair(json.dumps({"canvas": 64, "lr_factor": 4, "seed": 2}))
    assert hr.shape == lr.shape == (64, 64)
    assert 0.0 <= lr.min() and lr.max() <= 1.0
    with pytest.raises(RuntimeError, match="BadSpec"):
        earsr.generate_phantom_pair(json.dumps({"canvas": 64, "colour": 1}))
