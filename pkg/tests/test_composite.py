import numpy as np
import pytest

from rforge.composite import (REGIMES, CandidateIndex, CorpusLayers, DatasetManifest,
                              descriptor_of, find_source_candidates, generate_dataset, make_composite,
                              mask_descriptor, propose_regions, shape_ssd)
from rforge.imgcore import read_image
from rforge.scenegen import ObjectRecord, read_index, render_scene, sample_scene_spec


def blob(h, w, y0, x0, hh, ww):
    m = np.zeros((h, w))
    m[y0:y0 + hh, x0:x0 + ww] = 1
    return m


def random_records(seed, n, category=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        hh, ww = rng.integers(4, 20, 2)
        m = blob(24, 24, rng.integers(0, 24 - hh), rng.integers(0, 24 - ww), hh, ww)
        out.append(ObjectRecord.from_mask(f"img{i % 5}", i, m, category))
    return out


# ---------------------------------------------------------------- descriptors

def test_descriptor_is_64x64():
    assert mask_descriptor(blob(30, 40, 3, 5, 7, 20)).shape == (64, 64)


def test_descriptor_of_square_is_one_inside():
    d = mask_descriptor(blob(40, 40, 5, 5, 30, 30))
    assert np.all(d[16:48, 16:48] > 0.999)
    assert d[0, 0] < 0.5


def test_descriptor_translation_invariant():
    a = mask_descriptor(blob(50, 50, 2, 3, 17, 11))
    b = mask_descriptor(blob(50, 50, 30, 31, 17, 11))
    assert np.array_equal(a, b)


def test_descriptor_empty_mask_rejected():
    with pytest.raises(ValueError):
        mask_descriptor(np.zeros((5, 5)))


def test_ssd_values():
    rng = np.random.default_rng(0)
    a, b = rng.random((64, 64)), rng.random((64, 64))
    assert shape_ssd(a, a) == 0.0
    assert shape_ssd(np.ones((64, 64)), np.zeros((64, 64))) == 4096.0
    total = 0.0
    for i in range(64):
        for j in range(64):
            total += (a[i, j] - b[i, j]) ** 2
    assert shape_ssd(a, b) == pytest.approx(total, rel=1e-12)


# ---------------------------------------------------------------- candidates

def test_self_pool_is_empty():
    t = random_records(1, 1)[0]
    assert find_source_candidates(t, [t], 5) == []


def test_k_larger_than_pool_returns_all_eligible():
    recs = random_records(2, 10)
    t = recs[0]
    got = find_source_candidates(t, recs, 100)
    assert len(got) == sum(r.image_id != t.image_id for r in recs)


@pytest.mark.parametrize("seed", range(10))
def test_top1_is_brute_force_argmin(seed):
    recs = random_records(seed, 25)
    t = recs[0]
    eligible = [r for r in recs if r.image_id != t.image_id]
    best = min(eligible, key=lambda r: (shape_ssd(descriptor_of(t), descriptor_of(r)), r.image_id, r.index))
    assert find_source_candidates(t, recs, 3)[0] is best
    assert CandidateIndex(recs).query(t, 3) == find_source_candidates(t, recs, 3)


def test_category_filter():
    a = random_records(3, 6, "ellipse")
    b = random_records(4, 6, "triangle")
    got = find_source_candidates(a[0], a + b, 20)
    assert got and all(r.category == "ellipse" for r in got)


# ---------------------------------------------------------------- composites

def test_self_replacement_is_identity():
    scene = render_scene(sample_scene_spec(3, ["ellipse", "hexagon"]))
    for t in scene.instances:
        out = make_composite(scene, t, scene, t, feather_band=1.0)
        assert np.array_equal(out, scene.image)


def test_composite_keeps_source_cast():
    a = render_scene(sample_scene_spec(21, ["ellipse"]))
    b = render_scene(sample_scene_spec(21, ["ellipse"]))
    from dataclasses import replace
    from rforge.scenegen import Cast
    spec = a.spec
    warm = render_scene(replace(spec, cast=Cast((1.3, 1.0, 0.7), (0.05, 0.0, -0.05))))
    cool = render_scene(replace(spec, cast=Cast((0.7, 1.0, 1.3), (-0.05, 0.0, 0.05))))
    t = cool.instances[0]
    out = make_composite(cool, t, warm, warm.instances[0], feather_band=1.0)
    inside = t.mask > 0
    got = out[inside].mean(axis=0)
    assert np.allclose(got, warm.image[inside].mean(axis=0))
    assert np.abs(got - cool.image[inside].mean(axis=0)).max() > 0.05
    assert out.shape == b.image.shape


# ---------------------------------------------------------------- proposals

def test_proposals_pass_area_filter_and_are_connected():
    from scipy import ndimage
    for seed in range(4):
        scene = render_scene(sample_scene_spec(seed, ["pentagon", "diamond"]))
        props = propose_regions(scene.image, seed)
        for m in props:
            assert 0.05 <= m.mean() <= 0.5
            assert ndimage.label(m)[1] == 1
        assert all(np.array_equal(a, b) for a, b in zip(props, propose_regions(scene.image, seed)))


def test_flat_image_has_no_proposals():
    assert propose_regions(np.full((32, 32, 3), 0.5)) == []


# ---------------------------------------------------------------- datasets

def test_unknown_regime(small_corpus, tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(small_corpus, "Bogus", 0, tmp_path)


@pytest.mark.parametrize("regime", REGIMES)
def test_manifest_counts_match_recount(small_corpus, tmp_path, regime):
    man = generate_dataset(small_corpus, regime, 4, tmp_path / regime)
    rows = read_index(small_corpus)
    counts = man.counts()
    assert set(r["label"] for r in man.records) <= {"natural", "composite"}
    assert counts["natural"] == len(rows)
    if regime in ("FullySupervised", "RandomPaste"):
        # one composite per annotated instance (every category recurs across scenes)
        assert counts["composite"] == sum(len(r["instances"]) for r in rows)
    for rec in man.records:
        assert (tmp_path / regime / rec["path"]).exists()


def test_manifest_bytes_reproducible(small_corpus, tmp_path):
    generate_dataset(small_corpus, "PartiallySupervised", 9, tmp_path / "a")
    generate_dataset(small_corpus, "PartiallySupervised", 9, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_layers_rebuild_composites(small_corpus, tmp_path):
    man = generate_dataset(small_corpus, "FullySupervised", 1, tmp_path)
    man = DatasetManifest.read(tmp_path / "manifest.jsonl")
    layers = CorpusLayers(man)
    for rec in [r for r in man.records if r["label"] == "composite"][:5]:
        fg, bg, alpha = layers.layers(rec)
        rebuilt = np.clip(alpha[..., None] * fg + (1 - alpha[..., None]) * bg, 0, 1)
        assert np.abs(rebuilt - read_image(tmp_path / rec["path"])).max() <= 0.5 / 255 + 1e-9


def test_split_by_scene_is_disjoint(small_corpus, tmp_path):
    man = generate_dataset(small_corpus, "FullySupervised", 2, tmp_path)
    a, b = man.split_by_scene(0.25, 0)
    sa = {r["target"]["scene"] for r in a.records}
    sb = {r["target"]["scene"] for r in b.records}
    assert not sa & sb and len(a.records) + len(b.records) == len(man.records)
