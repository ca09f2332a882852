import numpy as np
import pytest

from negdet.dataengine import (
    Annotation,
    BatchConstructionError,
    DataConfig,
    DatasetManifest,
    Scene,
    build_category_index,
    construct_batch,
    default_confusable_pairs,
    frequency_buckets,
    link_category,
    load_dataset,
    save_dataset,
    shared_categories,
    synthesize_dataset,
)
from negdet.geometry import BBox


@pytest.fixture(scope="module")
def small_dataset():
    return synthesize_dataset(DataConfig(num_scenes=40, num_categories=10,
                                         num_confusable_pairs=2, seed=3))


def test_degenerate_single_category_corpus():
    m = synthesize_dataset(DataConfig(num_scenes=1, num_categories=1,
                                      num_confusable_pairs=0, seed=0, render=False))
    assert len(m.scenes) == 1
    buckets = frequency_buckets(m, {"rare_max": 0, "common_max": 1})
    assert set(buckets.values()) <= {"rare", "common", "frequent"}
    # only category ends up frequent with default thresholds on enough scenes
    m2 = synthesize_dataset(DataConfig(num_scenes=30, num_categories=1,
                                       num_confusable_pairs=0, seed=0, render=False))
    assert frequency_buckets(m2, {"rare_max": 10, "common_max": 100})[0] == "frequent"


def test_zipf_zero_near_uniform():
    m = synthesize_dataset(DataConfig(num_scenes=200, num_categories=20,
                                      zipf_exponent=0.0, seed=1, render=False))
    counts = np.zeros(20)
    for s in m.scenes:
        for a in s.annotations:
            counts[a.category_id] += 1
    assert counts.max() / counts.min() < 2


def test_zipf_slope_matches_exponent():
    exp = 1.2
    m = synthesize_dataset(DataConfig(num_scenes=400, num_categories=64,
                                      zipf_exponent=exp, seed=2, render=False,
                                      num_confusable_pairs=4))
    counts = np.zeros(64)
    for s in m.scenes:
        for a in s.annotations:
            counts[a.category_id] += 1
    # coverage injection adds 1 to missing cats; drop zero-ish tail noise
    ranks = np.arange(1, 65)
    keep = counts > 2
    slope = np.polyfit(np.log(ranks[keep]), np.log(counts[keep]), 1)[0]
    assert slope == pytest.approx(-exp, abs=0.2)


def test_determinism_byte_identical(tmp_path):
    cfg = DataConfig(num_scenes=6, num_categories=6, num_confusable_pairs=1, seed=7)
    d1 = save_dataset(synthesize_dataset(cfg), tmp_path / "a")
    d2 = save_dataset(synthesize_dataset(cfg), tmp_path / "b")
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
    for f in sorted((d1 / "scenes").iterdir()):
        assert f.read_bytes() == (d2 / "scenes" / f.name).read_bytes()


def test_pixels_in_range_and_every_category_present(small_dataset):
    m = small_dataset
    for s in m.scenes:
        assert s.pixels.shape == (3, 64, 64)
        assert s.pixels.min() >= 0 and s.pixels.max() <= 1
        assert len(s.annotations) >= 1
    present = {a.category_id for s in m.scenes for a in s.annotations}
    assert present == set(range(10))


def test_split_partition_and_val_coverage(small_dataset):
    m = small_dataset
    assert set(m.train_ids) | set(m.val_ids) == {s.image_id for s in m.scenes}
    assert not set(m.train_ids) & set(m.val_ids)
    val_cats = {a.category_id for i in m.val_ids for a in m.scene(i).annotations}
    assert val_cats == set(range(10))


def test_confusable_pairs_share_family(small_dataset):
    cats = small_dataset.category_by_id
    pairs = default_confusable_pairs(10, 2)
    for a, b in pairs:
        assert cats[a].family == cats[b].family
        assert cats[a].confusable_with == b and cats[b].confusable_with == a
        assert np.abs(np.array(cats[a].color) - np.array(cats[b].color)).max() <= 0.1


def test_category_index_strict_threshold():
    scenes = [
        Scene(0, 64, 64, None, [Annotation(i, 0, BBox(i * 2, 1, 1.5, 1.5)) for i in range(4)]),
        Scene(1, 64, 64, None, [Annotation(10 + i, 0, BBox(i * 2, 1, 1.5, 1.5)) for i in range(3)]),
    ]
    cfg = DataConfig(num_scenes=2, num_categories=1, num_confusable_pairs=0, render=False)
    from negdet.dataengine import Category
    m = DatasetManifest(cfg, scenes, [Category(0, "c0", "rectangle", (1, 0, 0), 2, 0)],
                        train_ids=[0, 1], val_ids=[])
    idx = build_category_index(m)
    assert idx == {0: [0]}  # 4 instances listed, 3 excluded


def test_category_index_manual_enumeration(small_dataset):
    idx = build_category_index(small_dataset)
    for cid, imgs in idx.items():
        for i in imgs:
            assert small_dataset.scene(i).category_counts()[cid] > 3
    for s in small_dataset.scenes:
        if s.image_id not in set(small_dataset.train_ids):
            continue
        for cid, n in s.category_counts().items():
            if n > 3:
                assert s.image_id in idx[cid]


def test_link_category_rules():
    s = Scene(0, 64, 64, None,
              [Annotation(i, 1, BBox(i * 3, 0, 2, 2)) for i in range(5)]
              + [Annotation(10 + i, 2, BBox(i * 3, 10, 2, 2)) for i in range(3)])
    assert link_category(s) == 2  # second-most-frequent
    single = Scene(1, 64, 64, None, [Annotation(0, 5, BBox(0, 0, 2, 2))])
    assert link_category(single) == 5


def test_batches_always_share_a_category(small_dataset):
    idx = build_category_index(small_dataset)
    rng = np.random.default_rng(0)
    for _ in range(500):
        batch = construct_batch(small_dataset, idx, 4, rng)
        assert len(batch) == 4
        assert shared_categories(small_dataset, batch)


def test_batch_errors():
    m = synthesize_dataset(DataConfig(num_scenes=4, num_categories=3,
                                      num_confusable_pairs=0, seed=5, render=False))
    with pytest.raises(ValueError):
        construct_batch(m, {0: [0]}, 1, np.random.default_rng(0))
    with pytest.raises(BatchConstructionError):
        construct_batch(m, {}, 2, np.random.default_rng(0))


def test_frequency_bucket_definitions(small_dataset):
    buckets = frequency_buckets(small_dataset, {"rare_max": 10, "common_max": 100})
    counts = {c.id: 0 for c in small_dataset.categories}
    train = set(small_dataset.train_ids)
    for s in small_dataset.scenes:
        if s.image_id in train:
            for a in s.annotations:
                counts[a.category_id] += 1
    for cid, n in counts.items():
        expect = "rare" if n <= 10 else ("common" if n <= 100 else "frequent")
        assert buckets[cid] == expect
    with pytest.raises(ValueError):
        frequency_buckets(small_dataset, {"rare_max": 5, "common_max": 5})


def test_round_trip_persistence(tmp_path, small_dataset):
    out = save_dataset(small_dataset, tmp_path / "ds")
    back = load_dataset(out)
    assert back.train_ids == small_dataset.train_ids
    assert back.val_ids == small_dataset.val_ids
    assert len(back.scenes) == len(small_dataset.scenes)
    s0, b0 = small_dataset.scenes[0], back.scenes[0]
    assert [a.category_id for a in s0.annotations] == [a.category_id for a in b0.annotations]
    np.testing.assert_allclose(b0.pixels, s0.pixels, atol=1e-6)  # float32 storage
    assert {c.id: c.bucket for c in back.categories} == {
        c.id: c.bucket for c in small_dataset.categories
    }
