import types

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import negdet.autodiff as ad
from negdet.dataengine import DataConfig, synthesize_dataset
from negdet.geometry import BBox, MILD_JITTER, STRONG_JITTER, iou
from negdet.prompts import (
    EncodeError,
    MissingCategoryError,
    POSITIVE,
    NEGATIVE,
    PromptEncoderParams,
    VisualPrompt,
    aggregate_positives,
    build_prompt_bank,
    build_visualg_prompts,
    encode_prompt,
    generate_training_prompts,
    l2norm,
    l2norm_np,
    load_prompt_bank,
    save_prompt_bank,
    select_topk_indices,
    select_topk_negatives,
)


def make_pyramid(rng, channels=4, base=16, strides=(2, 4)):
    levels = [ad.parameter(rng.normal(size=(channels, base // s, base // s)) * 0.5)
              for s in strides]
    return types.SimpleNamespace(levels=levels, strides=list(strides))


def small_params(rng, channels=4, levels=2, dim=8, k=3, grid=2):
    return PromptEncoderParams.init(dim, k, channels, grid=grid, levels=levels, rng=rng)


def test_prompt_polarity_validated():
    with pytest.raises(ValueError):
        VisualPrompt(0, BBox(0, 0, 4, 4), "bogus", 0)


def test_generate_training_prompts_shapes_and_jitter_strength():
    class A:
        def __init__(self, cid, box):
            self.category_id, self.bbox = cid, box

    g = BBox(20, 20, 18, 18)
    anns = [A(3, g), A(5, BBox(2, 2, 10, 10))]
    rng = np.random.default_rng(0)
    ious_p, ious_n = [], []
    for _ in range(300):
        pos, negs = generate_training_prompts(anns, 3, MILD_JITTER, STRONG_JITTER,
                                              3, rng, 64, 64, image_id=9)
        assert pos.polarity == POSITIVE and pos.category_id == 3
        assert pos.source_image_id == 9
        assert len(negs) == 3 and all(n.polarity == NEGATIVE for n in negs)
        ious_p.append(iou(pos.box, g))
        ious_n += [iou(n.box, g) for n in negs]
    assert np.mean(ious_p) > 0.5
    assert np.mean(ious_n) < 0.35
    assert min(ious_p) > np.mean(ious_n)


def test_generate_training_prompts_missing_category():
    with pytest.raises(MissingCategoryError):
        generate_training_prompts([], 0, MILD_JITTER, STRONG_JITTER, 1,
                                  np.random.default_rng(0), 64, 64)


def test_encode_output_shape_and_determinism():
    rng = np.random.default_rng(1)
    pyr = make_pyramid(rng)
    params = small_params(rng)
    p = VisualPrompt(0, BBox(3, 3, 9, 8), POSITIVE, 0)
    e1 = encode_prompt(p, pyr, params).data
    e2 = encode_prompt(p, pyr, params).data
    assert e1.shape == (8,)
    assert np.array_equal(e1, e2)


def test_encode_locality_bit_identical():
    """Zeroing every feature cell whose center is outside the box cannot
    change the embedding."""
    rng = np.random.default_rng(2)
    pyr = make_pyramid(rng)
    params = small_params(rng)
    box = BBox(4, 5, 8, 7)
    p = VisualPrompt(1, box, NEGATIVE, 0)
    before = encode_prompt(p, pyr, params, slot=1).data.copy()
    for level, stride in zip(pyr.levels, pyr.strides):
        _, h, w = level.shape
        cx = (np.arange(w) + 0.5) * stride
        cy = (np.arange(h) + 0.5) * stride
        inside = ((cx[None, :] > box.x) & (cx[None, :] < box.x2)
                  & (cy[:, None] > box.y) & (cy[:, None] < box.y2))
        level.data[:, ~inside] = 0.0
    after = encode_prompt(p, pyr, params, slot=1).data
    assert np.array_equal(before, after)


def test_encode_level_order_permutation():
    """Attention pools a set of samples: permuting the pyramid level order
    permutes the sample sequence and must not move the embedding."""
    rng = np.random.default_rng(3)
    pyr = make_pyramid(rng, strides=(2, 4))
    params = small_params(rng)
    p = VisualPrompt(0, BBox(2, 2, 11, 10), POSITIVE, 0)
    fwd = encode_prompt(p, pyr, params).data
    rev = types.SimpleNamespace(levels=pyr.levels[::-1], strides=pyr.strides[::-1])
    bwd = encode_prompt(p, rev, params).data
    np.testing.assert_allclose(fwd, bwd, atol=1e-12)


def test_encode_distinct_negative_slots_differ():
    rng = np.random.default_rng(4)
    pyr = make_pyramid(rng)
    params = small_params(rng)
    p = VisualPrompt(0, BBox(2, 2, 10, 10), NEGATIVE, 0)
    e0 = encode_prompt(p, pyr, params, slot=0).data
    e1 = encode_prompt(p, pyr, params, slot=2).data
    assert not np.allclose(e0, e1)


def test_encode_degenerate_box_raises():
    rng = np.random.default_rng(5)
    pyr = make_pyramid(rng)
    params = small_params(rng)
    # half-pixel box captures no cell center at either stride
    p = VisualPrompt(0, BBox(3.1, 3.1, 0.5, 0.5), POSITIVE, 0)
    with pytest.raises(EncodeError):
        encode_prompt(p, pyr, params)


def test_encode_wrong_level_count():
    rng = np.random.default_rng(6)
    pyr = make_pyramid(rng, strides=(2,))
    params = small_params(rng, levels=2)
    with pytest.raises(EncodeError):
        encode_prompt(VisualPrompt(0, BBox(2, 2, 8, 8), POSITIVE, 0), pyr, params)


def test_encoder_gradients_against_finite_differences():
    rng = np.random.default_rng(7)
    pyr = make_pyramid(rng, channels=3, base=8, strides=(2, 4))
    params = small_params(rng, channels=3, dim=6, grid=2)
    prompt = VisualPrompt(0, BBox(1.5, 1.5, 5.5, 5.0), POSITIVE, 0)
    probe = ad.parameter(rng.normal(size=6))
    all_params = dict(params.tensors, probe=probe,
                      fmap0=pyr.levels[0], fmap1=pyr.levels[1])

    def f(ps):
        pyr2 = types.SimpleNamespace(levels=[ps["fmap0"], ps["fmap1"]], strides=pyr.strides)
        pr = PromptEncoderParams(params.dim, params.k_negatives, params.grid,
                                 params.levels, {k: ps[k] for k in params.tensors})
        emb = l2norm(encode_prompt(prompt, pyr2, pr).reshape(1, -1))
        return (emb.reshape(-1) * ps["probe"]).sum()

    report = ad.grad_check(f, all_params, eps=1e-5, tol=1e-3, max_coords=8,
                           rng=np.random.default_rng(0))
    assert report["passed"], report


def test_aggregate_positives_mean_then_renorm():
    rng = np.random.default_rng(8)
    vecs = {4: [rng.normal(size=5) for _ in range(3)], 2: [rng.normal(size=5)]}
    mat, order = aggregate_positives(vecs)
    assert order == [2, 4]
    np.testing.assert_allclose(np.linalg.norm(mat, axis=1), 1.0, atol=1e-9)
    expect = np.mean(np.stack(vecs[4]), axis=0)
    np.testing.assert_allclose(mat[1], expect / np.linalg.norm(expect), atol=1e-12)
    with pytest.raises(MissingCategoryError):
        aggregate_positives({0: []})


def test_topk_exact_small_case():
    cands = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.6], [-1.0, 0.0]])
    anchor = np.array([1.0, 0.0])
    out = select_topk_negatives(cands, anchor, 2)
    np.testing.assert_array_equal(out, cands[[0, 2]])


def test_topk_tie_prefers_lower_index():
    cands = np.array([[0.5, 0.0], [0.5, 0.0], [0.5, 0.0]])
    idx = select_topk_indices(cands, np.array([1.0, 0.0]), 2)
    np.testing.assert_array_equal(idx, [0, 1])


def test_topk_all_candidates_restores_order():
    rng = np.random.default_rng(9)
    cands = rng.normal(size=(5, 3))
    out = select_topk_negatives(cands, rng.normal(size=3), 5)
    np.testing.assert_array_equal(out, cands)


def test_topk_too_few_candidates():
    with pytest.raises(ValueError):
        select_topk_negatives(np.zeros((2, 3)), np.zeros(3), 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_topk_dominates_unselected(seed, k):
    rng = np.random.default_rng(seed)
    n = k + int(rng.integers(0, 5))
    cands = rng.normal(size=(n, 4))
    anchor = rng.normal(size=4)
    chosen = set(select_topk_indices(cands, anchor, k).tolist())
    sims = cands @ anchor
    worst_in = min(sims[i] for i in chosen)
    for i in range(n):
        if i not in chosen:
            assert sims[i] <= worst_in + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_l2norm_unit_length(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(3, 6)) * 10
    out = l2norm_np(v)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)


@pytest.fixture(scope="module")
def bank_setup():
    manifest = synthesize_dataset(DataConfig(num_scenes=12, num_categories=4,
                                             num_confusable_pairs=1, seed=11))
    rng = np.random.default_rng(0)
    params = PromptEncoderParams.init(8, 3, 3, grid=2, levels=2, rng=rng)

    def encode_image(scene):
        h = np.asarray(scene.pixels, dtype=np.float64)
        lv0 = ad.tensor(h[:, ::2, ::2])
        lv1 = ad.tensor(h[:, ::4, ::4])
        return types.SimpleNamespace(levels=[lv0, lv1], strides=[2, 4])

    return manifest, params, encode_image


def test_visualg_deterministic_and_normalized(bank_setup):
    manifest, params, enc = bank_setup
    p1, n1 = build_visualg_prompts(manifest, 0, 5, 3, np.random.default_rng(4), enc, params)
    p2, n2 = build_visualg_prompts(manifest, 0, 5, 3, np.random.default_rng(4), enc, params)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(n1, n2)
    assert n1.shape == (3, 8)
    assert np.linalg.norm(p1) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(np.linalg.norm(n1, axis=1), 1.0, atol=1e-9)


def test_visualg_missing_category(bank_setup):
    manifest, params, enc = bank_setup
    with pytest.raises(MissingCategoryError):
        build_visualg_prompts(manifest, 99, 4, 2, np.random.default_rng(0), enc, params)


def test_prompt_bank_round_trip(tmp_path, bank_setup):
    manifest, params, enc = bank_setup
    bank = build_prompt_bank(manifest, enc, params, n_images=4, k=2,
                             rng=np.random.default_rng(1))
    path = save_prompt_bank(bank, tmp_path / "bank.json")
    back = load_prompt_bank(path)
    assert back.categories == bank.categories
    assert back.dim == bank.dim and back.k_negatives == bank.k_negatives
    np.testing.assert_allclose(back.positives, bank.positives, atol=1e-12)
    np.testing.assert_allclose(back.negatives, bank.negatives, atol=1e-12)
    assert back.row(bank.categories[-1]) == len(bank.categories) - 1


def test_prompt_bank_version_guard(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format_version": 99}')
    with pytest.raises(ValueError):
        load_prompt_bank(p)
