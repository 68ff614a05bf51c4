import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsanav.errors import ConfigError, ShapeError
from lsanav.gradcheck import check_slot_attention, toy_observation
from lsanav.agent import ModelConfig
from lsanav.layers import LayerNorm
from lsanav.masks import ABLATION_SHAPES, MaskShape
from lsanav.slot_attention import (
    SlotAttnConfig, drop_feat, partial_layer_norm, slot_attention_forward, visible_views,
)
from lsanav.tensor import RngStream

from conftest import randomized_block
from oracles import ln_row, slot_attention_oracle

cells = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 11)), min_size=1, max_size=4)


def setup(cfg, seed=0, cells=((1, 0), (0, 11)), shape="3x3"):
    block = randomized_block(cfg, seed)
    obs = toy_observation(cfg.d_image, cfg.d_angle, seed, cells)
    mask = obs.mask(MaskShape.parse(shape), True)
    return block, obs.features, obs.grid_matrix, mask


# -- component ops ----------------------------------------------------------

def test_drop_feat_eval_identity_and_angle_immunity():
    x = RngStream(0).normal((5, 12))
    assert drop_feat(x, 8, 0.7, None, False)[0] is x
    y, _ = drop_feat(x, 8, 0.999999, RngStream(1), True)
    assert np.count_nonzero(y[:, :8]) <= 1
    assert np.array_equal(y[:, 8:], x[:, 8:])


def test_drop_feat_statistics():
    x = np.ones((2500, 8))
    y, _ = drop_feat(x, 4, 0.5, RngStream(2), True)
    img = y[:, :4]
    assert abs(np.count_nonzero(img) / img.size - 0.5) <= 0.02
    assert set(np.unique(img)) == {0.0, 2.0}
    assert np.all(y[:, 4:] == 1.0)


def test_drop_feat_width_check():
    with pytest.raises(ShapeError):
        drop_feat(np.ones((2, 4)), 4, 0.5, None, False)


def test_partial_layer_norm_examples():
    ln = LayerNorm(3)
    x = np.array([[2.0, 2.0, 2.0, 0.7, -0.1]])
    y, _ = partial_layer_norm(x, 3, ln)
    assert np.all(y[0, :3] == 0.0)
    assert np.array_equal(y[0, 3:], x[0, 3:])
    ln2 = LayerNorm(2, eps=0.0)
    y, _ = partial_layer_norm(np.array([[1.0, 3.0, 5.0]]), 2, ln2)
    np.testing.assert_allclose(y[0, :2], [-1.0, 1.0], atol=1e-15)
    assert y[0, 2] == 5.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
def test_partial_layer_norm_angle_bit_identity(angle):
    x = np.concatenate([RngStream(0).normal((1, 4)), [angle]], axis=1)
    y, _ = partial_layer_norm(x, 4, LayerNorm(4))
    assert np.array_equal(y[0, 4:], x[0, 4:])


# -- forward contracts ------------------------------------------------------

def test_zero_iterations_is_identity(toy_cfg):
    cfg = dataclasses.replace(toy_cfg, iterations=0)
    block, feats, grid, mask = setup(cfg)
    out, trace, cache = block.forward(feats, grid, mask.allowed, RngStream(0), training=True)
    assert np.array_equal(out, feats)
    assert trace.iterations == 0 and cache is None


def test_single_visible_view_update():
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=1)
    block, feats, grid, _ = setup(cfg, seed=5)
    d = cfg.d_image
    block.gru.params["b_ih"].value[d:2 * d] = -50.0  # update gate shut, z ~ 0
    for p in block.mlp.param_dict().values():
        p.value[...] = 0.0
    n = 14
    mask = np.zeros((36, 3), dtype=bool)
    mask[:, 0] = True
    mask[n, 0] = False  # slot 1 is the only slot competing for view n
    mask[n, 1] = True
    _, trace, _ = block.forward(feats, grid, mask, None, False)
    P = block.param_dict()
    normed = ln_row(grid[n, :d].tolist(), P["norm_input.gain"].value, P["norm_input.bias"].value)
    expected = np.array(normed) @ P["v.weight"].value + P["v.bias"].value
    assert trace.attn[0][n, 1] == 1.0
    np.testing.assert_allclose(trace.updates[0][1], expected, atol=1e-12)
    # a slot that sees nothing receives no update
    assert np.all(trace.updates[0][2] == 0.0)


@settings(max_examples=25, deadline=None)
@given(cells, st.integers(0, 4), st.booleans(), st.booleans(), st.integers(0, 1000),
       st.sampled_from(ABLATION_SHAPES))
def test_frozen_angles(cells_, iters, literal, training, seed, shape):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=iters, literal_alg1=literal)
    block, feats, grid, mask = setup(cfg, seed, tuple(cells_), shape.label)
    out, _, _ = block.forward(feats, grid, mask.allowed, RngStream(seed), training)
    assert np.array_equal(out[:, 8:], feats[:, 8:])


@settings(max_examples=20, deadline=None)
@given(cells, st.integers(0, 1000), st.sampled_from(ABLATION_SHAPES), st.booleans())
def test_competition_rows_sum_to_one(cells_, seed, shape, include_stop):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=3)
    block = randomized_block(cfg, seed)
    obs = toy_observation(8, 4, seed, tuple(cells_))
    mask = obs.mask(shape, include_stop)
    _, trace = slot_attention_forward(obs.grid, obs.candidates, mask, block, RngStream(seed), True)
    assert trace.iterations == 3
    for attn in trace.attn:
        assert attn.shape == (36, mask.n_slots)
        live = mask.allowed.any(axis=1)
        np.testing.assert_allclose(attn[live].sum(axis=1), 1.0, atol=1e-9)
        assert np.all(attn[~mask.allowed] == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.booleans())
def test_masked_view_insensitivity(seed, literal):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=3, literal_alg1=literal)
    block, feats, grid, _ = setup(cfg, seed, cells=((1, 0), (1, 3)), shape="1x3")
    # no stop slot here: the two window slots leave most of the grid unseen
    mask = np.zeros((36, 2), dtype=bool)
    mask[[11, 12, 13], 0] = True
    mask[[14, 15, 16], 1] = True
    feats = feats[1:]
    base, _, _ = block.forward(feats, grid, mask, None, False)
    hidden = np.flatnonzero(~mask.any(axis=1))
    grid2 = grid.copy()
    grid2[hidden] += RngStream(seed + 1).normal((hidden.size, grid.shape[1])) * 10
    out, _, _ = block.forward(feats, grid2, mask, None, False)
    assert np.array_equal(out, base)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(4)), st.integers(0, 1000), st.booleans())
def test_slot_permutation_equivariance(perm, seed, literal):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=3, literal_alg1=literal)
    block, feats, grid, mask = setup(cfg, seed, cells=((1, 0), (0, 11), (2, 5)))
    perm = list(perm)
    out, _, _ = block.forward(feats, grid, mask.allowed, None, False)
    out_p, _, _ = block.forward(feats[perm], grid, mask.allowed[:, perm], None, False)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


@pytest.mark.parametrize("literal", [False, True])
def test_unmasked_matches_brute_force(literal):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=3, literal_alg1=literal)
    block, feats, grid, _ = setup(cfg, seed=9)
    out, _, _ = block.forward(feats, grid, None, None, False)
    ref = slot_attention_oracle(block, feats, grid, None, 3, literal)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("literal", [False, True])
@pytest.mark.parametrize("shape", ["3x3", "1x5", "none"])
def test_forward_matches_straight_line_oracle(literal, shape):
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=3, literal_alg1=literal)
    block, feats, grid, mask = setup(cfg, seed=11, shape=shape)
    out, _, _ = block.forward(feats, grid, mask.allowed, None, False)
    ref = slot_attention_oracle(block, feats, grid, mask.allowed, 3, literal)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)


def test_variants_differ():
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=2)
    block, feats, grid, mask = setup(cfg, seed=1)
    a, _, _ = block.forward(feats, grid, mask.allowed, None, False)
    block.cfg = dataclasses.replace(cfg, literal_alg1=True)
    b, _, _ = block.forward(feats, grid, mask.allowed, None, False)
    assert not np.allclose(a, b)


def test_dropout_is_seeded():
    cfg = SlotAttnConfig(d_image=8, d_angle=4)
    block, feats, grid, mask = setup(cfg, seed=2)
    a, _, _ = block.forward(feats, grid, mask.allowed, RngStream(5), True)
    b, _, _ = block.forward(feats, grid, mask.allowed, RngStream(5), True)
    c, _, _ = block.forward(feats, grid, mask.allowed, RngStream(6), True)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_display_renormalisation():
    cfg = SlotAttnConfig(d_image=8, d_angle=4)
    block, feats, grid, mask = setup(cfg, seed=4)
    _, trace, _ = block.forward(feats, grid, mask.allowed, None, False)
    for it in range(trace.iterations):
        for k in range(1, mask.n_slots):
            w = trace.window_weights(it, k, mask.allowed)
            assert np.count_nonzero(w) <= 9
            assert abs(w.sum() - 1.0) <= 1e-9
            # the model's own weights need not sum to one over a window
            assert len(visible_views(mask, k)) == np.count_nonzero(mask.allowed[:, k])


def test_trace_records_and_csv():
    cfg = SlotAttnConfig(d_image=8, d_angle=4, iterations=2)
    block, feats, grid, mask = setup(cfg, seed=4)
    _, trace = slot_attention_forward(*toy_observation(8, 4, 4), mask, block)
    recs = trace.records()
    assert len(recs) == 2 * 3 * 36
    assert recs[0][:4] == (0, 0, 0, 0)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "iteration,slot,view_row,view_col,weight"
    assert len(lines) == len(recs) + 1
    doc = trace.to_doc()
    assert doc["slots"] == [0, 1, 2] and len(doc["records"]) == len(recs)


def test_excluded_stop_passes_through():
    cfg = SlotAttnConfig(d_image=8, d_angle=4)
    block = randomized_block(cfg, 0)
    obs = toy_observation(8, 4, 0)
    mask = obs.mask(MaskShape(3, 3), include_stop=False)
    out, trace = slot_attention_forward(obs.grid, obs.candidates, mask, block)
    assert np.array_equal(out[0], obs.features[0])
    assert not np.array_equal(out[1], obs.features[1])
    assert trace.slots == (1, 2)


def test_shape_errors(toy_cfg):
    block, feats, grid, mask = setup(toy_cfg)
    with pytest.raises(ShapeError):
        block.forward(feats, grid, mask.allowed[:, :2])
    with pytest.raises(ShapeError):
        block.forward(feats[:, :10], grid, mask.allowed)
    with pytest.raises(ShapeError):
        block.forward(feats, grid[:30], mask.allowed)
    with pytest.raises(ConfigError):
        SlotAttnConfig(iterations=-1)


@pytest.mark.parametrize("literal", [False, True])
def test_gradients(literal):
    cfg = ModelConfig(d_image=8, d_angle=4, d_hidden=8, literal_alg1=literal)
    assert check_slot_attention(cfg, seed=1).passed(1e-4)
