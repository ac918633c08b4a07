import math

import numpy as np
import pytest

import oracles
from inavit.attention import AttentionParams
from inavit.errors import ConfigError, NoValidKeysError
from inavit.interaction import (
    InteractionParams,
    InteractionTokens,
    InteractionModeler,
    model_interactions,
    sca,
    sot,
    ub,
    union_box,
)
from inavit.roi import BoundingBox, RegionKind, RegionTokens, RoiHeadParams
from inavit.tensor import Tensor
from inavit.tokenizer import TokenGrid, TokenizerConfig

D = 8
HEADS = 2


def _attention(rng):
    arrays = {w: rng.normal(size=(D, D)) / math.sqrt(D) for w in ("w_q", "w_k", "w_v", "w_o")}
    params = AttentionParams(*(Tensor(arrays[w]) for w in ("w_q", "w_k", "w_v", "w_o")), heads=HEADS)
    return params, arrays


def _regions(rng, mask, tracks=None):
    T, N = mask.shape
    objects = rng.normal(size=(T, N, D)) * mask[..., None]
    if tracks is None:
        tracks = np.where(mask, np.arange(1, N + 1)[None, :], -1)
    return RegionTokens(Tensor(rng.normal(size=(T, D))), Tensor(objects), mask, tracks)


def test_sca_matches_loop_oracle(rng, wide):
    mask = np.array([[True, True, True], [True, False, True], [False, False, False]])
    regions = _regions(rng, mask)
    (hand_p, hand_w), (obj_p, obj_w) = _attention(rng), _attention(rng)
    out = sca(regions, hand_p, obj_p)
    expected = oracles.sca(regions.hand.data, regions.objects.data, mask, hand_w, obj_w, HEADS)
    np.testing.assert_allclose(out.tokens.data, expected, atol=1e-10)
    np.testing.assert_array_equal(out.mask[:, 0], True)
    np.testing.assert_array_equal(out.mask[:, 1:], mask)


def test_sca_hand_passes_through_a_frame_without_objects(rng):
    mask = np.array([[True, False], [False, False]])
    regions = _regions(rng, mask)
    out = sca(regions, _attention(rng)[0], _attention(rng)[0])
    np.testing.assert_array_equal(out.tokens.data[1, 0], regions.hand.data[1])
    assert not out.tokens.data[1, 1:].any()


def test_sca_strict_mode_rejects_frames_without_objects(rng):
    regions = _regions(rng, np.array([[True, False], [False, False]]))
    with pytest.raises(NoValidKeysError):
        sca(regions, _attention(rng)[0], _attention(rng)[0], strict=True)


def test_sca_single_object_attends_to_the_hand_only(rng, wide):
    mask = np.array([[True, False]])
    regions = _regions(rng, mask)
    hand_p, _ = _attention(rng)
    obj_p, obj_w = _attention(rng)
    out = sca(regions, hand_p, obj_p)
    # one source row: its value projection passes straight through
    expected = regions.hand.data[0] @ obj_w["w_v"] @ obj_w["w_o"]
    np.testing.assert_allclose(out.tokens.data[0, 1], expected, atol=1e-10)


def test_sot_matches_loop_oracle(rng, wide):
    mask = np.array([[True, True], [True, False], [True, True]])
    tracks = np.array([[1, 2], [2, -1], [1, 3]])
    regions = _regions(rng, mask, tracks)
    (hand_p, hand_w), (obj_p, obj_w) = _attention(rng), _attention(rng)
    out = sot(regions, hand_p, obj_p)
    expected = oracles.sot(regions.hand.data, regions.objects.data, mask, tracks, hand_w, obj_w, HEADS)
    np.testing.assert_allclose(out.tokens.data, expected, atol=1e-10)


def test_sot_keeps_null_slots_null(rng):
    mask = np.array([[True, False], [False, False]])
    out = sot(_regions(rng, mask), _attention(rng)[0], _attention(rng)[0])
    assert not out.tokens.data[:, 2].any()
    assert not out.tokens.data[1, 1].any()


def test_union_box_covers_hand_and_nearest_object():
    hand = BoundingBox(0, 0, 0, 2, 2, RegionKind.HAND)
    near = BoundingBox(0, 1, 1, 3, 3)
    far = BoundingBox(0, 10, 10, 12, 12)
    box = union_box(hand, [far, near])
    assert (box.x1, box.y1, box.x2, box.y2) == (0, 0, 3, 3)


def test_union_box_ties_go_to_the_earlier_object():
    hand = BoundingBox(0, 4, 4, 6, 6, RegionKind.HAND)
    left = BoundingBox(0, 0, 4, 2, 6)
    right = BoundingBox(0, 8, 4, 10, 6)
    assert union_box(hand, [left, right]).x1 == 0
    assert union_box(hand, [right, left]).x2 == 10


def test_union_box_without_objects_is_the_hand():
    hand = BoundingBox(0, 1, 1, 3, 3, RegionKind.HAND)
    assert union_box(hand, [None, None]) == hand


def test_ub_gives_one_token_per_frame(rng):
    cfg = TokenizerConfig(frames=4, height=16, width=16, tubelet=(2, 8, 8), embed_dim=D)
    grid = TokenGrid(Tensor(rng.normal(size=(2, 4, D))), (2, 2, 2))
    head = RoiHeadParams(Tensor(rng.normal(size=(D, D))), Tensor(np.zeros(D)))
    boxes = [BoundingBox(t, 0, 0, 12, 12, RegionKind.HAND) for t in range(2)]
    out = ub(grid, boxes, head, _attention(rng)[0], cfg)
    assert out.tokens.shape == (2, 1, D)
    assert out.mask.all()


def test_ub_without_union_boxes_is_a_config_error(rng):
    regions = _regions(rng, np.ones((2, 2), dtype=bool))
    params = InteractionParams("ub", union=_attention(rng)[0])
    grid = TokenGrid(Tensor(rng.normal(size=(2, 4, D))), (2, 2, 2))
    with pytest.raises(ConfigError):
        model_interactions("ub", regions, grid, params)


def test_selecting_hand_tokens_masks_and_zeroes_objects(rng):
    tokens = InteractionTokens(Tensor(rng.normal(size=(2, 3, D))), np.array([[True, True, False], [True, False, True]]))
    hand_only = InteractionModeler.select_tokens(tokens, "hand")
    np.testing.assert_array_equal(hand_only.mask, [[True, False, False], [True, False, False]])
    assert not hand_only.tokens.data[:, 1:].any()
    objects_only = InteractionModeler.select_tokens(tokens, "object")
    np.testing.assert_array_equal(objects_only.mask, [[False, True, False], [False, False, True]])


def test_valid_tokens_are_time_major(rng):
    data = rng.normal(size=(2, 2, D))
    tokens = InteractionTokens(Tensor(data), np.array([[False, True], [True, True]]))
    np.testing.assert_array_equal(tokens.valid_index(), [1, 2, 3])
    np.testing.assert_array_equal(tokens.valid_tokens().data, data.reshape(4, D)[[1, 2, 3]])


def test_sca_hand_refinement_ignores_object_slot_order(rng, wide):
    mask = np.ones((2, 3), dtype=bool)
    regions = _regions(rng, mask)
    order = [2, 0, 1]
    shuffled = RegionTokens(
        regions.hand, Tensor(regions.objects.data[:, order]), mask, regions.object_tracks[:, order]
    )
    hand_p, obj_p = _attention(rng)[0], _attention(rng)[0]
    out = sca(regions, hand_p, obj_p).tokens.data
    again = sca(shuffled, hand_p, obj_p).tokens.data
    np.testing.assert_allclose(again[:, 0], out[:, 0], atol=1e-10)
    np.testing.assert_allclose(again[:, 1:], out[:, 1:][:, order], atol=1e-10)


def test_sca_refines_each_frame_from_that_frame_alone(rng, wide):
    mask = np.array([[True, True], [True, False], [True, True]])
    regions = _regions(rng, mask)
    hand = regions.hand.data.copy()
    objects = regions.objects.data.copy()
    hand[1] += 5.0
    objects[1, 0] -= 3.0
    perturbed = RegionTokens(Tensor(hand), Tensor(objects), mask, regions.object_tracks)
    hand_p, obj_p = _attention(rng)[0], _attention(rng)[0]
    out = sca(regions, hand_p, obj_p).tokens.data
    again = sca(perturbed, hand_p, obj_p).tokens.data
    np.testing.assert_allclose(again[[0, 2]], out[[0, 2]], atol=1e-12)
    assert not np.allclose(again[1], out[1])


def test_sot_tracks_do_not_see_other_objects(rng, wide):
    mask = np.ones((3, 2), dtype=bool)
    regions = _regions(rng, mask)
    objects = regions.objects.data.copy()
    objects[:, 1] = rng.normal(size=(3, D))
    changed = RegionTokens(regions.hand, Tensor(objects), mask, regions.object_tracks)
    hand_p, obj_p = _attention(rng)[0], _attention(rng)[0]
    out = sot(regions, hand_p, obj_p).tokens.data
    again = sot(changed, hand_p, obj_p).tokens.data
    np.testing.assert_allclose(again[:, :2], out[:, :2], atol=1e-12)
    assert not np.allclose(again[:, 2], out[:, 2])
