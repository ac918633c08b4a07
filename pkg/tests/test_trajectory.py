import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from inavit.errors import ShapeError
from inavit.interaction import InteractionTokens
from inavit.parameters import ParameterSet
from inavit.tensor import Tensor
from inavit.tokenizer import TokenGrid
from inavit.trajectory import (
    AttentionTrace,
    TcaParams,
    TrajectoryAttention,
    backbone_block,
    tca,
    trajectory_attend,
)

D = 8
HEADS = 2


def _tca_params(rng, causal=False):
    arrays = {f"tca.{n}": rng.normal(size=(D, D)) / math.sqrt(D) for n in TcaParams.NAMES}
    params = TcaParams.from_params(ParameterSet.from_arrays(arrays), "tca", HEADS, causal)
    return params, {k.split(".")[-1]: v for k, v in arrays.items()}


def _context(rng, T=3, S=4):
    return TokenGrid(Tensor(rng.normal(size=(T, S, D))), (T, 2, S // 2))


@pytest.mark.parametrize("causal", [False, True])
def test_trajectory_attend_matches_loop_oracle(rng, wide, causal):
    params, arrays = _tca_params(rng, causal)
    context = _context(rng)
    queries = rng.normal(size=(4, D))
    frames = [0, 2, 1, 0]
    out = trajectory_attend(Tensor(queries), frames, context, params)
    expected = oracles.trajectory_attend(queries, frames, context.tokens.data, arrays, HEADS, causal)
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_causal_query_in_the_last_frame_sees_only_that_frame(rng, wide):
    params, arrays = _tca_params(rng, causal=True)
    context = _context(rng)
    queries = rng.normal(size=(1, D))
    out = trajectory_attend(Tensor(queries), [2], context, params)
    # a single reference frame passes its projected trajectory token through
    trajectory = np.zeros(D)
    q = queries[0] @ arrays["w_q"]
    k = context.tokens.data[2] @ arrays["w_k"]
    v = context.tokens.data[2] @ arrays["w_v"]
    for h in range(HEADS):
        cols = slice(h * D // HEADS, (h + 1) * D // HEADS)
        trajectory[cols], _ = oracles.attend_one(q[cols], k[:, cols], v[:, cols])
    np.testing.assert_allclose(out.data[0], trajectory @ arrays["t_v"] @ arrays["w_o"], atol=1e-10)


def test_home_frames_must_lie_in_the_grid(rng):
    params, _ = _tca_params(rng)
    with pytest.raises(ShapeError):
        trajectory_attend(Tensor(rng.normal(size=(2, D))), [0, 3], _context(rng), params)


def test_trace_receives_normalized_spatial_weights(rng):
    params, _ = _tca_params(rng)
    trace = AttentionTrace()
    trajectory_attend(Tensor(rng.normal(size=(5, D))), [0, 1, 2, 0, 1], _context(rng), params, trace, "probe")
    (entry,) = trace.of_kind("trajectory")
    assert entry["layer"] == "probe"
    assert entry["weights"].shape == (5, 3, 4)
    assert entry["frames"] == [0, 1, 2, 0, 1]
    np.testing.assert_allclose(entry["weights"].sum(axis=-1), 1.0, rtol=1e-5)


def test_tca_refines_only_valid_tokens(rng, wide):
    params, arrays = _tca_params(rng)
    context = _context(rng)
    data = rng.normal(size=(3, 2, D))
    mask = np.array([[True, False], [True, True], [False, True]])
    out = tca(InteractionTokens(Tensor(data), mask), context, params)
    np.testing.assert_array_equal(out.mask, mask)
    np.testing.assert_array_equal(out.tokens.data[0, 1], data[0, 1])
    np.testing.assert_array_equal(out.tokens.data[2, 0], data[2, 0])
    queries = data.reshape(6, D)[[0, 2, 3, 5]]
    expected = oracles.trajectory_attend(queries, [0, 1, 1, 2], context.tokens.data, arrays, HEADS)
    np.testing.assert_allclose(out.tokens.data.reshape(6, D)[[0, 2, 3, 5]], expected, atol=1e-10)


def test_tca_without_valid_tokens_is_the_identity(rng):
    params, _ = _tca_params(rng)
    tokens = InteractionTokens(Tensor(np.zeros((3, 2, D))), np.zeros((3, 2), dtype=bool))
    assert tca(tokens, _context(rng), params) is tokens


def test_tca_needs_matching_temporal_extent(rng):
    params, _ = _tca_params(rng)
    tokens = InteractionTokens(Tensor(np.zeros((2, 1, D))), np.ones((2, 1), dtype=bool))
    with pytest.raises(ShapeError):
        tca(tokens, _context(rng, T=3), params)


def _block(rng):
    specs = TrajectoryAttention.block_specs("backbone.0", D)
    params = ParameterSet.initialize(specs, 0, np.float64)
    return TrajectoryAttention.block_from_params(params, "backbone.0", HEADS)


def test_backbone_block_preserves_shapes(rng):
    grid = TokenGrid(Tensor(rng.normal(size=(3, 4, D))), (3, 2, 2), cls=Tensor(rng.normal(size=(1, D))))
    out = backbone_block(grid, _block(rng))
    assert out.tokens.shape == (3, 4, D)
    assert out.cls.shape == (1, D)
    assert out.appended is None


def test_backbone_block_carries_appended_tokens(rng):
    grid = TokenGrid(
        Tensor(rng.normal(size=(3, 4, D))),
        (3, 2, 2),
        cls=Tensor(rng.normal(size=(1, D))),
        appended=Tensor(rng.normal(size=(2, D))),
    )
    trace = AttentionTrace()
    out = backbone_block(grid, _block(rng), trace, "backbone.0")
    assert out.appended.shape == (2, D)
    assert out.token_count == grid.token_count
    (entry,) = trace.of_kind("trajectory")
    assert entry["weights"].shape == (12, 3, 4)


def test_backbone_block_needs_the_cls_token(rng):
    grid = TokenGrid(Tensor(rng.normal(size=(3, 4, D))), (3, 2, 2))
    with pytest.raises(ShapeError):
        backbone_block(grid, _block(rng))


def test_causal_and_full_trajectories_agree_on_a_single_frame(rng):
    params, _ = _tca_params(rng)
    context = _context(rng, T=1)
    queries = Tensor(rng.normal(size=(3, D)))
    full = trajectory_attend(queries, [0, 0, 0], context, params)
    causal = trajectory_attend(queries, [0, 0, 0], context, replace(params, causal=True))
    np.testing.assert_array_equal(causal.data, full.data)


def test_backbone_block_matches_loop_oracle(rng, wide):
    init = ParameterSet.initialize(TrajectoryAttention.block_specs("backbone.0", D), 0, np.float64)
    arrays = {
        k: rng.normal(size=t.shape) * 0.5 + (1.0 if k.endswith("scale") else 0.0) for k, t in init.items()
    }
    block = TrajectoryAttention.block_from_params(ParameterSet.from_arrays(arrays), "backbone.0", HEADS)
    tokens = rng.normal(size=(2, 4, D))
    cls = rng.normal(size=(1, D))
    out = backbone_block(TokenGrid(Tensor(tokens), (2, 2, 2), cls=Tensor(cls)), block)
    expected_tokens, expected_cls = oracles.backbone_block(
        tokens,
        cls[0],
        {k[len("backbone.0."):]: v for k, v in arrays.items() if ".attn." not in k},
        {k.split(".")[-1]: v for k, v in arrays.items() if ".attn." in k},
        HEADS,
    )
    np.testing.assert_allclose(out.tokens.data, expected_tokens, atol=1e-9)
    np.testing.assert_allclose(out.cls.data[0], expected_cls, atol=1e-9)


def test_backbone_block_keeps_a_spatially_constant_grid_constant(rng, wide):
    frames = rng.normal(size=(3, 1, D))
    grid = TokenGrid(Tensor(np.repeat(frames, 4, axis=1)), (3, 2, 2), cls=Tensor(rng.normal(size=(1, D))))
    out = backbone_block(grid, _block(rng)).tokens.data
    np.testing.assert_allclose(out, np.repeat(out[:, :1], 4, axis=1), atol=1e-10)
