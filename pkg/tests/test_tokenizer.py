import numpy as np
import pytest

from inavit.errors import ConfigError, ShapeError
from inavit.tensor import Tensor
from inavit.tokenizer import PositionalEmbeddings, TokenizerConfig, VideoTokenizer, add_positional, append_cls, patchify


def _projection(cfg, rng):
    return Tensor(rng.normal(size=(cfg.cuboid_size, cfg.embed_dim)))


def test_grid_shape_for_the_default_geometry(rng):
    cfg = TokenizerConfig(frames=8, height=32, width=32, channels=3, tubelet=(2, 8, 8), embed_dim=32)
    grid = patchify(rng.uniform(size=(8, 32, 32, 3)), cfg, _projection(cfg, rng))
    assert grid.tokens.shape == (4, 16, 32)
    assert grid.grid == (4, 4, 4)


def test_cuboids_are_flattened_in_time_row_col_channel_order():
    cfg = TokenizerConfig(frames=2, height=4, width=4, channels=1, tubelet=(2, 2, 2), embed_dim=1)
    clip = np.arange(32, dtype=float).reshape(2, 4, 4, 1)
    pieces = VideoTokenizer.cuboids(clip, cfg)
    assert pieces.shape == (1, 4, 8)
    # second spatial position is row 0, col 1 of the token grid
    np.testing.assert_array_equal(pieces[0, 1], [2, 3, 6, 7, 18, 19, 22, 23])


def test_uncuboids_inverts_cuboids(rng):
    cfg = TokenizerConfig(frames=4, height=8, width=8, channels=3, tubelet=(2, 4, 4), embed_dim=4)
    clip = rng.uniform(size=(4, 8, 8, 3))
    np.testing.assert_array_equal(VideoTokenizer.uncuboids(VideoTokenizer.cuboids(clip, cfg), cfg), clip)


def test_indivisible_geometry_is_rejected():
    with pytest.raises(ConfigError):
        TokenizerConfig(frames=7, height=32, width=32, tubelet=(2, 8, 8))


def test_clip_of_the_wrong_size_is_rejected(rng):
    cfg = TokenizerConfig(frames=4, height=16, width=16, tubelet=(2, 8, 8), embed_dim=8)
    with pytest.raises(ShapeError):
        patchify(rng.uniform(size=(4, 16, 8, 3)), cfg, _projection(cfg, rng))


def test_positional_embeddings_add_per_position(rng):
    cfg = TokenizerConfig(frames=4, height=16, width=16, tubelet=(2, 8, 8), embed_dim=8)
    grid = patchify(np.zeros((4, 16, 16, 3)), cfg, _projection(cfg, rng))
    spatial = rng.normal(size=(4, 8))
    temporal = rng.normal(size=(2, 8))
    out = add_positional(grid, PositionalEmbeddings(Tensor(spatial), Tensor(temporal)))
    np.testing.assert_allclose(out.tokens.data[1, 3], spatial[3] + temporal[1])


def test_positional_tables_must_match_the_grid(rng):
    cfg = TokenizerConfig(frames=4, height=16, width=16, tubelet=(2, 8, 8), embed_dim=8)
    grid = patchify(np.zeros((4, 16, 16, 3)), cfg, _projection(cfg, rng))
    with pytest.raises(ShapeError):
        add_positional(grid, PositionalEmbeddings(Tensor(np.zeros((5, 8))), Tensor(np.zeros((2, 8)))))


def test_cls_token_is_appended_once(rng):
    cfg = TokenizerConfig(frames=4, height=16, width=16, tubelet=(2, 8, 8), embed_dim=8)
    grid = patchify(np.zeros((4, 16, 16, 3)), cfg, _projection(cfg, rng))
    with_cls = append_cls(grid, Tensor(np.ones((1, 8))))
    assert with_cls.token_count == 2 * 4 + 1
    with pytest.raises(ShapeError):
        append_cls(with_cls, Tensor(np.ones((1, 8))))


@pytest.mark.parametrize("seed", range(5))
def test_token_count_follows_the_tubelet_geometry(seed):
    draw = np.random.default_rng(seed)
    t_p, h_p, w_p = (int(v) for v in draw.integers(1, 4, size=3))
    n_t, n_h, n_w = (int(v) for v in draw.integers(1, 4, size=3))
    cfg = TokenizerConfig(
        frames=t_p * n_t, height=h_p * n_h, width=w_p * n_w, channels=2, tubelet=(t_p, h_p, w_p), embed_dim=4
    )
    clip = draw.uniform(size=(cfg.frames, cfg.height, cfg.width, 2))
    grid = patchify(clip, cfg, Tensor(draw.normal(size=(cfg.cuboid_size, 4))))
    assert grid.tokens.shape == (n_t, n_h * n_w, 4)
    assert grid.grid == (n_t, n_h, n_w)
