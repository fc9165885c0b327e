import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slowtex.cube_sampling import (CubeSpec, reformat, reformat_batch, sample_cubes,
                                   sample_positions, unvectorize, vectorize)
from slowtex.errors import DimMismatch, TooSmallVideo
from slowtex.video_io import GraySequence


def video(rng, n=20, h=12, w=10):
    return GraySequence(rng.uniform(0, 255, (n, h, w)))


def test_default_spec_numbers():
    spec = CubeSpec()
    assert (spec.l_n, spec.state_dim, spec.cube_dim) == (10, 294, 735)


def test_sample_count_and_shape(rng):
    cubes = sample_cubes([video(rng), video(rng, 30, 9, 9)], 500, CubeSpec(), seed=0)
    assert cubes.shape == (500, 7, 7, 15)
    assert cubes.reshape(500, -1).shape[1] == 735


def test_single_position_returns_whole_video(rng):
    v = video(rng, 15, 7, 7)
    cube = sample_cubes([v], 1, CubeSpec(), seed=3)[0]
    np.testing.assert_array_equal(cube, np.transpose(v.frames, (1, 2, 0)))


def test_positions_deterministic_and_in_bounds(rng):
    vids = [video(rng), video(rng, 40, 20, 8)]
    spec = CubeSpec()
    a = sample_positions(vids, 1000, spec, seed=7)
    b = sample_positions(vids, 1000, spec, seed=7)
    np.testing.assert_array_equal(a, b)
    for v, y, x, t in a:
        assert 0 <= y <= vids[v].height - 7
        assert 0 <= x <= vids[v].width - 7
        assert 0 <= t <= vids[v].length - 15


def test_positions_proportional_to_valid_counts(rng):
    # video 0 has 1 valid position, video 1 has 6*4*6 = 144
    vids = [video(rng, 15, 7, 7), video(rng, 20, 12, 10)]
    pos = sample_positions(vids, 20000, CubeSpec(), seed=1)
    share = np.mean(pos[:, 0] == 0)
    assert abs(share - 1 / 145) < 0.004


def test_small_videos_skipped(rng):
    with pytest.warns(UserWarning):
        pos = sample_positions([video(rng, 5, 5, 5), video(rng)], 50, CubeSpec(), seed=0)
    assert np.all(pos[:, 0] == 1)
    with pytest.raises(TooSmallVideo):
        sample_positions([video(rng, 5, 5, 5)], 1, CubeSpec(), seed=0)


def test_reformat_column_count_and_overlap(rng):
    spec = CubeSpec()
    cube = rng.standard_normal((7, 7, 15))
    seq = reformat(cube, spec)
    assert seq.length == 10
    for i in range(seq.length):
        np.testing.assert_array_equal(unvectorize(seq.states[:, i], 7, 7, 6), cube[:, :, i:i + 6])
    # adjacent columns share d_s - 1 frames
    per_frame = 49
    np.testing.assert_array_equal(seq.states[per_frame:, 0], seq.states[:-per_frame, 1])


def test_reformat_boundary_single_column(rng):
    spec = CubeSpec(3, 3, 4, 4)
    assert reformat(rng.standard_normal((3, 3, 4)), spec).length == 1
    with pytest.raises(ValueError):
        spec.check_learnable()


def test_reformat_dim_mismatch(rng):
    with pytest.raises(DimMismatch):
        reformat(rng.standard_normal((7, 7, 14)), CubeSpec())


def test_vectorize_order_y_fastest():
    cube = np.arange(2 * 3 * 2).reshape(2, 3, 2)
    v = vectorize(cube)
    assert list(v[:2]) == [cube[0, 0, 0], cube[1, 0, 0]]
    assert v[2] == cube[0, 1, 0]
    assert v[6] == cube[0, 0, 1]


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6)))
def test_vectorize_bijection(cube):
    h, w, t = cube.shape
    np.testing.assert_array_equal(unvectorize(vectorize(cube), h, w, t), cube)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(2, 6), st.integers(0, 2 ** 31))
def test_batch_matches_single(h, w, l, seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, l + 1))
    spec = CubeSpec(h, w, l, d)
    cubes = rng.standard_normal((3, h, w, l))
    batch = reformat_batch(cubes, spec)
    for i in range(3):
        np.testing.assert_array_equal(batch[i].T, reformat(cubes[i], spec).states)
