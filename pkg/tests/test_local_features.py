import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowtex.errors import DimMismatch, VolumeLargerThanMaps
from slowtex.local_features import (PoolSpec, fit_reducer, integral_pool_oracle_check,
                                    n_positions, naive_quadrant_means, pool_volume,
                                    quadrant_means, read_features, reduce48, slice_vectors,
                                    write_features)


def naive_descriptor(maps, spec, t0, y0, x0):
    """One local descriptor by direct loops, independent of the vectorised path."""
    g = maps.shape[1]
    hq, wq = spec.h_p // 2, spec.w_p // 2
    slices = []
    for t in range(t0, t0 + spec.l_p):
        vec = []
        for dy, dx in ((0, 0), (0, wq), (hq, 0), (hq, wq)):
            for c in range(g):
                vec.append(maps[t, c, y0 + dy:y0 + dy + hq, x0 + dx:x0 + dx + wq].mean())
        vec = np.array(vec)
        n = np.sqrt(np.sum(vec ** 2))
        slices.append(vec / n if n > 0 else vec)
    b1, b2 = spec.l_p // 3, 2 * spec.l_p // 3
    slices = np.array(slices)
    return np.concatenate([slices[:b1].mean(0), slices[b1:b2].mean(0), slices[b2:].mean(0)])


def test_default_dimension_96(rng):
    feats, pos = pool_volume(rng.uniform(0, 1, (9, 8, 6, 6)), PoolSpec())
    assert feats.shape == (1, 96)
    assert pos.tolist() == [[0, 0, 0, 0]]


def test_constant_maps_hand_value():
    feats, _ = pool_volume(np.full((12, 8, 10, 10), 2.5), PoolSpec())
    np.testing.assert_allclose(feats, 1.0 / np.sqrt(32.0), rtol=1e-14)
    assert abs(1.0 / np.sqrt(32.0) - 0.1768) < 1e-4


def test_zero_maps_give_zero_features():
    feats, _ = pool_volume(np.zeros((9, 8, 6, 6)), PoolSpec())
    assert np.all(feats == 0.0) and np.all(np.isfinite(feats))


def test_matches_naive_descriptor(rng):
    spec = PoolSpec(4, 6, 7, 2, 2)
    maps = rng.uniform(0, 3, (12, 3, 11, 13))
    feats, pos = pool_volume(maps, spec, scale_index=2)
    assert feats.shape == (n_positions(11, 13, 12, spec), 36)
    for row in rng.choice(len(feats), 10, replace=False):
        s, x, y, t = pos[row]
        assert s == 2
        np.testing.assert_allclose(feats[row], naive_descriptor(maps, spec, t, y, x),
                                   rtol=1e-9, atol=1e-12)


def test_grid_count_closed_form():
    spec = PoolSpec()
    # 50x50 input, 7x7 filters, pool 2: 44 -> 22 cells, 49 variation frames
    assert n_positions(22, 22, 49, spec) == 17 * 17 * 14
    assert n_positions(5, 22, 49, spec) == 0


def test_thirds_uneven_boundaries():
    assert PoolSpec(l_p=10).thirds == ((0, 3), (3, 6), (6, 10))
    assert PoolSpec(l_p=9).thirds == ((0, 3), (3, 6), (6, 9))


def test_pool_spec_validation():
    with pytest.raises(ValueError):
        PoolSpec(h_p=5)
    with pytest.raises(ValueError):
        PoolSpec(l_p=2)


def test_volume_larger_than_maps(rng):
    with pytest.raises(VolumeLargerThanMaps):
        pool_volume(rng.uniform(size=(9, 2, 4, 8)), PoolSpec())
    with pytest.raises(VolumeLargerThanMaps):
        pool_volume(rng.uniform(size=(5, 2, 8, 8)), PoolSpec())


@given(st.integers(0, 2 ** 31))
def test_slice_vectors_unit_or_zero(seed):
    rng = np.random.default_rng(seed)
    maps = rng.uniform(0, 1, (3, 2, 8, 8)) * (rng.uniform(size=(3, 2, 1, 1)) > 0.3)
    norms = np.linalg.norm(slice_vectors(maps, PoolSpec(4, 4, 3)), axis=-1)
    assert np.all((np.abs(norms - 1) <= 1e-9) | (norms == 0))


@given(st.integers(0, 2 ** 31), st.sampled_from([1.0, 1e6]))
def test_integral_pooling_equals_naive(seed, magnitude):
    rng = np.random.default_rng(seed)
    maps = rng.uniform(-magnitude, magnitude, (3, 2, 12, 12))
    assert integral_pool_oracle_check(maps, PoolSpec(4, 6, 3, 2, 1))


def test_integral_check_examples(rng):
    spec = PoolSpec(6, 6, 9)
    assert integral_pool_oracle_check(rng.uniform(size=(9, 1, 20, 20)), spec)
    assert integral_pool_oracle_check(np.zeros((9, 1, 20, 20)), spec)
    assert integral_pool_oracle_check(rng.choice([-1e6, 1e6], size=(9, 1, 20, 20)), spec)


def test_integral_check_detects_mismatch(rng, monkeypatch):
    import slowtex.local_features as lf
    maps = rng.uniform(size=(3, 1, 8, 8))
    spec = PoolSpec(4, 4, 3)
    monkeypatch.setattr(lf, "quadrant_means", lambda m, s: naive_quadrant_means(m, s) * 1.001)
    assert not lf.integral_pool_oracle_check(maps, spec)


def test_constant_stack_same_everywhere():
    feats, _ = pool_volume(np.full((15, 3, 14, 9), 0.7), PoolSpec(4, 4, 6, 1, 2))
    assert np.all(feats == feats[0])


def test_quadrant_order(rng):
    maps = np.zeros((1, 1, 4, 4))
    maps[0, 0, :2, 2:] = 1.0  # top-right quadrant
    q = quadrant_means(maps, PoolSpec(4, 4, 3))
    np.testing.assert_array_equal(q[0, 0, 0, :, 0], [0.0, 1.0, 0.0, 0.0])


def test_reduce48(rng):
    x = rng.standard_normal((3000, 96)) @ rng.standard_normal((96, 96))
    red = fit_reducer(x, 48)
    y = reduce48(x, red)
    assert y.shape == (3000, 48)
    np.testing.assert_allclose(np.cov(y.T, bias=True), np.eye(48), atol=1e-6)
    np.testing.assert_array_equal(reduce48(x[:5], red), reduce48(x[:5], red))
    with pytest.raises(DimMismatch):
        reduce48(x[:, :95], red)


def test_reduce_full_dim_is_whitening(rng):
    x = rng.standard_normal((500, 6)) * np.arange(1, 7)
    y = reduce48(x, fit_reducer(x, 6))
    np.testing.assert_allclose(np.cov(y.T, bias=True), np.eye(6), atol=1e-9)


def test_features_bin_round_trip(tmp_path, rng):
    f = rng.standard_normal((17, 96)).astype(np.float32)
    p = tmp_path / "features.bin"
    write_features(p, f)
    raw = p.read_bytes()
    assert raw[:4] == b"SLFV"
    assert np.frombuffer(raw[4:12], "<u4").tolist() == [96, 17]
    np.testing.assert_array_equal(read_features(p), f)
