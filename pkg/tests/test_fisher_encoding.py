import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowtex import fisher_encoding
from slowtex.errors import DimMismatch, EmptyFeatureSet, MissingSet, TooFewSamples
from slowtex.fisher_encoding import (FisherEncoder, GmmModel, encode_video, fisher_vector,
                                     fit_gmm, log_likelihood, normalize_fv, posteriors)
from slowtex.local_features import fit_reducer


def random_gmm(rng, k, d):
    w = rng.uniform(0.2, 1.0, k)
    return GmmModel(w / w.sum(), rng.standard_normal((k, d)), rng.uniform(0.5, 2.0, (k, d)))


def oracle_fv(x, gmm):
    """Straight-line evaluation of the Fisher-vector formulas, one point at a time."""
    n, d = x.shape
    k = gmm.K
    g_mu = np.zeros((k, d))
    g_sig = np.zeros((k, d))
    for xn in x:
        logp = []
        for j in range(k):
            s = math.log(gmm.weights[j])
            for i in range(d):
                v = gmm.variances[j, i]
                s -= 0.5 * (math.log(2 * math.pi * v) + (xn[i] - gmm.means[j, i]) ** 2 / v)
            logp.append(s)
        top = max(logp)
        z = sum(math.exp(p - top) for p in logp)
        gam = [math.exp(p - top) / z for p in logp]
        for j in range(k):
            for i in range(d):
                diff = xn[i] - gmm.means[j, i]
                g_mu[j, i] += gam[j] * diff / math.sqrt(gmm.variances[j, i])
                g_sig[j, i] += gam[j] * (diff * diff / gmm.variances[j, i] - 1.0)
    g_mu /= n * np.sqrt(gmm.weights)[:, None]
    g_sig /= n * np.sqrt(2 * gmm.weights)[:, None]
    return np.concatenate([g_mu.ravel(), g_sig.ravel()])


def test_k1_closed_form(rng):
    x = rng.standard_normal((400, 5)) * 3 + 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = fit_gmm(x, K=1, seed=0)
    np.testing.assert_allclose(g.means[0], x.mean(axis=0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g.variances[0], x.var(axis=0), rtol=1e-10)
    assert g.weights[0] == pytest.approx(1.0, abs=1e-15)


def test_two_blobs_recovered(rng):
    x = np.vstack([rng.standard_normal((300, 3)) + 5, rng.standard_normal((300, 3)) - 5])
    g = fit_gmm(x, K=2, seed=1)
    centres = sorted(g.means.tolist())
    np.testing.assert_allclose(centres[0], -5, atol=0.15)
    np.testing.assert_allclose(centres[1], 5, atol=0.15)


def test_gmm_deterministic_and_invariants(rng):
    x = rng.standard_normal((500, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = fit_gmm(x, K=4, seed=3), fit_gmm(x, K=4, seed=3)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.variances, b.variances)
    assert a.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(a.variances >= a.var_floor) and a.var_floor > 0


@given(st.integers(0, 2 ** 31), st.integers(1, 5))
def test_em_log_likelihood_monotone(seed, k):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.standard_normal((40, 3)) * rng.uniform(0.3, 2) + rng.uniform(-4, 4, 3)
                   for _ in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = fit_gmm(x, K=k, seed=seed, max_iters=60, tol=0.0)
    ll = np.array(g.log_likelihoods)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))


def test_too_few_samples(rng):
    with pytest.raises(TooFewSamples):
        fit_gmm(rng.standard_normal((30, 2)), K=4)


def test_posteriors_sum_to_one(rng):
    gmm = random_gmm(rng, 3, 4)
    p = posteriors(rng.standard_normal((50, 4)) * 3, gmm)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_log_likelihood_against_direct(rng):
    gmm = random_gmm(rng, 2, 3)
    x = rng.standard_normal((10, 3))
    direct = 0.0
    for xn in x:
        tot = 0.0
        for j in range(2):
            dens = np.prod(np.exp(-(xn - gmm.means[j]) ** 2 / (2 * gmm.variances[j]))
                           / np.sqrt(2 * np.pi * gmm.variances[j]))
            tot += gmm.weights[j] * dens
        direct += np.log(tot)
    assert log_likelihood(x, gmm) == pytest.approx(direct, rel=1e-12)


def test_fv_at_component_mean():
    gmm = GmmModel(np.array([1.0]), np.array([[1.0, -2.0]]), np.array([[2.0, 0.5]]))
    fv = fisher_vector(np.tile(gmm.means[0], (7, 1)), gmm)
    np.testing.assert_allclose(fv[:2], 0.0, atol=1e-15)
    np.testing.assert_allclose(fv[2:], -1 / np.sqrt(2), rtol=1e-14)


def test_fv_tiny_instance_high_precision():
    rng = np.random.default_rng(5)
    gmm = random_gmm(rng, 2, 2)
    x = rng.standard_normal((3, 2))
    np.testing.assert_allclose(fisher_vector(x, gmm), oracle_fv(x, gmm), rtol=1e-10, atol=1e-13)
    # points at mu +- sigma: first-order terms cancel, (x-mu)^2/var - 1 is 0
    g1 = GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1)))
    np.testing.assert_array_equal(fisher_vector(np.array([[1.0], [-1.0]]), g1), [0.0, 0.0])


@given(st.integers(1, 5), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_fv_matches_oracle(n, k, d, seed):
    rng = np.random.default_rng(seed)
    gmm = random_gmm(rng, k, d)
    x = rng.standard_normal((n, d)) * 2
    np.testing.assert_allclose(fisher_vector(x, gmm), oracle_fv(x, gmm), rtol=1e-10, atol=1e-12)


def test_fv_permutation_invariant(rng):
    gmm = random_gmm(rng, 3, 4)
    x = rng.standard_normal((40, 4))
    np.testing.assert_allclose(fisher_vector(x, gmm), fisher_vector(x[::-1], gmm), rtol=1e-12,
                               atol=1e-15)


def test_fv_errors(rng):
    gmm = random_gmm(rng, 2, 3)
    with pytest.raises(EmptyFeatureSet):
        fisher_vector(np.zeros((0, 3)), gmm)
    with pytest.raises(DimMismatch):
        fisher_vector(np.zeros((2, 4)), gmm)


def test_normalize_fv():
    np.testing.assert_allclose(normalize_fv([4.0, -9.0]), np.array([2.0, -3.0]) / np.sqrt(13))
    np.testing.assert_array_equal(normalize_fv(np.zeros(3)), 0.0)
    v = np.array([3.0, -4.0])
    np.testing.assert_allclose(normalize_fv(v, 1.0), v / 5.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(0.1, 1.0))
def test_normalize_unit_norm(vals, alpha):
    v = np.array(vals)
    out = normalize_fv(v, alpha)
    if np.any(np.abs(v) > 1e-100):
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-9)


def _encoders(rng, keys, d_in=12, d=4, k=2):
    out = {}
    for key in keys:
        feats = rng.standard_normal((300, d_in))
        red = fit_reducer(feats, d)
        out[key] = FisherEncoder(red, random_gmm(rng, k, d), 0.5)
    return out


def test_encode_video_layout_and_norm(rng):
    encs = _encoders(rng, ["AF1", "VF1", "AF2"])
    sets = {key: rng.standard_normal((30, 12)) for key in encs}
    rep = encode_video(sets, encs)
    assert rep.vector.size == 3 * 2 * 2 * 4
    assert [entry[0] for entry in rep.set_layout] == ["AF1", "VF1", "AF2"]
    assert np.linalg.norm(rep.vector) == pytest.approx(1.0, abs=1e-9)


def test_encode_single_set_is_its_fv(rng):
    encs = _encoders(rng, ["AF1"])
    feats = rng.standard_normal((25, 12))
    rep = encode_video({"AF1": feats}, encs)
    np.testing.assert_allclose(rep.vector, encs["AF1"].encode(feats), rtol=1e-12)


def test_encode_missing_set(rng):
    encs = _encoders(rng, ["AF1", "VF1"])
    with pytest.raises(MissingSet):
        encode_video({"AF1": rng.standard_normal((5, 12))}, encs)


def test_encoder_chunking_is_exact(rng):
    enc = _encoders(rng, ["AF1"])["AF1"]
    feats = rng.standard_normal((101, 12))
    np.testing.assert_allclose(enc.encode(feats, chunk=7), enc.encode(feats), rtol=1e-12,
                               atol=1e-15)


def test_default_representation_dim():
    assert 6 * 2 * 16 * 48 == 9216


def test_sfe_round_trip(rng, tmp_path):
    encs = _encoders(rng, ["AF1", "VF1"])
    p = tmp_path / "encoder.sfe"
    fisher_encoding.save(encs, p, {"config": {"K": 2}})
    back, meta = fisher_encoding.load(p)
    assert list(back) == ["AF1", "VF1"]
    assert meta["config"] == {"K": 2}
    assert fisher_encoding.to_bytes(back, meta) == p.read_bytes()
    raw = p.read_bytes()
    assert raw[:4] == b"SFE1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [2, 2, 4]
    x = rng.standard_normal((9, 12))
    np.testing.assert_array_equal(back["VF1"].encode(x), encs["VF1"].encode(x))
