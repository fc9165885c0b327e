import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowtex import classifier
from slowtex.classifier import (EvalReport, LinearOvaSvm, loo_splits, predict, predict_many,
                                random_splits, run_protocol, train_svm)
from slowtex.errors import (DimMismatch, EmptyData, InsufficientPerClass, SingleClass,
                            TooFewVideos)


def blobs(rng, n_per=10, d=5, sep=4.0, n_cls=3):
    centres = rng.standard_normal((n_cls, d)) * sep
    x = np.vstack([c + rng.standard_normal((n_per, d)) * 0.3 for c in centres])
    y = [f"c{i}" for i in range(n_cls) for _ in range(n_per)]
    return x, y


def test_separable_pm1():
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    m = train_svm(x, ["a", "b"], C=10.0)
    assert predict_many(m, x) == ["a", "b"]
    assert predict(m, [2.0, 0.3])[0] == "a"
    assert predict(m, [-2.0, -0.3])[0] == "b"
    # hard-margin solution for two points at +-1: w = (1, 0), b = 0
    np.testing.assert_allclose(m.weights[0], [1.0, 0.0], atol=1e-3)


def test_training_accuracy_on_blobs(rng):
    x, y = blobs(rng)
    m = train_svm(x, y)
    assert predict_many(m, x) == y
    assert all(info["converged"] for info in m.meta["per_class"])


def test_duplicate_samples_tolerated(rng):
    x, y = blobs(rng, n_per=4)
    m = train_svm(np.vstack([x, x]), y + y)
    assert predict_many(m, x) == y


def test_decision_value_length(rng):
    x, y = blobs(rng, n_cls=4)
    label, dv = predict(train_svm(x, y), x[0])
    assert dv.shape == (4,) and label == "c0"


def test_tie_goes_to_first_class():
    m = LinearOvaSvm(("a", "b", "c"), np.zeros((3, 2)), np.array([0.5, 0.5, 0.1]))
    assert predict(m, [1.0, 2.0])[0] == "a"
    m2 = LinearOvaSvm(("a", "b"), np.zeros((2, 2)), np.zeros(2))
    assert predict_many(m2, np.ones((3, 2))) == ["a", "a", "a"]


@given(st.integers(0, 2 ** 31), st.floats(-50, 50))
def test_argmax_invariant_to_constant_shift(seed, shift):
    rng = np.random.default_rng(seed)
    m = LinearOvaSvm(("a", "b", "c"), rng.standard_normal((3, 4)), rng.standard_normal(3))
    x = rng.standard_normal((10, 4))
    shifted = LinearOvaSvm(m.class_labels, m.weights, m.bias + shift)
    dv, dv2 = m.decision_values(x), shifted.decision_values(x)
    gap = np.sort(dv, axis=1)
    clear = gap[:, -1] - gap[:, -2] > 1e-9
    assert np.array_equal(np.argmax(dv, 1)[clear], np.argmax(dv2, 1)[clear])


@given(st.integers(0, 2 ** 31), st.floats(0.05, 20.0))
def test_dual_objective_nonincreasing(seed, c):
    rng = np.random.default_rng(seed)
    x, y = blobs(rng, n_per=6, d=3, sep=1.0)
    m = train_svm(x, y, C=c, max_epochs=50)
    for info in m.meta["per_class"]:
        h = np.array(info["dual_objective"])
        assert np.all(np.diff(h) <= 1e-10 * np.maximum(1.0, np.abs(h[:-1])))


def test_training_deterministic(rng):
    x, y = blobs(rng)
    a, b = train_svm(x, y, seed=4), train_svm(x, y, seed=4)
    assert classifier.to_bytes(a) == classifier.to_bytes(b)


def test_train_errors(rng):
    with pytest.raises(EmptyData):
        train_svm(np.zeros((0, 3)), [])
    with pytest.raises(SingleClass):
        train_svm(rng.standard_normal((4, 3)), ["a"] * 4)
    with pytest.raises(DimMismatch):
        train_svm(rng.standard_normal((4, 3)), ["a", "b"])
    m = train_svm(rng.standard_normal((4, 3)), ["a", "b", "a", "b"])
    with pytest.raises(DimMismatch):
        predict(m, np.zeros(5))


def test_ssm_round_trip(rng, tmp_path):
    x, y = blobs(rng)
    m = train_svm(x, y, C=2.5)
    p = tmp_path / "svm.ssm"
    classifier.save(m, p, {"n_videos": 30})
    back = classifier.load(p)
    assert back.class_labels == m.class_labels and back.C == 2.5
    np.testing.assert_array_equal(back.weights, m.weights)
    np.testing.assert_array_equal(back.bias, m.bias)
    assert back.meta["n_videos"] == 30
    raw = p.read_bytes()
    assert raw[:4] == b"SSM1"
    assert np.frombuffer(raw[4:12], "<u4").tolist() == [3, 5]


def test_loo_folds_partition():
    labels = ["a", "a", "b", "b", "b"]
    folds = loo_splits(labels)
    assert len(folds) == 5
    assert sorted(int(t[0]) for _, t in folds) == list(range(5))
    for train, test in folds:
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(5))
    with pytest.raises(TooFewVideos):
        loo_splits(["a", "b", "b"])


@given(st.integers(0, 2 ** 31), st.lists(st.integers(2, 9), min_size=2, max_size=5))
def test_half_splits_stratified(seed, sizes):
    labels = [f"c{i}" for i, n in enumerate(sizes) for _ in range(n)]
    splits = random_splits(labels, "half", n_splits=3, seed=seed)
    for train, test in splits:
        assert not set(train) & set(test)
        assert len(train) + len(test) == len(labels)
        for i, n in enumerate(sizes):
            assert sum(labels[j] == f"c{i}" for j in train) == n // 2


def test_splits_deterministic_and_fixed_count():
    labels = ["a"] * 6 + ["b"] * 5
    s1 = random_splits(labels, "fixed-count", n_train=3, n_splits=4, seed=9)
    s2 = random_splits(labels, "fixed-count", n_train=3, n_splits=4, seed=9)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(s1, s2))
    assert all(len(train) == 6 for train, _ in s1)
    s3 = random_splits(labels, "fixed-count", n_train=3, n_splits=4, seed=10)
    assert not all(np.array_equal(a[0], b[0]) for a, b in zip(s1, s3))


def test_insufficient_per_class():
    with pytest.raises(InsufficientPerClass):
        random_splits(["a"] * 4 + ["b"] * 3, "fixed-count", n_train=3)
    with pytest.raises(InsufficientPerClass):
        random_splits(["a", "b", "b"], "half")
    with pytest.raises(ValueError):
        random_splits(["a"] * 4 + ["b"] * 4, "thirds")


def test_run_protocol_report():
    labels = ["a", "a", "b", "b"]
    splits = [(np.array([0, 2]), np.array([1, 3])), (np.array([1, 3]), np.array([0, 2]))]
    answers = iter([["a", "a"], ["a", "b"]])
    rep = run_protocol("half", splits, labels, lambda tr, te: next(answers))
    assert rep.per_split == [0.5, 1.0]
    assert rep.mean == pytest.approx(0.75)
    np.testing.assert_array_equal(rep.confusion, [[2, 0], [1, 1]])
    # rows sum to the number of test appearances of each class
    assert rep.confusion.sum(axis=1).tolist() == [2, 2]
    back = EvalReport.from_dict(rep.to_dict())
    assert back.per_split == rep.per_split
    np.testing.assert_array_equal(back.confusion, rep.confusion)
