from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from classcp.evaluation import (
    METRIC_NAMES,
    Metrics,
    MetricsRecord,
    PredictionSet,
    compute_metrics,
    knn_classify,
    knn_k,
    nearest_centroid_classify,
    predict_classcp,
    run_experiment,
    table_rows,
)
from classcp.factorization import CoeffMatrix, FactorSet, FitConfig
from classcp.synthgen import SynthSpec, generate_planted


def prediction(classes):
    classes = np.asarray(classes, dtype=np.int64)
    n = len(classes)
    return PredictionSet(np.arange(n), classes, np.zeros((n, 2)), np.zeros(n, dtype=bool))


def factors_with_a(a):
    a = np.asarray(a, dtype=float)
    return FactorSet(a, np.ones((1, a.shape[1])), np.ones((1, a.shape[1])))


class TestPredict:
    def test_unit_vector(self):
        pred = predict_classcp(factors_with_a([[1.0, 0.0]]), CoeffMatrix(np.eye(2)), [0])
        assert pred.classes.tolist() == [0] and not pred.ties[0]

    def test_tie_goes_to_lower_class(self):
        fs = factors_with_a([[0.3, 0.3]])
        pred = predict_classcp(fs, CoeffMatrix(np.eye(2)), [0])
        assert pred.classes.tolist() == [0]
        assert pred.ties.tolist() == [True]

    def test_brute_force_argmax(self, rng):
        a, w = rng.normal(size=(9, 3)), rng.normal(size=(3, 2))
        posts = [1, 4, 5, 7, 8]
        pred = predict_classcp(factors_with_a(a), CoeffMatrix(w), posts)
        for n, i in enumerate(posts):
            s = [sum(a[i, q] * w[q, m] for q in range(3)) for m in range(2)]
            assert pred.classes[n] == (0 if s[0] >= s[1] else 1)
        assert pred.indices.tolist() == posts

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            predict_classcp(factors_with_a([[1.0, 0.0]]), CoeffMatrix(np.eye(2)), [1])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
    def test_positive_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        fs = factors_with_a(rng.normal(size=(6, 3)))
        w = rng.normal(size=(3, 2))
        a = predict_classcp(fs, CoeffMatrix(w), range(6))
        b = predict_classcp(fs, CoeffMatrix(w * scale), range(6))
        np.testing.assert_array_equal(a.classes, b.classes)


class TestKnn:
    def test_k_rule(self):
        assert knn_k(146) == 13
        assert knn_k(144) == 12
        assert knn_k(1) == 1

    def test_k1_exact_match(self):
        train = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
        pred = knn_classify(train, [0, 1, 0], [[1.0, 1.0]], 1)
        assert pred.classes.tolist() == [1]

    def test_hand_distance_table(self):
        # distances from the origin: class 0 at 1, 2 and class 1 at 3, 4
        train = np.array([[1.0], [2.0], [3.0], [4.0]])
        pred = knn_classify(train, [0, 0, 1, 1], [[0.0]], 3)
        assert pred.classes.tolist() == [0]
        assert pred.scores.tolist() == [[2.0, 1.0]]

    def test_distance_tie_by_lower_index(self):
        pred = knn_classify([[1.0], [-1.0]], [1, 0], [[0.0]], 1)
        assert pred.classes.tolist() == [1]

    def test_vote_tie_by_summed_distance(self):
        assert knn_classify([[1.0], [-2.0]], [0, 1], [[0.0]], 2).classes.tolist() == [0]
        assert knn_classify([[2.0], [-1.0]], [0, 1], [[0.0]], 2).classes.tolist() == [1]
        pred = knn_classify([[1.0], [-1.0]], [1, 0], [[0.0]], 2)
        assert pred.classes.tolist() == [0] and pred.ties[0]

    def test_k_equals_n_gives_majority(self, rng):
        train = rng.normal(size=(7, 3))
        labels = np.array([1, 1, 1, 1, 0, 0, 0])
        pred = knn_classify(train, labels, rng.normal(size=(10, 3)), 7)
        assert np.all(pred.classes == 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            knn_classify(np.zeros((0, 2)), [], [[0.0, 0.0]], 1)
        with pytest.raises(ValueError):
            knn_classify([[0.0]], [0], [[0.0]], 2)


class TestNearestCentroid:
    def test_dense_and_sparse_agree(self, rng):
        train = (rng.random((12, 8)) < 0.4).astype(float)
        test = (rng.random((5, 8)) < 0.4).astype(float)
        labels = np.arange(12) % 2
        dense = nearest_centroid_classify(train, labels, test)
        sparse = nearest_centroid_classify(sp.csr_matrix(train), labels, sp.csr_matrix(test))
        np.testing.assert_array_equal(dense.classes, sparse.classes)
        np.testing.assert_allclose(dense.scores, sparse.scores, atol=1e-12)

    def test_obvious_clusters(self):
        train = np.array([[0.0, 0.0], [0.0, 1.0], [9.0, 9.0], [9.0, 8.0]])
        pred = nearest_centroid_classify(train, [0, 0, 1, 1], [[1.0, 0.0], [8.0, 8.0]])
        assert pred.classes.tolist() == [0, 1]


class TestMetrics:
    def test_hand_confusion(self):
        # TP=3 FP=1 FN=2 TN=4 with fake (1) positive
        pred = prediction([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        truth = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0]
        m = compute_metrics(pred, truth)
        assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 2, 4)
        assert abs(m.precision - 0.75) <= 1e-12
        assert abs(m.recall - 0.6) <= 1e-12
        assert abs(m.f1 - 2 * 0.45 / 1.35) <= 1e-12
        assert abs(m.accuracy - 0.7) <= 1e-12
        assert m.undefined == ()

    def test_all_correct(self):
        m = compute_metrics(prediction([0, 1, 1, 0]), [0, 1, 1, 0])
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_all_negative(self):
        m = compute_metrics(prediction([0, 0, 0]), [1, 0, 1])
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0
        assert "precision" in m.undefined and "recall" not in m.undefined

    def test_index_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics(prediction([0, 1]), [0, 1], truth_indices=[0, 2])
        with pytest.raises(ValueError):
            compute_metrics(prediction([0, 1]), [0, 1, 1])

    @settings(max_examples=100, deadline=None)
    @given(pairs=st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
    def test_rational_identities(self, pairs):
        pred = prediction([p for p, _ in pairs])
        truth = [t for _, t in pairs]
        m = compute_metrics(pred, truth)
        assert m.tp + m.fp + m.fn + m.tn == len(pairs)
        assert abs(m.accuracy - float(Fraction(m.tp + m.tn, len(pairs)))) <= 1e-12
        if m.tp + m.fp:
            assert abs(m.precision - float(Fraction(m.tp, m.tp + m.fp))) <= 1e-12
        if m.tp + m.fn:
            assert abs(m.recall - float(Fraction(m.tp, m.tp + m.fn))) <= 1e-12
        if m.tp:
            exact = Fraction(2 * m.tp, 2 * m.tp + m.fp + m.fn)
            assert abs(m.f1 - float(exact)) <= 1e-12
        for name in METRIC_NAMES:
            assert 0.0 <= getattr(m, name) <= 1.0


class TestMetricsRecord:
    def test_mean_and_sample_std(self):
        ms = [Metrics(a, 0, 0, 0, 0, 0, 0, 0) for a in (0.5, 0.7, 0.9)]
        rec = MetricsRecord([0, 1, 2], ms)
        assert rec.mean("accuracy") == pytest.approx(0.7)
        assert rec.std("accuracy") == pytest.approx(0.2)

    def test_single_repeat_std_zero(self):
        rec = MetricsRecord([0], [Metrics(1.0, 1.0, 1.0, 1.0, 1, 0, 0, 1)])
        assert rec.std("f1") == 0.0
        assert rec.to_dict()["mean"]["f1"] == 1.0


SMALL = SynthSpec(p=24, u=16, seed=3)
FAST = FitConfig(rank=3, restarts=1, max_iters=40)


@pytest.fixture(scope="module")
def data():
    t, labels, _ = generate_planted(SMALL)
    return t, labels


class TestRunExperiment:
    def test_separable_single_repeat(self, data):
        table = run_experiment(*data, FAST, seeds=[0])
        assert table["class-cp"].mean("accuracy") >= 0.95
        assert set(table) == {"class-cp", "cp-knn", "raw-centroid"}

    def test_deterministic(self, data):
        a = run_experiment(*data, FAST, seeds=[1, 2], methods=("class-cp", "cp-knn"))
        b = run_experiment(*data, FAST, seeds=[2, 1], methods=("class-cp", "cp-knn"), jobs=2)
        assert {m: r.to_dict() for m, r in a.items()} == {m: r.to_dict() for m, r in b.items()}

    def test_repeats_must_match_seeds(self, data):
        with pytest.raises(ValueError):
            run_experiment(*data, FAST, seeds=[0, 1], repeats=3)

    def test_unknown_method(self, data):
        with pytest.raises(ValueError):
            run_experiment(*data, FAST, seeds=[0], methods=("svm",))

    def test_table_rows(self, data):
        table = run_experiment(*data, FAST, seeds=[0], methods=("class-cp",))
        rows = list(table_rows(table))
        assert [r[1] for r in rows] == list(METRIC_NAMES)
