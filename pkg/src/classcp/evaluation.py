"""Predictions, baselines, metrics and the repeated-split experiment driver.

Class 1 (fake news) is the positive class for precision and recall.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .factorization import CoeffMatrix, FactorSet, FitConfig, LabelBlock, fit_class_cp, fit_cp
from .ingestion import FAKE, UNLABELED, make_split
from .tensor import SparseTensor3, matricize

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")
METHODS = ("class-cp", "cp-knn", "raw-centroid")


@dataclass(frozen=True)
class PredictionSet:
    indices: np.ndarray
    classes: np.ndarray
    scores: np.ndarray  # one row per post; larger is better
    ties: np.ndarray  # True where the winning score was shared


def _argmax_lowest(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    best = scores.max(axis=1, keepdims=True)
    winners = scores == best
    return winners.argmax(axis=1), winners.sum(axis=1) > 1


def predict_classcp(fs: FactorSet, w: CoeffMatrix, posts) -> PredictionSet:
    """Class scores ``a_i W`` for the requested posts; ties go to the lower class."""
    posts = np.asarray(posts, dtype=np.int64).reshape(-1)
    if len(posts) and (posts.min() < 0 or posts.max() >= fs.a.shape[0]):
        raise IndexError("post index out of range")
    scores = fs.a[posts] @ w.w
    classes, ties = _argmax_lowest(scores) if len(posts) else (
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))
    return PredictionSet(posts, classes, scores, ties)


def knn_k(train_size: int) -> int:
    """Neighbourhood size ``ceil(sqrt(n))`` for ``n`` training points."""
    return max(1, math.ceil(math.sqrt(train_size)))


def knn_classify(train_embeddings, train_labels, test_embeddings, k: int,
                 test_indices=None, class_count: int = 2) -> PredictionSet:
    """Majority vote among the ``k`` Euclidean-nearest training rows.

    Equal distances are ordered by training index. A tied vote goes to the
    class with the smaller total distance over its voters, then to the lower
    class id. Scores hold the vote counts.
    """
    train = np.asarray(train_embeddings, dtype=float)
    test = np.asarray(test_embeddings, dtype=float)
    labels = np.asarray(train_labels, dtype=np.int64)
    if len(train) == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= len(train):
        raise ValueError(f"k must lie in [1, {len(train)}], got {k}")
    class_count = max(class_count, int(labels.max()) + 1)
    dist = np.sqrt(np.maximum(
        (test * test).sum(1)[:, None] - 2 * test @ train.T + (train * train).sum(1)[None, :],
        0.0,
    ))
    n = len(test)
    classes = np.zeros(n, dtype=np.int64)
    votes = np.zeros((n, class_count))
    ties = np.zeros(n, dtype=bool)
    for row in range(n):
        nearest = np.argsort(dist[row], kind="stable")[:k]
        counts = np.bincount(labels[nearest], minlength=class_count)
        votes[row] = counts
        top = np.flatnonzero(counts == counts.max())
        if len(top) > 1:
            ties[row] = True
            summed = [dist[row, nearest[labels[nearest] == cls]].sum() for cls in top]
            top = top[[int(np.argmin(summed))]]  # first minimum is the lower class
        classes[row] = top[0]
    idx = np.arange(n) if test_indices is None else np.asarray(test_indices, dtype=np.int64)
    return PredictionSet(idx, classes, votes, ties)


def nearest_centroid_classify(train_features, train_labels, test_features,
                              test_indices=None, class_count: int = 2) -> PredictionSet:
    """Assign each test row to the class whose mean training row is closest.

    Features may be dense arrays or scipy sparse matrices. Scores are negated
    squared distances so that larger is better.
    """
    labels = np.asarray(train_labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty training set")
    if sp.issparse(train_features):
        train = sp.csr_matrix(train_features)
        test = sp.csr_matrix(test_features)
        onehot = sp.csr_matrix((np.ones(len(labels)), (labels, np.arange(len(labels)))),
                               shape=(class_count, len(labels)))
        sizes = np.maximum(np.asarray(onehot.sum(axis=1)).ravel(), 1)
        centroids = np.asarray((onehot @ train).todense()) / sizes[:, None]
        test_sq = np.asarray(test.multiply(test).sum(axis=1)).ravel()
        cross = np.asarray(test @ centroids.T)
    else:
        train = np.asarray(train_features, dtype=float)
        test = np.asarray(test_features, dtype=float)
        centroids = np.stack([
            train[labels == cls].mean(axis=0) if np.any(labels == cls)
            else np.zeros(train.shape[1])
            for cls in range(class_count)
        ])
        test_sq = (test * test).sum(axis=1)
        cross = test @ centroids.T
    sq = test_sq[:, None] - 2 * cross + (centroids * centroids).sum(axis=1)[None, :]
    present = np.bincount(labels, minlength=class_count) > 0
    scores = np.where(present[None, :], -sq, -np.inf)
    classes, ties = _argmax_lowest(scores)
    n = scores.shape[0]
    idx = np.arange(n) if test_indices is None else np.asarray(test_indices, dtype=np.int64)
    return PredictionSet(idx, classes, scores, ties)


@dataclass(frozen=True)
class Metrics:
    """Binary metrics for one prediction set, with the confusion counts behind them.

    A ratio with a zero denominator is reported as 0 and listed in ``undefined``.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def compute_metrics(pred: PredictionSet, truth, truth_indices=None,
                    positive: int = FAKE) -> Metrics:
    """Accuracy, precision, recall and F1 of ``pred`` against ``truth``.

    ``truth`` is aligned with ``pred.indices``; pass ``truth_indices`` to have
    the alignment checked.
    """
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if truth_indices is not None and not np.array_equal(
        np.asarray(truth_indices, dtype=np.int64), pred.indices
    ):
        raise ValueError("prediction and truth cover different posts")
    if len(truth) != len(pred.classes):
        raise ValueError("prediction and truth differ in length")
    pos_pred = pred.classes == positive
    pos_true = truth == positive
    tp = int(np.sum(pos_pred & pos_true))
    fp = int(np.sum(pos_pred & ~pos_true))
    fn = int(np.sum(~pos_pred & pos_true))
    tn = int(np.sum(~pos_pred & ~pos_true))
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    total = tp + fp + fn + tn
    accuracy = ratio(tp + tn, total, "accuracy")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return Metrics(accuracy, precision, recall, f1, tp, fp, fn, tn, tuple(undefined))


@dataclass
class MetricsRecord:
    """Metrics of one method over repeated splits, keyed by seed."""

    seeds: list[int] = field(default_factory=list)
    repeats: list[Metrics] = field(default_factory=list)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.repeats])

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name))) if self.repeats else 0.0

    def std(self, name: str) -> float:
        """Sample standard deviation; 0 for fewer than two repeats."""
        if len(self.repeats) < 2:
            return 0.0
        return float(np.std(self.values(name), ddof=1))

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "mean": {n: self.mean(n) for n in METRIC_NAMES},
            "std": {n: self.std(n) for n in METRIC_NAMES},
            "repeats": [m.to_dict() for m in self.repeats],
        }


def _one_repeat(t: SparseTensor3, labels: np.ndarray, cfg: FitConfig, seed: int,
                train_fraction: float, methods, unfolded) -> dict[str, Metrics]:
    split = make_split(labels, train_fraction, seed)
    train, test = split.train_indices, split.test_indices
    run_cfg = replace(cfg, seed=seed)
    truth = labels[test]
    out = {}
    if "class-cp" in methods:
        lb = LabelBlock.from_classes(train, labels[train])
        fs, w, _ = fit_class_cp(t, lb, run_cfg)
        out["class-cp"] = compute_metrics(predict_classcp(fs, w, test), truth)
    if "cp-knn" in methods:
        fs, _ = fit_cp(t, run_cfg)
        pred = knn_classify(fs.a[train], labels[train], fs.a[test], knn_k(len(train)),
                            test_indices=test)
        out["cp-knn"] = compute_metrics(pred, truth)
    if "raw-centroid" in methods:
        pred = nearest_centroid_classify(unfolded[train], labels[train], unfolded[test],
                                         test_indices=test)
        out["raw-centroid"] = compute_metrics(pred, truth)
    return out


def run_experiment(t: SparseTensor3, labels, cfg: FitConfig = FitConfig(), seeds=range(10),
                   repeats: int | None = None, train_fraction: float = 0.8,
                   methods=METHODS, jobs: int = 1) -> dict[str, MetricsRecord]:
    """Repeat split -> fit -> predict for every seed and collect metrics per method.

    CLASS-CP is fit transductively on the whole tensor with only the training
    labels, and test posts are scored from their learned rows of A. The
    CP + k-NN baseline fits plain CP and votes among ``ceil(sqrt(n_train))``
    neighbours in A. The raw-centroid baseline uses rows of the mode-1
    unfolding directly.
    """
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    seeds = sorted(int(s) for s in seeds)
    if repeats is not None and repeats != len(seeds):
        raise ValueError(f"{repeats} repeats requested but {len(seeds)} seeds given")
    if len(labels) != t.shape[0]:
        raise ValueError("label vector length differs from the post count")
    if not np.any(labels != UNLABELED):
        raise ValueError("no labeled posts")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    unfolded = matricize(t, 1) if "raw-centroid" in methods else None

    def job(seed):
        return _one_repeat(t, labels, cfg, seed, train_fraction, methods, unfolded)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(s) for s in seeds]
    table = {m: MetricsRecord() for m in methods}
    for seed, res in zip(seeds, results):
        for m in methods:
            table[m].seeds.append(seed)
            table[m].repeats.append(res[m])
    return table


def learning_curve(t: SparseTensor3, labels, cfg: FitConfig = FitConfig(),
                   fractions=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8), seeds=range(5),
                   methods=("class-cp",), jobs: int = 1) -> dict[float, dict[str, MetricsRecord]]:
    """:func:`run_experiment` at each labeled fraction."""
    return {
        float(frac): run_experiment(t, labels, cfg, seeds, train_fraction=frac,
                                    methods=methods, jobs=jobs)
        for frac in fractions
    }


def table_rows(table: dict[str, MetricsRecord]):
    """Flatten a metrics table into ``(method, metric, mean, std, values)`` rows."""
    for method, record in table.items():
        for name in METRIC_NAMES:
            yield method, name, record.mean(name), record.std(name), list(record.values(name))
