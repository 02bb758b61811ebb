"""Reading engagement / follower / label files and building the post tensor.

File formats (UTF-8, one tab-separated record per line, ``#`` comments and
blank lines ignored, trailing CR stripped):

* engagements: ``post_id<TAB>user_id``
* social links: ``follower_id<TAB>followee_id``
* labels: ``post_id<TAB>real|fake``

Ids are opaque strings. Internal indices are 0-based and assigned in sorted
id order, so the same set of records always yields the same indices.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng
from .tensor import SparseTensor3

LABEL_TOKENS = ("real", "fake")
REAL, FAKE = 0, 1
UNLABELED = -1


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


@dataclass(frozen=True)
class SocialGraph:
    """Directed follower graph; an edge ``(j, k)`` means user ``j`` follows user ``k``."""

    user_count: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.unique(edges, axis=0)
            if edges.min() < 0 or edges.max() >= self.user_count:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not allowed")
        object.__setattr__(self, "edges", edges)

    def degree(self) -> np.ndarray:
        """In-degree plus out-degree of every user."""
        return (np.bincount(self.edges[:, 0], minlength=self.user_count)
                + np.bincount(self.edges[:, 1], minlength=self.user_count))

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.user_count)


@dataclass(frozen=True)
class EngagementTable:
    """Pairs ``(i, k)``: user ``k`` engaged with post ``i``."""

    post_count: int
    pairs: np.ndarray
    user_count: int | None = None

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            pairs = np.unique(pairs, axis=0)
            if pairs.min() < 0 or pairs[:, 0].max() >= self.post_count:
                raise ValueError("engagement post index out of range")
            if self.user_count is not None and pairs[:, 1].max() >= self.user_count:
                raise ValueError("engagement user index out of range")
        object.__setattr__(self, "pairs", pairs)


@dataclass(frozen=True)
class DatasetBundle:
    graph: SocialGraph
    engagements: EngagementTable
    labels: np.ndarray  # class per post, UNLABELED where unknown
    post_ids: tuple[str, ...]
    user_ids: tuple[str, ...]
    _post_index: dict = field(default=None, repr=False, compare=False)
    _user_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(self.post_ids):
            raise ValueError("labels must have one entry per post")
        if self.graph.user_count != len(self.user_ids):
            raise ValueError("graph user count disagrees with user id map")
        if self.engagements.post_count != len(self.post_ids):
            raise ValueError("engagement post count disagrees with post id map")
        post_index = {pid: i for i, pid in enumerate(self.post_ids)}
        user_index = {uid: i for i, uid in enumerate(self.user_ids)}
        if len(post_index) != len(self.post_ids) or len(user_index) != len(self.user_ids):
            raise ValueError("id maps must be bijections")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "post_ids", tuple(self.post_ids))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "_post_index", post_index)
        object.__setattr__(self, "_user_index", user_index)

    @property
    def post_count(self) -> int:
        return len(self.post_ids)

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    def post_index(self, post_id: str) -> int:
        return self._post_index[post_id]

    def user_index(self, user_id: str) -> int:
        return self._user_index[user_id]

    def same_as(self, other: "DatasetBundle") -> bool:
        return (
            self.post_ids == other.post_ids
            and self.user_ids == other.user_ids
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.graph.edges, other.graph.edges)
            and np.array_equal(self.engagements.pairs, other.engagements.pairs)
        )


def _read_records(path):
    """Yield ``(lineno, first, second)`` for every data line of a two-column file."""
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise ParseError(path, lineno, f"expected two tab-separated fields, got {line!r}")
            yield lineno, fields[0], fields[1]


def parse_bundle(engagements_path, links_path, labels_path) -> DatasetBundle:
    """Read the three input files into a densely reindexed bundle.

    Posts are every id seen in the engagement or label file; users every id
    seen in the engagement or links file. Duplicate records collapse and
    self-follow links are dropped.
    """
    engagements = {(p, u) for _, p, u in _read_records(engagements_path)}
    links = {(a, b) for _, a, b in _read_records(links_path) if a != b}
    labels: dict[str, int] = {}
    for lineno, post, token in _read_records(labels_path):
        if token not in LABEL_TOKENS:
            raise ParseError(labels_path, lineno, f"unknown label {token!r}")
        cls = LABEL_TOKENS.index(token)
        if labels.setdefault(post, cls) != cls:
            raise ParseError(labels_path, lineno, f"conflicting label for post {post!r}")

    post_ids = sorted({p for p, _ in engagements} | set(labels))
    user_ids = sorted({u for _, u in engagements} | {x for pair in links for x in pair})
    pidx = {p: i for i, p in enumerate(post_ids)}
    uidx = {u: i for i, u in enumerate(user_ids)}

    label_arr = np.full(len(post_ids), UNLABELED, dtype=np.int64)
    for post, cls in labels.items():
        label_arr[pidx[post]] = cls
    graph = SocialGraph(len(user_ids), [(uidx[a], uidx[b]) for a, b in links])
    table = EngagementTable(len(post_ids), [(pidx[p], uidx[u]) for p, u in engagements],
                            len(user_ids))
    return DatasetBundle(graph, table, label_arr, tuple(post_ids), tuple(user_ids))


def write_bundle(bundle: DatasetBundle, directory) -> dict[str, str]:
    """Write ``bundle`` as engagements.tsv, links.tsv and labels.tsv; return the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, f"{name}.tsv")
             for name in ("engagements", "links", "labels")}
    pid, uid = bundle.post_ids, bundle.user_ids
    with open(paths["engagements"], "w", encoding="utf-8", newline="\n") as fh:
        for i, k in bundle.engagements.pairs:
            fh.write(f"{pid[i]}\t{uid[k]}\n")
    with open(paths["links"], "w", encoding="utf-8", newline="\n") as fh:
        for j, k in bundle.graph.edges:
            fh.write(f"{uid[j]}\t{uid[k]}\n")
    with open(paths["labels"], "w", encoding="utf-8", newline="\n") as fh:
        for i, cls in enumerate(bundle.labels):
            if cls != UNLABELED:
                fh.write(f"{pid[i]}\t{LABEL_TOKENS[cls]}\n")
    return paths


def filter_min_degree(bundle: DatasetBundle, min_degree: int,
                      single_pass: bool = False) -> DatasetBundle:
    """Drop users whose follower-graph degree (in + out) is below ``min_degree``.

    By default removal repeats until no remaining user is below the threshold.
    With ``single_pass`` only users failing the threshold on the original
    graph are removed. Posts are always kept; surviving users are reindexed
    in their original relative order.
    """
    if min_degree < 0:
        raise ValueError("min_degree must be non-negative")
    n = bundle.user_count
    alive = np.ones(n, dtype=bool)
    edges = bundle.graph.edges
    while True:
        live_edges = edges[alive[edges[:, 0]] & alive[edges[:, 1]]] if len(edges) else edges
        deg = (np.bincount(live_edges[:, 0], minlength=n)
               + np.bincount(live_edges[:, 1], minlength=n))
        drop = alive & (deg < min_degree)
        if not drop.any():
            break
        alive &= ~drop
        if single_pass:
            break

    new_index = np.cumsum(alive) - 1
    keep_edges = edges[alive[edges[:, 0]] & alive[edges[:, 1]]] if len(edges) else edges
    pairs = bundle.engagements.pairs
    keep_pairs = pairs[alive[pairs[:, 1]]] if len(pairs) else pairs
    user_ids = tuple(u for u, ok in zip(bundle.user_ids, alive) if ok)
    graph = SocialGraph(len(user_ids), new_index[keep_edges] if len(keep_edges) else keep_edges)
    table = EngagementTable(
        bundle.post_count,
        np.column_stack([keep_pairs[:, 0], new_index[keep_pairs[:, 1]]]) if len(keep_pairs)
        else keep_pairs,
        len(user_ids),
    )
    return DatasetBundle(graph, table, bundle.labels.copy(), bundle.post_ids, user_ids)


def tensor_from_parts(post_count: int, user_count: int, engagement_pairs, edges) -> SparseTensor3:
    """Entry ``(i, j, k)`` exists iff user ``k`` engaged with post ``i`` and ``j`` follows ``k``."""
    pairs = np.asarray(engagement_pairs, dtype=np.int64).reshape(-1, 2)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    shape = (post_count, user_count, user_count)
    if not len(pairs) or not len(edges):
        return SparseTensor3(shape, np.zeros((0, 3), dtype=np.int64))

    # group followers by followee
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    followers = edges[order, 0]
    followee = edges[order, 1]
    users = np.arange(user_count)
    start = np.searchsorted(followee, users, side="left")
    count = np.searchsorted(followee, users, side="right") - start

    reps = count[pairs[:, 1]]
    total = int(reps.sum())
    post = np.repeat(pairs[:, 0], reps)
    target = np.repeat(pairs[:, 1], reps)
    offset = np.arange(total) - np.repeat(np.cumsum(reps) - reps, reps)
    follower = followers[np.repeat(start[pairs[:, 1]], reps) + offset]
    return SparseTensor3.from_coords(shape, np.column_stack([post, follower, target]))


def build_tensor(bundle: DatasetBundle) -> SparseTensor3:
    return tensor_from_parts(bundle.post_count, bundle.user_count,
                             bundle.engagements.pairs, bundle.graph.edges)


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    train_fraction: float


def make_split(labels, train_fraction: float, seed: int) -> SplitPlan:
    """Seeded class-stratified train/test split of the labeled posts.

    ``labels`` is a :class:`DatasetBundle` or an array of class ids with
    ``UNLABELED`` marking posts that take part in neither side. Each class
    contributes ``round(train_fraction * n_class)`` posts (halves round up)
    to the training side.
    """
    if isinstance(labels, DatasetBundle):
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labeled = labels[labels != UNLABELED]
    class_count = max(len(LABEL_TOKENS), int(labeled.max()) + 1 if len(labeled) else 0)
    rng = derive_rng(seed, "split")
    train, test = [], []
    for cls in range(class_count):
        members = np.flatnonzero(labels == cls)
        if len(members) == 0:
            raise ValueError(f"class {cls} has no labeled posts")
        members = rng.permutation(members)
        n_train = math.floor(train_fraction * len(members) + 0.5)
        train.append(members[:n_train])
        test.append(members[n_train:])
    return SplitPlan(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)),
                     seed, train_fraction)
