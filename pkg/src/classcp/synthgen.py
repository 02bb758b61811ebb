"""Synthetic social tensors with planted community and class structure.

Users are split into contiguous, equally sized communities. Follower edges
appear with probability ``within_prob`` inside a community and
``across_prob`` between communities. Class ``m`` is tied to community ``m``
(communities beyond the class count never engage): a post of class ``m`` is
engaged by each member of community ``m`` with probability ``engage_prob``.
The tensor then follows the usual rule, entry ``(i, j, k)`` iff ``k`` engaged
with ``i`` and ``j`` follows ``k``.

Noise flips tensor entries with probability ``noise_flip_prob``, restricted
to followers with at least one outgoing edge and followees with at least one
engagement. It perturbs the tensor only; the bundle written to disk is the
noiseless graph and engagement data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorization import FactorSet
from .ingestion import DatasetBundle, EngagementTable, SocialGraph, build_tensor
from .seeding import derive_rng
from .tensor import SparseTensor3


@dataclass(frozen=True)
class SynthSpec:
    p: int = 60
    u: int = 40
    rank: int = 2
    classes: int = 2
    noise_flip_prob: float = 0.0
    community_count: int = 2
    seed: int = 0
    within_prob: float = 0.8
    across_prob: float = 0.05
    engage_prob: float = 0.3

    def __post_init__(self):
        if self.p < 1 or self.u < 2:
            raise ValueError("need at least one post and two users")
        if self.classes < 1:
            raise ValueError("classes must be at least 1")
        if self.community_count < self.classes:
            raise ValueError("community_count must be at least the number of classes")
        if self.u < self.community_count:
            raise ValueError("more communities than users")
        if self.rank < self.classes:
            raise ValueError("rank must be at least the number of classes")
        for name in ("noise_flip_prob", "within_prob", "across_prob", "engage_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


def communities(spec: SynthSpec) -> np.ndarray:
    """Community id of every user (contiguous blocks, sizes differ by at most one)."""
    return np.arange(spec.u) * spec.community_count // spec.u


def planted_bundle(spec: SynthSpec) -> DatasetBundle:
    """Noiseless follower graph, engagements and labels for ``spec``."""
    comm = communities(spec)
    rng = derive_rng(spec.seed, "synth", "graph")
    same = comm[:, None] == comm[None, :]
    prob = np.where(same, spec.within_prob, spec.across_prob)
    follows = rng.random((spec.u, spec.u)) < prob
    np.fill_diagonal(follows, False)

    rng = derive_rng(spec.seed, "synth", "labels")
    labels = rng.permutation(np.arange(spec.p) % spec.classes)

    rng = derive_rng(spec.seed, "synth", "engagements")
    engaged = (rng.random((spec.p, spec.u)) < spec.engage_prob) & (
        labels[:, None] == comm[None, :]
    )

    width_p = len(str(spec.p - 1))
    width_u = len(str(spec.u - 1))
    post_ids = tuple(f"post{i:0{width_p}d}" for i in range(spec.p))
    user_ids = tuple(f"user{k:0{width_u}d}" for k in range(spec.u))
    return DatasetBundle(
        SocialGraph(spec.u, np.argwhere(follows)),
        EngagementTable(spec.p, np.argwhere(engaged), spec.u),
        labels,
        post_ids,
        user_ids,
    )


def _flip_noise(t: SparseTensor3, bundle: DatasetBundle, prob: float, seed: int) -> SparseTensor3:
    if prob == 0:
        return t
    rows = np.unique(bundle.graph.edges[:, 0])
    cols = np.unique(bundle.engagements.pairs[:, 1])
    dense = t.to_dense()
    rng = derive_rng(seed, "synth", "noise")
    flips = rng.random((t.shape[0], len(rows), len(cols))) < prob
    block = dense[:, rows[:, None], cols[None, :]]
    dense[:, rows[:, None], cols[None, :]] = np.where(flips, 1.0 - block, block)
    return SparseTensor3.from_dense(dense)


def truth_factors(spec: SynthSpec) -> FactorSet:
    """Rank-``rank`` factors of the expected (noiseless) tensor.

    Column ``m < classes`` carries class ``m``: posts of that class in ``a``,
    follow probabilities towards community ``m`` in ``b`` and the engagement
    probability of community ``m`` members in ``c``. Extra columns are zero.
    The diagonal (self-follow) cells are not excluded.
    """
    comm = communities(spec)
    labels = planted_bundle(spec).labels
    a = np.zeros((spec.p, spec.rank))
    b = np.zeros((spec.u, spec.rank))
    c = np.zeros((spec.u, spec.rank))
    for m in range(spec.classes):
        a[labels == m, m] = 1.0
        b[:, m] = np.where(comm == m, spec.within_prob, spec.across_prob)
        c[comm == m, m] = spec.engage_prob
    return FactorSet(a, b, c)


def generate_planted(spec: SynthSpec) -> tuple[SparseTensor3, np.ndarray, FactorSet]:
    """Tensor, full label vector and ground-truth factors for ``spec``."""
    bundle = planted_bundle(spec)
    t = _flip_noise(build_tensor(bundle), bundle, spec.noise_flip_prob, spec.seed)
    return t, bundle.labels.copy(), truth_factors(spec)
