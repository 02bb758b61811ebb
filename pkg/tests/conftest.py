import numpy as np
import pytest

from classcp.factorization import LabelBlock
from classcp.ingestion import UNLABELED, DatasetBundle, EngagementTable, SocialGraph
from classcp.tensor import SparseTensor3


def random_tensor(rng, p, u, density=0.4, min_nnz=1):
    dense = (rng.random((p, u, u)) < density).astype(float)
    while dense.sum() < min_nnz:
        dense[tuple(rng.integers(0, s) for s in dense.shape)] = 1.0
    return SparseTensor3.from_dense(dense)


def random_labels(rng, p, l, c=2):
    idx = np.sort(rng.choice(p, size=l, replace=False))
    return LabelBlock.from_classes(idx, rng.integers(0, c, size=l), c)


def planted_rank2():
    """10 x 8 x 8 binary tensor equal to a sum of two disjoint binary rank-one terms."""
    a = np.zeros((10, 2))
    a[:5, 0] = 1
    a[5:, 1] = 1
    b = np.zeros((8, 2))
    b[:4, 0] = 1
    b[3:, 1] = 1
    c = np.zeros((8, 2))
    c[[0, 2, 4], 0] = 1
    c[[1, 2, 7], 1] = 1
    dense = np.einsum("ir,jr,kr->ijk", a, b, c)
    assert dense.max() == 1
    return SparseTensor3.from_dense(dense), (a, b, c)


def dense_unfold(dense, mode):
    """Textbook unfolding: move the mode to the front, flatten the rest column-major."""
    n = mode - 1
    return np.reshape(np.moveaxis(dense, n, 0), (dense.shape[n], -1), order="F")


def dense_update_a(t, fs, w, lb, lambda_g, ridge):
    """Joint A-update built literally from the Kronecker-structured normal equations."""
    p, r = fs.a.shape
    dense = t.to_dense()
    z = np.stack([np.kron(fs.c[:, q], fs.b[:, q]) for q in range(r)], axis=1)
    g = np.kron(z, np.eye(p))
    d = np.zeros((lb.size, p))
    d[np.arange(lb.size), lb.indices] = 1.0
    lmat = np.kron(w.w.T, d)
    lhs = g.T @ g + lambda_g * lmat.T @ lmat + ridge * np.eye(p * r)
    rhs = g.T @ dense_unfold(dense, 1).reshape(-1, order="F") + lambda_g * lmat.T @ lb.y.reshape(-1, order="F")
    return np.linalg.solve(lhs, rhs).reshape(p, r, order="F")


def bundle_from(edges, user_count, pairs=(), post_count=1, labels=None):
    labels = np.full(post_count, UNLABELED) if labels is None else labels
    return DatasetBundle(
        SocialGraph(user_count, list(edges)),
        EngagementTable(post_count, list(pairs), user_count),
        labels,
        tuple(f"p{i}" for i in range(post_count)),
        tuple(f"u{k}" for k in range(user_count)),
    )


def random_graph_bundle(rng, n_users=12, n_posts=5, density=0.2):
    adj = rng.random((n_users, n_users)) < density
    np.fill_diagonal(adj, False)
    eng = rng.random((n_posts, n_users)) < 0.3
    return bundle_from(np.argwhere(adj), n_users, np.argwhere(eng), n_posts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
