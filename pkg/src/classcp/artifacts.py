"""Plain-text artifact files written and read by the command line tool.

* tensor: header ``p u1 u2 nnz`` then one ``i<TAB>j<TAB>k`` line per entry,
  in sorted order.
* matrix: header ``rows cols`` then one tab-separated row per line. Floats
  use Python's shortest round-trip repr, so reading back is exact.
* index labels: ``post_index<TAB>real|fake`` for labeled posts only.
* id map: ``index<TAB>external_id``.
"""

from __future__ import annotations

import json

import numpy as np

from .ingestion import LABEL_TOKENS, UNLABELED
from .tensor import SparseTensor3


def open_text(path):
    return open(path, "w", encoding="utf-8", newline="\n")


def write_tensor(t: SparseTensor3, path) -> None:
    with open_text(path) as fh:
        p, u1, u2 = t.shape
        fh.write(f"{p} {u1} {u2} {t.nnz}\n")
        for i, j, k in t.coords.tolist():
            fh.write(f"{i}\t{j}\t{k}\n")


def read_tensor(path) -> SparseTensor3:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}: tensor header must be 'p u1 u2 nnz'")
        p, u1, u2, nnz = (int(x) for x in header)
        coords = np.loadtxt(fh, dtype=np.int64, ndmin=2, delimiter="\t")
    coords = coords.reshape(-1, 3)
    if len(coords) != nnz:
        raise ValueError(f"{path}: header announces {nnz} entries, found {len(coords)}")
    return SparseTensor3((p, u1, u2), coords)


def write_matrix(m, path) -> None:
    m = np.asarray(m, dtype=float)
    with open_text(path) as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m.tolist():
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows, cols = (int(x) for x in fh.readline().split())
        values = [[float(x) for x in line.rstrip("\n").split("\t")]
                  for line in fh if line.strip()]
    m = np.array(values, dtype=float).reshape(rows, cols)
    return m


def write_index_labels(labels, path) -> None:
    with open_text(path) as fh:
        for i, cls in enumerate(np.asarray(labels).tolist()):
            if cls != UNLABELED:
                fh.write(f"{i}\t{LABEL_TOKENS[cls]}\n")


def read_index_labels(path, post_count: int) -> np.ndarray:
    labels = np.full(post_count, UNLABELED, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            idx, token = line.split("\t")
            if token not in LABEL_TOKENS:
                raise ValueError(f"{path}:{lineno}: unknown label {token!r}")
            labels[int(idx)] = LABEL_TOKENS.index(token)
    return labels


def write_id_map(ids, path) -> None:
    with open_text(path) as fh:
        for i, ext in enumerate(ids):
            fh.write(f"{i}\t{ext}\n")


def write_json(obj, path) -> None:
    with open_text(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
