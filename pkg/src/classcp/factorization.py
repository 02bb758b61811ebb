"""CP-ALS and the label-aware CLASS-CP procedure.

CLASS-CP minimizes

    f(A, B, C) + g(A, W) = ||T - [[A, B, C]]||^2 + lambda_g ||Y - D A W||^2

by cycling exact block updates A -> B -> C -> W until the relative change of
``f + g`` drops below a tolerance. ``D`` selects the labeled posts. Plain
CP-ALS is the same loop without the label term and without ``W``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng
from .tensor import DEFAULT_RIDGE, SingularMatrixError, SparseTensor3, gram_solve, mttkrp


@dataclass(frozen=True)
class FactorSet:
    """Factor matrices of a rank-``r`` CP model: posts ``a``, followers ``b``, followees ``c``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ValueError(f"factor {name} must be 2-D")
            object.__setattr__(self, name, arr)
        if not self.a.shape[1] == self.b.shape[1] == self.c.shape[1]:
            raise ValueError("factor matrices must share the same rank")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def full(self) -> np.ndarray:
        """Dense reconstruction ``sum_r a_r o b_r o c_r``. Only for small problems."""
        return np.einsum("ir,jr,kr->ijk", self.a, self.b, self.c)


@dataclass(frozen=True)
class CoeffMatrix:
    """Regression coefficients ``w`` (rank x classes) mapping post factors to class scores."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            raise ValueError("coefficient matrix must be 2-D")
        object.__setattr__(self, "w", w)

    @property
    def class_count(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class LabelBlock:
    """Labeled posts: strictly increasing ``indices`` and one-hot rows ``y``."""

    indices: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2 or y.shape[0] != len(idx):
            raise ValueError("y must have one row per labeled index")
        if len(idx) and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("labeled indices must be non-negative and strictly increasing")
        if len(idx) and not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise ValueError("every label row must be one-hot")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_classes(cls, indices, classes, class_count: int = 2) -> "LabelBlock":
        """Build from post indices and integer class ids, sorting by index."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        classes = np.asarray(classes, dtype=np.int64).reshape(-1)
        if len(indices) != len(classes):
            raise ValueError("indices and classes differ in length")
        if len(classes) and (classes.min() < 0 or classes.max() >= class_count):
            raise ValueError(f"class ids must lie in [0, {class_count})")
        order = np.argsort(indices, kind="stable")
        y = np.zeros((len(indices), class_count))
        y[np.arange(len(indices)), classes[order]] = 1.0
        return cls(indices[order], y)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def class_count(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class FitConfig:
    rank: int = 5
    lambda_g: float = 1.0
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0
    restarts: int = 5
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass(frozen=True)
class IterationRecord:
    f: float
    g: float
    relative_change: float

    @property
    def objective(self) -> float:
        return self.f + self.g


@dataclass
class FitReport:
    """Per-iteration trace of one fit (the best restart when several were run).

    ``initial`` holds the objective at the starting point. ``converged`` is
    true when the last relative change fell below the tolerance, or when the
    starting objective was already zero (in which case no iterations run).
    """

    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    initial: IterationRecord | None = None
    restart: int = 0
    restart_objectives: list[float] = field(default_factory=list)
    tensor_norm_sq: float = 0.0

    @property
    def iterations_run(self) -> int:
        return len(self.records)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1] if self.records else self.initial

    @property
    def final_objective(self) -> float:
        return self.final.objective

    @property
    def relative_error(self) -> float:
        """Final reconstruction error ``f`` divided by ``||T||^2``."""
        if self.tensor_norm_sq == 0:
            return 0.0
        return self.final.f / self.tensor_norm_sq

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations_run": self.iterations_run,
            "restart": self.restart,
            "restart_objectives": list(self.restart_objectives),
            "final_objective": self.final_objective,
            "final_f": self.final.f,
            "final_g": self.final.g,
            "relative_error": self.relative_error,
            "initial": {"f": self.initial.f, "g": self.initial.g},
            "iterations": [
                {"f": r.f, "g": r.g, "relative_change": r.relative_change}
                for r in self.records
            ],
        }


def _check_factors(t: SparseTensor3, fs: FactorSet):
    p, u1, u2 = t.shape
    if fs.a.shape[0] != p or fs.b.shape[0] != u1 or fs.c.shape[0] != u2:
        raise ValueError(
            f"factor shapes {fs.a.shape}, {fs.b.shape}, {fs.c.shape} "
            f"do not match tensor shape {t.shape}"
        )


def _check_labels(fs: FactorSet, w: CoeffMatrix | None, lb: LabelBlock | None):
    if lb is not None and lb.size and lb.indices[-1] >= fs.a.shape[0]:
        raise ValueError("labeled index out of range for factor A")
    if w is not None:
        if w.w.shape[0] != fs.rank:
            raise ValueError(f"W has {w.w.shape[0]} rows, expected rank {fs.rank}")
        if lb is not None and w.class_count != lb.class_count:
            raise ValueError("W and Y disagree on the number of classes")


def objective_f(t: SparseTensor3, fs: FactorSet) -> float:
    """``||T - [[A, B, C]]||^2`` evaluated from the sparse entries and factor Grams."""
    _check_factors(t, fs)
    a, b, c = fs.a, fs.b, fs.c
    if t.nnz:
        i, j, k = t.coords.T
        inner = float(np.sum(a[i] * b[j] * c[k]))
    else:
        inner = 0.0
    model_sq = float(np.sum((a.T @ a) * (b.T @ b) * (c.T @ c)))
    return max(t.norm_sq() - 2.0 * inner + model_sq, 0.0)


def objective_g(fs: FactorSet, w: CoeffMatrix, lb: LabelBlock, lambda_g: float) -> float:
    """``lambda_g * ||Y - D A W||^2`` over the labeled rows of A."""
    _check_labels(fs, w, lb)
    if lambda_g == 0 or lb.size == 0:
        return 0.0
    resid = lb.y - fs.a[lb.indices] @ w.w
    return float(lambda_g * np.sum(resid * resid))


def update_a(
    t: SparseTensor3,
    fs: FactorSet,
    w: CoeffMatrix | None = None,
    lb: LabelBlock | None = None,
    lambda_g: float = 1.0,
    ridge: float = DEFAULT_RIDGE,
) -> np.ndarray:
    """Exact minimizer of the joint objective over the post factor A.

    The normal equations of the vectorized problem split into one ``r x r``
    system per post: unlabeled rows see only the CP Gram, labeled rows also
    see ``lambda_g * W W^T`` on the left and ``lambda_g * y_i W^T`` on the right.
    """
    _check_factors(t, fs)
    _check_labels(fs, w, lb)
    b, c = fs.b, fs.c
    gram = (c.T @ c) * (b.T @ b)
    m = mttkrp(t, b, c, 1)
    a = gram_solve(gram, m, ridge)
    if w is None or lb is None or lb.size == 0 or lambda_g == 0:
        return a
    ww = w.w
    system = gram + lambda_g * (ww @ ww.T)
    rhs = m[lb.indices] + lambda_g * (lb.y @ ww.T)
    a[lb.indices] = gram_solve(system, rhs, ridge)
    return a


def update_b(t: SparseTensor3, fs: FactorSet, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    _check_factors(t, fs)
    a, c = fs.a, fs.c
    return gram_solve((c.T @ c) * (a.T @ a), mttkrp(t, a, c, 2), ridge)


def update_c(t: SparseTensor3, fs: FactorSet, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    _check_factors(t, fs)
    a, b = fs.a, fs.b
    return gram_solve((b.T @ b) * (a.T @ a), mttkrp(t, a, b, 3), ridge)


def update_w(fs: FactorSet, lb: LabelBlock, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Least-squares coefficients for ``Y ~ (D A) W``. Independent of ``lambda_g``."""
    if lb.size == 0:
        raise ValueError("update_w needs at least one labeled post")
    _check_labels(fs, None, lb)
    da = fs.a[lb.indices]
    return gram_solve(da.T @ da, lb.y.T @ da, ridge).T


def relative_change(f_old: float, g_old: float, f_new: float, g_new: float) -> float:
    """``|(f_new + g_new) - (f_old + g_old)| / (f_old + g_old)``.

    A zero old objective gives 0 if the new one is also zero, else ``inf``.
    """
    old = f_old + g_old
    new = f_new + g_new
    if old == 0:
        return 0.0 if new == 0 else math.inf
    return abs(new - old) / old


def _initial_factors(shape, rank: int, seed: int, restart: int) -> FactorSet:
    p, u1, u2 = shape
    rng = derive_rng(seed, "init", restart)
    a = rng.random((p, rank))
    b = rng.random((u1, rank))
    c = rng.random((u2, rank))
    return FactorSet(a, b, c)


def _block(name, fn, *args):
    try:
        return fn(*args)
    except SingularMatrixError as exc:
        exc.block = name
        raise


def _run(t, lb, cfg: FitConfig, restart: int):
    supervised = lb is not None
    fs = _initial_factors(t.shape, cfg.rank, cfg.seed, restart)
    w = None
    if supervised:
        if lb.size:
            w = CoeffMatrix(_block("update_w", update_w, fs, lb, cfg.ridge))
        else:
            w = CoeffMatrix(np.zeros((cfg.rank, lb.class_count)))

    def objective(fs, w):
        f = objective_f(t, fs)
        g = objective_g(fs, w, lb, cfg.lambda_g) if supervised else 0.0
        return f, g

    f_old, g_old = objective(fs, w)
    report = FitReport(initial=IterationRecord(f_old, g_old, 0.0), restart=restart,
                       tensor_norm_sq=t.norm_sq())
    if f_old + g_old == 0:
        report.converged = True
        return fs, w, report

    for _ in range(cfg.max_iters):
        a = _block("update_a", update_a, t, fs, w, lb, cfg.lambda_g, cfg.ridge)
        fs = FactorSet(a, fs.b, fs.c)
        b = _block("update_b", update_b, t, fs, cfg.ridge)
        fs = FactorSet(fs.a, b, fs.c)
        c = _block("update_c", update_c, t, fs, cfg.ridge)
        fs = FactorSet(fs.a, fs.b, c)
        if supervised and lb.size:
            w = CoeffMatrix(_block("update_w", update_w, fs, lb, cfg.ridge))

        f_new, g_new = objective(fs, w)
        change = relative_change(f_old, g_old, f_new, g_new)
        report.records.append(IterationRecord(f_new, g_new, change))
        if change < cfg.tol:
            report.converged = True
            break
        f_old, g_old = f_new, g_new
    return fs, w, report


def _best_of_restarts(t, lb, cfg: FitConfig, jobs: int):
    if t.nnz == 0:
        raise ValueError("cannot factor a tensor with no entries")
    if lb is not None and lb.size and lb.indices[-1] >= t.shape[0]:
        raise ValueError("labeled index out of range for the post mode")
    restarts = range(cfg.restarts)
    if jobs > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(lambda k: _run(t, lb, cfg, k), restarts))
    else:
        runs = [_run(t, lb, cfg, k) for k in restarts]
    objectives = [rep.final_objective for _, _, rep in runs]
    best = int(np.argmin(objectives))  # first minimum wins ties
    fs, w, report = runs[best]
    report.restart_objectives = objectives
    return fs, w, report


def fit_class_cp(
    t: SparseTensor3, lb: LabelBlock, cfg: FitConfig = FitConfig(), jobs: int = 1
) -> tuple[FactorSet, CoeffMatrix, FitReport]:
    """Fit CLASS-CP, returning the restart with the lowest final ``f + g``.

    Restart ``k`` starts from A, B, C drawn uniformly on [0, 1) from
    ``derive_rng(cfg.seed, "init", k)``; W starts at its least-squares value
    for those factors. Each sweep updates A, B, C, W in that order.
    """
    return _best_of_restarts(t, lb, cfg, jobs)


def fit_cp(
    t: SparseTensor3, cfg: FitConfig = FitConfig(), jobs: int = 1
) -> tuple[FactorSet, FitReport]:
    """Unsupervised CP-ALS with the same initialization and stopping rule as :func:`fit_class_cp`."""
    fs, _, report = _best_of_restarts(t, None, cfg, jobs)
    return fs, report
