"""Label-aware CP tensor factorization (CLASS-CP) for classifying posts by their social network."""

from .factorization import (
    CoeffMatrix,
    FactorSet,
    FitConfig,
    FitReport,
    LabelBlock,
    fit_class_cp,
    fit_cp,
    objective_f,
    objective_g,
    relative_change,
    update_a,
    update_b,
    update_c,
    update_w,
)
from .tensor import SingularMatrixError, SparseTensor3, gram_solve, khatri_rao, matricize, mttkrp

__version__ = "0.1.0"
