"""Stable top-n recommendations with PureSVD and the projector-splitting integrator."""

from psirec.exceptions import DataError, NumericalError, PsirecError, ShapeError
from psirec.linalg import TOL, Tolerances, qr_thin, spmm, spmm_transposed, truncated_svd
from psirec.model import FactorModel, psi_step, reconstruct, train_puresvd
from psirec.recommend import RecommendationList, recommend_users, score_user, top_n
from psirec.metrics import (
    BagOfItems,
    StepReport,
    coverage,
    hit_rate,
    mrr,
    stability,
    wji,
)

__version__ = "0.1.0"

__all__ = [
    "BagOfItems",
    "DataError",
    "FactorModel",
    "NumericalError",
    "PsirecError",
    "RecommendationList",
    "ShapeError",
    "StepReport",
    "TOL",
    "Tolerances",
    "coverage",
    "hit_rate",
    "mrr",
    "psi_step",
    "qr_thin",
    "recommend_users",
    "reconstruct",
    "score_user",
    "spmm",
    "spmm_transposed",
    "stability",
    "top_n",
    "train_puresvd",
    "truncated_svd",
    "wji",
]
