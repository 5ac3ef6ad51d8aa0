"""Top-n recommendation lists from a factor model and users' known histories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from psirec.exceptions import ShapeError
from psirec.linalg import as_csr
from psirec.model import FactorModel

_CHUNK = 1024


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple[int, ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        if len(self.items) > self.n:
            raise ValueError(f"list of length {len(self.items)} exceeds cutoff n={self.n}")
        if len(set(self.items)) != len(self.items):
            raise ValueError("recommended item ids must be unique")


def _history_vector(history_row, n_items: int) -> np.ndarray:
    if sp.issparse(history_row):
        h = np.asarray(history_row.toarray(), dtype=np.float64).ravel()
    else:
        h = np.asarray(history_row, dtype=np.float64).ravel()
    if h.shape[0] != n_items:
        raise ShapeError(f"history row has length {h.shape[0]}, expected {n_items}")
    return h


def score_user(model: FactorModel, history_row) -> np.ndarray:
    """Project a user's history onto the item subspace: ``h @ V @ V.T``."""
    V = model.V
    h = _history_vector(history_row, V.shape[0])
    return (h @ V) @ V.T


def _rank_rows(scores: np.ndarray, seen: np.ndarray, n: int) -> list[np.ndarray]:
    # seen: boolean mask, same shape as scores
    masked = np.where(seen, -np.inf, scores)
    order = np.argsort(-masked, axis=1, kind="stable")[:, :n]
    out = []
    for row, idx in zip(masked, order):
        out.append(idx[np.isfinite(row[idx])])
    return out


def top_n(scores, history_row, n: int, user: int = -1) -> RecommendationList:
    """
    The ``n`` highest-scoring unseen items, ties broken by ascending item id.

    Items in ``history_row`` are excluded; the list is shorter than ``n`` when
    fewer unseen items exist.
    """
    if n < 1:
        raise ValueError(f"cutoff n must be >= 1, got {n}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if history_row is None:
        seen = np.zeros(scores.shape, dtype=bool)
    else:
        seen = _history_vector(history_row, scores.shape[0]) != 0
    (items,) = _rank_rows(scores[None, :], seen[None, :], n)
    return RecommendationList(user=user, items=items, n=n)


def recommend_users(model: FactorModel, history, users, n: int) -> dict[int, RecommendationList]:
    """
    Top-n lists for ``users`` (row ids of ``history``), scored in batches.

    Users with an empty history are skipped and do not appear in the result.
    """
    if n < 1:
        raise ValueError(f"cutoff n must be >= 1, got {n}")
    H = as_csr(history)
    if H.shape != model.shape:
        raise ShapeError(f"history shape {H.shape} does not match model shape {model.shape}")
    users = np.asarray(sorted(set(int(u) for u in users)), dtype=np.int64)
    counts = np.diff(H.indptr)
    users = users[counts[users] > 0]
    V = model.V
    result = {}
    for start in range(0, len(users), _CHUNK):
        block = users[start:start + _CHUNK]
        Hb = H[block]
        scores = np.asarray(Hb @ V) @ V.T
        seen = Hb.toarray() != 0
        for u, items in zip(block, _rank_rows(scores, seen, n)):
            result[int(u)] = RecommendationList(user=int(u), items=items, n=n)
    return result
