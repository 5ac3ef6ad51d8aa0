"""
Relevance (HitRate, MRR), catalog Coverage and list stability.

Stability between two ranked lists is the weighted Jaccard index of their
bag-of-items encodings, where an item at 1-based rank ``k <= n`` weighs
``1/k`` and every other item weighs 0.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

log = logging.getLogger(__name__)

REPORT_FIELDS = ("step_index", "model_name", "rank", "n", "hr", "mrr", "coverage", "stability", "n_eval_users")


@dataclass(frozen=True)
class BagOfItems:
    weights: Mapping[int, float]
    n: int

    @classmethod
    def from_list(cls, items: Sequence[int], n: int) -> "BagOfItems":
        items = list(items)
        if len(set(items)) != len(items):
            raise ValueError("a ranked list cannot repeat items")
        return cls({int(item): 1.0 / rank for rank, item in enumerate(items[:n], start=1)}, n)


def _bag(x, n: Optional[int]) -> BagOfItems:
    if isinstance(x, BagOfItems):
        return x
    items = getattr(x, "items", x)
    if n is None:
        n = getattr(x, "n", None) or len(items)
    return BagOfItems.from_list(items, n)


def wji(u, v, n: Optional[int] = None) -> float:
    """
    Weighted Jaccard index of two ranked lists (or their bag-of-items form).

    >>> round(wji([0, 1, 2], [1, 0, 2], n=3), 6)
    0.571429
    """
    bu, bv = _bag(u, n), _bag(v, n)
    if bu.n != bv.n:
        raise ValueError(f"bags built with different cutoffs ({bu.n} vs {bv.n})")
    keys = sorted(set(bu.weights) | set(bv.weights))
    if not keys:
        log.debug("wji of two empty lists; returning 1.0")
        return 1.0
    wu = [bu.weights.get(k, 0.0) for k in keys]
    wv = [bv.weights.get(k, 0.0) for k in keys]
    num = math.fsum(min(a, b) for a, b in zip(wu, wv))
    den = math.fsum(max(a, b) for a, b in zip(wu, wv))
    return num / den


def stability(prev: Mapping, curr: Mapping, n: int) -> float:
    """Mean WJI over users that have a list in both ``prev`` and ``curr``."""
    common = sorted(set(prev) & set(curr))
    if not common:
        raise ValueError("no common users between steps")
    return math.fsum(wji(prev[u], curr[u], n) for u in common) / len(common)


def _items_of(entry) -> Sequence[int]:
    return getattr(entry, "items", entry)


def hit_rate(lists: Mapping, holdout: Mapping[int, int]) -> float:
    """Share of holdout users whose held-out item is in their list."""
    if not holdout:
        raise ValueError("empty holdout")
    hits = sum(1 for u, item in holdout.items() if item in _items_of(lists.get(u, ())))
    return hits / len(holdout)


def mrr(lists: Mapping, holdout: Mapping[int, int]) -> float:
    """Mean reciprocal (1-based) rank of the held-out item; a miss counts 0."""
    if not holdout:
        raise ValueError("empty holdout")
    terms = []
    for u in sorted(holdout):
        items = list(_items_of(lists.get(u, ())))
        item = holdout[u]
        terms.append(1.0 / (items.index(item) + 1) if item in items else 0.0)
    return math.fsum(terms) / len(holdout)


def coverage(lists: Mapping, catalog_size: int) -> float:
    if catalog_size <= 0:
        raise ValueError("catalog_size must be positive")
    recommended = set()
    for entry in lists.values():
        recommended.update(_items_of(entry))
    return len(recommended) / catalog_size


@dataclass(frozen=True)
class StepReport:
    step_index: int
    model_name: str
    rank: int
    n: int
    hr: float
    mrr: float
    coverage: float
    stability: Optional[float]
    n_eval_users: int

    def __post_init__(self):
        for name in ("hr", "mrr", "coverage", "stability"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def as_row(self) -> list[str]:
        row = []
        for name in REPORT_FIELDS:
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif isinstance(value, float):
                row.append(repr(value))
            else:
                row.append(str(value))
        return row

    def to_json(self) -> str:
        return json.dumps({name: getattr(self, name) for name in REPORT_FIELDS})

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "StepReport":
        def opt(v):
            return None if v in ("", None) else float(v)

        return cls(
            step_index=int(row["step_index"]),
            model_name=row["model_name"],
            rank=int(row["rank"]),
            n=int(row["n"]),
            hr=float(row["hr"]),
            mrr=float(row["mrr"]),
            coverage=float(row["coverage"]),
            stability=opt(row["stability"]),
            n_eval_users=int(row["n_eval_users"]),
        )
