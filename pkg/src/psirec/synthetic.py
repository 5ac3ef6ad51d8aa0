"""Synthetic interaction data with known structure, for tests and demos."""
from __future__ import annotations

import numpy as np

from psirec.data import Index, InteractionLog, InteractionMatrix, Step, StepSplit, binary_csr


def stationary_log(
    n_users: int = 500,
    n_items: int = 300,
    n_factors: int = 5,
    events_per_user: int = 40,
    duration: int = 360 * 86400,
    sharpness: float = 3.0,
    seed: int = 0,
) -> InteractionLog:
    """
    Events drawn from one fixed preference distribution per user.

    Each user's item probabilities are a softmax of a rank-``n_factors``
    affinity plus a shared popularity term; the user consumes
    ``~events_per_user`` distinct items at uniformly random times in
    ``[0, duration)``. Nothing about the distribution changes over time.
    """
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n_users, n_factors))
    H = rng.standard_normal((n_items, n_factors))
    popularity = -0.8 * np.log1p(np.arange(n_items))
    logits = sharpness * (W @ H.T) / np.sqrt(n_factors) + popularity
    users, items, stamps = [], [], []
    for u in range(n_users):
        p = np.exp(logits[u] - logits[u].max())
        p /= p.sum()
        count = min(n_items, max(2, rng.poisson(events_per_user)))
        chosen = rng.choice(n_items, size=count, replace=False, p=p)
        times = np.sort(rng.integers(0, duration, size=count))
        users.extend(f"u{u}" for _ in range(count))
        items.extend(f"i{i}" for i in chosen)
        stamps.extend(times.tolist())
    order = np.argsort(np.asarray(stamps), kind="stable")
    users = np.asarray(users, dtype=object)[order]
    items = np.asarray(items, dtype=object)[order]
    stamps = np.asarray(stamps, dtype=np.int64)[order]
    return InteractionLog(users, items, np.full(len(users), 5.0), stamps)


def growing_stream(
    n_users: int = 20000,
    n_items: int = 5000,
    initial_nnz: int = 20000,
    nnz_per_step: int = 150000,
    n_steps: int = 20,
    holdout_users: int = 200,
    seed: int = 0,
) -> StepSplit:
    """
    A split whose deltas have constant size, so accumulated history grows
    linearly with the step count. Holdout items are random unseen cells.
    """
    rng = np.random.default_rng(seed)
    shape = (n_users, n_items)
    cells = rng.choice(n_users * n_items, size=initial_nnz + n_steps * nnz_per_step + n_steps * holdout_users,
                       replace=False)
    rows, cols = np.divmod(cells, n_items)
    uidx = Index([f"u{u}" for u in range(n_users)])
    iidx = Index([f"i{i}" for i in range(n_items)])
    initial = InteractionMatrix(binary_csr(rows[:initial_nnz], cols[:initial_nnz], shape), uidx, iidx)
    pos = initial_nnz
    steps = []
    for k in range(n_steps):
        sl = slice(pos, pos + nnz_per_step)
        delta = InteractionMatrix(binary_csr(rows[sl], cols[sl], shape), uidx, iidx)
        pos += nnz_per_step
        holdout = {}
        for u, i in zip(rows[pos:pos + holdout_users], cols[pos:pos + holdout_users]):
            holdout.setdefault(int(u), int(i))
        pos += holdout_users
        steps.append(Step(delta, holdout, (k, k + 1)))
    return StepSplit(initial, steps, {"shape": list(shape), "n_steps": n_steps})
