"""Synthetic long-tail interaction logs.

Item popularity follows a Zipf law. Users belong to one of two latent groups and
every tail item is favoured by one group and disfavoured by the other, which
produces conflicting gradients between head and tail items.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def zipf_weights(n_items: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n_items + 1, dtype=np.float64) ** -float(exponent)
    return w / w.sum()


def generate_zipf_interactions(n_users: int, n_items: int, zipf: float = 1.2, seed: int = 0,
                               per_user: int = 30, affinity: float = 64.0) -> np.ndarray:
    """Return a sorted ``(n, 2)`` array of unique ``(user, item)`` pairs.

    ``per_user`` is the mean number of interactions per user (drawn uniformly in
    ``[per_user // 2, 3 * per_user // 2]``). A tail item is ``affinity`` times
    likelier for users of its own group than for the other group; the two factors
    average to one, so the Zipf marginals are kept.
    """
    if n_users < 1 or n_items < 1 or per_user < 1 or zipf < 0 or affinity <= 0:
        raise ValueError("synthetic data parameters must be positive")
    rng = np.random.default_rng(seed)
    rank = rng.permutation(n_items)
    base = zipf_weights(n_items, zipf)[rank]
    head = rank < math.ceil(0.2 * n_items)
    item_group = rng.integers(0, 2, size=n_items)
    user_group = rng.integers(0, 2, size=n_users)
    lo, hi = max(1, per_user // 2), max(1, (3 * per_user) // 2)
    counts = np.minimum(rng.integers(lo, hi + 1, size=n_users), n_items)
    inside, outside = 2.0 * affinity / (affinity + 1.0), 2.0 / (affinity + 1.0)
    rows = []
    for u in range(n_users):
        boost = np.where(item_group == user_group[u], inside, outside)
        w = base * np.where(head, 1.0, boost)
        items = rng.choice(n_items, size=counts[u], replace=False, p=w / w.sum())
        rows.append(np.stack([np.full(counts[u], u), np.sort(items)], axis=1))
    return np.concatenate(rows).astype(np.int64)


def write_interactions(path, pairs, header: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {header}\n"] if header else []
    lines += [f"{u},{i}\n" for u, i in np.asarray(pairs).tolist()]
    path.write_text("".join(lines))
    return path
