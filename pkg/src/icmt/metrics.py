"""Top-N evaluation: Recall, NDCG, their tail-only variants, Coverage and APT."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import HeadTailPartition
from .model import ModelParams, representations


def _discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2))


def recall_at_n(ranked, truth) -> float:
    truth = set(truth)
    return len(truth.intersection(ranked)) / len(truth)


def ndcg_at_n(ranked, truth, n: int | None = None) -> float:
    truth = set(truth)
    n = len(ranked) if n is None else n
    disc = _discounts(n)
    dcg = sum(disc[r] for r, item in enumerate(ranked[:n]) if item in truth)
    idcg = disc[:min(n, len(truth))].sum()
    return float(dcg / idcg)


def tail_metrics(ranked, truth, tail, n: int | None = None):
    """Recall and NDCG with the tail part of ``truth`` as ground truth.

    Hits are counted at their positions in the full list. Returns ``None`` when
    the user has no tail ground truth.
    """
    tail = tail if isinstance(tail, (set, frozenset)) else set(np.asarray(getattr(tail, "tail", tail)).tolist())
    tail_truth = set(truth) & tail
    if not tail_truth:
        return None
    return recall_at_n(ranked, tail_truth), ndcg_at_n(ranked, tail_truth, n)


def coverage_apt(lists, tail, n_items: int):
    """Catalog coverage of the union of lists and mean per-list tail share."""
    tail = tail if isinstance(tail, (set, frozenset)) else set(np.asarray(getattr(tail, "tail", tail)).tolist())
    lists = [list(x) for x in lists]
    if not lists:
        return 0.0, 0.0
    seen = set()
    for lst in lists:
        seen.update(lst)
    apt = float(np.mean([sum(i in tail for i in lst) / len(lst) for lst in lists]))
    return len(seen) / n_items, apt


def top_n_from_scores(scores: np.ndarray, n: int) -> np.ndarray:
    """Row-wise top-``n`` indices, highest first, ties to the lower index.

    ``-inf`` entries are treated as excluded and never returned.
    """
    scores = np.atleast_2d(scores)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :n]
    return order


def rank_top_n(p: ModelParams, adj, u: int, n: int, exclusions=()) -> list[int]:
    """Top-``n`` items for user ``u`` by the inference score, skipping ``exclusions``."""
    exclusions = np.asarray(sorted(set(exclusions)), dtype=np.int64)
    if n > p.n_items - len(exclusions):
        raise ValueError(f"cannot rank {n} items: only {p.n_items - len(exclusions)} candidates")
    users, items = representations(p, adj)
    scores = items @ users[u]
    scores[exclusions] = -np.inf
    return top_n_from_scores(scores, n)[0].tolist()


@dataclass
class MetricsReport:
    N: int
    recall: float
    ndcg: float
    recall_tail: float
    ndcg_tail: float
    coverage: float
    apt: float
    n_eval_users: int
    head_size: int
    tail_size: int
    lists: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("lists")
        return d


def _group(pairs, n_users):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    bounds = np.searchsorted(pairs[:, 0], np.arange(n_users + 1))
    return [pairs[bounds[u]:bounds[u + 1], 1] for u in range(n_users)]


def evaluate(p: ModelParams, adj, truth_pairs, exclude_pairs, partition: HeadTailPartition,
             n: int = 20, keep_lists: bool = False, chunk: int = 1024) -> MetricsReport:
    """Rank all items for every user with ground truth and average the metrics.

    ``exclude_pairs`` (normally train, plus validation for the test split) are
    removed from the candidates. Users are processed in ascending id order.
    """
    if n > p.n_items:
        raise ValueError(f"N={n} exceeds the number of items ({p.n_items})")
    users_v, items_v = representations(p, adj)
    truth = _group(truth_pairs, p.n_users)
    excl = _group(exclude_pairs, p.n_users) if len(exclude_pairs) else [np.zeros(0, np.int64)] * p.n_users
    eval_users = [u for u in range(p.n_users) if len(truth[u])]
    tail = set(partition.tail.tolist())
    rec, ndcg, rec_t, ndcg_t, lists = [], [], [], [], {}
    for start in range(0, len(eval_users), chunk):
        block = eval_users[start:start + chunk]
        scores = users_v[block] @ items_v.T
        for row, u in enumerate(block):
            scores[row, excl[u]] = -np.inf
        top = top_n_from_scores(scores, n)
        for row, u in enumerate(block):
            valid = np.isfinite(scores[row, top[row]])
            ranked = top[row][valid].tolist()
            truth_u = truth[u].tolist()
            rec.append(recall_at_n(ranked, truth_u))
            ndcg.append(ndcg_at_n(ranked, truth_u, n))
            tm = tail_metrics(ranked, truth_u, tail, n)
            if tm is not None:
                rec_t.append(tm[0])
                ndcg_t.append(tm[1])
            lists[u] = ranked
    coverage = len(set().union(*lists.values())) / p.n_items if lists else 0.0
    apt = float(np.mean([sum(i in tail for i in lst) / max(len(lst), 1) for lst in lists.values()])) if lists else 0.0

    def mean(x):
        return float(math.fsum(x) / len(x)) if x else 0.0

    return MetricsReport(
        N=n, recall=mean(rec), ndcg=mean(ndcg), recall_tail=mean(rec_t), ndcg_tail=mean(ndcg_t),
        coverage=coverage, apt=apt, n_eval_users=len(eval_users),
        head_size=len(partition.head), tail_size=len(partition.tail),
        lists=lists if keep_lists else {},
    )
