"""Implicit-feedback interaction data: loading, k-core filtering, splitting,
head/tail partitioning and negative sampling."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

HEAD_FRACTION = 0.2


@dataclass
class InteractionDataset:
    """Binary user-item interactions with contiguous integer ids.

    ``pairs`` is an ``(n, 2)`` int64 array of unique ``(user, item)`` rows sorted
    lexicographically; ``popularity[i]`` counts the pairs containing item ``i``.
    """

    n_users: int
    n_items: int
    pairs: np.ndarray
    popularity: np.ndarray = field(init=False)
    user_tokens: list[str] | None = None
    item_tokens: list[str] | None = None

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if pairs.min() < 0 or pairs[:, 0].max() >= self.n_users or pairs[:, 1].max() >= self.n_items:
                raise DataError("interaction ids out of range")
            pairs = np.unique(pairs, axis=0)
        self.pairs = pairs
        self.popularity = np.bincount(pairs[:, 1], minlength=self.n_items).astype(np.int64)

    def __len__(self):
        return len(self.pairs)

    @property
    def positives(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.pairs.tolist()))

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 0], minlength=self.n_users)


def _parse_records(path):
    users, items = [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            sep = "\t" if "\t" in line else ","
            fields = [f.strip() for f in line.split(sep)]
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise DataError(f"{path}:{lineno}: malformed record {line!r}")
            users.append(fields[0])
            items.append(fields[1])
    return users, items


def kcore_filter(pairs: np.ndarray, min_core: int) -> np.ndarray:
    """Drop users and items with fewer than ``min_core`` interactions until stable."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if min_core <= 1:
        return pairs
    while len(pairs):
        _, uinv, ucount = np.unique(pairs[:, 0], return_inverse=True, return_counts=True)
        _, iinv, icount = np.unique(pairs[:, 1], return_inverse=True, return_counts=True)
        keep = (ucount[uinv] >= min_core) & (icount[iinv] >= min_core)
        if keep.all():
            break
        pairs = pairs[keep]
    return pairs


def load_interactions(path, min_core: int = 10) -> InteractionDataset:
    """Read a ``user,item[,...]`` log, binarize it and apply iterative k-core filtering.

    Tokens are densified in order of first appearance among the surviving records.
    """
    users, items = _parse_records(path)
    umap, imap = {}, {}
    raw = np.asarray([(umap.setdefault(u, len(umap)), imap.setdefault(i, len(imap)))
                      for u, i in zip(users, items)], dtype=np.int64).reshape(-1, 2)
    _, first = np.unique(raw, axis=0, return_index=True)
    raw = kcore_filter(raw[np.sort(first)], min_core)
    if len(raw) == 0:
        raise DataError("empty dataset after filtering")
    # raw ids follow first appearance, so sorted survivors keep that order
    ukeep, uid = np.unique(raw[:, 0], return_inverse=True)
    ikeep, iid = np.unique(raw[:, 1], return_inverse=True)
    utok, itok = list(umap), list(imap)
    return InteractionDataset(
        n_users=len(ukeep),
        n_items=len(ikeep),
        pairs=np.stack([uid.ravel(), iid.ravel()], axis=1),
        user_tokens=[utok[k] for k in ukeep],
        item_tokens=[itok[k] for k in ikeep],
    )


@dataclass
class DataSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    n_users: int
    n_items: int
    seed: int = 0
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def train_dataset(self) -> InteractionDataset:
        return InteractionDataset(self.n_users, self.n_items, self.train)

    def all_pairs(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(ds: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DataSplit:
    """Random per-user split; the training part takes the rounding remainder.

    Users with fewer than three interactions keep everything in training.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    pairs = ds.pairs  # sorted by user, then item
    bounds = np.searchsorted(pairs[:, 0], np.arange(ds.n_users + 1))
    parts = ([], [], [])
    for u in range(ds.n_users):
        items = pairs[bounds[u]:bounds[u + 1], 1]
        n = len(items)
        if n == 0:
            continue
        if n < 3:
            parts[0].append(items)
            parts[1].append(items[:0])
            parts[2].append(items[:0])
            continue
        items = items[rng.permutation(n)]
        n_val = _round_half_up(n * ratios[1])
        n_test = _round_half_up(n * ratios[2])
        n_train = n - n_val - n_test
        if n_train < 1:
            # give the training part one interaction back, preferring the larger held-out part
            if n_test >= n_val:
                n_test -= 1 - n_train
            else:
                n_val -= 1 - n_train
            n_train = 1
        parts[0].append(items[:n_train])
        parts[1].append(items[n_train:n_train + n_val])
        parts[2].append(items[n_train + n_val:])
    out = []
    users = [u for u in range(ds.n_users) if bounds[u + 1] > bounds[u]]
    for chunks in parts:
        rows = [np.stack([np.full(len(c), u, dtype=np.int64), c], axis=1) for u, c in zip(users, chunks)]
        arr = np.concatenate(rows) if rows else np.empty((0, 2), dtype=np.int64)
        out.append(arr[np.lexsort((arr[:, 1], arr[:, 0]))])
    return DataSplit(out[0], out[1], out[2], ds.n_users, ds.n_items, seed=seed, ratios=ratios)


def write_split(split: DataSplit, out_dir) -> list[Path]:
    """Write ``train.txt``, ``valid.txt``, ``test.txt`` and the ``split.json`` header."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, arr in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        path = out_dir / f"{name}.txt"
        path.write_text("".join(f"{u},{i}\n" for u, i in arr.tolist()))
        written.append(path)
    header = {"seed": split.seed, "ratios": list(split.ratios), "n_users": split.n_users, "n_items": split.n_items}
    path = out_dir / "split.json"
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def read_split(data_dir) -> DataSplit:
    data_dir = Path(data_dir)
    try:
        header = json.loads((data_dir / "split.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read split header in {data_dir}: {exc}") from exc
    arrays = []
    for name in ("train", "valid", "test"):
        path = data_dir / f"{name}.txt"
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        rows = [line.split(",") for line in text.splitlines() if line.strip()]
        try:
            arr = np.asarray([(int(u), int(i)) for u, i in rows], dtype=np.int64).reshape(-1, 2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed split file") from exc
        arrays.append(arr)
    n_users, n_items = int(header["n_users"]), int(header["n_items"])
    for arr in arrays:
        if len(arr) and (arr.min() < 0 or arr[:, 0].max() >= n_users or arr[:, 1].max() >= n_items):
            raise DataError(f"split in {data_dir} has ids outside the header dimensions")
    return DataSplit(*arrays, n_users=n_users, n_items=n_items,
                     seed=int(header["seed"]), ratios=tuple(header["ratios"]))


@dataclass
class HeadTailPartition:
    head: np.ndarray
    tail: np.ndarray
    is_tail: np.ndarray

    @property
    def tail_set(self) -> set[int]:
        return set(self.tail.tolist())


def partition_head_tail(ds_or_popularity, head_fraction: float = HEAD_FRACTION) -> HeadTailPartition:
    """Top ``ceil(0.2 * n_items)`` items by popularity form the head.

    Accepts a dataset (use the training one) or a popularity vector. Ties go to
    the lower item id.
    """
    pop = getattr(ds_or_popularity, "popularity", ds_or_popularity)
    pop = np.asarray(pop)
    n_items = len(pop)
    order = np.lexsort((np.arange(n_items), -pop))
    n_head = math.ceil(head_fraction * n_items)
    head = np.sort(order[:n_head])
    tail = np.sort(order[n_head:])
    is_tail = np.zeros(n_items, dtype=bool)
    is_tail[tail] = True
    return HeadTailPartition(head, tail, is_tail)


@dataclass
class TrainBatch:
    pos: np.ndarray
    neg: np.ndarray
    index: int = 0


class NegativeSampler:
    """Uniform negative sampling over items a user has no training positive with."""

    def __init__(self, pairs: np.ndarray, n_items: int):
        self.n_items = n_items
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self._keys = np.unique(pairs[:, 0] * n_items + pairs[:, 1])
        self._user_count = np.bincount(pairs[:, 0]) if len(pairs) else np.zeros(0, dtype=np.int64)

    def is_positive(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        idx = np.searchsorted(self._keys, keys)
        idx = np.minimum(idx, len(self._keys) - 1)
        return self._keys[idx] == keys if len(self._keys) else np.zeros(len(keys), dtype=bool)

    def saturated(self, users) -> np.ndarray:
        users = np.asarray(users)
        counts = np.zeros(len(users), dtype=np.int64)
        known = users < len(self._user_count)
        counts[known] = self._user_count[users[known]]
        return counts >= self.n_items

    def sample(self, users, rng) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = rng.integers(0, self.n_items, size=len(users))
        bad = self.is_positive(users, items)
        while bad.any():
            items[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
            bad[bad] = self.is_positive(users[bad], items[bad])
        return items


def iter_batches(train: np.ndarray, n_items: int, batch_size: int, neg_ratio: int, rng,
                 sampler: NegativeSampler | None = None):
    """Yield one epoch of :class:`TrainBatch` from a shuffled pass over ``train``.

    Each positive gets ``neg_ratio`` uniformly drawn negatives for the same user.
    """
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    if len(train) == 0:
        raise DataError("training set is empty")
    sampler = sampler or NegativeSampler(train, n_items)
    sat = sampler.saturated(train[:, 0])
    if sat.any():
        logger.warning("skipping %d positives of users who interacted with every item", int(sat.sum()))
        train = train[~sat]
    order = rng.permutation(len(train))
    for b, start in enumerate(range(0, len(order), batch_size)):
        pos = train[order[start:start + batch_size]]
        if neg_ratio > 0:
            nu = np.repeat(pos[:, 0], neg_ratio)
            neg = np.stack([nu, sampler.sample(nu, rng)], axis=1)
        else:
            neg = np.empty((0, 2), dtype=np.int64)
        yield TrainBatch(pos, neg, b)


def sample_batch(split: DataSplit, batch_size: int, neg_ratio: int, rng) -> TrainBatch:
    """Draw the first batch of a fresh epoch; see :func:`iter_batches`."""
    return next(iter_batches(split.train, split.n_items, batch_size, neg_ratio, rng))
