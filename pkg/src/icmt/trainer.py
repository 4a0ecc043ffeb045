"""Training loop for ICMT and the normal / IPS baselines, plus gradient diagnostics."""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats

from .cluster import ClusterAssignment, clustering_embedding, kmeans, trivial_assignment
from .data import DataSplit, NegativeSampler, iter_batches, partition_head_tail
from .errors import ConfigError, NumericalError
from .lossgrad import AdamState, apply_weighted_update, assemble_gradients
from .metrics import evaluate
from .model import ModelParams, NormalizedAdjacency, init_params, representations
from .pareto import gram_matrix, pe_solve

logger = logging.getLogger(__name__)

METHODS = ("icmt", "normal", "ips")
HYPERPARAM_GRID = (1e-4, 1e-3, 2e-3, 5e-3, 1e-2)
STREAMS = ("split", "init", "sampling", "kmeans")


@dataclass
class TrainConfig:
    model_kind: str = "lgc"
    dim: int = 64
    n_layers: int = 3
    K: int = 2
    lambda_p: float = 2e-3
    lambda_c: float = 1e-3
    lambda_1: float = 1e-4
    lr: float = 1e-3
    batch_size: int = 512
    neg_ratio: int = 1
    recluster_every: int = 1
    eval_every_batches: int = 3000
    eval_n: int = 20
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    method: str = "icmt"
    pe_method: str = "wolfe"
    pe_max_iter: int = 100
    pe_tol: float = 1e-7
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: expected one of {METHODS}, got {self.method!r}")
        if self.model_kind not in ("pmf", "lgc"):
            raise ConfigError(f"model_kind: expected 'pmf' or 'lgc', got {self.model_kind!r}")
        if self.K < 1:
            raise ConfigError("K: must be at least 1")
        for name in ("lambda_p", "lambda_c", "lambda_1"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")
        for name in ("dim", "batch_size", "recluster_every", "eval_every_batches", "eval_n",
                     "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        if self.neg_ratio < 0 or self.n_layers < 0:
            raise ConfigError("neg_ratio and n_layers must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def effective_K(self) -> int:
        return self.K if self.method == "icmt" else 1

    @property
    def effective_lambda_p(self) -> float:
        return self.lambda_p if self.method == "icmt" else 0.0

    @property
    def effective_lambda_c(self) -> float:
        return self.lambda_c if self.method == "icmt" else 0.0


def grid_configs(base: TrainConfig, names=("lambda_p", "lambda_c", "lambda_1"), values=HYPERPARAM_GRID):
    """Enumerate configs over the hyperparameter grid."""
    for combo in itertools.product(values, repeat=len(names)):
        yield replace(base, **dict(zip(names, combo)))


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


@dataclass
class EvalRecord:
    batches: int
    epoch: int
    recall: float
    ndcg: float
    mean_tail_weight: float
    tail_cluster_weight: float
    cluster_losses: list[float]
    train_loss: float


@dataclass
class TrainHistory:
    method: str
    K: int
    records: list[EvalRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    best_index: int = -1
    stopped_early: bool = False

    @property
    def best(self) -> EvalRecord | None:
        return self.records[self.best_index] if self.records else None

    def write_csv(self, path):
        clustered = self.method == "icmt"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["batches", "recall20", "ndcg20", "mean_tail_weight"]
            if clustered:
                header += [f"loss_cluster_{k}" for k in range(self.K)]
            writer.writerow(header)
            for r in self.records:
                row = [r.batches, repr(r.recall), repr(r.ndcg), repr(r.mean_tail_weight)]
                if clustered:
                    row += [repr(x) for x in r.cluster_losses]
                writer.writerow(row)


def ips_weights(train: np.ndarray, popularity: np.ndarray) -> np.ndarray:
    """Per-item inverse-popularity weights, scaled to mean 1 over training positives."""
    inv = np.zeros(len(popularity))
    nz = popularity > 0
    inv[nz] = 1.0 / popularity[nz]
    mean = inv[train[:, 1]].mean()
    return inv / mean


def recluster(p: ModelParams, adj, K: int, rng, max_iter: int = 100) -> ClusterAssignment:
    _, items_v = representations(p, adj)
    emb = clustering_embedding(items_v, p.pop_emb)
    return kmeans(emb, K, seed=rng, max_iter=max_iter)


def solve_weights(bundle, cfg: TrainConfig) -> np.ndarray:
    """Cluster weights from the batch Gram matrix.

    Clusters without positives in the batch have zero gradient and would absorb
    all the weight; they are left out of the solve and get weight 1.
    """
    K = bundle.K
    present = np.flatnonzero(bundle.cluster_counts > 0)
    weights = np.ones(K)
    if len(present) == 0:
        return weights
    M = gram_matrix(bundle.cluster_matrix()[present])
    weights[present] = pe_solve(M, max_iter=cfg.pe_max_iter, tol=cfg.pe_tol, method=cfg.pe_method)
    return weights


def _tail_stats(assign: np.ndarray, weights: np.ndarray, is_tail: np.ndarray):
    """Mean weight over tail items and the weight of the most tail-heavy cluster."""
    per_item = weights[assign]
    mean_tail = float(per_item[is_tail].mean()) if is_tail.any() else 1.0
    K = len(weights)
    share = np.array([is_tail[assign == k].mean() if np.any(assign == k) else -1.0 for k in range(K)])
    return mean_tail, float(weights[int(np.argmax(share))])


def train(config: TrainConfig, split: DataSplit, ds=None, *, init: ModelParams | None = None):
    """Train with validation-based early stopping.

    Returns the parameters of the best validation NDCG@N evaluation and the
    history. ``ds`` is accepted for symmetry with the data loaders and unused:
    every statistic comes from the training split.
    """
    cfg = config
    streams = rng_streams(cfg.seed)
    K = cfg.effective_K
    lp, lc = cfg.effective_lambda_p, cfg.effective_lambda_c
    train_ds = split.train_dataset()
    partition = partition_head_tail(train_ds)
    adj = NormalizedAdjacency(split.train, split.n_users, split.n_items) if cfg.model_kind == "lgc" else None
    p = init.copy() if init is not None else init_params(
        split.n_users, split.n_items, cfg.dim, cfg.model_kind, cfg.n_layers, lp, seed=streams["init"])
    p.lambda_p = lp
    state = AdamState.for_params(p)
    sampler = NegativeSampler(split.train, split.n_items)
    item_w = ips_weights(split.train, train_ds.popularity) if cfg.method == "ips" else None

    assign = trivial_assignment(split.n_items, cfg.dim)
    weights = np.ones(K)
    history = TrainHistory(cfg.method, K)
    best_ndcg, best_params, since_best = -math.inf, p.copy(), 0
    n_batches = 0
    window = {"loss": [], "clusters": [], "tail_w": [], "tail_cw": []}

    def run_eval(epoch):
        nonlocal best_ndcg, best_params, since_best
        rep = evaluate(p, adj, split.valid, split.train, partition, n=cfg.eval_n)
        cl = np.mean(window["clusters"], axis=0).tolist() if window["clusters"] else [0.0] * K
        rec = EvalRecord(
            batches=n_batches, epoch=epoch, recall=rep.recall, ndcg=rep.ndcg,
            mean_tail_weight=float(np.mean(window["tail_w"])) if window["tail_w"] else 1.0,
            tail_cluster_weight=float(np.mean(window["tail_cw"])) if window["tail_cw"] else 1.0,
            cluster_losses=cl,
            train_loss=float(np.mean(window["loss"])) if window["loss"] else float("nan"),
        )
        history.records.append(rec)
        for v in window.values():
            v.clear()
        if rep.ndcg > best_ndcg:
            best_ndcg, best_params, since_best = rep.ndcg, p.copy(), 0
            history.best_index = len(history.records) - 1
        else:
            since_best += 1
        logger.info("batches=%d epoch=%d recall=%.4f ndcg=%.4f", n_batches, epoch, rep.recall, rep.ndcg)
        return since_best >= cfg.patience

    stop = False
    for epoch in range(cfg.max_epochs):
        epoch_loss = []
        for batch in iter_batches(split.train, split.n_items, cfg.batch_size, cfg.neg_ratio,
                                  streams["sampling"], sampler):
            icmt = cfg.method == "icmt"
            if icmt and n_batches % cfg.recluster_every == 0:
                assign = recluster(p, adj, K, streams["kmeans"], cfg.kmeans_max_iter)
            pos_w = item_w[batch.pos[:, 1]] if item_w is not None else None
            bundle, cluster_losses = assemble_gradients(
                p, adj, batch, assign.assign, lc, cfg.lambda_1, K=K, pos_weights=pos_w)
            if not math.isfinite(bundle.total_loss):
                raise NumericalError(f"loss diverged at batch {n_batches} (epoch {epoch})")
            if icmt:
                weights = solve_weights(bundle, cfg)
            apply_weighted_update(p, bundle, weights, state, cfg.lr)
            n_batches += 1
            history.batch_losses.append(bundle.data_loss)
            epoch_loss.append(bundle.data_loss)
            window["loss"].append(bundle.data_loss)
            window["clusters"].append(cluster_losses)
            if icmt:
                mt, tcw = _tail_stats(assign.assign, weights, partition.is_tail)
            else:
                mt, tcw = 1.0, 1.0
            window["tail_w"].append(mt)
            window["tail_cw"].append(tcw)
            if n_batches % cfg.eval_every_batches == 0 and run_eval(epoch):
                stop = True
                break
        history.epoch_losses.append(float(np.mean(epoch_loss)))
        if stop:
            history.stopped_early = True
            break
    if window["loss"]:
        run_eval(epoch)
    return best_params, history


def analyze_gradients(p: ModelParams, split: DataSplit, top_pairs: int = 5, adj=None,
                      tail_items=None, seed: int = 0) -> dict:
    """Per-item gradient norms and head/tail shared-gradient cosines.

    For every item ``i`` the positive loss over its training users is
    differentiated with respect to the item's representation; norms are
    reported in descending popularity order. Cosines compare the user-table
    gradients induced by the ``top_pairs`` most popular items and ``top_pairs``
    tail items (given, or drawn at random).
    """
    if adj is None and p.model_kind == "lgc":
        adj = NormalizedAdjacency(split.train, split.n_users, split.n_items)
    train = split.train
    pop = np.bincount(train[:, 1], minlength=split.n_items)
    partition = partition_head_tail(pop)
    users_v, items_v = representations(p, adj)
    u, i = train[:, 0], train[:, 1]
    s = np.sum(users_v[u] * items_v[i], axis=1) + p.lambda_p * (items_v[i] @ p.pop_emb)
    c = np.exp(-np.logaddexp(0.0, -s)) - 1.0
    item_grad = np.zeros_like(items_v)
    np.add.at(item_grad, i, c[:, None] * (users_v[u] + p.lambda_p * p.pop_emb))
    norms = np.linalg.norm(item_grad, axis=1)
    order = np.lexsort((np.arange(split.n_items), -pop))
    if np.ptp(norms) > 0 and np.ptp(pop) > 0:
        rho = float(stats.spearmanr(pop, norms).statistic)
    else:
        rho = None

    head = order[:top_pairs]
    if tail_items is None:
        rng = np.random.default_rng(seed)
        cand = partition.tail[pop[partition.tail] > 0]
        tail_items = rng.choice(cand, size=min(top_pairs, len(cand)), replace=False) if len(cand) else []
    tail_items = np.asarray(tail_items, dtype=np.int64)

    def shared_grad(item):
        sel = i == item
        du = np.zeros((split.n_users + split.n_items, p.dim))
        np.add.at(du, u[sel], c[sel, None] * items_v[item])
        du[split.n_users + item] += (c[sel, None] * (users_v[u[sel]] + p.lambda_p * p.pop_emb)).sum(0)
        if p.model_kind == "lgc" and p.n_layers > 0:
            du = adj.propagate(du, p.n_layers)
        return du[:split.n_users].ravel()

    grads = {int(k): shared_grad(k) for k in np.concatenate([head, tail_items])}
    pairs = []
    for h in head:
        for t in tail_items:
            a, b = grads[int(h)], grads[int(t)]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            cos = float(a @ b / (na * nb)) if na > 0 and nb > 0 else None
            pairs.append({"head": int(h), "tail": int(t), "cosine": cos})
    cosines = [q["cosine"] for q in pairs if q["cosine"] is not None]
    return {
        "items_by_popularity": order.tolist(),
        "popularity": pop[order].tolist(),
        "grad_norm": norms[order].tolist(),
        "spearman": rho,
        "pairs": pairs,
        "min_cosine": min(cosines) if cosines else None,
        "n_negative_cosines": int(sum(x < 0 for x in cosines)),
    }
