"""BCE losses, regularizers and analytic gradients split by parameter group.

The user table is the shared parameter group; item rows and the popularity
vector are item-specific. Positive-pair gradients on the user table are kept
per item cluster so the cluster weights can be solved for and applied later.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import ModelParams, NormalizedAdjacency, propagation_block, representations, score_icmt

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def bce_loss(score, label):
    """Binary cross-entropy on logits, stable for any finite score."""
    score = np.asarray(score, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    return label * np.logaddexp(0.0, -score) + (1.0 - label) * np.logaddexp(0.0, score)


def _batch_nodes(batch):
    pos = np.asarray(batch.pos).reshape(-1, 2)
    return np.unique(pos[:, 0]), np.unique(pos[:, 1])


def contractive_loss(p: ModelParams, adj: NormalizedAdjacency | None, batch) -> float:
    """Squared Frobenius norms of the representation Jacobians over the batch.

    Sums ``|d v_u / d e_i|^2`` over the batch's positive users and items and
    ``|d v_i / d v'|^2`` over its items. The second term is always zero and the
    first is zero for PMF; for LGC it is ``D * c_ui^2`` with the propagation
    coefficient ``c_ui``.
    """
    if p.model_kind == "pmf" or p.n_layers == 0:
        return 0.0
    users, items = _batch_nodes(batch)
    block = propagation_block(adj, p.n_layers, users, items)
    return float(p.dim * np.sum(block ** 2))


def contractive_grad(p: ModelParams, adj, batch):
    """Gradients of :func:`contractive_loss` for ``(user_emb, item_emb, pop_emb)``.

    The Jacobians of a linear propagation depend on the graph only, so the
    gradients are identically zero.
    """
    return np.zeros_like(p.user_emb), np.zeros_like(p.item_emb), np.zeros_like(p.pop_emb)


def l2_terms(p: ModelParams, batch):
    """Rows touched by the batch: ``(users, items, include_pop)``."""
    pos = np.asarray(batch.pos).reshape(-1, 2)
    neg = np.asarray(batch.neg).reshape(-1, 2)
    both = np.concatenate([pos, neg])
    return np.unique(both[:, 0]), np.unique(both[:, 1]), p.lambda_p > 0


def l2_loss(p: ModelParams, batch) -> float:
    users, items, with_pop = l2_terms(p, batch)
    total = np.sum(p.user_emb[users] ** 2) + np.sum(p.item_emb[items] ** 2)
    if with_pop:
        total += np.sum(p.pop_emb ** 2)
    return float(total)


@dataclass
class GradientBundle:
    """Gradients for one minibatch.

    ``per_cluster_shared[k]`` and ``shared_negative`` hold user-table rows
    ``shared_rows``; ``item_grad`` covers the whole item table.
    """

    shared_rows: np.ndarray
    per_cluster_shared: np.ndarray
    shared_negative: np.ndarray
    item_grad: np.ndarray
    pop_grad: np.ndarray
    cluster_losses: np.ndarray
    negative_loss: float = 0.0
    contractive: float = 0.0
    l2: float = 0.0
    lambda_c: float = 0.0
    lambda_1: float = 0.0
    cluster_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def K(self) -> int:
        return self.per_cluster_shared.shape[0]

    def cluster_matrix(self) -> np.ndarray:
        return self.per_cluster_shared.reshape(self.K, -1)

    @property
    def positive_loss(self) -> float:
        return float(self.cluster_losses.sum())

    @property
    def data_loss(self) -> float:
        """Unweighted positive plus negative BCE."""
        return self.positive_loss + self.negative_loss

    @property
    def total_loss(self) -> float:
        return self.data_loss + self.lambda_c * self.contractive + self.lambda_1 * self.l2


def assemble_gradients(p: ModelParams, adj: NormalizedAdjacency | None, batch, assign,
                       lambda_c: float = 0.0, lambda_1: float = 0.0, K: int | None = None,
                       pos_weights=None):
    """Analytic gradients of the batch loss, split by parameter group.

    ``assign`` maps item id to cluster id (array or object with ``.assign``).
    ``pos_weights`` optionally scales each positive's BCE term (IPS).
    Returns ``(bundle, cluster_losses)``.
    """
    assign = np.asarray(getattr(assign, "assign", assign), dtype=np.int64)
    if K is None:
        K = int(assign.max()) + 1 if len(assign) else 1
    pos = np.asarray(batch.pos, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(batch.neg, dtype=np.int64).reshape(-1, 2)
    if len(pos) and (assign[pos[:, 1]].min() < 0 or assign[pos[:, 1]].max() >= K):
        raise ValueError("batch item without a valid cluster assignment")
    users_v, items_v = representations(p, adj)
    lp, v_pop = p.lambda_p, p.pop_emb
    D, nu = p.dim, p.n_users

    s_pos = score_icmt(users_v[pos[:, 0]], items_v[pos[:, 1]], v_pop, lp)
    s_neg = score_icmt(users_v[neg[:, 0]], items_v[neg[:, 1]], v_pop, lp)
    w_pos = np.ones(len(pos)) if pos_weights is None else np.asarray(pos_weights, dtype=np.float64)
    loss_pos = w_pos * bce_loss(s_pos, 1.0)
    c_pos = w_pos * (sigmoid(s_pos) - 1.0)
    c_neg = sigmoid(s_neg)
    pos_cluster = assign[pos[:, 1]]
    cluster_losses = np.bincount(pos_cluster, weights=loss_pos, minlength=K).astype(np.float64)
    negative_loss = float(bce_loss(s_neg, 0.0).sum())

    # gradients w.r.t. representations; slot k < K is cluster k, slot K the negatives
    lgc = p.model_kind == "lgc" and p.n_layers > 0
    if lgc:
        dv = np.zeros((K + 1, nu + p.n_items, D))
    else:
        dv = None
    du_rows = np.zeros((K + 1, nu, D)) if not lgc else None
    di = np.zeros((p.n_items, D))
    dpop = np.zeros(D)

    def scatter(slot, pairs, coef):
        if not len(pairs):
            return
        gu = coef[:, None] * items_v[pairs[:, 1]]
        gi = coef[:, None] * (users_v[pairs[:, 0]] + lp * v_pop)
        if lgc:
            np.add.at(dv[slot], pairs[:, 0], gu)
            np.add.at(dv[slot], nu + pairs[:, 1], gi)
        else:
            np.add.at(du_rows[slot], pairs[:, 0], gu)
            np.add.at(di, pairs[:, 1], gi)

    for k in range(K):
        sel = pos_cluster == k
        scatter(k, pos[sel], c_pos[sel])
    scatter(K, neg, c_neg)
    if lp:
        dpop += lp * (c_pos @ items_v[pos[:, 1]] + c_neg @ items_v[neg[:, 1]])

    if lgc:
        stacked = dv.transpose(1, 0, 2).reshape(nu + p.n_items, (K + 1) * D)
        back = adj.propagate(stacked, p.n_layers).reshape(nu + p.n_items, K + 1, D)
        shared_rows = np.arange(nu)
        per_cluster = back[:nu, :K].transpose(1, 0, 2).copy()
        shared_neg = back[:nu, K].copy()
        # sum slots in a fixed order so the item gradient is reproducible
        di = back[nu:, 0].copy()
        for k in range(1, K + 1):
            di += back[nu:, k]
    else:
        shared_rows = np.unique(np.concatenate([pos[:, 0], neg[:, 0]]))
        per_cluster = du_rows[:K, shared_rows]
        shared_neg = du_rows[K, shared_rows]

    contractive = 0.0
    if lambda_c:
        contractive = contractive_loss(p, adj, batch)
        cu, ci, cp = contractive_grad(p, adj, batch)
        shared_neg = shared_neg + lambda_c * cu[shared_rows]
        di = di + lambda_c * ci
        dpop = dpop + lambda_c * cp
    l2 = 0.0
    if lambda_1:
        l2 = l2_loss(p, batch)
        users, items, with_pop = l2_terms(p, batch)
        row_pos = np.searchsorted(shared_rows, users)
        shared_neg[row_pos] += 2.0 * lambda_1 * p.user_emb[users]
        di[items] += 2.0 * lambda_1 * p.item_emb[items]
        if with_pop:
            dpop = dpop + 2.0 * lambda_1 * p.pop_emb

    bundle = GradientBundle(
        shared_rows=shared_rows,
        per_cluster_shared=per_cluster,
        shared_negative=shared_neg,
        item_grad=di,
        pop_grad=dpop,
        cluster_losses=cluster_losses,
        negative_loss=negative_loss,
        contractive=contractive,
        l2=l2,
        lambda_c=lambda_c,
        lambda_1=lambda_1,
        cluster_counts=np.bincount(pos_cluster, minlength=K),
    )
    return bundle, cluster_losses


def batch_loss(p: ModelParams, adj, batch, lambda_c=0.0, lambda_1=0.0, pos_weights=None) -> float:
    """Total batch loss by direct evaluation (no gradients)."""
    users_v, items_v = representations(p, adj)
    pos = np.asarray(batch.pos).reshape(-1, 2)
    neg = np.asarray(batch.neg).reshape(-1, 2)
    s_pos = score_icmt(users_v[pos[:, 0]], items_v[pos[:, 1]], p.pop_emb, p.lambda_p)
    s_neg = score_icmt(users_v[neg[:, 0]], items_v[neg[:, 1]], p.pop_emb, p.lambda_p)
    w = np.ones(len(pos)) if pos_weights is None else np.asarray(pos_weights)
    total = float(np.sum(w * bce_loss(s_pos, 1.0)) + np.sum(bce_loss(s_neg, 0.0)))
    if lambda_c:
        total += lambda_c * contractive_loss(p, adj, batch)
    if lambda_1:
        total += lambda_1 * l2_loss(p, batch)
    return total


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, p: ModelParams) -> "AdamState":
        names = ("user_emb", "item_emb", "pop_emb")
        return cls({n: np.zeros_like(getattr(p, n)) for n in names},
                   {n: np.zeros_like(getattr(p, n)) for n in names})


def combined_shared(bundle: GradientBundle, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    return np.tensordot(weights, bundle.per_cluster_shared, axes=1) + bundle.shared_negative


def adam_step(param, grad, m, v, t, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def apply_weighted_update(p: ModelParams, bundle: GradientBundle, weights, state: AdamState,
                          lr: float = 1e-3) -> ModelParams:
    """Adam step: shared rows use the cluster-weighted sum, item parameters the plain one.

    Updates ``p`` and ``state`` in place and returns ``p``. Dense Adam: rows without
    gradient still decay their moments and keep moving on stale momentum.
    """
    shared = combined_shared(bundle, weights)
    for g in (shared, bundle.item_grad, bundle.pop_grad):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; update aborted")
    g_user = np.zeros_like(p.user_emb)
    g_user[bundle.shared_rows] = shared
    state.t += 1
    adam_step(p.user_emb, g_user, state.m["user_emb"], state.v["user_emb"], state.t, lr)
    adam_step(p.item_emb, bundle.item_grad, state.m["item_emb"], state.v["item_emb"], state.t, lr)
    adam_step(p.pop_emb, bundle.pop_grad, state.m["pop_emb"], state.v["pop_emb"], state.t, lr)
    return p
