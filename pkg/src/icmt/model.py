"""Base recommenders with a disentangled popularity term.

Two base models share one parameter layout: ``PMF`` reads representations straight
from the embedding tables, ``LGC`` averages ``n_layers`` rounds of symmetric
normalized propagation over the training graph (LightGCN without dropout). The
popularity vector only enters the score, never the representations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError

MODEL_KINDS = ("pmf", "lgc")
INIT_STD = 0.01


@dataclass
class ModelParams:
    user_emb: np.ndarray
    item_emb: np.ndarray
    pop_emb: np.ndarray
    model_kind: str = "pmf"
    n_layers: int = 3
    lambda_p: float = 2e-3

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "ModelParams":
        return replace(self, user_emb=self.user_emb.copy(), item_emb=self.item_emb.copy(),
                       pop_emb=self.pop_emb.copy())

    def scaled(self, alpha: float) -> "ModelParams":
        return replace(self, user_emb=alpha * self.user_emb, item_emb=alpha * self.item_emb,
                       pop_emb=alpha * self.pop_emb)


def init_params(n_users: int, n_items: int, dim: int = 64, model_kind: str = "pmf",
                n_layers: int = 3, lambda_p: float = 2e-3, seed=0) -> ModelParams:
    """Gaussian initialization with std 0.01; ``seed`` may be an int or a Generator."""
    if dim < 1:
        raise ValueError("embedding size must be at least 1")
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ModelParams(
        user_emb=rng.normal(0.0, INIT_STD, size=(n_users, dim)),
        item_emb=rng.normal(0.0, INIT_STD, size=(n_items, dim)),
        pop_emb=rng.normal(0.0, INIT_STD, size=dim),
        model_kind=model_kind,
        n_layers=n_layers if model_kind == "lgc" else 0,
        lambda_p=float(lambda_p),
    )


class NormalizedAdjacency:
    """Symmetric normalized user-item graph, nodes ordered users first then items.

    Each training edge ``(u, i)`` carries ``1 / sqrt(d_u * d_i)``.
    """

    def __init__(self, train_pairs, n_users: int, n_items: int):
        pairs = np.unique(np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2), axis=0)
        self.n_users, self.n_items = n_users, n_items
        du = np.bincount(pairs[:, 0], minlength=n_users).astype(np.float64)
        di = np.bincount(pairs[:, 1], minlength=n_items).astype(np.float64)
        self.edges = pairs
        self.coef = 1.0 / np.sqrt(du[pairs[:, 0]] * di[pairs[:, 1]]) if len(pairs) else np.zeros(0)
        n = n_users + n_items
        rows = np.concatenate([pairs[:, 0], pairs[:, 1] + n_users])
        cols = np.concatenate([pairs[:, 1] + n_users, pairs[:, 0]])
        self.matrix = sp.csr_matrix((np.tile(self.coef, 2), (rows, cols)), shape=(n, n))

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def propagate(self, x: np.ndarray, n_layers: int) -> np.ndarray:
        """Mean of ``A^l x`` for ``l = 0..n_layers``. The operator is symmetric, so this
        also maps representation gradients back to embedding gradients."""
        acc = x.copy()
        h = x
        for _ in range(n_layers):
            h = self.matrix @ h
            acc += h
        return acc / (n_layers + 1)


def _stack(p: ModelParams) -> np.ndarray:
    return np.concatenate([p.user_emb, p.item_emb], axis=0)


def representations(p: ModelParams, adj: NormalizedAdjacency | None = None):
    """All user and item representations as ``(users, items)`` matrices."""
    if p.model_kind == "pmf" or p.n_layers == 0:
        return p.user_emb, p.item_emb
    if adj is None:
        raise ValueError("LGC representations need the training adjacency")
    h = adj.propagate(_stack(p), p.n_layers)
    return h[:p.n_users], h[p.n_users:]


def user_repr(p: ModelParams, adj, u):
    return representations(p, adj)[0][u]


def item_repr(p: ModelParams, adj, i):
    return representations(p, adj)[1][i]


def score_icmt(user_vecs, item_vecs, pop_vec, lambda_p):
    return np.sum(user_vecs * item_vecs, axis=-1) + lambda_p * (item_vecs @ pop_vec)


def predict_icmt(p: ModelParams, adj, u, i):
    """Training-time score: interest term plus ``lambda_p`` times the popularity term."""
    users, items = representations(p, adj)
    return score_icmt(users[u], items[i], p.pop_emb, p.lambda_p)


def predict_inference(p: ModelParams, adj, u, i):
    """Inference score: the interest term alone."""
    users, items = representations(p, adj)
    return np.sum(users[u] * items[i], axis=-1)


def propagation_block(adj: NormalizedAdjacency | None, n_layers: int, users, items) -> np.ndarray:
    """Coefficients ``c[a, b]`` with ``d v_{users[a]} / d e_{items[b]} = c[a, b] * I``."""
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    if adj is None or n_layers == 0:
        return np.zeros((len(users), len(items)))
    basis = sp.csr_matrix((np.ones(len(items)), (items + adj.n_users, np.arange(len(items)))),
                          shape=(adj.n_nodes, len(items)))
    cols = np.asarray(adj.propagate(basis.toarray(), n_layers))
    return cols[users]


def repr_jacobians(p: ModelParams, adj, u: int, i: int):
    """Closed-form ``(d v_u / d e_i, d v_i / d v')`` as ``D x D`` matrices.

    Both vanish for PMF. For LGC the first is a multiple of the identity given by
    the propagation coefficient between the two nodes; the second is always zero
    since the popularity vector is not propagated.
    """
    eye = np.eye(p.dim)
    if p.model_kind == "pmf":
        c = 0.0
    else:
        c = float(propagation_block(adj, p.n_layers, [u], [i])[0, 0])
    return c * eye, np.zeros((p.dim, p.dim))


def save_checkpoint(p: ModelParams, path, seed: int = 0) -> Path:
    """One JSON header line followed by little-endian float64 user, item and popularity tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"model_kind": p.model_kind, "D": p.dim, "n_layers": p.n_layers, "lambda_p": p.lambda_p,
              "n_users": p.n_users, "n_items": p.n_items, "seed": seed}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for table in (p.user_emb, p.item_emb, p.pop_emb):
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    """Return ``(params, header)``."""
    try:
        raw = Path(path).read_bytes()
        head, _, body = raw.partition(b"\n")
        header = json.loads(head)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    d, nu, ni = header["D"], header["n_users"], header["n_items"]
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != (nu + ni + 1) * d:
        raise DataError(f"checkpoint {path} is truncated or corrupt")
    flat = flat.astype(np.float64)
    p = ModelParams(
        user_emb=flat[:nu * d].reshape(nu, d),
        item_emb=flat[nu * d:(nu + ni) * d].reshape(ni, d),
        pop_emb=flat[(nu + ni) * d:].copy(),
        model_kind=header["model_kind"],
        n_layers=int(header["n_layers"]),
        lambda_p=float(header["lambda_p"]),
    )
    return p, header
