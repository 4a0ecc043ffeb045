import csv

import numpy as np
import pytest

from icmt.data import DataSplit, partition_head_tail
from icmt.errors import ConfigError
from icmt.lossgrad import GradientBundle
from icmt.metrics import evaluate
from icmt.model import init_params
from icmt.trainer import (HYPERPARAM_GRID, TrainConfig, analyze_gradients, grid_configs, ips_weights,
                          rng_streams, solve_weights, train)


def quick(**kw):
    base = dict(model_kind="pmf", dim=8, max_epochs=3, eval_every_batches=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.dim, cfg.n_layers, cfg.K, cfg.lr, cfg.batch_size, cfg.neg_ratio) == (64, 3, 2, 1e-3, 512, 1)
    assert cfg.eval_every_batches == 3000
    for bad in ({"K": 0}, {"lambda_p": -1.0}, {"method": "bpr"}, {"model_kind": "mlp"}, {"batch_size": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="lamda_c"):
        TrainConfig.from_dict({"lamda_c": 1e-3})
    assert TrainConfig.from_dict({"K": 3}).K == 3


def test_roundtrip_dict():
    cfg = TrainConfig(K=3, lambda_p=5e-3, method="ips")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_normal_baseline_drops_icmt_terms():
    cfg = TrainConfig(method="normal", K=4, lambda_p=1e-2, lambda_c=1e-2)
    assert (cfg.effective_K, cfg.effective_lambda_p, cfg.effective_lambda_c) == (1, 0.0, 0.0)


def test_grid():
    grid = list(grid_configs(TrainConfig()))
    assert len(grid) == len(HYPERPARAM_GRID) ** 3 == 125
    assert {c.lambda_p for c in grid} == {1e-4, 1e-3, 2e-3, 5e-3, 1e-2}


def test_rng_streams_independent_and_reproducible():
    a, b = rng_streams(3), rng_streams(3)
    assert set(a) == {"split", "init", "sampling", "kmeans"}
    draws = {k: g.random(4) for k, g in a.items()}
    assert all(np.array_equal(draws[k], b[k].random(4)) for k in a)
    assert len({tuple(v) for v in draws.values()}) == 4


def test_ips_weights_mean_one(small_split):
    pop = small_split.train_dataset().popularity
    w = ips_weights(small_split.train, pop)
    assert w[small_split.train[:, 1]].mean() == pytest.approx(1.0)
    nz = pop > 0
    assert np.allclose(w[nz] * pop[nz], (w[nz] * pop[nz])[0])


@pytest.mark.parametrize("method", ["icmt", "normal", "ips"])
@pytest.mark.parametrize("kind", ["pmf", "lgc"])
def test_loss_decreases_over_five_epochs(tiny_split, method, kind):
    _, h = train(TrainConfig(method=method, model_kind=kind, max_epochs=5, eval_every_batches=1, seed=0), tiny_split)
    assert len(h.epoch_losses) == 5
    assert all(b < a for a, b in zip(h.epoch_losses, h.epoch_losses[1:]))


@pytest.mark.parametrize("method", ["icmt", "ips"])
def test_deterministic(small_split, method):
    a = train(quick(method=method, batch_size=64), small_split)
    b = train(quick(method=method, batch_size=64), small_split)
    assert a[1] == b[1]
    assert np.array_equal(a[0].user_emb, b[0].user_emb)


def test_best_checkpoint_has_max_ndcg(small_split):
    p, h = train(quick(batch_size=64, max_epochs=4), small_split)
    ndcgs = [r.ndcg for r in h.records]
    assert h.best.ndcg == max(ndcgs)
    assert [r.batches for r in h.records] == sorted({r.batches for r in h.records})
    rep = evaluate(p, None, small_split.valid, small_split.train, partition_head_tail(small_split.train_dataset()))
    assert rep.ndcg == h.best.ndcg


def test_early_stopping(small_split):
    _, h = train(quick(batch_size=16, max_epochs=50, patience=2, lr=0.05), small_split)
    assert h.stopped_early
    assert len(h.records) - 1 - h.best_index == 2


def test_history_csv_columns(tmp_path, tiny_split):
    _, hi = train(quick(method="icmt", K=3), tiny_split)
    _, hn = train(quick(method="normal", K=3), tiny_split)
    hi.write_csv(tmp_path / "i.csv")
    hn.write_csv(tmp_path / "n.csv")
    head_i = next(csv.reader(open(tmp_path / "i.csv")))
    head_n = next(csv.reader(open(tmp_path / "n.csv")))
    assert head_i == ["batches", "recall20", "ndcg20", "mean_tail_weight",
                      "loss_cluster_0", "loss_cluster_1", "loss_cluster_2"]
    assert head_n == ["batches", "recall20", "ndcg20", "mean_tail_weight"]


def test_icmt_lgc_completes_with_cluster_losses(tiny_split):
    p, h = train(TrainConfig(model_kind="lgc", dim=8, max_epochs=2, eval_every_batches=1), tiny_split)
    assert h.K == 2 and all(len(r.cluster_losses) == 2 for r in h.records)
    assert all(np.isfinite(r.tail_cluster_weight) for r in h.records)
    assert np.all(np.isfinite(p.user_emb))


def _bundle(counts, grads):
    grads = np.asarray(grads, dtype=float)
    K = len(counts)
    return GradientBundle(np.arange(1), grads.reshape(K, 1, -1), np.zeros((1, grads.shape[1])),
                          np.zeros((1, 1)), np.zeros(1), np.zeros(K), cluster_counts=np.asarray(counts))


def test_solve_weights_skips_absent_clusters():
    cfg = TrainConfig(K=3)
    w = solve_weights(_bundle([4, 0, 2], [[2.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), cfg)
    assert w[1] == 1.0
    assert w[[0, 2]] == pytest.approx([0.4, 1.6], abs=1e-6)
    assert solve_weights(_bundle([0, 0], [[0.0], [0.0]]), TrainConfig()).tolist() == [1.0, 1.0]


def test_analyze_zero_gradients_null_cosines(small_split):
    p = init_params(small_split.n_users, small_split.n_items, dim=4, seed=0)
    p.user_emb[:] = 0.0
    p.item_emb[:] = 0.0
    p.pop_emb[:] = 0.0
    rep = analyze_gradients(p, small_split, top_pairs=3)
    assert all(x == 0.0 for x in rep["grad_norm"])
    assert rep["pairs"] and all(q["cosine"] is None for q in rep["pairs"])
    assert rep["spearman"] is None and rep["min_cosine"] is None


def test_analyze_report_shape(small_split):
    p = init_params(small_split.n_users, small_split.n_items, dim=4, model_kind="lgc", n_layers=2, seed=0)
    rep = analyze_gradients(p, small_split, top_pairs=2, seed=1)
    assert len(rep["pairs"]) == 4
    assert rep["popularity"] == sorted(rep["popularity"], reverse=True)
    assert len(rep["grad_norm"]) == small_split.n_items


def test_two_group_conflict_gives_negative_cosine():
    # everyone likes the head items 0 and 1; group A also likes tail item 2, group B tail item 3,
    # and the tail items sit on the far side of the head direction
    rows = [(u, 0) for u in range(8)] + [(u, 1) for u in range(8)]
    rows += [(u, 2) for u in range(4)] + [(u, 3) for u in range(4, 8)]
    train = np.array(rows)
    split = DataSplit(train, np.empty((0, 2), int), np.empty((0, 2), int), 8, 4)
    p = init_params(8, 4, dim=2, seed=0)
    p.user_emb[:4] = [1.0, 0.0]
    p.user_emb[4:] = [-1.0, 0.0]
    p.item_emb[:] = [[0.0, 1.0], [0.0, 1.0], [1.0, -0.5], [-1.0, -0.5]]
    rep = analyze_gradients(p, split, top_pairs=2, tail_items=[2, 3])
    assert rep["min_cosine"] < 0
