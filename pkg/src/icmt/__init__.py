"""Item cluster-wise multi-objective training for long-tail recommendation."""
from .cluster import ClusterAssignment, clustering_embedding, kmeans
from .data import (DataSplit, HeadTailPartition, InteractionDataset, TrainBatch, iter_batches,
                   load_interactions, partition_head_tail, read_split, sample_batch, split_dataset,
                   write_split)
from .errors import ConfigError, DataError, NumericalError
from .lossgrad import (AdamState, GradientBundle, apply_weighted_update, assemble_gradients,
                       bce_loss, contractive_loss)
from .metrics import MetricsReport, coverage_apt, evaluate, ndcg_at_n, rank_top_n, recall_at_n, tail_metrics
from .model import (ModelParams, NormalizedAdjacency, init_params, item_repr, load_checkpoint,
                    predict_icmt, predict_inference, repr_jacobians, save_checkpoint, user_repr)
from .pareto import gram_matrix, kkt_check, line_search_gamma, pe_solve
from .trainer import TrainConfig, TrainHistory, analyze_gradients, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "analyze_gradients", "apply_weighted_update", "assemble_gradients", "bce_loss",
    "ClusterAssignment", "clustering_embedding", "ConfigError", "contractive_loss", "coverage_apt",
    "DataError", "DataSplit", "evaluate", "GradientBundle", "gram_matrix", "HeadTailPartition",
    "init_params", "InteractionDataset", "item_repr", "iter_batches", "kkt_check", "kmeans",
    "line_search_gamma", "load_checkpoint", "load_interactions", "MetricsReport", "ModelParams",
    "ndcg_at_n", "NormalizedAdjacency", "NumericalError", "partition_head_tail", "pe_solve",
    "predict_icmt", "predict_inference", "rank_top_n", "read_split", "recall_at_n",
    "repr_jacobians", "sample_batch", "save_checkpoint", "split_dataset", "tail_metrics", "train",
    "TrainBatch", "TrainConfig", "TrainHistory", "user_repr", "write_split",
]
