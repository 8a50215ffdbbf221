"""Ranking-aligned multi-objective score ensembling.

A differentiable soft-rank operator (permutahedron projection via
pool-adjacent-violators), an AUC rank-sum training loss with baseline
losses, a dual-path attention ensemble model with exact manual backprop,
a synthetic impression-log generator, and an experiment/analysis suite.
"""

from .softrank import (SoftRankConfig, SoftRankResult, isotonic_regression,
                       soft_rank, soft_rank_backward)
from .losses import (AUCMState, AUCReport, BatchLabels, LossWeights, aucm_step,
                     auc_report, exact_auc, label_agg_loss, mbce_loss,
                     pairwise_logistic_loss, pairwise_square_loss,
                     rank_auc_loss)
from .model import (ForwardTrace, ModelConfig, ModelParams, backward,
                    discretize, forward, init_params, load_checkpoint,
                    save_checkpoint)
from .data import (Dataset, GeneratorSpec, batches, chunks,
                   downsample_positives, generate, load_csv, save_csv, split)
from .experiments import (AnalysisResult, ParetoPoint, TrainConfig,
                          attention_analysis, bench_losses, evaluate,
                          mark_front, pareto_sweep, predict, skew_experiment,
                          spearman_matrix, train)

__version__ = "0.1.0"
