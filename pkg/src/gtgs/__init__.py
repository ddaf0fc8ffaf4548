"""Group identification: hypergraph convolution with cross-view self-supervision.

Builds three hypergraph views of user/group/item interactions, learns user and
group embeddings with a transitional convolution layer plus contrastive
objectives, and ranks candidate groups per user with a full evaluation and
analysis harness.
"""

from .equivalence import (EquivalenceCase, check_thc_vs_hyperconv,
                          check_thc_vs_lightgcn, run_equivalence_battery)
from .evaluation import (ConsistencyResult, MetricsReport, RankingResult,
                         consistency, group_relatedness_analysis, metrics_report,
                         ndcg_at_k, rank_groups, recall_at_k)
from .graph import (HypergraphSet, IncidenceMatrix, InteractionGraph, SplitGraph,
                    build_group_view_user_hypergraph,
                    build_item_view_user_hypergraph,
                    build_user_view_group_hypergraph, cap_group_degree,
                    concat_hyperedges, generate_synthetic, graph_statistics,
                    load_interactions, load_split_manifest, save_split_manifest,
                    split_train_test, write_interactions)
from .linalg import (dense_reference_product, hyperedge_gather, node_scatter,
                     normalize_rows)
from .losses import (GradCheckReport, LossBreakdown, backward, bpr_loss,
                     cosine_sim, cssl_loss, finite_diff_check, group_reg_loss,
                     l2_penalty, total_loss)
from .model import (EmbeddingTable, ForwardTrace, Hyperparams, combine_user_views,
                    forward, load_checkpoint, oracle_hypergraph_conv,
                    oracle_lightgcn_two_layer, predict_scores, propagate_groups,
                    propagate_user_views, save_checkpoint, scoring_embedding,
                    thc_layer, variant_forward)
from .training import (AdamState, TrainHistory, adam_step, sample_negatives, train)

__version__ = "0.1.0"
