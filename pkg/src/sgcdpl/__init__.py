"""Semantics-guided affinity propagation with deep progressive pseudo-labeling
over embedding vectors."""

from .ap import ApConfig, ClusterAssignment, ap_cluster, net_similarity, uniform_preference
from .data import (EmbeddingSet, Sample, SimilarityMatrix, compute_similarity,
                   generate_synthetic, load_embeddings, pair_distances, save_embeddings)
from .errors import GuidanceUnavailableError, InputError, NumericalError, SgcdplError
from .evaluation import (ClusteringScore, RetrievalResult, dbscan_cluster,
                         evaluate_clustering, evaluate_retrieval, pseudo_label_accuracy)
from .pipeline import (IterationReport, PipelineConfig, PipelineState, initialize,
                       run_iteration, run_pipeline)
from .refiner import (LinearEmbedder, SoftmaxClassifier, TrainConfig, TrainingSet,
                      augmented_triplet_loss, batch_hard_triplet_loss,
                      expand_classifier, soft_cross_entropy_loss, train_refiner)
from .selection import (PseudoLabelSet, SelectionSchedule, ThresholdEstimate,
                        advance_schedule, assign_soft_labels, estimate_threshold,
                        select_reliable)
from .sgap import (PreferenceSearchConfig, PreferenceSearchResult, adaptive_preference,
                   search_p_star, sg_ap_cluster, similarity_ranking)

__version__ = "0.1.0"
