"""Outer loop: initialization, then t iterations of guided clustering ->
progressive selection -> soft pseudo-labels -> refinement, with per-iteration
reports.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .ap import ApConfig, ap_cluster, uniform_preference
from .data import EmbeddingSet, Sample, compute_similarity, pair_distances
from .errors import InputError
from .evaluation import evaluate_clustering, evaluate_retrieval, pseudo_label_accuracy
from .refiner import (LinearEmbedder, SoftmaxClassifier, TrainConfig, TrainingSet,
                      expand_classifier, train_refiner)
from .selection import (SelectionSchedule, advance_schedule, assign_soft_labels,
                        estimate_threshold, select_reliable)
from .sgap import PreferenceSearchConfig, sg_ap_cluster

log = logging.getLogger(__name__)

CLUSTERING_MODES = ("sg-ap", "ap-median")


@dataclass(frozen=True)
class PipelineConfig:
    total_iterations: int = 8
    seed: int = 0
    embed_dim: int | None = None  # None: keep the input dimension
    clustering_mode: str = "sg-ap"
    joint_ranking: bool = False
    d_step: float = 0.25
    absolute_schedule: bool = False  # True: d_step is an absolute offset per iteration
    re_search_p_each_iteration: bool = True
    re_estimate_tau_each_iteration: bool = True
    warm_start: bool = True
    bin_count: int = 100
    ap_config: ApConfig = field(default_factory=ApConfig)
    stall_window: int = 5
    max_search_steps: int = 40
    init_config: TrainConfig = field(default_factory=lambda: TrainConfig(aug_weight=1.0))
    refine_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.total_iterations < 1:
            raise InputError("total_iterations must be >= 1")
        if self.clustering_mode not in CLUSTERING_MODES:
            raise InputError(f"clustering_mode must be one of {CLUSTERING_MODES}")


@dataclass
class IterationReport:
    iteration: int
    p_star: float | None = None
    cluster_count: int = 0
    reliable_count: int = 0
    tau: float | None = None
    pseudo_label_accuracy: float | None = None
    clustering: dict | None = None
    retrieval: dict | None = None
    final_loss: float | None = None

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class PipelineState:
    labeled: EmbeddingSet
    unlabeled: EmbeddingSet
    config: PipelineConfig
    embedder: LinearEmbedder
    classifier: SoftmaxClassifier
    schedule: SelectionSchedule
    iteration: int = 0
    tau_l: float | None = None
    p_star: float | None = None
    init_trace: list = field(default_factory=list)


def embedded_set(embeddings: EmbeddingSet, embedder: LinearEmbedder) -> EmbeddingSet:
    feats = embedder.embed(embeddings.features)
    return EmbeddingSet([
        Sample(feature=feats[i], identity=s.identity, camera=s.camera, split=s.split)
        for i, s in enumerate(embeddings.samples)
    ])


def initialize(labeled: EmbeddingSet, unlabeled: EmbeddingSet,
               config: PipelineConfig) -> PipelineState:
    """Train the embedder on the labeled set (triplet + ID loss, plus the
    augmented triplet loss against unlabeled perturbation pairs) and build
    the initial classifier."""
    if labeled.dim != unlabeled.dim:
        raise InputError("labeled and unlabeled sets must share dimension")
    d_out = config.embed_dim or labeled.dim
    embedder = LinearEmbedder.random(labeled.dim, d_out, seed=config.seed)
    identities = labeled.labeled_identities
    classifier = SoftmaxClassifier.for_identities(identities, d_out)
    labeled_ids = np.array([s.identity for s in labeled.samples])
    train_set = TrainingSet(labeled_features=labeled.features,
                            labeled_ids=labeled_ids,
                            unlabeled_features=unlabeled.features)
    embedder, classifier, trace = train_refiner(embedder, classifier, train_set,
                                                config.init_config)
    state = PipelineState(labeled=labeled, unlabeled=unlabeled, config=config,
                          embedder=embedder, classifier=classifier,
                          schedule=SelectionSchedule(d_step=config.d_step))
    state.init_trace = trace
    return state


def run_iteration(state: PipelineState):
    """One guided-clustering / selection / refinement round. Returns the
    updated state (mutated in place) and an IterationReport."""
    cfg = state.config
    if state.iteration >= cfg.total_iterations:
        raise InputError("pipeline already ran its configured iterations")
    labeled_emb = embedded_set(state.labeled, state.embedder)
    unlabeled_emb = embedded_set(state.unlabeled, state.embedder)

    search = None
    if cfg.clustering_mode == "sg-ap":
        if cfg.re_search_p_each_iteration or state.p_star is None:
            search_cfg = PreferenceSearchConfig(
                target_cluster_count=len(state.labeled.labeled_identities),
                stall_window=cfg.stall_window,
                max_search_steps=cfg.max_search_steps)
            assignment, search = sg_ap_cluster(labeled_emb, unlabeled_emb,
                                               search_cfg, cfg.ap_config,
                                               joint_ranking=cfg.joint_ranking)
            state.p_star = search.p_star
        else:
            from .sgap import adaptive_preference
            sim = compute_similarity(unlabeled_emb)
            assignment = ap_cluster(adaptive_preference(sim, state.p_star), cfg.ap_config)
    else:
        sim = uniform_preference(compute_similarity(unlabeled_emb), "median")
        assignment = ap_cluster(sim, cfg.ap_config)

    if cfg.re_estimate_tau_each_iteration or state.tau_l is None:
        pos, neg = pair_distances(labeled_emb, labeled_only=True)
        state.tau_l = estimate_threshold(pos, neg, cfg.bin_count).tau_l
    offset = cfg.d_step if cfg.absolute_schedule else cfg.d_step * state.tau_l
    tau = state.tau_l + offset * state.schedule.iteration

    selected = select_reliable(unlabeled_emb, assignment, tau)
    pseudo = assign_soft_labels(unlabeled_emb, assignment, selected)

    classifier = expand_classifier(state.classifier.drop_pseudo_columns(),
                                   assignment.exemplars)
    labeled_ids = np.array([s.identity for s in state.labeled.samples])
    if selected:
        train_set = TrainingSet(
            labeled_features=state.labeled.features,
            labeled_ids=labeled_ids,
            reliable_features=state.unlabeled.features[selected],
            reliable_soft_labels=pseudo.soft_labels,
            reliable_exemplar_assignment=assignment.assignment[selected],
            exemplar_ids=list(assignment.exemplars))
    else:
        log.warning("iteration %d: empty reliable subset, training on labeled data only",
                    state.iteration)
        train_set = TrainingSet(labeled_features=state.labeled.features,
                                labeled_ids=labeled_ids)
    refine_cfg = dataclasses.replace(cfg.refine_config,
                                     seed=cfg.refine_config.seed + state.iteration + 1)
    embedder = state.embedder if cfg.warm_start else \
        LinearEmbedder.random(state.labeled.dim, state.embedder.d_out, seed=cfg.seed)
    embedder, classifier, trace = train_refiner(embedder, classifier, train_set, refine_cfg)
    state.embedder = embedder
    state.classifier = classifier
    state.schedule = advance_schedule(state.schedule)
    state.iteration += 1

    truth = state.unlabeled.identities()
    report = IterationReport(
        iteration=state.iteration,
        p_star=state.p_star if cfg.clustering_mode == "sg-ap" else None,
        cluster_count=assignment.cluster_count,
        reliable_count=len(selected),
        tau=float(tau),
        final_loss=trace[-1]["total"] if trace else None)
    if all(t is not None for t in truth):
        import warnings as _warnings
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            report.pseudo_label_accuracy = pseudo_label_accuracy(pseudo, assignment, truth)
        report.clustering = evaluate_clustering(assignment, truth).to_dict()
    return state, report


def run_pipeline(labeled: EmbeddingSet, unlabeled: EmbeddingSet,
                 eval_query: EmbeddingSet | None, eval_gallery: EmbeddingSet | None,
                 config: PipelineConfig):
    """Initialization plus total_iterations refinement rounds; emits one
    report per round and a post-initialization baseline report."""
    state = initialize(labeled, unlabeled, config)

    def retrieval_dict():
        if eval_query is None or eval_gallery is None:
            return None
        return evaluate_retrieval(eval_query, eval_gallery,
                                  embedder=state.embedder).to_dict()

    baseline = IterationReport(iteration=0,
                               retrieval=retrieval_dict(),
                               final_loss=state.init_trace[-1]["total"]
                               if state.init_trace else None)
    reports = [baseline]
    for _ in range(config.total_iterations):
        state, report = run_iteration(state)
        report.retrieval = retrieval_dict()
        reports.append(report)
    return state, reports


def reports_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2)
