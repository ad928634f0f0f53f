"""Retrieval metrics (CMC / mAP), clustering quality scores (NMI, ARI,
pairwise F1), pseudo-label accuracy, and a deterministic DBSCAN baseline.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .ap import ClusterAssignment
from .data import EmbeddingSet
from .errors import InputError
from .selection import PseudoLabelSet


@dataclass
class RetrievalResult:
    rank1: float
    cmc: np.ndarray
    map: float
    skipped_queries: int = 0

    def to_dict(self):
        return {"rank1": self.rank1, "map": self.map,
                "cmc": [float(c) for c in self.cmc],
                "skipped_queries": self.skipped_queries}


@dataclass
class ClusteringScore:
    nmi: float
    ari: float
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f1: float
    cluster_count: int
    true_id_count: int
    noise_fraction: float = 0.0

    def to_dict(self):
        return {"nmi": self.nmi, "ari": self.ari,
                "pairwise_precision": self.pairwise_precision,
                "pairwise_recall": self.pairwise_recall,
                "pairwise_f1": self.pairwise_f1,
                "cluster_count": self.cluster_count,
                "true_id_count": self.true_id_count,
                "noise_fraction": self.noise_fraction}


def average_precision(hits: np.ndarray) -> float:
    """Mean of precision@k over the ranks of the true matches."""
    ranks = np.flatnonzero(hits)
    if ranks.size == 0:
        return 0.0
    precisions = (np.arange(ranks.size) + 1.0) / (ranks + 1.0)
    return float(np.mean(precisions))


def evaluate_retrieval(query: EmbeddingSet, gallery: EmbeddingSet,
                       cross_camera: bool = False,
                       embedder=None) -> RetrievalResult:
    """Rank the gallery by ascending Euclidean distance for each query.

    With cross_camera set, gallery items sharing both identity and camera
    with the query are excluded (the usual re-ID protocol). Queries whose
    identity is absent from the filtered gallery are skipped and counted.
    """
    if query.dim != gallery.dim:
        raise InputError("query and gallery must share dimension")
    qf = embedder.embed(query.features) if embedder is not None else query.features
    gf = embedder.embed(gallery.features) if embedder is not None else gallery.features
    g_ids = np.array([s.identity if s.identity is not None else -1 for s in gallery.samples])
    g_cams = np.array([s.camera if s.camera is not None else -1 for s in gallery.samples])

    cmc_acc = np.zeros(len(gallery))
    aps = []
    skipped = 0
    for qi, qs in enumerate(query.samples):
        if qs.identity is None:
            raise InputError(f"query {qi} has no ground-truth identity")
        d = np.sum((gf - qf[qi]) ** 2, axis=1)
        keep = np.ones(len(gallery), dtype=bool)
        if cross_camera and qs.camera is not None:
            keep &= ~((g_ids == qs.identity) & (g_cams == qs.camera))
        if not np.any((g_ids == qs.identity) & keep):
            skipped += 1
            continue
        order = np.argsort(d[keep], kind="stable")
        hits = (g_ids[keep][order] == qs.identity)
        aps.append(average_precision(hits))
        first = int(np.argmax(hits))
        cmc_acc[first:len(hits)] += 1
        cmc_acc[len(hits):] += 1  # shorter filtered list still ends in a hit
    n_eval = len(query) - skipped
    if n_eval == 0:
        raise InputError("no evaluable queries")
    cmc = cmc_acc / n_eval
    return RetrievalResult(rank1=float(cmc[0]), cmc=cmc,
                           map=float(np.mean(aps)), skipped_queries=skipped)


def _pair_counts(labels_a, labels_b):
    """Same-pair agreement counts between two labelings of the same items."""
    n = len(labels_a)
    tp = fp = fn = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = labels_a[i] == labels_a[j]
            same_b = labels_b[i] == labels_b[j]
            if same_a and same_b:
                tp += 1
            elif same_a and not same_b:
                fp += 1
            elif same_b and not same_a:
                fn += 1
    return tp, fp, fn


def evaluate_clustering(assignment: ClusterAssignment, ground_truth_ids) -> ClusteringScore:
    """Partition-agreement scores; DBSCAN noise points (-1) are excluded from
    the numerators and reported as a noise fraction."""
    truth = list(ground_truth_ids)
    pred = assignment.assignment
    if len(truth) != len(pred):
        raise InputError("ground truth length does not match assignment")
    if any(t is None for t in truth):
        raise InputError("ground truth required for every clustered sample")
    mask = pred != -1
    noise_fraction = float(np.mean(~mask))
    pred_kept = pred[mask].tolist()
    truth_kept = [t for t, m in zip(truth, mask) if m]
    if not truth_kept:
        raise InputError("all points are noise; nothing to score")
    nmi = float(normalized_mutual_info_score(truth_kept, pred_kept))
    ari = float(adjusted_rand_score(truth_kept, pred_kept))
    tp, fp, fn = _pair_counts(pred_kept, truth_kept)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClusteringScore(nmi=nmi, ari=ari,
                           pairwise_precision=precision, pairwise_recall=recall,
                           pairwise_f1=f1,
                           cluster_count=assignment.cluster_count,
                           true_id_count=len(set(truth_kept)),
                           noise_fraction=noise_fraction)


def pseudo_label_accuracy(pseudo: PseudoLabelSet, assignment: ClusterAssignment,
                          ground_truth_ids) -> float:
    """Fraction of selected samples whose ground-truth identity matches the
    ground truth of their assigned exemplar. Empty selection scores 1.0."""
    truth = list(ground_truth_ids)
    if not pseudo.selected_indices:
        warnings.warn("empty reliable subset; pseudo-label accuracy is vacuous")
        return 1.0
    correct = 0
    for i in pseudo.selected_indices:
        ex = assignment.assignment[i]
        if truth[i] is None or truth[ex] is None:
            raise InputError("ground truth required for selected samples")
        correct += truth[i] == truth[ex]
    return correct / len(pseudo.selected_indices)


def dbscan_cluster(embeddings: EmbeddingSet, eps: float, min_points: int) -> ClusterAssignment:
    """Classic density-based clustering on Euclidean distance.

    Border points reachable from several clusters join the cluster of their
    lowest-index core neighbor, which makes the result independent of the
    input scan order. Each cluster's exemplar is its medoid; noise points
    are marked with assignment -1.
    """
    if eps <= 0 or min_points < 1:
        raise InputError("need eps > 0 and min_points >= 1")
    f = embeddings.features
    n = len(embeddings)
    sq = np.sum(f * f, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * f @ f.T
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    neighbors = dist <= eps
    core = neighbors.sum(axis=1) >= min_points  # includes self

    # connected components over core points linked within eps
    labels = np.full(n, -1, dtype=np.int64)
    cluster_id = 0
    for start in range(n):
        if not core[start] or labels[start] != -1:
            continue
        stack = [start]
        labels[start] = cluster_id
        while stack:
            cur = stack.pop()
            for nb in np.flatnonzero(neighbors[cur]):
                if core[nb] and labels[nb] == -1:
                    labels[nb] = cluster_id
                    stack.append(nb)
        cluster_id += 1
    # border points: lowest-index core neighbor decides
    for i in range(n):
        if labels[i] != -1 or core[i]:
            continue
        core_nbs = np.flatnonzero(neighbors[i] & core)
        if core_nbs.size:
            labels[i] = labels[core_nbs[0]]

    exemplars = []
    assignment = np.full(n, -1, dtype=np.int64)
    for c in range(cluster_id):
        members = np.flatnonzero(labels == c)
        medoid = members[int(np.argmin(dist[np.ix_(members, members)].sum(axis=1)))]
        exemplars.append(int(medoid))
        assignment[members] = medoid
    return ClusterAssignment(exemplars=exemplars, assignment=assignment,
                             converged=True, iterations_used=0,
                             noise=labels == -1)


def metrics_json(retrieval: RetrievalResult | None = None,
                 clustering: ClusteringScore | None = None) -> str:
    out = {}
    if retrieval is not None:
        out.update(retrieval.to_dict())
    if clustering is not None:
        out.update(clustering.to_dict())
    return json.dumps(out, sort_keys=True)
