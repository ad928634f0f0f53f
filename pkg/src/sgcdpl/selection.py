"""Progressive data selection: the labeled-pair threshold estimate, the
reliable-subset rule, soft pseudo-labels over cluster exemplars, and the
widening schedule tau = tau_l + d_t.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .ap import ClusterAssignment
from .data import EmbeddingSet
from .errors import GuidanceUnavailableError, InputError


@dataclass(frozen=True)
class ThresholdEstimate:
    tau_l: float
    bin_edges: np.ndarray
    positive_histogram: np.ndarray  # density-normalized
    negative_histogram: np.ndarray
    bin_width: float
    error_rate: float  # misclassification objective at tau_l

    def histograms_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_center,positive_density,negative_density\n")
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        for c, p, n in zip(centers, self.positive_histogram, self.negative_histogram):
            buf.write(f"{c!r},{p!r},{n!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class SelectionSchedule:
    d_step: float
    iteration: int = 0

    @property
    def d_t(self) -> float:
        return self.d_step * self.iteration


def advance_schedule(schedule: SelectionSchedule) -> SelectionSchedule:
    return replace(schedule, iteration=schedule.iteration + 1)


@dataclass
class PseudoLabelSet:
    selected_indices: list
    soft_labels: np.ndarray  # |selected| x C' rows summing to 1
    exemplar_ids: list  # exemplar sample indices defining the columns

    def __post_init__(self):
        if len(set(self.selected_indices)) != len(self.selected_indices):
            raise InputError("duplicate indices in reliable subset")
        self.soft_labels = np.asarray(self.soft_labels, dtype=np.float64)
        if self.soft_labels.shape != (len(self.selected_indices), len(self.exemplar_ids)):
            raise InputError("soft label matrix shape mismatch")


def estimate_threshold(positive_distances, negative_distances,
                       bin_count: int = 100) -> ThresholdEstimate:
    """Data-driven separation threshold from labeled pair-distance lists.

    tau_l is the histogram bin edge minimizing
        (fraction of positive distances > tau) + (fraction of negative <= tau),
    ties going to the smaller tau; this is the intersection point of the two
    density curves for unimodal distributions.
    """
    pos = np.asarray(positive_distances, dtype=np.float64)
    neg = np.asarray(negative_distances, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise GuidanceUnavailableError("both pair-distance lists must be non-empty")
    if bin_count < 1:
        raise InputError("bin_count must be positive")
    lo = min(pos.min(), neg.min())
    hi = max(pos.max(), neg.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bin_count + 1)
    pos_hist, _ = np.histogram(pos, bins=edges, density=True)
    neg_hist, _ = np.histogram(neg, bins=edges, density=True)

    errors = np.array([(np.mean(pos > t) + np.mean(neg <= t)) for t in edges])
    # minimizers form a plateau when the classes separate cleanly; the
    # plateau center is the curve-intersection point
    minimizers = np.flatnonzero(errors == errors.min())
    best = int(minimizers[len(minimizers) // 2])
    return ThresholdEstimate(tau_l=float(edges[best]),
                             bin_edges=edges,
                             positive_histogram=pos_hist,
                             negative_histogram=neg_hist,
                             bin_width=float(edges[1] - edges[0]),
                             error_rate=float(errors[best]))


def exemplar_distances(unlabeled: EmbeddingSet, assignment: ClusterAssignment) -> np.ndarray:
    """Squared distance of every sample to its own exemplar."""
    if len(assignment.assignment) != len(unlabeled):
        raise InputError("assignment does not cover the unlabeled set")
    f = unlabeled.features
    ex = f[assignment.assignment]
    return np.sum((f - ex) ** 2, axis=1)


def select_reliable(unlabeled: EmbeddingSet, assignment: ClusterAssignment,
                    tau: float) -> list:
    """Indices with squared distance to their exemplar strictly below tau.

    Exemplars are always included: they define their cluster's
    pseudo-identity, so the strict inequality does not apply to them.
    """
    if tau < 0:
        raise InputError("tau must be >= 0")
    d = exemplar_distances(unlabeled, assignment)
    exemplars = set(assignment.exemplars)
    return [i for i in range(len(unlabeled)) if i in exemplars or d[i] < tau]


def soft_labels_from_distances(dists: np.ndarray) -> np.ndarray:
    """Row-wise softmax over negated distances; invariant to per-row shifts."""
    dists = np.asarray(dists, dtype=np.float64)
    z = -dists
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def assign_soft_labels(unlabeled: EmbeddingSet, assignment: ClusterAssignment,
                       selected_indices) -> PseudoLabelSet:
    """Soft pseudo-label for each selected sample: softmax over negative
    squared distances to the exemplars, columns ordered as assignment.exemplars."""
    if assignment.cluster_count < 1:
        raise InputError("cannot assign pseudo-labels with zero clusters")
    selected = list(selected_indices)
    for i in selected:
        if not (0 <= i < len(unlabeled)):
            raise InputError(f"selected index {i} out of range")
    f = unlabeled.features
    ex_feats = f[list(assignment.exemplars)]
    if selected:
        sel = f[selected]
        d = (np.sum(sel * sel, axis=1)[:, None]
             + np.sum(ex_feats * ex_feats, axis=1)[None, :]
             - 2.0 * sel @ ex_feats.T)
        np.maximum(d, 0.0, out=d)
        labels = soft_labels_from_distances(d)
    else:
        labels = np.zeros((0, assignment.cluster_count))
    return PseudoLabelSet(selected_indices=selected, soft_labels=labels,
                          exemplar_ids=list(assignment.exemplars))
