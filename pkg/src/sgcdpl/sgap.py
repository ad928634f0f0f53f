"""Semantics-guided AP: similarity-ranking adaptive preferences and the
binary search for the preference scalar p* that makes labeled-set clustering
match the known identity count, then guided clustering of the unlabeled set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ap import ApConfig, ClusterAssignment, ap_cluster
from .data import EmbeddingSet, SimilarityMatrix, compute_similarity
from .errors import InputError, SgcdplError


@dataclass(frozen=True)
class PreferenceSearchConfig:
    target_cluster_count: int
    stall_window: int = 5
    max_search_steps: int = 40
    initial_p: float | None = None  # default: median labeled off-diagonal similarity
    bracket_widenings: int = 8

    def __post_init__(self):
        if self.target_cluster_count < 1:
            raise InputError("target_cluster_count must be positive")
        if self.stall_window < 1 or self.max_search_steps < 1:
            raise InputError("stall_window and max_search_steps must be >= 1")
        if self.initial_p is not None and self.initial_p > 0:
            raise InputError("initial_p must be <= 0")


@dataclass
class PreferenceSearchResult:
    p_star: float
    labeled_cluster_count: int
    trace: list  # (p, cluster_count) in probe order
    matched: bool

    def to_json(self) -> str:
        return json.dumps({
            "p_star": self.p_star,
            "labeled_cluster_count": self.labeled_cluster_count,
            "matched": self.matched,
            "trace": [[p, c] for p, c in self.trace],
        })


def similarity_ranking(similarity: SimilarityMatrix) -> np.ndarray:
    """Per-point ranking coefficient: N * rowsum_i / total over off-diagonal
    similarities. Entries are positive and average to 1."""
    n = similarity.n
    s = similarity.values.copy()
    np.fill_diagonal(s, 0.0)
    rowsums = s.sum(axis=1)
    total = rowsums.sum()
    if total == 0.0:
        raise InputError("all pairwise similarities are zero; ranking undefined")
    return (n * rowsums) / total


def adaptive_preference(similarity: SimilarityMatrix, p: float,
                        sr: np.ndarray | None = None) -> SimilarityMatrix:
    """Set each diagonal preference to SR(x_i) * p.

    A point with a larger (less negative) similarity row sum has smaller SR
    and hence a larger preference. `sr` overrides the ranking computed from
    `similarity` (used when ranking over a joint set)."""
    if p > 0:
        raise InputError("preference scalar p must be <= 0")
    if sr is None:
        sr = similarity_ranking(similarity)
    elif len(sr) != similarity.n:
        raise InputError("ranking vector length does not match matrix size")
    return similarity.with_diagonal(sr * p)


def _labeled_cluster_count(labeled_similarity, p, sr, ap_config):
    with_pref = adaptive_preference(labeled_similarity, p, sr=sr)
    return ap_cluster(with_pref, ap_config).cluster_count


def search_p_star(labeled_similarity: SimilarityMatrix,
                  config: PreferenceSearchConfig,
                  ap_config: ApConfig = ApConfig(),
                  sr: np.ndarray | None = None) -> PreferenceSearchResult:
    """Binary search for the p whose labeled-set clustering yields the target
    exemplar count.

    Bracket is [2 * min off-diagonal similarity, 0], widened by x2 (up to
    `bracket_widenings` times) while the cluster count at the low end still
    exceeds the target. Terminates on exact match, on an unchanged count for
    `stall_window` consecutive probes, or after `max_search_steps` probes. The
    reported p minimizes |count - target|, with ties broken toward counts >=
    target and then toward the earlier probe.
    """
    target = config.target_cluster_count
    if labeled_similarity.n < target:
        raise InputError("labeled set smaller than target cluster count")
    off = labeled_similarity.offdiag()
    trace = []
    failures = 0

    def probe(p):
        nonlocal failures
        try:
            count = _labeled_cluster_count(labeled_similarity, p, sr, ap_config)
        except SgcdplError:
            failures += 1
            return None
        trace.append((float(p), int(count)))
        return count

    low = 2.0 * float(np.min(off))
    high = 0.0
    p0 = float(np.median(off)) if config.initial_p is None else config.initial_p

    count = probe(p0)
    stall = 1
    last_count = count
    if count is not None and count != target:
        # make sure the low end of the bracket under-clusters
        low_count = probe(low)
        widen = 0
        while (low_count is not None and low_count > target
               and widen < config.bracket_widenings
               and len(trace) < config.max_search_steps):
            low *= 2.0
            widen += 1
            low_count = probe(low)
        if count is not None:
            if count > target:
                high = min(high, p0)
            else:
                low = max(low, p0)
        while len(trace) < config.max_search_steps:
            if last_count == target:
                break
            p = 0.5 * (low + high)
            count = probe(p)
            if count is None:
                break
            if count == last_count:
                stall += 1
            else:
                stall = 1
                last_count = count
            if count == target or stall >= config.stall_window:
                break
            if count > target:
                high = p  # over-clustering: move toward more negative p
            else:
                low = p

    if not trace:
        raise InputError(f"preference search failed: no successful AP run ({failures} failures)")

    def rank(item):
        i, (p, c) = item
        return (abs(c - target), 0 if c >= target else 1, i)

    _, (p_star, best_count) = min(enumerate(trace), key=rank)
    return PreferenceSearchResult(p_star=float(p_star),
                                  labeled_cluster_count=int(best_count),
                                  trace=trace,
                                  matched=best_count == target)


def sg_ap_cluster(labeled: EmbeddingSet, unlabeled: EmbeddingSet,
                  config: PreferenceSearchConfig | None = None,
                  ap_config: ApConfig = ApConfig(),
                  joint_ranking: bool = False):
    """Find p* on the labeled set, then cluster the unlabeled set with
    adaptive preferences at p = p*.

    With joint_ranking, the ranking coefficients used during the labeled-set
    search come from the combined labeled+unlabeled similarity matrix;
    default uses labeled-only ranking.
    """
    if labeled.dim != unlabeled.dim:
        raise InputError("labeled and unlabeled sets must share dimension")
    if config is None:
        config = PreferenceSearchConfig(target_cluster_count=len(labeled.labeled_identities))

    labeled_sim = compute_similarity(labeled)
    sr = None
    if joint_ranking:
        joint = EmbeddingSet(labeled.samples + unlabeled.samples)
        joint_sr = similarity_ranking(compute_similarity(joint))
        sr = joint_sr[:len(labeled)]
    search = search_p_star(labeled_sim, config, ap_config, sr=sr)

    unlabeled_sim = compute_similarity(unlabeled)
    guided = adaptive_preference(unlabeled_sim, search.p_star)
    assignment = ap_cluster(guided, ap_config)
    return assignment, search
