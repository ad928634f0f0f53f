"""Dense affinity propagation: damped responsibility/availability message
passing with exemplar extraction.

Update rules per sweep (synchronous, full-matrix):
    r(i,k) <- s(i,k) - max_{k'!=k} [a(i,k') + s(i,k')]
    a(i,k) <- min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))   (i != k)
    a(k,k) <- sum_{i'!=k} max(0, r(i',k))
with damping new <- lam*old + (1-lam)*update. Exemplars are the points with
r(k,k)+a(k,k) strictly positive; ties at exactly 0 are not exemplars.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import SimilarityMatrix
from .errors import InputError, NumericalError


@dataclass(frozen=True)
class ApConfig:
    damping: float = 0.9
    max_iterations: int = 1000
    convergence_window: int = 50

    def __post_init__(self):
        if not (0.5 <= self.damping < 1.0):
            raise InputError("damping must lie in [0.5, 1.0)")
        if self.convergence_window < 1 or self.max_iterations < self.convergence_window:
            raise InputError("need max_iterations >= convergence_window >= 1")


@dataclass
class ClusterAssignment:
    """Outcome of one clustering run.

    assignment[i] is the sample index of i's exemplar; -1 marks noise
    (DBSCAN only). Every exemplar is assigned to itself.
    """

    exemplars: list
    assignment: np.ndarray
    converged: bool
    iterations_used: int
    noise: np.ndarray = field(default=None)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        ex = set(self.exemplars)
        for i, c in enumerate(self.assignment):
            if c == -1:
                continue
            if c not in ex:
                raise InputError(f"sample {i} assigned to non-exemplar {c}")
        for k in self.exemplars:
            if self.assignment[k] != k:
                raise InputError(f"exemplar {k} not assigned to itself")

    @property
    def cluster_count(self):
        return len(self.exemplars)

    def to_json(self) -> str:
        return json.dumps({
            "exemplars": [int(k) for k in self.exemplars],
            "assignment": [int(c) for c in self.assignment],
            "converged": bool(self.converged),
            "iterations": int(self.iterations_used),
        })

    @classmethod
    def from_json(cls, text: str) -> "ClusterAssignment":
        d = json.loads(text)
        return cls(exemplars=list(d["exemplars"]),
                   assignment=np.array(d["assignment"], dtype=np.int64),
                   converged=bool(d["converged"]),
                   iterations_used=int(d["iterations"]))


def uniform_preference(similarity: SimilarityMatrix, mode: str = "median") -> SimilarityMatrix:
    """Set every diagonal preference to the median or minimum off-diagonal similarity."""
    off = similarity.offdiag()
    if mode == "median":
        p = float(np.median(off))
    elif mode == "min":
        p = float(np.min(off))
    else:
        raise InputError(f"unknown preference mode {mode!r}")
    return similarity.with_diagonal(p)


def ap_cluster(similarity: SimilarityMatrix, config: ApConfig = ApConfig(),
               jitter_scale: float = 0.0, jitter_seed: int = 0) -> ClusterAssignment:
    """Run damped message passing to a stable exemplar set or max_iterations.

    jitter_scale > 0 adds seeded symmetric noise to the off-diagonal
    similarities, breaking exact-duplicate degeneracies at the cost of
    perturbing the input; off by default.
    """
    n = similarity.n
    if n < 2:
        raise InputError("affinity propagation needs at least 2 points")
    s = similarity.values
    if np.any(np.diag(s) > 0):
        raise InputError("diagonal preferences must be <= 0")
    if jitter_scale > 0:
        noise = np.random.default_rng(jitter_seed).normal(size=(n, n))
        noise = 0.5 * (noise + noise.T)
        np.fill_diagonal(noise, 0.0)
        s = s + jitter_scale * noise

    lam = config.damping
    r = np.zeros((n, n))
    a = np.zeros((n, n))
    rows = np.arange(n)
    prev_exemplars = None
    stable = 0
    sweeps = 0
    for sweep in range(1, config.max_iterations + 1):
        sweeps = sweep
        # responsibilities
        axs = a + s
        top = np.argmax(axs, axis=1)
        first = axs[rows, top]
        axs[rows, top] = -np.inf
        second = np.max(axs, axis=1)
        r_new = s - first[:, None]
        r_new[rows, top] = s[rows, top] - second
        r = lam * r + (1.0 - lam) * r_new
        # availabilities
        rp = np.maximum(r, 0.0)
        np.fill_diagonal(rp, np.diag(r))
        colsum = rp.sum(axis=0)
        a_new = colsum[None, :] - rp
        diag_a = np.diag(a_new).copy()
        np.minimum(a_new, 0.0, out=a_new)
        np.fill_diagonal(a_new, diag_a)
        a = lam * a + (1.0 - lam) * a_new

        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(a))):
            raise NumericalError(f"non-finite messages at sweep {sweep}")

        exemplars = frozenset(np.flatnonzero(np.diag(r) + np.diag(a) > 0.0).tolist())
        if exemplars and exemplars == prev_exemplars:
            stable += 1
            if stable >= config.convergence_window:
                break
        else:
            stable = 1
            prev_exemplars = exemplars

    converged = stable >= config.convergence_window
    exemplar_idx = sorted(np.flatnonzero(np.diag(r) + np.diag(a) > 0.0).tolist())
    if not exemplar_idx:
        # degenerate fall-back: strongest self-evidence wins
        exemplar_idx = [int(np.argmax(np.diag(r) + np.diag(a)))]
        converged = False
    crit = r + a
    assignment = np.array(exemplar_idx)[np.argmax(crit[:, exemplar_idx], axis=1)]
    assignment[exemplar_idx] = exemplar_idx
    return ClusterAssignment(exemplars=exemplar_idx, assignment=assignment,
                             converged=converged, iterations_used=sweeps)


def net_similarity(similarity: SimilarityMatrix, assignment: ClusterAssignment) -> float:
    """AP objective: sum of member-to-exemplar similarities plus exemplar preferences."""
    n = similarity.n
    if len(assignment.assignment) != n:
        raise InputError("assignment length does not match similarity size")
    s = similarity.values
    total = 0.0
    exemplars = set(assignment.exemplars)
    for i, c in enumerate(assignment.assignment):
        if c < 0 or c >= n:
            raise InputError(f"assignment target {c} out of range")
        total += s[c, c] if i in exemplars else s[i, c]
    return float(total)


def brute_force_optimum(similarity: SimilarityMatrix):
    """Exhaustive search over non-empty exemplar subsets maximizing the AP
    objective. Exponential; oracle use only (N <= ~12)."""
    n = similarity.n
    s = similarity.values
    best_val = -np.inf
    best_subset = None
    for mask in range(1, 1 << n):
        subset = [k for k in range(n) if mask >> k & 1]
        val = sum(s[k, k] for k in subset)
        cols = s[:, subset]
        for i in range(n):
            if i not in subset:
                val += cols[i].max()
        if val > best_val:
            best_val = val
            best_subset = subset
    return float(best_val), best_subset
