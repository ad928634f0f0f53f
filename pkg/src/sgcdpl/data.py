"""Embedding data model: samples, sets, similarity matrices, CSV I/O and
synthetic data generation.

Similarity is negative *squared* Euclidean distance throughout; every
threshold and pair-distance list downstream uses the same squared metric.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GuidanceUnavailableError, InputError

SPLITS = ("labeled", "unlabeled", "query", "gallery")


@dataclass(frozen=True)
class Sample:
    feature: np.ndarray
    identity: int | None = None
    camera: int | None = None
    split: str = "unlabeled"

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float64)
        if feat.ndim != 1 or feat.size < 1:
            raise InputError("feature must be a non-empty 1-d vector")
        if not np.all(np.isfinite(feat)):
            raise InputError("feature contains non-finite entries")
        if self.split not in SPLITS:
            raise InputError(f"unknown split {self.split!r}")
        if self.split == "labeled" and self.identity is None:
            raise InputError("labeled sample requires an identity")
        feat.setflags(write=False)
        object.__setattr__(self, "feature", feat)


class EmbeddingSet:
    """Ordered collection of samples sharing one embedding dimension.

    Ground-truth identities attached to unlabeled samples are evaluation-only
    metadata; clustering and selection code must never read them.
    """

    def __init__(self, samples):
        samples = list(samples)
        if not samples:
            raise InputError("embedding set must be non-empty")
        dim = samples[0].feature.size
        for i, s in enumerate(samples):
            if s.feature.size != dim:
                raise InputError(f"sample {i} has dimension {s.feature.size}, expected {dim}")
        self.samples = samples
        self.dim = dim
        labeled_ids = {s.identity for s in samples if s.split == "labeled"}
        hidden_ids = {s.identity for s in samples
                      if s.split == "unlabeled" and s.identity is not None}
        overlap = labeled_ids & hidden_ids
        if overlap:
            raise InputError(f"labeled and unlabeled identities overlap: {sorted(overlap)}")
        feats = np.stack([s.feature for s in samples])
        feats.setflags(write=False)
        self.features = feats

    def __len__(self):
        return len(self.samples)

    def subset(self, indices) -> "EmbeddingSet":
        return EmbeddingSet([self.samples[i] for i in indices])

    def split_subset(self, split: str) -> "EmbeddingSet":
        idx = [i for i, s in enumerate(self.samples) if s.split == split]
        if not idx:
            raise InputError(f"no samples with split {split!r}")
        return self.subset(idx)

    @property
    def labeled_identities(self):
        return sorted({s.identity for s in self.samples if s.split == "labeled"})

    def identities(self):
        """Ground-truth identity per sample (None where absent). Evaluation use only."""
        return [s.identity for s in self.samples]


@dataclass
class SimilarityMatrix:
    """Dense pairwise similarity with writable diagonal preferences."""

    values: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError("similarity matrix must be square")
        if not np.all(np.isfinite(v)):
            raise InputError("similarity matrix contains non-finite entries")
        self.values = v
        self.n = v.shape[0]

    def offdiag(self) -> np.ndarray:
        mask = ~np.eye(self.n, dtype=bool)
        return self.values[mask]

    def with_diagonal(self, diag) -> "SimilarityMatrix":
        out = self.values.copy()
        np.fill_diagonal(out, diag)
        return SimilarityMatrix(out)


def compute_similarity(embeddings: EmbeddingSet) -> SimilarityMatrix:
    """Pairwise s(i,j) = -||f_i - f_j||^2, diagonal left at 0."""
    n = len(embeddings)
    if n < 2:
        raise InputError("need at least 2 samples for a similarity matrix")
    f = embeddings.features
    sq = np.sum(f * f, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.maximum(d2, 0.0, out=d2)
    s = -d2
    s = 0.5 * (s + s.T)  # kill asymmetric rounding
    np.fill_diagonal(s, 0.0)
    return SimilarityMatrix(s)


def pair_distances(embeddings: EmbeddingSet, labeled_only: bool = True):
    """Squared distances for same-identity (positive) and cross-identity
    (negative) pairs among samples carrying identities."""
    if labeled_only:
        idx = [i for i, s in enumerate(embeddings.samples) if s.split == "labeled"]
    else:
        idx = [i for i, s in enumerate(embeddings.samples) if s.identity is not None]
    ids = [embeddings.samples[i].identity for i in idx]
    if len(set(ids)) < 2:
        raise GuidanceUnavailableError("need at least 2 identities for pair distances")
    f = embeddings.features[idx]
    positives, negatives = [], []
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            d = float(np.sum((f[a] - f[b]) ** 2))
            (positives if ids[a] == ids[b] else negatives).append(d)
    return positives, negatives


def load_embeddings(path, format: str = "csv") -> EmbeddingSet:
    """Read an EmbeddingSet from the CSV schema id,split,camera,f0,...,f{D-1}."""
    if format != "csv":
        raise InputError(f"unsupported format {format!r}")
    samples = []
    dim = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot open {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "split", "camera"]:
            raise InputError("CSV header must start with id,split,camera")
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if dim is None:
                dim = len(row) - 3
            if len(row) - 3 != dim or dim < 1:
                raise InputError(f"row {rownum}: expected {dim} feature columns, got {len(row) - 3}")
            raw_id, split, raw_cam = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                feat = np.array([float(x) for x in row[3:]], dtype=np.float64)
            except ValueError as e:
                raise InputError(f"row {rownum}: bad feature value ({e})") from e
            try:
                samples.append(Sample(
                    feature=feat,
                    identity=int(raw_id) if raw_id else None,
                    camera=int(raw_cam) if raw_cam else None,
                    split=split,
                ))
            except (ValueError, InputError) as e:
                raise InputError(f"row {rownum}: {e}") from e
    if not samples:
        raise InputError(f"{path}: no data rows")
    return EmbeddingSet(samples)


def save_embeddings(embeddings: EmbeddingSet, path):
    """Inverse of load_embeddings; float features round-trip bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split", "camera"] + [f"f{i}" for i in range(embeddings.dim)])
        for s in embeddings.samples:
            writer.writerow([
                "" if s.identity is None else s.identity,
                s.split,
                "" if s.camera is None else s.camera,
            ] + [repr(float(x)) for x in s.feature])


def generate_synthetic(identities: int, per_identity: int, dim: int,
                       intra_std: float, spacing: float, labeled_fraction: float,
                       seed: int, query_per_identity: int = 0,
                       gallery_per_identity: int = 0, cameras: int = 2) -> EmbeddingSet:
    """Gaussian blobs around identity centers with a labeled/unlabeled ID split.

    Centers are scaled so the minimum pairwise center distance equals
    `spacing`. The first round(labeled_fraction * identities) identities are
    labeled; the rest are unlabeled but keep their ground-truth identity for
    evaluation. Optional extra query/gallery samples are drawn around every
    center. Deterministic per seed.
    """
    if identities < 1 or per_identity < 1 or dim < 1:
        raise InputError("identities, per_identity and dim must be positive")
    if not (0.0 < labeled_fraction < 1.0):
        raise InputError("labeled_fraction must lie in (0, 1)")
    if intra_std < 0 or spacing <= 0:
        raise InputError("intra_std must be >= 0 and spacing > 0")
    n_labeled = int(round(labeled_fraction * identities))
    if n_labeled < 1:
        raise InputError("labeled_fraction yields zero labeled identities")
    if n_labeled >= identities:
        raise InputError("labeled_fraction yields zero unlabeled identities")

    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(identities, dim))
    if identities > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt(np.sum(diffs ** 2, axis=-1))
        np.fill_diagonal(dists, np.inf)
        min_d = dists.min()
        if min_d <= 0:
            raise InputError("degenerate identity centers; change seed")
        centers = centers * (spacing / min_d)

    samples = []
    for ident in range(1, identities + 1):
        split = "labeled" if ident <= n_labeled else "unlabeled"
        center = centers[ident - 1]
        for k in range(per_identity):
            feat = center + rng.normal(scale=intra_std, size=dim) if intra_std > 0 else center.copy()
            samples.append(Sample(feature=feat, identity=ident,
                                  camera=k % cameras, split=split))
    for split, count in (("query", query_per_identity), ("gallery", gallery_per_identity)):
        for ident in range(1, identities + 1):
            center = centers[ident - 1]
            for k in range(count):
                feat = center + rng.normal(scale=intra_std, size=dim) if intra_std > 0 else center.copy()
                samples.append(Sample(feature=feat, identity=ident,
                                      camera=k % cameras, split=split))
    return EmbeddingSet(samples)
