import numpy as np
import pytest

from sgcdpl import EmbeddingSet, Sample


def make_blobs(n_clusters, per_cluster, dim, std, spacing, seed, split="unlabeled",
               label_offset=1):
    """Gaussian blobs with near-equidistant centers; returns (EmbeddingSet, ids)."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, dim))
    if n_clusters > 1:
        d = np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        centers *= spacing / d.min()
    samples, ids = [], []
    for c in range(n_clusters):
        for _ in range(per_cluster):
            f = centers[c] + rng.normal(scale=std, size=dim)
            samples.append(Sample(feature=f, identity=c + label_offset, split=split))
            ids.append(c + label_offset)
    return EmbeddingSet(samples), ids


@pytest.fixture
def blob_factory():
    return make_blobs
