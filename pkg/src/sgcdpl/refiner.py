"""Trainable linear embedding map and expandable linear classifier, optimized
with batch-hard triplet loss, soft-label cross-entropy and an augmented
triplet loss over perturbation-based positive pairs. All gradients are
derived by hand and checked against finite differences in the test suite.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

REAL = "real"
PSEUDO = "pseudo"


@dataclass
class LinearEmbedder:
    weight: np.ndarray  # d_out x d_in

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or not np.all(np.isfinite(self.weight)):
            raise InputError("embedder weight must be a finite matrix")

    @property
    def d_in(self):
        return self.weight.shape[1]

    @property
    def d_out(self):
        return self.weight.shape[0]

    def embed(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ self.weight.T

    def copy(self) -> "LinearEmbedder":
        return LinearEmbedder(self.weight.copy())

    @classmethod
    def random(cls, d_in: int, d_out: int, seed: int, scale: float = None):
        rng = np.random.default_rng(seed)
        if scale is None:
            scale = 1.0 / np.sqrt(d_in)
        return cls(rng.normal(scale=scale, size=(d_out, d_in)))


@dataclass
class SoftmaxClassifier:
    weight: np.ndarray  # C_total x d_out
    bias: np.ndarray  # C_total
    class_map: list  # [(REAL, identity) | (PSEUDO, exemplar_id)] per column

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.shape[0] != self.bias.size or self.weight.shape[0] != len(self.class_map):
            raise InputError("classifier weight/bias/class_map sizes disagree")
        if len(set(self.class_map)) != len(self.class_map):
            raise InputError("duplicate class_map entries")

    @property
    def n_classes(self):
        return len(self.class_map)

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        return embeddings @ self.weight.T + self.bias

    def copy(self) -> "SoftmaxClassifier":
        return SoftmaxClassifier(self.weight.copy(), self.bias.copy(), list(self.class_map))

    def drop_pseudo_columns(self) -> "SoftmaxClassifier":
        keep = [i for i, (kind, _) in enumerate(self.class_map) if kind == REAL]
        return SoftmaxClassifier(self.weight[keep], self.bias[keep],
                                 [self.class_map[i] for i in keep])

    @classmethod
    def for_identities(cls, identities, d_out: int):
        c = len(identities)
        return cls(np.zeros((c, d_out)), np.zeros(c), [(REAL, i) for i in identities])


def expand_classifier(classifier: SoftmaxClassifier, exemplar_ids) -> SoftmaxClassifier:
    """Append one zero-initialized column per new pseudo-identity exemplar."""
    existing = {key for key in classifier.class_map}
    new_entries = []
    for ex in exemplar_ids:
        key = (PSEUDO, ex)
        if key in existing or key in new_entries:
            raise InputError(f"duplicate pseudo identity {ex}")
        new_entries.append(key)
    if not new_entries:
        return classifier.copy()
    c_new = len(new_entries)
    weight = np.vstack([classifier.weight, np.zeros((c_new, classifier.weight.shape[1]))])
    bias = np.concatenate([classifier.bias, np.zeros(c_new)])
    return SoftmaxClassifier(weight, bias, list(classifier.class_map) + new_entries)


def _pairwise_euclidean(embeddings: np.ndarray) -> np.ndarray:
    sq = np.sum(embeddings * embeddings, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * embeddings @ embeddings.T
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def batch_hard_triplet_loss(embeddings: np.ndarray, identities, margin: float):
    """Mean over anchors of max(0, hardest-positive - hardest-negative + margin)
    with Euclidean distances; returns (loss, gradient wrt embeddings)."""
    e = np.asarray(embeddings, dtype=np.float64)
    codes = {}
    ids = np.array([codes.setdefault(i, len(codes)) for i in list(identities)])
    b = e.shape[0]
    if len(codes) < 2:
        raise InputError("triplet batch needs at least 2 identities")
    same = ids[:, None] == ids[None, :]
    if np.any(same.sum(axis=1) < 2):
        raise InputError("triplet batch contains a singleton identity")
    dist = _pairwise_euclidean(e)
    pos_d = np.where(same & ~np.eye(b, dtype=bool), dist, -np.inf)
    neg_d = np.where(~same, dist, np.inf)
    hp = np.argmax(pos_d, axis=1)
    hn = np.argmin(neg_d, axis=1)
    rows = np.arange(b)
    hinge = dist[rows, hp] - dist[rows, hn] + margin
    active = hinge > 0.0  # subgradient 0 exactly at the boundary
    loss = float(np.sum(np.maximum(hinge, 0.0)) / b)

    grad = np.zeros_like(e)
    for a in np.flatnonzero(active):
        p, n = hp[a], hn[a]
        d_ap, d_an = dist[a, p], dist[a, n]
        if d_ap > 0:
            u = (e[a] - e[p]) / d_ap
            grad[a] += u
            grad[p] -= u
        if d_an > 0:
            v = (e[a] - e[n]) / d_an
            grad[a] -= v
            grad[n] += v
    grad /= b
    return loss, grad


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def soft_cross_entropy_loss(logits: np.ndarray, soft_targets: np.ndarray):
    """Mean of -sum_c y_c log softmax(logits)_c over the batch; gradient
    (softmax - y) / batch."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(soft_targets, dtype=np.float64)
    if logits.shape != y.shape:
        raise InputError("logits and targets must share shape")
    if np.any(np.abs(y.sum(axis=1) - 1.0) > 1e-6) or np.any(y < 0):
        raise InputError("each soft target must be a probability distribution")
    log_p = _log_softmax(logits)
    b = logits.shape[0]
    loss = float(-np.sum(y * log_p) / b)
    grad = (np.exp(log_p) - y) / b
    return loss, grad


def augmented_triplet_loss(labeled_batch: np.ndarray, unlabeled_batch: np.ndarray,
                           perturbation_std: float, margin: float, seed: int):
    """Triplet hinge over constructed pairs: each unlabeled embedding anchors
    a positive pair with its own Gaussian-perturbed copy and a negative pair
    with a randomly drawn labeled embedding. Returns
    (loss, grad wrt labeled batch, grad wrt unlabeled batch)."""
    lab = np.asarray(labeled_batch, dtype=np.float64)
    unl = np.asarray(unlabeled_batch, dtype=np.float64)
    if lab.size == 0 or unl.size == 0:
        raise InputError("both batches must be non-empty")
    rng = np.random.default_rng(seed)
    u = unl.shape[0]
    noise = rng.normal(scale=perturbation_std, size=unl.shape) if perturbation_std > 0 \
        else np.zeros_like(unl)
    partners = rng.integers(0, lab.shape[0], size=u)
    pos_d = np.sqrt(np.sum(noise ** 2, axis=1))
    diff = unl - lab[partners]
    neg_d = np.sqrt(np.sum(diff ** 2, axis=1))
    hinge = pos_d - neg_d + margin
    active = hinge > 0.0
    loss = float(np.sum(np.maximum(hinge, 0.0)) / u)

    grad_l = np.zeros_like(lab)
    grad_u = np.zeros_like(unl)
    for i in np.flatnonzero(active):
        if neg_d[i] > 0:
            v = diff[i] / neg_d[i]  # d(-neg_d)/d unl_i = -v
            grad_u[i] -= v
            grad_l[partners[i]] += v
    grad_l /= u
    grad_u /= u
    return loss, grad_l, grad_u


@dataclass(frozen=True)
class TrainConfig:
    p_identities: int = 4
    k_per_identity: int = 4
    margin: float = 0.3
    learning_rate: float = 0.01
    epochs: int = 50
    seed: int = 0
    triplet_weight: float = 1.0
    id_weight: float = 1.0
    aug_weight: float = 0.0
    perturbation_std: float | None = None  # None: 0.05 x mean labeled intra-ID distance
    lr_decay_every: int = 50  # divide lr by 10 every this many epochs

    def __post_init__(self):
        if self.p_identities < 2 or self.k_per_identity < 2:
            raise InputError("need P >= 2 and K >= 2")
        if self.margin <= 0 or self.learning_rate < 0:
            raise InputError("margin must be > 0 and learning_rate >= 0")


@dataclass
class TrainingSet:
    """Augmented training pool {X^l, Y^l, X^r, Y^p} in raw feature space.

    reliable_soft_labels has one column per entry of exemplar_ids; the
    pseudo-identity used for triplet mining is each sample's assigned
    exemplar.
    """

    labeled_features: np.ndarray
    labeled_ids: np.ndarray
    reliable_features: np.ndarray = None
    reliable_soft_labels: np.ndarray = None
    reliable_exemplar_assignment: np.ndarray = None  # exemplar id per reliable sample
    exemplar_ids: list = field(default_factory=list)
    unlabeled_features: np.ndarray = None  # for the augmented triplet loss only

    def __post_init__(self):
        self.labeled_features = np.asarray(self.labeled_features, dtype=np.float64)
        self.labeled_ids = np.asarray(self.labeled_ids)
        if self.reliable_features is None:
            self.reliable_features = np.zeros((0, self.labeled_features.shape[1]))
            self.reliable_soft_labels = np.zeros((0, len(self.exemplar_ids)))
            self.reliable_exemplar_assignment = np.zeros(0, dtype=np.int64)


def _mean_intra_id_distance(features, ids):
    total, count = 0.0, 0
    ids = np.asarray(ids)
    for ident in np.unique(ids):
        f = features[ids == ident]
        for a in range(len(f)):
            for b in range(a + 1, len(f)):
                total += float(np.linalg.norm(f[a] - f[b]))
                count += 1
    return total / count if count else 1.0


def train_refiner(embedder: LinearEmbedder, classifier: SoftmaxClassifier,
                  train_set: TrainingSet, config: TrainConfig):
    """PK-sampled gradient descent over the joint objective
    triplet_weight * batch-hard triplet + id_weight * soft cross-entropy
    (+ aug_weight * augmented triplet when unlabeled features are supplied).

    Learning rate decays by 10 every `lr_decay_every` epochs. Deterministic
    per config seed. Returns (embedder, classifier, loss trace)."""
    embedder = embedder.copy()
    classifier = classifier.copy()
    rng = np.random.default_rng(config.seed)

    col_of = {key: j for j, key in enumerate(classifier.class_map)}
    n_lab = train_set.labeled_features.shape[0]
    n_rel = train_set.reliable_features.shape[0]
    features = np.vstack([train_set.labeled_features, train_set.reliable_features])
    # triplet identity per pooled sample; tuples keep real and pseudo ids apart
    ident = [(REAL, int(i)) for i in train_set.labeled_ids]
    targets = np.zeros((n_lab + n_rel, classifier.n_classes))
    for i, real_id in enumerate(train_set.labeled_ids):
        targets[i, col_of[(REAL, int(real_id))]] = 1.0
    for i in range(n_rel):
        ex = int(train_set.reliable_exemplar_assignment[i])
        ident.append((PSEUDO, ex))
        for j, ex_id in enumerate(train_set.exemplar_ids):
            targets[n_lab + i, col_of[(PSEUDO, int(ex_id))]] = train_set.reliable_soft_labels[i, j]

    by_identity = {}
    for i, key in enumerate(ident):
        by_identity.setdefault(key, []).append(i)
    identity_keys = sorted(by_identity)
    if len(identity_keys) < config.p_identities:
        raise InputError(f"need at least {config.p_identities} identities, "
                         f"have {len(identity_keys)}")

    aug_features = train_set.unlabeled_features
    use_aug = config.aug_weight > 0 and aug_features is not None and len(aug_features) > 0
    if use_aug:
        std = config.perturbation_std
        if std is None:
            std = 0.05 * _mean_intra_id_distance(embedder.embed(train_set.labeled_features),
                                                 train_set.labeled_ids)
        aug_features = np.asarray(aug_features, dtype=np.float64)

    p, k = config.p_identities, config.k_per_identity
    trace = []
    for epoch in range(config.epochs):
        lr = config.learning_rate / (10.0 ** (epoch // config.lr_decay_every))
        order = rng.permutation(len(identity_keys))
        n_batches = max(1, len(identity_keys) // p)
        for batch_no in range(n_batches):
            chosen = [identity_keys[j] for j in order[batch_no * p:(batch_no + 1) * p]]
            if len(chosen) < 2:
                continue
            idx = []
            for key in chosen:
                pool = by_identity[key]
                take = rng.choice(len(pool), size=k, replace=len(pool) < k)
                idx.extend(pool[t] for t in take)
            idx = np.array(idx)
            x = features[idx]
            e = embedder.embed(x)
            batch_ids = [ident[i] for i in idx]

            grad_e = np.zeros_like(e)
            t_loss = i_loss = a_loss = 0.0
            if config.triplet_weight > 0:
                t_loss, g = batch_hard_triplet_loss(e, batch_ids, config.margin)
                grad_e += config.triplet_weight * g
            if config.id_weight > 0:
                logits = classifier.logits(e)
                i_loss, g_logits = soft_cross_entropy_loss(logits, targets[idx])
                g_logits = config.id_weight * g_logits
                grad_v = g_logits.T @ e
                grad_b = g_logits.sum(axis=0)
                grad_e += g_logits @ classifier.weight
            else:
                grad_v = grad_b = None

            grad_w = grad_e.T @ x
            if use_aug:
                n_aug = min(len(aug_features), p * k)
                aug_idx = rng.choice(len(aug_features), size=n_aug, replace=False)
                xu = aug_features[aug_idx]
                eu = embedder.embed(xu)
                aug_seed = int(rng.integers(0, 2 ** 31))
                a_loss, g_lab, g_unl = augmented_triplet_loss(
                    e, eu, std, config.margin, aug_seed)
                grad_w += config.aug_weight * (g_lab.T @ x + g_unl.T @ xu)

            embedder.weight -= lr * grad_w
            if grad_v is not None:
                classifier.weight -= lr * grad_v
                classifier.bias -= lr * grad_b
            total = (config.triplet_weight * t_loss + config.id_weight * i_loss
                     + config.aug_weight * a_loss)
            trace.append({"epoch": epoch, "batch": batch_no, "triplet": t_loss,
                          "id": i_loss, "aug": a_loss, "total": total})
    return embedder, classifier, trace


def trace_csv(trace) -> str:
    buf = io.StringIO()
    buf.write("epoch,batch,triplet,id,aug,total\n")
    for row in trace:
        buf.write(f"{row['epoch']},{row['batch']},{row['triplet']!r},"
                  f"{row['id']!r},{row['aug']!r},{row['total']!r}\n")
    return buf.getvalue()
