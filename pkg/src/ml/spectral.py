from src.hawkes.model import Membership
from src.logs import log_entry

from sklearn.metrics import adjusted_rand_score
from sklearn.cluster import KMeans
import numpy as np
import logging


RANK_TOLERANCE = 1e-10


def spectral_embedding(counts: np.ndarray, n_blocks: int) -> np.ndarray:
    """
    Rows of [U_K S_K^1/2 | V_K S_K^1/2] from the top-K singular triplets of the
    count matrix, each normalized to unit length (zero rows stay zero).
    """
    counts = np.asarray(counts, dtype=float)
    u, s, vt = np.linalg.svd(counts)
    u, s, v = u[:, :n_blocks], s[:n_blocks], vt[:n_blocks].T

    rank = int(np.sum(s > RANK_TOLERANCE * max(s.max(initial=0.0), 1.0)))
    if rank < n_blocks:
        log_entry(
            "spectral",
            {"warning": "count matrix rank below K", "rank": rank, "K": n_blocks},
            logging.WARNING,
        )

    scale = np.sqrt(s)
    embedding = np.hstack([u * scale, v * scale])
    norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    nonzero = norms > RANK_TOLERANCE * max(float(norms.max(initial=0.0)), 1.0)
    return np.divide(embedding, norms, out=np.zeros_like(embedding), where=nonzero)


def spectral_cluster(
    counts: np.ndarray,
    n_blocks: int,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> Membership:
    """Directed spectral clustering of a count matrix into n_blocks blocks."""
    counts = np.asarray(counts)
    n = counts.shape[0]
    if counts.ndim != 2 or counts.shape[1] != n:
        raise ValueError("Count matrix must be square")
    if n_blocks < 1:
        raise ValueError(f"K must be positive, got {n_blocks}")
    if n < n_blocks:
        raise ValueError(f"Cannot split {n} nodes into {n_blocks} blocks")
    if n_blocks == 1:
        return Membership(np.zeros(n, dtype=np.int64), 1)

    embedding = spectral_embedding(counts, n_blocks)
    # isolated nodes embed at the origin and join the nearest centroid afterwards
    active = np.any(embedding != 0, axis=1)
    distinct = np.unique(embedding[active], axis=0).shape[0]
    if distinct < 2:
        log_entry(
            "spectral",
            {"warning": "degenerate embedding, single cluster", "K": n_blocks},
            logging.WARNING,
        )
        return Membership(np.zeros(n, dtype=np.int64), n_blocks)

    kmeans = KMeans(
        n_clusters=min(n_blocks, distinct),
        init="k-means++",
        n_init=n_init,
        max_iter=max_iter,
        tol=tol,
        random_state=seed,
    )
    labels = np.empty(n, dtype=np.int64)
    labels[active] = kmeans.fit_predict(embedding[active])
    if not active.all():
        labels[~active] = kmeans.predict(embedding[~active])
    log_entry(
        "spectral",
        {
            "K": n_blocks,
            "inertia": float(kmeans.inertia_),
            "sizes": np.bincount(labels).tolist(),
            "isolated": int(n - active.sum()),
        },
    )
    return Membership(labels, n_blocks)


def adjusted_rand_index(z_true, z_hat) -> float:
    """Hubert-Arabie adjusted Rand index of two labelings."""
    true_labels = z_true.labels if isinstance(z_true, Membership) else np.asarray(z_true)
    hat_labels = z_hat.labels if isinstance(z_hat, Membership) else np.asarray(z_hat)
    if true_labels.shape != hat_labels.shape:
        raise ValueError(
            f"Labelings differ in length: {true_labels.size} vs {hat_labels.size}"
        )
    return float(adjusted_rand_score(true_labels, hat_labels))
