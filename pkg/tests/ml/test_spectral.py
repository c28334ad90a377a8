from src.hawkes.simulate import SimConfig, generate_network
from src.ml.spectral import adjusted_rand_index, spectral_cluster, spectral_embedding
from src.network.events import count_matrix

import numpy as np
import logging
import pytest


def block_counts(labels, within=10, between=1, noise_seed=None):
    labels = np.asarray(labels)
    counts = np.where(labels[:, None] == labels[None, :], within, between).astype(float)
    if noise_seed is not None:
        counts = np.random.default_rng(noise_seed).poisson(counts).astype(float)
    np.fill_diagonal(counts, 0)
    return counts


def test_block_constant_counts_are_recovered():
    truth = [0] * 5 + [1] * 5
    membership = spectral_cluster(block_counts(truth), 2, seed=0)
    assert adjusted_rand_index(truth, membership) == 1.0


def test_recovery_is_invariant_to_node_order():
    truth = np.repeat([0, 1, 2], 8)
    counts = block_counts(truth, within=12, between=2, noise_seed=4)
    order = np.random.default_rng(0).permutation(truth.size)

    labels = spectral_cluster(counts, 3, seed=1).labels
    shuffled = spectral_cluster(counts[np.ix_(order, order)], 3, seed=1).labels
    assert adjusted_rand_index(labels[order], shuffled) == 1.0


def test_clustering_is_deterministic_under_seed():
    counts = block_counts(np.repeat([0, 1], 10), noise_seed=2)
    assert spectral_cluster(counts, 2, seed=5) == spectral_cluster(counts, 2, seed=5)


def test_embedding_rows_are_unit_or_zero():
    counts = block_counts(np.repeat([0, 1], 6), noise_seed=3)
    counts[4] = 0
    counts[:, 4] = 0
    embedding = spectral_embedding(counts, 2)
    norms = np.linalg.norm(embedding, axis=1)

    assert embedding.shape == (12, 4)
    assert norms[4] == 0.0
    np.testing.assert_allclose(np.delete(norms, 4), 1.0)


def test_isolated_nodes_do_not_shape_the_clusters():
    truth = np.repeat([0, 1], 3)
    counts = np.zeros((26, 26))
    counts[:6, :6] = block_counts(truth, within=10, between=0)
    membership = spectral_cluster(counts, 2, seed=0)

    assert adjusted_rand_index(truth, membership.labels[:6]) == 1.0
    assert len(set(membership.labels[6:])) == 1


def test_zero_matrix_gives_single_cluster(caplog):
    with caplog.at_level(logging.WARNING, logger="mulch"):
        membership = spectral_cluster(np.zeros((6, 6)), 3)
    assert np.all(membership.labels == 0)
    assert "degenerate" in caplog.text


def test_single_block_and_size_checks():
    assert np.all(spectral_cluster(block_counts([0, 1, 0]), 1).labels == 0)
    with pytest.raises(ValueError):
        spectral_cluster(np.ones((2, 2)), 3)
    with pytest.raises(ValueError):
        spectral_cluster(np.ones((2, 3)), 1)


def test_adjusted_rand_index():
    assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)
    assert adjusted_rand_index([0, 1, 2, 0], [2, 0, 0, 1]) == pytest.approx(
        adjusted_rand_index([2, 0, 0, 1], [0, 1, 2, 0])
    )
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 1])


@pytest.mark.slow
def test_assortative_network_is_recovered():
    cfg = SimConfig.from_json(
        {"preset": "assortative", "n_nodes": 70, "duration": 105.0, "seed": 0, "workers": 4}
    )
    truth, stream = generate_network(cfg)
    estimate = spectral_cluster(count_matrix(stream), 4, seed=0)
    assert adjusted_rand_index(truth, estimate) > 0.9
