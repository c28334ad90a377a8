from src.network.events import EventStream
from src.network.motifs import (
    GRID_SHAPE,
    MotifMatrix,
    classify_triple,
    count_temporal_motifs,
    count_temporal_motifs_bruteforce,
    motif_mape,
)

from itertools import permutations, product
import numpy as np
import pytest


EDGES_ON_THREE = [(u, v) for u, v in permutations(range(3), 2)]


def random_stream(seed, n_nodes=6, n_events=80, horizon=20.0):
    rng = np.random.default_rng(seed)
    senders = rng.integers(0, n_nodes, n_events)
    receivers = (senders + rng.integers(1, n_nodes, n_events)) % n_nodes
    times = np.sort(rng.uniform(0.0, horizon, n_events))
    return EventStream.from_arrays(senders, receivers, times, n_nodes, horizon)


def reversal_permutation():
    """Cell each motif cell moves to when every edge is reversed."""
    mapping = {}
    for triple in product(EDGES_ON_THREE, repeat=3):
        cell = classify_triple(*triple)
        flipped = classify_triple(*[(v, u) for u, v in triple])
        assert mapping.setdefault(cell, flipped) == flipped
    return mapping


def test_every_cell_is_reachable():
    cells = {classify_triple(*triple) for triple in product(EDGES_ON_THREE, repeat=3)}
    assert cells == set(product(range(6), range(6)))


def test_known_cells():
    assert classify_triple((0, 1), (1, 0), (0, 1)) == (5, 0)
    assert classify_triple((0, 1), (0, 1), (0, 1)) == (4, 0)
    # triangle: 0->1, then 2->0, then 1->2
    assert classify_triple((0, 1), (2, 0), (1, 2)) == (0, 3)
    # star centred on 0 with neighbours 1, 2, 1, all edges leaving 0
    assert classify_triple((0, 1), (0, 2), (0, 1)) == (3, 0)
    assert classify_triple((0, 1), (2, 3), (0, 1)) is None


def test_single_motif_inside_and_outside_window():
    stream = EventStream.from_arrays([0, 1, 0], [1, 0, 1], [1.0, 2.0, 3.0], n_nodes=2)

    inside = count_temporal_motifs(stream, 10.0)
    assert inside.counts[5, 0] == 1
    assert inside.total == 1

    outside = count_temporal_motifs(stream, 1.5)
    assert outside.total == 0


def test_four_node_triples_are_ignored():
    stream = EventStream.from_arrays([0, 2, 0], [1, 3, 1], [1.0, 2.0, 3.0], n_nodes=4)
    assert count_temporal_motifs(stream, 10.0).total == 0


def test_equal_times_follow_stream_order():
    stream = EventStream.from_arrays([0, 1, 0], [1, 0, 1], [1.0, 1.0, 1.0], n_nodes=2)
    assert count_temporal_motifs(stream, 0.5).counts[5, 0] == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_exhaustive_count(seed):
    stream = random_stream(seed)
    fast = count_temporal_motifs(stream, 3.0)
    slow = count_temporal_motifs_bruteforce(stream, 3.0)

    np.testing.assert_array_equal(fast.counts, slow.counts)
    assert fast.total > 0


def test_edge_reversal_permutes_cells():
    stream = random_stream(7)
    reversed_stream = EventStream.from_arrays(
        stream.receivers, stream.senders, stream.times, stream.n_nodes, stream.duration
    )
    counts = count_temporal_motifs(stream, 4.0).counts
    flipped = count_temporal_motifs(reversed_stream, 4.0).counts

    for cell, target in reversal_permutation().items():
        assert flipped[target] == counts[cell]


def test_node_relabelling_leaves_counts_unchanged():
    stream = random_stream(11)
    relabel = np.random.default_rng(3).permutation(stream.n_nodes)
    shuffled = EventStream.from_arrays(
        relabel[stream.senders], relabel[stream.receivers], stream.times, stream.n_nodes
    )
    np.testing.assert_array_equal(
        count_temporal_motifs(stream, 2.0).counts, count_temporal_motifs(shuffled, 2.0).counts
    )


def test_delta_must_be_positive():
    with pytest.raises(ValueError):
        count_temporal_motifs(random_stream(0), 0.0)


def test_mape_excludes_zero_cells():
    actual = np.zeros(GRID_SHAPE, dtype=int)
    actual[0, 0], actual[1, 1] = 10, 20
    sims = []
    for first, second in ((12, 30), (8, 20)):
        counts = np.zeros(GRID_SHAPE, dtype=int)
        counts[0, 0], counts[1, 1], counts[5, 5] = first, second, 4
        sims.append(MotifMatrix(counts, 7.0))

    score = motif_mape(MotifMatrix(actual, 7.0), sims)
    assert score.value == pytest.approx(12.5)
    assert score.excluded_cells == 34


def test_mape_rejects_mismatched_delta():
    counts = np.ones(GRID_SHAPE, dtype=int)
    with pytest.raises(ValueError, match="delta"):
        motif_mape(MotifMatrix(counts, 7.0), [MotifMatrix(counts, 1.0)])


def test_motif_matrix_file(tmp_path):
    matrix = count_temporal_motifs(random_stream(5), 3.0)
    path = str(tmp_path / "motifs.json")
    matrix.save(path)
    loaded = MotifMatrix.load(path)

    np.testing.assert_array_equal(loaded.counts, matrix.counts)
    assert loaded.delta == 3.0
