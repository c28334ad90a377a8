"""
End to end runs at desk scale. Deselected by default; run with `pytest -m slow`.
"""
from src.hawkes.model import BlockPairParams, MulchModel
from src.hawkes.simulate import (
    DAY_BETAS,
    SimConfig,
    generate_network,
    preset_params,
    simulate_block_pair,
    simulate_from_model,
)
from src.ml.evaluate import parameter_mse
from src.ml.fit import FitConfig, fit_mulch
from src.ml.spectral import adjusted_rand_index
from src.network.events import EventStream
from src.network.motifs import (
    count_temporal_motifs,
    count_temporal_motifs_bruteforce,
    motif_mape,
)

from scipy import stats
import numpy as np
import json
import pytest


pytestmark = pytest.mark.slow


def preset_run(preset, n_nodes, duration, seed):
    cfg = SimConfig.from_json(
        {"preset": preset, "n_nodes": n_nodes, "duration": duration, "seed": seed, "workers": 4}
    )
    return generate_network(cfg)


def assert_monotone(result):
    values = [result.initial_log_likelihood] + [s.log_likelihood for s in result.trajectory]
    assert np.all(np.diff(values) >= -1e-8)


def test_poisson_counts_fit_a_poisson_law():
    mu, duration = 0.05, 100.0
    theta = BlockPairParams(mu, np.zeros(6), [1.0])
    counts = []
    for seed in range(200):
        stream = simulate_block_pair(
            theta, None, [1.0], [0, 1, 2], None, duration, np.random.default_rng(seed)
        )
        pairs = stream.senders * 3 + stream.receivers
        counts.extend(np.bincount(pairs, minlength=9)[[1, 2, 3, 5, 6, 7]])

    counts = np.asarray(counts)
    mean = mu * duration
    edges = np.arange(0, 11)
    observed = np.array([np.sum(counts == k) for k in edges[:-1]] + [np.sum(counts >= 10)])
    probabilities = np.append(stats.poisson.pmf(edges[:-1], mean), stats.poisson.sf(9, mean))
    _, p_value = stats.chisquare(observed, probabilities * counts.size)
    assert p_value > 0.01


def test_membership_recovery_and_refinement():
    spectral, refined = [], []
    for seed in range(10):
        truth, stream = preset_run("assortative", 70, 105.0, seed)
        result = fit_mulch(stream, FitConfig(n_blocks=4, betas=DAY_BETAS, seed=seed, workers=4))
        assert_monotone(result)
        spectral.append(adjusted_rand_index(truth, result.spectral_membership))
        refined.append(adjusted_rand_index(truth, result.model.membership))
        assert refined[-1] >= spectral[-1]

    assert np.mean(spectral) >= 0.85
    assert np.mean(refined) >= 0.95


def test_parameter_error_shrinks_with_duration():
    params, betas = preset_params("disassortative")
    errors = {75.0: [], 150.0: []}
    for duration in errors:
        for seed in range(10):
            truth, stream = preset_run("disassortative", 70, duration, seed)
            cfg = FitConfig(n_blocks=2, betas=DAY_BETAS, seed=seed, workers=4)
            result = fit_mulch(stream, cfg)
            assert_monotone(result)
            truth_model = MulchModel(betas, params, truth)
            errors[duration].append(parameter_mse(truth_model, result.model))

    for key in ("mu", "self", "recip"):
        short = np.median([e[key] for e in errors[75.0]])
        long = np.median([e[key] for e in errors[150.0]])
        assert long < short, key


def test_motif_counts_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n_nodes = int(rng.integers(3, 7))
        n_events = int(rng.integers(3, 61))
        senders = rng.integers(0, n_nodes, n_events)
        receivers = (senders + rng.integers(1, n_nodes, n_events)) % n_nodes
        times = np.round(rng.uniform(0.0, 30.0, n_events), 1)
        stream = EventStream.from_arrays(senders, receivers, times, n_nodes)

        previous = None
        for delta in (1.0, 4.0, 10.0):
            counts = count_temporal_motifs(stream, delta).counts
            np.testing.assert_array_equal(
                counts, count_temporal_motifs_bruteforce(stream, delta).counts
            )
            if previous is not None:
                assert np.all(counts >= previous)
            previous = counts


def test_six_excitations_reproduce_motifs_better_than_two():
    _, stream = preset_run("disassortative", 40, 150.0, 1)
    actual = count_temporal_motifs(stream, 7.0)

    scores = {}
    for excitations in ("six", "two"):
        result = fit_mulch(
            stream, FitConfig(n_blocks=2, betas=DAY_BETAS, excitations=excitations, workers=4)
        )
        assert_monotone(result)
        sims = [
            count_temporal_motifs(
                simulate_from_model(result.model, stream.duration, seed=s, allow_unstable=True),
                7.0,
            )
            for s in range(5)
        ]
        scores[excitations] = motif_mape(actual, sims).value

    assert scores["six"] < scores["two"]


def test_fits_are_byte_identical_across_runs():
    _, stream = preset_run("assortative", 70, 105.0, 0)
    cfg = FitConfig(n_blocks=4, betas=DAY_BETAS, seed=0, workers=4)
    first = json.dumps(fit_mulch(stream, cfg).model.to_json(), sort_keys=True)
    second = json.dumps(fit_mulch(stream, cfg).model.to_json(), sort_keys=True)
    assert first == second
