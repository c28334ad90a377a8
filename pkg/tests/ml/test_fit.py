from src.hawkes.model import BlockPairParams, Membership, MulchModel
from src.hawkes.simulate import DAY_BETAS, SimConfig, generate_network, simulate_from_model
from src.ml import evaluate
from src.ml.fit import FitConfig, fit_block_pair, fit_mulch, refine_memberships, select_k
from src.ml.likelihood import block_pair_log_likelihood, full_log_likelihood
from src.ml.spectral import adjusted_rand_index
from src.network.events import EventStream, train_test_sizes

import numpy as np
import logging
import pytest


C = (0.33, 0.33, 0.34)


def poisson_stream(rate, n_nodes, duration, seed):
    rng = np.random.default_rng(seed)
    senders, receivers, times = [], [], []
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i == j:
                continue
            count = rng.poisson(rate * duration)
            senders += [i] * count
            receivers += [j] * count
            times += list(rng.uniform(0.0, duration, count))
    return EventStream.from_arrays(senders, receivers, times, n_nodes, duration)


def two_block_model(within=0.5, between=0.02, alpha=0.02, n_nodes=8, betas=DAY_BETAS):
    labels = np.arange(n_nodes) % 2
    params = [
        [
            BlockPairParams(within if a == b else between, np.full(6, alpha), C)
            for b in range(2)
        ]
        for a in range(2)
    ]
    return MulchModel(betas, params, Membership(labels, 2))


@pytest.fixture(scope="module")
def two_block_data():
    model = two_block_model()
    return model, simulate_from_model(model, 60.0, seed=1)


def test_poisson_rate_is_recovered():
    stream = poisson_stream(0.5, 4, 1000.0, seed=0)
    cfg = FitConfig(n_blocks=1, betas=(1.0,))
    fit = fit_block_pair(stream, Membership([0] * 4, 1), (0, 0), (1.0,), cfg)

    assert fit.params.mu == pytest.approx(0.5, rel=0.05)
    assert fit.params.alpha.sum() < 0.05
    assert not fit.empty


def test_initializations_agree_on_concave_objective(two_block_data):
    model, stream = two_block_data
    cfg = FitConfig(n_blocks=2, betas=(1.0,))
    fits = [
        fit_block_pair(stream, model.membership, (0, 1), (1.0,), cfg, np.random.default_rng(seed))
        for seed in (0, 1)
    ]
    assert fits[0].log_likelihood == pytest.approx(fits[1].log_likelihood, rel=1e-4)


def test_warm_start_never_loses_likelihood(two_block_data):
    model, stream = two_block_data
    truth = model.block_pair(0, 0)
    cfg = FitConfig(n_blocks=2, betas=DAY_BETAS, max_optimizer_iters=1)
    fit = fit_block_pair(stream, model.membership, (0, 0), DAY_BETAS, cfg, init=truth)

    at_truth = block_pair_log_likelihood(truth, DAY_BETAS, stream, model.membership, (0, 0))
    assert fit.log_likelihood >= at_truth - 1e-9


def test_masked_excitations_stay_zero(two_block_data):
    _, stream = two_block_data
    result = fit_mulch(stream, FitConfig(n_blocks=2, betas=DAY_BETAS, excitations="two"))
    assert np.all(result.model.alpha[..., 2:] == 0)
    assert np.all(result.model.alpha[..., :2] > 0)


def test_uniform_kernel_weights(two_block_data):
    _, stream = two_block_data
    result = fit_mulch(
        stream, FitConfig(n_blocks=2, betas=DAY_BETAS, kernel_weights="uniform", refine=False)
    )
    np.testing.assert_allclose(result.model.c, 1.0 / 3.0)


def test_empty_block_pair_is_flagged(caplog):
    stream = EventStream.from_arrays([0, 1], [1, 0], [1.0, 2.0], 3, 5.0)
    cfg = FitConfig(n_blocks=2, betas=(1.0,))
    with caplog.at_level(logging.WARNING, logger="mulch"):
        fit = fit_block_pair(stream, Membership([0, 0, 1], 2), (1, 1), (1.0,), cfg)
    assert fit.empty
    assert fit.log_likelihood == 0.0
    assert "empty block pair" in caplog.text


def test_zero_refinement_iterations_change_nothing(two_block_data):
    model, stream = two_block_data
    shuffled = model.with_membership(Membership([0, 0, 1, 1, 0, 0, 1, 1], 2))
    cfg = FitConfig(n_blocks=2, betas=DAY_BETAS, max_refinement_iters=0)
    membership, refined, trajectory = refine_memberships(stream, shuffled, cfg)

    assert membership == shuffled.membership
    assert refined is shuffled
    assert trajectory == []


def test_refinement_does_not_decrease_likelihood(two_block_data):
    _, stream = two_block_data
    result = fit_mulch(stream, FitConfig(n_blocks=2, betas=DAY_BETAS, seed=3))
    values = [result.initial_log_likelihood] + [s.log_likelihood for s in result.trajectory]

    assert np.all(np.diff(values) >= -1e-8)
    assert result.log_likelihood == pytest.approx(values[-1])
    assert result.log_likelihood == pytest.approx(full_log_likelihood(result.model, stream))
    assert result.trajectory[-1].changes == 0 or len(result.trajectory) == 15


def test_true_membership_is_a_fixed_point(two_block_data):
    model, stream = two_block_data
    cfg = FitConfig(n_blocks=2, betas=DAY_BETAS)
    membership, _, trajectory = refine_memberships(stream, model, cfg)

    assert membership == model.membership
    assert trajectory[0].changes == 0


def test_refinement_repairs_a_misplaced_node(two_block_data):
    model, stream = two_block_data
    labels = model.membership.labels.copy()
    labels[0] = 1 - labels[0]
    cfg = FitConfig(n_blocks=2, betas=DAY_BETAS)
    membership, _, trajectory = refine_memberships(
        stream, model.with_membership(Membership(labels, 2)), cfg
    )

    assert membership == model.membership
    assert trajectory[0].changes >= 1


def test_single_block_fit(two_block_data):
    _, stream = two_block_data
    result = fit_mulch(stream, FitConfig(n_blocks=1, betas=DAY_BETAS))

    assert np.all(result.model.membership.labels == 0)
    assert result.trajectory == []
    assert result.block_log_likelihoods.shape == (1, 1)


def test_fit_is_deterministic(two_block_data):
    _, stream = two_block_data
    first = fit_mulch(stream, FitConfig(n_blocks=2, betas=DAY_BETAS, seed=7))
    second = fit_mulch(stream, FitConfig(n_blocks=2, betas=DAY_BETAS, seed=7, workers=3))

    assert first.model.membership == second.model.membership
    assert first.log_likelihood == second.log_likelihood
    np.testing.assert_array_equal(first.model.alpha, second.model.alpha)


def test_fit_trace(two_block_data):
    _, stream = two_block_data
    trace = fit_mulch(stream, FitConfig(n_blocks=2, betas=DAY_BETAS)).trace()

    assert set(trace["timings"]) == {"spectral", "block_pair_fit", "refinement", "total"}
    assert len(trace["spectral_membership"]) == stream.n_nodes
    assert trace["flags"]["empty"] == []


def test_fit_config():
    cfg = FitConfig.from_config({"betas": [1.0, 2.0], "workers": 4}, n_blocks=3, seed=None)
    assert cfg.workers == 4
    assert cfg.seed == 0
    assert cfg.betas == (1.0, 2.0)

    with pytest.raises(ValueError):
        FitConfig(n_blocks=0, betas=(1.0,))
    with pytest.raises(ValueError):
        FitConfig(n_blocks=2, betas=(-1.0,))
    with pytest.raises(ValueError):
        FitConfig(n_blocks=2, betas=(1.0,), kernel_weights="learned")


def test_fit_rejects_too_few_active_nodes():
    stream = EventStream.from_arrays([0], [1], [1.0], 6, 2.0)
    with pytest.raises(ValueError):
        fit_mulch(stream, FitConfig(n_blocks=3, betas=(1.0,)))


def test_select_k_candidates(two_block_data):
    _, stream = two_block_data
    n_train = train_test_sizes(len(stream), 0.8)
    cfg = FitConfig(n_blocks=1, betas=DAY_BETAS, refine=False)

    best, scores = select_k(stream, n_train, [2], cfg)
    assert best == 2
    assert list(scores) == [2]

    with pytest.raises(ValueError):
        select_k(stream, n_train, [], cfg)
    with pytest.raises(ValueError):
        select_k(stream, n_train, [2], cfg, metric="bic")


def test_select_k_ties_go_to_the_smallest_k(two_block_data, monkeypatch):
    _, stream = two_block_data
    n_train = train_test_sizes(len(stream), 0.8)
    monkeypatch.setattr(evaluate, "test_log_likelihood_per_event", lambda *args: -1.5)

    cfg = FitConfig(n_blocks=1, betas=DAY_BETAS, refine=False)
    best, scores = select_k(stream, n_train, [3, 1, 2], cfg)
    assert best == 1
    assert scores == {1: -1.5, 2: -1.5, 3: -1.5}


@pytest.mark.slow
def test_select_k_prefers_true_block_count():
    cfg = SimConfig.from_json(
        {"preset": "disassortative", "n_nodes": 40, "duration": 200.0, "seed": 2, "workers": 4}
    )
    _, stream = generate_network(cfg)
    n_train = train_test_sizes(len(stream), 0.8)
    best, scores = select_k(
        stream, n_train, [1, 2, 3], FitConfig(n_blocks=1, betas=DAY_BETAS, workers=4)
    )
    assert best == 2, scores


@pytest.mark.slow
def test_refinement_does_not_hurt_recovery():
    cfg = SimConfig.from_json(
        {"preset": "assortative", "n_nodes": 40, "duration": 105.0, "seed": 5, "workers": 4}
    )
    truth, stream = generate_network(cfg)
    result = fit_mulch(stream, FitConfig(n_blocks=4, betas=DAY_BETAS, workers=4))

    spectral = adjusted_rand_index(truth, result.spectral_membership)
    refined = adjusted_rand_index(truth, result.model.membership)
    assert refined >= spectral
