from src.exceptions import NonStationaryError
from src.hawkes.model import (
    EXCITATION_KEYS,
    MulchModel,
    pair_exposures,
    typed_exposures,
)
from src.hawkes.simulate import branching_matrix, stationarity_check
from src.ml.likelihood import full_log_likelihood
from src.network.events import EventStream, assign_new_nodes, split_train_test
from src.logs import log_entry

from scipy.optimize import linear_sum_assignment
from sklearn.metrics import roc_auc_score
import scipy.sparse.linalg as spla
import scipy.sparse as sp
import numpy as np
import logging


def _covering(model: MulchModel, n_nodes: int) -> MulchModel:
    if len(model.membership) == n_nodes:
        return model
    return model.with_membership(assign_new_nodes(model.membership, n_nodes))


def test_log_likelihood_per_event(
    model: MulchModel, full: EventStream, n_train: int, test_horizon: str = "stream"
) -> float:
    """
    [l(full) - l(train)] / l_test: log-likelihood of the test events given the
    whole preceding history, per test event. n_train=0 scores the full stream.
    """
    model = _covering(model, full.n_nodes)
    if n_train == 0:
        if len(full) == 0:
            raise ValueError("No test events to score")
        horizon = full.duration if test_horizon == "stream" else float(full.times[-1])
        return full_log_likelihood(model, full, horizon) / len(full)

    train, test = split_train_test(full, n_train, test_horizon)
    if len(test) == 0:
        raise ValueError("No test events to score")
    full_value = full_log_likelihood(model, full, test.duration)
    train_value = full_log_likelihood(model, train)
    return (full_value - train_value) / len(test)


# not a pytest test despite the name
test_log_likelihood_per_event.__test__ = False


def link_prediction_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUC; ties count one half."""
    return float(roc_auc_score(np.asarray(labels).astype(int), np.asarray(scores)))


def window_scores(model: MulchModel, history: EventStream, start: float, length: float):
    """
    P(at least one event in [start, start + length)) for every ordered pair, from
    the closed-form compensator given events before `start`.
    """
    z = model.membership.labels
    streams = typed_exposures(pair_exposures(history, model.betas, start), model.membership)
    decayed = -np.expm1(-model.betas * length)
    alpha = model.alpha[z][:, z]
    c = model.c[z][:, z] * decayed
    integral = model.mu[z][:, z] * length + np.einsum("ijt,ijq,ijtq->ij", alpha, c, streams)
    return -np.expm1(-integral)


def dynamic_link_prediction_auc(
    model: MulchModel,
    test: EventStream,
    history: EventStream = None,
    n_windows: int = 100,
    window_len: float = None,
    rng: np.random.Generator = None,
    max_retries: int = 20,
):
    """
    Mean and standard deviation of the link prediction AUC over random windows
    inside the test period [history.duration, test.duration].
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    events = EventStream.concatenate([history, test]) if history is not None else test
    start = history.duration if history is not None else 0.0
    end = test.duration
    span = end - start
    if span <= 0:
        raise ValueError("Test period has no length")
    length = span / 100.0 if window_len is None else float(window_len)
    if not 0 < length <= span:
        raise ValueError(f"Window length {length} does not fit in the test period {span}")

    model = _covering(model, events.n_nodes)
    off_diagonal = ~np.eye(events.n_nodes, dtype=bool)
    aucs, skipped = [], 0

    for _ in range(n_windows):
        for _ in range(max_retries):
            left = rng.uniform(start, end - length)
            window = events.window(left, left + length)
            labels = np.zeros((events.n_nodes, events.n_nodes), dtype=bool)
            labels[window.senders, window.receivers] = True
            labels = labels[off_diagonal]
            if labels.all() or not labels.any():
                continue
            scores = window_scores(model, events, left, length)[off_diagonal]
            aucs.append(link_prediction_auc(scores, labels))
            break
        else:
            skipped += 1

    if skipped:
        log_entry(
            "evaluate",
            {"warning": "windows skipped without both label classes", "skipped": skipped},
            logging.WARNING,
        )
    if not aucs:
        raise ValueError("No window contained both linked and unlinked pairs")
    return float(np.mean(aucs)), float(np.std(aucs))


def expected_count_matrix(model: MulchModel, duration: float) -> np.ndarray:
    """
    Stationary expected event counts of every ordered pair over [0, duration]:
    per couple, solve lambda = mu + Gamma^T lambda.
    """
    radius = stationarity_check(model)
    if radius >= 1:
        raise NonStationaryError(radius)

    n = model.n_nodes
    z = model.membership.labels
    counts = np.zeros((n, n))
    for a in range(model.n_blocks):
        for b in range(a, model.n_blocks):
            gamma, pairs = branching_matrix(model, a, b)
            if len(pairs) == 0:
                continue
            mu = model.mu[z[pairs[:, 0]], z[pairs[:, 1]]]
            system = sp.identity(len(pairs), format="csc") - gamma.T.tocsc()
            rates = np.atleast_1d(spla.spsolve(system, mu))
            counts[pairs[:, 0], pairs[:, 1]] = rates * duration
    return counts


def align_blocks(true_labels, estimated_labels, n_blocks: int) -> np.ndarray:
    """Permutation mapping estimated block labels onto true ones by maximum overlap."""
    overlap = np.zeros((n_blocks, n_blocks))
    np.add.at(overlap, (np.asarray(estimated_labels), np.asarray(true_labels)), 1)
    rows, cols = linear_sum_assignment(-overlap)
    mapping = np.arange(n_blocks)
    mapping[rows] = cols
    return mapping


def parameter_mse(true_model: MulchModel, fitted: MulchModel) -> dict:
    """Mean squared error of mu and of each alpha over the K x K grid, blocks aligned."""
    K = true_model.n_blocks
    if fitted.n_blocks != K:
        raise ValueError("Models must have the same number of blocks")
    mapping = align_blocks(true_model.membership.labels, fitted.membership.labels, K)
    mu = np.empty((K, K))
    alpha = np.empty_like(true_model.alpha)
    for a in range(K):
        for b in range(K):
            mu[mapping[a], mapping[b]] = fitted.mu[a, b]
            alpha[mapping[a], mapping[b]] = fitted.alpha[a, b]

    errors = {"mu": float(np.mean((mu - true_model.mu) ** 2))}
    for index, key in enumerate(EXCITATION_KEYS):
        errors[key] = float(np.mean((alpha[..., index] - true_model.alpha[..., index]) ** 2))
    return errors
