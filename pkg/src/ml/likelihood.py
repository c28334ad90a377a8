from src.exceptions import LikelihoodError
from src.hawkes.model import (
    ExcitationType,
    Membership,
    MulchModel,
    BlockPairParams,
    N_EXCITATIONS,
)
from src.network.events import EventStream

from dataclasses import dataclass
import numpy as np


SELF = ExcitationType.SELF
RECIP = ExcitationType.RECIPROCAL
TURN = ExcitationType.TURN_CONTINUATION
GEN_RECIP = ExcitationType.GENERALIZED_RECIPROCITY
ALLIED_CONT = ExcitationType.ALLIED_CONTINUATION
ALLIED_RECIP = ExcitationType.ALLIED_RECIPROCITY


class PairExposures:
    """
    Decayed exposure of every event to the earlier events of each ordered pair
    touching its sender or receiver. Independent of the membership, so it is
    computed once per (stream, betas, duration):

        out_sender[e, w, q]   = sum_{(x_e, w, s), s < t_e} exp(-beta_q (t_e - s))
        in_sender[e, w, q]    = same over events (w, x_e)
        out_receiver[e, w, q] = same over events (y_e, w)
        in_receiver[e, w, q]  = same over events (w, y_e)
    """

    def __init__(self, stream: EventStream, betas, duration: float = None):
        self.stream = stream
        self.betas = np.asarray(betas, dtype=float)
        self.duration = stream.duration if duration is None else float(duration)
        if len(stream) and stream.times[-1] > self.duration:
            raise ValueError("Likelihood horizon precedes the last event")

        m, n, Q = len(stream), stream.n_nodes, self.betas.size
        self.out_sender = np.zeros((m, n, Q))
        self.in_sender = np.zeros((m, n, Q))
        self.out_receiver = np.zeros((m, n, Q))
        self.in_receiver = np.zeros((m, n, Q))

        state = np.zeros((n, n, Q))
        last = np.zeros((n, n))
        senders, receivers, times = stream.senders, stream.receivers, stream.times

        start = 0
        while start < m:
            t = times[start]
            stop = start
            while stop < m and times[stop] == t:
                stop += 1
            # events sharing a timestamp do not excite each other
            for e in range(start, stop):
                x, y = senders[e], receivers[e]
                self.out_sender[e] = state[x] * np.exp(-np.multiply.outer(t - last[x], self.betas))
                self.in_sender[e] = state[:, x] * np.exp(-np.multiply.outer(t - last[:, x], self.betas))
                self.out_receiver[e] = state[y] * np.exp(-np.multiply.outer(t - last[y], self.betas))
                self.in_receiver[e] = state[:, y] * np.exp(-np.multiply.outer(t - last[:, y], self.betas))
            for e in range(start, stop):
                x, y = senders[e], receivers[e]
                state[x, y] = state[x, y] * np.exp(-self.betas * (t - last[x, y])) + 1.0
                last[x, y] = t
            start = stop

        events = np.arange(m)
        self.self_exposure = self.out_sender[events, receivers]
        self.recip_exposure = self.in_sender[events, receivers]
        self.survival = -np.expm1(-np.multiply.outer(self.duration - times, self.betas))

        self._touched = None

    @property
    def n_events(self) -> int:
        return len(self.stream)

    def touched_by(self, node: int) -> np.ndarray:
        """Events whose intensity can depend on the block of `node`."""
        if self._touched is None:
            touched = (
                (self.out_sender > 0).any(axis=2)
                | (self.in_sender > 0).any(axis=2)
                | (self.out_receiver > 0).any(axis=2)
                | (self.in_receiver > 0).any(axis=2)
            )
            events = np.arange(self.n_events)
            touched[events, self.stream.senders] = True
            touched[events, self.stream.receivers] = True
            self._touched = touched
        return np.flatnonzero(self._touched[:, node])


@dataclass
class BlockPairData:
    """
    Sufficient statistics of one block pair's log-likelihood:
        l = -mu N T - alpha . D . c + sum_e log(mu + alpha . H_e . c)
    """

    features: np.ndarray  # H_e[type, q], beta-weighted
    compensator: np.ndarray  # D[type, q]
    n_pairs: int
    duration: float
    event_index: np.ndarray

    @property
    def n_events(self) -> int:
        return self.features.shape[0]


def _excitation_features(self_exp, recip_exp, out_s, in_s, out_r, in_r, a, b):
    rows = np.arange(a.size)
    features = np.empty((a.size, N_EXCITATIONS, self_exp.shape[-1]))
    features[:, SELF] = self_exp
    features[:, RECIP] = recip_exp
    features[:, TURN] = out_s[rows, b] - self_exp
    features[:, GEN_RECIP] = in_s[rows, b] - recip_exp
    features[:, ALLIED_CONT] = in_r[rows, a] - self_exp
    features[:, ALLIED_RECIP] = out_r[rows, a] - recip_exp
    return np.clip(features, 0.0, None)


def _compensator_weights(sizes: np.ndarray, survival_sums: np.ndarray) -> np.ndarray:
    """D[a, b, type, q] for every block pair."""
    K = sizes.size
    diagonal = np.eye(K)
    n_a = sizes[:, None].astype(float)
    n_b = sizes[None, :].astype(float)
    turn = np.clip(n_b - 1 - diagonal, 0, None)[..., None]
    allied = np.clip(n_a - 1 - diagonal, 0, None)[..., None]
    s_ab = survival_sums
    s_ba = survival_sums.transpose(1, 0, 2)

    weights = np.empty((K, K, N_EXCITATIONS, survival_sums.shape[-1]))
    weights[:, :, SELF] = s_ab
    weights[:, :, RECIP] = s_ba
    weights[:, :, TURN] = turn * s_ab
    weights[:, :, GEN_RECIP] = turn * s_ba
    weights[:, :, ALLIED_CONT] = allied * s_ab
    weights[:, :, ALLIED_RECIP] = allied * s_ba
    return weights


def _pair_counts(sizes: np.ndarray) -> np.ndarray:
    return np.outer(sizes, sizes) - np.diag(sizes)


class ExcitationStatistics:
    """
    Membership-dependent view of PairExposures: per-event excitation features
    grouped by block pair, and exact single-node move gains for refinement.
    """

    def __init__(self, exposures: PairExposures, membership: Membership):
        if len(membership) != exposures.stream.n_nodes:
            raise ValueError("Membership size does not match the number of nodes")
        self.exposures = exposures
        self.n_blocks = membership.n_blocks
        self.labels = membership.labels.copy()
        self._params = None
        self._log_intensity = None
        self.rebuild()

    @property
    def membership(self) -> Membership:
        return Membership(self.labels.copy(), self.n_blocks)

    @property
    def duration(self) -> float:
        return self.exposures.duration

    def rebuild(self):
        ex = self.exposures
        onehot = np.zeros((self.labels.size, self.n_blocks))
        onehot[np.arange(self.labels.size), self.labels] = 1.0
        self.out_sender_blocks = np.einsum("ewq,wk->ekq", ex.out_sender, onehot)
        self.in_sender_blocks = np.einsum("ewq,wk->ekq", ex.in_sender, onehot)
        self.out_receiver_blocks = np.einsum("ewq,wk->ekq", ex.out_receiver, onehot)
        self.in_receiver_blocks = np.einsum("ewq,wk->ekq", ex.in_receiver, onehot)

        self.sizes = np.bincount(self.labels, minlength=self.n_blocks)
        self.sender_blocks = self.labels[ex.stream.senders]
        self.receiver_blocks = self.labels[ex.stream.receivers]
        self.survival_sums = np.zeros((self.n_blocks, self.n_blocks, ex.betas.size))
        np.add.at(self.survival_sums, (self.sender_blocks, self.receiver_blocks), ex.survival)
        if self._params is not None:
            self.bind(*self._params)

    def features(self, index=None) -> np.ndarray:
        """Unweighted excitation streams R[e, type, q] at each event's own time."""
        ex = self.exposures
        if index is None:
            index = slice(None)
        return _excitation_features(
            ex.self_exposure[index],
            ex.recip_exposure[index],
            self.out_sender_blocks[index],
            self.in_sender_blocks[index],
            self.out_receiver_blocks[index],
            self.in_receiver_blocks[index],
            self.sender_blocks[index],
            self.receiver_blocks[index],
        )

    def block_pair_data(self, a: int, b: int) -> BlockPairData:
        index = np.flatnonzero((self.sender_blocks == a) & (self.receiver_blocks == b))
        weights = _compensator_weights(self.sizes, self.survival_sums)
        return BlockPairData(
            features=self.features(index) * self.exposures.betas,
            compensator=weights[a, b],
            n_pairs=int(_pair_counts(self.sizes)[a, b]),
            duration=self.duration,
            event_index=index,
        )

    def _compensator_total(self, sizes, survival_sums, mu, alpha, c) -> np.ndarray:
        weights = _compensator_weights(sizes, survival_sums)
        return (
            mu * _pair_counts(sizes) * self.duration
            + np.einsum("abt,abtq,abq->ab", alpha, weights, c)
        )

    def _log_intensities(self, features, a, b, mu, alpha, c, index):
        betas = self.exposures.betas
        values = mu[a, b] + np.einsum("etq,et,eq->e", features, alpha[a, b], c[a, b] * betas)
        bad = np.flatnonzero(values <= 0)
        if bad.size:
            raise LikelihoodError(int(np.asarray(index)[bad[0]]), float(values[bad[0]]))
        return np.log(values)

    def bind(self, mu, alpha, c):
        """Fix the parameter grids used by log_likelihood_grid and move_gain."""
        self._params = (np.asarray(mu), np.asarray(alpha), np.asarray(c))
        index = np.arange(self.exposures.n_events)
        self._log_intensity = self._log_intensities(
            self.features(), self.sender_blocks, self.receiver_blocks, *self._params, index
        )
        return self

    def log_likelihood_grid(self, mu=None, alpha=None, c=None) -> np.ndarray:
        """K x K grid of block pair log-likelihoods."""
        if mu is not None:
            self.bind(mu, alpha, c)
        if self._params is None:
            raise ValueError("No parameters bound")
        K = self.n_blocks
        events = np.zeros((K, K))
        np.add.at(events, (self.sender_blocks, self.receiver_blocks), self._log_intensity)
        return events - self._compensator_total(self.sizes, self.survival_sums, *self._params)

    def _moved_state(self, node: int, block: int):
        ex = self.exposures
        old = self.labels[node]
        index = ex.touched_by(node)

        out_s = self.out_sender_blocks[index].copy()
        in_s = self.in_sender_blocks[index].copy()
        out_r = self.out_receiver_blocks[index].copy()
        in_r = self.in_receiver_blocks[index].copy()
        for blocks, source in (
            (out_s, ex.out_sender),
            (in_s, ex.in_sender),
            (out_r, ex.out_receiver),
            (in_r, ex.in_receiver),
        ):
            column = source[index, node]
            blocks[:, old] -= column
            blocks[:, block] += column

        labels = self.labels.copy()
        labels[node] = block
        a = labels[ex.stream.senders[index]]
        b = labels[ex.stream.receivers[index]]

        sizes = self.sizes.copy()
        sizes[old] -= 1
        sizes[block] += 1

        survival_sums = self.survival_sums.copy()
        incident = np.flatnonzero((ex.stream.senders == node) | (ex.stream.receivers == node))
        np.subtract.at(
            survival_sums,
            (self.sender_blocks[incident], self.receiver_blocks[incident]),
            ex.survival[incident],
        )
        np.add.at(
            survival_sums,
            (labels[ex.stream.senders[incident]], labels[ex.stream.receivers[incident]]),
            ex.survival[incident],
        )
        return index, (out_s, in_s, out_r, in_r), a, b, sizes, survival_sums

    def move_gain(self, node: int, block: int) -> float:
        """Exact change of the total log-likelihood if `node` moved to `block`."""
        if self._params is None:
            raise ValueError("No parameters bound")
        if block == self.labels[node]:
            return 0.0
        index, blocks, a, b, sizes, survival_sums = self._moved_state(node, block)
        ex = self.exposures
        features = _excitation_features(
            ex.self_exposure[index], ex.recip_exposure[index], *blocks, a, b
        )
        new_log = self._log_intensities(features, a, b, *self._params, index)
        old_comp = self._compensator_total(self.sizes, self.survival_sums, *self._params)
        new_comp = self._compensator_total(sizes, survival_sums, *self._params)
        return float(
            new_log.sum() - self._log_intensity[index].sum() - (new_comp.sum() - old_comp.sum())
        )

    def move(self, node: int, block: int):
        if block == self.labels[node]:
            return self
        index, blocks, a, b, sizes, survival_sums = self._moved_state(node, block)
        (
            self.out_sender_blocks[index],
            self.in_sender_blocks[index],
            self.out_receiver_blocks[index],
            self.in_receiver_blocks[index],
        ) = blocks
        self.labels[node] = block
        self.sender_blocks[index] = a
        self.receiver_blocks[index] = b
        self.sizes = sizes
        self.survival_sums = survival_sums
        if self._params is not None:
            features = self.features(index)
            self._log_intensity[index] = self._log_intensities(
                features, a, b, *self._params, index
            )
        return self


def parameter_grids(model: MulchModel):
    return model.mu, model.alpha, model.c


def block_pair_objective(data: BlockPairData, mu: float, alpha, c) -> float:
    alpha = np.asarray(alpha, dtype=float)
    c = np.asarray(c, dtype=float)
    values = mu + np.einsum("etq,t,q->e", data.features, alpha, c)
    bad = np.flatnonzero(values <= 0)
    if bad.size:
        raise LikelihoodError(int(data.event_index[bad[0]]), float(values[bad[0]]))
    return float(
        -mu * data.n_pairs * data.duration - alpha @ data.compensator @ c + np.log(values).sum()
    )


def block_pair_gradient(data: BlockPairData, mu: float, alpha, c):
    """Log-likelihood and its gradient with respect to (mu, alpha, c)."""
    alpha = np.asarray(alpha, dtype=float)
    c = np.asarray(c, dtype=float)
    by_type = np.einsum("etq,q->et", data.features, c)
    by_kernel = np.einsum("etq,t->eq", data.features, alpha)
    values = mu + by_type @ alpha
    bad = np.flatnonzero(values <= 0)
    if bad.size:
        raise LikelihoodError(int(data.event_index[bad[0]]), float(values[bad[0]]))
    inverse = 1.0 / values

    value = -mu * data.n_pairs * data.duration - alpha @ data.compensator @ c + np.log(values).sum()
    grad_mu = -data.n_pairs * data.duration + inverse.sum()
    grad_alpha = -(data.compensator @ c) + inverse @ by_type
    grad_c = -(alpha @ data.compensator) + inverse @ by_kernel
    return float(value), float(grad_mu), grad_alpha, grad_c


def block_pair_log_likelihood(
    params: BlockPairParams,
    betas,
    events: EventStream,
    membership: Membership,
    block_pair,
    duration: float = None,
) -> float:
    """Log-likelihood of the receiving pairs in block pair (a, b)."""
    a, b = block_pair
    stats = ExcitationStatistics(PairExposures(events, betas, duration), membership)
    return block_pair_objective(stats.block_pair_data(a, b), params.mu, params.alpha, params.c)


def log_likelihood_grid(model: MulchModel, events: EventStream, duration: float = None):
    if len(model.membership) != events.n_nodes:
        raise ValueError("Model membership does not cover every node of the stream")
    stats = ExcitationStatistics(PairExposures(events, model.betas, duration), model.membership)
    return stats.log_likelihood_grid(*parameter_grids(model))


def full_log_likelihood(model: MulchModel, events: EventStream, duration: float = None) -> float:
    """Sum of the K x K block pair log-likelihoods."""
    return float(log_likelihood_grid(model, events, duration).sum())
