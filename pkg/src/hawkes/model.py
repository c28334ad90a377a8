from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Tuple
from enum import IntEnum
import jsonschema
import numpy as np
import json

if TYPE_CHECKING:
    from src.network.events import Event, EventStream


class ExcitationType(IntEnum):
    """Row order of the excitation table; values index the alpha vector."""

    SELF = 0
    RECIPROCAL = 1
    TURN_CONTINUATION = 2
    GENERALIZED_RECIPROCITY = 3
    ALLIED_CONTINUATION = 4
    ALLIED_RECIPROCITY = 5

    @property
    def key(self) -> str:
        return EXCITATION_KEYS[self.value]

    @classmethod
    def from_key(cls, key: str) -> "ExcitationType":
        try:
            return cls(EXCITATION_KEYS.index(key))
        except ValueError:
            raise ValueError(
                f"Unknown excitation type {key!r}, expected one of {EXCITATION_KEYS}"
            )


N_EXCITATIONS = len(ExcitationType)
EXCITATION_KEYS = (
    "self",
    "recip",
    "turn",
    "gen_recip",
    "allied_cont",
    "allied_recip",
)

# Ablation variants: which alpha entries are free
EXCITATION_PRESETS = {
    "two": (ExcitationType.SELF, ExcitationType.RECIPROCAL),
    "four": (
        ExcitationType.SELF,
        ExcitationType.RECIPROCAL,
        ExcitationType.TURN_CONTINUATION,
        ExcitationType.GENERALIZED_RECIPROCITY,
    ),
    "six": tuple(ExcitationType),
}

# Types whose receiving pair lies in the reversed block pair (b, a)
REVERSED_TYPES = (
    ExcitationType.RECIPROCAL,
    ExcitationType.GENERALIZED_RECIPROCITY,
    ExcitationType.ALLIED_RECIPROCITY,
)


def parse_excitations(value) -> Tuple[ExcitationType, ...]:
    """Accepts a preset name, a comma separated list of keys, or an iterable of types."""
    if value is None:
        return EXCITATION_PRESETS["six"]
    if isinstance(value, str):
        if value in EXCITATION_PRESETS:
            return EXCITATION_PRESETS[value]
        value = [v.strip() for v in value.split(",") if v.strip()]
    types = []
    for item in value:
        etype = (
            item if isinstance(item, ExcitationType) else ExcitationType.from_key(item)
        )
        if etype not in types:
            types.append(etype)
    if not types:
        raise ValueError("At least one excitation type must be enabled.")
    return tuple(sorted(types))


def _labels_of(z) -> np.ndarray:
    return z.labels if isinstance(z, Membership) else np.asarray(z)


@dataclass(frozen=True)
class Membership:
    labels: np.ndarray
    n_blocks: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_blocks):
            raise ValueError(f"Block labels must lie in [0, {self.n_blocks})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_blocks", int(self.n_blocks))

    def __len__(self):
        return self.labels.size

    def __getitem__(self, node) -> int:
        return int(self.labels[node])

    def __eq__(self, other):
        if not isinstance(other, Membership):
            return NotImplemented
        return self.n_blocks == other.n_blocks and np.array_equal(
            self.labels, other.labels
        )

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_blocks)

    def members(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.labels == block)

    def one_hot(self) -> np.ndarray:
        onehot = np.zeros((self.labels.size, self.n_blocks))
        onehot[np.arange(self.labels.size), self.labels] = 1.0
        return onehot

    def moved(self, node: int, block: int) -> "Membership":
        labels = self.labels.copy()
        labels[node] = block
        return Membership(labels, self.n_blocks)

    def to_list(self) -> list:
        return [int(label) for label in self.labels]


@dataclass(frozen=True, eq=False)
class BlockPairParams:
    """Base rate, six excitation jumps and kernel mixture weights of one block pair."""

    mu: float
    alpha: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if alpha.size != N_EXCITATIONS:
            raise ValueError(f"alpha must have {N_EXCITATIONS} entries, got {alpha.size}")
        if c.size < 1:
            raise ValueError("c must have at least one kernel weight")
        if self.mu < 0 or np.any(alpha < 0) or np.any(c < 0):
            raise ValueError("Block pair parameters must be nonnegative")
        if abs(c.sum() - 1.0) > 1e-8:
            raise ValueError(f"Kernel weights must sum to 1, got {c.sum()!r}")
        alpha.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "c", c)

    @classmethod
    def floor(cls, n_kernels: int, epsilon: float) -> "BlockPairParams":
        """All-epsilon parameters used for empty block pairs."""
        return cls(epsilon, np.full(N_EXCITATIONS, epsilon), np.full(n_kernels, 1.0 / n_kernels))

    @classmethod
    def from_tuple(cls, values: Sequence[float], c: Sequence[float]) -> "BlockPairParams":
        """(mu, self, recip, turn, gen_recip, allied_cont, allied_recip)"""
        return cls(values[0], values[1:], c)

    def to_json(self) -> dict:
        return {
            "mu": self.mu,
            "alpha": {key: float(a) for key, a in zip(EXCITATION_KEYS, self.alpha)},
            "c": [float(w) for w in self.c],
        }

    @classmethod
    def from_json(cls, data: dict) -> "BlockPairParams":
        alpha = data["alpha"]
        if isinstance(alpha, dict):
            alpha = [alpha.get(key, 0.0) for key in EXCITATION_KEYS]
        return cls(data["mu"], alpha, data["c"])


MODEL_SCHEMA = {
    "type": "object",
    "required": ["K", "betas", "blocks", "membership"],
    "properties": {
        "K": {"type": "integer", "minimum": 1},
        "betas": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "number", "exclusiveMinimum": 0},
        },
        "blocks": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["mu", "alpha", "c"],
                    "properties": {
                        "mu": {"type": "number", "minimum": 0},
                        "alpha": {
                            "type": "object",
                            "properties": {
                                key: {"type": "number", "minimum": 0}
                                for key in EXCITATION_KEYS
                            },
                            "additionalProperties": False,
                        },
                        "c": {
                            "type": "array",
                            "items": {"type": "number", "minimum": 0},
                        },
                    },
                },
            },
        },
        "membership": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "node_ids": {"type": "array", "items": {"type": "string"}},
    },
}


class MulchModel:
    """
    K blocks, Q shared decays and the K x K grid of block pair parameters, bound
    to a node membership. Immutable; the dense grids (mu, alpha, c) are cached.
    """

    def __init__(
        self,
        betas: Sequence[float],
        params: Sequence[Sequence[BlockPairParams]],
        membership: Membership,
        node_ids: Optional[Sequence[str]] = None,
    ):
        betas = np.array(betas, dtype=float).reshape(-1)
        if betas.size < 1 or np.any(betas <= 0):
            raise ValueError("betas must be a nonempty vector of positive rates")
        betas.setflags(write=False)

        K = len(params)
        if K < 1 or any(len(row) != K for row in params):
            raise ValueError("params must be a complete K x K grid")
        if membership.n_blocks != K:
            raise ValueError(
                f"Membership has {membership.n_blocks} blocks but the grid has {K}"
            )
        for row in params:
            for p in row:
                if p.c.size != betas.size:
                    raise ValueError("Every c vector must have one weight per beta")

        self.betas = betas
        self.params = tuple(tuple(row) for row in params)
        self.membership = membership
        self.node_ids = tuple(node_ids) if node_ids is not None else None

        self.mu = np.array([[p.mu for p in row] for row in self.params])
        self.alpha = np.array([[p.alpha for p in row] for row in self.params])
        self.c = np.array([[p.c for p in row] for row in self.params])
        for grid in (self.mu, self.alpha, self.c):
            grid.setflags(write=False)

    @property
    def n_blocks(self) -> int:
        return len(self.params)

    @property
    def n_kernels(self) -> int:
        return self.betas.size

    @property
    def n_nodes(self) -> int:
        return len(self.membership)

    def block_pair(self, a: int, b: int) -> BlockPairParams:
        return self.params[a][b]

    def pair_params(self, i: int, j: int) -> BlockPairParams:
        z = self.membership.labels
        return self.params[z[i]][z[j]]

    def with_membership(self, membership: Membership) -> "MulchModel":
        return MulchModel(self.betas, self.params, membership, self.node_ids)

    def with_params(self, params) -> "MulchModel":
        return MulchModel(self.betas, params, self.membership, self.node_ids)

    def masked(self, excitations: Iterable[ExcitationType]) -> "MulchModel":
        """Copy with every alpha outside `excitations` set to zero."""
        keep = np.zeros(N_EXCITATIONS, dtype=bool)
        keep[list(parse_excitations(excitations))] = True
        params = [
            [BlockPairParams(p.mu, np.where(keep, p.alpha, 0.0), p.c) for p in row]
            for row in self.params
        ]
        return self.with_params(params)

    def to_json(self) -> dict:
        data = {
            "K": self.n_blocks,
            "betas": [float(b) for b in self.betas],
            "blocks": [[p.to_json() for p in row] for row in self.params],
            "membership": self.membership.to_list(),
        }
        if self.node_ids is not None:
            data["node_ids"] = list(self.node_ids)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "MulchModel":
        jsonschema.validate(data, MODEL_SCHEMA)
        K = data["K"]
        params = [[BlockPairParams.from_json(p) for p in row] for row in data["blocks"]]
        return cls(
            data["betas"],
            params,
            Membership(data["membership"], K),
            data.get("node_ids"),
        )

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "MulchModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def excitation_selector(src, dst, z) -> Optional[Tuple[ExcitationType, Tuple[int, int]]]:
    """
    Excitation type by which an event on `src` = (x, y) raises the intensity of
    `dst` = (i, j), together with the receiving pair's block pair, or None.
    """
    x, y = src
    i, j = dst
    labels = _labels_of(z)
    receiving = (int(labels[i]), int(labels[j]))

    if (i, j) == (x, y):
        return ExcitationType.SELF, receiving
    if (i, j) == (y, x):
        return ExcitationType.RECIPROCAL, receiving
    if i == x and j != y and labels[j] == labels[y]:
        return ExcitationType.TURN_CONTINUATION, receiving
    if i == y and j != x and labels[j] == labels[x]:
        return ExcitationType.GENERALIZED_RECIPROCITY, receiving
    if j == y and i != x and labels[i] == labels[x]:
        return ExcitationType.ALLIED_CONTINUATION, receiving
    if j == x and i != y and labels[i] == labels[y]:
        return ExcitationType.ALLIED_RECIPROCITY, receiving
    return None


def excitation_targets(src, membership: Membership, members=None):
    """
    Every pair excited by an event on `src`, grouped by type:
    list of (ExcitationType, int array of shape (k, 2)).
    """
    x, y = int(src[0]), int(src[1])
    labels = membership.labels
    if members is None:
        members = [membership.members(k) for k in range(membership.n_blocks)]
    block_x = members[labels[x]]
    block_y = members[labels[y]]
    others_x = block_x[(block_x != x) & (block_x != y)]
    others_y = block_y[(block_y != x) & (block_y != y)]

    def fan_out(node, others):
        return np.column_stack([np.full(others.size, node), others])

    def fan_in(others, node):
        return np.column_stack([others, np.full(others.size, node)])

    return [
        (ExcitationType.SELF, np.array([[x, y]])),
        (ExcitationType.RECIPROCAL, np.array([[y, x]])),
        (ExcitationType.TURN_CONTINUATION, fan_out(x, others_y)),
        (ExcitationType.GENERALIZED_RECIPROCITY, fan_out(y, others_x)),
        (ExcitationType.ALLIED_CONTINUATION, fan_in(others_x, y)),
        (ExcitationType.ALLIED_RECIPROCITY, fan_in(others_y, x)),
    ]


def kernel_value(c, betas, dt):
    """sum_q c_q beta_q exp(-beta_q dt); integrates to 1 over [0, inf)."""
    c = np.asarray(c, dtype=float)
    betas = np.asarray(betas, dtype=float)
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr < 0):
        raise ValueError(f"Kernel lag must be nonnegative, got {dt!r}")
    value = np.sum(c * betas * np.exp(-np.multiply.outer(dt_arr, betas)), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def kernel_integral(c, betas, dt):
    """Integral of the kernel over [0, dt]."""
    c = np.asarray(c, dtype=float)
    betas = np.asarray(betas, dtype=float)
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr < 0):
        raise ValueError(f"Kernel lag must be nonnegative, got {dt!r}")
    value = np.sum(c * -np.expm1(-np.multiply.outer(dt_arr, betas)), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def intensity(dst, t: float, history: "EventStream", model: MulchModel) -> float:
    """Direct summation over the history; events at or after t are ignored."""
    i, j = dst
    z = model.membership.labels
    a, b = z[i], z[j]
    params = model.params[a][b]
    value = params.mu
    for sender, receiver, time in zip(history.senders, history.receivers, history.times):
        if time >= t:
            break
        selected = excitation_selector((sender, receiver), dst, z)
        if selected is None:
            continue
        etype, _ = selected
        value += params.alpha[etype] * kernel_value(params.c, model.betas, t - time)
    return float(value)


class DecayedState:
    """
    Per-dimension exponential sums S_d^q with alpha folded into the jumps, for a
    set of node pairs (all ordered pairs by default). Single owner, mutable.
    """

    def __init__(self, model: MulchModel, pairs=None):
        n = model.n_nodes
        if pairs is None:
            rows, cols = np.nonzero(~np.eye(n, dtype=bool))
            pairs = np.column_stack([rows, cols])
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

        self.model = model
        self.pairs = pairs
        self.index = np.full((n, n), -1, dtype=np.int64)
        self.index[pairs[:, 0], pairs[:, 1]] = np.arange(len(pairs))

        z = model.membership.labels
        za, zb = z[pairs[:, 0]], z[pairs[:, 1]]
        self.mu = model.mu[za, zb]
        self.alpha = model.alpha[za, zb]
        self.cb = model.c[za, zb] * model.betas
        self.members = [model.membership.members(k) for k in range(model.n_blocks)]

        self.state = np.zeros((len(pairs), model.n_kernels))
        self.time = 0.0

    def advance(self, t: float):
        if t < self.time:
            raise ValueError(f"Cannot move decayed state back from {self.time} to {t}")
        if t > self.time:
            self.state *= np.exp(-self.model.betas * (t - self.time))
            self.time = t
        return self

    def update(self, event: "Event"):
        sender, receiver, time = event
        self.advance(time)
        for etype, targets in excitation_targets(
            (sender, receiver), self.model.membership, self.members
        ):
            idx = self.index[targets[:, 0], targets[:, 1]]
            idx = idx[idx >= 0]
            if idx.size:
                self.state[idx] += self.alpha[idx, etype][:, None]
        return self

    def intensities(self, t: float = None) -> np.ndarray:
        """Intensity of every tracked pair at t >= current time, without mutating."""
        if t is None:
            t = self.time
        if t < self.time:
            raise ValueError(f"Query time {t} precedes state time {self.time}")
        decay = np.exp(-self.model.betas * (t - self.time))
        return self.mu + (self.cb * self.state * decay).sum(axis=1)

    def intensity(self, pair, t: float = None) -> float:
        d = self.index[pair[0], pair[1]]
        if d < 0:
            raise KeyError(f"Pair {tuple(pair)} is not tracked by this state")
        if t is None:
            t = self.time
        decay = np.exp(-self.model.betas * (t - self.time))
        return float(self.mu[d] + np.sum(self.cb[d] * self.state[d] * decay))


def decayed_state_update(state: DecayedState, event: "Event", model: MulchModel = None):
    if model is not None and model is not state.model:
        raise ValueError("Decayed state belongs to a different model")
    return state.update(event)


def pair_exposures(history: "EventStream", betas, t: float) -> np.ndarray:
    """P[x, y, q] = sum over events (x, y, s) with s < t of exp(-beta_q (t - s))."""
    betas = np.asarray(betas, dtype=float)
    n = history.n_nodes
    exposures = np.zeros((n, n, betas.size))
    before = history.times < t
    if np.any(before):
        decay = np.exp(-np.multiply.outer(t - history.times[before], betas))
        np.add.at(
            exposures,
            (history.senders[before], history.receivers[before]),
            decay,
        )
    return exposures


def typed_exposures(exposures: np.ndarray, membership: Membership) -> np.ndarray:
    """
    Split pair exposures into the six excitation streams of every receiving pair:
    R[i, j, type, q].
    """
    z = membership.labels
    onehot = membership.one_hot()
    out_by_block = np.einsum("xyq,yk->xkq", exposures, onehot)
    in_by_block = np.einsum("xyq,xk->ykq", exposures, onehot)
    reverse = exposures.transpose(1, 0, 2)

    streams = np.empty(exposures.shape[:2] + (N_EXCITATIONS,) + exposures.shape[2:])
    streams[:, :, ExcitationType.SELF] = exposures
    streams[:, :, ExcitationType.RECIPROCAL] = reverse
    streams[:, :, ExcitationType.TURN_CONTINUATION] = out_by_block[:, z] - exposures
    streams[:, :, ExcitationType.GENERALIZED_RECIPROCITY] = in_by_block[:, z] - reverse
    streams[:, :, ExcitationType.ALLIED_CONTINUATION] = (
        in_by_block[:, z].transpose(1, 0, 2) - exposures
    )
    streams[:, :, ExcitationType.ALLIED_RECIPROCITY] = (
        out_by_block[:, z].transpose(1, 0, 2) - reverse
    )
    diagonal = np.arange(exposures.shape[0])
    streams[diagonal, diagonal] = 0.0
    return np.clip(streams, 0.0, None)


def intensity_matrix(model: MulchModel, history: "EventStream", t: float) -> np.ndarray:
    """Intensity of every ordered pair at t given events strictly before t; zero diagonal."""
    z = model.membership.labels
    streams = typed_exposures(pair_exposures(history, model.betas, t), model.membership)
    alpha = model.alpha[z][:, z]
    cb = model.c[z][:, z] * model.betas
    values = model.mu[z][:, z] + np.einsum("ijt,ijq,ijtq->ij", alpha, cb, streams)
    np.fill_diagonal(values, 0.0)
    return values
