from src.exceptions import NonStationaryError
from src.hawkes.model import (
    BlockPairParams,
    DecayedState,
    ExcitationType,
    Membership,
    MulchModel,
    excitation_targets,
)
from src.network.events import Event, EventStream
from src.logs import log_entry

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple
import scipy.sparse as sp
import numpy as np
import jsonschema
import logging


DAY_BETAS = (1.0 / 14.0, 1.0, 12.0)
PRESET_C = (0.33, 0.33, 0.34)

# (mu, self, recip, turn, gen_recip, allied_cont, allied_recip), per day
STRONG_BLOCK = (0.008, 0.3, 0.3, 0.002, 0.0005, 0.001, 0.0005)
WEAK_BLOCK = (0.008, 0.1, 0.1, 0.001, 0.0001, 0.001, 0.0001)

PRESETS = {
    "assortative": (4, STRONG_BLOCK, WEAK_BLOCK),
    "disassortative": (2, WEAK_BLOCK, STRONG_BLOCK),
}

SIM_SCHEMA = {
    "type": "object",
    "required": ["duration", "n_nodes"],
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "pi": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "betas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "blocks": {"type": "array", "items": {"type": "array"}},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "n_nodes": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "membership": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "allow_unstable": {"type": "boolean"},
        "max_events": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
    },
    "anyOf": [{"required": ["preset"]}, {"required": ["blocks", "betas"]}],
}


def preset_params(name: str):
    """Diagonal/off-diagonal parameter grid of a named preset and its day-unit betas."""
    if name not in PRESETS:
        raise ValueError(f"Unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    K, diagonal, off_diagonal = PRESETS[name]
    params = [
        [
            BlockPairParams.from_tuple(diagonal if a == b else off_diagonal, PRESET_C)
            for b in range(K)
        ]
        for a in range(K)
    ]
    return params, np.array(DAY_BETAS)


@dataclass(frozen=True, eq=False)
class SimConfig:
    pi: np.ndarray
    params: Tuple[Tuple[BlockPairParams, ...], ...]
    betas: np.ndarray
    duration: float
    n_nodes: int
    seed: int = 0
    membership_override: Optional[Membership] = None
    allow_unstable: bool = False
    max_events: int = 200000
    workers: int = 1

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        K = len(self.params)
        if pi.size != K:
            raise ValueError(f"pi has {pi.size} entries for {K} blocks")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-8:
            raise ValueError("pi must lie on the simplex")
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.n_nodes < 2:
            raise ValueError(f"n_nodes must be at least 2, got {self.n_nodes}")
        if self.membership_override is not None:
            if len(self.membership_override) != self.n_nodes:
                raise ValueError("Membership override must cover every node")
            if self.membership_override.n_blocks != K:
                raise ValueError("Membership override has the wrong number of blocks")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "params", tuple(tuple(row) for row in self.params))
        object.__setattr__(self, "betas", np.array(self.betas, dtype=float).reshape(-1))

    @property
    def n_blocks(self) -> int:
        return len(self.params)

    @classmethod
    def from_json(cls, data: dict) -> "SimConfig":
        jsonschema.validate(data, SIM_SCHEMA)
        if "preset" in data:
            params, betas = preset_params(data["preset"])
        else:
            params = [[BlockPairParams.from_json(p) for p in row] for row in data["blocks"]]
            betas = data["betas"]
        if "betas" in data:
            betas = data["betas"]
        K = len(params)
        pi = data.get("pi", [1.0 / K] * K)
        membership = data.get("membership")
        return cls(
            pi=pi,
            params=params,
            betas=betas,
            duration=data["duration"],
            n_nodes=data["n_nodes"],
            seed=data.get("seed", 0),
            membership_override=Membership(membership, K) if membership is not None else None,
            allow_unstable=data.get("allow_unstable", False),
            max_events=data.get("max_events", 200000),
            workers=data.get("workers", 1),
        )

    def to_json(self) -> dict:
        data = {
            "pi": [float(p) for p in self.pi],
            "betas": [float(b) for b in self.betas],
            "blocks": [[p.to_json() for p in row] for row in self.params],
            "duration": self.duration,
            "n_nodes": self.n_nodes,
            "seed": self.seed,
            "allow_unstable": self.allow_unstable,
            "max_events": self.max_events,
            "workers": self.workers,
        }
        if self.membership_override is not None:
            data["membership"] = self.membership_override.to_list()
        return data


def sample_membership(pi, n: int, rng: np.random.Generator) -> Membership:
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-8:
        raise ValueError("pi must lie on the simplex")
    return Membership(rng.choice(pi.size, size=n, p=pi / pi.sum()), pi.size)


def couple_quotient(alpha: np.ndarray, sizes: Sequence[int], a: int, b: int) -> np.ndarray:
    """
    Branching matrix of a block pair couple collapsed to its cells: entry
    [u, v] is the expected number of direct children in cell v of one event
    in cell u (cells are bp(a, b) then bp(b, a)).
    """
    S, R = ExcitationType.SELF, ExcitationType.RECIPROCAL
    T, G = ExcitationType.TURN_CONTINUATION, ExcitationType.GENERALIZED_RECIPROCITY
    AC, AR = ExcitationType.ALLIED_CONTINUATION, ExcitationType.ALLIED_RECIPROCITY
    n_a, n_b = int(sizes[a]), int(sizes[b])

    if a == b:
        if n_a < 2:
            return np.zeros((1, 1))
        others = n_a - 2
        x = alpha[a, a]
        return np.array([[x[S] + x[R] + others * (x[T] + x[G] + x[AC] + x[AR])]])

    if n_a == 0 or n_b == 0:
        return np.zeros((2, 2))
    ab, ba = alpha[a, b], alpha[b, a]
    return np.array(
        [
            [
                ab[S] + (n_b - 1) * ab[T] + (n_a - 1) * ab[AC],
                ba[R] + (n_a - 1) * ba[G] + (n_b - 1) * ba[AR],
            ],
            [
                ab[R] + (n_b - 1) * ab[G] + (n_a - 1) * ab[AR],
                ba[S] + (n_a - 1) * ba[T] + (n_b - 1) * ba[AC],
            ],
        ]
    )


def _spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix)))) if matrix.size else 0.0


def stationarity_check(model: MulchModel) -> float:
    """Largest spectral radius of the per-couple branching matrices; stationary iff < 1."""
    sizes = model.membership.sizes()
    radius = 0.0
    for a in range(model.n_blocks):
        for b in range(a, model.n_blocks):
            radius = max(radius, _spectral_radius(couple_quotient(model.alpha, sizes, a, b)))
    return radius


def couple_pairs(membership: Membership, a: int, b: int) -> np.ndarray:
    """Dimensions of a couple: bp(a, b) followed by bp(b, a) when a != b."""
    members_a, members_b = membership.members(a), membership.members(b)

    def block_pair(senders, receivers):
        grid = np.array(np.meshgrid(senders, receivers, indexing="ij")).reshape(2, -1).T
        return grid[grid[:, 0] != grid[:, 1]]

    if a == b:
        return block_pair(members_a, members_a)
    return np.concatenate([block_pair(members_a, members_b), block_pair(members_b, members_a)])


def branching_matrix(model: MulchModel, a: int, b: int):
    """
    Explicit couple branching matrix Gamma (rows are sources, entries are alpha
    jumps since each kernel integrates to 1) and its dimension list.
    """
    pairs = couple_pairs(model.membership, a, b)
    n = model.n_nodes
    index = np.full((n, n), -1, dtype=np.int64)
    index[pairs[:, 0], pairs[:, 1]] = np.arange(len(pairs))
    z = model.membership.labels
    members = [model.membership.members(k) for k in range(model.n_blocks)]

    rows, cols, values = [], [], []
    for source, pair in enumerate(pairs):
        for etype, targets in excitation_targets(pair, model.membership, members):
            target = index[targets[:, 0], targets[:, 1]]
            keep = target >= 0
            target, targets = target[keep], targets[keep]
            rows.extend([source] * target.size)
            cols.extend(target.tolist())
            values.extend(model.alpha[z[targets[:, 0]], z[targets[:, 1]], etype].tolist())

    gamma = sp.csr_matrix((values, (rows, cols)), shape=(len(pairs), len(pairs)))
    return gamma, pairs


def _couple_model(theta_ab, theta_ba, betas, members_a, members_b):
    members_a = np.asarray(members_a, dtype=np.int64)
    if members_b is None or theta_ba is None:
        local = Membership(np.zeros(members_a.size, dtype=np.int64), 1)
        return MulchModel(betas, [[theta_ab]], local), members_a, (0, 0)

    members_b = np.asarray(members_b, dtype=np.int64)
    if np.intersect1d(members_a, members_b).size:
        raise ValueError("Member sets of distinct blocks must be disjoint")
    idle = BlockPairParams(0.0, np.zeros(6), theta_ab.c)
    local = Membership(
        np.concatenate([np.zeros(members_a.size), np.ones(members_b.size)]).astype(np.int64), 2
    )
    model = MulchModel(betas, [[idle, theta_ab], [theta_ba, idle]], local)
    return model, np.concatenate([members_a, members_b]), (0, 1)


def simulate_block_pair(
    theta_ab: BlockPairParams,
    theta_ba: Optional[BlockPairParams],
    betas,
    members_a,
    members_b,
    duration: float,
    rng: np.random.Generator,
    allow_unstable: bool = False,
    max_events: int = 200000,
    n_nodes: int = None,
) -> EventStream:
    """
    Thinning simulation of the couple bp(a, b) + bp(b, a). Pass members_b=None
    (or theta_ba=None) for a diagonal block pair. The total couple intensity right
    after the current time bounds it until the next event, so the bound is
    refreshed at every candidate.
    """
    model, nodes, (a, b) = _couple_model(theta_ab, theta_ba, betas, members_a, members_b)
    if n_nodes is None:
        n_nodes = int(nodes.max()) + 1 if nodes.size else 1

    radius = _spectral_radius(couple_quotient(model.alpha, model.membership.sizes(), a, b))
    if radius >= 1 and not allow_unstable:
        raise NonStationaryError(radius)

    pairs = couple_pairs(model.membership, a, b)
    if duration <= 0 or len(pairs) == 0:
        return EventStream.empty(n_nodes, max(duration, 0.0))

    state = DecayedState(model, pairs)
    senders, receivers, times = [], [], []
    truncated = False
    t = 0.0
    bound = state.intensities().sum()

    while bound > 0:
        t += rng.exponential(1.0 / bound)
        if t > duration:
            break
        state.advance(t)
        rates = state.intensities()
        total = rates.sum()
        if rng.uniform() * bound <= total:
            d = int(np.searchsorted(np.cumsum(rates), rng.uniform() * total, side="right"))
            d = min(d, len(pairs) - 1)
            x, y = pairs[d]
            senders.append(nodes[x])
            receivers.append(nodes[y])
            times.append(t)
            if allow_unstable and len(times) >= max_events:
                truncated = True
                log_entry(
                    "simulate",
                    {"warning": "event cap reached", "max_events": max_events, "time": t},
                    logging.WARNING,
                )
                break
            state.update(Event(int(x), int(y), t))
            total = state.intensities().sum()
        bound = total

    return EventStream.from_arrays(
        senders, receivers, times, n_nodes, duration, truncated=truncated
    )


def _couples(K: int):
    return [(a, b) for a in range(K) for b in range(a, K)]


def generate_network(cfg: SimConfig) -> Tuple[Membership, EventStream]:
    """Sample a membership, then simulate every diagonal block pair and off-diagonal couple."""
    couples = _couples(cfg.n_blocks)
    seeds = np.random.SeedSequence(cfg.seed).spawn(1 + len(couples))

    if cfg.membership_override is not None:
        membership = cfg.membership_override
    else:
        membership = sample_membership(cfg.pi, cfg.n_nodes, np.random.default_rng(seeds[0]))

    model = MulchModel(cfg.betas, cfg.params, membership)
    radius = stationarity_check(model)
    if radius >= 1 and not cfg.allow_unstable:
        raise NonStationaryError(radius)

    def run(job):
        index, (a, b) = job
        rng = np.random.default_rng(seeds[index + 1])
        diagonal = a == b
        return simulate_block_pair(
            cfg.params[a][b],
            None if diagonal else cfg.params[b][a],
            cfg.betas,
            membership.members(a),
            None if diagonal else membership.members(b),
            cfg.duration,
            rng,
            allow_unstable=cfg.allow_unstable,
            max_events=cfg.max_events,
            n_nodes=cfg.n_nodes,
        )

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as executor:
        fragments = list(executor.map(run, enumerate(couples)))

    stream = EventStream.concatenate(fragments, cfg.n_nodes, cfg.duration)
    log_entry(
        "simulate",
        {
            "seed": cfg.seed,
            "n_nodes": cfg.n_nodes,
            "n_blocks": cfg.n_blocks,
            "events": len(stream),
            "radius": radius,
            "truncated": stream.truncated,
        },
    )
    return membership, stream


def simulate_from_model(
    model: MulchModel,
    duration: float,
    seed: int = 0,
    workers: int = 1,
    allow_unstable: bool = False,
    max_events: int = 200000,
) -> EventStream:
    """Simulate with a fitted model's own membership and node ids."""
    sizes = model.membership.sizes()
    cfg = SimConfig(
        pi=sizes / sizes.sum(),
        params=model.params,
        betas=model.betas,
        duration=duration,
        n_nodes=model.n_nodes,
        seed=seed,
        membership_override=model.membership,
        allow_unstable=allow_unstable,
        max_events=max_events,
        workers=workers,
    )
    stream = generate_network(cfg)[1]
    if model.node_ids is not None:
        stream = replace(stream, node_ids=model.node_ids)
    return stream
