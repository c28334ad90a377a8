"""
delta-temporal motifs with three edges on two or three nodes, counted into the
standard 6 x 6 grid.

Cell layout (row, col), 0-based:

    2-node motifs, classified by each later edge's direction relative to the first
    (same / flipped):
        (4,0) same, same        (4,1) same, flipped
        (5,0) flipped, same     (5,1) flipped, flipped

    Stars around a center node c with neighbors u, v. The neighbor sequence is
    pre (u,u,v), mid (u,v,u) or post (u,v,v); each edge is 0 when it leaves c and 1
    when it enters c:
        mid:  111 (0,0)  110 (0,1)  101 (1,0)  100 (1,1)  010 (2,0)  011 (2,1)  000 (3,0)  001 (3,1)
        post: 110 (0,4)  111 (0,5)  100 (1,4)  101 (1,5)  010 (2,2)  011 (2,3)  000 (3,2)  001 (3,3)
        pre:  010 (4,2)  011 (4,3)  100 (4,4)  101 (4,5)  000 (5,2)  001 (5,3)  110 (5,4)  111 (5,5)

    Triangles: the first edge is a -> b and c is the third node. The second edge
    joins c to a (anchor 0) or to b (anchor 1); the second and third edges are 0
    when they leave c and 1 when they enter c:
        anchor 0: 00 (0,2)  01 (0,3)  10 (1,2)  11 (1,3)
        anchor 1: 00 (2,4)  01 (2,5)  10 (3,4)  11 (3,5)
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple
import jsonschema
import numpy as np
import json

from src.network.events import EventStream


GRID_SHAPE = (6, 6)

MOTIF_SCHEMA = {
    "type": "object",
    "required": ["delta", "counts"],
    "properties": {
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "counts": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
    },
}

TWO_NODE_CELLS = {
    (0, 0): (4, 0),
    (0, 1): (4, 1),
    (1, 0): (5, 0),
    (1, 1): (5, 1),
}

STAR_CELLS = {
    ("mid", (1, 1, 1)): (0, 0),
    ("mid", (1, 1, 0)): (0, 1),
    ("mid", (1, 0, 1)): (1, 0),
    ("mid", (1, 0, 0)): (1, 1),
    ("mid", (0, 1, 0)): (2, 0),
    ("mid", (0, 1, 1)): (2, 1),
    ("mid", (0, 0, 0)): (3, 0),
    ("mid", (0, 0, 1)): (3, 1),
    ("post", (1, 1, 0)): (0, 4),
    ("post", (1, 1, 1)): (0, 5),
    ("post", (1, 0, 0)): (1, 4),
    ("post", (1, 0, 1)): (1, 5),
    ("post", (0, 1, 0)): (2, 2),
    ("post", (0, 1, 1)): (2, 3),
    ("post", (0, 0, 0)): (3, 2),
    ("post", (0, 0, 1)): (3, 3),
    ("pre", (0, 1, 0)): (4, 2),
    ("pre", (0, 1, 1)): (4, 3),
    ("pre", (1, 0, 0)): (4, 4),
    ("pre", (1, 0, 1)): (4, 5),
    ("pre", (0, 0, 0)): (5, 2),
    ("pre", (0, 0, 1)): (5, 3),
    ("pre", (1, 1, 0)): (5, 4),
    ("pre", (1, 1, 1)): (5, 5),
}

TRIANGLE_CELLS = {
    (0, 0, 0): (0, 2),
    (0, 0, 1): (0, 3),
    (0, 1, 0): (1, 2),
    (0, 1, 1): (1, 3),
    (1, 0, 0): (2, 4),
    (1, 0, 1): (2, 5),
    (1, 1, 0): (3, 4),
    (1, 1, 1): (3, 5),
}


Edge = Tuple[int, int]


def classify_triple(e1: Edge, e2: Edge, e3: Edge) -> Optional[Tuple[int, int]]:
    """Grid cell of three time-ordered edges, or None if they span more than 3 nodes."""
    edges = (tuple(e1), tuple(e2), tuple(e3))
    nodes = {node for edge in edges for node in edge}
    if len(nodes) > 3:
        return None

    if len(nodes) == 2:
        return TWO_NODE_CELLS[(int(edges[1] != edges[0]), int(edges[2] != edges[0]))]

    undirected = {frozenset(edge) for edge in edges}
    if len(undirected) == 3:
        a, b = edges[0]
        (c,) = nodes - {a, b}
        anchor = 0 if a in edges[1] else 1
        return TRIANGLE_CELLS[(anchor, int(edges[1][1] == c), int(edges[2][1] == c))]

    (center,) = set(edges[0]) & set(edges[1]) & set(edges[2])
    neighbors = [edge[1] if edge[0] == center else edge[0] for edge in edges]
    if neighbors[0] == neighbors[1]:
        kind = "pre"
    elif neighbors[0] == neighbors[2]:
        kind = "mid"
    else:
        kind = "post"
    directions = tuple(int(edge[1] == center) for edge in edges)
    return STAR_CELLS[(kind, directions)]


@dataclass(frozen=True, eq=False)
class MotifMatrix:
    counts: np.ndarray
    delta: float

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != GRID_SHAPE:
            raise ValueError(f"Motif counts must be a {GRID_SHAPE} grid")
        if np.any(counts < 0):
            raise ValueError("Motif counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {"delta": self.delta, "counts": self.counts.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "MotifMatrix":
        jsonschema.validate(data, MOTIF_SCHEMA)
        return cls(data["counts"], data["delta"])

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "MotifMatrix":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def count_temporal_motifs(stream: EventStream, delta: float) -> MotifMatrix:
    """
    Counts every index-ordered triple i < j < k with t_k - t_i <= delta spanning
    at most three nodes. Candidates for the later edges come from the per-node
    incidence lists inside the delta window of the first edge.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    counts = np.zeros(GRID_SHAPE, dtype=np.int64)
    senders, receivers, times = stream.senders, stream.receivers, stream.times
    m = len(stream)

    incident = {}
    for node in np.union1d(senders, receivers):
        incident[int(node)] = np.flatnonzero((senders == node) | (receivers == node))

    def between(nodes, low, high):
        found = [
            lst[np.searchsorted(lst, low, side="right") : np.searchsorted(lst, high, side="left")]
            for lst in (incident[node] for node in nodes)
        ]
        return np.unique(np.concatenate(found)) if found else np.zeros(0, dtype=np.int64)

    ends = np.searchsorted(times, times + delta, side="right")
    for i in range(m):
        e1 = (int(senders[i]), int(receivers[i]))
        end = ends[i]
        for j in between(e1, i, end):
            e2 = (int(senders[j]), int(receivers[j]))
            nodes = set(e1) | set(e2)
            for k in between(nodes, j, end):
                e3 = (int(senders[k]), int(receivers[k]))
                if len(nodes | set(e3)) > 3:
                    continue
                counts[classify_triple(e1, e2, e3)] += 1

    return MotifMatrix(counts, delta)


def count_temporal_motifs_bruteforce(stream: EventStream, delta: float) -> MotifMatrix:
    """Exhaustive O(m^3) scan; reference counter for small streams."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    counts = np.zeros(GRID_SHAPE, dtype=np.int64)
    events = list(stream)
    for i in range(len(events)):
        for j in range(i + 1, len(events)):
            for k in range(j + 1, len(events)):
                if events[k].time - events[i].time > delta:
                    continue
                cell = classify_triple(events[i][:2], events[j][:2], events[k][:2])
                if cell is not None:
                    counts[cell] += 1
    return MotifMatrix(counts, delta)


class MapeScore(NamedTuple):
    value: float
    excluded_cells: int


def motif_mape(actual: MotifMatrix, sims: Sequence[MotifMatrix]) -> MapeScore:
    """
    Mean absolute percentage error between the actual grid and the mean simulated
    grid. Cells with zero actual count are excluded and the divisor shrinks.
    """
    if not sims:
        raise ValueError("At least one simulated motif matrix is required")
    for sim in sims:
        if sim.delta != actual.delta:
            raise ValueError(f"delta mismatch: {sim.delta} vs {actual.delta}")
    simulated = np.mean([sim.counts for sim in sims], axis=0)
    observed = actual.counts.astype(float)
    used = observed > 0
    if not used.any():
        raise ValueError("Actual motif matrix has no nonzero cells")
    errors = np.abs(observed[used] - simulated[used]) / observed[used]
    return MapeScore(float(100.0 * errors.mean()), int((~used).sum()))
