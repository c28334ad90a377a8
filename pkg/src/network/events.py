from src.exceptions import EventParseError
from src.hawkes.model import Membership
from src.logs import log_entry

from dataclasses import dataclass
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple
import numpy as np
import logging
import json
import csv
import os


ID_MAP_SUFFIX = ".ids.json"
TIME_COLUMNS = ("time", "timestamp", "t")


class Event(NamedTuple):
    sender: int
    receiver: int
    time: float


@dataclass(frozen=True, eq=False)
class EventStream:
    """
    Time-ordered (sender, receiver, time) triplets over n_nodes dense node indices,
    observed on [0, duration]. Arrays are read-only after construction.
    """

    senders: np.ndarray
    receivers: np.ndarray
    times: np.ndarray
    n_nodes: int
    duration: float
    node_ids: Optional[Tuple[str, ...]] = None
    truncated: bool = False

    def __post_init__(self):
        senders = np.array(self.senders, dtype=np.int64).reshape(-1)
        receivers = np.array(self.receivers, dtype=np.int64).reshape(-1)
        times = np.array(self.times, dtype=float).reshape(-1)

        if not senders.size == receivers.size == times.size:
            raise ValueError("senders, receivers and times must have equal lengths")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be positive, got {self.n_nodes}")
        if self.duration < 0:
            raise ValueError(f"duration must be nonnegative, got {self.duration}")
        if times.size:
            if np.any(senders == receivers):
                raise ValueError("Events must not be self-loops")
            low = min(senders.min(), receivers.min())
            high = max(senders.max(), receivers.max())
            if low < 0 or high >= self.n_nodes:
                raise ValueError(f"Node indices must lie in [0, {self.n_nodes})")
            if times.min() < 0:
                raise ValueError("Event times must be nonnegative")
            if times.max() > self.duration:
                raise ValueError(
                    f"Event time {times.max()} exceeds duration {self.duration}"
                )
            if np.any(np.diff(times) < 0):
                raise ValueError("Events must be in nondecreasing time order")
        if self.node_ids is not None and len(self.node_ids) != self.n_nodes:
            raise ValueError("node_ids must name every node")

        for array in (senders, receivers, times):
            array.setflags(write=False)
        object.__setattr__(self, "senders", senders)
        object.__setattr__(self, "receivers", receivers)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "duration", float(self.duration))
        if self.node_ids is not None:
            object.__setattr__(self, "node_ids", tuple(str(i) for i in self.node_ids))

    @classmethod
    def from_arrays(
        cls,
        senders,
        receivers,
        times,
        n_nodes: int,
        duration: float = None,
        node_ids=None,
        truncated: bool = False,
    ) -> "EventStream":
        """Stable sort by time; duration defaults to the last time."""
        times = np.asarray(times, dtype=float).reshape(-1)
        order = np.argsort(times, kind="stable")
        if duration is None:
            duration = float(times.max()) if times.size else 0.0
        return cls(
            np.asarray(senders, dtype=np.int64).reshape(-1)[order],
            np.asarray(receivers, dtype=np.int64).reshape(-1)[order],
            times[order],
            n_nodes,
            duration,
            node_ids,
            truncated,
        )

    @classmethod
    def empty(cls, n_nodes: int, duration: float = 0.0, node_ids=None) -> "EventStream":
        return cls(
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            n_nodes,
            duration,
            node_ids,
        )

    @classmethod
    def concatenate(
        cls, streams: Sequence["EventStream"], n_nodes: int = None, duration: float = None
    ) -> "EventStream":
        """Merge fragments into one stream, stably sorted by time (fragment order breaks ties)."""
        if not streams:
            raise ValueError("Nothing to concatenate")
        n_nodes = n_nodes or max(s.n_nodes for s in streams)
        duration = duration if duration is not None else max(s.duration for s in streams)
        return cls.from_arrays(
            np.concatenate([s.senders for s in streams]),
            np.concatenate([s.receivers for s in streams]),
            np.concatenate([s.times for s in streams]),
            n_nodes,
            duration,
            streams[0].node_ids,
            any(s.truncated for s in streams),
        )

    def __len__(self):
        return self.times.size

    def __iter__(self):
        for sender, receiver, time in zip(self.senders, self.receivers, self.times):
            yield Event(int(sender), int(receiver), float(time))

    def __getitem__(self, index) -> Event:
        return Event(int(self.senders[index]), int(self.receivers[index]), float(self.times[index]))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.duration == other.duration
            and np.array_equal(self.senders, other.senders)
            and np.array_equal(self.receivers, other.receivers)
            and np.array_equal(self.times, other.times)
        )

    @property
    def events(self):
        return list(self)

    def subset(self, mask_or_index, duration: float = None) -> "EventStream":
        return EventStream(
            self.senders[mask_or_index],
            self.receivers[mask_or_index],
            self.times[mask_or_index],
            self.n_nodes,
            self.duration if duration is None else duration,
            self.node_ids,
            self.truncated,
        )

    def window(self, start: float, end: float) -> "EventStream":
        """Events with start <= t < end; duration unchanged."""
        return self.subset((self.times >= start) & (self.times < end))


CountMatrix = np.ndarray


def _parse_time(value: str, line: int, path: str) -> float:
    try:
        time = float(value)
    except ValueError:
        raise EventParseError(f"cannot parse time {value!r}", line, path)
    if not np.isfinite(time) or time < 0:
        raise EventParseError(f"time must be finite and nonnegative, got {value!r}", line, path)
    return time


def _is_header(time: str) -> bool:
    return time.lower() in TIME_COLUMNS


def _sort_ids(ids: Iterable[str]) -> list:
    ids = list(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def load_id_map(path: str) -> Dict[str, int]:
    with open(path, "r", encoding="utf-8") as f:
        id_map = json.load(f)
    if not isinstance(id_map, dict):
        raise ValueError(f"Id map {path} must be a JSON object")
    return {str(k): int(v) for k, v in id_map.items()}


def save_id_map(node_ids: Sequence[str], path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({str(node): index for index, node in enumerate(node_ids)}, f, indent=2)
        f.write("\n")


def load_events(
    path: str,
    duration: float = None,
    drop_self_loops: bool = False,
    id_map: Dict[str, int] = None,
    n_nodes: int = None,
) -> EventStream:
    """
    Reads a sender,receiver,time CSV. A first row whose time column is named
    time, timestamp or t is a header; any other unparsable row is an error.
    Ids become dense indices: from `id_map` or the `<path>.ids.json` sidecar when
    present, otherwise numeric ids in numeric order and anything else
    lexicographically.
    """
    if id_map is None and os.path.exists(path + ID_MAP_SUFFIX):
        id_map = load_id_map(path + ID_MAP_SUFFIX)

    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line, row in enumerate(csv.reader(f), start=1):
            if not row or all(not field.strip() for field in row):
                continue
            if len(row) != 3:
                raise EventParseError(f"expected 3 columns, got {len(row)}", line, path)
            sender, receiver, time = (field.strip() for field in row)
            if line == 1 and _is_header(time):
                log_entry("events", {"path": path, "header": row}, logging.DEBUG)
                continue
            time = _parse_time(time, line, path)
            if sender == receiver:
                if drop_self_loops:
                    continue
                raise EventParseError(f"self-loop on node {sender!r}", line, path)
            rows.append((sender, receiver, time))

    if not rows:
        raise EventParseError("no events", path=path)

    if id_map is not None:
        index = dict(id_map)
        if sorted(index.values()) != list(range(len(index))):
            raise ValueError("Id map indices must be dense 0..n-1")
        seen = {node for row in rows for node in row[:2]}
        for node in _sort_ids(seen - index.keys()):
            index[node] = len(index)
    else:
        index = {node: i for i, node in enumerate(_sort_ids({n for row in rows for n in row[:2]}))}

    node_ids = [None] * len(index)
    for node, i in index.items():
        node_ids[i] = node
    total = max(len(index), n_nodes or 0)
    node_ids += [f"_{i}" for i in range(len(index), total)]

    senders = [index[row[0]] for row in rows]
    receivers = [index[row[1]] for row in rows]
    times = [row[2] for row in rows]
    if duration is not None and duration < max(times):
        raise ValueError(f"duration {duration} is before the last event at {max(times)}")

    return EventStream.from_arrays(senders, receivers, times, total, duration, node_ids)


def save_events(stream: EventStream, path: str, write_id_map: bool = True):
    node_ids = stream.node_ids or tuple(str(i) for i in range(stream.n_nodes))
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sender", "receiver", "time"])
        for sender, receiver, time in stream:
            writer.writerow([node_ids[sender], node_ids[receiver], repr(time)])
    if write_id_map:
        save_id_map(node_ids, path + ID_MAP_SUFFIX)


def rescale_timestamps(stream: EventStream, target_max: float = 1000.0) -> EventStream:
    """Affine map of [min t, max t] onto [0, target_max]."""
    if target_max <= 0:
        raise ValueError(f"target_max must be positive, got {target_max}")
    if len(stream) == 0:
        raise ValueError("Cannot rescale an empty stream")
    low, high = stream.times[0], stream.times[-1]
    span = high - low
    if span <= 0:
        raise ValueError("All timestamps are equal; cannot rescale a zero span")
    times = (stream.times - low) * (target_max / span)
    times[-1] = min(times[-1], target_max)
    return EventStream(
        stream.senders,
        stream.receivers,
        times,
        stream.n_nodes,
        target_max,
        stream.node_ids,
        stream.truncated,
    )


def split_train_test(
    stream: EventStream, n_train: int, test_horizon: str = "stream"
) -> Tuple[EventStream, EventStream]:
    """
    First n_train events for training (duration = last training time), the rest
    for testing. The test duration is the stream duration, or the last test
    timestamp with test_horizon="last_event".
    """
    if not 0 < n_train < len(stream):
        raise ValueError(f"n_train must lie in (0, {len(stream)}), got {n_train}")
    if test_horizon not in ("stream", "last_event"):
        raise ValueError(f"Unknown test horizon {test_horizon!r}")

    train = stream.subset(slice(0, n_train), float(stream.times[n_train - 1]))
    test_duration = stream.duration if test_horizon == "stream" else float(stream.times[-1])
    test = stream.subset(slice(n_train, None), test_duration)
    return train, test


def train_test_sizes(n_events: int, train_frac: float) -> int:
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    return int(min(max(round(train_frac * n_events), 1), n_events - 1))


def count_matrix(stream: EventStream) -> CountMatrix:
    counts = np.zeros((stream.n_nodes, stream.n_nodes), dtype=np.int64)
    np.add.at(counts, (stream.senders, stream.receivers), 1)
    return counts


def assign_new_nodes(train_membership: Membership, n_total: int) -> Membership:
    """Nodes beyond the training membership join the largest training block (lowest index on ties)."""
    n_train = len(train_membership)
    if n_total < n_train:
        raise ValueError(f"n_total {n_total} is smaller than the membership size {n_train}")
    if n_total == n_train:
        return train_membership
    largest = int(np.argmax(train_membership.sizes()))
    labels = np.concatenate(
        [train_membership.labels, np.full(n_total - n_train, largest, dtype=np.int64)]
    )
    return Membership(labels, train_membership.n_blocks)
