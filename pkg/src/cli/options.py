from src.hawkes.model import Membership
from src.network.events import EventStream, load_events, rescale_timestamps

from typing import Dict, List, Sequence
import numpy as np
import click
import json
import re


UNIT_SECONDS = {
    "s": 1.0,
    "m": 60.0,
    "h": 3600.0,
    "d": 86400.0,
    "w": 7 * 86400.0,
    "mo": 30 * 86400.0,
    "y": 365 * 86400.0,
}

_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(mo|[smhdwy])?\s*$")


class CommaList(click.ParamType):
    """Comma separated values, kept as stripped strings."""

    name = "list"

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return list(value)
        items = [item.strip() for item in str(value).split(",") if item.strip()]
        if not items:
            self.fail(f"{value!r} is an empty list", param, ctx)
        return items


COMMA_LIST = CommaList()
TIME_UNIT = click.Choice(sorted(UNIT_SECONDS))


def parse_duration(value, unit: str = "d") -> float:
    """
    "12h" in base unit "d" is 0.5. A bare number is already in the base unit.
    Months are 30 days and years 365 days.
    """
    if unit not in UNIT_SECONDS:
        raise ValueError(f"Unknown time unit {unit!r}")
    if isinstance(value, (int, float)):
        return float(value)
    match = _DURATION.match(str(value))
    if match is None:
        raise ValueError(f"Cannot parse duration {value!r}")
    amount, suffix = float(match.group(1)), match.group(2)
    if suffix is None:
        return amount
    return amount * UNIT_SECONDS[suffix] / UNIT_SECONDS[unit]


def convert_rate(rate: float, from_unit: str, to_unit: str) -> float:
    """A decay rate per `from_unit` expressed per `to_unit`."""
    return rate * UNIT_SECONDS[to_unit] / UNIT_SECONDS[from_unit]


def parse_betas(items: Sequence[str], unit: str = "d") -> List[float]:
    """
    Plain numbers are decay rates per base unit; an item with a unit suffix is a
    time scale, so "2w" becomes 1 / (two weeks in the base unit).
    """
    betas = []
    for item in items:
        text = str(item).strip()
        if _DURATION.match(text) is None:
            raise ValueError(f"Cannot parse beta {item!r}")
        if text[-1].isalpha():
            betas.append(1.0 / parse_duration(text, unit))
        else:
            betas.append(float(text))
    if any(b <= 0 for b in betas):
        raise ValueError("betas must be positive")
    return betas


def parse_ints(items: Sequence[str], name: str) -> List[int]:
    try:
        return [int(item) for item in items]
    except ValueError:
        raise ValueError(f"{name} must be integers, got {list(items)}")


def read_events(path: str, rescale_to: float = None, drop_self_loops: bool = False, id_map=None):
    stream = load_events(path, drop_self_loops=drop_self_loops, id_map=id_map)
    if rescale_to is not None:
        stream = rescale_timestamps(stream, rescale_to)
    return stream


def node_id_map(node_ids) -> Dict[str, int]:
    if not node_ids:
        return None
    return {str(node): index for index, node in enumerate(node_ids)}


def write_json(data, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=_builtin)
        f.write("\n")


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_membership(membership: Membership, stream: EventStream, path: str):
    node_ids = stream.node_ids or tuple(str(i) for i in range(len(membership)))
    write_json(
        {
            "membership": membership.to_list(),
            "n_blocks": membership.n_blocks,
            "ids": node_id_map(node_ids),
        },
        path,
    )


def load_membership(path: str) -> Membership:
    data = read_json(path)
    if isinstance(data, dict) and "membership" not in data:
        raise ValueError(f"Membership file {path} has no \"membership\" field")
    labels = data["membership"] if isinstance(data, dict) else data
    n_blocks = data.get("n_blocks") if isinstance(data, dict) else None
    return Membership(labels, n_blocks or int(max(labels)) + 1)


def summary(command: str, seed, seconds: float, outputs: dict, **extra) -> str:
    line = {"command": command, "seed": seed, "seconds": round(seconds, 6), "outputs": outputs}
    line.update(extra)
    return json.dumps(line, default=_builtin)


def _builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
