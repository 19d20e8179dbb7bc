"""Message schedules and their JSON Lines form.

A schedule file starts with one header line ``{"header": {...}}`` followed
by one line per event::

    {"seq", "kind", "node", "combined", "payload", "ack_count_after",
     "msg", "from", "bcast_msg", "bcast", "output"}

``payload`` is the received (Recv) or acknowledged (Ack) message, ``bcast``
is the message broadcast by the event's handler, if any.  ``msg`` and
``bcast_msg`` are the simulator's message ids, which link a Recv or Ack to
the event that broadcast the message.  ``output`` is set on the event at
which a node decides (or adopts an ID).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

INIT = "init"
RECV = "recv"
ACK = "ack"
CRASH = "crash"
KINDS = (INIT, RECV, ACK, CRASH)


@dataclass(slots=True)
class TraceEvent:
    seq: int
    kind: str
    node: int
    combined: bool
    ack_count_after: int
    payload: Any = None
    msg: int | None = None
    sender: int | None = None
    bcast_msg: int | None = None
    bcast: Any = None
    output: Any = None

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "node": self.node,
            "combined": self.combined,
            "payload": self.payload,
            "ack_count_after": self.ack_count_after,
            "msg": self.msg,
            "from": self.sender,
            "bcast_msg": self.bcast_msg,
            "bcast": self.bcast,
            "output": self.output,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TraceEvent":
        if d["kind"] not in KINDS:
            raise ValueError(f"unknown event kind {d['kind']!r}")
        return cls(
            seq=d["seq"],
            kind=d["kind"],
            node=d["node"],
            combined=d["combined"],
            ack_count_after=d["ack_count_after"],
            payload=d.get("payload"),
            msg=d.get("msg"),
            sender=d.get("from"),
            bcast_msg=d.get("bcast_msg"),
            bcast=d.get("bcast"),
            output=d.get("output"),
        )


@dataclass
class MessageSchedule:
    """The recorded trace of one execution."""

    n: int
    header: dict = field(default_factory=dict)
    events: list[TraceEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def prefix(self, upto: int) -> "MessageSchedule":
        return MessageSchedule(self.n, dict(self.header), self.events[:upto])


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(schedule: MessageSchedule, path: str | Path) -> Path:
    path = Path(path)
    header = dict(schedule.header)
    header["n"] = schedule.n
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"header": header}) + "\n")
        for ev in schedule.events:
            fh.write(_dumps(ev.to_json()) + "\n")
    return path


def read_jsonl(path: str | Path) -> MessageSchedule:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trace file (missing header line)")
    first = json.loads(lines[0])
    if "header" not in first:
        raise ValueError(f"{path}: first line is not a header")
    header = first["header"]
    events = [TraceEvent.from_json(json.loads(line)) for line in lines[1:]]
    for i, ev in enumerate(events):
        if ev.seq != i:
            raise ValueError(f"{path}: event {i} has seq {ev.seq}")
    return MessageSchedule(int(header["n"]), header, events)
