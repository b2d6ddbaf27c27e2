"""Deterministic discrete-event network: FIFO links and a time-ordered event queue."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass
class Link:
    """One direction of a client connection.

    Serialization is FIFO: a message starts transmitting once the link is
    free and arrives ``latency`` seconds after its last bit leaves.
    """

    bandwidth: float  # bits per second
    latency: float = 0.0
    busy_until: float = 0.0
    bytes_sent: int = 0
    bytes_delivered: int = 0
    messages: int = 0
    up: bool = True
    held: list = field(default_factory=list)

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("link bandwidth must be positive")
        if self.latency < 0:
            raise ValueError("link latency must be >= 0")


def send(link: Link, size: int, now: float) -> float:
    """Reserve the link for ``size`` bytes; return the delivery time."""
    start = max(now, link.busy_until)
    link.busy_until = start + size * 8.0 / link.bandwidth
    link.bytes_sent += size
    link.messages += 1
    return link.busy_until + link.latency


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self.now = 0.0
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.trace: list[tuple[float, str]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, kind: str, payload: Any = None) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before current time {self.now}")
        ev = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> float | None:
        return self._heap[0].time if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        self.trace.append((ev.time, ev.kind))
        return ev

    def advance(self, until: float) -> list[Event]:
        """Fire every event with time <= ``until`` in (time, insertion) order."""
        if until < self.now:
            raise ValueError("cannot advance backwards")
        fired = []
        while self._heap and self._heap[0].time <= until:
            fired.append(self.pop())
        self.now = until
        return fired


class Network:
    """Links plus an event queue; deliveries become ``deliver`` events."""

    def __init__(self, queue: EventQueue | None = None):
        self.queue = queue or EventQueue()
        self.links: dict[Any, Link] = {}

    def add_link(self, key, bandwidth: float, latency: float = 0.0) -> Link:
        self.links[key] = Link(bandwidth=bandwidth, latency=latency)
        return self.links[key]

    def transmit(self, key, data: bytes, now: float, on_deliver: Callable | None = None) -> float | None:
        link = self.links[key]
        if not link.up:
            link.held.append((data, on_deliver))
            return None
        when = send(link, len(data), now)
        self.queue.schedule(when, "deliver", (key, data, on_deliver))
        return when

    def set_up(self, key, up: bool, now: float) -> None:
        link = self.links[key]
        link.up = up
        if up:
            held, link.held = link.held, []
            for data, cb in held:
                self.transmit(key, data, now, cb)

    def deliver(self, event: Event) -> None:
        key, data, cb = event.payload
        self.links[key].bytes_delivered += len(data)
        if cb is not None:
            cb(data, event.time)
