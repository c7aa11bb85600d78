"""Deterministic discrete-event engine, packets and wired FIFO links.

Time is an integer count of microseconds.  The cellular side advances in
1 ms subframes (``SUBFRAME_US``); wired links, pacing and ACKs use the full
microsecond resolution.
"""

from __future__ import annotations

import csv
import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

SUBFRAME_US = 1000
MSS_BITS = 12000


def subframe_of(t_us: int) -> int:
    return t_us // SUBFRAME_US


def transmission_us(size_bits: int, rate_bps: float) -> int:
    """Serialization time rounded to the nearest microsecond."""
    return int(round(size_bits * 1e6 / rate_bps))


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(slots=True)
class Packet:
    flow_id: str
    seq: int
    size_bits: int = MSS_BITS
    sent_us: int = 0
    delivered_us: Optional[int] = None
    harq_delay_ms: int = 0
    dropped: bool = False
    retx: bool = False
    uid: int = 0
    # sender-side annotations read by the receiving client
    pacing_rate_bps: float = 0.0
    rtprop_us: int = 0
    phase: str = ""
    frags_pending: int = 0

    def __post_init__(self):
        if self.size_bits <= 0:
            raise ValueError("packet size must be positive")

    @property
    def owd_ms(self) -> Optional[float]:
        if self.delivered_us is None:
            return None
        return (self.delivered_us - self.sent_us) / 1000.0


class EventQueue:
    """Min-heap of ``(time, insertion counter, callback, args)``.

    Equal-time events pop in insertion order, which keeps runs reproducible.
    """

    def __init__(self):
        self._heap: list = []
        self._counter = 0

    def push(self, at: int, callback: Callable, args: tuple = ()) -> None:
        heapq.heappush(self._heap, (at, self._counter, callback, args))
        self._counter += 1

    def pop(self):
        return heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


class Simulator:
    def __init__(self):
        self.now = 0
        self.queue = EventQueue()
        self.report = SimulationReport()

    def schedule(self, at: int, callback: Callable, *args) -> None:
        at = int(at)
        if at < self.now:
            raise SchedulingError(f"cannot schedule at t={at} us, clock is at {self.now} us")
        self.queue.push(at, callback, args)

    def run_until(self, t_end: int) -> "SimulationReport":
        q = self.queue
        while len(q):
            if q.peek_time() > t_end:
                break
            at, _, callback, args = q.pop()
            self.now = at
            callback(*args)
        self.report.end_us = t_end
        return self.report


class WiredLink:
    """Store-and-forward FIFO with a byte-capacity tail-drop queue.

    A packet arriving at ``t`` starts service at ``max(t, busy_until)``,
    leaves the queue after its serialization time and reaches the far end
    ``delay_ms`` later.  The queue counts every packet that has arrived but
    not yet finished serialization.
    """

    def __init__(self, rate_bps: float, delay_ms: float, queue_bytes: int = 10**9, name: str = "link",
                 bin_us: int = 100_000):
        if rate_bps <= 0:
            raise ValueError("link rate must be positive")
        self.rate_bps = float(rate_bps)
        self.delay_us = int(round(delay_ms * 1000))
        self.queue_bytes = int(queue_bytes)
        self.name = name
        self.busy_until = 0
        self._in_queue: deque = deque()  # (service end, bytes)
        self.occupancy_bytes = 0
        self.max_occupancy_bytes = 0
        self.drops = 0
        self.bin_us = bin_us
        self.max_by_bin: dict[int, int] = {}  # peak occupancy per time bin

    def _expire(self, now: int) -> None:
        q = self._in_queue
        while q and q[0][0] <= now:
            self.occupancy_bytes -= q.popleft()[1]

    def transit(self, now: int, size_bits: int) -> Optional[int]:
        """Return the far-end arrival time, or ``None`` on tail drop."""
        self._expire(now)
        size_bytes = (size_bits + 7) // 8
        if self.occupancy_bytes + size_bytes > self.queue_bytes:
            self.drops += 1
            return None
        start = max(now, self.busy_until)
        done = start + transmission_us(size_bits, self.rate_bps)
        self.busy_until = done
        self._in_queue.append((done, size_bytes))
        self.occupancy_bytes += size_bytes
        if self.occupancy_bytes > self.max_occupancy_bytes:
            self.max_occupancy_bytes = self.occupancy_bytes
        b = now // self.bin_us
        if self.occupancy_bytes > self.max_by_bin.get(b, 0):
            self.max_by_bin[b] = self.occupancy_bytes
        return done + self.delay_us


def wired_transit(pkt: Packet, link: WiredLink, now: Optional[int] = None) -> Optional[int]:
    """Push ``pkt`` through ``link``; marks the packet dropped on tail drop."""
    at = link.transit(pkt.sent_us if now is None else now, pkt.size_bits)
    if at is None:
        pkt.dropped = True
    return at


PACKET_COLUMNS = ("flow_id", "seq", "size_bits", "sent_us", "delivered_us", "owd_ms", "harq_delay_ms", "dropped")
ALLOCATION_COLUMNS = ("time", "cell", "user", "prbs", "rw_bits_per_prb", "ndi", "idle_prbs")


@dataclass
class SimulationReport:
    end_us: int = 0
    packets: list = field(default_factory=list)
    # (time_us, cell, user, prbs, rw, ndi, idle) rows; user "-" marks an empty subframe
    allocations: list = field(default_factory=list)
    sender_trace: list = field(default_factory=list)
    state_trace: list = field(default_factory=list)
    ca_events: list = field(default_factory=list)
    link_stats: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def flow_counts(self) -> dict:
        out: dict[str, dict[str, int]] = {}
        for p in self.packets:
            c = out.setdefault(p.flow_id, {"sent": 0, "delivered": 0, "dropped": 0, "in_flight": 0})
            c["sent"] += 1
            if p.dropped:
                c["dropped"] += 1
            elif p.delivered_us is not None and p.delivered_us <= self.end_us:
                c["delivered"] += 1
            else:
                c["in_flight"] += 1
        return out

    def packet_rows(self):
        for p in self.packets:
            delivered = p.delivered_us if (p.delivered_us is not None and p.delivered_us <= self.end_us
                                           and not p.dropped) else None
            owd = "" if delivered is None else f"{(delivered - p.sent_us) / 1000.0:.3f}"
            yield (p.flow_id, p.seq, p.size_bits, p.sent_us, "" if delivered is None else delivered, owd,
                   p.harq_delay_ms, int(p.dropped))

    def write_packets_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PACKET_COLUMNS)
            w.writerows(self.packet_rows())

    def write_allocations_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ALLOCATION_COLUMNS)
            w.writerows(self.allocations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "end_us": self.end_us,
            "flows": self.flow_counts(),
            "packets": [dict(zip(PACKET_COLUMNS, row)) for row in self.packet_rows()],
            "allocations": [dict(zip(ALLOCATION_COLUMNS, row)) for row in self.allocations],
            "ca_events": [list(e) for e in self.ca_events],
            "links": self.link_stats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def packet_from_row(row: dict) -> Packet:
    """Inverse of one packets.csv row (annotations not in the CSV are lost)."""
    p = Packet(flow_id=row["flow_id"], seq=int(row["seq"]), size_bits=int(row.get("size_bits") or MSS_BITS),
               sent_us=int(row["sent_us"]),
               harq_delay_ms=int(row["harq_delay_ms"]), dropped=bool(int(row["dropped"])))
    if row["delivered_us"] not in ("", None):
        p.delivered_us = int(row["delivered_us"])
    return p


__all__ = [
    "ALLOCATION_COLUMNS", "EventQueue", "MSS_BITS", "PACKET_COLUMNS", "Packet", "SUBFRAME_US",
    "SchedulingError", "SimulationReport", "Simulator", "WiredLink", "packet_from_row",
    "subframe_of", "transmission_us", "wired_transit",
]
