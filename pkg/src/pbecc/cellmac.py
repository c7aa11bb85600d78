"""Component-carrier model: PRB scheduling, HARQ, reordering and carrier aggregation."""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .simcore import SUBFRAME_US, Packet

HARQ_RTT_SUBFRAMES = 8
MAX_RETRANSMISSIONS = 3
DEFAULT_MAC_OVERHEAD = 0.068


class Timeline:
    """Scalar scenario parameter as a function of time.

    ``points`` is a sorted list of ``(time_s, value)``.  ``step`` timelines
    hold each value until the next point; ``linear`` ones interpolate.
    """

    def __init__(self, points, mode: str = "step"):
        if isinstance(points, (int, float)):
            points = [(0.0, float(points))]
        pts = sorted((float(t), float(v)) for t, v in points)
        if not pts:
            raise ValueError("timeline needs at least one point")
        if mode not in ("step", "linear"):
            raise ValueError(f"unknown timeline mode {mode!r}")
        self.mode = mode
        self._t = [int(round(t * 1e6)) for t, _ in pts]
        self._v = [v for _, v in pts]

    @classmethod
    def const(cls, value: float) -> "Timeline":
        return cls([(0.0, value)])

    def at(self, t_us: int) -> float:
        i = bisect.bisect_right(self._t, t_us) - 1
        if i < 0:
            return self._v[0]
        if self.mode == "step" or i == len(self._t) - 1:
            return self._v[i]
        t0, t1 = self._t[i], self._t[i + 1]
        v0, v1 = self._v[i], self._v[i + 1]
        return v0 + (v1 - v0) * (t_us - t0) / (t1 - t0)

    def values(self):
        return list(self._v)


@dataclass
class CellConfig:
    cell_id: str
    n_prb: int
    rw: Timeline = field(default_factory=lambda: Timeline.const(700.0))
    ber: "float | Timeline" = 0.0
    user_rw: dict = field(default_factory=dict)
    user_ber: dict = field(default_factory=dict)
    overhead: float = DEFAULT_MAC_OVERHEAD
    user_buffer_bytes: Optional[int] = None

    def __post_init__(self):
        if self.n_prb <= 0:
            raise ValueError("n_prb must be positive")
        if not isinstance(self.ber, Timeline):
            self.ber = Timeline.const(float(self.ber))
        self.user_ber = {u: v if isinstance(v, Timeline) else Timeline.const(float(v))
                         for u, v in self.user_ber.items()}
        for tl in [self.rw, *self.user_rw.values()]:
            if min(tl.values()) <= 0:
                raise ValueError("bits-per-PRB rate must be positive")
        for tl in [self.ber, *self.user_ber.values()]:
            if not all(0.0 <= p < 1.0 for p in tl.values()):
                raise ValueError("bit error probability must lie in [0, 1)")
        if not 0.0 <= self.overhead < 1.0:
            raise ValueError("overhead must lie in [0, 1)")

    def rw_for(self, user: str, t_us: int) -> float:
        tl = self.user_rw.get(user, self.rw)
        return tl.at(t_us)

    def ber_for(self, user: str, t_us: int = 0) -> float:
        return self.user_ber.get(user, self.ber).at(t_us)


@dataclass(frozen=True, slots=True)
class Grant:
    user: str
    prbs: int
    rw: float
    ndi: bool = True


@dataclass
class SubframeAllocation:
    """One decoded control channel: every grant a cell issued in a subframe."""

    cell_id: str
    subframe: int
    n_prb: int
    grants: list = field(default_factory=list)

    @property
    def allocated(self) -> int:
        return sum(g.prbs for g in self.grants)

    @property
    def idle(self) -> int:
        return self.n_prb - self.allocated

    def prbs_by_user(self) -> dict:
        out: dict[str, int] = {}
        for g in self.grants:
            out[g.user] = out.get(g.user, 0) + g.prbs
        return out

    def rows(self):
        t = self.subframe * SUBFRAME_US
        idle = self.idle
        if not self.grants:
            yield (t, self.cell_id, "-", 0, 0.0, 1, idle)
        for g in self.grants:
            yield (t, self.cell_id, g.user, g.prbs, g.rw, int(g.ndi), idle)


def allocations_from_rows(rows: Iterable[dict], n_prb: dict) -> list:
    """Rebuild SubframeAllocations from allocations.csv rows (dicts of strings)."""
    out: list[SubframeAllocation] = []
    index: dict = {}
    for row in rows:
        cell = row["cell"]
        sf = int(row["time"]) // SUBFRAME_US
        key = (sf, cell)
        alloc = index.get(key)
        if alloc is None:
            alloc = SubframeAllocation(cell, sf, n_prb[cell])
            index[key] = alloc
            out.append(alloc)
        if row["user"] != "-":
            alloc.grants.append(Grant(row["user"], int(row["prbs"]), float(row["rw_bits_per_prb"]),
                                      bool(int(row["ndi"]))))
    return out


class UserQueue:
    """Per-(cell, user) base-station buffer holding packet fragments."""

    def __init__(self, user: str, capacity_bytes: Optional[int] = None):
        self.user = user
        self.capacity_bytes = capacity_bytes
        self.items: deque = deque()  # [packet, bits still to send]
        self.backlog_bits = 0
        self.arrived_bits = 0  # since last read by the CA controller
        self.drops = 0

    def push(self, pkt: Packet) -> bool:
        if self.capacity_bytes is not None and (self.backlog_bits + pkt.size_bits) > 8 * self.capacity_bytes:
            self.drops += 1
            return False
        self.items.append([pkt, pkt.size_bits])
        self.backlog_bits += pkt.size_bits
        self.arrived_bits += pkt.size_bits
        return True

    def pull(self, bits: int) -> list:
        """Remove up to ``bits`` of payload; returns ``[(packet, bits)]`` fragments."""
        frags = []
        while bits > 0 and self.items:
            item = self.items[0]
            take = min(bits, item[1])
            frags.append((item[0], take))
            item[1] -= take
            bits -= take
            self.backlog_bits -= take
            if item[1] == 0:
                self.items.popleft()
        return frags


@dataclass(eq=False)
class TransportBlock:
    user: str
    subframe: int
    prbs: int
    rw: float
    fragments: list
    size_bits: int
    status: str = "pending"  # pending | ok | dropped


@dataclass(eq=False)
class HarqProcess:
    tb: TransportBlock
    attempts: int = 0  # retransmissions performed so far
    outcomes: list = field(default_factory=list)

    @property
    def original_subframe(self) -> int:
        return self.tb.subframe


def tb_error_probability(p: float, size_bits: float) -> float:
    """Probability that at least one of ``size_bits`` i.i.d. bits is in error."""
    if p <= 0.0:
        return 0.0
    return -math.expm1(size_bits * math.log1p(-p))


def transmit_tb(rng: np.random.Generator, size_bits: float, p: float) -> bool:
    """Draw one TB outcome; ``True`` when the block decodes correctly."""
    if p <= 0.0:
        return True
    return rng.random() >= tb_error_probability(p, size_bits)


class ReorderBuffer:
    """Client-side in-order release of transport blocks for one (cell, user).

    TBs enter in subframe order; a TB leaves only once it and every earlier
    TB are resolved.  Released packets are annotated with the extra delay
    their TB spent waiting (release subframe minus first transmission).
    """

    def __init__(self):
        self.held: deque = deque()

    @property
    def blocking_subframe(self) -> Optional[int]:
        for tb in self.held:
            if tb.status == "pending":
                return tb.subframe
        return None

    def add(self, tb: TransportBlock) -> None:
        if self.held and self.held[-1].subframe > tb.subframe:
            raise ValueError("transport blocks must enter in subframe order")
        self.held.append(tb)

    def release(self, subframe: int) -> list:
        """Pop the resolved head run; returns ``[(tb, delay_ms)]``."""
        out = []
        held = self.held
        while held and held[0].status != "pending":
            tb = held.popleft()
            out.append((tb, subframe - tb.subframe))
        return out


def deliver_with_reordering(outcomes: Sequence[Sequence[bool]]) -> list:
    """Replay per-subframe TB outcomes through a reorder buffer.

    ``outcomes[i]`` lists the attempt results for the TB first sent in
    subframe ``i`` (original transmission first); retransmissions happen
    every 8 subframes until one succeeds or all four attempts fail.
    Returns ``(release_subframe, delay_ms, dropped)`` for every TB.
    """
    resolve = []
    for i, attempts in enumerate(outcomes):
        k = next((j for j, ok in enumerate(attempts) if ok), None)
        if k is None:
            k = min(len(attempts), MAX_RETRANSMISSIONS + 1) - 1
            resolve.append((i + HARQ_RTT_SUBFRAMES * k, True))
        else:
            resolve.append((i + HARQ_RTT_SUBFRAMES * k, False))
    rb = ReorderBuffer()
    tbs = [TransportBlock("u", i, 1, 1.0, [], 1) for i in range(len(outcomes))]
    by_resolve: dict[int, list] = {}
    for tb, (r, dropped) in zip(tbs, resolve):
        by_resolve.setdefault(r, []).append((tb, dropped))
    result: dict[int, tuple] = {}
    horizon = max((r for r, _ in resolve), default=-1)
    for sf in range(horizon + 1):
        if sf < len(tbs):
            rb.add(tbs[sf])
        for tb, dropped in by_resolve.get(sf, []):
            tb.status = "dropped" if dropped else "ok"
        for tb, delay in rb.release(sf):
            result[tb.subframe] = (sf, delay, tb.status == "dropped")
    return [result[i] for i in range(len(tbs))]


@dataclass
class BackgroundProfile:
    user: str
    start_subframe: int
    active_subframes: int  # T_a
    prbs: int

    def active_at(self, sf: int) -> bool:
        return self.start_subframe <= sf < self.start_subframe + self.active_subframes


class Cell:
    """One component carrier with per-user buffers and HARQ.

    ``deliver(packet, delivered_us)`` is called for every packet whose last
    fragment leaves the reorder buffer; ``drop(packet)`` for packets lost to
    exhausted HARQ retries or a full user buffer.
    """

    def __init__(self, config: CellConfig, rng: np.random.Generator,
                 deliver: Optional[Callable] = None, drop: Optional[Callable] = None):
        self.config = config
        self.cell_id = config.cell_id
        self.n_prb = config.n_prb
        self.rng = rng
        self.queues: dict[str, UserQueue] = {}
        self.reorder: dict[str, ReorderBuffer] = {}
        self.retx_due: dict[int, list] = {}
        self.background: list[BackgroundProfile] = []
        self._deliver = deliver or (lambda pkt, t: None)
        self._drop = drop or (lambda pkt: None)
        self.last_allocation: Optional[SubframeAllocation] = None

    # -- configuration -------------------------------------------------
    def queue_for(self, user: str) -> UserQueue:
        q = self.queues.get(user)
        if q is None:
            q = self.queues[user] = UserQueue(user, self.config.user_buffer_bytes)
            self.reorder[user] = ReorderBuffer()
        return q

    def inject_background_user(self, profile: BackgroundProfile) -> None:
        if profile.prbs > self.n_prb:
            raise ValueError("background profile asks for more PRBs than the cell has")
        self.background.append(profile)

    def enqueue(self, user: str, pkt: Packet) -> bool:
        ok = self.queue_for(user).push(pkt)
        if not ok:
            pkt.dropped = True
            self._drop(pkt)
        return ok

    def payload_per_prb(self, user: str, t_us: int) -> float:
        return self.config.rw_for(user, t_us) * (1.0 - self.config.overhead)

    def payload_capacity(self, user: str, t_us: int) -> float:
        """Payload bits per subframe if ``user`` had the whole cell."""
        return self.payload_per_prb(user, t_us) * self.n_prb

    def harq_idle(self, user: str) -> bool:
        rb = self.reorder.get(user)
        return rb is None or not rb.held

    # -- per-subframe work ---------------------------------------------
    def schedule_subframe(self, sf: int) -> SubframeAllocation:
        """Allocate PRBs, transmit TBs, resolve HARQ and release reordered packets."""
        t_us = sf * SUBFRAME_US
        alloc = SubframeAllocation(self.cell_id, sf, self.n_prb)
        residual = self.n_prb
        sent: list[tuple[HarqProcess, Grant]] = []

        for proc in self.retx_due.pop(sf, ()):
            g = Grant(proc.tb.user, proc.tb.prbs, proc.tb.rw, ndi=False)
            alloc.grants.append(g)
            residual -= g.prbs
            sent.append((proc, g))

        for prof in self.background:
            if prof.active_at(sf) and residual > 0:
                n = min(prof.prbs, residual)
                alloc.grants.append(Grant(prof.user, n, self.config.rw.at(t_us), ndi=True))
                residual -= n

        users = [u for u, q in self.queues.items() if q.backlog_bits > 0]
        if users and residual > 0:
            per_prb = [self.payload_per_prb(u, t_us) for u in users]
            demands = np.array([math.ceil(self.queues[u].backlog_bits / pp) for u, pp in zip(users, per_prb)],
                               dtype=np.int64)
            shares = _kernels.waterfill(demands, residual, sf)
            for u, pp, n in zip(users, per_prb, shares):
                n = int(n)
                if n == 0:
                    continue
                rw = self.config.rw_for(u, t_us)
                frags = self.queues[u].pull(int(n * pp))
                for pkt, _ in frags:
                    pkt.frags_pending += 1
                tb = TransportBlock(u, sf, n, rw, frags, int(round(n * rw)))
                self.reorder[u].add(tb)
                g = Grant(u, n, rw, ndi=True)
                alloc.grants.append(g)
                residual -= n
                sent.append((HarqProcess(tb), g))

        for proc, g in sent:
            ok = transmit_tb(self.rng, proc.tb.size_bits, self.config.ber_for(proc.tb.user, sf * SUBFRAME_US))
            proc.outcomes.append(ok)
            if ok:
                proc.tb.status = "ok"
            elif proc.attempts < MAX_RETRANSMISSIONS:
                proc.attempts += 1
                self.retx_due.setdefault(sf + HARQ_RTT_SUBFRAMES, []).append(proc)
            else:
                proc.tb.status = "dropped"

        for user, rb in self.reorder.items():
            if rb.held:
                for tb, delay in rb.release(sf):
                    self._release(tb, delay, sf)

        assert alloc.allocated + alloc.idle == self.n_prb
        self.last_allocation = alloc
        return alloc

    def _release(self, tb: TransportBlock, delay_ms: int, sf: int) -> None:
        delivered_us = (sf + 1) * SUBFRAME_US
        for pkt, _ in tb.fragments:
            pkt.frags_pending -= 1
            if delay_ms > pkt.harq_delay_ms:
                pkt.harq_delay_ms = delay_ms
            if tb.status == "dropped" and not pkt.dropped:
                pkt.dropped = True
                self._drop(pkt)
            if pkt.frags_pending == 0 and not pkt.dropped and pkt.delivered_us is None:
                # a packet is complete only once no fragment is still queued at the base station
                if not self._still_queued(tb.user, pkt):
                    pkt.delivered_us = delivered_us
                    self._deliver(pkt, delivered_us)

    def _still_queued(self, user: str, pkt: Packet) -> bool:
        q = self.queues[user]
        return bool(q.items) and q.items[0][0] is pkt


class CaController:
    """Carrier-aggregation state of one user.

    The first listed cell is the primary and is always active; secondary
    cells switch on strictly in list order and switch off from the end.
    """

    def __init__(self, user: str, cells: Sequence[Cell], activate_share: float = 0.9,
                 activate_window_ms: int = 100, deactivate_share: float = 0.8,
                 deactivate_window_ms: int = 500):
        if not cells:
            raise ValueError("a user needs at least a primary cell")
        self.user = user
        self.cells = list(cells)
        self.active = [True] + [False] * (len(cells) - 1)
        self.activate_share = activate_share
        self.activate_window = activate_window_ms
        self.deactivate_share = deactivate_share
        self.deactivate_window = deactivate_window_ms
        self._share_win: deque = deque()
        self._share_sum = [0.0, 0.0]
        self._demand_win: deque = deque()
        self._demand_sum = 0.0
        self.events: list = []

    @property
    def n_active(self) -> int:
        return sum(self.active)

    def active_cells(self) -> list:
        return [c for c, a in zip(self.cells, self.active) if a]

    def pick_cell(self, size_bits: int, t_us: int) -> Cell:
        """Cell for a newly arrived packet: least expected drain time wins."""
        best, best_cost = None, math.inf
        for cell in self.active_cells():
            q = cell.queue_for(self.user)
            cost = (q.backlog_bits + size_bits) / cell.payload_capacity(self.user, t_us)
            if cost < best_cost:
                best, best_cost = cell, cost
        return best

    def _reset(self) -> None:
        self._share_win.clear()
        self._share_sum = [0.0, 0.0]
        self._demand_win.clear()
        self._demand_sum = 0.0

    def ca_update(self, sf: int, allocations: dict) -> Optional[tuple]:
        """Feed one subframe of allocations (``cell_id -> SubframeAllocation``).

        Returns ``(subframe, cell_id, "activate"|"deactivate")`` on a change.
        """
        t_us = sf * SUBFRAME_US
        active = self.active_cells()
        mine = 0
        total = 0
        for cell in active:
            a = allocations.get(cell.cell_id)
            total += cell.n_prb
            if a is not None:
                mine += a.prbs_by_user().get(self.user, 0)
        offered = 0.0
        for cell in self.cells:
            q = cell.queues.get(self.user)
            if q is not None:
                offered += q.arrived_bits
                q.arrived_bits = 0

        self._share_win.append((mine, total))
        self._share_sum[0] += mine
        self._share_sum[1] += total
        if len(self._share_win) > self.activate_window:
            m, t = self._share_win.popleft()
            self._share_sum[0] -= m
            self._share_sum[1] -= t
        self._demand_win.append(offered)
        self._demand_sum += offered
        if len(self._demand_win) > self.deactivate_window:
            self._demand_sum -= self._demand_win.popleft()

        n = self.n_active
        if (n < len(self.cells) and len(self._share_win) == self.activate_window
                and self._share_sum[0] > self.activate_share * self._share_sum[1]):
            self.active[n] = True
            self._reset()
            ev = (sf, self.cells[n].cell_id, "activate")
            self.events.append(ev)
            return ev
        if n > 1 and len(self._demand_win) == self.deactivate_window:
            remaining = sum(c.payload_capacity(self.user, t_us) for c in active[:-1])
            if self._demand_sum / self.deactivate_window < self.deactivate_share * remaining:
                self.active[n - 1] = False
                self._reset()
                ev = (sf, self.cells[n - 1].cell_id, "deactivate")
                self.events.append(ev)
                return ev
        return None
