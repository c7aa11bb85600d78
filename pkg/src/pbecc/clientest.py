"""Mobile-client capacity estimation, bottleneck detection and ACK feedback.

Rates are in bits per 1 ms subframe throughout.  In the goodput relation
``C_p = C_t + C_t * (1 - (1 - p)^L) + gamma * C_p`` the transport-block size
``L`` is the per-subframe goodput ``C_t`` itself, so a rate in bits/subframe
doubles as a TB size in bits.
"""

from __future__ import annotations

import enum
import functools
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .ctrlchan import CellObserver
from .simcore import MSS_BITS, SUBFRAME_US, Packet

PROTOCOL_OVERHEAD = 0.068
DPROP_WINDOW_US = 10_000_000
HARQ_ALLOWANCE_MS = 3 * 8
JITTER_ALLOWANCE_MS = 3
NPKT_SUBFRAMES = 6
LUT_POINTS = 1024
LUT_CP_MIN = 1.0
LUT_CP_MAX = 1e7
RATE_REACHED_TOL = 0.05
U32_MAX = 2**32 - 1


class BottleneckState(enum.IntEnum):
    WIRELESS = 0
    INTERNET = 1


def fair_share_rate(cells: Sequence[tuple]) -> float:
    """Sum over cells of ``R_w * P_cell / N``; cells are ``(R_w, P_cell, N)``."""
    total = 0.0
    for rw, n_prb, n in cells:
        if n < 1:
            raise ValueError("user count must include the client itself")
        total += rw * (n_prb / n)
    return total


def estimate_capacity(cells: Sequence[tuple]) -> float:
    """Physical capacity from ``(R_w, P_a, P_idle, N)`` per cell."""
    total = 0.0
    for rw, pa, pidle, n in cells:
        if n < 1:
            raise ValueError("user count must include the client itself")
        total += rw * (pa + pidle / n)
    return total


def _check_translation_args(p: float, gamma: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"bit error probability {p} outside [0, 1)")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"protocol overhead {gamma} outside [0, 1)")


def translate_capacity(cp: float, p: float, gamma: float = PROTOCOL_OVERHEAD) -> float:
    """Transport goodput ``C_t`` for physical capacity ``cp`` by bisection."""
    _check_translation_args(p, gamma)
    if cp < 0:
        raise ValueError("capacity must be non-negative")
    if cp == 0:
        return 0.0
    if p == 0.0:
        return (1.0 - gamma) * cp
    return float(_kernels.bisect_translate(np.array([cp]), np.array([p]), np.array([gamma]))[0])


def goodput_residual(ct: float, cp: float, p: float, gamma: float) -> float:
    """``C_t (2 - (1-p)^C_t) - (1 - gamma) C_p``; zero at the solution."""
    return ct * (1.0 - math.expm1(ct * math.log1p(-p))) - (1.0 - gamma) * cp


class CapacityTranslator:
    """Lookup table of ``C_p -> C_t`` on log-spaced ``C_p`` points.

    Linear interpolation inside the table; below it the goodput ratio at the
    first point is applied, above it the exact bisection is used.
    """

    def __init__(self, p: float, gamma: float = PROTOCOL_OVERHEAD, points: int = LUT_POINTS,
                 cp_min: float = LUT_CP_MIN, cp_max: float = LUT_CP_MAX):
        _check_translation_args(p, gamma)
        self.p = p
        self.gamma = gamma
        self.cp = np.geomspace(cp_min, cp_max, points)
        self.ct = _kernels.bisect_translate(self.cp, np.full(points, p), np.full(points, gamma))
        self._lo_ratio = self.ct[0] / self.cp[0]

    def __call__(self, cp: float) -> float:
        if cp <= 0:
            return 0.0
        if cp < self.cp[0]:
            return cp * self._lo_ratio
        if cp > self.cp[-1]:
            return translate_capacity(cp, self.p, self.gamma)
        return float(np.interp(cp, self.cp, self.ct))

    def many(self, cp) -> np.ndarray:
        cp = np.asarray(cp, dtype=np.float64)
        out = np.interp(cp, self.cp, self.ct)
        out = np.where(cp < self.cp[0], cp * self._lo_ratio, out)
        high = cp > self.cp[-1]
        if np.any(high):
            out[high] = _kernels.bisect_translate(cp[high], self.p, self.gamma)
        return out


@functools.lru_cache(maxsize=256)
def get_translator(p: float, gamma: float = PROTOCOL_OVERHEAD) -> CapacityTranslator:
    return CapacityTranslator(p, gamma)


def consecutive_threshold(ct: float, mss: int = MSS_BITS) -> int:
    """Packets that fit in six subframes at goodput ``ct``, at least one."""
    return max(1, math.ceil(NPKT_SUBFRAMES * ct / mss))


class DelayTracker:
    """Sliding 10 s minimum of one-way delay plus the switch counters."""

    def __init__(self, window_us: int = DPROP_WINDOW_US):
        self.window_us = window_us
        self._mins: deque = deque()  # (t_us, owd_ms) increasing in owd
        self.d_prop: Optional[float] = None
        self.over = 0
        self.under = 0
        self._dprop_since: Optional[int] = None
        self.reprobe_due = False

    @property
    def d_th(self) -> Optional[float]:
        if self.d_prop is None:
            return None
        return self.d_prop + HARQ_ALLOWANCE_MS + JITTER_ALLOWANCE_MS

    def update(self, t_us: int, owd_ms: float) -> "DelayTracker":
        q = self._mins
        while q and q[-1][1] >= owd_ms:
            q.pop()
        q.append((t_us, owd_ms))
        while q[0][0] < t_us - self.window_us:
            q.popleft()
        new = q[0][1]
        if new != self.d_prop:
            self.d_prop = new
            self._dprop_since = t_us
        elif t_us - self._dprop_since >= self.window_us:
            # min unchanged for a whole window: ask the sender to drain and re-measure
            self.reprobe_due = True
            self._dprop_since = t_us
        th = self.d_th
        if owd_ms > th:
            self.over += 1
            self.under = 0
        elif owd_ms < th:
            self.under += 1
            self.over = 0
        else:
            self.over = 0
            self.under = 0
        return self

    def take_reprobe(self) -> bool:
        due = self.reprobe_due
        self.reprobe_due = False
        return due

    def reset_counters(self) -> None:
        self.over = 0
        self.under = 0


def state_transition(tracker: DelayTracker, state: BottleneckState, n_pkt: int,
                     rate_reached_cf: bool = False) -> BottleneckState:
    if state == BottleneckState.WIRELESS and tracker.over >= n_pkt:
        tracker.reset_counters()
        return BottleneckState.INTERNET
    if state == BottleneckState.INTERNET and tracker.under >= n_pkt and rate_reached_cf:
        tracker.reset_counters()
        return BottleneckState.WIRELESS
    return state


@dataclass
class CapacityEstimate:
    cells: list = field(default_factory=list)  # (R_w, P_a, P_idle, N) per active cell
    cp: float = 0.0
    cf: float = 0.0
    ct: float = 0.0
    cf_t: float = 0.0  # fair share translated to goodput
    # rate fed back to the sender: the fair share is a floor the
    # equal-share tower always honours, so ct alone cannot drift below it
    target: float = 0.0

    @property
    def interval_us(self) -> int:
        return interval_from_rate(self.target)


def interval_from_rate(ct_bits_per_subframe: float, mss: int = MSS_BITS) -> int:
    """Microseconds between two 1500-byte packets at goodput ``ct``."""
    if ct_bits_per_subframe <= 0:
        return U32_MAX
    return int(min(U32_MAX, max(1, round(mss / ct_bits_per_subframe * SUBFRAME_US))))


def rate_from_interval(interval_us: int, mss: int = MSS_BITS) -> float:
    """Inverse of :func:`interval_from_rate`, in bits per second."""
    return mss * 1e6 / interval_us


_ACK_STRUCT = struct.Struct("<IBIqqB")


@dataclass
class AckPayload:
    interval_us: int
    state_bit: int
    c_f: int  # translated fair share, bits per subframe
    echo_seq: int
    echo_send_time: int
    cells: int = 1
    echo_uid: int = 0
    lost: tuple = ()
    drain_request: bool = False
    owd_us: int = 0

    def pack(self) -> bytes:
        """The fixed part of the simulated wire layout."""
        return _ACK_STRUCT.pack(self.interval_us, self.state_bit & 1, self.c_f, self.echo_seq,
                                self.echo_send_time, self.cells)

    @classmethod
    def unpack(cls, data: bytes) -> "AckPayload":
        interval_us, bit, c_f, seq, sent, cells = _ACK_STRUCT.unpack(data)
        return cls(interval_us, bit, c_f, seq, sent, cells)

    @property
    def interval_ms(self) -> float:
        return self.interval_us / 1000.0


def make_ack_feedback(estimate: CapacityEstimate, state: BottleneckState, pkt: Optional[Packet] = None,
                      **extra) -> AckPayload:
    return AckPayload(
        interval_us=estimate.interval_us,
        state_bit=int(state),
        c_f=int(min(U32_MAX, round(estimate.cf_t))),
        echo_seq=pkt.seq if pkt is not None else 0,
        echo_send_time=pkt.sent_us if pkt is not None else 0,
        echo_uid=pkt.uid if pkt is not None else 0,
        **extra,
    )


class PbeClient:
    """Per-flow mobile client: observes its cells and answers every packet."""

    def __init__(self, user: str, gamma: float = PROTOCOL_OVERHEAD, mss: int = MSS_BITS,
                 initial_window: int = 40, min_active: int = 1, min_prbs: float = 4):
        from .senders import pbe_startup_exit_check

        self._startup_check = pbe_startup_exit_check
        self.user = user
        self.gamma = gamma
        self.mss = mss
        self.window = initial_window
        self.min_active = min_active
        self.min_prbs = min_prbs
        self.observers: dict[str, CellObserver] = {}
        self.n_prb: dict[str, int] = {}
        self.active: list[str] = []
        self.ber: dict[str, float] = {}
        self.estimate = CapacityEstimate()
        self.tracker = DelayTracker()
        self.state = BottleneckState.WIRELESS
        self.transitions: list = []  # (t_us, state)
        # per-RTprop buckets for the start-up exit check
        self._bucket_start: Optional[int] = None
        self._bucket = [0, 0.0, 0, 0.0]  # bits, owd sum, count, rate sum
        self._recv_rates: deque = deque(maxlen=4)
        self._delays: deque = deque(maxlen=4)
        self._offered: deque = deque(maxlen=4)

    def on_subframe(self, sf: int, allocations: dict, active_cells: Sequence, rw_now: dict,
                    ber: dict) -> CapacityEstimate:
        """Decode one subframe of every active cell and refresh the estimate."""
        self.active = [c.cell_id for c in active_cells]
        cells_est = []
        cp = cf = ct = cf_t = target = 0.0
        for cell in active_cells:
            cid = cell.cell_id
            obs = self.observers.get(cid)
            if obs is None:
                obs = self.observers[cid] = CellObserver(cid, cell.n_prb, self.user, self.window)
                self.n_prb[cid] = cell.n_prb
            obs.set_window(self.window)
            obs.observe(allocations[cid], rw_now[cid])
            rw, pa, pidle = obs.windowed_params()
            n = obs.n_users(self.min_active, self.min_prbs)
            cells_est.append((rw, pa, pidle, n))
            cp_i = estimate_capacity([(rw, pa, pidle, n)])
            cf_i = fair_share_rate([(rw, cell.n_prb, n)])
            tr = get_translator(ber[cid], self.gamma)
            cp += cp_i
            cf += cf_i
            ct += tr(cp_i)
            cf_t += tr(cf_i)
            target += tr(max(cp_i, cf_i))
        self.estimate = CapacityEstimate(cells_est, cp, cf, ct, cf_t, target)
        return self.estimate

    def _startup_bucket(self, pkt: Packet, now: int, owd_ms: float) -> bool:
        if self._bucket_start is None:
            self._bucket_start = now
        b = self._bucket
        b[0] += pkt.size_bits
        b[1] += owd_ms
        b[2] += 1
        b[3] += pkt.pacing_rate_bps
        span = max(SUBFRAME_US, pkt.rtprop_us or self.window * SUBFRAME_US)
        if now - self._bucket_start < span:
            return False
        self._recv_rates.append(b[0] * 1e6 / (now - self._bucket_start))
        self._delays.append(b[1] / b[2])
        self._offered.append(b[3] / b[2])
        self._bucket_start = now
        self._bucket = [0, 0.0, 0, 0.0]
        if pkt.phase != "LinearIncrease":
            return False
        return self._startup_check(list(self._recv_rates), list(self._delays), list(self._offered))

    def on_packet(self, pkt: Packet, now: int, lost: tuple = (), cells: Optional[int] = None) -> AckPayload:
        if pkt.rtprop_us:
            self.window = max(1, math.ceil(pkt.rtprop_us / SUBFRAME_US))
        owd_ms = (now - pkt.sent_us) / 1000.0
        self.tracker.update(now, owd_ms)
        n_pkt = consecutive_threshold(self.estimate.ct, self.mss)
        reached = pkt.pacing_rate_bps >= (1.0 - RATE_REACHED_TOL) * self.estimate.cf_t * 1000.0
        new = state_transition(self.tracker, self.state, n_pkt, reached)
        if self._startup_bucket(pkt, now, owd_ms) and new == BottleneckState.WIRELESS:
            new = BottleneckState.INTERNET
            self.tracker.reset_counters()
        if new != self.state:
            self.state = new
            self.transitions.append((now, int(new)))
        return make_ack_feedback(self.estimate, self.state, pkt,
                                 cells=len(self.active) if cells is None else cells,
                                 lost=tuple(lost), drain_request=self.tracker.take_reprobe(),
                                 owd_us=now - pkt.sent_us)
