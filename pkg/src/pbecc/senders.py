"""Sender-side congestion control.

All senders share one small interface driven by the flow wrapper in the
harness: ``pacing_rate`` (bits/s), ``cwnd`` (bits, ``None`` = unlimited),
``on_send``, ``on_ack``, ``on_loss`` and ``on_timer``.  ``deadline`` is the
next time the sender wants ``on_timer`` called, if any.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

from .clientest import BottleneckState, rate_from_interval
from .simcore import MSS_BITS, Packet

PROBE_GAINS = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
STARTUP_GAIN = 2 / math.log(2)
PREDRAIN_GAIN = 0.5
BTLBW_WINDOW_RTPROPS = 10
RTPROP_WINDOW_US = 10_000_000
PROBE_RTT_US = 200_000
PROBE_RTT_PACKETS = 4
INITIAL_PACKETS = 10
INITIAL_RTT_US = 100_000
RAMP_RTPROPS = 3
FULL_PIPE_GROWTH = 1.25
FULL_PIPE_ROUNDS = 3

INTERNET_PHASES = frozenset({"InternetProbeBW", "InternetProbeRTT", "InternetStartUp", "InternetDrain"})
PBE_PHASES = ("LinearIncrease", "WirelessCA", "PreDrain", *sorted(INTERNET_PHASES))


class MaxFilter:
    """Windowed running maximum over ``(time, value)`` samples."""

    def __init__(self, window_us: int):
        self.window_us = window_us
        self._q: deque = deque()

    def update(self, t_us: int, value: float) -> float:
        q = self._q
        while q and q[-1][1] <= value:
            q.pop()
        q.append((t_us, value))
        return self.get(t_us)

    def get(self, t_us: int) -> float:
        q = self._q
        while q and q[0][0] < t_us - self.window_us:
            q.popleft()
        return q[0][1] if q else 0.0


class MinFilter:
    def __init__(self, window_us: int):
        self.window_us = window_us
        self._q: deque = deque()
        self.stamp: Optional[int] = None  # time the current minimum was set

    def update(self, t_us: int, value: float) -> float:
        q = self._q
        if not q or value <= self.get(t_us):
            self.stamp = t_us
        while q and q[-1][1] >= value:
            q.pop()
        q.append((t_us, value))
        return self.get(t_us)

    def get(self, t_us: int) -> Optional[float]:
        q = self._q
        while len(q) > 1 and q[0][0] < t_us - self.window_us:
            q.popleft()
        return q[0][1] if q else None


def pbe_probe_rate(btlbw: float, c_f: float) -> float:
    """Probing-phase rate: 1.25 x BtlBw, but never past the wireless fair share."""
    return min(1.25 * btlbw, c_f)


def pbe_startup_exit_check(recv_rates: Sequence[float], delays: Sequence[float],
                           offered: Sequence[float], rate_tol: float = 0.02,
                           min_rise_ms: float = 1.0) -> bool:
    """Per-RTprop series -> should linear increase hand over to Internet mode?

    True when the latest receive rate did not grow over the previous one
    while one-way delay rose strictly across the last three samples as the
    offered load kept rising.
    """
    if len(recv_rates) < 2 or len(delays) < 3 or len(offered) < 2:
        return False
    plateau = recv_rates[-1] <= recv_rates[-2] * (1.0 + rate_tol)
    d = delays[-3:]
    rising_delay = d[0] < d[1] < d[2] and d[2] - d[0] >= min_rise_ms
    rising_load = offered[-1] > offered[-2]
    return plateau and rising_delay and rising_load


@dataclass
class _SendRecord:
    size: int
    sent_us: int
    delivered: int
    delivered_us: int


class Sender:
    name = "base"

    def __init__(self, flow_id: str, mss: int = MSS_BITS):
        self.flow_id = flow_id
        self.mss = mss
        self.pacing_rate = INITIAL_PACKETS * mss * 1e6 / INITIAL_RTT_US
        self.cwnd: Optional[float] = None
        self.inflight = 0
        self.delivered = 0
        self.delivered_us = 0
        self._records: dict[int, _SendRecord] = {}
        self.rtprop_filter = MinFilter(RTPROP_WINDOW_US)
        self.btlbw_filter = MaxFilter(BTLBW_WINDOW_RTPROPS * INITIAL_RTT_US)
        self.phase = "Start"
        self.deadline: Optional[int] = None
        self.trace: list = []
        self._last_trace = (-1, None, None)
        self.retransmit: deque = deque()

    # -- estimates -----------------------------------------------------
    @property
    def rtprop_us(self) -> int:
        v = self.rtprop_filter.get(self.delivered_us)
        return int(v) if v is not None else INITIAL_RTT_US

    def btlbw(self, now: int) -> float:
        return self.btlbw_filter.get(now)

    @property
    def c_f(self) -> float:
        return 0.0

    def _sample(self, ack_uid: int, echo_send_time: int, now: int) -> Optional[float]:
        rec = self._records.pop(ack_uid, None)
        if rec is None:
            return None
        self.inflight -= rec.size
        self.delivered += rec.size
        self.delivered_us = now
        self.rtprop_filter.update(now, now - echo_send_time)
        self.btlbw_filter.window_us = BTLBW_WINDOW_RTPROPS * self.rtprop_us
        elapsed = now - rec.delivered_us
        if elapsed <= 0:
            return None
        rate = (self.delivered - rec.delivered) * 1e6 / elapsed
        self.btlbw_filter.update(now, rate)
        return rate

    # -- interface -----------------------------------------------------
    def can_send(self, size: int) -> bool:
        return self.cwnd is None or self.inflight + size <= self.cwnd

    def on_send(self, pkt: Packet, now: int) -> None:
        self._records[pkt.uid] = _SendRecord(pkt.size_bits, now, self.delivered,
                                             self.delivered_us if self.delivered else now)
        self.inflight += pkt.size_bits
        pkt.pacing_rate_bps = self.pacing_rate
        pkt.rtprop_us = self.rtprop_us
        pkt.phase = self.phase

    def on_ack(self, ack, now: int) -> None:
        self._sample(ack.echo_uid, ack.echo_send_time, now)
        for uid, seq in ack.lost:
            self.on_loss(uid, seq, now)
        self._record(now)

    def on_loss(self, uid: int, seq: int, now: int) -> None:
        rec = self._records.pop(uid, None)
        if rec is not None:
            self.inflight -= rec.size
            self.retransmit.append(seq)

    def on_timer(self, now: int) -> None:
        self._record(now)

    def _record(self, now: int) -> None:
        rate = self.pacing_rate
        key = (self.phase, round(rate) if math.isfinite(rate) else rate)
        if now - self._last_trace[0] >= 1000 or key != self._last_trace[1:]:
            self.trace.append((now, self.phase, self.pacing_rate, self.cwnd if self.cwnd is not None else -1,
                               self.btlbw(now), self.rtprop_us, self.c_f))
            self._last_trace = (now, *key)


class PbeSender(Sender):
    """Rate-based PBE-CC sender driven by client feedback."""

    name = "pbe"

    def __init__(self, flow_id: str, mss: int = MSS_BITS):
        super().__init__(flow_id, mss)
        self.phase = "LinearIncrease"
        self._cf_bps = 0.0
        self._ct_bps = 0.0
        self.cells = 1
        self._ramp_start: Optional[int] = None
        self._ramp_from = 0.0
        self._ramp_len = RAMP_RTPROPS * INITIAL_RTT_US
        self._phase_start = 0
        self._phase_len = 0
        self.cycle_index = 0
        self._drain_until = -1
        self._full_bw = 0.0
        self._full_bw_count = 0
        self._round_end_delivered = 0
        self.phase_log: list = [(0, "LinearIncrease")]
        self._set_cwnd()

    @property
    def c_f(self) -> float:
        return self._cf_bps

    def _floor(self) -> float:
        return self.mss * 1e6 / self.rtprop_us

    def _set_rate(self, rate: float) -> None:
        self.pacing_rate = max(rate, self._floor())
        self._set_cwnd()

    def _set_cwnd(self) -> None:
        cwnd = self.rtprop_us * self.pacing_rate / 1e6
        if self.phase == "InternetProbeRTT":
            cwnd = min(cwnd, PROBE_RTT_PACKETS * self.mss)
        self.cwnd = cwnd

    def bdp_cap(self) -> float:
        return self.rtprop_us * self.pacing_rate / 1e6

    def _enter(self, phase: str, now: int, length: int = 0) -> None:
        self.phase = phase
        self._phase_start = now
        self._phase_len = length
        self.deadline = now + length if length else None
        self.phase_log.append((now, phase))

    # -- wireless side -------------------------------------------------
    def _start_ramp(self, now: int, from_rate: float) -> None:
        self._enter("LinearIncrease", now)
        self._ramp_start = now
        self._ramp_from = from_rate
        self._ramp_len = RAMP_RTPROPS * self.rtprop_us
        self.deadline = now + self._ramp_len

    def ramp_rate(self, now: int) -> float:
        frac = min(1.0, (now - self._ramp_start) / self._ramp_len)
        return self._ramp_from + (self._cf_bps - self._ramp_from) * frac

    # -- internet side -------------------------------------------------
    def _enter_probe_bw(self, now: int, index: int = 0) -> None:
        self.cycle_index = index
        self._enter("InternetProbeBW", now, self.rtprop_us)
        self._apply_gain(now)

    def _apply_gain(self, now: int) -> None:
        btlbw = self.btlbw(now)
        if self.cycle_index == 0:
            rate = pbe_probe_rate(btlbw, self._cf_bps) if self._cf_bps > 0 else 1.25 * btlbw
        else:
            rate = PROBE_GAINS[self.cycle_index] * btlbw
        self._set_rate(rate)

    def _enter_internet(self, now: int) -> None:
        btlbw = self.btlbw(now)
        if btlbw <= 0:
            self._full_bw = 0.0
            self._full_bw_count = 0
            self._round_end_delivered = self.delivered
            self._enter("InternetStartUp", now)
            self._set_rate(STARTUP_GAIN * self.pacing_rate)
            return
        self._enter("PreDrain", now, self.rtprop_us)
        self._set_rate(PREDRAIN_GAIN * btlbw)

    def _advance(self, now: int) -> None:
        """Time-driven transitions; phases end exactly at their deadline."""
        while self.deadline is not None and now >= self.deadline:
            end = self.deadline
            if self.phase == "LinearIncrease":
                self._enter("WirelessCA", end)
                self._set_rate(self._ct_bps or self._cf_bps)
            elif self.phase == "PreDrain":
                self._enter_probe_bw(end, 0)
            elif self.phase == "InternetProbeBW":
                self.cycle_index = (self.cycle_index + 1) % len(PROBE_GAINS)
                self._phase_start = end
                self._phase_len = self.rtprop_us
                self.deadline = end + self._phase_len
                self._apply_gain(end)
            elif self.phase == "InternetProbeRTT":
                self.rtprop_filter.stamp = end
                self._enter_probe_bw(end, 2)
            else:
                self.deadline = None
        if self.phase == "WirelessCA" and 0 <= self._drain_until <= now:
            self._drain_until = -1
            self._set_rate(self._ct_bps)

    def on_timer(self, now: int) -> None:
        self._advance(now)
        if self.phase == "LinearIncrease" and self._ramp_start is not None:
            self._set_rate(self.ramp_rate(now))
        self._set_cwnd()
        self._record(now)

    def on_ack(self, ack, now: int) -> None:
        self._sample(ack.echo_uid, ack.echo_send_time, now)
        for uid, seq in ack.lost:
            self.on_loss(uid, seq, now)
        self._advance(now)
        self._cf_bps = ack.c_f * 1000.0
        self._ct_bps = rate_from_interval(ack.interval_us, self.mss) if ack.interval_us < 2**32 - 1 else 0.0
        internet_bit = ack.state_bit == BottleneckState.INTERNET

        if internet_bit and self.phase in ("LinearIncrease", "WirelessCA"):
            self._enter_internet(now)
        elif not internet_bit and (self.phase in INTERNET_PHASES or self.phase == "PreDrain"):
            self._enter("WirelessCA", now)

        if self.phase == "LinearIncrease":
            if self._ramp_start is None:
                self._start_ramp(now, 0.0)
            self.cells = max(self.cells, ack.cells)
            if now - self._ramp_start >= self._ramp_len:
                self._enter("WirelessCA", now)
            else:
                self._set_rate(self.ramp_rate(now))
        if self.phase == "WirelessCA":
            if ack.cells > self.cells:
                self.cells = ack.cells
                self._start_ramp(now, self.pacing_rate)
                self._set_rate(self.ramp_rate(now))
            else:
                self.cells = ack.cells
                if ack.drain_request and self._drain_until < 0:
                    self._drain_until = now + self.rtprop_us
                rate = self._ct_bps
                if self._drain_until >= 0:
                    rate *= PREDRAIN_GAIN
                self._set_rate(rate)
        elif self.phase in INTERNET_PHASES:
            self._internet_ack(now)
        # RTprop may have moved with this sample even if the rate did not
        self._set_cwnd()
        self._record(now)

    def _internet_ack(self, now: int) -> None:
        if self.phase == "InternetProbeBW":
            stamp = self.rtprop_filter.stamp
            if stamp is not None and now - stamp > RTPROP_WINDOW_US:
                self._enter("InternetProbeRTT", now, PROBE_RTT_US)
                self._set_rate(self.btlbw(now))
            else:
                self._apply_gain(now)
        elif self.phase == "InternetStartUp":
            btlbw = self.btlbw(now)
            if self.delivered >= self._round_end_delivered:
                self._round_end_delivered = self.delivered + self.inflight
                if btlbw >= self._full_bw * FULL_PIPE_GROWTH:
                    self._full_bw = btlbw
                    self._full_bw_count = 0
                else:
                    self._full_bw_count += 1
            if self._full_bw_count >= FULL_PIPE_ROUNDS:
                self._enter("InternetDrain", now)
                self._set_rate(btlbw / STARTUP_GAIN)
            else:
                self._set_rate(STARTUP_GAIN * max(btlbw, self._floor()))
        elif self.phase == "InternetDrain":
            btlbw = self.btlbw(now)
            if self.inflight <= self.rtprop_us * btlbw / 1e6:
                self._enter_probe_bw(now, 0)
            else:
                self._set_rate(btlbw / STARTUP_GAIN)
        elif self.phase == "InternetProbeRTT":
            self._set_rate(self.btlbw(now))


class BbrSender(Sender):
    """BBR-like baseline: StartUp, Drain, ProbeBW gain cycle, ProbeRTT."""

    name = "bbr"

    def __init__(self, flow_id: str, mss: int = MSS_BITS, rng=None, cwnd_gain: float = 2.0):
        super().__init__(flow_id, mss)
        self.rng = rng
        self.cwnd_gain = cwnd_gain
        self.phase = "StartUp"
        self.cycle_index = 0
        self._cycle_stamp = 0
        self._full_bw = 0.0
        self._full_bw_count = 0
        self._round_end_delivered = 0
        self._probe_rtt_done: Optional[int] = None
        self.cwnd = INITIAL_PACKETS * mss

    def _bdp(self, now: int) -> float:
        return self.rtprop_us * self.btlbw(now) / 1e6

    def _gain(self) -> float:
        if self.phase == "StartUp":
            return STARTUP_GAIN
        if self.phase == "Drain":
            return 1.0 / STARTUP_GAIN
        if self.phase == "ProbeBW":
            return PROBE_GAINS[self.cycle_index]
        return 1.0

    def _update_model(self, now: int) -> None:
        btlbw = self.btlbw(now)
        if btlbw <= 0:
            return
        if self.phase == "StartUp" and self.delivered >= self._round_end_delivered:
            self._round_end_delivered = self.delivered + self.inflight
            if btlbw >= self._full_bw * FULL_PIPE_GROWTH:
                self._full_bw = btlbw
                self._full_bw_count = 0
            else:
                self._full_bw_count += 1
            if self._full_bw_count >= FULL_PIPE_ROUNDS:
                self.phase = "Drain"
        if self.phase == "Drain" and self.inflight <= self._bdp(now):
            self.phase = "ProbeBW"
            choices = [i for i in range(len(PROBE_GAINS)) if i != 1]
            self.cycle_index = choices[int(self.rng.integers(len(choices)))] if self.rng is not None else 2
            self._cycle_stamp = now
        if self.phase == "ProbeBW" and now - self._cycle_stamp >= self.rtprop_us:
            self.cycle_index = (self.cycle_index + 1) % len(PROBE_GAINS)
            self._cycle_stamp = now
        stamp = self.rtprop_filter.stamp
        if self.phase != "ProbeRTT" and stamp is not None and now - stamp > RTPROP_WINDOW_US:
            self.phase = "ProbeRTT"
            self._probe_rtt_done = now + PROBE_RTT_US
        if self.phase == "ProbeRTT" and now >= self._probe_rtt_done:
            self.rtprop_filter.stamp = now
            self.phase = "ProbeBW" if self._full_bw_count >= FULL_PIPE_ROUNDS else "StartUp"
            self._cycle_stamp = now
            self.cycle_index = 2
        self.pacing_rate = max(self._gain() * btlbw, self.mss * 1e6 / self.rtprop_us)
        if self.phase == "ProbeRTT":
            self.cwnd = PROBE_RTT_PACKETS * self.mss
        else:
            self.cwnd = max(self.cwnd_gain * self._bdp(now), PROBE_RTT_PACKETS * self.mss)

    def on_ack(self, ack, now: int) -> None:
        self._sample(ack.echo_uid, ack.echo_send_time, now)
        for uid, seq in ack.lost:
            self.on_loss(uid, seq, now)
        self._update_model(now)
        self._record(now)

    def on_timer(self, now: int) -> None:
        self._update_model(now)
        self._record(now)


class AimdSender(Sender):
    """Loss-based window control: slow start, +1 MSS per RTT, halve on loss."""

    name = "aimd"

    def __init__(self, flow_id: str, mss: int = MSS_BITS):
        super().__init__(flow_id, mss)
        self.phase = "SlowStart"
        self.cwnd = INITIAL_PACKETS * mss
        self.pacing_rate = math.inf
        self._recovery_until_sent: Optional[int] = None
        self._last_send_us = 0

    def on_send(self, pkt: Packet, now: int) -> None:
        super().on_send(pkt, now)
        self._last_send_us = now

    def on_ack(self, ack, now: int) -> None:
        rec = self._records.get(ack.echo_uid)
        self._sample(ack.echo_uid, ack.echo_send_time, now)
        if rec is not None:
            if self._recovery_until_sent is not None and rec.sent_us > self._recovery_until_sent:
                self._recovery_until_sent = None
            if self.phase == "SlowStart":
                self.cwnd += rec.size
            else:
                self.cwnd += self.mss * rec.size / self.cwnd
        for uid, seq in ack.lost:
            self.on_loss(uid, seq, now)
        self._record(now)

    def on_loss(self, uid: int, seq: int, now: int) -> None:
        super().on_loss(uid, seq, now)
        if self._recovery_until_sent is None:
            self.aimd_decrease()
            self._recovery_until_sent = self._last_send_us

    def aimd_decrease(self) -> None:
        self.phase = "CongestionAvoidance"
        self.cwnd = max(2 * self.mss, 0.5 * self.cwnd)


class CbrSender(Sender):
    """Open-loop source following a ``[(t_s, rate_bps)]`` step schedule."""

    name = "cbr"

    def __init__(self, flow_id: str, schedule: Sequence[tuple], mss: int = MSS_BITS):
        super().__init__(flow_id, mss)
        self.phase = "Open"
        self.schedule = sorted((int(round(t * 1e6)), float(r)) for t, r in schedule)
        self.cwnd = None
        self.pacing_rate = 0.0
        self._i = -1
        self._advance(0)

    def _advance(self, now: int) -> None:
        s = self.schedule
        while self._i + 1 < len(s) and s[self._i + 1][0] <= now:
            self._i += 1
            self.pacing_rate = s[self._i][1]
        self.deadline = s[self._i + 1][0] if self._i + 1 < len(s) else None

    def on_timer(self, now: int) -> None:
        self._advance(now)
        self._record(now)

    def on_ack(self, ack, now: int) -> None:
        self._sample(ack.echo_uid, ack.echo_send_time, now)
        for uid, seq in ack.lost:
            rec = self._records.pop(uid, None)
            if rec is not None:
                self.inflight -= rec.size

    def on_loss(self, uid: int, seq: int, now: int) -> None:
        rec = self._records.pop(uid, None)
        if rec is not None:
            self.inflight -= rec.size


def bbr_baseline_step(sender: BbrSender, ack, now: int) -> float:
    sender.on_ack(ack, now)
    return sender.pacing_rate


def aimd_baseline_step(sender: AimdSender, ack=None, now: int = 0, loss: bool = False) -> float:
    if loss:
        sender.aimd_decrease()
    elif ack is not None:
        sender.on_ack(ack, now)
    return sender.cwnd


SENDERS = {"pbe": PbeSender, "bbr": BbrSender, "aimd": AimdSender, "cbr": CbrSender}
