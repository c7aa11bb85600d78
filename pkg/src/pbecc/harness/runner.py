"""Wires a :class:`Scenario` into one simulation and runs it."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..cellmac import BackgroundProfile, CaController, Cell, CellConfig
from ..clientest import AckPayload, PbeClient
from ..senders import AimdSender, BbrSender, CbrSender, PbeSender, Sender
from ..simcore import MSS_BITS, SUBFRAME_US, Packet, SimulationReport, Simulator, WiredLink
from .scenario import Scenario

# inflight may exceed the cap by float rounding only
BDP_SLACK_BITS = 1e-6


class BdpViolation(AssertionError):
    pass


class Flow:
    def __init__(self, spec, sender: Sender, link: WiredLink, ca: CaController, client: Optional[PbeClient]):
        self.spec = spec
        self.id = spec.id
        self.sender = sender
        self.link = link
        self.ca = ca
        self.client = client
        self.start_us = int(round(spec.start_s * 1e6))
        self.stop_us = math.inf if spec.stop_s is None else int(round(spec.stop_s * 1e6))
        self.ack_delay_us = int(round((link.delay_us / 1000.0 + spec.uplink_ms) * 1000))
        self.base_rtt_us = 2 * link.delay_us + int(spec.uplink_ms * 1000) + 2 * SUBFRAME_US
        self.seq = 0
        self.last_send_us: Optional[int] = None
        self.send_gen = 0
        self.timer_gen = 0
        self.timer_at: Optional[int] = None
        # bookkeeping kept apart from the sender's own counters
        self.outstanding: dict[int, int] = {}
        self.inflight_bits = 0
        self.bdp_checks = 0
        self.bdp_violations = 0
        self.max_inflight_ratio = 0.0


class Network:
    """One simulated scenario: cells, flows, clients and the event loop."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None, strict_bdp: bool = True):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.sim = Simulator()
        self.report: SimulationReport = self.sim.report
        self.strict_bdp = strict_bdp
        self.end_us = int(round(scenario.duration_s * 1e6))
        self._uid = 0
        self._deliveries: list = []
        # per-subframe base-station backlog of flows that may aggregate carriers
        self.backlog: dict[str, list] = {}

        self.cells: dict[str, Cell] = {}
        for c in scenario.cells:
            cfg = CellConfig(c.id, c.prbs, c.rw, c.ber, dict(c.user_rw), dict(c.user_ber), c.overhead,
                             None if c.user_buffer_kb is None else int(c.user_buffer_kb * 1000))
            self.cells[c.id] = Cell(cfg, self.rng, self._on_release, self._on_mac_drop)

        self.links: dict[str, WiredLink] = {
            name: WiredLink(l.rate_mbps * 1e6, l.delay_ms, int(l.queue_kb * 1000), name)
            for name, l in scenario.links.items()
        }

        ca_args = {k: scenario.ca[k] for k in scenario.ca}
        self.flows: dict[str, Flow] = {}
        for f in scenario.flows:
            sender = self._make_sender(f)
            ca = CaController(f.id, [self.cells[c] for c in f.cells], **ca_args)
            client = PbeClient(f.id) if f.algorithm == "pbe" else None
            self.flows[f.id] = Flow(f, sender, self.links[f.link], ca, client)

        for b in scenario.background:
            self.cells[b.cell].inject_background_user(BackgroundProfile(b.user, b.start_ms, b.ta, b.prbs))
        n_sf = self.end_us // SUBFRAME_US
        for i, ct in enumerate(scenario.control_traffic):
            # Poisson arrivals of short control-plane grants
            k = self.rng.poisson(ct.rate_per_s * scenario.duration_s)
            starts = np.sort(self.rng.integers(0, n_sf, size=k))
            for j, s in enumerate(starts):
                self.cells[ct.cell].inject_background_user(
                    BackgroundProfile(f"ctl{i}-{j}", int(s), ct.ta, ct.prbs))

        for flow in self.flows.values():
            self.sim.schedule(flow.start_us, self._start_flow, flow)
            if flow.stop_us < math.inf:
                self.sim.schedule(flow.stop_us, self._stop_flow, flow)
        self.sim.schedule(0, self._tick, 0)

    def _make_sender(self, f) -> Sender:
        if f.algorithm == "pbe":
            return PbeSender(f.id)
        if f.algorithm == "bbr":
            return BbrSender(f.id, rng=self.rng)
        if f.algorithm == "aimd":
            return AimdSender(f.id)
        # cbr schedule is relative to the scenario clock
        return CbrSender(f.id, f.schedule)

    # -- sending -------------------------------------------------------
    def _start_flow(self, flow: Flow) -> None:
        self._arm_timer(flow)
        self._kick(flow)

    def _stop_flow(self, flow: Flow) -> None:
        flow.send_gen += 1

    def _kick(self, flow: Flow) -> None:
        now = self.sim.now
        if now < flow.start_us or now >= flow.stop_us:
            return
        rate = flow.sender.pacing_rate
        if rate <= 0:
            return
        at = now
        if flow.last_send_us is not None and rate < math.inf:
            at = max(now, flow.last_send_us + int(MSS_BITS * 1e6 / rate))
        flow.send_gen += 1
        self.sim.schedule(at, self._send, flow, flow.send_gen)

    def _send(self, flow: Flow, gen: int) -> None:
        if gen != flow.send_gen:
            return
        now = self.sim.now
        if now >= flow.stop_us:
            return
        sender = flow.sender
        burst = 0
        while True:
            if not sender.can_send(MSS_BITS):
                return  # an ACK or loss notice re-arms sending
            seq = sender.retransmit.popleft() if sender.retransmit else None
            retx = seq is not None
            if seq is None:
                seq = flow.seq
                flow.seq += 1
            self._uid += 1
            pkt = Packet(flow.id, seq, MSS_BITS, sent_us=now, retx=retx, uid=self._uid)
            sender.on_send(pkt, now)
            self._check_bdp(flow, pkt)
            self.report.packets.append(pkt)
            arrival = flow.link.transit(now, pkt.size_bits)
            if arrival is None:
                pkt.dropped = True
                self._notify_loss(flow, pkt)
            else:
                self.sim.schedule(arrival, self._bs_arrival, flow, pkt)
            flow.last_send_us = now
            burst += 1
            if sender.pacing_rate < math.inf or burst >= 64:
                break
        self._arm_timer(flow)
        self._kick(flow)

    def _check_bdp(self, flow: Flow, pkt: Packet) -> None:
        flow.outstanding[pkt.uid] = pkt.size_bits
        flow.inflight_bits += pkt.size_bits
        if not isinstance(flow.sender, PbeSender):
            return
        cap = flow.sender.bdp_cap()
        flow.bdp_checks += 1
        flow.max_inflight_ratio = max(flow.max_inflight_ratio, flow.inflight_bits / cap)
        if flow.inflight_bits > cap + BDP_SLACK_BITS:
            flow.bdp_violations += 1
            if self.strict_bdp:
                raise BdpViolation(f"{flow.id}: inflight {flow.inflight_bits} > RTprop*rate {cap:.1f}")

    def _settle(self, flow: Flow, uid: int) -> None:
        size = flow.outstanding.pop(uid, None)
        if size is not None:
            flow.inflight_bits -= size

    def _arm_timer(self, flow: Flow) -> None:
        d = flow.sender.deadline
        if d is None or d == flow.timer_at:
            return
        flow.timer_gen += 1
        flow.timer_at = d
        self.sim.schedule(max(d, self.sim.now), self._timer, flow, flow.timer_gen)

    def _timer(self, flow: Flow, gen: int) -> None:
        if gen != flow.timer_gen:
            return
        flow.timer_at = None
        flow.sender.on_timer(self.sim.now)
        self._after_sender_update(flow)

    def _after_sender_update(self, flow: Flow) -> None:
        self._arm_timer(flow)
        self._kick(flow)

    # -- network path --------------------------------------------------
    def _bs_arrival(self, flow: Flow, pkt: Packet) -> None:
        cell = flow.ca.pick_cell(pkt.size_bits, self.sim.now)
        cell.enqueue(flow.id, pkt)

    def _on_release(self, pkt: Packet, delivered_us: int) -> None:
        self._deliveries.append((pkt, delivered_us))

    def _on_mac_drop(self, pkt: Packet) -> None:
        self._notify_loss(self.flows[pkt.flow_id], pkt)

    def _notify_loss(self, flow: Flow, pkt: Packet) -> None:
        self.sim.schedule(self.sim.now + flow.base_rtt_us, self._loss_arrival, flow, pkt)

    def _loss_arrival(self, flow: Flow, pkt: Packet) -> None:
        self._settle(flow, pkt.uid)
        if flow.sender.name == "cbr":
            flow.sender.on_loss(pkt.uid, pkt.seq, self.sim.now)
        else:
            flow.sender.on_loss(pkt.uid, pkt.seq, self.sim.now)
            self._after_sender_update(flow)

    def _ack_arrival(self, flow: Flow, ack: AckPayload) -> None:
        self._settle(flow, ack.echo_uid)
        flow.sender.on_ack(ack, self.sim.now)
        self._after_sender_update(flow)

    # -- cellular clock ------------------------------------------------
    def _tick(self, sf: int) -> None:
        t_us = sf * SUBFRAME_US
        allocs = {}
        rows = self.report.allocations
        for cid, cell in self.cells.items():
            a = cell.schedule_subframe(sf)
            allocs[cid] = a
            rows.extend(a.rows())
        for flow in self.flows.values():
            if len(flow.ca.cells) > 1:
                self.backlog.setdefault(flow.id, []).append(
                    sum(c.queues[flow.id].backlog_bits for c in flow.ca.cells if flow.id in c.queues))
            ev = flow.ca.ca_update(sf, allocs)
            if ev is not None:
                self.report.ca_events.append((ev[0] * SUBFRAME_US, flow.id, ev[1], ev[2]))
            if flow.client is not None and flow.start_us <= t_us:
                active = flow.ca.active_cells()
                flow.client.on_subframe(
                    sf, allocs, active,
                    {c.cell_id: c.config.rw_for(flow.id, t_us) for c in active},
                    {c.cell_id: c.config.ber_for(flow.id, t_us) for c in active})
        deliveries, self._deliveries = self._deliveries, []
        for pkt, at in deliveries:
            flow = self.flows[pkt.flow_id]
            if flow.client is not None:
                ack = flow.client.on_packet(pkt, at)
            else:
                ack = AckPayload(0, 0, 0, pkt.seq, pkt.sent_us, flow.ca.n_active, pkt.uid)
            self.sim.schedule(at + flow.ack_delay_us, self._ack_arrival, flow, ack)
        if (sf + 1) * SUBFRAME_US <= self.end_us:
            self.sim.schedule((sf + 1) * SUBFRAME_US, self._tick, sf + 1)

    # -- driver --------------------------------------------------------
    def run(self) -> SimulationReport:
        report = self.sim.run_until(self.end_us)
        for f in self.flows.values():
            report.sender_trace.extend((f.id, *row) for row in f.sender.trace)
            if f.client is not None:
                report.state_trace.extend((t, f.id, s) for t, s in f.client.transitions)
        report.link_stats = {
            name: {"max_queue_bytes": l.max_occupancy_bytes, "drops": l.drops, "rate_bps": l.rate_bps,
                   "delay_us": l.delay_us, "bin_us": l.bin_us,
                   "max_queue_by_bin": sorted(l.max_by_bin.items())}
            for name, l in self.links.items()
        }
        report.extra = {
            "bdp": {fid: {"checks": f.bdp_checks, "violations": f.bdp_violations,
                          "max_ratio": f.max_inflight_ratio}
                    for fid, f in self.flows.items() if f.spec.algorithm == "pbe"},
            "phase_log": {fid: list(f.sender.phase_log) for fid, f in self.flows.items()
                          if isinstance(f.sender, PbeSender)},
            "backlog_bits": self.backlog,
            "bs_drops": {fid: sum(c.queues[fid].drops for c in f.ca.cells if fid in c.queues)
                         for fid, f in self.flows.items()},
        }
        return report


def run_scenario_report(scenario: Scenario, seed: Optional[int] = None, strict_bdp: bool = True):
    net = Network(scenario, seed, strict_bdp)
    return net, net.run()


def run_scenario(scenario: Scenario | str, seed: Optional[int] = None, strict_bdp: bool = True):
    """Run a scenario (object, bundled name or path) and compute its metrics.

    Returns ``(metrics, trace, network)``.
    """
    from .metrics import compute_metrics, trace_from_report
    from .scenario import load_scenario

    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    net, report = run_scenario_report(scenario, strict_bdp=strict_bdp)
    trace = trace_from_report(scenario, report)
    return compute_metrics(trace), trace, net
