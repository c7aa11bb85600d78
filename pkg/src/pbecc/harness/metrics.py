"""Metrics over simulation traces.

Everything here works on plain trace rows (the same rows the CLI writes to
CSV), so a report recomputed from a trace directory matches the one
produced by the live run byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import _kernels
from ..clientest import BottleneckState

PERCENTILES = (10, 25, 50, 75, 90, 95)
WINDOW_MS = 100
STATE_NAMES = {int(s): s.name.lower() for s in BottleneckState}
# decimals kept in metrics.json
DIGITS = 6


def jain_index(values: Sequence[float]) -> float:
    """Jain's fairness index ``(sum x)^2 / (n * sum x^2)``."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0 or not np.any(x > 0):
        raise ValueError("Jain's index needs at least one positive value")
    if np.any(x < 0):
        raise ValueError("Jain's index is defined for non-negative values")
    return _kernels.jain(x)


def windowed_throughput(times_us: Sequence[int], bits: Sequence[float], start_us: int, end_us: int,
                        window_ms: float = WINDOW_MS) -> np.ndarray:
    """Throughput in bit/s of each ``window_ms`` window in ``[start_us, end_us)``.

    A trailing partial window is averaged over its actual length.
    """
    width = int(round(window_ms * 1000))
    if width <= 0:
        raise ValueError("window must be positive")
    span = max(0, end_us - start_us)
    n = math.ceil(span / width)
    if n == 0:
        return np.zeros(0)
    sums = _kernels.bin_sum(np.asarray(times_us, dtype=np.int64), np.asarray(bits, dtype=np.float64),
                            start_us, width, n)
    lengths = np.full(n, float(width))
    lengths[-1] = span - (n - 1) * width
    return sums * 1e6 / lengths


def delay_percentiles(delays_ms: Sequence[float], qs: Sequence[int] = PERCENTILES) -> dict:
    """Order statistics of one-way delay; empty input gives an empty dict."""
    d = np.asarray(delays_ms, dtype=np.float64)
    if d.size == 0:
        return {}
    vals = np.percentile(d, qs)
    # np.percentile is monotone already; enforce it against float noise
    vals = np.maximum.accumulate(vals)
    return {f"p{q}": float(v) for q, v in zip(qs, vals)}


def time_in_state(transitions: Iterable[tuple], start_us: int, end_us: int,
                  initial: int = int(BottleneckState.WIRELESS)) -> dict:
    """Fraction of ``[start_us, end_us)`` spent in each bottleneck state.

    ``transitions`` are ``(t_us, state)`` pairs in time order; the flow is in
    ``initial`` before the first one.
    """
    if end_us <= start_us:
        raise ValueError("empty interval")
    spent = {name: 0.0 for name in STATE_NAMES.values()}
    state, t = initial, start_us
    for at, new in transitions:
        if at <= start_us:
            state = int(new)
            continue
        if at >= end_us:
            break
        spent[STATE_NAMES[state]] += at - t
        state, t = int(new), at
    spent[STATE_NAMES[state]] += end_us - t
    total = end_us - start_us
    return {k: v / total for k, v in spent.items()}


@dataclass
class TraceSet:
    """Plain-data view of one run, as written to a trace directory."""

    meta: dict  # scenario echo plus seed, warm-up and metric options
    packets: list  # PACKET_COLUMNS rows (delivered_us "" when not delivered)
    allocations: list  # ALLOCATION_COLUMNS rows
    states: list = field(default_factory=list)  # (t_us, flow, state)
    ca_events: list = field(default_factory=list)  # (t_us, flow, cell, action)
    links: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _r(x):
    if isinstance(x, float):
        return round(x, DIGITS)
    if isinstance(x, dict):
        return {k: _r(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_r(v) for v in x]
    return x


def _flow_window(f: dict, meta: dict) -> tuple[int, int]:
    end = int(round(meta["duration_s"] * 1e6))
    start = max(int(round(f["start_s"] * 1e6)), int(round(meta.get("warmup_s", 0.0) * 1e6)))
    stop = end if f.get("stop_s") is None else min(end, int(round(f["stop_s"] * 1e6)))
    return start, stop


def compute_metrics(trace: TraceSet) -> dict:
    meta = trace.meta
    end_us = int(round(meta["duration_s"] * 1e6))
    warm_us = int(round(meta.get("warmup_s", 0.0) * 1e6))
    window_ms = float(meta.get("window_ms", WINDOW_MS))

    by_flow: dict[str, list] = {f["id"]: [] for f in meta["flows"]}
    for row in trace.packets:
        by_flow.setdefault(row[0], []).append(row)

    prb_steady_end = int(round(meta.get("steady_end_s", meta["duration_s"]) * 1e6))
    prbs: dict[str, float] = {}
    idle = {}
    for t, cell, user, n, _rw, _ndi, idle_n in trace.allocations:
        t = int(t)
        if user != "-" and warm_us <= t < prb_steady_end:
            prbs[user] = prbs.get(user, 0) + int(n)
        if t < end_us:
            c = idle.setdefault(cell, {})
            c[t] = int(idle_n)
    steady_sf = max(1, (prb_steady_end - warm_us) // 1000)

    flows = {}
    for f in meta["flows"]:
        fid = f["id"]
        rows = by_flow.get(fid, [])
        sent = len(rows)
        delivered = [(int(r[4]), int(r[2]), int(r[3])) for r in rows if r[4] != "" and not int(r[7])]
        dropped = sum(1 for r in rows if int(r[7]))
        w0, w1 = _flow_window(f, meta)
        times = [d[0] for d in delivered]
        bits = [d[1] for d in delivered]
        series = windowed_throughput(times, bits, 0, end_us, window_ms)
        in_win = [b for t, b in zip(times, bits) if w0 <= t < w1]
        mean_tput = sum(in_win) * 1e6 / (w1 - w0) if w1 > w0 else 0.0
        delays = [(d[0] - d[2]) / 1000.0 for d in delivered if d[2] >= w0 and d[0] <= w1]
        entry = {
            "algorithm": f["algorithm"],
            "packets": {"sent": sent, "delivered": len(delivered), "dropped": dropped},
            "mean_throughput_mbps": mean_tput / 1e6,
            "throughput_mbps": [v / 1e6 for v in series.tolist()],
            "delay_ms": delay_percentiles(delays),
            "mean_prbs_per_subframe": prbs.get(fid, 0) / steady_sf,
            "ca_events": [[int(e[0]), e[2], e[3]] for e in trace.ca_events if e[1] == fid],
        }
        if f["algorithm"] == "pbe" and w1 > w0:
            tr = [(int(t), int(s)) for t, flow, s in trace.states if flow == fid]
            entry["time_in_state"] = time_in_state(tr, w0, w1)
        if fid in trace.extra.get("bdp", {}):
            entry["bdp"] = trace.extra["bdp"][fid]
        flows[fid] = entry

    jain_ids = meta.get("jain_flows")
    if jain_ids is None:
        jain_ids = [f["id"] for f in meta["flows"] if f["algorithm"] != "cbr"
                    and f["start_s"] * 1e6 <= warm_us
                    and (f.get("stop_s") is None or f["stop_s"] * 1e6 >= prb_steady_end)]
    share = [prbs.get(fid, 0) for fid in jain_ids]
    jain = jain_index(share) if share and any(share) else None

    links = {}
    for name, st in trace.links.items():
        bin_us = st.get("bin_us", 100_000)
        after = [q for b, q in st.get("max_queue_by_bin", []) if b * bin_us >= warm_us]
        links[name] = {"max_queue_bytes": st["max_queue_bytes"], "max_queue_bytes_after_warmup": max(after, default=0),
                       "drops": st["drops"], "rate_mbps": st["rate_bps"] / 1e6}

    cells = {cid: {"mean_idle_prbs": (sum(v for t, v in c.items() if t >= warm_us)
                                      / max(1, sum(1 for t in c if t >= warm_us)))}
             for cid, c in sorted(idle.items())}

    return _r({
        "scenario": meta["name"],
        "seed": meta["seed"],
        "duration_s": meta["duration_s"],
        "warmup_s": meta.get("warmup_s", 0.0),
        "window_ms": window_ms,
        "flows": flows,
        "jain": {"flows": list(jain_ids), "prbs": share, "index": jain},
        "links": links,
        "cells": cells,
    })


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, sort_keys=True, indent=2) + "\n"


def trace_from_report(scenario, report, seed: Optional[int] = None) -> TraceSet:
    """Build the plain-data trace of a finished live run."""
    from .scenario import scenario_to_dict

    meta = scenario_to_dict(scenario)
    meta["seed"] = scenario.seed if seed is None else int(seed)
    meta["warmup_s"] = scenario.warmup_s
    for k in ("window_ms", "jain_flows", "steady_end_s"):
        if k in scenario.metrics:
            meta[k] = scenario.metrics[k]
    return TraceSet(meta, list(report.packet_rows()), list(report.allocations),
                    list(report.state_trace), list(report.ca_events), report.link_stats, report.extra)
