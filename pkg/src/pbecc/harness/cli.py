"""Command line entry point: ``pbecc run | report | list-scenarios``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..simcore import ALLOCATION_COLUMNS, PACKET_COLUMNS
from .metrics import TraceSet, compute_metrics, metrics_json
from .runner import BdpViolation, run_scenario
from .scenario import ScenarioError, bundled_scenarios, load_scenario

SENDER_COLUMNS = ("flow_id", "time_us", "phase", "pacing_rate_bps", "cwnd_bits", "btlbw_bps", "rtprop_us",
                  "c_f_bps")
STATE_COLUMNS = ("time_us", "flow_id", "state")
CA_COLUMNS = ("time_us", "flow_id", "cell", "action")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return list(r)


def _plots(metrics: dict) -> dict:
    """Tool-agnostic description of the standard figures."""
    return {
        "throughput": {"file": "metrics.json", "x": "window index x window_ms", "y": "flows.*.throughput_mbps",
                       "kind": "line", "ylabel": "Mbit/s"},
        "delay_cdf": {"file": "packets.csv", "x": "owd_ms", "group": "flow_id", "kind": "ecdf",
                      "xlabel": "one-way delay (ms)"},
        "prb_allocation": {"file": "allocations.csv", "x": "time", "y": "prbs", "group": "user",
                           "kind": "stacked-area", "bin_ms": metrics["window_ms"]},
        "sender_rate": {"file": "sender.csv", "x": "time_us", "y": "pacing_rate_bps", "group": "flow_id",
                        "kind": "step"},
    }


def write_trace_dir(out: Path, metrics: dict, trace: TraceSet, sender_rows) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(metrics_json(metrics))
    _write_csv(out / "packets.csv", PACKET_COLUMNS, trace.packets)
    _write_csv(out / "allocations.csv", ALLOCATION_COLUMNS, trace.allocations)
    _write_csv(out / "sender.csv", SENDER_COLUMNS, sender_rows)
    _write_csv(out / "states.csv", STATE_COLUMNS, trace.states)
    _write_csv(out / "ca_events.csv", CA_COLUMNS, trace.ca_events)
    run = {"meta": trace.meta, "links": trace.links, "extra": trace.extra}
    (out / "run.json").write_text(json.dumps(run, sort_keys=True, indent=2) + "\n")
    (out / "plots.json").write_text(json.dumps(_plots(metrics), sort_keys=True, indent=2) + "\n")


def read_trace_dir(path: Path) -> TraceSet:
    run = json.loads((path / "run.json").read_text())
    allocations = [(int(t), c, u, int(n), float(rw), int(ndi), int(idle))
                   for t, c, u, n, rw, ndi, idle in _read_csv(path / "allocations.csv")]
    packets = [(f, int(seq), int(size), int(sent), "" if d == "" else int(d), owd, int(h), int(drop))
               for f, seq, size, sent, d, owd, h, drop in _read_csv(path / "packets.csv")]
    states = [(int(t), f, int(s)) for t, f, s in _read_csv(path / "states.csv")]
    ca = [(int(t), f, c, a) for t, f, c, a in _read_csv(path / "ca_events.csv")]
    links = {k: dict(v, max_queue_by_bin=[tuple(x) for x in v.get("max_queue_by_bin", [])])
             for k, v in run["links"].items()}
    return TraceSet(run["meta"], packets, allocations, states, ca, links, run["extra"])


def _summary(metrics: dict) -> str:
    lines = [f"scenario {metrics['scenario']} seed {metrics['seed']}"]
    for fid, f in sorted(metrics["flows"].items()):
        d = f["delay_ms"]
        delay = f"p50 {d['p50']:.1f} ms p95 {d['p95']:.1f} ms" if d else "no deliveries"
        line = f"  {fid:<10} {f['algorithm']:<4} {f['mean_throughput_mbps']:7.2f} Mbit/s  {delay}"
        if "time_in_state" in f:
            line += f"  internet {f['time_in_state']['internet']:.0%}"
        lines.append(line)
    if metrics["jain"]["index"] is not None:
        lines.append(f"  Jain index over PRBs {metrics['jain']['index']:.4f} ({', '.join(metrics['jain']['flows'])})")
    return "\n".join(lines)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    metrics, trace, net = run_scenario(scenario, seed=args.seed, strict_bdp=not args.lenient)
    if args.out:
        write_trace_dir(Path(args.out), metrics, trace, net.report.sender_trace)
    print(_summary(metrics))
    return 0


def cmd_report(args) -> int:
    path = Path(args.trace_dir)
    metrics = compute_metrics(read_trace_dir(path))
    text = metrics_json(metrics)
    if args.write:
        (path / "metrics.json").write_text(text)
    if args.json:
        sys.stdout.write(text)
    else:
        print(_summary(metrics))
    return 0


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        s = load_scenario(name)
        desc = " ".join(s.description.split())
        print(f"{name:<24} {s.duration_s:5.1f} s  {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbecc", description="PBE-CC congestion control simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a bundled scenario or a scenario file")
    run.add_argument("scenario", help="bundled scenario name or path to a YAML file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="directory for metrics.json and CSV traces")
    run.add_argument("--lenient", action="store_true",
                     help="count BDP-cap violations instead of aborting on the first one")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="recompute metrics from a trace directory")
    rep.add_argument("trace_dir")
    rep.add_argument("--json", action="store_true", help="print metrics.json instead of a summary")
    rep.add_argument("--write", action="store_true", help="overwrite metrics.json in the directory")
    rep.set_defaults(func=cmd_report)

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BdpViolation as e:
        print(f"BDP invariant violated: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
