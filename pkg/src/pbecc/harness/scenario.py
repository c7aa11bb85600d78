"""Scenario files: YAML documents describing cells, flows and traffic.

See ``docs/scenario_format.md`` for the full schema.  Validation errors name
the offending field path and, when known, its line in the file.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..cellmac import Timeline

ALGORITHMS = ("pbe", "bbr", "aimd", "cbr")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}field '{path}': {message}")


def _to_python(node, path: str, lines: dict):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            out[key] = _to_python(v, f"{path}.{key}" if path else key, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


@dataclass
class LinkSpec:
    rate_mbps: float
    delay_ms: float
    queue_kb: float = 1000.0


@dataclass
class CellSpec:
    id: str
    prbs: int
    rw: Timeline
    ber: Timeline = field(default_factory=lambda: Timeline.const(0.0))
    overhead: float = 0.068
    user_buffer_kb: Optional[float] = None
    user_rw: dict = field(default_factory=dict)
    user_ber: dict = field(default_factory=dict)


@dataclass
class FlowSpec:
    id: str
    algorithm: str
    cells: list
    link: str
    start_s: float = 0.0
    stop_s: Optional[float] = None
    uplink_ms: float = 4.0
    schedule: list = field(default_factory=list)  # cbr: [(t_s, rate_bps)]


@dataclass
class BackgroundSpec:
    cell: str
    user: str
    start_ms: int
    ta: int
    prbs: int


@dataclass
class ControlTrafficSpec:
    cell: str
    rate_per_s: float
    ta: int = 1
    prbs: int = 4


@dataclass
class Scenario:
    name: str
    duration_s: float
    seed: int
    cells: list
    flows: list
    links: dict
    background: list = field(default_factory=list)
    control_traffic: list = field(default_factory=list)
    ca: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    description: str = ""
    source: Optional[str] = None

    def with_seed(self, seed: int) -> "Scenario":
        s = copy.deepcopy(self)
        s.seed = int(seed)
        return s

    def with_algorithm(self, flow_id: str, algorithm: str) -> "Scenario":
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        s = copy.deepcopy(self)
        for f in s.flows:
            if f.id == flow_id:
                f.algorithm = algorithm
                return s
        raise KeyError(flow_id)

    def flow(self, flow_id: str) -> FlowSpec:
        return next(f for f in self.flows if f.id == flow_id)

    @property
    def warmup_s(self) -> float:
        return float(self.metrics.get("warmup_s", 0.0))


class _Reader:
    def __init__(self, data: dict, lines: dict):
        self.data = data
        self.lines = lines

    def fail(self, path: str, msg: str):
        raise ScenarioError(path, msg, self.lines.get(path))

    def get(self, obj: dict, key: str, path: str, kind, required: bool = True, default=None):
        p = f"{path}.{key}" if path else key
        if key not in obj or obj[key] is None:
            if required:
                self.fail(p, "required field missing")
            return default
        v = obj[key]
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float):
            self.fail(p, f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
        return v

    def positive(self, v, path: str):
        if v <= 0:
            self.fail(path, "must be positive")
        return v

    def timeline(self, v, path: str, check=None) -> Timeline:
        """A constant or ``{mode, points}``; ``check(value)`` returns an error or None."""
        check = check or (lambda x: None if x > 0 else "value must be positive")
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            err = check(v)
            if err:
                self.fail(path, err)
            return Timeline.const(float(v))
        if isinstance(v, dict):
            mode = v.get("mode", "step")
            pts = v.get("points")
            if not isinstance(pts, list) or not pts:
                self.fail(f"{path}.points", "expected a non-empty list of [time_s, value]")
            for i, pt in enumerate(pts):
                if not (isinstance(pt, list) and len(pt) == 2 and all(isinstance(x, (int, float)) for x in pt)):
                    self.fail(f"{path}.points[{i}]", "expected [time_s, value]")
                err = check(pt[1])
                if err:
                    self.fail(f"{path}.points[{i}]", err)
            if min(pt[0] for pt in pts) != 0:
                self.fail(f"{path}.points", "the first point must be at time 0 so the timeline covers the run")
            try:
                return Timeline([tuple(p) for p in pts], mode)
            except ValueError as e:
                self.fail(f"{path}.mode", str(e))
        self.fail(path, "expected a number or {mode, points}")


def _prob(x) -> Optional[str]:
    return None if 0 <= x < 1 else "must lie in [0, 1)"


_TOP_KEYS = {"name", "description", "duration_s", "seed", "cells", "flows", "links", "background",
             "control_traffic", "ca", "metrics"}
_CA_KEYS = {"activate_share", "activate_window_ms", "deactivate_share", "deactivate_window_ms"}
_METRIC_KEYS = {"warmup_s", "window_ms", "jain_flows", "steady_end_s"}


def parse_scenario(text: str, source: Optional[str] = None) -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError("<document>", f"YAML syntax error: {getattr(e, 'problem', e)}",
                            mark.line + 1 if mark else None) from None
    if node is None or not isinstance(node, yaml.MappingNode):
        raise ScenarioError("<document>", "scenario must be a mapping", 1)
    lines: dict = {}
    data = _to_python(node, "", lines)
    r = _Reader(data, lines)
    for key in data:
        if key not in _TOP_KEYS:
            r.fail(key, "unknown field")

    name = r.get(data, "name", "", str)
    duration = r.positive(r.get(data, "duration_s", "", float), "duration_s")
    seed = r.get(data, "seed", "", int)

    links = {}
    for lname, spec in (r.get(data, "links", "", dict, required=False, default={}) or {}).items():
        links[lname] = _link(r, spec, f"links.{lname}")

    cells = []
    raw_cells = r.get(data, "cells", "", list)
    if not raw_cells:
        r.fail("cells", "at least one cell is required")
    for i, c in enumerate(raw_cells):
        p = f"cells[{i}]"
        if not isinstance(c, dict):
            r.fail(p, "expected a mapping")
        cid = r.get(c, "id", p, str)
        prbs = r.positive(r.get(c, "prbs", p, int), f"{p}.prbs")
        rw = r.timeline(r.get(c, "rw", p, None), f"{p}.rw")
        ber = r.timeline(r.get(c, "ber", p, None, required=False, default=0.0), f"{p}.ber", _prob)
        overhead = r.get(c, "overhead", p, float, required=False, default=0.068)
        if not 0 <= overhead < 1:
            r.fail(f"{p}.overhead", "must lie in [0, 1)")
        buf = r.get(c, "user_buffer_kb", p, float, required=False)
        user_rw = {u: r.timeline(v, f"{p}.user_rw.{u}")
                   for u, v in (r.get(c, "user_rw", p, dict, required=False, default={}) or {}).items()}
        user_ber = {u: r.timeline(v, f"{p}.user_ber.{u}", _prob)
                    for u, v in (r.get(c, "user_ber", p, dict, required=False, default={}) or {}).items()}
        cells.append(CellSpec(cid, prbs, rw, ber, overhead, buf, user_rw, user_ber))
    cell_ids = [c.id for c in cells]
    if len(set(cell_ids)) != len(cell_ids):
        r.fail("cells", "cell ids must be unique")

    flows = []
    for i, f in enumerate(r.get(data, "flows", "", list, required=False, default=[]) or []):
        p = f"flows[{i}]"
        if not isinstance(f, dict):
            r.fail(p, "expected a mapping")
        fid = r.get(f, "id", p, str)
        algo = r.get(f, "algorithm", p, str)
        if algo not in ALGORITHMS:
            r.fail(f"{p}.algorithm", f"must be one of {', '.join(ALGORITHMS)}")
        fcells = r.get(f, "cells", p, list, required=False, default=[cell_ids[0]])
        for j, cid in enumerate(fcells):
            if cid not in cell_ids:
                r.fail(f"{p}.cells[{j}]", f"unknown cell {cid!r}")
        link = r.get(f, "link", p, None)
        if isinstance(link, dict):
            lname = f"{fid}.path"
            links[lname] = _link(r, link, f"{p}.link")
            link = lname
        elif not isinstance(link, str) or link not in links:
            r.fail(f"{p}.link", "must name an entry of 'links' or be an inline link")
        start = r.get(f, "start_s", p, float, required=False, default=0.0)
        stop = r.get(f, "stop_s", p, float, required=False)
        if start < 0 or start >= duration:
            r.fail(f"{p}.start_s", "must lie inside the scenario duration")
        if stop is not None and stop <= start:
            r.fail(f"{p}.stop_s", "must be after start_s")
        uplink = r.get(f, "uplink_ms", p, float, required=False, default=4.0)
        sched = []
        if algo == "cbr":
            raw = r.get(f, "schedule", p, list)
            for j, pt in enumerate(raw):
                if not (isinstance(pt, list) and len(pt) == 2 and all(isinstance(x, (int, float)) for x in pt)
                        and pt[1] >= 0):
                    r.fail(f"{p}.schedule[{j}]", "expected [time_s, rate_mbps >= 0]")
                sched.append((float(pt[0]), float(pt[1]) * 1e6))
        elif "schedule" in f:
            r.fail(f"{p}.schedule", "only cbr flows take a schedule")
        flows.append(FlowSpec(fid, algo, list(fcells), link, start, stop, uplink, sched))
    fids = [f.id for f in flows]
    if len(set(fids)) != len(fids):
        r.fail("flows", "flow ids must be unique")

    background = []
    for i, b in enumerate(r.get(data, "background", "", list, required=False, default=[]) or []):
        p = f"background[{i}]"
        cid = r.get(b, "cell", p, str)
        if cid not in cell_ids:
            r.fail(f"{p}.cell", f"unknown cell {cid!r}")
        prbs = r.positive(r.get(b, "prbs", p, int), f"{p}.prbs")
        if prbs > next(c.prbs for c in cells if c.id == cid):
            r.fail(f"{p}.prbs", "exceeds the cell's PRBs")
        background.append(BackgroundSpec(cid, r.get(b, "user", p, str), r.get(b, "start_ms", p, int),
                                         r.positive(r.get(b, "ta", p, int), f"{p}.ta"), prbs))

    control = []
    for i, b in enumerate(r.get(data, "control_traffic", "", list, required=False, default=[]) or []):
        p = f"control_traffic[{i}]"
        cid = r.get(b, "cell", p, str)
        if cid not in cell_ids:
            r.fail(f"{p}.cell", f"unknown cell {cid!r}")
        control.append(ControlTrafficSpec(cid, r.positive(r.get(b, "rate_per_s", p, float), f"{p}.rate_per_s"),
                                          r.get(b, "ta", p, int, required=False, default=1),
                                          r.get(b, "prbs", p, int, required=False, default=4)))

    ca = r.get(data, "ca", "", dict, required=False, default={}) or {}
    for k in ca:
        if k not in _CA_KEYS:
            r.fail(f"ca.{k}", "unknown field")
    metrics = r.get(data, "metrics", "", dict, required=False, default={}) or {}
    for k in metrics:
        if k not in _METRIC_KEYS:
            r.fail(f"metrics.{k}", "unknown field")

    return Scenario(name, duration, seed, cells, flows, links, background, control, ca, metrics,
                    data.get("description", "") or "", source)


def _link(r: _Reader, spec, path: str) -> LinkSpec:
    if not isinstance(spec, dict):
        r.fail(path, "expected a mapping")
    return LinkSpec(r.positive(r.get(spec, "rate_mbps", path, float), f"{path}.rate_mbps"),
                    r.get(spec, "delay_ms", path, float),
                    r.positive(r.get(spec, "queue_kb", path, float, required=False, default=1000.0),
                               f"{path}.queue_kb"))


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = Path(name_or_path)
    if not path.exists():
        candidate = SCENARIO_DIR / f"{name_or_path}.yaml"
        if not candidate.exists():
            raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")
        path = candidate
    return parse_scenario(path.read_text(), str(path))


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    """Plain-data echo of a parsed scenario, written next to the traces."""
    return {
        "name": s.name, "duration_s": s.duration_s, "seed": s.seed,
        "cells": [{"id": c.id, "prbs": c.prbs, "rw": c.rw.values(), "ber": c.ber.values(), "overhead": c.overhead}
                  for c in s.cells],
        "flows": [{"id": f.id, "algorithm": f.algorithm, "cells": f.cells, "link": f.link,
                   "start_s": f.start_s, "stop_s": f.stop_s} for f in s.flows],
        "links": {k: vars(v) for k, v in s.links.items()},
    }
