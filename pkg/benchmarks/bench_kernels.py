"""Time the numeric kernels under the numba and the pure-numpy backends.

Each backend runs in its own interpreter because ``PBECC_NO_NUMBA`` is read
at import time.  Numba compile time is excluded by a warm-up call and shown
separately.

    python benchmarks/bench_kernels.py [--repeat N] [--scenario NAME]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time, timeit
import numpy as np
t0 = time.perf_counter()
from pbecc import _kernels as K
repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
cases = {
    "tb_error_prob (10^5)": (K.tb_error_prob, (rng.uniform(0, 1e-5, 100_000), rng.integers(1, 60_000, 100_000))),
    "bisect_translate (1024)": (K.bisect_translate,
                                (np.geomspace(1, 1e7, 1024), np.full(1024, 3e-6), np.full(1024, 0.068))),
    "waterfill (8 users)": (K.waterfill, (rng.integers(0, 80, 8), 100, 3)),
    "bin_sum (10^5 samples)": (K.bin_sum, (np.sort(rng.integers(0, 10_000_000, 100_000)),
                                           rng.uniform(0, 12000, 100_000), 0, 100_000, 100)),
    "jain (10^4)": (K.jain, (rng.uniform(0, 1, 10_000),)),
}
out = {"backend": K.BACKEND, "results": {}}
for name, (fn, args) in cases.items():
    c0 = time.perf_counter()
    fn(*args)
    first = time.perf_counter() - c0
    n, total = timeit.Timer(lambda: fn(*args)).autorange()
    best = min(timeit.repeat(lambda: fn(*args), number=n, repeat=repeat)) / n
    out["results"][name] = {"first_call_s": first, "per_call_s": best}
scenario = sys.argv[2] if len(sys.argv) > 2 else ""
if scenario:
    from pbecc.harness.runner import run_scenario
    run_scenario(scenario)  # warm-up: compile and fill caches
    c0 = time.perf_counter()
    run_scenario(scenario)
    out["scenario"] = {"name": scenario, "wall_s": time.perf_counter() - c0}
print(json.dumps(out))
"""


def run_backend(no_numba: bool, repeat: int, scenario: str = "") -> dict:
    env = dict(os.environ, PBECC_NO_NUMBA="1" if no_numba else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), scenario], env=env, capture_output=True,
                          text=True, check=True)
    return json.loads(proc.stdout)


def _fmt(s: float) -> str:
    if s < 1e-3:
        return f"{s * 1e6:8.1f} us"
    return f"{s * 1e3:8.2f} ms"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenario", default="", help="also time a full run of this bundled scenario")
    ap.add_argument("--json", action="store_true", help="print raw results as JSON")
    args = ap.parse_args(argv)
    numba_res = run_backend(False, args.repeat, args.scenario)
    numpy_res = run_backend(True, args.repeat, args.scenario)
    if args.json:
        print(json.dumps({"numba": numba_res, "numpy": numpy_res}, indent=2))
        return 0
    if numba_res["backend"] != "numba":
        print("numba is not importable; both columns use the numpy path")
    print(f"{'kernel':<26}{'numpy':>12}{'numba':>12}{'speed-up':>10}{'numba 1st call':>16}")
    for name, r in numpy_res["results"].items():
        n = numba_res["results"][name]
        print(f"{name:<26}{_fmt(r['per_call_s']):>12}{_fmt(n['per_call_s']):>12}"
              f"{r['per_call_s'] / n['per_call_s']:>9.1f}x{_fmt(n['first_call_s']):>16}")
    if args.scenario:
        a, b = numpy_res["scenario"]["wall_s"], numba_res["scenario"]["wall_s"]
        print(f"{'run ' + args.scenario:<26}{a:>10.2f} s{b:>10.2f} s{a / b:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
