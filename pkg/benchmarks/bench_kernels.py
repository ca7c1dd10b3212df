"""Compare the numba and numpy kernel backends on the same workload.

The backend is frozen at import time by DATAPATHS_KERNELS, so each backend
runs in its own child process; the parent collates the timings. Run as

    python3 benchmarks/bench_kernels.py [--repeats N] [--iterations N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def build_bench_model():
    from datapaths import model as M

    rng = np.random.default_rng(42)
    c1 = rng.normal(0, 0.3, (16, 3, 3, 3))
    c2 = rng.normal(0, 0.3, (16, 16, 3, 3))
    c3 = rng.normal(0, 0.3, (8, 16, 3, 3))
    fc = rng.normal(0, 0.5, (10, 8))
    layers = [
        M.conv2d(c1, rng.normal(0, 0.05, 16), padding=1),
        M.relu(),
        M.maxpool(2),
        M.conv2d(c2, rng.normal(0, 0.05, 16), padding=1),
        M.relu(),
        M.maxpool(2),
        M.conv2d(c3, rng.normal(0, 0.05, 8), padding=1),
        M.relu(),
        M.avgpool_global(),
        M.fullyconnected(fc, np.zeros(10)),
    ]
    return M.build_model((3, 32, 32), 10, layers)


def run_child(repeats: int, iterations: int) -> dict:
    from datapaths import kernels, network
    from datapaths.extract import ExtractionParams, extract_datapath
    from datapaths.model import full_gates
    from datapaths.network import LossSpec

    model = build_bench_model()
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (3, 32, 32))
    gates = full_gates(model)
    ref = network.forward(model, x).probabilities
    loss = LossSpec("probability_preservation", reference=ref, l1_weight=0.01)

    # warm-up pass so jit compilation stays out of the timings
    network.gate_gradients(model, x, gates, loss)

    t0 = time.perf_counter()
    for _ in range(repeats):
        network.forward(model, x, gates)
    forward_ms = (time.perf_counter() - t0) / repeats * 1e3

    t0 = time.perf_counter()
    for _ in range(repeats):
        network.gate_gradients(model, x, gates, loss)
    grad_ms = (time.perf_counter() - t0) / repeats * 1e3

    params = ExtractionParams(l1_weight=0.01, learning_rate=0.1, iterations=iterations)
    t0 = time.perf_counter()
    extract_datapath(model, x, params)
    extract_s = time.perf_counter() - t0

    return {
        "backend": kernels.BACKEND,
        "forward_ms": forward_ms,
        "gate_grad_ms": grad_ms,
        "extract_s": extract_s,
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=30, help="timed passes per op")
    ap.add_argument("--iterations", type=int, default=100, help="extraction steps")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.child:
        print(json.dumps(run_child(args.repeats, args.iterations)))
        return 0

    results = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, DATAPATHS_KERNELS=backend)
        cmd = [
            sys.executable, os.path.abspath(__file__), "--child",
            "--repeats", str(args.repeats), "--iterations", str(args.iterations),
        ]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            return proc.returncode
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        if res["backend"] != backend:
            print(f"note: requested {backend}, got {res['backend']} (numba unavailable?)")
        results.append(res)

    print(f"{'backend':<8} {'forward ms':>11} {'gate-grad ms':>13} {'extract s':>10}")
    for res in results:
        print(
            f"{res['backend']:<8} {res['forward_ms']:>11.3f} "
            f"{res['gate_grad_ms']:>13.3f} {res['extract_s']:>10.3f}"
        )
    a, b = results
    if a["backend"] != b["backend"]:
        print(f"speedup (numpy/numba): x{b['gate_grad_ms'] / a['gate_grad_ms']:.1f} on gate-grad")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
