"""Time the hot paths under both kernel backends.

Each backend runs in its own interpreter, since the choice is fixed at
import time by TENSORVOTE_BACKEND. The first call of every workload is
reported separately because it includes numba compilation.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--points 2000]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads(n_points: int):
    import numpy as np

    from tensorvote import datagen, emtv, kernels, mrftv
    from tensorvote.spatial import PointSet, build
    from tensorvote.tensors import Scale

    rng = np.random.default_rng(0)
    cloud = PointSet(rng.uniform(-1, 1, size=(n_points, 3)))
    scale = Scale(0.02)
    idx = build(cloud, scale.radius)
    K = cloud.ball_tensors()
    line = datagen.gen_line(datagen.LineInstanceSpec(oi_ratio=5.0, seed=1)).points

    return {
        "accumulate": lambda: kernels.accumulate(cloud.points, K, idx.indptr, idx.indices,
                                                 scale.sigma_d, kernels.ASYM, True),
        "mrf_run": lambda: mrftv.run(cloud, mrftv.MrfConfig(scale=scale), idx, max_iters=3),
        "emtv_fit": lambda: emtv.fit(line, emtv.EmtvConfig(scale=Scale(0.1))),
    }


def _child(repeat: int, n_points: int) -> None:
    from tensorvote import BACKEND

    out = {"backend": BACKEND}
    for name, fn in _workloads(n_points).items():
        t0 = time.perf_counter()
        fn()
        first = time.perf_counter() - t0
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        times.sort()
        out[name] = {"first_s": first, "median_s": times[len(times) // 2]}
    print(json.dumps(out))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=5, help="timed runs per workload (default: 5)")
    p.add_argument("--points", type=int, default=2000, help="cloud size for voting and MRF (default: 2000)")
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)
    if args.child:
        _child(args.repeat, args.points)
        return 0
    results = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, TENSORVOTE_BACKEND=backend)
        res = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat),
                              "--points", str(args.points)], env=env, capture_output=True, text=True)
        if res.returncode != 0:
            sys.stderr.write(res.stderr)
            return 1
        results[backend] = json.loads(res.stdout.strip().splitlines()[-1])
    print(f"{'workload':<12} {'numba first':>12} {'numba med':>10} {'numpy med':>10} {'speedup':>8}")
    for name in ("accumulate", "mrf_run", "emtv_fit"):
        a, b = results["numba"][name], results["numpy"][name]
        print(f"{name:<12} {a['first_s']:>11.3f}s {a['median_s']:>9.4f}s {b['median_s']:>9.4f}s "
              f"{b['median_s'] / a['median_s']:>7.1f}x")
    if results["numba"]["backend"] != "numba":
        print("note: numba is not importable, both columns ran the numpy path")
    return 0


if __name__ == "__main__":
    sys.exit(main())
