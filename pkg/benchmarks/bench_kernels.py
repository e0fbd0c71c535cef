"""Time the numba and numpy kernel paths on the same inputs and check they agree.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from metricdepth import kernels


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    h, w = 424, 800
    n = 400_000
    pix = rng.integers(0, h * w, n)
    z = rng.uniform(0.1, 100.0, n)
    pos = rng.uniform(-50.0, 50.0, (300_000, 3))
    coords = np.floor(pos / 0.1).astype(np.int64)
    sparse = rng.random((h, w)) < 0.05
    single = np.zeros((h, w), bool)
    single[h // 2, w // 3] = True
    return {
        "zbuffer": (pix, z, h * w),
        "voxel_reduce": (coords, pos),
        "nearest_valid_5pct": (sparse,),
        "nearest_valid_single": (single,),
    }


def _call(name, args):
    fn = getattr(kernels, name.split("_5pct")[0].split("_single")[0])
    return fn(*args)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    inputs = _inputs()
    rows = []
    prev = kernels.backend()
    try:
        for name, a in inputs.items():
            outs, times = {}, {}
            for be in sorted(kernels.BACKENDS):
                kernels.use_backend(be)
                outs[be] = _call(name, a)  # warm-up (and JIT compile)
                best = np.inf
                for _ in range(args.repeat):
                    t0 = time.perf_counter()
                    _call(name, a)
                    best = min(best, time.perf_counter() - t0)
                times[be] = best
            agree = all(_same(outs["numpy"], o) for o in outs.values())
            rows.append({"kernel": name, **{f"{k}_s": v for k, v in times.items()}, "identical": agree})
    finally:
        kernels.use_backend(prev)
    print(f"{'kernel':24s}{'numpy (s)':>12s}{'numba (s)':>12s}{'speedup':>10s}  identical")
    for r in rows:
        nb = r.get("numba_s", float("nan"))
        print(f"{r['kernel']:24s}{r['numpy_s']:12.4f}{nb:12.4f}{r['numpy_s'] / nb:10.1f}  {r['identical']}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
