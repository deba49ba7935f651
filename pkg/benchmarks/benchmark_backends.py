#!/usr/bin/env python3
"""Benchmark the compiled endpoint kernel against the numpy fallback.

Runs the batched Euler-Maruyama endpoint simulation that dominates the
density suites on each backend, reports wall times and the maximal output
deviation, and checks the deviation stays at roundoff level.

    python benchmarks/benchmark_backends.py [--paths N] [--steps S] [--model M]
"""

import argparse
import sys
import time

import numpy as np

from hypodens import _backend, fields, paths
from hypodens._fallback import pack_model


def run_backend(force, packed, x0, delta, n_paths, steps, seed, d):
    total = 0.0
    ends = []
    for c, (lo, hi) in enumerate(_chunks(n_paths)):
        dw = paths.sample_increments(seed, hi - lo, d, delta, steps,
                                     stream="endpoints", chunk_index=c)
        t0 = time.perf_counter()
        ends.append(_backend.sde_endpoints(dw, x0, delta, packed, force=force))
        total += time.perf_counter() - t0
    return total, np.concatenate(ends)


def _chunks(total, size=8192):
    lo = 0
    while lo < total:
        yield lo, min(lo + size, total)
        lo += size


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--steps", type=int, default=256)
    ap.add_argument("--model", default="heisenberg")
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    model = fields.get_model(args.model)
    packed = pack_model(model)
    x0 = np.zeros(model.n)

    if _backend.backend_name() != "compiled":
        print("compiled kernel not built; benchmarking the numpy kernel only")
        t, _ = run_backend("python", packed, x0, args.delta, args.paths,
                           args.steps, args.seed, model.d)
        print(f"numpy    : {t:8.3f} s  ({args.paths} paths x "
              f"{args.steps * model.d} steps)")
        return 0

    t_c, ends_c = run_backend("compiled", packed, x0, args.delta, args.paths,
                              args.steps, args.seed, model.d)
    t_p, ends_p = run_backend("python", packed, x0, args.delta, args.paths,
                              args.steps, args.seed, model.d)
    dev = float(np.abs(ends_c - ends_p).max())
    scale = float(np.abs(ends_p).max())
    print(f"model={args.model} paths={args.paths} "
          f"fine-steps={args.steps * model.d} delta={args.delta}")
    print(f"compiled : {t_c:8.3f} s")
    print(f"numpy    : {t_p:8.3f} s")
    print(f"speedup  : {t_p / t_c:8.2f} x")
    print(f"max deviation: {dev:.3e} (state scale {scale:.3e})")
    if dev > 1e-10 * max(scale, 1.0):
        print("ERROR: backends disagree beyond roundoff", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
