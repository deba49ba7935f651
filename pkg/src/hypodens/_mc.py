"""Monte Carlo plumbing: seeded streams, fixed chunking, small statistics.

Reproducibility contract: work is split into fixed-size chunks and chunk c of
stream s under master seed m draws from Philox keyed by SeedSequence
((m, s, c)).  Results are combined in chunk order, so the numbers do not
depend on how many workers processed the chunks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 8192

# stable stream ids per experiment family (never reorder)
STREAMS = {
    "path": 0,
    "endpoints": 1,
    "support": 2,
    "detq": 3,
    "decomp": 4,
    "covariance": 5,
    "remainder": 6,
    "conditional": 7,
    "gaussian": 8,
}


def rng_for(seed, stream, chunk_index=0):
    """Deterministic generator for (seed, stream, chunk)."""
    if isinstance(stream, str):
        stream = STREAMS[stream]
    ss = np.random.SeedSequence((int(seed), int(stream), int(chunk_index)))
    return np.random.Generator(np.random.Philox(ss))


def iter_chunks(total, chunk=CHUNK):
    lo = 0
    while lo < total:
        hi = min(lo + chunk, total)
        yield lo, hi
        lo = hi


def worker_count():
    env = os.environ.get("HYPODENS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def map_chunks(fn, n_total, chunk=CHUNK, workers=None):
    """Apply fn(chunk_index, lo, hi) to every chunk; results in chunk order."""
    spans = list(iter_chunks(n_total, chunk))
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(spans) <= 1:
        return [fn(c, lo, hi) for c, (lo, hi) in enumerate(spans)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, c, lo, hi) for c, (lo, hi) in enumerate(spans)]
        return [f.result() for f in futures]


def fsum_mean(parts, counts):
    """Order-independent mean from per-chunk sums (compensated accumulation)."""
    total = math.fsum(parts)
    n = sum(counts)
    return total / n if n else float("nan")


def wilson_interval(hits, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return float("nan"), float("nan")
    phat = hits / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def loglog_slope(xs, ys):
    """OLS slope of log(y) on log(x) with a +-2 se interval.

    Returns (slope, se, intercept); censored (non-positive) points must be
    removed by the caller.
    """
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        raise ValueError("slope fit needs at least two points")
    vx = lx - lx.mean()
    slope = float(np.dot(vx, ly - ly.mean()) / np.dot(vx, vx))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = max(lx.size - 2, 1)
    se = float(np.sqrt(np.dot(resid, resid) / dof / np.dot(vx, vx)))
    return slope, se, intercept


def halton(count, dim, skip=20):
    """Deterministic Halton sequence in [0, 1)^dim (first `skip` points dropped)."""
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
    if dim > len(primes):
        raise ValueError(f"halton supports up to {len(primes)} dimensions")
    out = np.empty((count, dim))
    for j in range(dim):
        base = primes[j]
        for k in range(count):
            i = k + 1 + skip
            f, r = 1.0, 0.0
            while i > 0:
                f /= base
                r += f * (i % base)
                i //= base
            out[k, j] = r
    return out


def ball_mesh(count, dim, radius=1.0):
    """Quasi-random points filling the Euclidean ball of given radius."""
    u = halton(count, dim + 1)
    # direction from inverse-normal-free construction: map to sphere via
    # normalized Gaussian would need randomness; use spherical coordinates
    # only for dim<=3, else normalized erfinv-free Box-Muller on pairs.
    g = _gauss_from_uniform(u[:, :dim], halton(count, dim, skip=200 + dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radial = u[:, dim:] ** (1.0 / dim)
    return radius * radial * g / norms


def _gauss_from_uniform(u1, u2):
    """Box-Muller on paired low-discrepancy uniforms (deterministic)."""
    u1 = np.clip(u1, 1e-12, 1.0 - 1e-12)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
