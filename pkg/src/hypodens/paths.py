"""Brownian grids on the s_k = k delta/d sub-interval structure.

The horizon [0, delta] splits into d sub-intervals with boundaries aligned to
the fine grid (steps_per_sub fine steps each).  On that structure this module
computes increments, iterated Stratonovich integrals (left-point rule off the
diagonal, exact square identity on it), the scaled vector Theta, the
conditional covariance blocks Q_p of Theta given the off-diagonal sub-paths,
support-set quantities, mollified localization weights and the Monte Carlo
support statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _mc
from .fields import col_pair

__all__ = [
    "BrownianGrid", "sample_path", "sample_increments", "path_values_from_increments",
    "IteratedIncrements", "increments_and_iterated", "theta_vector",
    "ConditionalCovariance", "conditional_covariance", "support_quantities",
    "mollifier", "localization_weights", "support_statistics", "detq_inverse_moments",
]


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BrownianGrid:
    """A d-dimensional Brownian path on the uniform fine grid over [0, delta].

    values has shape (steps_per_sub * d + 1, d); the sub-interval boundaries
    s_k = k delta / d sit exactly at indices k * steps_per_sub.
    """

    d: int
    delta: float
    steps_per_sub: int
    values: np.ndarray
    seed: Optional[int] = None

    @property
    def n_steps(self):
        return self.steps_per_sub * self.d

    @property
    def h(self):
        return self.delta / self.n_steps

    def times(self):
        return np.linspace(0.0, self.delta, self.n_steps + 1)

    def boundary_index(self, k):
        """Grid index of s_k = k delta / d (exact, no interpolation)."""
        if not 0 <= k <= self.d:
            raise IndexError(f"sub-interval boundary {k} outside 0..{self.d}")
        return k * self.steps_per_sub

    def rescaled(self):
        """B_t = delta^{-1/2} W_{t delta} on the unit-horizon grid."""
        return self.values / math.sqrt(self.delta)


def sample_increments(seed, n_paths, d, delta, steps_per_sub, stream="path",
                      chunk_index=0):
    """Brownian increments of shape (n_paths, steps_per_sub*d, d) from the
    deterministic (seed, stream, chunk) generator."""
    g = _mc.rng_for(seed, stream, chunk_index)
    n_steps = steps_per_sub * d
    h = delta / n_steps
    return g.standard_normal((n_paths, n_steps, d)) * math.sqrt(h)


def path_values_from_increments(dw):
    """Cumulative path values with W_0 = 0; appends the leading zero row."""
    dw = np.asarray(dw)
    zero = np.zeros(dw.shape[:-2] + (1, dw.shape[-1]))
    return np.concatenate([zero, np.cumsum(dw, axis=-2)], axis=-2)


def sample_path(seed, d, delta, steps_per_sub=256):
    """A single BrownianGrid; deterministic in seed."""
    if steps_per_sub < 8:
        raise ValueError("steps_per_sub must be at least 8")
    dw = sample_increments(seed, 1, d, delta, steps_per_sub)[0]
    return BrownianGrid(d=d, delta=delta, steps_per_sub=steps_per_sub,
                        values=path_values_from_increments(dw), seed=seed)


def _as_values(path):
    """Accept a BrownianGrid or a raw (..., G+1, d) array plus metadata."""
    if isinstance(path, BrownianGrid):
        return path.values, path.d, path.steps_per_sub, path.delta
    raise TypeError("expected a BrownianGrid; use the *_values functions for raw arrays")


# ---------------------------------------------------------------------------
# increments and iterated integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IteratedIncrements:
    """Delta_k^i and Delta_k^{i,j} for k, i, j = 1..d (0-based array axes).

    first has shape (..., d, d) indexed [k-1, i-1]; second has shape
    (..., d, d, d) indexed [k-1, i-1, j-1].  The diagonal satisfies
    Delta_k^{i,i} = (Delta_k^i)^2 / 2 exactly; off-diagonal entries are
    left-point Riemann sums (Ito = Stratonovich there).
    """

    d: int
    delta: float
    first: np.ndarray
    second: np.ndarray

    def get_first(self, k, i):
        return self.first[..., k - 1, i - 1]

    def get_second(self, k, i, j):
        return self.second[..., k - 1, i - 1, j - 1]


def iterated_from_values(values, d, steps_per_sub, delta):
    S = steps_per_sub
    bounds = values[..., ::S, :]                      # (..., d+1, d)
    first = np.diff(bounds, axis=-2)                  # (..., d, d) [k, i]
    second = np.empty(values.shape[:-2] + (d, d, d))
    for k in range(d):
        blk = values[..., k * S:(k + 1) * S + 1, :]
        rel = blk[..., :-1, :] - blk[..., :1, :]      # left points minus start
        dw = np.diff(blk, axis=-2)
        second[..., k, :, :] = np.einsum("...si,...sj->...ij", rel, dw)
    for i in range(d):
        second[..., :, i, i] = 0.5 * first[..., :, i] ** 2
    return IteratedIncrements(d=d, delta=delta, first=first, second=second)


def increments_and_iterated(path):
    values, d, S, delta = _as_values(path)
    return iterated_from_values(values, d, S, delta)


def full_horizon_iterated(values, d, steps_per_sub, delta):
    """int_0^delta W^i o dW^j assembled from sub-interval pieces plus cross
    terms; shape (..., d, d).  Diagonal is the exact (W_delta^i)^2 / 2."""
    it = iterated_from_values(values, d, steps_per_sub, delta)
    S = steps_per_sub
    total = np.sum(it.second, axis=-3)                # sum of block pieces
    starts = values[..., : d * S: S, :]               # W at s_{k-1}
    cross = np.einsum("...ki,...kj->...ij", starts, it.first)
    total = total + cross
    w_end = values[..., -1, :]
    for i in range(d):
        total[..., i, i] = 0.5 * w_end[..., i] ** 2
    return total


def theta_index_pairs(d):
    """Arrays (i_of_l, p_of_l) with 1-based values for l = 1..d^2."""
    i_arr = np.empty(d * d, dtype=int)
    p_arr = np.empty(d * d, dtype=int)
    for l in range(1, d * d + 1):
        i, p = col_pair(l, d)
        i_arr[l - 1], p_arr[l - 1] = i, p
    return i_arr, p_arr


def theta_vector(path_or_iterated, delta=None):
    """Theta in R^m: Delta_p^{i,p}/delta off the diagonal map, Delta_p^p/sqrt(delta) on it."""
    if isinstance(path_or_iterated, IteratedIncrements):
        it = path_or_iterated
        delta = it.delta if delta is None else delta
    else:
        it = increments_and_iterated(path_or_iterated)
        delta = it.delta
    d = it.d
    i_arr, p_arr = theta_index_pairs(d)
    theta = np.empty(it.first.shape[:-2] + (d * d,))
    for l in range(d * d):
        i, p = i_arr[l], p_arr[l]
        if i == p:
            theta[..., l] = it.get_first(p, p) / math.sqrt(delta)
        else:
            theta[..., l] = it.get_second(p, i, p) / delta
    return theta


def theta_block(theta, p, d):
    """The p-th length-d block Theta_{(p)} (1-based p)."""
    return theta[..., (p - 1) * d: p * d]


# ---------------------------------------------------------------------------
# conditional covariance of Theta given the off-diagonal sub-paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionalCovariance:
    """Blocks Q_p and the block-diagonal m x m covariance Q of Theta."""

    d: int
    blocks: np.ndarray       # (..., d, d, d)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def m(self):
        return self.d * self.d

    @property
    def full(self):
        """Block-diagonal Q; shape (..., m, m)."""
        d = self.d
        out = np.zeros(self.blocks.shape[:-3] + (d * d, d * d))
        for p in range(d):
            out[..., p * d:(p + 1) * d, p * d:(p + 1) * d] = self.blocks[..., p, :, :]
        return out

    @property
    def det_blocks(self):
        return np.linalg.det(self.blocks)

    @property
    def det(self):
        return np.prod(self.det_blocks, axis=-1)

    def eigen_extremes(self):
        """(lambda_*, lambda^*) of the full Q = extremes over the blocks."""
        ev = np.linalg.eigvalsh(self.blocks)
        return ev[..., :, 0].min(axis=-1), ev[..., :, -1].max(axis=-1)

    @property
    def frobenius_scaled(self):
        """|Q|_l = sqrt((1/m) sum Q_ij^2) over the full m x m matrix."""
        sq = np.sum(self.blocks ** 2, axis=(-1, -2, -3))
        return np.sqrt(sq / self.m)


def covariance_from_values(values, d, steps_per_sub, delta):
    S = steps_per_sub
    B = values / math.sqrt(delta)
    dt = 1.0 / (S * d)
    blocks = np.empty(values.shape[:-2] + (d, d, d))
    for p in range(d):
        rel = B[..., p * S:(p + 1) * S, :] - B[..., p * S: p * S + 1, :]
        blocks[..., p, :, :] = np.einsum("...si,...sj->...ij", rel, rel) * dt
        row = np.sum(rel, axis=-2) * dt
        blocks[..., p, p, :] = row
        blocks[..., p, :, p] = row
        blocks[..., p, p, p] = 1.0 / d
    return ConditionalCovariance(d=d, blocks=blocks)


def conditional_covariance(path, delta=None):
    values, d, S, dlt = _as_values(path)
    return covariance_from_values(values, d, S, dlt if delta is None else delta)


# ---------------------------------------------------------------------------
# support quantities and localization
# ---------------------------------------------------------------------------

def support_from_values(values, d, steps_per_sub, delta, convention="p-block"):
    """q_p(B), q(B) and the per-block sup terms of the localization sets.

    convention selects the reference time of the inner integrand: "p-block"
    uses B_{(p-1)/d} (block start), "i-block" the printed B_{(i-1)/d}.
    """
    if convention not in ("p-block", "i-block"):
        raise ValueError(f"unknown qp convention '{convention}'")
    S = steps_per_sub
    B = values / math.sqrt(delta)
    lead = values.shape[:-2]
    q_p = np.zeros(lead + (d,))
    sup_p = np.zeros(lead + (d,))
    for p in range(d):
        blk = B[..., p * S:(p + 1) * S + 1, :]
        start = blk[..., :1, :]
        endinc = np.abs(blk[..., -1, :] - start[..., 0, :])
        mask = np.ones(d, dtype=bool)
        mask[p] = False
        q_p[..., p] = np.sum(endinc[..., mask], axis=-1)
        dev = np.abs(blk - start)
        sup_p[..., p] = np.max(np.sum(dev[..., mask], axis=-1), axis=-1)
        dw = np.diff(blk, axis=-2)
        for i in range(d):
            if i == p:
                continue
            for j in range(d):
                if j == p or j == i:
                    continue
                ref = start[..., 0, j] if convention == "p-block" else B[..., i * S, j]
                integ = np.sum((blk[..., :-1, j] - ref[..., None]) * dw[..., i], axis=-1)
                q_p[..., p] += np.abs(integ)
    return {"q_p": q_p, "q": np.sum(q_p, axis=-1), "sup_p": sup_p}


def support_quantities(path, convention="p-block"):
    values, d, S, delta = _as_values(path)
    return support_from_values(values, d, S, delta, convention)


def mollifier(a, x):
    """psi_a: 1 on [-a, a], smooth decay on a < |x| < 2a, 0 beyond 2a."""
    if a <= 0.0:
        raise ValueError(f"mollifier width must be positive, got {a}")
    x = np.abs(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    out[x <= a] = 1.0
    mid = (x > a) & (x < 2.0 * a)
    if np.any(mid):
        u = x[mid] - a
        out[mid] = np.exp(1.0 - a * a / (a * a - u * u))
    return out if out.ndim else float(out)


def in_lambda_set(cov, support, eps, rho):
    """Pathwise indicator of Lambda_{rho,eps} (all blocks simultaneously)."""
    det_ok = np.all(cov.det_blocks >= eps ** rho, axis=-1)
    sup_ok = np.all(support["sup_p"] <= eps ** (-rho), axis=-1)
    q_ok = np.all(support["q_p"] <= eps, axis=-1)
    return det_ok & sup_ok & q_ok


def localization_weights(path, theta=None, eps=0.1, rho=None, r=1.0,
                         convention="p-block"):
    """Mollified localization weights and the Lambda_{rho,eps} indicator.

    Utilde = psi_{eps^{-d rho}}(1/det Q) psi_{eps^{-2 rho}}(|Q|_l)
             psi_{d eps}(q(B));  Ubar = prod_i psi_r(Theta_i).
    rho defaults to 1/(8 m).
    """
    values, d, S, delta = _as_values(path)
    if rho is None:
        rho = 1.0 / (8.0 * d * d)
    cov = covariance_from_values(values, d, S, delta)
    sup = support_from_values(values, d, S, delta, convention)
    if theta is None:
        theta = theta_vector(path)
    a1 = eps ** (-d * rho)
    a2 = eps ** (-2.0 * rho)
    a3 = d * eps
    u_tilde = (mollifier(a1, 1.0 / cov.det)
               * mollifier(a2, cov.frobenius_scaled)
               * mollifier(a3, sup["q"]))
    u_bar = np.prod(mollifier(r, theta), axis=-1)
    return {
        "u_tilde": u_tilde,
        "u_bar": u_bar,
        "in_lambda": in_lambda_set(cov, sup, eps, rho),
        "covariance": cov,
        "support": sup,
    }


# ---------------------------------------------------------------------------
# Monte Carlo support statistics
# ---------------------------------------------------------------------------

def _appendix_covariance(B, dt):
    """The d x d matrix Q(B) of the unit-horizon support appendix; B is the
    (d-1)-dimensional auxiliary path, shape (..., G+1, d-1)."""
    daux = B.shape[-1]
    d = daux + 1
    left = B[..., :-1, :]
    Q = np.empty(B.shape[:-2] + (d, d))
    Q[..., :daux, :daux] = np.einsum("...si,...sj->...ij", left, left) * dt
    col = np.sum(left, axis=-2) * dt
    Q[..., daux, :daux] = col
    Q[..., :daux, daux] = col
    Q[..., daux, daux] = 1.0
    return Q


def _appendix_q(B):
    """q(B) = sum_i |B_1^i| + sum_{j != p} |int_0^1 B^j dB^p| on the
    auxiliary (d-1)-dimensional path."""
    daux = B.shape[-1]
    q = np.sum(np.abs(B[..., -1, :]), axis=-1)
    dw = np.diff(B, axis=-2)
    for p in range(daux):
        for j in range(daux):
            if j == p:
                continue
            q = q + np.abs(np.sum(B[..., :-1, j] * dw[..., p], axis=-1))
    return q


def support_statistics(d, eps_grid, rho, n_samples, seed, steps=256,
                       convention="p-block"):
    """Monte Carlo frequencies of the support events.

    Returns a dict with two row tables ("upsilon" for the unit-horizon
    auxiliary event, "lambda" for the sub-interval event Lambda_{rho,eps}),
    Wilson confidence intervals, and censoring-aware log-log slope fits.
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid or any(not 0.0 < e <= 1.0 for e in eps_grid):
        raise ValueError("eps values must lie in (0, 1]")
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    daux = d - 1
    hits_u = np.zeros(len(eps_grid), dtype=np.int64)
    hits_l = np.zeros(len(eps_grid), dtype=np.int64)

    def work(c, lo, hi):
        count = hi - lo
        hu = np.zeros(len(eps_grid), dtype=np.int64)
        hl = np.zeros(len(eps_grid), dtype=np.int64)
        if daux > 0:
            g = _mc.rng_for(seed, "support", c)
            dwa = g.standard_normal((count, steps, daux)) * math.sqrt(1.0 / steps)
            B = path_values_from_increments(dwa)
            Q = _appendix_covariance(B, 1.0 / steps)
            detq = np.linalg.det(Q)
            supb = np.max(np.linalg.norm(B, axis=-1), axis=-1)
            qb = _appendix_q(B)
            for k, eps in enumerate(eps_grid):
                hu[k] = np.sum((detq >= eps ** rho) & (supb <= eps ** (-rho))
                               & (qb <= eps))
        dwl = sample_increments(seed, count, d, 1.0, max(steps // d, 8),
                                stream="support", chunk_index=10_000 + c)
        W = path_values_from_increments(dwl)
        S = max(steps // d, 8)
        cov = covariance_from_values(W, d, S, 1.0)
        sup = support_from_values(W, d, S, 1.0, convention)
        for k, eps in enumerate(eps_grid):
            hl[k] = np.sum(in_lambda_set(cov, sup, eps, rho))
        return hu, hl

    for hu, hl in _mc.map_chunks(work, n_samples):
        hits_u += hu
        hits_l += hl

    def rows_for(hits):
        rows = []
        for eps, h in zip(eps_grid, hits.tolist()):
            lo_ci, hi_ci = _mc.wilson_interval(h, n_samples)
            rows.append({"epsilon": eps, "n": n_samples, "hits": h,
                         "p_hat": h / n_samples, "ci_lo": lo_ci, "ci_hi": hi_ci,
                         "censored": h == 0})
        return rows

    out = {"upsilon": rows_for(hits_u), "lambda": rows_for(hits_l)}
    for key in ("upsilon", "lambda"):
        live = [r for r in out[key] if not r["censored"]]
        if len(live) >= 2:
            slope, se, _ = _mc.loglog_slope([r["epsilon"] for r in live],
                                            [r["p_hat"] for r in live])
            out[key + "_slope"] = {"slope": slope, "se": se}
        else:
            out[key + "_slope"] = None
    return out


def detq_inverse_moments(p_values, n_samples, seed, d=2, steps=256):
    """Empirical E|det Q|^{-p} on the unit-horizon support covariance, with a
    half-sample split as a finiteness probe."""
    p_values = [float(p) for p in p_values]
    daux = d - 1
    sums = {p: [] for p in p_values}
    half1 = {p: [] for p in p_values}
    counts = []
    counts1 = []

    def work(c, lo, hi):
        count = hi - lo
        if daux == 0:
            detq = np.ones(count)
        else:
            g = _mc.rng_for(seed, "detq", c)
            dwa = g.standard_normal((count, steps, daux)) * math.sqrt(1.0 / steps)
            B = path_values_from_increments(dwa)
            detq = np.linalg.det(_appendix_covariance(B, 1.0 / steps))
        return lo, detq

    results = _mc.map_chunks(work, n_samples)
    cut = n_samples // 2
    for lo, detq in results:
        counts.append(detq.size)
        first = max(0, min(cut - lo, detq.size))
        counts1.append(first)
        for p in p_values:
            vals = detq ** (-p)
            sums[p].append(float(np.sum(vals)))
            half1[p].append(float(np.sum(vals[:first])))

    rows = []
    n1 = sum(counts1)
    n2 = n_samples - n1
    for p in p_values:
        total = math.fsum(sums[p])
        h1 = math.fsum(half1[p])
        rows.append({
            "p": p, "n": n_samples,
            "mean": total / n_samples,
            "half1": h1 / n1 if n1 else float("nan"),
            "half2": (total - h1) / n2 if n2 else float("nan"),
        })
    return rows
