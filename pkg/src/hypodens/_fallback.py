"""Pure-numpy simulation kernels (fallback when the extension is absent).

The compiled and the numpy kernel share one packed-table format and the same
operation order per step, so their outputs agree to floating-point roundoff.
Paths are vectorized across the batch axis here; the compiled kernel loops
per path in C.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PackedTables:
    """Flat monomial tables for (ito_drift, sigma_1..sigma_d) x components."""

    n: int
    d: int
    coefs: np.ndarray     # (T,) float64
    tpows: np.ndarray     # (T,) int32
    xpows: np.ndarray     # (T, n) int32
    offsets: np.ndarray   # ((d+1)*n + 1,) int32, row (f, a) at f*n + a


def pack_model(model):
    """Pack a polynomial model's Ito-form coefficients for the kernels."""
    if not model.is_polynomial:
        raise ValueError("packed tables require a polynomial model")
    n, d = model.n, model.d
    fields = [model._poly_ito_drift()] + list(model.poly_sigma)
    coefs, tpows, xpows, offsets = [], [], [], [0]
    for pm in fields:
        for comp_tables in pm.tables():
            c, tp, xp = comp_tables
            coefs.append(c)
            tpows.append(tp)
            xpows.append(xp)
            offsets.append(offsets[-1] + len(c))
    return PackedTables(
        n=n, d=d,
        coefs=np.concatenate(coefs) if coefs else np.zeros(0),
        tpows=np.concatenate(tpows).astype(np.int32),
        xpows=np.concatenate(xpows).astype(np.int32).reshape(-1, n),
        offsets=np.asarray(offsets, dtype=np.int32))


def _eval_component(packed, idx, t, x):
    """Evaluate one packed field component at scalar t, batch x (B, n)."""
    lo, hi = packed.offsets[idx], packed.offsets[idx + 1]
    acc = np.zeros(x.shape[0])
    for k in range(lo, hi):
        term = packed.coefs[k] * t ** int(packed.tpows[k])
        for i in range(packed.n):
            p = int(packed.xpows[k, i])
            if p == 1:
                term = term * x[:, i]
            elif p > 1:
                term = term * x[:, i] ** p
        acc = acc + term
    return acc


def sde_endpoints(dw, x0, delta, packed):
    """Euler-Maruyama endpoints for the Ito form; dw has shape (B, steps, d)."""
    B, n_steps, d = dw.shape
    n = packed.n
    h = delta / n_steps
    x = np.tile(np.asarray(x0, dtype=float), (B, 1))
    t = 0.0
    for s in range(n_steps):
        upd = np.empty((B, n))
        for a in range(n):
            upd[:, a] = _eval_component(packed, a, t, x) * h
        for j in range(d):
            dwj = dw[:, s, j]
            for a in range(n):
                idx = (1 + j) * n + a
                if packed.offsets[idx] != packed.offsets[idx + 1]:
                    upd[:, a] += _eval_component(packed, idx, t, x) * dwj
        x = x + upd
        t += h
    return x
