"""Polynomial vector fields on R^+ x R^n with exact calculus.

Coefficients of the built-in models (and of user models declared in config
files) are polynomials in (t, x1..xn).  Representing them as explicit
monomial tables gives exact Jacobians, Hessians, time derivatives, Lie
brackets and directional derivatives, and provides the flat coefficient
arrays consumed by the compiled simulation kernel.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PolyScalar", "PolyMap", "bracket", "directional"]


class PolyScalar:
    """A polynomial R^+ x R^n -> R stored as {(tpow, xpows): coef}."""

    __slots__ = ("n", "terms")

    def __init__(self, n, terms=None):
        self.n = n
        self.terms = {}
        if terms:
            for key, c in terms.items():
                self._add_term(key, c)

    def _add_term(self, key, c):
        if c == 0.0:
            return
        tp, xp = key
        xp = tuple(int(p) for p in xp)
        if len(xp) != self.n:
            raise ValueError(f"power tuple has length {len(xp)}, expected {self.n}")
        key = (int(tp), xp)
        new = self.terms.get(key, 0.0) + c
        if new == 0.0:
            self.terms.pop(key, None)
        else:
            self.terms[key] = new

    @classmethod
    def constant(cls, n, c):
        return cls(n, {(0, (0,) * n): float(c)})

    @classmethod
    def coordinate(cls, n, i):
        """The monomial x_i (0-based i)."""
        xp = [0] * n
        xp[i] = 1
        return cls(n, {(0, tuple(xp)): 1.0})

    def copy(self):
        out = PolyScalar(self.n)
        out.terms = dict(self.terms)
        return out

    def __add__(self, other):
        out = self.copy()
        for key, c in other.terms.items():
            out._add_term(key, c)
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        out = PolyScalar(self.n)
        for key, v in self.terms.items():
            out._add_term(key, c * v)
        return out

    def __mul__(self, other):
        out = PolyScalar(self.n)
        for (tp1, xp1), c1 in self.terms.items():
            for (tp2, xp2), c2 in other.terms.items():
                xp = tuple(a + b for a, b in zip(xp1, xp2))
                out._add_term((tp1 + tp2, xp), c1 * c2)
        return out

    def diff_x(self, i):
        out = PolyScalar(self.n)
        for (tp, xp), c in self.terms.items():
            p = xp[i]
            if p > 0:
                nxp = list(xp)
                nxp[i] = p - 1
                out._add_term((tp, tuple(nxp)), c * p)
        return out

    def diff_t(self):
        out = PolyScalar(self.n)
        for (tp, xp), c in self.terms.items():
            if tp > 0:
                out._add_term((tp - 1, xp), c * tp)
        return out

    def tables(self):
        """Flat (coefs, tpows, xpows) arrays for fast evaluation."""
        if not self.terms:
            return (np.zeros(0), np.zeros(0, dtype=np.int64),
                    np.zeros((0, self.n), dtype=np.int64))
        keys = sorted(self.terms)
        coefs = np.array([self.terms[k] for k in keys], dtype=float)
        tpows = np.array([k[0] for k in keys], dtype=np.int64)
        xpows = np.array([k[1] for k in keys], dtype=np.int64)
        return coefs, tpows, xpows.reshape(len(keys), self.n)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        coefs, tpows, xpows = self.tables()
        if coefs.size == 0:
            return np.zeros(np.broadcast(np.asarray(t), x[..., 0]).shape)
        t = np.asarray(t, dtype=float)
        # (..., K, n) -> (..., K); integer powers keep this exact.  Overflow
        # of exploding states is deliberate: blow-ups are detected downstream.
        with np.errstate(over="ignore", invalid="ignore"):
            xmon = np.prod(x[..., None, :] ** xpows, axis=-1)
            tmon = t[..., None] ** tpows
            return np.sum(coefs * tmon * xmon, axis=-1)

    def max_degree(self):
        if not self.terms:
            return 0
        return max(tp + sum(xp) for (tp, xp) in self.terms)


class PolyMap:
    """A polynomial map R^+ x R^n -> R^n_out (componentwise PolyScalar)."""

    __slots__ = ("n", "components")

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("PolyMap needs at least one component")
        self.n = components[0].n
        self.components = components

    @classmethod
    def zero(cls, n, n_out=None):
        n_out = n if n_out is None else n_out
        return cls([PolyScalar(n) for _ in range(n_out)])

    @classmethod
    def from_rows(cls, n, rows):
        """Build from monomial rows [[coef, tpow, xpow_1..xpow_n], ...] per component."""
        comps = []
        for row_list in rows:
            p = PolyScalar(n)
            for row in row_list:
                if len(row) != n + 2:
                    raise ValueError(
                        f"monomial row must have {n + 2} entries [coef, tpow, xpows...], got {len(row)}")
                coef, tpow, xpows = row[0], row[1], row[2:]
                p._add_term((tpow, tuple(xpows)), float(coef))
            comps.append(p)
        return cls(comps)

    def to_rows(self):
        rows = []
        for comp in self.components:
            comp_rows = []
            for (tp, xp) in sorted(comp.terms):
                comp_rows.append([comp.terms[(tp, xp)], tp, *xp])
            rows.append(comp_rows)
        return rows

    @property
    def n_out(self):
        return len(self.components)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        vals = [c(t, x) for c in self.components]
        return np.stack(vals, axis=-1)

    def __add__(self, other):
        return PolyMap([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        return PolyMap([a - b for a, b in zip(self.components, other.components)])

    def scale(self, c):
        return PolyMap([comp.scale(c) for comp in self.components])

    def mul_scalar_poly(self, p):
        return PolyMap([comp * p for comp in self.components])

    def diff_t(self):
        return PolyMap([c.diff_t() for c in self.components])

    def jacobian_entry(self, a, i):
        """d(component a)/d(x_i), 0-based."""
        return self.components[a].diff_x(i)

    def jacobian(self, t, x):
        """Jacobian matrix evaluated at (t, x); shape (..., n_out, n)."""
        x = np.asarray(x, dtype=float)
        rows = []
        for a in range(self.n_out):
            rows.append(np.stack(
                [self.components[a].diff_x(i)(t, x) for i in range(self.n)], axis=-1))
        return np.stack(rows, axis=-2)

    def hessian(self, t, x):
        """Second spatial derivatives; shape (..., n_out, n, n)."""
        x = np.asarray(x, dtype=float)
        out = []
        for a in range(self.n_out):
            rows = []
            for i in range(self.n):
                di = self.components[a].diff_x(i)
                rows.append(np.stack([di.diff_x(j)(t, x) for j in range(self.n)], axis=-1))
            out.append(np.stack(rows, axis=-2))
        return np.stack(out, axis=-3)

    def max_degree(self):
        return max(c.max_degree() for c in self.components)

    def tables(self):
        """Per-component flat tables, for the compiled kernel."""
        return [c.tables() for c in self.components]


def directional(g, f):
    """Directional derivative of f along g: (d_g f)_a = sum_i g_i * d f_a / d x_i."""
    comps = []
    for a in range(f.n_out):
        acc = PolyScalar(f.n)
        for i in range(f.n):
            acc = acc + (g.components[i] * f.components[a].diff_x(i))
        comps.append(acc)
    return PolyMap(comps)


def bracket(f, g):
    """Lie bracket [f, g] = d_f g - d_g f (spatial variables only)."""
    return directional(f, g) - directional(g, f)
