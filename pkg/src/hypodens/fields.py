"""Vector-field models, Lie brackets and the anisotropic directional matrix.

The central object is the n x d^2 matrix A(t, x) whose columns are the
diffusion fields sigma_i and their first-order Lie brackets [sigma_i,
sigma_p], indexed by l(i, p) = (p-1)d + i (indices are 1-based, matching the
usual notation).  Scaling the sigma columns by sqrt(delta) and the bracket
columns by delta yields A_delta, whose induced norm

    |y|_{A_delta} = sqrt(<(A_delta A_delta^T)^{-1} y, y>)

is the metric in which small-time density estimates become isotropic.  All
norms are evaluated through the SVD of A_delta, never through an explicit
inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import _poly
from .errors import CapabilityError, DegenerateMatrixError, EvaluationError

RANK_TOL = 1e-9  # relative to the largest singular value
DEFAULT_H_FD = 1e-5


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorFieldModel:
    """Diffusion coefficients sigma_j(t, x), drift b(t, x) and derivatives.

    Callbacks are pure and broadcast over leading axes of x (shape (..., n)).
    Missing derivative callbacks fall back to order-2 central finite
    differences with step ``h_fd``.  Models built from polynomial tables
    (see :func:`model_from_tables` and the registry) carry exact derivatives
    of every order.
    """

    n: int
    d: int
    sigma_fn: Callable
    b_fn: Callable
    jac_sigma_fn: Optional[Callable] = None
    jac_b_fn: Optional[Callable] = None
    hess_sigma_fn: Optional[Callable] = None
    dt_sigma_fn: Optional[Callable] = None
    bounds_kappa: Optional[float] = None
    h_fd: float = DEFAULT_H_FD
    name: str = "custom"
    poly_sigma: Optional[tuple] = None   # tuple of PolyMap, one per driver
    poly_b: Optional[_poly.PolyMap] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # -- basic evaluation ---------------------------------------------------

    def sigma(self, j, t, x):
        """sigma_j(t, x) for 1-based j in 1..d; broadcasts over x."""
        if not 1 <= j <= self.d:
            raise IndexError(f"driver index {j} outside 1..{self.d}")
        return np.asarray(self.sigma_fn(j, t, np.asarray(x, dtype=float)), dtype=float)

    def b(self, t, x):
        return np.asarray(self.b_fn(t, np.asarray(x, dtype=float)), dtype=float)

    def sigma_all(self, t, x):
        """All diffusion fields stacked; shape (..., d, n)."""
        return np.stack([self.sigma(j, t, x) for j in range(1, self.d + 1)], axis=-2)

    # -- derivatives, exact or finite-difference -----------------------------

    def jac_sigma(self, j, t, x):
        """Spatial Jacobian of sigma_j; shape (..., n, n)."""
        if self.jac_sigma_fn is not None:
            return np.asarray(self.jac_sigma_fn(j, t, np.asarray(x, dtype=float)), dtype=float)
        return self._fd_jacobian(lambda y: self.sigma(j, t, y), x)

    def jac_b(self, t, x):
        if self.jac_b_fn is not None:
            return np.asarray(self.jac_b_fn(t, np.asarray(x, dtype=float)), dtype=float)
        return self._fd_jacobian(lambda y: self.b(t, y), x)

    def hess_sigma(self, j, t, x):
        """Second spatial derivatives of sigma_j; shape (..., n, n, n)."""
        if self.hess_sigma_fn is not None:
            return np.asarray(self.hess_sigma_fn(j, t, np.asarray(x, dtype=float)), dtype=float)
        return self._fd_hessian(lambda y: self.sigma(j, t, y), x)

    def dt_sigma(self, j, t, x):
        if self.dt_sigma_fn is not None:
            return np.asarray(self.dt_sigma_fn(j, t, np.asarray(x, dtype=float)), dtype=float)
        h = self.h_fd
        if t >= h:
            return (self.sigma(j, t + h, x) - self.sigma(j, t - h, x)) / (2.0 * h)
        # one-sided order-2 stencil near t = 0
        return (-3.0 * self.sigma(j, t, x) + 4.0 * self.sigma(j, t + h, x)
                - self.sigma(j, t + 2.0 * h, x)) / (2.0 * h)

    def _fd_jacobian(self, f, x):
        x = np.asarray(x, dtype=float)
        h = self.h_fd
        cols = []
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            cols.append((f(x + e) - f(x - e)) / (2.0 * h))
        return np.stack(cols, axis=-1)

    def _fd_hessian(self, f, x):
        x = np.asarray(x, dtype=float)
        h = self.h_fd
        n = self.n
        f0 = f(x)
        out = np.zeros(f0.shape + (n, n))
        for b in range(n):
            eb = np.zeros(n)
            eb[b] = h
            out[..., b, b] = (f(x + eb) - 2.0 * f0 + f(x - eb)) / h**2
            for c in range(b + 1, n):
                ec = np.zeros(n)
                ec[c] = h
                mixed = (f(x + eb + ec) - f(x + eb - ec)
                         - f(x - eb + ec) + f(x - eb - ec)) / (4.0 * h**2)
                out[..., b, c] = mixed
                out[..., c, b] = mixed
        return out

    # -- derived fields -------------------------------------------------------

    def dir_sigma(self, i, j, t, x):
        """Directional derivative d_{sigma_i} sigma_j = J(sigma_j) sigma_i."""
        jac = self.jac_sigma(j, t, x)
        si = self.sigma(i, t, x)
        return np.einsum("...ab,...b->...a", jac, si)

    def ito_drift(self, t, x):
        """Drift of the Ito form: b + (1/2) sum_j d_{sigma_j} sigma_j."""
        if self.is_polynomial:
            return self._poly_ito_drift()(t, x)
        acc = self.b(t, x)
        for j in range(1, self.d + 1):
            acc = acc + 0.5 * self.dir_sigma(j, j, t, x)
        return acc

    @property
    def is_polynomial(self):
        return self.poly_sigma is not None and self.poly_b is not None

    def _poly_ito_drift(self):
        if "ito_drift" not in self._cache:
            acc = self.poly_b
            for pm in self.poly_sigma:
                acc = acc + _poly.directional(pm, pm).scale(0.5)
            self._cache["ito_drift"] = acc
        return self._cache["ito_drift"]

    def poly_bracket(self, i, j):
        """[sigma_i, sigma_j] as a PolyMap (polynomial models only)."""
        if not self.is_polynomial:
            raise CapabilityError("polynomial coefficient tables unavailable")
        return _poly.bracket(self.poly_sigma[i - 1], self.poly_sigma[j - 1])

    def default_x0(self):
        return np.zeros(self.n)


def model_from_polymaps(sigmas, b, name="custom", bounds_kappa=None):
    """Wrap PolyMaps into a VectorFieldModel with exact derivative callbacks."""
    sigmas = tuple(sigmas)
    n = sigmas[0].n
    d = len(sigmas)

    def sigma_fn(j, t, x):
        return sigmas[j - 1](t, x)

    def jac_sigma_fn(j, t, x):
        return sigmas[j - 1].jacobian(t, x)

    def hess_sigma_fn(j, t, x):
        return sigmas[j - 1].hessian(t, x)

    def dt_sigma_fn(j, t, x):
        return sigmas[j - 1].diff_t()(t, x)

    return VectorFieldModel(
        n=n, d=d,
        sigma_fn=sigma_fn, b_fn=lambda t, x: b(t, x),
        jac_sigma_fn=jac_sigma_fn, jac_b_fn=lambda t, x: b.jacobian(t, x),
        hess_sigma_fn=hess_sigma_fn, dt_sigma_fn=dt_sigma_fn,
        bounds_kappa=bounds_kappa, name=name,
        poly_sigma=sigmas, poly_b=b)


# ---------------------------------------------------------------------------
# built-in model registry
# ---------------------------------------------------------------------------

def _heisenberg_sigmas():
    n = 3
    s1 = _poly.PolyMap([
        _poly.PolyScalar.constant(n, 1.0),
        _poly.PolyScalar(n),
        _poly.PolyScalar.coordinate(n, 1).scale(-0.5),
    ])
    s2 = _poly.PolyMap([
        _poly.PolyScalar(n),
        _poly.PolyScalar.constant(n, 1.0),
        _poly.PolyScalar.coordinate(n, 0).scale(0.5),
    ])
    return s1, s2


def _build_heisenberg():
    s1, s2 = _heisenberg_sigmas()
    return model_from_polymaps([s1, s2], _poly.PolyMap.zero(3), name="heisenberg")


def _build_heisenberg_t():
    # time-modulated variant (1 + t/2) sigma_j, exercising dt_sigma
    s1, s2 = _heisenberg_sigmas()
    tfac = _poly.PolyScalar(3, {(0, (0, 0, 0)): 1.0, (1, (0, 0, 0)): 0.5})
    return model_from_polymaps(
        [s1.mul_scalar_poly(tfac), s2.mul_scalar_poly(tfac)],
        _poly.PolyMap.zero(3), name="heisenberg-t")


def _build_grushin():
    n = 2
    s1 = _poly.PolyMap([_poly.PolyScalar.constant(n, 1.0), _poly.PolyScalar(n)])
    s2 = _poly.PolyMap([_poly.PolyScalar(n), _poly.PolyScalar.coordinate(n, 0)])
    return model_from_polymaps([s1, s2], _poly.PolyMap.zero(2), name="grushin")


def _build_elliptic():
    n = 2
    s1 = _poly.PolyMap([_poly.PolyScalar.constant(n, 1.0), _poly.PolyScalar(n)])
    s2 = _poly.PolyMap([_poly.PolyScalar(n), _poly.PolyScalar.constant(n, 1.0)])
    return model_from_polymaps([s1, s2], _poly.PolyMap.zero(2), name="elliptic")


def random_polynomial_model(rng, n=2, d=2, degree=1, scale=1.0, with_drift=False,
                            name="random"):
    """A model with uniform([-scale, scale]) coefficients on all monomials of
    total x-degree <= degree (time-independent)."""
    from itertools import combinations_with_replacement

    monos = [(0,) * n]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n), deg):
            xp = [0] * n
            for i in combo:
                xp[i] += 1
            monos.append(tuple(xp))

    def draw_map():
        comps = []
        for _ in range(n):
            terms = {(0, xp): rng.uniform(-scale, scale) for xp in monos}
            comps.append(_poly.PolyScalar(n, terms))
        return _poly.PolyMap(comps)

    sigmas = [draw_map() for _ in range(d)]
    b = draw_map() if with_drift else _poly.PolyMap.zero(n)
    return model_from_polymaps(sigmas, b, name=name)


_REGISTRY = {
    "heisenberg": _build_heisenberg,
    "heisenberg-t": _build_heisenberg_t,
    "grushin": _build_grushin,
    "elliptic": _build_elliptic,
}


def registered_models():
    return sorted(_REGISTRY)


def get_model(name):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(
            f"unknown model '{name}'; built-ins: {', '.join(registered_models())}") from None


def model_from_tables(n, d, sigma_rows, b_rows=None, name="custom", bounds_kappa=None):
    """Build a polynomial model from declarative monomial tables.

    ``sigma_rows[j-1]`` holds, per component, a list of monomial rows
    ``[coef, tpow, xpow_1, ..., xpow_n]``; ``b_rows`` likewise for the drift.
    """
    if len(sigma_rows) != d:
        raise ValueError(f"expected {d} sigma tables, got {len(sigma_rows)}")
    sigmas = [_poly.PolyMap.from_rows(n, rows) for rows in sigma_rows]
    for j, pm in enumerate(sigmas, start=1):
        if pm.n_out != n:
            raise ValueError(f"sigma_{j} has {pm.n_out} components, expected {n}")
    b = _poly.PolyMap.from_rows(n, b_rows) if b_rows else _poly.PolyMap.zero(n)
    return model_from_polymaps(sigmas, b, name=name, bounds_kappa=bounds_kappa)


# ---------------------------------------------------------------------------
# Lie brackets and the directional matrix
# ---------------------------------------------------------------------------

def col_index(i, p, d):
    """Column index l(i, p) = (p-1)d + i (all 1-based)."""
    if not (1 <= i <= d and 1 <= p <= d):
        raise IndexError(f"(i, p)=({i}, {p}) outside 1..{d}")
    return (p - 1) * d + i


def col_pair(l, d):
    """Inverse of col_index: the (i, p) with l = (p-1)d + i."""
    if not 1 <= l <= d * d:
        raise IndexError(f"column {l} outside 1..{d * d}")
    p, i = divmod(l - 1, d)
    return i + 1, p + 1


def _check_finite(value, label, t, x):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(label, t, x)
    return value


def lie_bracket(model, i, p, t, x):
    """[sigma_i, sigma_p](t, x) = d_{sigma_i} sigma_p - d_{sigma_p} sigma_i."""
    if not (1 <= i <= model.d and 1 <= p <= model.d):
        raise IndexError(f"(i, p)=({i}, {p}) outside 1..{model.d}")
    fwd = _check_finite(model.dir_sigma(i, p, t, x), f"d_sigma{i} sigma{p}", t, x)
    bwd = _check_finite(model.dir_sigma(p, i, t, x), f"d_sigma{p} sigma{i}", t, x)
    return fwd - bwd


@dataclass(frozen=True)
class DirectionalMatrix:
    """The n x m (m = d^2) matrix A(t, x) or its scaled variant A_delta."""

    entries: np.ndarray
    base_point: tuple
    d: int
    delta: Optional[float] = None   # None for the unscaled matrix
    _svd: tuple = field(default=None, compare=False, repr=False)

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def m(self):
        return self.entries.shape[1]

    def col_index(self, i, p):
        return col_index(i, p, self.d)

    def column(self, l):
        return self.entries[:, l - 1]

    def svd(self):
        """Full SVD (U, s, Vt), cached; s has length min(n, m)."""
        if self._svd is None:
            object.__setattr__(self, "_svd", np.linalg.svd(self.entries, full_matrices=True))
        return self._svd

    @property
    def singular_values(self):
        return self.svd()[1]

    def lambda_min(self):
        """Smallest singular value of the linear map onto R^n (0 if rank < n)."""
        s = self.singular_values
        return float(s[self.n - 1]) if self.m >= self.n else 0.0

    def lambda_max(self):
        s = self.singular_values
        return float(s[0]) if s.size else 0.0

    def require_full_rank(self, rank_tol=RANK_TOL):
        lam_max = self.lambda_max()
        lam_min = self.lambda_min()
        if lam_max <= 0.0 or lam_min <= rank_tol * lam_max:
            raise DegenerateMatrixError(lam_min, lam_max, rank_tol)


def directional_matrix(model, t, x):
    """Assemble A(t, x) with columns sigma_i (l(i,i)) and [sigma_i, sigma_p]."""
    d, n = model.d, model.n
    cols = np.zeros((n, d * d))
    for p in range(1, d + 1):
        for i in range(1, d + 1):
            l = col_index(i, p, d)
            if i == p:
                cols[:, l - 1] = _check_finite(model.sigma(i, t, x), f"sigma{i}", t, x)
            else:
                cols[:, l - 1] = lie_bracket(model, i, p, t, x)
    return DirectionalMatrix(entries=cols, base_point=(t, np.asarray(x, dtype=float)), d=d)


def hoermander_lambda(A):
    """lambda(t, x): smallest singular value of A; > 0 iff Hoermander holds."""
    return A.lambda_min()


def scale_matrix(A, delta):
    """A_delta = A D_delta: sqrt(delta) on sigma columns, delta on brackets."""
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    d = A.d
    factors = np.empty(A.m)
    for l in range(1, A.m + 1):
        i, p = col_pair(l, d)
        factors[l - 1] = np.sqrt(delta) if i == p else delta
    combined = delta if A.delta is None else A.delta * delta
    return DirectionalMatrix(entries=A.entries * factors, base_point=A.base_point,
                             d=d, delta=combined)


def aniso_norm(A_delta, y, rank_tol=RANK_TOL):
    """|y|_{A_delta} through the SVD; y broadcasts over leading axes."""
    A_delta.require_full_rank(rank_tol)
    U, s, _ = A_delta.svd()
    y = np.asarray(y, dtype=float)
    w = (y @ U) / s[: A_delta.n]
    return np.linalg.norm(w, axis=-1)


def dim_span_sigma(model, t, x):
    """Numerical rank of [sigma_1 ... sigma_d](t, x)."""
    mat = np.stack([model.sigma(j, t, x) for j in range(1, model.d + 1)], axis=-1)
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


# ---------------------------------------------------------------------------
# orthogonal extension Gamma_delta and the alpha factor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaExtension:
    """Gamma_delta: rows 1..n are A_delta, rows n+1..m an orthonormal basis
    of the orthogonal complement of the row space, plus its factorization
    Gamma = blockdiag(U, Id) blockdiag(Sbar, Id) V^T."""

    gamma: np.ndarray
    u: np.ndarray          # n x n, det +1
    sbar: np.ndarray       # singular values of A_delta, descending
    v: np.ndarray          # m x m orthogonal
    complement: np.ndarray  # (m - n) x m

    @property
    def n(self):
        return self.u.shape[0]

    @property
    def m(self):
        return self.gamma.shape[0]

    @property
    def alpha(self):
        return self.u * self.sbar

    @property
    def det_alpha(self):
        return float(np.prod(self.sbar))

    def solve(self, z):
        """Gamma^{-1} z through the factorization; z broadcasts over leading axes."""
        z = np.asarray(z, dtype=float)
        n = self.n
        w = z.copy()
        w[..., :n] = (z[..., :n] @ self.u) / self.sbar
        return w @ self.v.T

    def embed(self, a, z):
        """J_a(z): first n coords z, remaining coords <Gamma^i, a>."""
        z = np.asarray(z, dtype=float)
        tail = np.asarray(a, dtype=float) @ self.complement.T
        tail = np.broadcast_to(tail, z.shape[:-1] + (self.m - self.n,))
        return np.concatenate([z, tail], axis=-1)

    def gamma_norm(self, y):
        """|y|_{Gamma_delta} = |Gamma^{-1} y|."""
        return np.linalg.norm(self.solve(y), axis=-1)

    def alpha_inverse_apply(self, y):
        """alpha^{-1} y = Sbar^{-1} U^T y; equals |y|_{A_delta} in norm."""
        return (np.asarray(y, dtype=float) @ self.u) / self.sbar


def gamma_extension(A_delta, rank_tol=RANK_TOL):
    """Extend A_delta to the square matrix Gamma_delta of the block identity
    Gamma Gamma^T = blockdiag(A_delta A_delta^T, Id_{m-n})."""
    A_delta.require_full_rank(rank_tol)
    n, m = A_delta.n, A_delta.m
    U, s, Vt = A_delta.svd()
    U = U.copy()
    V = Vt.T.copy()
    if np.linalg.det(U) < 0.0:
        # keep A_delta = U Sbar V1^T while forcing U into SO(n)
        U[:, -1] *= -1.0
        V[:, n - 1] *= -1.0
    comp = V[:, n:].T.copy()
    # deterministic sign: first entry of nonnegligible size of each row positive
    for r in range(comp.shape[0]):
        row = comp[r]
        nz = np.nonzero(np.abs(row) > 1e-12 * np.max(np.abs(row)))[0]
        if nz.size and row[nz[0]] < 0.0:
            comp[r] *= -1.0
    V = np.concatenate([V[:, :n], comp.T], axis=1)
    gamma = np.concatenate([A_delta.entries, comp], axis=0)
    return GammaExtension(gamma=gamma, u=U, sbar=s[:n].copy(), v=V, complement=comp)


class AlphaFactor(NamedTuple):
    alpha: np.ndarray
    det_alpha: float


def alpha_factor(A_delta, rank_tol=RANK_TOL):
    """alpha = U Sbar with det(alpha) = sqrt(det A_delta A_delta^T) > 0.

    The inverse maps into isotropic coordinates: |alpha^{-1} y| = |y|_{A_delta}.
    """
    ext = gamma_extension(A_delta, rank_tol)
    return AlphaFactor(ext.alpha, ext.det_alpha)


# ---------------------------------------------------------------------------
# assumption diagnostics
# ---------------------------------------------------------------------------

def assumption2_diagnostic(model, x0, rank_tol=RANK_TOL):
    """lambda(0, x0) and whether the first-order Hoermander condition holds."""
    A = directional_matrix(model, 0.0, x0)
    lam = hoermander_lambda(A)
    return lam, bool(lam > rank_tol * max(A.lambda_max(), 1.0))


def assumption1_diagnostic(model, t_values, x_values):
    """Empirical sublinearity ratios behind the growth assumption.

    Returns the max over samples of (sum_j |sigma_j| + |b|) / (1 + |x|) and of
    the total Jacobian norm; when the model declares ``bounds_kappa``, a flag
    indicates whether the measured ratios stay below it.
    """
    growth = 0.0
    deriv = 0.0
    for t in np.atleast_1d(t_values):
        for x in np.atleast_2d(x_values):
            tot = np.linalg.norm(model.b(t, x))
            dtot = np.linalg.norm(model.jac_b(t, x))
            for j in range(1, model.d + 1):
                tot += np.linalg.norm(model.sigma(j, t, x))
                dtot += np.linalg.norm(model.jac_sigma(j, t, x))
            growth = max(growth, tot / (1.0 + np.linalg.norm(x)))
            deriv = max(deriv, dtot)
    ok = None
    if model.bounds_kappa is not None:
        ok = bool(growth <= model.bounds_kappa and deriv <= model.bounds_kappa)
    return {"growth_ratio": growth, "derivative_norm": deriv, "within_kappa": ok}
