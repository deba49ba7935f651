"""Stratonovich SDE integration, tangent flows and the reduced Malliavin
covariance.

The Stratonovich equation dX = sum_j sigma_j(t, X) o dW^j + b dt is integrated
as the Ito equation with corrected drift b + (1/2) sum_j d_{sigma_j} sigma_j
(Euler-Maruyama, strong order 1/2).  The tangent flow Y = dX/dx0 and its
inverse Z use the same analytic correction, which for the matrix equations
brings in second spatial derivatives of sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _mc, _poly
from .errors import BlowUpError, CapabilityError, FlowAccuracyError
from .paths import BrownianGrid, path_values_from_increments, sample_increments

DEFAULT_FLOW_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class SdeSolution:
    """States (and optionally flows) on the integration grid.

    x_path has shape (..., G+1, n); y_path/z_path, when kept, have shape
    (..., G+1, n, n) and satisfy Z_t Y_t = Id within flow_tol.
    """

    delta: float
    x_path: np.ndarray
    y_path: Optional[np.ndarray] = None
    z_path: Optional[np.ndarray] = None

    @property
    def x_end(self):
        return self.x_path[..., -1, :]

    def flow_defect(self):
        if self.y_path is None or self.z_path is None:
            raise CapabilityError("flows were not integrated")
        zy = np.einsum("...ab,...bc->...ac", self.z_path, self.y_path)
        eye = np.eye(zy.shape[-1])
        return np.max(np.abs(zy - eye))


def _drift_correction_matrices(model, t, x):
    """dY/dt and dZ/dt correction matrices of the Ito-form flow equations."""
    n = model.n
    jac_b = model.jac_b(t, x)
    corr_y = np.array(jac_b, dtype=float, copy=True)
    corr_z = -np.array(jac_b, dtype=float, copy=True)
    for j in range(1, model.d + 1):
        M = model.jac_sigma(j, t, x)
        H = model.hess_sigma(j, t, x)
        sig = model.sigma(j, t, x)
        dirM = np.einsum("...abc,...c->...ab", H, sig)
        MM = np.einsum("...ab,...bc->...ac", M, M)
        corr_y = corr_y + 0.5 * (dirM + MM)
        corr_z = corr_z + 0.5 * (MM - dirM)
    return corr_y, corr_z


def _integrate_core(model, x0, values, delta, with_flows=False, keep_paths=True,
                    quadrature=False):
    """Shared Euler-Maruyama loop; values has shape (..., G+1, d)."""
    values = np.asarray(values, dtype=float)
    n = model.n
    G = values.shape[-2] - 1
    h = delta / G
    lead = values.shape[:-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), lead + (n,)).copy()
    eye = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    y = eye.copy() if with_flows else None
    z = eye.copy() if with_flows else None
    xs = np.empty(lead + (G + 1, n)) if keep_paths else None
    ys = np.empty(lead + (G + 1, n, n)) if keep_paths and with_flows else None
    zs = np.empty(lead + (G + 1, n, n)) if keep_paths and with_flows else None
    quad = np.zeros(lead + (n, n)) if quadrature else None

    def quad_term(t, xc, zc):
        sig = np.stack([model.sigma(j, t, xc) for j in range(1, model.d + 1)], axis=-1)
        zsig = np.einsum("...ab,...bj->...aj", zc, sig)
        return np.einsum("...aj,...bj->...ab", zsig, zsig)

    if keep_paths:
        xs[..., 0, :] = x
        if with_flows:
            ys[..., 0, :, :] = y
            zs[..., 0, :, :] = z
    if quadrature:
        quad += 0.5 * h * quad_term(0.0, x, z)

    t = 0.0
    for s in range(G):
        dws = values[..., s + 1, :] - values[..., s, :]
        drift = model.ito_drift(t, x)
        sig = model.sigma_all(t, x)                      # (..., d, n)
        x_new = x + drift * h + np.einsum("...jn,...j->...n", sig, dws)
        if with_flows:
            corr_y, corr_z = _drift_correction_matrices(model, t, x)
            dy = np.einsum("...ab,...bc->...ac", corr_y, y) * h
            dz = np.einsum("...ab,...bc->...ac", z, corr_z) * h
            for j in range(1, model.d + 1):
                M = model.jac_sigma(j, t, x)
                w = dws[..., j - 1][..., None, None]
                dy = dy + np.einsum("...ab,...bc->...ac", M, y) * w
                dz = dz - np.einsum("...ab,...bc->...ac", z, M) * w
            y = y + dy
            z = z + dz
        x = x_new
        t += h
        if keep_paths:
            xs[..., s + 1, :] = x
            if with_flows:
                ys[..., s + 1, :, :] = y
                zs[..., s + 1, :, :] = z
        if quadrature:
            weight = 0.5 if s == G - 1 else 1.0
            quad += weight * h * quad_term(t, x, z)
    return x, y, z, xs, ys, zs, quad


def _first_bad_index(xs):
    bad = ~np.all(np.isfinite(xs), axis=-1)
    idx = np.argmax(bad, axis=-1)
    return int(idx) if np.any(bad) else None


def _warn_growth_violation(model, xs, delta):
    """Sublinearity spot check on visited states (warning, never an error)."""
    if model.bounds_kappa is None or xs is None:
        return
    import warnings

    from .fields import assumption1_diagnostic

    idx = np.linspace(0, xs.shape[-2] - 1, 5).astype(int)
    states = xs[..., idx, :].reshape(-1, xs.shape[-1])[:64]
    diag = assumption1_diagnostic(model, [0.0, delta], states)
    if diag["within_kappa"] is False:
        warnings.warn(
            f"growth diagnostic exceeded kappa={model.bounds_kappa} on the "
            f"visited region (ratio {diag['growth_ratio']:.3g})",
            RuntimeWarning, stacklevel=3)


def integrate(model, x0, path, keep_path=True):
    """Integrate the SDE along a BrownianGrid (or batch of path values)."""
    values = path.values if isinstance(path, BrownianGrid) else np.asarray(path)
    delta = path.delta if isinstance(path, BrownianGrid) else None
    if delta is None:
        raise ValueError("raw path arrays need integrate_values with explicit delta")
    x, _, _, xs, _, _, _ = _integrate_core(model, x0, values, delta,
                                           keep_paths=keep_path)
    if not np.all(np.isfinite(x)):
        raise BlowUpError(_first_bad_index(xs if xs is not None else x[..., None, :]))
    _warn_growth_violation(model, xs, delta)
    return SdeSolution(delta=delta, x_path=xs if keep_path else x[..., None, :])


def integrate_values(model, x0, values, delta, keep_paths=False):
    """Batch endpoint integration on raw (..., G+1, d) path values.

    Returns (endpoints, finite_mask) without raising on isolated blow-ups.
    """
    x, _, _, xs, _, _, _ = _integrate_core(model, x0, values, delta,
                                           keep_paths=keep_paths)
    finite = np.all(np.isfinite(x), axis=-1)
    return (x, xs, finite) if keep_paths else (x, finite)


def tangent_flows(model, x0, path, flow_tol=DEFAULT_FLOW_TOL):
    """Integrate the tangent flow Y and its inverse Z; checks Z_t Y_t = Id."""
    values = path.values if isinstance(path, BrownianGrid) else np.asarray(path)
    delta = path.delta
    _, _, _, xs, ys, zs, _ = _integrate_core(model, x0, values, delta,
                                             with_flows=True, keep_paths=True)
    sol = SdeSolution(delta=delta, x_path=xs, y_path=ys, z_path=zs)
    defect = sol.flow_defect()
    if defect > flow_tol:
        raise FlowAccuracyError(defect, flow_tol)
    return sol


def reduced_malliavin_covariance(model, x0, path, delta=None, gamma_ext=None):
    """gamma_bar_F = alpha^{-1} (int_0^delta Z sigma sigma^T Z^T ds) alpha^{-T}.

    gamma_ext is the GammaExtension of A_delta(0, x0) supplying the alpha
    factorization.  Returns (gamma_bar, lambda_min).
    """
    from .fields import directional_matrix, gamma_extension, scale_matrix

    values = path.values if isinstance(path, BrownianGrid) else np.asarray(path)
    if delta is None:
        delta = path.delta
    if gamma_ext is None:
        A = directional_matrix(model, 0.0, x0)
        gamma_ext = gamma_extension(scale_matrix(A, delta))
    _, _, _, _, _, _, quad = _integrate_core(model, x0, values, delta,
                                             with_flows=True, keep_paths=False,
                                             quadrature=True)
    u, sbar = gamma_ext.u, gamma_ext.sbar
    w = np.einsum("ba,...bc->...ac", u, quad) / sbar[:, None]
    gamma_bar = (w @ u) / sbar[None, :]
    gamma_bar = 0.5 * (gamma_bar + np.swapaxes(gamma_bar, -1, -2))
    lam_min = np.linalg.eigvalsh(gamma_bar)[..., 0]
    return gamma_bar, lam_min


def malliavin_spectrum(model, x0, delta, n_paths, seed, steps_per_sub=256,
                       flow_tol=None):
    """lambda_*(gamma_bar_F) samples over seeded paths (chunked, reproducible)."""
    from .fields import directional_matrix, gamma_extension, scale_matrix

    A = directional_matrix(model, 0.0, x0)
    ext = gamma_extension(scale_matrix(A, delta))

    def work(c, lo, hi):
        dw = sample_increments(seed, hi - lo, model.d, delta, steps_per_sub,
                               stream="covariance", chunk_index=c)
        values = path_values_from_increments(dw)
        _, lam = reduced_malliavin_covariance(model, x0, values, delta, ext)
        return lam

    parts = _mc.map_chunks(work, n_paths)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# representation identity for Z_t phi(t, X_t)
# ---------------------------------------------------------------------------

def _resolve_phi(model, phi):
    """phi is ('sigma', j) or ('bracket', j, l); returns a PolyMap."""
    if not model.is_polynomial:
        raise CapabilityError("representation check needs polynomial tables "
                              "for the bracket chain")
    kind = phi[0]
    if kind == "sigma":
        return model.poly_sigma[phi[1] - 1]
    if kind == "bracket":
        return model.poly_bracket(phi[1], phi[2])
    raise ValueError(f"unknown phi spec {phi!r}")


def ito_representation_check(model, x0, path, phi, delta=None, reduce="max"):
    """Residual of Z_t phi(t, X_t) against its stochastic representation.

    The right-hand side integrates Z_s [sigma_k, phi] dW^k (Ito, left point)
    plus the drift chain [b, phi] + (1/2) sum_k [sigma_k, [sigma_k, phi]]
    + dphi/dt; the sup-norm residual decays like the square root of the step.
    reduce="per-path" returns one sup-norm residual per path of a batch.
    """
    pm = _resolve_phi(model, phi)
    brackets = [_poly.bracket(model.poly_sigma[k], pm) for k in range(model.d)]
    drift_pm = _poly.bracket(model.poly_b, pm)
    for k in range(model.d):
        drift_pm = drift_pm + _poly.bracket(model.poly_sigma[k], brackets[k]).scale(0.5)
    drift_pm = drift_pm + pm.diff_t()

    values = path.values if isinstance(path, BrownianGrid) else np.asarray(path)
    if isinstance(path, BrownianGrid):
        delta = path.delta
    elif delta is None:
        raise ValueError("raw path values need an explicit delta")
    _, _, _, xs, _, zs, _ = _integrate_core(model, x0, values, delta,
                                            with_flows=True, keep_paths=True)
    G = values.shape[-2] - 1
    h = delta / G
    times = np.linspace(0.0, delta, G + 1)
    lead = values.shape[:-2]
    n = model.n

    lhs = np.einsum("...gab,...gb->...ga", zs, pm(times, xs))
    rhs = np.empty(lead + (G + 1, n))
    phi0 = pm(0.0, np.asarray(x0, dtype=float))
    acc = np.broadcast_to(phi0, lead + (n,)).copy()
    rhs[..., 0, :] = acc
    for s in range(G):
        t = times[s]
        xcur = xs[..., s, :]
        zcur = zs[..., s, :, :]
        term = np.einsum("...ab,...b->...a", zcur, drift_pm(t, xcur)) * h
        dws = values[..., s + 1, :] - values[..., s, :]
        for k in range(model.d):
            zbr = np.einsum("...ab,...b->...a", zcur, brackets[k](t, xcur))
            term = term + zbr * dws[..., k][..., None]
        acc = acc + term
        rhs[..., s + 1, :] = acc
    residual = np.linalg.norm(lhs - rhs, axis=-1)
    if reduce == "per-path":
        return residual.max(axis=-1)
    return float(residual.max())
