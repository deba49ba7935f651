"""The acceptance suite: twelve verification criteria run at full protocol size.

Each criterion function returns a CriterionResult with the measured values,
the target, and pass/fail.  `run_acceptance` executes all of them (sharing
endpoint simulations where protocols overlap) and is what both the CLI
`verify` subcommand and tests/test_acceptance.py drive.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _mc, decomp, density, fields, paths, sde

ACCEPT_SEED = 7101
DELTA_GRID = (0.02, 0.04, 0.08, 0.12, 0.2)
COV_DELTA_GRID = (0.01, 0.05, 0.1, 0.2)
N_PATHS_DENSITY = 200_000
STEPS = 256
LAMBDA_Q05_FLOOR = 0.02  # measured ~0.049 on the Heisenberg model, margin 2.5x


@dataclass
class CriterionResult:
    ident: int
    title: str
    passed: bool
    measured: str
    expected: str
    runtime_s: float = 0.0
    details: dict = dc_field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} criterion {self.ident:2d} | {self.title} | "
                f"measured: {self.measured} | expected: {self.expected}")


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        result.runtime_s = time.perf_counter() - t0
        return result
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# criteria 1-3: diagonal exponents
# ---------------------------------------------------------------------------

def _diagonal_criterion(ident, model_name, expected, tol, seed, cache, n_paths):
    model = fields.get_model(model_name)
    x0 = model.default_x0()
    res = density.diagonal_exponent(model, x0, list(DELTA_GRID), n_paths, seed,
                                    steps_per_sub=STEPS, endpoint_cache=cache)
    slope = res["slope"]
    ok = slope is not None and abs(slope - expected) <= tol
    return CriterionResult(
        ident, f"diagonal exponent, {model_name}", ok,
        f"slope={slope:.4f}" if slope is not None else "censored",
        f"{expected:+.1f} +- {tol}", details=res)


@_timed
def criterion_1(seed=ACCEPT_SEED, cache=None, n_paths=N_PATHS_DENSITY):
    return _diagonal_criterion(1, "heisenberg", -2.0, 0.15, seed, cache, n_paths)


@_timed
def criterion_2(seed=ACCEPT_SEED, cache=None, n_paths=N_PATHS_DENSITY):
    return _diagonal_criterion(2, "grushin", -1.5, 0.15, seed, cache, n_paths)


@_timed
def criterion_3(seed=ACCEPT_SEED, cache=None, n_paths=N_PATHS_DENSITY):
    return _diagonal_criterion(3, "elliptic", -1.0, 0.10, seed, cache, n_paths)


# ---------------------------------------------------------------------------
# criterion 4: key-decomposition residual over random models
# ---------------------------------------------------------------------------

@_timed
def criterion_4(seed=ACCEPT_SEED, n_models=1000, delta=0.05, margin=1.5):
    rng = np.random.default_rng(seed)
    res_fine = np.empty(n_models)
    res_coarse = np.empty(n_models)
    for k in range(n_models):
        model = fields.random_polynomial_model(rng, n=2, d=2, degree=1)
        x0 = np.zeros(2)
        A = fields.directional_matrix(model, 0.0, x0)
        dw = paths.sample_increments(seed + 1, 1, 2, delta, 1024,
                                     stream="decomp", chunk_index=k)
        vf = paths.path_values_from_increments(dw)
        vc = vf[:, ::4, :]
        bf = decomp.taylor_principal(model, x0, vf, delta)
        bc = decomp.taylor_principal(model, x0, vc, delta)
        res_fine[k] = decomp.verify_key_decomposition(bf, A)[0]
        res_coarse[k] = decomp.verify_key_decomposition(bc, A)[0]

    rms_ratio = float(np.sqrt(np.mean(res_coarse ** 2) / np.mean(res_fine ** 2)))
    # envelope C h^(1/2) delta fitted on the first half (fine grid), applied
    # to the second half on the coarse grid with the stated margin
    half = n_models // 2
    h_fine, h_coarse = 1.0 / 1024.0, 1.0 / 256.0
    c_fit = float(np.max(res_fine[:half]) / (math.sqrt(h_fine) * delta))
    envelope = margin * c_fit * math.sqrt(h_coarse) * delta
    max_coarse = float(np.max(res_coarse[half:]))
    ok_env = max_coarse <= envelope
    ok_ratio = abs(rms_ratio - 2.0) <= 0.3
    return CriterionResult(
        4, "key-decomposition residual (random models)", ok_env and ok_ratio,
        f"max={max_coarse:.3e} vs envelope={envelope:.3e}, ratio={rms_ratio:.3f}",
        "max within fitted C h^(1/2) delta; RMS ratio 2.0 +- 0.3",
        details={"c_fit": c_fit, "rms_ratio": rms_ratio,
                 "max_coarse": max_coarse, "envelope": envelope})


# ---------------------------------------------------------------------------
# criterion 5: remainder scaling
# ---------------------------------------------------------------------------

@_timed
def criterion_5(seed=ACCEPT_SEED, n_paths=10_000):
    model = fields.get_model("heisenberg")
    res = decomp.remainder_scaling(model, np.zeros(3), list(DELTA_GRID),
                                   n_paths, seed, steps_per_sub=STEPS)
    slope = res["slope"]
    ok = slope is not None and abs(slope - 1.5) <= 0.2
    rms_max = max(r["rms"] for r in res["rows"])
    measured = (f"slope={slope:.4f}, max RMS={rms_max:.3e}"
                if slope is not None else f"degenerate (max RMS={rms_max:.3e})")
    return CriterionResult(
        5, "remainder scaling, heisenberg", ok, measured, "slope 1.5 +- 0.2",
        details=res)


# ---------------------------------------------------------------------------
# criterion 6: exact identities
# ---------------------------------------------------------------------------

def _check(checks, name, ok):
    checks.append((name, bool(ok)))


@_timed
def criterion_6(seed=ACCEPT_SEED, cases=1000):
    rng = np.random.default_rng(seed + 6)
    checks = []
    tol = 1e-10

    # randomized matrix-identity block
    worst = {k: 0.0 for k in ("norm3_lo", "norm3_hi", "new7", "new9a", "p1",
                              "p2", "p3", "antisym")}
    n_models = 50
    per_model = max(1, cases // n_models)
    for _ in range(n_models):
        n = int(rng.integers(2, 4))
        d = int(rng.integers(2, 4))
        model = fields.random_polynomial_model(rng, n=n, d=d, degree=1)
        x = rng.normal(size=n)
        t = float(rng.uniform(0.0, 0.5))
        A = fields.directional_matrix(model, t, x)
        if A.lambda_min() <= 1e-6 * max(A.lambda_max(), 1.0):
            continue
        lam_lo, lam_hi = A.lambda_min(), A.lambda_max()
        for xa in rng.normal(size=(6, n)):
            for i in range(1, d + 1):
                for p in range(1, d + 1):
                    anti = fields.lie_bracket(model, i, p, t, xa) \
                        + fields.lie_bracket(model, p, i, t, xa)
                    worst["antisym"] = max(worst["antisym"], np.abs(anti).max())
        for _ in range(per_model):
            delta = float(rng.uniform(0.01, 0.5))
            Ad = fields.scale_matrix(A, delta)
            ext = fields.gamma_extension(Ad)
            y = rng.normal(size=n)
            ny = np.linalg.norm(y)
            nad = fields.aniso_norm(Ad, y)
            worst["norm3_lo"] = max(worst["norm3_lo"],
                                    ny / (math.sqrt(delta) * lam_hi) - nad)
            worst["norm3_hi"] = max(worst["norm3_hi"], nad - ny / (delta * lam_lo))
            gg = ext.gamma @ ext.gamma.T
            block = np.zeros_like(gg)
            block[:n, :n] = Ad.entries @ Ad.entries.T
            block[n:, n:] = np.eye(Ad.m - n)
            worst["new7"] = max(worst["new7"], np.abs(gg - block).max())
            z = rng.normal(size=n)
            j0z = np.concatenate([z, np.zeros(Ad.m - n)])
            worst["new9a"] = max(worst["new9a"],
                                 abs(ext.gamma_norm(j0z) - fields.aniso_norm(Ad, z)))
            worst["p1"] = max(worst["p1"],
                              abs(np.linalg.norm(ext.alpha_inverse_apply(y))
                                  - fields.aniso_norm(Ad, y)))
            v = rng.normal(size=n)
            v /= np.linalg.norm(v)
            proj = np.abs((np.linalg.solve(ext.alpha.T, v)) @ Ad.entries)
            worst["p2"] = max(worst["p2"], 1.0 / Ad.m - proj.max())
            for j in range(1, d + 1):
                val = math.sqrt(delta) * np.linalg.norm(
                    ext.alpha_inverse_apply(model.sigma(j, 0.0, x)))
                worst["p3"] = max(worst["p3"], val - 1.0)

    _check(checks, "Norm3 sandwich", worst["norm3_lo"] <= tol and worst["norm3_hi"] <= tol)
    _check(checks, "New7 block identity", worst["new7"] <= tol)
    _check(checks, "New9a embedding norm", worst["new9a"] <= tol)
    _check(checks, "p1 alpha norm", worst["p1"] <= tol)
    _check(checks, "p2 column lower bound", worst["p2"] <= tol)
    _check(checks, "p3 scaled column bound", worst["p3"] <= tol)
    _check(checks, "bracket antisymmetry", worst["antisym"] <= 1e-12)

    # CB for the Heisenberg model: det alpha = sqrt(2) delta^2
    cb_worst = 0.0
    heis = fields.get_model("heisenberg")
    Ah = fields.directional_matrix(heis, 0.0, np.zeros(3))
    for delta in np.linspace(0.01, 0.5, 20):
        det = fields.alpha_factor(fields.scale_matrix(Ah, float(delta))).det_alpha
        cb_worst = max(cb_worst, abs(det - math.sqrt(2.0) * delta ** 2)
                       / (math.sqrt(2.0) * delta ** 2))
    _check(checks, "CB det alpha heisenberg", cb_worst <= tol)

    # covariance identities on sampled paths
    dw = paths.sample_increments(seed + 61, max(cases, 1000), 3, 0.08, 64)
    W = paths.path_values_from_increments(dw)
    cov = paths.covariance_from_values(W, 3, 64, 0.08)
    diag_vals = np.stack([cov.blocks[:, p, p, p] for p in range(3)], axis=-1)
    _check(checks, "Qp diagonal exact 1/d", np.abs(diag_vals - 1.0 / 3.0).max() == 0.0)
    lam_lo_q, lam_hi_q = cov.eigen_extremes()
    fro = cov.frobenius_scaled
    _check(checks, "complambdanorm",
           np.all(lam_hi_q / math.sqrt(9.0) <= fro + 1e-12)
           and np.all(fro <= lam_hi_q + 1e-12))
    detprod = np.abs(cov.det - np.prod(np.linalg.det(cov.blocks), axis=-1))
    _check(checks, "det Q product", detprod.max() <= 1e-10)

    # mollifier piecewise values and the log-weight spot check:
    # sup_x |ln psi_a|^p psi_a equals max_t t^p e^-t = p^p e^-p for every a,
    # so the C/a^p bound holds on a <= 2 with C_p = (2p/e)^p (margin 1.05)
    xs = np.linspace(-3.0, 3.0, 4001)
    ok_piecewise = True
    for a in (0.5, 1.0, 2.0):
        psi = paths.mollifier(a, xs)
        ok_piecewise &= bool(np.all(psi[np.abs(xs) <= a] == 1.0))
        ok_piecewise &= bool(np.all(psi[np.abs(xs) >= 2.0 * a] == 0.0))
        mid = (np.abs(xs) > a) & (np.abs(xs) < 2.0 * a)
        ok_piecewise &= bool(np.all(psi[mid] < 1.0))
        # strict positivity checked away from the edge, where the exact value
        # underflows float64
        inner = (np.abs(xs) > a) & (np.abs(xs) <= 1.9 * a)
        ok_piecewise &= bool(np.all(psi[inner] > 0.0))
    _check(checks, "mollifier piecewise", ok_piecewise)
    ok_boundpsi = True
    for p_exp in (1, 2, 4):
        c_p = 1.05 * (2.0 * p_exp / math.e) ** p_exp
        for a in (0.5, 1.0, 2.0):
            grid = np.linspace(-2.0 * a, 2.0 * a, 20001)
            psi = paths.mollifier(a, grid)
            pos = psi > 0.0
            sup = np.max(np.abs(np.log(psi[pos])) ** p_exp * psi[pos])
            ok_boundpsi &= bool(sup <= c_p / a ** p_exp)
    _check(checks, "boundpsi spot check", ok_boundpsi)

    failed = [name for name, ok in checks if not ok]
    return CriterionResult(
        6, "exact identity suite", not failed,
        f"{len(checks) - len(failed)}/{len(checks)} identity groups hold"
        + (f"; failed: {failed}" if failed else ""),
        "all identity groups within stated tolerances",
        details={"checks": checks, "worst": worst})


# ---------------------------------------------------------------------------
# criterion 7: local inversion
# ---------------------------------------------------------------------------

@_timed
def criterion_7(seed=ACCEPT_SEED, cases=1000):
    rng = np.random.default_rng(seed + 7)
    worst_phi = 0.0
    worst_estinv = 0.0
    worst_root = 0.0
    count = 0
    for m in (1, 2, 4):
        for _ in range(cases):
            L = rng.normal(size=(m, m)) * 0.1
            if np.linalg.norm(L, 2) > 0.5:
                continue
            H = rng.normal(size=(m, m, m)) * 0.5
            em = decomp.EtaMap(L, H)
            h = em.h_eta()
            y = rng.normal(size=m)
            y *= rng.uniform(0.0, 0.5) * h / max(np.linalg.norm(y), 1e-300)
            theta = decomp.local_inverse(em, y)
            count += 1
            phi = theta + em(theta)
            worst_phi = max(worst_phi, float(np.linalg.norm(phi - y)))
            ny, nt = np.linalg.norm(y), np.linalg.norm(theta)
            worst_estinv = max(worst_estinv, 0.25 * nt - ny, ny - 4.0 * nt)
    # 1D closed form: eta(t) = q/2 t^2
    for _ in range(cases):
        q = rng.uniform(-2.0, 2.0)
        if abs(q) < 1e-3:
            continue
        em1 = decomp.EtaMap(np.zeros((1, 1)), np.array([[[q]]]))
        y = rng.uniform(-0.5, 0.5) * em1.h_eta()
        theta = decomp.local_inverse(em1, np.array([y]))[0]
        closed = (-1.0 + math.sqrt(1.0 + 2.0 * q * y)) / q
        worst_root = max(worst_root, abs(theta - closed))
    ok = worst_phi <= 1e-9 and worst_estinv <= 1e-12 and worst_root <= 1e-10
    return CriterionResult(
        7, "local inversion (quadratic maps)", ok,
        f"|Phi(theta)-y|<= {worst_phi:.2e}, estinv slack {worst_estinv:.2e}, "
        f"1D root err {worst_root:.2e} ({count} cases)",
        "Phi residual <= 1e-9; estinv holds; 1D root to 1e-10",
        details={"worst_phi": worst_phi, "worst_estinv": worst_estinv,
                 "worst_root": worst_root})


# ---------------------------------------------------------------------------
# criterion 8: perturbed-Gaussian sandwich
# ---------------------------------------------------------------------------

@_timed
def criterion_8(seed=ACCEPT_SEED, n_samples=100_000, r=0.5):
    Q = np.diag([1.0, 0.5])
    H = np.zeros((2, 2, 2))
    H[0, 0, 0] = 0.005
    H[0, 1, 1] = -0.004
    H[1, 0, 1] = H[1, 1, 0] = 0.003
    em = decomp.EtaMap(np.zeros((2, 2)), H)
    bounds = decomp.perturbed_gaussian_bounds(Q, em, r)
    if not bounds.hypotheses_ok:
        return CriterionResult(8, "perturbed-Gaussian sandwich", False,
                               f"hypotheses violated: {bounds.violations}",
                               "hpimpl hypotheses hold", details={})
    zpts = np.concatenate([np.zeros((1, 2)),
                           _mc.ball_mesh(19, 2, radius=0.95 * r)])
    est = decomp.localized_density_mc(Q, em, r, zpts, n_samples, seed + 8)
    lower = bounds.lower(zpts)
    upper = bounds.upper(zpts)
    ok = bool(np.all(est >= lower) and np.all(est <= upper))
    margin_lo = float(np.min(est / lower))
    margin_hi = float(np.min(upper / np.maximum(est, 1e-300)))
    return CriterionResult(
        8, "perturbed-Gaussian sandwich", ok,
        f"min est/lower={margin_lo:.2f}, min upper/est={margin_hi:.2f} at 20 points",
        "histogram between explicit bounds at every point",
        details={"est": est.tolist(), "lower": lower.tolist(),
                 "upper": upper.tolist()})


# ---------------------------------------------------------------------------
# criterion 9: support statistics
# ---------------------------------------------------------------------------

@_timed
def criterion_9(seed=ACCEPT_SEED, n_samples=1_000_000, rho=6.0):
    res = paths.support_statistics(2, (0.1, 0.2, 0.3, 0.4), rho, n_samples,
                                   seed + 9)
    rows = res["upsilon"]
    nondegenerate = all(r["hits"] > 0 for r in rows)
    slope_info = res["upsilon_slope"]
    slope = slope_info["slope"] if slope_info else float("inf")
    ok = nondegenerate and slope <= 3.5
    return CriterionResult(
        9, "support statistics (d=2)", ok,
        f"slope={slope:.3f}, hits={[r['hits'] for r in rows]}",
        "log-log slope <= 3.5 with nondegenerate CIs",
        details=res)


# ---------------------------------------------------------------------------
# criterion 10: Malliavin covariance uniformity
# ---------------------------------------------------------------------------

@_timed
def criterion_10(seed=ACCEPT_SEED, n_paths=10_000):
    model = fields.get_model("heisenberg")
    x0 = np.zeros(3)
    rows = []
    for delta in COV_DELTA_GRID:
        lam = sde.malliavin_spectrum(model, x0, delta, n_paths, seed + 10,
                                     steps_per_sub=STEPS)
        rows.append({"delta": delta, "median": float(np.median(lam)),
                     "q05": float(np.quantile(lam, 0.05)),
                     "q25": float(np.quantile(lam, 0.25)),
                     "q75": float(np.quantile(lam, 0.75))})
    medians = [r["median"] for r in rows]
    spread = max(medians) / min(medians)
    q05_min = min(r["q05"] for r in rows)
    ok = spread < 5.0 and q05_min > LAMBDA_Q05_FLOOR
    return CriterionResult(
        10, "Malliavin covariance uniformity", ok,
        f"median spread={spread:.3f}, min q05={q05_min:.4f}",
        f"spread < 5 and q05 > {LAMBDA_Q05_FLOOR}",
        details={"rows": rows})


# ---------------------------------------------------------------------------
# criteria 11-12: lower-bound and tail uniformity
# ---------------------------------------------------------------------------

@_timed
def criterion_11(seed=ACCEPT_SEED, cache=None, n_paths=N_PATHS_DENSITY):
    model = fields.get_model("heisenberg")
    res = density.lower_bound_check(model, np.zeros(3), 0.5, list(DELTA_GRID),
                                    n_paths, seed, steps_per_sub=STEPS,
                                    endpoint_cache=cache)
    ratios = [r["ratio_to_largest_delta"] for r in res["rows"]]
    ok = all(rv >= 0.5 for rv in ratios)
    return CriterionResult(
        11, "lower-bound uniformity over anisotropic ball", ok,
        f"min ratio={min(ratios):.3f}",
        ">= 0.5 x value at largest delta, all deltas",
        details=res)


@_timed
def criterion_12(seed=ACCEPT_SEED, cache=None, n_paths=N_PATHS_DENSITY):
    model = fields.get_model("heisenberg")
    res = density.tail_check(model, np.zeros(3), 4.0, list(DELTA_GRID),
                             n_paths, seed, steps_per_sub=STEPS,
                             endpoint_cache=cache)
    ok = res["sup_spread"] < 10.0 and res["max_recenter_ratio"] < 3.0
    return CriterionResult(
        12, "tail uniformity (p=4)", ok,
        f"sup spread={res['sup_spread']:.3f}, "
        f"recenter ratio={res['max_recenter_ratio']:.3f}",
        "spread < 10 and recenter ratio < 3",
        details=res)


ALL_CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
                criterion_11, criterion_12)


def run_acceptance(seed=ACCEPT_SEED, n_paths_density=N_PATHS_DENSITY,
                   only=None):
    """Run the full suite; returns the list of CriterionResult in order."""
    cache = {}
    results = []
    for fn in ALL_CRITERIA:
        ident = int(fn.__name__.split("_")[1])
        if only is not None and ident not in only:
            continue
        kwargs = {"seed": seed}
        if ident in (1, 2, 3, 11, 12):
            kwargs.update(cache=cache, n_paths=n_paths_density)
        results.append(fn(**kwargs))
    return results
