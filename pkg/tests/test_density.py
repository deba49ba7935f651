"""Density-estimation tests: KDE consistency, change of variables, exponent
slopes, lower-bound and tail suites (reduced Monte Carlo sizes)."""

import math

import numpy as np
import pytest

from hypodens import density, fields
from hypodens.errors import DataQualityError, DegenerateMatrixError

DELTAS = [0.02, 0.04, 0.08, 0.12, 0.2]


def drifted_heisenberg():
    """Heisenberg fields plus constant drift b = (1, 0, 0)."""
    sigma = [
        [[[1.0, 0, 0, 0, 0]], [], [[-0.5, 0, 0, 1, 0]]],
        [[], [[1.0, 0, 0, 0, 0]], [[0.5, 0, 1, 0, 0]]],
    ]
    b = [[[1.0, 0, 0, 0, 0]], [], []]
    return fields.model_from_tables(3, 2, sigma, b, name="heisenberg-drift")


# ---------------------------------------------------------------------------
# KDE core
# ---------------------------------------------------------------------------

def test_kde_consistency_standard_normal():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3):
        samples = rng.standard_normal((100_000, n))
        target = (2.0 * math.pi) ** (-n / 2.0)
        assert density.kde_density(samples, np.zeros(n)) == \
            pytest.approx(target, rel=0.05)


def test_kde_symmetry_on_symmetrized_samples():
    rng = np.random.default_rng(5)
    half = rng.standard_normal((2000, 2))
    samples = np.concatenate([half, -half])
    zs = rng.standard_normal((50, 2))
    a = density.kde_density(samples, zs)
    b = density.kde_density(samples, -zs)
    assert np.allclose(a, b, rtol=1e-12)
    assert np.all(a >= 0.0)


def test_kde_integrates_to_one_numerically():
    rng = np.random.default_rng(7)
    samples = rng.standard_normal((4000, 1))
    grid = np.linspace(-8.0, 8.0, 2001)[:, None]
    vals = density.kde_density(samples, grid)
    integral = np.trapezoid(vals, grid[:, 0])
    assert integral == pytest.approx(1.0, abs=1e-6)


def test_kde_far_from_support_is_zero():
    samples = np.zeros((2000, 2))
    samples[:, 0] = np.linspace(-1, 1, 2000)
    assert density.kde_density(samples, np.array([500.0, 0.0])) == 0.0


# ---------------------------------------------------------------------------
# scaled endpoints
# ---------------------------------------------------------------------------

def test_elliptic_scaled_endpoints_standard_normal():
    model = fields.get_model("elliptic")
    est = density.sample_scaled_endpoints(model, np.zeros(2), 0.1, 40_000,
                                          seed=11, steps_per_sub=64)
    mom = est.moments()
    se_mean = 3.0 / math.sqrt(40_000)
    assert np.all(np.abs(mom["mean"]) <= se_mean)
    assert np.all(np.abs(mom["var"] - 1.0) <= 3.0 * math.sqrt(2.0 / 40_000))


def test_centering_shift_is_exact():
    model = drifted_heisenberg()
    delta = 0.1
    kw = dict(steps_per_sub=64, endpoint_cache={})
    a = density.sample_scaled_endpoints(model, np.zeros(3), delta, 2000,
                                        seed=13, centering="x0", **kw)
    b = density.sample_scaled_endpoints(model, np.zeros(3), delta, 2000,
                                        seed=13, centering="x0+bdelta", **kw)
    shift = a.gamma_ext.alpha_inverse_apply(model.b(0.0, np.zeros(3)) * delta)
    assert np.abs((a.samples - b.samples) - shift).max() <= 1e-12


def test_change_of_variables_identity():
    model = fields.get_model("heisenberg")
    est = density.sample_scaled_endpoints(model, np.zeros(3), 0.05, 5000,
                                          seed=17, steps_per_sub=64)
    rng = np.random.default_rng(19)
    for z in rng.normal(size=(20, 3)):
        y = est.center + est.alpha @ z
        lhs = est.evaluate_original(y) * est.det_alpha
        rhs = est.evaluate(z)
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_heisenberg_scaled_variances_stable_in_delta():
    model = fields.get_model("heisenberg")
    for delta in (0.02, 0.1, 0.2):
        est = density.sample_scaled_endpoints(model, np.zeros(3), delta, 20_000,
                                              seed=23, steps_per_sub=64)
        var = est.moments()["var"]
        assert 0.5 <= var[0] <= 1.5
        assert 0.05 <= var[2] <= 2.0  # scaled bracket coordinate stays O(1)


def test_degenerate_model_rejected():
    flat = fields.model_from_tables(
        2, 2, [[[[1.0, 0, 0, 0]], []], [[[1.0, 0, 0, 0]], []]], name="flat")
    with pytest.raises(DegenerateMatrixError):
        density.sample_scaled_endpoints(flat, np.zeros(2), 0.1, 100, seed=1,
                                        steps_per_sub=8)


def test_blowup_rate_triggers_data_quality_error():
    cubic = fields.model_from_tables(1, 1, [[[[1.0, 0, 3]]]], name="cubic")
    with pytest.raises(DataQualityError):
        density.sample_scaled_endpoints(cubic, np.ones(1) * 3.0, 1.0, 500,
                                        seed=29, steps_per_sub=8)


# ---------------------------------------------------------------------------
# diagonal exponent
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name,expected,tol", [
    ("heisenberg", -2.0, 0.15),
    ("grushin", -1.5, 0.15),
    ("elliptic", -1.0, 0.10),
])
def test_diagonal_exponent_models(name, expected, tol):
    model = fields.get_model(name)
    res = density.diagonal_exponent(model, model.default_x0(), DELTAS, 20_000,
                                    seed=31, steps_per_sub=64)
    assert res["expected_slope"] == expected
    assert res["slope"] == pytest.approx(expected, abs=tol)


def test_diagonal_exponent_bandwidth_robustness():
    model = fields.get_model("heisenberg")
    x0 = np.zeros(3)
    slopes = []
    for scale in (0.5, 1.0, 2.0):
        rows = []
        cache = {}
        for delta in DELTAS:
            est = density.sample_scaled_endpoints(model, x0, delta, 10_000,
                                                  seed=37, steps_per_sub=64,
                                                  centering="x0+bdelta",
                                                  endpoint_cache=cache)
            p_hat = density.kde_density(est.samples, np.zeros(3),
                                        est.bandwidth * scale) / est.det_alpha
            rows.append((delta, p_hat))
        from hypodens._mc import loglog_slope
        slope, _, _ = loglog_slope([r[0] for r in rows], [r[1] for r in rows])
        slopes.append(slope)
    assert max(slopes) - min(slopes) <= 0.05


# ---------------------------------------------------------------------------
# lower bound and tails
# ---------------------------------------------------------------------------

def test_lower_bound_uniformity_and_collapse():
    model = fields.get_model("heisenberg")
    res = density.lower_bound_check(model, np.zeros(3), 0.5, DELTAS, 20_000,
                                    seed=41, steps_per_sub=64)
    ratios = [r["ratio_to_largest_delta"] for r in res["rows"]]
    assert min(ratios) >= 0.5
    assert all(r["min_stat"] > 0.0 for r in res["rows"])
    # r -> 0: the ball collapses onto the diagonal value
    tiny = density.lower_bound_check(model, np.zeros(3), 1e-8, [0.1], 5000,
                                     seed=43, mesh_points=8, steps_per_sub=64)
    row = tiny["rows"][0]
    assert row["min_stat"] == pytest.approx(row["center_stat"], rel=1e-6)


def test_lower_bound_mesh_validation():
    model = fields.get_model("heisenberg")
    with pytest.raises(ValueError):
        density.lower_bound_check(model, np.zeros(3), 0.5, [0.1], 100,
                                  seed=1, mesh_points=0)
    with pytest.raises(ValueError):
        density.lower_bound_check(model, np.zeros(3), -0.5, [0.1], 100, seed=1)


def test_lower_bound_centering_sensitivity():
    # on the exactly-Gaussian drifted elliptic model the ball centered at
    # x0 + b delta tracks the mass: its minimum beats the x0-centered one at
    # moderate radius, and both match the closed-form Gaussian values
    sigma = [[[[1.0, 0, 0, 0]], []], [[], [[1.0, 0, 0, 0]]]]
    b = [[[1.0, 0, 0, 0]], []]
    model = fields.model_from_tables(2, 2, sigma, b, name="elliptic-drift")
    delta = 0.2
    kw = dict(n_paths=60_000, seed=47, steps_per_sub=64, endpoint_cache={})
    centered = density.lower_bound_check(model, np.zeros(2), 1.0, [delta],
                                         centering="x0+bdelta", **kw)
    plain = density.lower_bound_check(model, np.zeros(2), 1.0, [delta],
                                      centering="x0", **kw)
    c_min = centered["rows"][0]["min_stat"]
    p_min = plain["rows"][0]["min_stat"]
    assert c_min > p_min
    assert c_min == pytest.approx(math.exp(-0.5) / (2 * math.pi), rel=0.15)
    worst = 1.0 + math.sqrt(delta)  # |alpha^{-1} b delta| = sqrt(delta)
    assert p_min == pytest.approx(math.exp(-0.5 * worst ** 2) / (2 * math.pi),
                                  rel=0.2)
    # on the drifted Heisenberg model both centerings keep strictly positive
    # minima at small radius
    heis = drifted_heisenberg()
    kwh = dict(n_paths=20_000, seed=47, steps_per_sub=64, endpoint_cache={})
    for centering in ("x0+bdelta", "x0"):
        res = density.lower_bound_check(heis, np.zeros(3), 0.1, [delta],
                                        centering=centering, **kwh)
        assert res["rows"][0]["min_stat"] > 0.0


def test_tail_uniformity_heisenberg():
    model = fields.get_model("heisenberg")
    res = density.tail_check(model, np.zeros(3), 4.0, DELTAS, 20_000,
                             seed=53, steps_per_sub=64)
    assert res["sup_spread"] < 10.0
    assert res["max_recenter_ratio"] == pytest.approx(1.0, abs=1e-12)  # b = 0
    assert res["p"] == 4.0
    with pytest.raises(ValueError):
        density.tail_check(model, np.zeros(3), 1.0, DELTAS, 100, seed=1)


def test_tail_recentering_bounded_for_drifted_model():
    model = drifted_heisenberg()
    res = density.tail_check(model, np.zeros(3), 4.0, DELTAS, 10_000,
                             seed=59, steps_per_sub=64)
    assert 1.0 < res["max_recenter_ratio"] < 3.0
    # Remark-style exact check: |b delta|_{A_delta} is bounded uniformly
    A = fields.directional_matrix(model, 0.0, np.zeros(3))
    b0 = model.b(0.0, np.zeros(3))
    norms = [fields.aniso_norm(fields.scale_matrix(A, d), b0 * d)
             for d in DELTAS]
    assert max(norms) <= 1.0
    assert np.allclose(norms, [math.sqrt(d) for d in DELTAS], atol=1e-10)


def test_tail_exponential_statistic_for_bounded_model():
    model = fields.get_model("elliptic")
    assert density.has_bounded_coefficients(model)
    assert not density.has_bounded_coefficients(fields.get_model("heisenberg"))
    res = density.tail_check(model, np.zeros(2), 4.0, [0.05, 0.1], 20_000,
                             seed=61, steps_per_sub=64)
    for row in res["rows"]:
        assert row["exp_decay_c"] > 0.0
        assert math.isfinite(row["sup_stat_exp"])


def test_mesh_statistic_at_center_matches_diagonal():
    model = fields.get_model("heisenberg")
    cache = {}
    res = density.tail_check(model, np.zeros(3), 4.0, [0.1], 10_000, seed=67,
                             steps_per_sub=64, endpoint_cache=cache)
    est = density.sample_scaled_endpoints(model, np.zeros(3), 0.1, 10_000,
                                          seed=67, steps_per_sub=64,
                                          centering="x0", endpoint_cache=cache)
    center_val = 0.1 ** 2.0 * est.evaluate(np.zeros(3)) / est.det_alpha
    assert res["rows"][0]["sup_stat"] >= center_val - 1e-12
