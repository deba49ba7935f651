"""The twelve acceptance criteria at their stated protocol sizes.

Each test runs one criterion through hypodens.acceptance (the same code the
CLI `verify` subcommand drives), prints its PASS/FAIL line and asserts the
stated target at the stated tolerance.

Criterion 5 carries a strict xfail: the plain Heisenberg model's degree-2
stochastic Taylor expansion is exact (the second-order coefficients are
globally constant and every remainder integrand vanishes identically), so
R_delta is identically zero and the measured RMS is floating-point noise
(~1e-16 delta).  A log-log slope of 1.5 +- 0.2 cannot be measured from an
identically-zero remainder; the assertion is kept exactly as stated and its
failure is expected and documented.  The genuine 3/2 scaling is demonstrated
on the time-modulated Heisenberg variant in test_decomp.py.
"""

import numpy as np
import pytest

from hypodens import acceptance

SEED = acceptance.ACCEPT_SEED


@pytest.fixture(scope="module")
def shared_cache():
    """Endpoint simulations shared by criteria 1-3, 11, 12."""
    return {}


def _run(fn, **kwargs):
    result = fn(**kwargs)
    print()
    print(f"[{result.runtime_s:7.2f}s] {result.line()}")
    return result


def test_criterion_1_diagonal_exponent_heisenberg(shared_cache):
    r = _run(acceptance.criterion_1, seed=SEED, cache=shared_cache)
    assert r.passed, r.line()
    assert abs(r.details["slope"] + 2.0) <= 0.15


def test_criterion_2_diagonal_exponent_grushin(shared_cache):
    r = _run(acceptance.criterion_2, seed=SEED, cache=shared_cache)
    assert r.passed, r.line()
    assert abs(r.details["slope"] + 1.5) <= 0.15


def test_criterion_3_diagonal_exponent_elliptic(shared_cache):
    r = _run(acceptance.criterion_3, seed=SEED, cache=shared_cache)
    assert r.passed, r.line()
    assert abs(r.details["slope"] + 1.0) <= 0.10


def test_criterion_4_key_decomposition_residual():
    r = _run(acceptance.criterion_4, seed=SEED)
    assert r.passed, r.line()
    assert abs(r.details["rms_ratio"] - 2.0) <= 0.3
    assert r.details["max_coarse"] <= r.details["envelope"]


@pytest.mark.xfail(
    strict=True,
    reason="the Heisenberg degree-2 stochastic Taylor expansion is exact "
           "(R_delta vanishes identically), so the 1.5 +- 0.2 slope target "
           "cannot be measured from an identically-zero remainder")
def test_criterion_5_remainder_scaling_heisenberg():
    r = _run(acceptance.criterion_5, seed=SEED)
    assert r.passed, r.line()


def test_criterion_6_exact_identities():
    r = _run(acceptance.criterion_6, seed=SEED)
    assert r.passed, r.line()


def test_criterion_7_local_inversion():
    r = _run(acceptance.criterion_7, seed=SEED)
    assert r.passed, r.line()
    assert r.details["worst_phi"] <= 1e-9
    assert r.details["worst_root"] <= 1e-10


def test_criterion_8_perturbed_gaussian_sandwich():
    r = _run(acceptance.criterion_8, seed=SEED)
    assert r.passed, r.line()


def test_criterion_9_support_statistics():
    r = _run(acceptance.criterion_9, seed=SEED)
    assert r.passed, r.line()
    assert all(row["hits"] > 0 for row in r.details["upsilon"])
    assert r.details["upsilon_slope"]["slope"] <= 3.5


def test_criterion_10_malliavin_uniformity():
    r = _run(acceptance.criterion_10, seed=SEED)
    assert r.passed, r.line()
    medians = [row["median"] for row in r.details["rows"]]
    assert max(medians) / min(medians) < 5.0


def test_criterion_11_lower_bound_uniformity(shared_cache):
    r = _run(acceptance.criterion_11, seed=SEED, cache=shared_cache)
    assert r.passed, r.line()


def test_criterion_12_tail_uniformity(shared_cache):
    r = _run(acceptance.criterion_12, seed=SEED, cache=shared_cache)
    assert r.passed, r.line()
    assert r.details["sup_spread"] < 10.0
    assert r.details["max_recenter_ratio"] < 3.0
