"""Property-based checks (hypothesis) for the pure scalar-level primitives."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hypodens import decomp, paths


@given(a=st.floats(min_value=1e-3, max_value=1e3),
       x=st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_mollifier_range_symmetry_support(a, x):
    v = paths.mollifier(a, x)
    assert 0.0 <= v <= 1.0
    assert v == paths.mollifier(a, -x)
    if abs(x) <= a:
        assert v == 1.0
    if abs(x) >= 2.0 * a:
        assert v == 0.0


@given(a=st.floats(min_value=0.1, max_value=10.0),
       frac=st.floats(min_value=0.05, max_value=0.9))
def test_mollifier_monotone_decay_on_transition(a, frac):
    x1 = a * (1.0 + frac * 0.5)
    x2 = a * (1.0 + frac)
    assert paths.mollifier(a, x1) >= paths.mollifier(a, x2)


@settings(deadline=None)
@given(q=st.floats(min_value=-3.0, max_value=3.0),
       yfrac=st.floats(min_value=-0.5, max_value=0.5))
def test_local_inverse_matches_quadratic_root(q, yfrac):
    if abs(q) < 1e-6:
        return
    em = decomp.EtaMap(np.zeros((1, 1)), np.array([[[q]]]))
    y = yfrac * em.h_eta()
    theta = decomp.local_inverse(em, np.array([y]))[0]
    closed = (-1.0 + math.sqrt(1.0 + 2.0 * q * y)) / q
    assert abs(theta - closed) <= 1e-10
    # the inverse-size bounds hold on the whole admissible domain
    assert 0.25 * abs(theta) <= abs(y) + 1e-15
    assert abs(y) <= 4.0 * abs(theta) + 1e-15


@settings(deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_eta_constants_consistency_random_maps(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    em = decomp.EtaMap(rng.normal(size=(m, m)) * 0.1,
                       rng.normal(size=(m, m, m)))
    h = float(rng.uniform(0.01, 2.0))
    cs = em.c_star(h)
    # c_star dominates every sampled first derivative on the ball |x| <= 2h
    for _ in range(16):
        x = rng.normal(size=m)
        norm = np.linalg.norm(x)
        if norm > 0:
            x *= rng.uniform(0.0, 2.0 * h) / norm
        grad = em.grad(x)
        assert np.abs(grad).max() <= cs + 1e-12
    if em.c2() > 0:
        assert em.h_eta() <= 1.0 / (16.0 * m * m * em.c2()) + 1e-15
