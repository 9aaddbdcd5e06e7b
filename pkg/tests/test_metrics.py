import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from physprior import pde
from physprior.errors import InvalidArgument
from physprior.fields import Grid2D
from physprior.metrics import (abs_l2, analytic_operator_shift, coefficient_error, fit_order,
                               observed_order, operator_shift, rel_l2)


def test_rel_l2_trivial_values(rng):
    t = rng.standard_normal((4, 4))
    assert rel_l2(t, t).value == 0
    assert rel_l2(2 * t, t).value == pytest.approx(100)
    assert rel_l2(np.zeros_like(t), t).value == pytest.approx(100)
    with pytest.raises(InvalidArgument):
        rel_l2(t, t[:3])


def test_rel_l2_falls_back_to_absolute():
    e = rel_l2(np.full(16, 0.5), np.zeros(16))
    assert e.kind == "abs_l2"
    assert e.value == pytest.approx(2.0)


def test_masked_errors(rng):
    t = rng.standard_normal((6, 6))
    p = t.copy()
    p[0, 0] += 1
    m = np.zeros((6, 6), bool)
    m[3:] = True
    assert rel_l2(p, t, m).value == 0
    assert abs_l2(p, t) == pytest.approx(1)


def test_coefficient_error():
    assert coefficient_error([1.1], [1.0]).value == pytest.approx(10)


vec = arrays(np.float64, 12, elements=st.floats(-100, 100))


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec)
def test_rel_l2_triangle_bound(a, b, c):
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    if nb < 1e-3 or nc < 1e-3:
        return
    lhs = rel_l2(a, c).value
    rhs = rel_l2(a, b).value * nb / nc + rel_l2(b, c).value
    assert lhs <= rhs * (1 + 1e-9) + 1e-9


def test_analytic_shift_values():
    assert analytic_operator_shift(0, 0.04) == 0
    assert analytic_operator_shift(5, 0.04) == pytest.approx(22.14, abs=0.01)
    ks = np.linspace(0, 20, 21)
    assert np.all(np.diff([analytic_operator_shift(k, 0.04) for k in ks]) > 0)


def _ad_pair(k, ic):
    train = pde.ScalarPDEParams("advection_diffusion", nu=0.25, ax=4, ay=2)
    unseen = pde.ScalarPDEParams("adr", nu=0.25, ax=4, ay=2, k=k)
    return operator_shift(train, unseen, ic, pde.default_config("adr"))


def test_operator_shift_matches_identity():
    g = Grid2D(32, 32)
    ic = pde.gaussian_bump_ic(g, 0.4, 0.5, 0.05)
    assert _ad_pair(0.0, ic) == 0
    assert _ad_pair(5.0, ic) == pytest.approx(100 * math.expm1(0.2), abs=1e-6)


def test_operator_shift_ic_independent():
    g = Grid2D(24, 24)
    rng = np.random.default_rng(5)
    vals = [_ad_pair(5.0, pde.gaussian_bump_ic(g, *rng.uniform(0.2, 0.8, 2),
                                               rng.uniform(0.025, 0.075)))
            for _ in range(10)]
    assert max(vals) - min(vals) < 0.1


def test_observed_order_on_synthetic_sequence():
    rng = np.random.default_rng(0)
    exact = rng.standard_normal((1, 33, 33))
    pert = rng.standard_normal((1, 33, 33))
    coarse = exact + 0.04 * pert
    mid = np.zeros((1, 65, 65))
    mid[:, ::2, ::2] = exact + 0.01 * pert
    fine = np.zeros((1, 129, 129))
    fine[:, ::4, ::4] = exact + 0.0025 * pert
    # differences shrink by 4: order 2
    assert observed_order(coarse, mid, fine) == pytest.approx(2.0)
    with pytest.raises(InvalidArgument):
        observed_order(coarse, coarse, coarse[:, :-1])


def test_fit_order_power_law():
    h = np.array([0.1, 0.05, 0.025])
    assert fit_order(h, 3 * h**1.5) == pytest.approx(1.5)
